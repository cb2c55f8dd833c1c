#include "avatarforge/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avatarforge/error.hpp"

namespace avatarforge {

namespace fs = std::filesystem;
using nlohmann::json;

void EvalReport::compute_aggregates() {
  ReportAggregates a;
  double sum_psnr = 0.0, sum_ssim = 0.0, sum_perc = 0.0;
  std::size_t perc_rows = 0;
  for (const auto& r : rows) {
    if (std::isinf(r.psnr)) {
      ++a.infinite_rows;
      continue;
    }
    ++a.finite_rows;
    sum_psnr += r.psnr;
    sum_ssim += r.ssim;
    if (r.perceptual) {
      sum_perc += *r.perceptual;
      ++perc_rows;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  a.mean_psnr = a.finite_rows ? sum_psnr / a.finite_rows : nan;
  a.mean_ssim = a.finite_rows ? sum_ssim / a.finite_rows : nan;
  if (perc_rows) a.mean_perceptual = sum_perc / perc_rows;
  aggregates = a;
}

namespace {

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  return v;
}

double number(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw SchemaError("report: bad number '" + s + "'");
  }
  return j.get<double>();
}

std::string fixed(double v, int digits) {
  if (std::isinf(v)) return "inf";
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

}  // namespace

bool EvalReport::operator==(const EvalReport& o) const {
  if (rows.size() != o.rows.size() || metadata != o.metadata || annotation != o.annotation) return false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto &a = rows[i], &b = o.rows[i];
    if (a.view_id != b.view_id || !same_double(a.psnr, b.psnr) || !same_double(a.ssim, b.ssim) ||
        a.perceptual != b.perceptual)
      return false;
  }
  const auto &x = aggregates, &y = o.aggregates;
  return same_double(x.mean_psnr, y.mean_psnr) && same_double(x.mean_ssim, y.mean_ssim) &&
         x.mean_perceptual == y.mean_perceptual && x.finite_rows == y.finite_rows &&
         x.infinite_rows == y.infinite_rows;
}

std::string report_to_json(const EvalReport& report, bool include_wall_time) {
  json j;
  j["rows"] = json::array();
  for (const auto& r : report.rows) {
    json row{{"view_id", r.view_id}, {"psnr", number(r.psnr)}, {"ssim", number(r.ssim)}};
    row["perceptual"] = r.perceptual ? number(*r.perceptual) : json(nullptr);
    j["rows"].push_back(row);
  }
  const auto& a = report.aggregates;
  j["aggregates"] = {{"mean_psnr", number(a.mean_psnr)},
                     {"mean_ssim", number(a.mean_ssim)},
                     {"mean_perceptual", a.mean_perceptual ? number(*a.mean_perceptual) : json(nullptr)},
                     {"finite_rows", a.finite_rows},
                     {"infinite_rows", a.infinite_rows}};
  const auto& m = report.metadata;
  j["metadata"] = {{"config_fingerprint", m.config_fingerprint},
                   {"renderer", m.renderer},
                   {"transform", m.transform},
                   {"protocol", m.protocol},
                   {"iterations", m.iterations},
                   {"seed", m.seed}};
  if (include_wall_time) j["metadata"]["wall_time_seconds"] = m.wall_time_seconds;
  j["annotation"] = report.annotation;
  // nlohmann writes doubles with max_digits10, so values parse back exactly.
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    for (const auto& row : j.at("rows")) {
      MetricRow m{row.at("view_id").get<std::string>(), number(row.at("psnr")), number(row.at("ssim")), {}};
      if (row.contains("perceptual") && !row["perceptual"].is_null()) m.perceptual = number(row["perceptual"]);
      r.rows.push_back(m);
    }
    const auto& a = j.at("aggregates");
    r.aggregates.mean_psnr = number(a.at("mean_psnr"));
    r.aggregates.mean_ssim = number(a.at("mean_ssim"));
    if (!a.at("mean_perceptual").is_null()) r.aggregates.mean_perceptual = number(a["mean_perceptual"]);
    r.aggregates.finite_rows = a.at("finite_rows").get<std::size_t>();
    r.aggregates.infinite_rows = a.at("infinite_rows").get<std::size_t>();
    const auto& m = j.at("metadata");
    r.metadata.config_fingerprint = m.at("config_fingerprint").get<std::string>();
    r.metadata.renderer = m.at("renderer").get<std::string>();
    r.metadata.transform = m.at("transform").get<std::string>();
    r.metadata.protocol = m.at("protocol").get<std::string>();
    r.metadata.iterations = m.at("iterations").get<int>();
    r.metadata.seed = m.at("seed").get<std::uint64_t>();
    if (m.contains("wall_time_seconds")) r.metadata.wall_time_seconds = m["wall_time_seconds"].get<double>();
    r.annotation = j.value("annotation", "");
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

EvalReport load_report(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return report_from_json(ss.str());
}

std::string report_markdown(std::span<const EvalReport> reports) {
  std::ostringstream md;
  if (reports.empty()) return "";
  const auto& views = reports.front().rows;
  md << "| Renderer | Metric |";
  for (const auto& r : views) md << ' ' << r.view_id << " |";
  md << " Avg. |\n|---|---|";
  for (std::size_t i = 0; i < views.size(); ++i) md << "---|";
  md << "---|\n";
  for (const auto& rep : reports) {
    const std::string name = rep.metadata.renderer.empty() ? "-" : rep.metadata.renderer;
    auto line = [&](const char* metric, auto get, std::optional<double> avg) {
      md << "| " << name << " | " << metric << " |";
      for (const auto& r : rep.rows) {
        const std::optional<double> v = get(r);
        md << ' ' << (v ? fixed(*v, 2) : "n/a") << " |";
      }
      md << ' ' << (avg ? fixed(*avg, 2) : "n/a") << " |\n";
    };
    line("PSNR ↑", [](const MetricRow& r) { return std::optional<double>(r.psnr); }, rep.aggregates.mean_psnr);
    line("SSIM ↑", [](const MetricRow& r) { return std::optional<double>(r.ssim); }, rep.aggregates.mean_ssim);
    if (rep.aggregates.mean_perceptual)
      line("Perceptual ↓", [](const MetricRow& r) { return r.perceptual; }, rep.aggregates.mean_perceptual);
  }
  for (const auto& rep : reports)
    if (!rep.annotation.empty()) md << "\n_" << rep.metadata.renderer << ": " << rep.annotation << "_\n";
  return md.str();
}

void emit_report(const EvalReport& report, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text(dir / "report.json", report_to_json(report));

  std::ostringstream csv;
  csv << "view_id,psnr,ssim,perceptual\n";
  char buf[64];
  auto full = [&](double v) -> std::string {
    if (std::isinf(v)) return "inf";
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  for (const auto& r : report.rows)
    csv << r.view_id << ',' << full(r.psnr) << ',' << full(r.ssim) << ',' << (r.perceptual ? full(*r.perceptual) : "")
        << '\n';
  write_text(dir / "report.csv", csv.str());
  write_text(dir / "report.md", report_markdown(std::span<const EvalReport>(&report, 1)));
}

}  // namespace avatarforge
