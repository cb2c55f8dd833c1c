#include "avatarforge/faceswap.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "avatarforge/digest.hpp"
#include "avatarforge/process.hpp"

namespace avatarforge::faceswap {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TransformSpec::Variant v) {
  switch (v) {
    case TransformSpec::Variant::identity: return "identity";
    case TransformSpec::Variant::color_match: return "color_match";
    case TransformSpec::Variant::external: return "external";
  }
  return "unknown";
}

TransformSpec::Variant parse_variant(const std::string& name) {
  if (name == "identity") return TransformSpec::Variant::identity;
  if (name == "color_match" || name == "color-match") return TransformSpec::Variant::color_match;
  if (name == "external") return TransformSpec::Variant::external;
  throw InvalidArgument("unknown transform '" + name + "'");
}

void TransformSpec::validate() const {
  if (variant == Variant::identity) return;
  if (!target || target->empty()) throw InvalidArgument(to_string(variant) + " transform needs a target image");
  if (variant == Variant::external) {
    for (const char* key : {"{source}", "{target}", "{out}"}) {
      if (command_template.find(key) == std::string::npos)
        throw InvalidArgument(std::string("external template is missing ") + key);
    }
  }
}

std::string TransformSpec::fingerprint() const {
  validate();
  json j;
  j["variant"] = to_string(variant);
  j["template"] = command_template;
  j["target"] = target ? sha256_file(*target) : std::string();
  return sha256_hex(j.dump());
}

ImageRGB apply_identity(const ImageRGB& img) { return img; }

ChannelStats channel_stats(const ImageRGB& img) {
  ChannelStats s;
  const auto px = img.data();
  const double n = static_cast<double>(img.width()) * img.height();
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (std::size_t i = c; i < px.size(); i += 3) sum += px[i];
    const double mu = sum / n;
    double var = 0.0;
    for (std::size_t i = c; i < px.size(); i += 3) var += (px[i] - mu) * (px[i] - mu);
    s.mean[c] = mu;
    s.stddev[c] = std::sqrt(var / n);
  }
  return s;
}

ImageRGB apply_color_match(const ImageRGB& img, const ImageRGB& target) {
  if (img.width() == 0 || img.height() == 0 || target.width() == 0 || target.height() == 0)
    throw DimensionError("color_match: empty image");
  const ChannelStats s = channel_stats(img);
  const ChannelStats t = channel_stats(target);
  std::vector<double> out(img.data().begin(), img.data().end());
  for (int c = 0; c < 3; ++c) {
    const double gain = t.stddev[c] / std::max(s.stddev[c], 1e-6);
    for (std::size_t i = c; i < out.size(); i += 3)
      out[i] = std::clamp(t.mean[c] + (out[i] - s.mean[c]) * gain, 0.0, 1.0);
  }
  return ImageRGB::from_data(img.width(), img.height(), std::move(out));
}

namespace {

void replace_all(std::string& s, const std::string& key, const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
    s.replace(pos, key.size(), value);
}

std::string file_name_for(const std::string& view_id) {
  std::string name = view_id;
  for (char& ch : name)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  return name + ".png";
}

}  // namespace

void apply_external(const fs::path& source, const fs::path& target, const fs::path& out,
                    const std::string& command_template, std::chrono::milliseconds timeout) {
  TransformSpec{TransformSpec::Variant::external, command_template, target}.validate();
  if (!fs::exists(source)) throw IoError("missing source image " + source.string());
  if (!fs::exists(target)) throw IoError("missing target image " + target.string());
  std::string cmd = command_template;
  replace_all(cmd, "{source}", shell_quote(source.string()));
  replace_all(cmd, "{target}", shell_quote(target.string()));
  replace_all(cmd, "{out}", shell_quote(out.string()));
  std::error_code ec;
  fs::remove(out, ec);
  const ProcessResult r = run_command(cmd, timeout);
  if (r.timed_out) throw ProcessError("external transform timed out", r.exit_code, r.stderr_text);
  if (r.exit_code != 0)
    throw ProcessError("external transform exited with code " + std::to_string(r.exit_code) + ": " + r.stderr_text,
                       r.exit_code, r.stderr_text);
  if (!fs::exists(out)) throw IoError("external transform wrote no output at " + out.string());
  load_image(out);  // throws FormatError when the output is not a readable PNG
}

void TransformManifest::save(const fs::path& path) const {
  json j;
  j["spec_fingerprint"] = spec_fingerprint;
  j["records"] = json::array();
  for (const auto& r : records) {
    j["records"].push_back({{"view_id", r.view_id},
                            {"source_path", r.source_path},
                            {"output_path", r.output_path},
                            {"source_digest", r.source_digest},
                            {"output_digest", r.output_digest}});
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + path.string());
}

TransformManifest TransformManifest::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  TransformManifest m;
  try {
    const json j = json::parse(f);
    m.spec_fingerprint = j.at("spec_fingerprint").get<std::string>();
    for (const auto& r : j.at("records")) {
      m.records.push_back({r.at("view_id").get<std::string>(), r.at("source_path").get<std::string>(),
                           r.at("output_path").get<std::string>(), r.at("source_digest").get<std::string>(),
                           r.at("output_digest").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

TransformOutcome transform_dataset(const ViewDataset& dataset, const TransformSpec& spec, const fs::path& workdir,
                                   const TransformOptions& options) {
  dataset.validate();
  const std::string fingerprint = spec.fingerprint();
  const fs::path image_dir = workdir / "images";
  const fs::path manifest_path = workdir / "transform_manifest.json";
  fs::create_directories(image_dir);

  std::set<std::string> names;
  for (const auto& v : dataset.views)
    if (!names.insert(file_name_for(v.id)).second) throw InvalidArgument("duplicate view id " + v.id);

  TransformManifest previous;
  if (fs::exists(manifest_path)) {
    try {
      previous = TransformManifest::load(manifest_path);
    } catch (const FormatError&) {
      previous = {};
    }
  }

  std::optional<ImageRGB> target_image;
  if (spec.variant == TransformSpec::Variant::color_match) target_image = load_image(*spec.target, options.background);

  const std::size_t n = dataset.views.size();
  std::vector<TransformRecord> records(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> invoked{0}, cached{0};

  auto work = [&](std::size_t i) {
    const View& view = dataset.views[i];
    const std::string name = file_name_for(view.id);
    fs::path source = view.source;
    if (source.empty() || !fs::exists(source)) {
      source = workdir / "sources" / name;
      fs::create_directories(source.parent_path());
      save_image(view.image, source);
    }
    const fs::path out = image_dir / name;
    TransformRecord rec{view.id, source.string(), out.string(), sha256_file(source), {}};

    if (previous.spec_fingerprint == fingerprint) {
      for (const auto& old : previous.records) {
        if (old.view_id == rec.view_id && old.source_digest == rec.source_digest && old.output_path == rec.output_path &&
            fs::exists(out) && sha256_file(out) == old.output_digest) {
          rec.output_digest = old.output_digest;
          records[i] = rec;
          ++cached;
          return;
        }
      }
    }

    switch (spec.variant) {
      case TransformSpec::Variant::identity:
        fs::copy_file(source, out, fs::copy_options::overwrite_existing);
        break;
      case TransformSpec::Variant::color_match:
        save_image(apply_color_match(view.image, *target_image), out);
        break;
      case TransformSpec::Variant::external:
        apply_external(source, *spec.target, out, spec.command_template, options.timeout);
        break;
    }
    ++invoked;
    rec.output_digest = sha256_file(out);
    records[i] = rec;
  };

  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        work(i);
      } catch (...) {
        failures[i] = std::current_exception();
        next = n;  // abort remaining views
      }
    }
  };

  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const std::exception& e) {
      throw ViewTransformError(dataset.views[i].id, e.what());
    }
  }

  TransformOutcome result;
  result.manifest = {fingerprint, std::move(records)};
  result.manifest.save(manifest_path);
  result.stats = {invoked.load(), cached.load()};

  std::vector<ManifestFrame> frames;
  result.dataset = dataset;
  for (std::size_t i = 0; i < n; ++i) {
    View& v = result.dataset.views[i];
    const fs::path out = result.manifest.records[i].output_path;
    v.image = load_image(out, options.background);
    if (v.image.width() != dataset.intrinsics.width || v.image.height() != dataset.intrinsics.height)
      throw ViewTransformError(v.id, "transform changed the image size");
    v.source = out;
    frames.push_back({"images/" + out.filename().string(), v.pose});
  }
  write_manifest(workdir, options.split, dataset.camera_angle_x, frames);
  return result;
}

}  // namespace avatarforge::faceswap
