#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avatarforge/imaging.hpp"

namespace avatarforge {

struct ReportAggregates {
  double mean_psnr = 0.0;  // over finite rows; NaN when there are none
  double mean_ssim = 0.0;  // over finite rows
  std::optional<double> mean_perceptual;
  std::size_t finite_rows = 0;
  std::size_t infinite_rows = 0;
  bool operator==(const ReportAggregates&) const = default;
};

struct RunMetadata {
  std::string config_fingerprint;
  std::string renderer;
  std::string transform;
  std::string protocol;
  int iterations = 0;
  std::uint64_t seed = 0;
  double wall_time_seconds = 0.0;
  bool operator==(const RunMetadata&) const = default;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  ReportAggregates aggregates;
  RunMetadata metadata;
  std::string annotation;

  // Recomputes `aggregates` from `rows`. Rows with infinite PSNR are excluded
  // from all means and counted in infinite_rows.
  void compute_aggregates();
  bool operator==(const EvalReport&) const;
};

// Cross-avatar ground truth is a different identity, so low PSNR is expected.
inline constexpr const char* kProtocolBAnnotation =
    "protocol B: ground truth is the target avatar's real views; low absolute PSNR is expected";

// Full-precision JSON; infinite PSNR is written as the string "inf".
std::string report_to_json(const EvalReport& report, bool include_wall_time = true);
EvalReport report_from_json(const std::string& text);

// report.json, report.csv and report.md under `dir`.
void emit_report(const EvalReport& report, const std::filesystem::path& dir);

// Markdown table with one block of metric rows per report, one column per view and an Avg. column.
std::string report_markdown(std::span<const EvalReport> reports);

EvalReport load_report(const std::filesystem::path& path);

}  // namespace avatarforge
