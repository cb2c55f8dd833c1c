#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avatarforge/faceswap.hpp"
#include "avatarforge/imaging.hpp"

namespace avatarforge {

enum class RendererKind { nerf, gs };
enum class Protocol { A, B };

std::string to_string(RendererKind r);
std::string to_string(Protocol p);
RendererKind parse_renderer(const std::string& name);
Protocol parse_protocol(const std::string& name);

struct NerfSettings {
  int iterations = 5000;
  int batch_rays = 256;
  double lr = 5e-4;
  double lr_final_ratio = 0.1;
  int samples = 64;
  int width = 128;
  int depth = 4;
  int pos_freqs = 10;
  int dir_freqs = 4;
  bool operator==(const NerfSettings&) const = default;
};

struct GsSettings {
  int iterations = 2000;
  int init_count = 1000;
  double init_opacity = 0.1;
  double densify_grad_threshold = 2e-4;
  int max_gaussians = 20000;
  int max_sh_degree = 3;
  bool operator==(const GsSettings&) const = default;
};

struct PipelineConfig {
  std::filesystem::path dataset;
  RendererKind renderer = RendererKind::gs;
  // Absent means the transform stage is skipped and raw views are used.
  std::optional<faceswap::TransformSpec> transform = faceswap::TransformSpec::identity();
  Protocol protocol = Protocol::A;
  std::filesystem::path target_dataset;  // protocol B ground truth
  std::filesystem::path output;
  std::uint64_t seed = 0;
  bool overwrite = false;
  int workers = 1;
  int transform_timeout_seconds = 300;
  Rgb background = kWhite;
  std::string perceptual_cmd;
  NerfSettings nerf;
  GsSettings gs;

  void validate() const;
  // Hash of everything that affects results (not output, overwrite or workers).
  std::string fingerprint() const;
};

// Flat documents only: JSON objects of scalars, or `key = value` lines with
// strings, numbers and booleans. Unknown keys are rejected.
PipelineConfig parse_config_json(const std::string& text);
PipelineConfig parse_config_toml(const std::string& text);
// Picks the parser from the extension (.json, otherwise TOML).
PipelineConfig load_config(const std::filesystem::path& path);

// Scalar key/value form used by both parsers and for fingerprinting.
std::string config_to_json(const PipelineConfig& cfg);

}  // namespace avatarforge
