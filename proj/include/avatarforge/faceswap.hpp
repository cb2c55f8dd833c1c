#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avatarforge/camera.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/imaging.hpp"

namespace avatarforge::faceswap {

// The per-image edit applied to every training view. `external` runs a shell
// command template with {source}, {target} and {out} placeholders.
struct TransformSpec {
  enum class Variant { identity, color_match, external };
  Variant variant = Variant::identity;
  std::string command_template;
  std::optional<std::filesystem::path> target;

  static TransformSpec identity() { return {}; }
  static TransformSpec color_match(std::filesystem::path target) {
    return {Variant::color_match, {}, std::move(target)};
  }
  static TransformSpec external(std::string command_template, std::filesystem::path target) {
    return {Variant::external, std::move(command_template), std::move(target)};
  }

  void validate() const;
  // Hash of the variant, the template and the target image bytes.
  std::string fingerprint() const;
};

std::string to_string(TransformSpec::Variant v);
TransformSpec::Variant parse_variant(const std::string& name);

ImageRGB apply_identity(const ImageRGB& img);

// Per channel: clamp(mu_t + (v - mu_s) * sigma_t / max(sigma_s, 1e-6)).
ImageRGB apply_color_match(const ImageRGB& img, const ImageRGB& target);

struct ChannelStats {
  Rgb mean{};
  Rgb stddev{};
};
ChannelStats channel_stats(const ImageRGB& img);

// Substitutes shell-quoted paths into `command_template` and runs it. Requires
// exit code 0 and a readable PNG at `out`.
void apply_external(const std::filesystem::path& source, const std::filesystem::path& target,
                    const std::filesystem::path& out, const std::string& command_template,
                    std::chrono::milliseconds timeout = std::chrono::seconds(300));

struct TransformRecord {
  std::string view_id;
  std::string source_path;
  std::string output_path;
  std::string source_digest;
  std::string output_digest;
  bool operator==(const TransformRecord&) const = default;
};

struct TransformManifest {
  std::string spec_fingerprint;
  std::vector<TransformRecord> records;

  void save(const std::filesystem::path& path) const;
  static TransformManifest load(const std::filesystem::path& path);
  bool operator==(const TransformManifest&) const = default;
};

struct TransformOptions {
  int workers = 1;
  std::chrono::milliseconds timeout = std::chrono::seconds(300);
  Rgb background = kWhite;
  std::string split = "train";
};

struct TransformStats {
  std::size_t invoked = 0;
  std::size_t cached = 0;
};

struct TransformOutcome {
  ViewDataset dataset;
  TransformManifest manifest;
  TransformStats stats;
};

// Thrown when one view fails; carries the failing view id.
class ViewTransformError : public Error {
 public:
  ViewTransformError(std::string view_id, const std::string& what)
      : Error("view " + view_id + ": " + what), view_id_(std::move(view_id)) {}
  const std::string& view_id() const { return view_id_; }

 private:
  std::string view_id_;
};

// Transforms every view independently against the same target and writes the
// results plus transform_manifest.json and transforms_<split>.json under
// `workdir`. Views whose source digest, output digest and spec fingerprint
// match an existing manifest are not recomputed.
TransformOutcome transform_dataset(const ViewDataset& dataset, const TransformSpec& spec,
                                   const std::filesystem::path& workdir, const TransformOptions& options = {});

}  // namespace avatarforge::faceswap
