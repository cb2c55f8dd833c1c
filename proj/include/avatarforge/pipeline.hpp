#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "avatarforge/camera.hpp"
#include "avatarforge/config.hpp"
#include "avatarforge/gsplat.hpp"
#include "avatarforge/nerf.hpp"
#include "avatarforge/report.hpp"

namespace avatarforge {

// A trained renderer of either kind plus the settings needed to render it.
struct TrainedModel {
  RendererKind kind = RendererKind::gs;
  gs::GaussianCloud cloud;
  nerf::NerfModel nerf;
  nerf::RenderConfig nerf_render;
  gs::RasterSettings raster;
  std::vector<double> loss_trace;  // per training iteration; not persisted by save()

  // point_cloud.ply or nerf.json inside `dir`.
  std::filesystem::path save(const std::filesystem::path& dir) const;
  // Chooses the kind from the extension (.ply or .json).
  static TrainedModel load(const std::filesystem::path& file, const Rgb& background = kWhite, int nerf_samples = 64);
};

using LogFn = std::function<void(std::string_view)>;

TrainedModel train_renderer(const ViewDataset& train, const PipelineConfig& cfg, const LogFn& log = {});

// One image per pose; deterministic.
std::vector<ImageRGB> render_novel_views(const TrainedModel& model, std::span<const Pose> poses,
                                         const CameraIntrinsics& intr);

// Pairs rendered and reference images by index and computes metric rows.
EvalReport evaluate_views(std::span<const std::string> view_ids, std::span<const ImageRGB> rendered,
                          std::span<const ImageRGB> reference, const PerceptualProvider& provider = {});

// Holds <dir>/.lock for its lifetime; throws if another process holds it.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// load -> transform -> train -> render -> ground truth -> evaluate. Artifacts
// land under cfg.output: config.json, transform/{train,test}/, model/,
// renders/, ground_truth/ and report.{json,csv,md}; model/loss_trace.txt
// holds one training loss per line. Stage failures are
// rethrown as StageError.
EvalReport run_pipeline(const PipelineConfig& cfg, const LogFn& log = {});

}  // namespace avatarforge
