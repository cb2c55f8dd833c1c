#include "avatarforge/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <fstream>

#include "avatarforge/error.hpp"
#include "avatarforge/faceswap.hpp"

namespace avatarforge {

namespace fs = std::filesystem;

fs::path TrainedModel::save(const fs::path& dir) const {
  fs::create_directories(dir);
  if (kind == RendererKind::gs) {
    const fs::path p = dir / "point_cloud.ply";
    gs::save_ply(cloud, p);
    return p;
  }
  const fs::path p = dir / "nerf.json";
  nerf::save_checkpoint(nerf, p);
  return p;
}

TrainedModel TrainedModel::load(const fs::path& file, const Rgb& background, int nerf_samples) {
  TrainedModel m;
  m.raster.background = background;
  m.nerf_render.background = background;
  m.nerf_render.samples_per_ray = nerf_samples;
  if (file.extension() == ".ply") {
    m.kind = RendererKind::gs;
    m.cloud = gs::load_ply(file);
  } else if (file.extension() == ".json") {
    m.kind = RendererKind::nerf;
    m.nerf = nerf::load_checkpoint(file);
  } else {
    throw InvalidArgument("model file must be .ply (gs) or .json (nerf): " + file.string());
  }
  return m;
}

TrainedModel train_renderer(const ViewDataset& train, const PipelineConfig& cfg, const LogFn& log) {
  TrainedModel m;
  m.kind = cfg.renderer;
  m.raster.background = cfg.background;
  m.nerf_render.background = cfg.background;
  m.nerf_render.samples_per_ray = cfg.nerf.samples;
  if (cfg.renderer == RendererKind::gs) {
    gs::InitConfig init;
    init.count = static_cast<std::size_t>(cfg.gs.init_count);
    init.initial_opacity = cfg.gs.init_opacity;
    init.seed = cfg.seed;
    gs::GsTrainConfig tc;
    tc.iterations = cfg.gs.iterations;
    tc.max_sh_degree = cfg.gs.max_sh_degree;
    tc.densify.grad_threshold = cfg.gs.densify_grad_threshold;
    tc.densify.max_gaussians = static_cast<std::size_t>(cfg.gs.max_gaussians);
    tc.raster = m.raster;
    tc.seed = cfg.seed;
    if (log) {
      tc.on_iteration = [&](int it, double loss, std::size_t n) {
        if (it % 100 == 0 || it + 1 == tc.iterations) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "gs iter %d loss %.5f gaussians %zu", it, loss, n);
          log(buf);
        }
      };
    }
    auto r = gs::train_gs(train, gs::initialize_cloud(train, init), tc);
    m.cloud = std::move(r.cloud);
    m.loss_trace = std::move(r.loss_trace);
  } else {
    nerf::EncodingConfig enc;
    enc.pos_freqs = cfg.nerf.pos_freqs;
    enc.dir_freqs = cfg.nerf.dir_freqs;
    nerf::NerfModel init(enc, std::vector<int>(cfg.nerf.depth, cfg.nerf.width));
    init.initialize(cfg.seed);
    nerf::TrainConfig tc;
    tc.iterations = cfg.nerf.iterations;
    tc.batch_rays = cfg.nerf.batch_rays;
    tc.lr = cfg.nerf.lr;
    tc.lr_final_ratio = cfg.nerf.lr_final_ratio;
    tc.samples_per_ray = cfg.nerf.samples;
    tc.background = cfg.background;
    tc.seed = cfg.seed;
    if (log) {
      tc.on_iteration = [&](int it, double loss) {
        if (it % 250 == 0 || it + 1 == tc.iterations) {
          char buf[96];
          std::snprintf(buf, sizeof buf, "nerf iter %d loss %.6f", it, loss);
          log(buf);
        }
      };
    }
    auto r = nerf::train_nerf(train, init, tc);
    m.nerf = std::move(r.model);
    m.loss_trace = std::move(r.loss_trace);
  }
  return m;
}

std::vector<ImageRGB> render_novel_views(const TrainedModel& model, std::span<const Pose> poses,
                                         const CameraIntrinsics& intr) {
  std::vector<ImageRGB> out;
  out.reserve(poses.size());
  for (const Pose& pose : poses) {
    if (model.kind == RendererKind::gs)
      out.push_back(gs::rasterize(model.cloud, intr, pose, model.raster).image);
    else
      out.push_back(nerf::render_view(model.nerf, intr, pose, model.nerf_render));
  }
  return out;
}

EvalReport evaluate_views(std::span<const std::string> view_ids, std::span<const ImageRGB> rendered,
                          std::span<const ImageRGB> reference, const PerceptualProvider& provider) {
  if (rendered.size() != reference.size() || rendered.size() != view_ids.size())
    throw DimensionError("evaluate: " + std::to_string(rendered.size()) + " renders for " +
                         std::to_string(reference.size()) + " reference views");
  EvalReport report;
  for (std::size_t i = 0; i < rendered.size(); ++i)
    report.rows.push_back(evaluate_pair(view_ids[i], rendered[i], reference[i], provider));
  report.compute_aggregates();
  return report;
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw IoError("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

template <typename F>
auto stage(const char* name, const LogFn& log, F&& body) {
  if (log) log(std::string("stage ") + name);
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// Saves and reloads so metrics see exactly the persisted 8-bit images.
std::vector<ImageRGB> persist(const std::vector<ImageRGB>& images, const std::vector<std::string>& names,
                              const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<ImageRGB> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const fs::path p = dir / (names[i] + ".png");
    save_image(images[i], p);
    out.push_back(load_image(p));
  }
  return out;
}

std::string file_stem(const std::string& view_id) {
  std::string s = view_id;
  for (char& ch : s)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  return s;
}

}  // namespace

EvalReport run_pipeline(const PipelineConfig& cfg, const LogFn& log) {
  const auto t0 = std::chrono::steady_clock::now();
  stage("config", log, [&] {
    cfg.validate();
    if (fs::exists(cfg.output) && !fs::is_empty(cfg.output) && !cfg.overwrite)
      throw IoError("output directory " + cfg.output.string() + " is not empty; pass overwrite to reuse it");
    return 0;
  });
  OutputLock lock(cfg.output);
  {
    std::ofstream f(cfg.output / "config.json");
    f << config_to_json(cfg);
  }

  const ViewDataset train_raw = stage("load", log, [&] { return load_dataset(cfg.dataset, "train", cfg.background); });
  const ViewDataset test_raw = stage("load", log, [&] { return load_dataset(cfg.dataset, "test", cfg.background); });

  faceswap::TransformOptions topt;
  topt.workers = cfg.workers;
  topt.timeout = std::chrono::seconds(cfg.transform_timeout_seconds);
  topt.background = cfg.background;

  const ViewDataset train = stage("transform", log, [&] {
    if (!cfg.transform) return train_raw;
    topt.split = "train";
    auto r = faceswap::transform_dataset(train_raw, *cfg.transform, cfg.output / "transform" / "train", topt);
    if (log) log("transformed " + std::to_string(r.stats.invoked) + " views, " + std::to_string(r.stats.cached) + " cached");
    return r.dataset;
  });

  const TrainedModel model = stage("train", log, [&] {
    TrainedModel m = train_renderer(train, cfg, log);
    m.save(cfg.output / "model");
    std::ofstream trace(cfg.output / "model" / "loss_trace.txt");
    char buf[32];
    for (double l : m.loss_trace) {
      std::snprintf(buf, sizeof buf, "%.17g\n", l);
      trace << buf;
    }
    if (!trace) throw IoError("cannot write loss trace");
    return m;
  });

  std::vector<std::string> ids, stems;
  std::vector<Pose> poses;
  for (const auto& v : test_raw.views) {
    ids.push_back(v.id);
    stems.push_back(file_stem(v.id));
    poses.push_back(v.pose);
  }
  fs::remove_all(cfg.output / "renders");
  const std::vector<ImageRGB> renders = stage("render", log, [&] {
    return persist(render_novel_views(model, poses, test_raw.intrinsics), stems, cfg.output / "renders");
  });

  const std::vector<ImageRGB> truth = stage("ground_truth", log, [&] {
    std::vector<ImageRGB> gt;
    if (cfg.protocol == Protocol::A) {
      ViewDataset test = test_raw;
      if (cfg.transform) {
        topt.split = "test";
        test = faceswap::transform_dataset(test_raw, *cfg.transform, cfg.output / "transform" / "test", topt).dataset;
      }
      for (const auto& v : test.views) gt.push_back(v.image);
    } else {
      const ViewDataset target = load_dataset(cfg.target_dataset, "test", cfg.background);
      if (target.size() != test_raw.size())
        throw DimensionError("target dataset has " + std::to_string(target.size()) + " test views, expected " +
                             std::to_string(test_raw.size()));
      for (const auto& v : target.views) gt.push_back(v.image);
    }
    fs::remove_all(cfg.output / "ground_truth");
    return persist(gt, stems, cfg.output / "ground_truth");
  });

  EvalReport report = stage("evaluate", log, [&] {
    const PerceptualProvider provider =
        cfg.perceptual_cmd.empty() ? PerceptualProvider::none() : PerceptualProvider::external(cfg.perceptual_cmd);
    return evaluate_views(ids, renders, truth, provider);
  });
  report.metadata.config_fingerprint = cfg.fingerprint();
  report.metadata.renderer = to_string(cfg.renderer);
  report.metadata.transform = cfg.transform ? faceswap::to_string(cfg.transform->variant) : "none";
  report.metadata.protocol = to_string(cfg.protocol);
  report.metadata.iterations = cfg.renderer == RendererKind::gs ? cfg.gs.iterations : cfg.nerf.iterations;
  report.metadata.seed = cfg.seed;
  if (cfg.protocol == Protocol::B) report.annotation = kProtocolBAnnotation;
  report.metadata.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  stage("report", log, [&] {
    emit_report(report, cfg.output);
    return 0;
  });
  return report;
}

}  // namespace avatarforge
