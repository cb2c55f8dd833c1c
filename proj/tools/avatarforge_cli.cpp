// avatarforge: fixture | transform | train | render | evaluate | pipeline

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "avatarforge/config.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/faceswap.hpp"
#include "avatarforge/fixture.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/report.hpp"

namespace fs = std::filesystem;
using namespace avatarforge;

namespace {

struct Overrides {
  std::string config;
  std::string dataset;
  std::string renderer;
  std::string transform;
  std::string target;
  std::string external_cmd;
  std::string out;
  std::string protocol;
  std::string target_dataset;
  std::optional<std::uint64_t> seed;
  std::optional<int> iters;
  std::optional<int> workers;
  bool overwrite = false;

  void add_to(CLI::App* app, bool with_transform, bool with_renderer) {
    app->add_option("--config", config, "TOML or JSON config file");
    app->add_option("--dataset", dataset, "dataset root with transforms_<split>.json");
    app->add_option("--out", out, "output directory");
    app->add_option("--seed", seed, "random seed");
    if (with_transform) {
      app->add_option("--transform", transform, "identity | color-match | external | none");
      app->add_option("--target", target, "target image for color-match and external");
      app->add_option("--external-cmd", external_cmd, "command template with {source} {target} {out}");
      app->add_option("--workers", workers, "parallel transform workers");
    }
    if (with_renderer) {
      app->add_option("--renderer", renderer, "nerf | gs");
      app->add_option("--iters", iters, "training iterations for the chosen renderer");
    }
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    if (!config.empty()) cfg = load_config(config);
    if (!dataset.empty()) cfg.dataset = dataset;
    if (!renderer.empty()) cfg.renderer = parse_renderer(renderer);
    if (!transform.empty() || !target.empty() || !external_cmd.empty()) {
      faceswap::TransformSpec spec = cfg.transform.value_or(faceswap::TransformSpec::identity());
      if (transform == "none") {
        cfg.transform.reset();
      } else {
        if (!transform.empty()) spec.variant = faceswap::parse_variant(transform);
        if (!target.empty()) spec.target = target;
        if (!external_cmd.empty()) spec.command_template = external_cmd;
        cfg.transform = spec;
      }
    }
    if (!out.empty()) cfg.output = out;
    if (!protocol.empty()) cfg.protocol = parse_protocol(protocol);
    if (!target_dataset.empty()) cfg.target_dataset = target_dataset;
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    if (iters) (cfg.renderer == RendererKind::gs ? cfg.gs.iterations : cfg.nerf.iterations) = *iters;
    if (overwrite) cfg.overwrite = true;
    return cfg;
  }
};

void log_line(std::string_view s) { std::cerr << s << '\n'; }

void print_summary(const EvalReport& r) {
  std::printf("views %zu  mean PSNR %.4f  mean SSIM %.6f", r.rows.size(), r.aggregates.mean_psnr, r.aggregates.mean_ssim);
  if (r.aggregates.infinite_rows) std::printf("  (+%zu identical)", r.aggregates.infinite_rows);
  if (r.aggregates.mean_perceptual) std::printf("  perceptual %.6f", *r.aggregates.mean_perceptual);
  std::printf("\n");
}

std::string stem_for(const std::string& view_id) {
  std::string s = view_id;
  for (char& ch : s)
    if (ch == '/' || ch == '\\' || ch == ' ') ch = '_';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avatarforge: per-view transforms, NeRF and Gaussian splatting training, novel-view evaluation"};
  app.require_subcommand(1);

  // fixture
  auto* fixture = app.add_subcommand("fixture", "generate a synthetic multi-view dataset");
  std::string fx_kind = "cloud_scene", fx_out;
  FixtureConfig fx;
  fixture->add_option("--kind", fx_kind, "cloud_scene | lambertian_blobs");
  fixture->add_option("--seed", fx.seed);
  fixture->add_option("--views", fx.views);
  fixture->add_option("--resolution", fx.resolution);
  fixture->add_option("--out", fx_out)->required();

  // transform
  auto* transform = app.add_subcommand("transform", "apply a per-view transform to one split");
  Overrides tr;
  std::string tr_split = "train";
  tr.add_to(transform, true, false);
  transform->add_option("--split", tr_split);

  // train
  auto* train = app.add_subcommand("train", "train a renderer on the train split");
  Overrides tn;
  tn.add_to(train, false, true);

  // render
  auto* render = app.add_subcommand("render", "render a split's poses with a trained model");
  std::string rd_model, rd_dataset, rd_split = "test", rd_out;
  int rd_samples = 64;
  std::optional<int> rd_resolution;
  render->add_option("--model", rd_model, "point_cloud.ply or nerf.json")->required();
  render->add_option("--dataset", rd_dataset)->required();
  render->add_option("--split", rd_split);
  render->add_option("--out", rd_out)->required();
  render->add_option("--samples", rd_samples, "NeRF samples per ray");
  render->add_option("--resolution", rd_resolution, "output width; height and focal scale with it");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "compare rendered images against a split");
  std::string ev_renders, ev_dataset, ev_split = "test", ev_out, ev_perceptual;
  evaluate->add_option("--renders", ev_renders, "directory of <view>.png renders")->required();
  evaluate->add_option("--dataset", ev_dataset, "ground-truth dataset root")->required();
  evaluate->add_option("--split", ev_split);
  evaluate->add_option("--out", ev_out, "report directory")->required();
  evaluate->add_option("--perceptual-cmd", ev_perceptual, "external perceptual metric: cmd <a.png> <b.png>");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "load, transform, train, render and evaluate");
  Overrides pl;
  pl.add_to(pipeline, true, true);
  pipeline->add_option("--protocol", pl.protocol, "A | B");
  pipeline->add_option("--target-dataset", pl.target_dataset, "protocol B ground-truth dataset");
  pipeline->add_flag("--overwrite", pl.overwrite, "reuse a non-empty output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fixture) {
      fx.kind = parse_fixture_kind(fx_kind);
      const FixtureInfo info = make_fixture(fx, fx_out);
      std::printf("wrote %zu train and %zu test views to %s\n", info.train_views, info.test_views, fx_out.c_str());
    } else if (*transform) {
      const PipelineConfig cfg = tr.resolve();
      if (cfg.dataset.empty() || cfg.output.empty()) throw InvalidArgument("transform needs --dataset and --out");
      if (!cfg.transform) throw InvalidArgument("transform 'none' has nothing to do");
      faceswap::TransformOptions opt;
      opt.workers = cfg.workers;
      opt.split = tr_split;
      opt.background = cfg.background;
      opt.timeout = std::chrono::seconds(cfg.transform_timeout_seconds);
      const auto r = faceswap::transform_dataset(load_dataset(cfg.dataset, tr_split, cfg.background), *cfg.transform,
                                                 cfg.output, opt);
      std::printf("transformed %zu views (%zu cached) into %s\n", r.stats.invoked, r.stats.cached, cfg.output.c_str());
    } else if (*train) {
      const PipelineConfig cfg = tn.resolve();
      if (cfg.dataset.empty() || cfg.output.empty()) throw InvalidArgument("train needs --dataset and --out");
      const TrainedModel m = train_renderer(load_dataset(cfg.dataset, "train", cfg.background), cfg, log_line);
      std::printf("saved %s\n", m.save(cfg.output).c_str());
    } else if (*render) {
      const TrainedModel m = TrainedModel::load(rd_model, kWhite, rd_samples);
      const ViewDataset ds = load_dataset(rd_dataset, rd_split);
      CameraIntrinsics intr = ds.intrinsics;
      if (rd_resolution) {
        const double s = static_cast<double>(*rd_resolution) / intr.width;
        intr = {*rd_resolution, std::max(1, static_cast<int>(std::lround(intr.height * s))), intr.focal * s};
      }
      std::vector<Pose> poses;
      for (const auto& v : ds.views) poses.push_back(v.pose);
      const auto images = render_novel_views(m, poses, intr);
      fs::create_directories(rd_out);
      for (std::size_t i = 0; i < images.size(); ++i)
        save_image(images[i], fs::path(rd_out) / (stem_for(ds.views[i].id) + ".png"));
      std::printf("rendered %zu views into %s\n", images.size(), rd_out.c_str());
    } else if (*evaluate) {
      const ViewDataset ds = load_dataset(ev_dataset, ev_split);
      std::vector<std::string> ids;
      std::vector<ImageRGB> rendered, reference;
      for (const auto& v : ds.views) {
        ids.push_back(v.id);
        rendered.push_back(load_image(fs::path(ev_renders) / (stem_for(v.id) + ".png")));
        reference.push_back(v.image);
      }
      const PerceptualProvider provider =
          ev_perceptual.empty() ? PerceptualProvider::none() : PerceptualProvider::external(ev_perceptual);
      EvalReport report = evaluate_views(ids, rendered, reference, provider);
      emit_report(report, ev_out);
      print_summary(report);
    } else if (*pipeline) {
      const EvalReport report = run_pipeline(pl.resolve(), log_line);
      print_summary(report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
