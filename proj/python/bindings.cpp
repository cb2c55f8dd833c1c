#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "avatarforge/camera.hpp"
#include "avatarforge/config.hpp"
#include "avatarforge/error.hpp"
#include "avatarforge/faceswap.hpp"
#include "avatarforge/fixture.hpp"
#include "avatarforge/gsplat.hpp"
#include "avatarforge/imaging.hpp"
#include "avatarforge/pipeline.hpp"
#include "avatarforge/report.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace avatarforge;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (H, W, 3) float64 in [0, 1]
Array to_numpy(const ImageRGB& img) {
  Array out({img.height(), img.width(), 3});
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

ImageRGB from_numpy(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an (H, W, 3) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  std::vector<double> data(a.data(), a.data() + a.size());
  return ImageRGB::from_data(w, h, std::move(data));
}

Rgb to_rgb(const std::vector<double>& v) {
  if (v.size() != 3) throw InvalidArgument("background needs 3 channels");
  return {v[0], v[1], v[2]};
}

py::object json_loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::string json_dumps(const py::object& obj) { return py::module_::import("json").attr("dumps")(obj).cast<std::string>(); }

}  // namespace

PYBIND11_MODULE(_avatarforge, m) {
  m.doc() = "avatarforge native core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", base);
  auto format = py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<SchemaError>(m, "SchemaError", format);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base);
  py::register_exception<NumericalError>(m, "NumericalError", base);
  py::register_exception<ProcessError>(m, "ProcessError", base);
  py::register_exception<StageError>(m, "StageError", base);

  m.def("load_image", [](const fs::path& p, std::vector<double> bg) { return to_numpy(load_image(p, to_rgb(bg))); },
        py::arg("path"), py::arg("background") = std::vector<double>{1.0, 1.0, 1.0});
  m.def("save_image", [](const Array& a, const fs::path& p) { save_image(from_numpy(a), p); }, py::arg("image"),
        py::arg("path"));
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(from_numpy(a), from_numpy(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(from_numpy(a), from_numpy(b)); });
  m.def("color_match", [](const Array& img, const Array& target) {
    return to_numpy(faceswap::apply_color_match(from_numpy(img), from_numpy(target)));
  });

  m.def(
      "make_fixture",
      [](const fs::path& root, const std::string& kind, std::uint64_t seed, int views, int resolution) {
        FixtureConfig cfg;
        cfg.kind = parse_fixture_kind(kind);
        cfg.seed = seed;
        cfg.views = views;
        cfg.resolution = resolution;
        const FixtureInfo info = make_fixture(cfg, root);
        return py::make_tuple(info.train_views, info.test_views);
      },
      py::arg("root"), py::arg("kind") = "cloud_scene", py::arg("seed") = 0, py::arg("views") = 30,
      py::arg("resolution") = 128);

  m.def(
      "load_views",
      [](const fs::path& root, const std::string& split) {
        const ViewDataset ds = load_dataset(root, split);
        py::list out;
        for (const View& v : ds.views) out.append(py::make_tuple(v.id, to_numpy(v.image)));
        return out;
      },
      py::arg("root"), py::arg("split") = "train");

  m.def("load_config", [](const fs::path& p) { return json_loads(config_to_json(load_config(p))); });
  m.def(
      "run_pipeline",
      [](const py::dict& settings, const std::optional<std::function<void(std::string)>>& log) {
        const PipelineConfig cfg = parse_config_json(json_dumps(settings));
        LogFn fn;
        if (log) fn = [&](std::string_view s) {
            py::gil_scoped_acquire gil;
            (*log)(std::string(s));
          };
        EvalReport report;
        {
          py::gil_scoped_release release;
          report = run_pipeline(cfg, fn);
        }
        return json_loads(report_to_json(report));
      },
      py::arg("settings"), py::arg("log") = py::none(),
      "Run the full pipeline from flat config keys and return the report as a dict.");

  m.def("load_report", [](const fs::path& p) { return json_loads(report_to_json(load_report(p))); });

  m.def(
      "render_views",
      [](const fs::path& model_file, const fs::path& dataset, const std::string& split) {
        const TrainedModel model = TrainedModel::load(model_file);
        const ViewDataset ds = load_dataset(dataset, split);
        std::vector<Pose> poses;
        for (const View& v : ds.views) poses.push_back(v.pose);
        py::list out;
        for (const ImageRGB& img : render_novel_views(model, poses, ds.intrinsics)) out.append(to_numpy(img));
        return out;
      },
      py::arg("model"), py::arg("dataset"), py::arg("split") = "test");

  m.def("gaussian_count", [](const fs::path& ply) { return gs::load_ply(ply).size(); });
}
