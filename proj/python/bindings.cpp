#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

#include "lappyr/checkpoint.hpp"
#include "lappyr/datapipe.hpp"
#include "lappyr/gradcheck.hpp"
#include "lappyr/image_io.hpp"
#include "lappyr/losses.hpp"
#include "lappyr/metrics.hpp"
#include "lappyr/pyramid.hpp"
#include "lappyr/trainer.hpp"

namespace py = pybind11;
using namespace lappyr;

namespace {

// Arrays cross the boundary as float32 HWC (or HW for single-channel).
Image array_to_image(const py::array& arr) {
  auto a = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(arr);
  if (!a) throw std::invalid_argument("expected a float-convertible numpy array");
  if (a.ndim() == 2) {
    Image img(1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
  }
  if (a.ndim() != 3 || (a.shape(2) != 1 && a.shape(2) != 3))
    throw std::invalid_argument("expected an array of shape (H, W), (H, W, 1) or (H, W, 3)");
  const int h = static_cast<int>(a.shape(0));
  const int w = static_cast<int>(a.shape(1));
  const int c = static_cast<int>(a.shape(2));
  Image img(c, h, w);
  auto r = a.unchecked<3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) img.at(ch, y, x) = r(y, x, ch);
  return img;
}

py::array image_to_array(const Image& img) {
  py::array_t<float> out({img.height, img.width, img.channels});
  auto r = out.mutable_unchecked<3>();
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) r(y, x, c) = img.at(c, y, x);
  return out;
}

Image rgb(const py::array& arr) {
  Image img = array_to_image(arr);
  return img.channels == 1 ? expand_to_rgb(img) : img;
}

BilateralParams bilateral_params(double sigma_s, std::optional<double> sigma_r, int window) {
  BilateralParams p;
  p.sigma_s = sigma_s;
  p.window = window;
  if (sigma_r.has_value()) {
    p.adaptive_sigma_r = false;
    p.sigma_r = *sigma_r;
  }
  return p;
}

// Albedo/shading network pair with a shared config.
struct IntrinsicModel {
  LapPyrNet<float> albedo_net;
  LapPyrNet<float> shading_net;

  static IntrinsicModel build(int levels, int hidden, int substructures,
                              const std::string& variant, std::uint64_t seed) {
    NetConfig cfg;
    cfg.levels = levels;
    cfg.hidden = hidden;
    cfg.substructures = substructures;
    cfg.variant = variant_from_name(variant);
    return {LapPyrNet<float>::build(cfg, derive_seed(seed, 1)),
            LapPyrNet<float>::build(cfg, derive_seed(seed, 2))};
  }

  static IntrinsicModel load(const std::string& path) {
    auto [a, s] = load_checkpoint(path);
    return {std::move(a), std::move(s)};
  }

  void save(const std::string& path) const { save_checkpoint(path, albedo_net, shading_net); }

  py::tuple run(const py::array& input) const {
    auto [a, s] = decompose(albedo_net, shading_net, rgb(input));
    return py::make_tuple(image_to_array(a), image_to_array(s));
  }

  py::tuple components(const py::array& input) const {
    NoGradGuard no_grad;
    Tensor<float> x = image_to_tensor<float>(rgb(input));
    py::list albedo, shading;
    for (const auto& c : albedo_net.forward(x).components)
      albedo.append(image_to_array(tensor_to_image(c)));
    for (const auto& c : shading_net.forward(x).components)
      shading.append(image_to_array(tensor_to_image(c)));
    return py::make_tuple(albedo, shading);
  }

  py::dict config() const {
    const NetConfig& c = albedo_net.config();
    py::dict d;
    d["levels"] = c.levels;
    d["hidden"] = c.hidden;
    d["substructures"] = c.substructures;
    d["variant"] = variant_name(c.variant);
    return d;
  }

  std::int64_t parameter_count() const {
    return albedo_net.parameter_count() + shading_net.parameter_count();
  }
};

py::dict report_to_dict(const MetricReport& report) {
  auto row = [](const MetricRow& r) {
    py::dict d;
    d["id"] = r.id;
    d["si_mse_albedo"] = r.si_mse_albedo;
    d["si_mse_shading"] = r.si_mse_shading;
    d["si_lmse_albedo"] = r.si_lmse_albedo;
    d["si_lmse_shading"] = r.si_lmse_shading;
    d["dssim_albedo"] = r.dssim_albedo;
    d["dssim_shading"] = r.dssim_shading;
    d["lmse"] = r.lmse;
    return d;
  };
  py::dict d;
  py::list images;
  for (const auto& r : report.per_image) images.append(row(r));
  d["images"] = images;
  d["aggregate"] = row(report.aggregate);
  d["count"] = report.count;
  return d;
}

}  // namespace

PYBIND11_MODULE(_lappyr, m) {
  m.doc() = "Laplacian-pyramid intrinsic image decomposition toolkit";

  // pyramid algebra
  m.def(
      "gaussian_reduce",
      [](const py::array& img) { return image_to_array(gaussian_reduce(array_to_image(img), burt_adelson_kernel())); },
      py::arg("image"), "Smooth and decimate by 2 (extents must be even).");
  m.def(
      "upsample",
      [](const py::array& img) { return image_to_array(upsample(array_to_image(img), burt_adelson_kernel())); },
      py::arg("image"), "Zero-interleave and smooth to double extents.");
  m.def(
      "laplacian_expand",
      [](const py::array& img, int levels) {
        py::list out;
        for (const auto& level : laplacian_expand(array_to_image(img), levels).levels)
          out.append(image_to_array(level));
        return out;
      },
      py::arg("image"), py::arg("levels"),
      "Detail levels plus the low band: [L0, ..., L(K-1), low].");
  m.def(
      "collapse",
      [](const py::list& levels) {
        ImagePyramid pyr;
        pyr.kind = PyramidKind::laplacian;
        pyr.kernel = burt_adelson_kernel();
        for (const auto& level : levels)
          pyr.levels.push_back(array_to_image(level.cast<py::array>()));
        pyr.reductions = static_cast<int>(pyr.levels.size()) - 1;
        return image_to_array(collapse(pyr));
      },
      py::arg("levels"), "Reconstruct an image from laplacian_expand output.");

  // filtering
  m.def(
      "joint_bilateral_filter",
      [](const py::array& pred, const py::array& guide, double sigma_s,
         std::optional<double> sigma_r, int window) {
        return image_to_array(joint_bilateral_filter(
            array_to_image(pred), array_to_image(guide),
            bilateral_params(sigma_s, sigma_r, window)));
      },
      py::arg("pred"), py::arg("guide"), py::arg("sigma_s") = 1.0,
      py::arg("sigma_r") = py::none(), py::arg("window") = 5,
      "Edge-aware filter of pred guided by guide; sigma_r None = adaptive.");
  m.def(
      "edge_aware_smooth",
      [](const py::array& img, double strength) {
        return image_to_array(edge_aware_smooth(array_to_image(img), strength));
      },
      py::arg("image"), py::arg("strength") = 1.0);

  // metrics
  m.def("optimal_scale", [](const py::array& pred, const py::array& gt) {
    return optimal_scale(array_to_image(pred), array_to_image(gt));
  });
  m.def("si_mse", [](const py::array& pred, const py::array& gt) {
    return si_mse(array_to_image(pred), array_to_image(gt));
  });
  m.def(
      "si_lmse",
      [](const py::array& pred, const py::array& gt, int window, int stride) {
        return si_lmse(array_to_image(pred), array_to_image(gt), window, stride);
      },
      py::arg("pred"), py::arg("gt"), py::arg("window"), py::arg("stride"));
  m.def(
      "lmse",
      [](const py::array& pred_albedo, const py::array& gt_albedo,
         const py::array& pred_shading, const py::array& gt_shading, int window) {
        return lmse(array_to_image(pred_albedo), array_to_image(gt_albedo),
                    array_to_image(pred_shading), array_to_image(gt_shading), window);
      },
      py::arg("pred_albedo"), py::arg("gt_albedo"), py::arg("pred_shading"),
      py::arg("gt_shading"), py::arg("window") = 20);
  m.def("ssim", [](const py::array& a, const py::array& b) {
    return ssim(array_to_image(a), array_to_image(b));
  });
  m.def("dssim", [](const py::array& a, const py::array& b) {
    return dssim(array_to_image(a), array_to_image(b));
  });

  // losses (scalar values; autodiff stays on the C++ side)
  m.def(
      "loss_values",
      [](const py::array& pred_albedo, const py::array& pred_shading,
         const py::array& gt_albedo, const py::array& gt_shading, const py::array& input,
         double lambda_d, double lambda_p, double lambda_t, double sigma_s,
         std::optional<double> sigma_r, int window, std::uint64_t fx_seed) {
        auto t = [](const py::array& a) { return image_to_tensor<float>(rgb(a)); };
        auto fx = FeatureExtractor<float>::surrogate(fx_seed);
        LossWeights w{lambda_d, lambda_p, lambda_t};
        auto parts = compute_losses(t(pred_albedo), t(pred_shading), t(gt_albedo),
                                    t(gt_shading), t(input), fx, w,
                                    bilateral_params(sigma_s, sigma_r, window));
        py::dict d;
        d["data"] = parts.data.item();
        d["perceptual"] = parts.perceptual.item();
        d["tv"] = parts.tv.item();
        d["total"] = parts.total.item();
        return d;
      },
      py::arg("pred_albedo"), py::arg("pred_shading"), py::arg("gt_albedo"),
      py::arg("gt_shading"), py::arg("input"), py::arg("lambda_d") = 1.0,
      py::arg("lambda_p") = 0.5, py::arg("lambda_t") = 1e-4, py::arg("sigma_s") = 1.0,
      py::arg("sigma_r") = py::none(), py::arg("window") = 5,
      py::arg("fx_seed") = FeatureExtractor<float>::kDefaultSeed);

  // data
  m.def(
      "synth_mondrian",
      [](std::uint64_t seed, int height, int width) {
        auto p = synth_mondrian(seed, height, width);
        return py::make_tuple(image_to_array(p.input), image_to_array(p.albedo),
                              image_to_array(p.shading));
      },
      py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64,
      "Returns (input, albedo, shading) with input = albedo * shading exactly.");
  m.def(
      "write_mondrian_dataset",
      [](const std::string& dir, int n, int size, std::uint64_t seed) {
        std::vector<SamplePair> pairs;
        for (int i = 0; i < n; ++i) {
          auto p = synth_mondrian(derive_seed(seed, static_cast<std::uint64_t>(i)), size, size);
          char id[32];
          std::snprintf(id, sizeof(id), "mondrian%04d", i);
          p.id = id;
          pairs.push_back(std::move(p));
        }
        return write_triples(dir, pairs);
      },
      py::arg("dir"), py::arg("n"), py::arg("size") = 64, py::arg("seed") = 0,
      "Writes PFM triples plus a manifest; returns the manifest path.");
  m.def("read_image", [](const std::string& path) { return image_to_array(read_image(path)); });
  m.def("write_image", [](const std::string& path, const py::array& img) {
    write_image(path, array_to_image(img));
  });

  // model
  py::class_<IntrinsicModel>(m, "IntrinsicModel")
      .def_static("build", &IntrinsicModel::build, py::arg("levels") = 4,
                  py::arg("hidden") = 32, py::arg("substructures") = 6,
                  py::arg("variant") = "pyramid_d", py::arg("seed") = 0)
      .def_static("load", &IntrinsicModel::load, py::arg("path"))
      .def("save", &IntrinsicModel::save, py::arg("path"))
      .def("decompose", &IntrinsicModel::run, py::arg("input"),
           "Returns (albedo, shading) as HWC float32 arrays.")
      .def("components", &IntrinsicModel::components, py::arg("input"),
           "Returns (albedo_components, shading_components), finest first.")
      .def_property_readonly("config", &IntrinsicModel::config)
      .def_property_readonly("parameter_count", &IntrinsicModel::parameter_count);

  // training and evaluation
  m.def(
      "train_joint",
      [](const std::string& manifest, const std::string& out_dir, int steps, int batch,
         int crop, int levels, int hidden, int substructures, const std::string& variant,
         std::uint64_t seed, double lr_start, double lr_end, double lambda_d,
         double lambda_p, double lambda_t, double scale_min, double scale_max,
         double flip_p) {
        NetConfig net_cfg;
        net_cfg.levels = levels;
        net_cfg.hidden = hidden;
        net_cfg.substructures = substructures;
        net_cfg.variant = variant_from_name(variant);
        TrainConfig cfg;
        cfg.steps = steps;
        cfg.batch = batch;
        cfg.crop = crop;
        cfg.seed = seed;
        cfg.lr_start = lr_start;
        cfg.lr_end = lr_end;
        cfg.weights = LossWeights{lambda_d, lambda_p, lambda_t};
        cfg.scale_min = scale_min;
        cfg.scale_max = scale_max;
        cfg.flip_p = flip_p;
        auto ds = Dataset::load_manifest(manifest);
        auto fx = FeatureExtractor<float>::surrogate();
        auto net_a = LapPyrNet<float>::build(net_cfg, derive_seed(seed, 1));
        auto net_s = LapPyrNet<float>::build(net_cfg, derive_seed(seed, 2));
        auto result = train_joint(net_a, net_s, ds, cfg, fx, out_dir);
        return result.final_checkpoint;
      },
      py::arg("manifest"), py::arg("out_dir"), py::arg("steps") = 100, py::arg("batch") = 2,
      py::arg("crop") = 64, py::arg("levels") = 2, py::arg("hidden") = 16,
      py::arg("substructures") = 2, py::arg("variant") = "pyramid_d", py::arg("seed") = 0,
      py::arg("lr_start") = 1e-3, py::arg("lr_end") = 1e-4, py::arg("lambda_d") = 1.0,
      py::arg("lambda_p") = 0.5, py::arg("lambda_t") = 1e-4, py::arg("scale_min") = 1.0,
      py::arg("scale_max") = 1.0, py::arg("flip_p") = 0.5,
      "Trains on a manifest and returns the final checkpoint path.");
  m.def(
      "evaluate",
      [](const std::string& manifest, const std::string& checkpoint) {
        auto ds = Dataset::load_manifest(manifest);
        auto [net_a, net_s] = load_checkpoint(checkpoint);
        return report_to_dict(evaluate(net_a, net_s, ds));
      },
      py::arg("manifest"), py::arg("checkpoint"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const auto& item : run_gradient_suite(seed).items) {
          py::dict d;
          d["name"] = item.name;
          d["max_rel_error"] = item.max_rel_error;
          d["tolerance"] = item.tolerance;
          d["passed"] = item.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0, "Runs the finite-difference gradient suite.");
}
