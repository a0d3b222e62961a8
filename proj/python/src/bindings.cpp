#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "distillkit/distill.hpp"
#include "distillkit/error.hpp"
#include "distillkit/harness.hpp"
#include "distillkit/losses.hpp"
#include "distillkit/teacher.hpp"

namespace py = pybind11;
namespace dk = distillkit;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

dk::Tensor to_tensor(const FloatArray &a) {
  dk::Shape shape(a.shape(), a.shape() + a.ndim());
  return dk::Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const dk::Tensor &t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

py::dict forward_dict(const dk::ForwardOutput &out) {
  py::dict d;
  d["logits"] = to_array(out.logits);
  d["probabilities"] = to_array(out.probabilities);
  d["embedding"] = to_array(out.embedding);
  return d;
}

dk::LossConfig loss_config(double lambda_reg, double ratio, bool squared) {
  dk::LossConfig c;
  c.lambda_reg = lambda_reg;
  c.distill_ratio = ratio;
  c.squared_distance = squared;
  return c;
}

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of distillkit";

  auto base = py::register_exception<dk::Error>(m, "DistillkitError", PyExc_RuntimeError);
  py::register_exception<dk::ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<dk::NotFoundError>(m, "NotFoundError", base.ptr());
  py::register_exception<dk::InvalidArgumentError>(m, "InvalidArgumentError", base.ptr());
  auto cache_format =
      py::register_exception<dk::CacheFormatError>(m, "CacheFormatError", base.ptr());
  py::register_exception<dk::CacheMagicError>(m, "CacheMagicError", cache_format.ptr());

  m.attr("EMBED_DIM") = dk::kEmbedDim;

  // ---- losses (float64, batch-summed) ----
  m.def(
      "kl_loss",
      [](const dk::Matrix &y, const dk::Matrix &y_hat, double theta_sq, double lambda_reg) {
        return dk::kl_loss(y, y_hat, theta_sq, loss_config(lambda_reg, 0.5, false));
      },
      py::arg("y"), py::arg("y_hat"), py::arg("theta_sq_norm") = 0.0, py::arg("lambda_reg") = 1e-4);
  m.def(
      "entropy_loss",
      [](const dk::Matrix &y, const dk::Matrix &y_hat, double theta_sq, double lambda_reg) {
        return dk::entropy_loss(y, y_hat, theta_sq, loss_config(lambda_reg, 0.5, false));
      },
      py::arg("y"), py::arg("y_hat"), py::arg("theta_sq_norm") = 0.0, py::arg("lambda_reg") = 1e-4);
  m.def(
      "feature_distance",
      [](const dk::Matrix &student, const dk::Matrix &teacher, bool squared) {
        return dk::feature_distance_loss(student, teacher, loss_config(0.0, 0.5, squared));
      },
      py::arg("student"), py::arg("teacher"), py::arg("squared") = false);
  m.def(
      "distill_loss",
      [](double ce, double dist, double ratio) {
        return dk::distill_loss(ce, dist, loss_config(0.0, ratio, false));
      },
      py::arg("ce"), py::arg("dist"), py::arg("ratio") = 0.5);

  // ---- combination block ----
  m.def(
      "combine_embeddings",
      [](const std::vector<FloatArray> &embeddings, const std::vector<FloatArray> &weights,
         const FloatArray &bias) {
        std::vector<dk::Tensor> e;
        for (const auto &a : embeddings) e.push_back(to_tensor(a));
        dk::CombinationParams c;
        for (const auto &w : weights) c.weights.push_back(to_tensor(w));
        c.bias = to_tensor(bias);
        return to_array(dk::combine_embeddings(e, c));
      },
      py::arg("embeddings"), py::arg("weights"), py::arg("bias"));

  // ---- dataset ----
  py::class_<dk::Sample>(m, "Sample")
      .def_readonly("sample_id", &dk::Sample::sample_id)
      .def_readonly("relative_path", &dk::Sample::relative_path)
      .def_readonly("class_index", &dk::Sample::class_index)
      .def_property_readonly("rotation", [](const dk::Sample &s) { return static_cast<int>(s.rotation); })
      .def("__repr__", [](const dk::Sample &s) { return "<Sample " + s.sample_id + ">"; });

  py::class_<dk::DatasetIndex>(m, "DatasetIndex")
      .def_property_readonly("root", &dk::DatasetIndex::root)
      .def_property_readonly("classes", &dk::DatasetIndex::classes)
      .def_property_readonly("samples", &dk::DatasetIndex::samples)
      .def("class_counts", &dk::DatasetIndex::class_counts)
      .def("fingerprint", [](const dk::DatasetIndex &d) { return dk::dataset_fingerprint(d); })
      .def("__len__", &dk::DatasetIndex::size);

  m.def(
      "scan_dataset",
      [](const std::filesystem::path &root, int height, int width) {
        return dk::scan_dataset(root, {height, width, 3});
      },
      py::arg("root"), py::arg("height") = 32, py::arg("width") = 32);
  m.def(
      "split_dataset",
      [](const dk::DatasetIndex &index, double fraction, std::uint64_t seed, bool stratified) {
        auto s = dk::split_dataset(index, {fraction, seed, stratified});
        return py::make_tuple(std::move(s.train), std::move(s.test));
      },
      py::arg("index"), py::arg("train_fraction") = 0.2, py::arg("seed") = 0,
      py::arg("stratified") = true);
  m.def("augment_rotations", &dk::augment_rotations, py::arg("index"));
  m.def(
      "synth",
      [](const std::filesystem::path &root, int num_classes, int per_class, int size,
         std::uint64_t seed, double noise) {
        return dk::generate_synthetic_corpus({num_classes, per_class, {size, size, 3}, seed, noise},
                                             root);
      },
      py::arg("root"), py::arg("num_classes") = 8, py::arg("per_class") = 50, py::arg("size") = 32,
      py::arg("seed") = 0, py::arg("noise") = 0.08);

  // ---- models ----
  m.def("reference_backbones", &dk::reference_backbone_names);
  m.def(
      "trainable_params",
      [](const std::string &reference, int num_classes, std::optional<int> blocks_kept, int size) {
        auto spec = dk::reference_backbone(reference, {size, size, 3});
        if (blocks_kept) spec = dk::prune_variant(spec, *blocks_kept);
        return dk::count_trainable_params(dk::build_model(spec, num_classes, 0));
      },
      py::arg("reference"), py::arg("num_classes"), py::arg("blocks_kept") = py::none(),
      py::arg("size") = 32);

  py::class_<dk::ModelHandle>(m, "Model")
      .def_static(
          "build",
          [](const std::string &reference, int num_classes, std::uint64_t seed, int size,
             std::optional<int> blocks_kept) {
            auto spec = dk::reference_backbone(reference, {size, size, 3});
            if (blocks_kept) spec = dk::prune_variant(spec, *blocks_kept);
            return dk::build_model(spec, num_classes, seed);
          },
          py::arg("reference"), py::arg("num_classes"), py::arg("seed") = 0, py::arg("size") = 32,
          py::arg("blocks_kept") = py::none())
      .def_static("load", &dk::load_model, py::arg("path"))
      .def("save", [](const dk::ModelHandle &h, const std::filesystem::path &p) { dk::save_model(p, h); },
           py::arg("path"))
      .def_property_readonly("name", [](const dk::ModelHandle &h) { return h.spec().name; })
      .def_property_readonly("num_classes", &dk::ModelHandle::num_classes)
      .def_property_readonly("trainable_params",
                             [](const dk::ModelHandle &h) { return dk::count_trainable_params(h); })
      .def("forward", [](const dk::ModelHandle &h, const FloatArray &images) {
        return forward_dict(h.forward(to_tensor(images)));
      });

  py::class_<dk::TeacherModel>(m, "Teacher")
      .def_static("load", &dk::load_teacher, py::arg("path"))
      .def_property_readonly("num_branches", &dk::TeacherModel::num_branches)
      .def_property_readonly("num_classes", &dk::TeacherModel::num_classes)
      .def_property_readonly("trainable_params",
                             [](const dk::TeacherModel &t) { return dk::count_trainable_params(t); })
      .def("forward", [](const dk::TeacherModel &t, const FloatArray &images) {
        return forward_dict(t.forward(to_tensor(images)));
      });

  // ---- feature cache ----
  m.def(
      "read_feature_cache",
      [](const std::filesystem::path &path) {
        const auto cache = dk::read_feature_cache(path);
        py::dict out;
        for (const auto &[id, v] : cache.entries) {
          FloatArray a(static_cast<py::ssize_t>(v.size()));
          std::copy(v.begin(), v.end(), a.mutable_data());
          out[py::str(id)] = a;
        }
        return py::make_tuple(out, py::bytes(reinterpret_cast<const char *>(cache.fingerprint.data()),
                                             cache.fingerprint.size()));
      },
      py::arg("path"));
  m.def(
      "write_feature_cache",
      [](const std::filesystem::path &path, const std::map<std::string, FloatArray> &entries,
         const py::bytes &fingerprint) {
        dk::FeatureCache cache;
        std::uint32_t dim = 0;
        for (const auto &[id, a] : entries) {
          dim = static_cast<std::uint32_t>(a.size());
          cache.entries[id] = std::vector<float>(a.data(), a.data() + a.size());
        }
        if (!entries.empty()) cache.dim = dim;
        const std::string fp = fingerprint;
        if (!fp.empty() && fp.size() != cache.fingerprint.size())
          throw dk::InvalidArgumentError("fingerprint must be 16 bytes");
        std::copy(fp.begin(), fp.end(), cache.fingerprint.begin());
        dk::write_feature_cache(path, cache);
      },
      py::arg("path"), py::arg("entries"), py::arg("fingerprint") = py::bytes());

  // ---- experiments ----
  m.def(
      "run_experiment",
      [](const std::filesystem::path &config) {
        std::vector<dk::ExperimentResult> results;
        {
          py::gil_scoped_release unlocked;
          results = dk::run_experiment(dk::load_experiment_config(config));
        }
        const auto loads = py::module_::import("json").attr("loads");
        py::list out;
        for (const auto &r : results) out.append(loads(dk::to_json(r).dump()));
        return out;
      },
      py::arg("config"));
}
