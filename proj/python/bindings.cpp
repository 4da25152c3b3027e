#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dkcnet/commands.hpp"
#include "dkcnet/synthetic.hpp"

namespace py = pybind11;
using namespace dkcnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array");
  Matrix m(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows, m.cols});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

Tensor4 to_tensor4(const Array& a) {
  if (a.ndim() != 4) throw DimensionError("expected an (n, c, h, w) array");
  Tensor4 t(Shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                  static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))});
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

Image to_image(const Array& a) {
  if (a.ndim() != 3) throw DimensionError("expected a (c, h, w) array");
  Image img(a.shape(0), a.shape(1), a.shape(2));
  std::copy(a.data(), a.data() + a.size(), img.data.begin());
  return img;
}

Array from_image(const Image& img) {
  Array out({img.channels, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), out.mutable_data());
  return out;
}

std::vector<std::size_t> targets(const BalancePlan& plan) {
  std::vector<std::size_t> out;
  for (const auto& c : plan.classes) out.push_back(c.target);
  return out;
}

KappaMode kappa_mode(const std::string& name) {
  if (name == "flatten") return KappaMode::kFlatten;
  if (name == "per_class_mean") return KappaMode::kPerClassMean;
  throw ArgumentError("kappa mode must be flatten or per_class_mean");
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  py::list per_class;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& cr = r.per_class[c];
    py::dict e;
    e["precision"] = cr.prf.precision.value;
    e["recall"] = cr.prf.recall.value;
    e["f1"] = cr.prf.f1.value;
    e["auc"] = cr.auc ? py::object(py::float_(*cr.auc)) : py::object(py::none());
    per_class.append(e);
  }
  d["per_class"] = per_class;
  d["macro_precision"] = r.macro_precision;
  d["macro_recall"] = r.macro_recall;
  d["macro_f1"] = r.macro_f1;
  d["macro_auc"] = r.macro_auc;
  d["kappa"] = r.kappa.value;
  d["instances"] = r.instances;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-label fundus classifier with dilated kernel attention";
  m.attr("__version__") = "0.1.0";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  std::vector<std::string> names(kClassNames.begin(), kClassNames.end());
  m.attr("CLASS_NAMES") = names;

  m.def("plan_oversample",
        [](const ClassCountsArray& counts, const CbfTable& cbf, bool literal) {
          return targets(plan_oversample(
              counts, cbf, literal ? OversampleRule::kLiteral : OversampleRule::kTableConsistent));
        },
        py::arg("counts"), py::arg("cbf"), py::arg("literal") = false);
  m.def("plan_undersample", [](const ClassCountsArray& counts, const CbfTable& cbf) {
    return targets(plan_undersample(counts, cbf));
  });
  m.def("published_oversample_cbf", &published_oversample_cbf);
  m.def("published_undersample_cbf", &published_undersample_cbf);

  m.def("channel_shuffle_permutation", &channel_shuffle_permutation, py::arg("channels"),
        py::arg("groups"));

  m.def("roc_auc", [](const std::vector<double>& y, const std::vector<double>& s) {
    const RocResult r = roc_auc(y, s);
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : r.curve.points) pts.emplace_back(p.fpr, p.tpr);
    return py::make_tuple(r.auc, pts);
  });
  m.def("evaluate",
        [](const Array& y, const Array& p, double threshold, const std::string& kappa) {
          return report_dict(evaluate(to_matrix(y), to_matrix(p), threshold, kappa_mode(kappa)));
        },
        py::arg("y_true"), py::arg("probabilities"), py::arg("threshold") = 0.5,
        py::arg("kappa") = "flatten");
  m.def("bce", [](const Array& y, const Array& p) { return bce_value(to_matrix(y), to_matrix(p)); },
        py::arg("labels"), py::arg("probabilities"));

  m.def("preprocess_image",
        [](const Array& img, std::size_t size) { return from_image(preprocess_image(to_image(img), size)); },
        py::arg("image"), py::arg("size"));

  m.def("synthetic_dataset",
        [](std::size_t n_per_class, std::uint64_t seed, std::size_t size, double composites) {
          SyntheticOptions opt;
          opt.size = size;
          opt.composite_fraction = composites;
          const auto samples = generate_synthetic_dataset(n_per_class, seed, opt);
          Array images({samples.size(), std::size_t{3}, size, size});
          Array labels({samples.size(), kNumClasses});
          py::list boxes;
          double* ip = images.mutable_data();
          double* lp = labels.mutable_data();
          for (const auto& s : samples) {
            ip = std::copy(s.image.data.begin(), s.image.data.end(), ip);
            for (std::size_t c = 0; c < kNumClasses; ++c) *lp++ = s.label[c];
            py::list mine;
            for (const auto& b : s.motifs) mine.append(py::make_tuple(b.cls, b.y0, b.x0, b.y1, b.x1));
            boxes.append(mine);
          }
          return py::make_tuple(images, labels, boxes);
        },
        py::arg("n_per_class"), py::arg("seed") = 0, py::arg("size") = 224,
        py::arg("composite_fraction") = 0.0);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return Model(model_config_from_json(config_json), seed);
           }),
           py::arg("config_json") = "{}", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& p) { return Model::from_checkpoint(load_checkpoint(p)); })
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(p, self.to_checkpoint()); })
      .def("config_json", [](const Model& self) { return model_config_to_json(self.config()); })
      .def("parameter_count", [](const Model& self) { return self.params().parameter_count(); })
      .def("predict_proba",
           [](Model& self, const Array& images) { return from_matrix(self.predict_proba(to_tensor4(images))); })
      .def("fit",
           [](Model& self, const Array& images, const Array& labels, double lr, std::size_t epochs,
              std::size_t batch_size, std::uint64_t seed) {
             TrainConfig tc;
             tc.sgd.lr = lr;
             tc.epochs = epochs;
             tc.batch_size = batch_size;
             tc.seed = seed;
             const TrainResult r = train(self, Dataset{to_tensor4(images), to_matrix(labels)}, tc);
             std::vector<double> losses;
             for (const auto& e : r.log) losses.push_back(e.train_loss);
             return losses;
           },
           py::arg("images"), py::arg("labels"), py::arg("lr") = 0.01, py::arg("epochs") = 10,
           py::arg("batch_size") = 16, py::arg("seed") = 0)
      .def("grad_cam",
           [](Model& self, const Array& image, std::size_t cls, const std::string& layer) {
             const Heatmap h = grad_cam(self, to_image(image), cls, parse_cam_layer(layer));
             Array out({h.map.height, h.map.width});
             std::copy(h.map.data.begin(), h.map.data.end(), out.mutable_data());
             return py::make_tuple(out, h.degenerate);
           },
           py::arg("image"), py::arg("cls"), py::arg("layer") = "se_out");

  m.def("verify", [](std::uint64_t seed) {
    const VerifyReport r = cmd_verify(seed);
    return py::make_tuple(r.passed(), r.text());
  }, py::arg("seed") = 0);
}
