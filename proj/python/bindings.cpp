#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "msamseg/evaluation.hpp"
#include "msamseg/gradcheck.hpp"

namespace py = pybind11;
using namespace msamseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (H, W) or (N, 1, H, W) array to an (N, 1, H, W) tensor.
Tensor<float> to_tensor(const FloatArray& a) {
  Shape s;
  if (a.ndim() == 2) s = {1, 1, static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
  else if (a.ndim() == 4) s = {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                               static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
  else throw ShapeError("expected a 2-D (H, W) or 4-D (N, C, H, W) array");
  return Tensor<float>(s, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor<float>& t) {
  const auto& s = t.shape();
  FloatArray out({s.n, s.c, s.h, s.w});
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

FloatArray plane_array(const Tensor<float>& t) {
  FloatArray out({t.shape().h, t.shape().w});
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_msamseg, m) {
  m.doc() = "PET-CT tumour segmentation with a multimodal spatial attention module";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init([](const std::string& backbone, const std::string& msam, std::size_t depth, std::size_t base_width,
                       std::size_t height, std::size_t width) {
             ModelConfig c;
             c.backbone_input = parse_backbone_input(backbone);
             c.msam_input = parse_msam_input(msam);
             c.depth = depth;
             c.base_width = base_width;
             c.height = height;
             c.width = width;
             c.validate();
             return c;
           }),
           py::arg("backbone") = "CT", py::arg("msam") = "PET", py::arg("depth") = 3, py::arg("base_width") = 16,
           py::arg("height") = 64, py::arg("width") = 64)
      .def_property_readonly("backbone", [](const ModelConfig& c) { return to_string(c.backbone_input); })
      .def_property_readonly("msam", [](const ModelConfig& c) { return to_string(c.msam_input); })
      .def_readonly("depth", &ModelConfig::depth)
      .def_readonly("base_width", &ModelConfig::base_width)
      .def_readonly("height", &ModelConfig::height)
      .def_readonly("width", &ModelConfig::width)
      .def("label", &ModelConfig::label)
      .def("to_json", [](const ModelConfig& c) { return model_config_to_json(c); })
      .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(" + model_config_to_json(c) + ")"; });

  m.def("table1_matrix", &table1_matrix, py::arg("base"));

  py::class_<SegmentationModel<float>>(m, "Model")
      .def(py::init([](const ModelConfig& c, std::uint64_t seed) { return SegmentationModel<float>::build(c, seed); }),
           py::arg("config"), py::arg("seed") = 1)
      .def_property_readonly("config", &SegmentationModel<float>::config)
      .def_property_readonly("parameter_count",
                             [](const SegmentationModel<float>& s) {
                               std::size_t n = 0;
                               for (const auto& e : s.params().entries) n += e.value.size();
                               return n;
                             })
      .def_property_readonly("parameter_names",
                             [](const SegmentationModel<float>& s) {
                               std::vector<std::string> names;
                               for (const auto& e : s.params().entries) names.push_back(e.name);
                               return names;
                             })
      .def(
          "forward",
          [](const SegmentationModel<float>& s, const FloatArray& pet, const FloatArray& ct) {
            const auto r = s.forward(to_tensor(pet), to_tensor(ct));
            py::dict out;
            out["probabilities"] = to_array(r.probabilities);
            out["attention"] = r.attention ? py::object(to_array(*r.attention)) : py::none();
            return out;
          },
          py::arg("pet"), py::arg("ct"), "Probabilities (N, 2, H, W) and the attention map (N, 1, H, W) if any.");

  m.def(
      "load_model",
      [](const std::filesystem::path& path) {
        const auto ck = load_checkpoint(path);
        return SegmentationModel<float>(ck.config, ck.params);
      },
      py::arg("path"), "Model stored in a checkpoint (parameters only).");

  m.def(
      "generate_phantoms",
      [](const std::filesystem::path& out, int patients, int min_slices, int max_slices, std::size_t size,
         std::uint64_t seed) {
        PhantomSpec spec;
        spec.patients = patients;
        spec.slices_per_patient = {min_slices, max_slices};
        spec.height = spec.width = size;
        spec.seed = seed;
        spec.validate();
        return generate_phantoms(spec, out);
      },
      py::arg("out"), py::arg("patients") = 50, py::arg("min_slices") = 3, py::arg("max_slices") = 5,
      py::arg("size") = 64, py::arg("seed") = 1, "Writes a phantom dataset and returns the manifest path.");

  m.def(
      "load_slices",
      [](const std::filesystem::path& path) {
        py::list out;
        for (const auto& s : load_dataset(path).all_slices()) {
          py::dict d;
          d["patient_id"] = s.patient_id;
          d["slice_index"] = s.slice_index;
          d["pet"] = plane_array(s.pet);
          d["ct"] = plane_array(s.ct);
          d["mask"] = plane_array(s.mask);
          d["hotspots"] = s.hotspots ? py::object(plane_array(*s.hotspots)) : py::none();
          out.append(d);
        }
        return out;
      },
      py::arg("path"), "Every slice of a dataset as dicts of (H, W) float arrays.");

  m.def(
      "metrics",
      [](const FloatArray& pred, const FloatArray& truth) {
        const auto c = confusion(to_tensor(pred), to_tensor(truth));
        const auto x = metrics_of(c);
        return py::dict(py::arg("tp") = c.tp, py::arg("fp") = c.fp, py::arg("tn") = c.tn, py::arg("fn") = c.fn,
                        py::arg("precision") = x.precision, py::arg("sensitivity") = x.sensitivity,
                        py::arg("specificity") = x.specificity, py::arg("dsc") = x.dsc);
      },
      py::arg("pred"), py::arg("truth"), "Pixel metrics of two binary masks, tumour positive.");

  m.def("gradcheck_ops", &gradcheck_ops);
  m.def(
      "gradient_check",
      [](const std::string& op, double tolerance, std::uint64_t seed) {
        const auto r = gradient_check(op, tolerance, seed);
        return py::dict(py::arg("passed") = r.passed, py::arg("max_rel_error") = r.max_rel_error,
                        py::arg("trials") = r.trials, py::arg("elements") = r.elements);
      },
      py::arg("op"), py::arg("tolerance") = kGradCheckTolerance, py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "msamseg");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs a command-line invocation in process and returns its exit code.");
}
