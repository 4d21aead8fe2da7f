#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "simco/cli.hpp"
#include "simco/cluster.hpp"
#include "simco/count.hpp"
#include "simco/detect.hpp"
#include "simco/embed.hpp"
#include "simco/manifest.hpp"
#include "simco/shapegen.hpp"

namespace py = pybind11;
using namespace simco;
using Json = nlohmann::ordered_json;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

U8Array to_numpy(const RasterImage& img) {
  U8Array out({img.height(), img.width(), 3});
  std::memcpy(out.mutable_data(), img.bytes().data(), img.bytes().size());
  return out;
}

RasterImage from_numpy(const U8Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error("raster must have shape (height, width, 3)");
  RasterImage img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(img.bytes().data(), a.data(), img.bytes().size());
  return img;
}

std::vector<embed::Descriptor> descriptors_from(const F64Array& a) {
  if (a.ndim() != 2) throw Error("descriptors must be a 2-D array");
  std::vector<embed::Descriptor> out(a.shape(0));
  const double* p = a.data();
  for (auto& d : out) {
    d.values.assign(p, p + a.shape(1));
    p += a.shape(1);
  }
  return out;
}

F64Array descriptors_to(const std::vector<embed::Descriptor>& d, int dim) {
  F64Array out({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(dim)});
  double* p = out.mutable_data();
  for (const auto& x : d) p = std::copy(x.values.begin(), x.values.end(), p);
  return out;
}

BBox to_box(const std::array<int, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

shapegen::GeneratorConfig gen_config(const std::string& json) {
  return json.empty() ? shapegen::GeneratorConfig{} : shapegen::config_from_json(Json::parse(json));
}

class Model {
 public:
  explicit Model(embed::ModelFile m) : m_(std::move(m)) {}
  static Model load(const std::string& path) { return Model(embed::load_model(path)); }
  static Model initialized(int input_dim, int hidden_dim, std::uint64_t seed) {
    embed::ModelFile m;
    m.net = embed::EmbeddingNet::initialized(input_dim, hidden_dim, embed::kDescriptorDim, seed);
    return Model(std::move(m));
  }

  F64Array forward(const F64Array& features) const {
    if (features.ndim() != 2) throw Error("features must be a 2-D array");
    std::vector<embed::Descriptor> out;
    const double* p = features.data();
    for (py::ssize_t i = 0; i < features.shape(0); ++i, p += features.shape(1))
      out.push_back(m_.net.forward(std::span<const double>(p, features.shape(1))));
    return descriptors_to(out, m_.net.output_dim());
  }

  int input_dim() const { return m_.net.input_dim(); }
  int hidden_dim() const { return m_.net.hidden_dim(); }
  int output_dim() const { return m_.net.output_dim(); }
  void save(const std::string& path) const { embed::save_model(path, m_); }
  const embed::EmbeddingNet& net() const { return m_.net; }

 private:
  embed::ModelFile m_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the simco counting pipeline";

  py::register_exception<Error>(m, "SimcoError");

  m.def(
      "generate_image",
      [](const std::string& config_json, std::uint64_t seed, int index) {
        const auto gen = shapegen::generate_image(gen_config(config_json), seed, index);
        return py::make_tuple(shapegen::to_json(gen.record).dump(), to_numpy(gen.raster));
      },
      py::arg("config_json"), py::arg("seed"), py::arg("index"),
      "Image `index` of dataset (config, seed): (record JSON, HxWx3 uint8 raster).");

  m.def(
      "build_manifest",
      [](const std::string& config_json, std::uint64_t seed) {
        return shapegen::serialize(shapegen::build_manifest(gen_config(config_json), seed));
      },
      py::arg("config_json"), py::arg("seed"));

  m.def(
      "generate_dataset",
      [](const std::string& config_json, std::uint64_t seed, const std::string& out_dir) {
        shapegen::generate_dataset(gen_config(config_json), seed, out_dir);
      },
      py::arg("config_json"), py::arg("seed"), py::arg("out_dir"));

  m.def(
      "detect_blobs",
      [](const U8Array& raster, double quantile, int min_area) {
        std::vector<std::tuple<int, int, int, int, double>> out;
        for (const auto& d : detect::detect_blobs(from_numpy(raster), {quantile, min_area}))
          out.emplace_back(d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1, d.score);
        return out;
      },
      py::arg("raster"), py::arg("threshold_quantile") = 0.99, py::arg("min_area_px") = 30);

  m.def(
      "extract_features",
      [](const U8Array& raster, const std::array<int, 4>& bbox, int patch) {
        const auto f = detect::extract_features(from_numpy(raster), {to_box(bbox)}, patch);
        F64Array out(static_cast<py::ssize_t>(f.values.size()));
        std::copy(f.values.begin(), f.values.end(), out.mutable_data());
        return out;
      },
      py::arg("raster"), py::arg("bbox"), py::arg("patch") = detect::kDefaultPatch);

  m.def("feature_dim", &detect::feature_dim, py::arg("patch"));

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def_static("initialized", &Model::initialized, py::arg("input_dim"), py::arg("hidden_dim"), py::arg("seed"))
      .def("forward", &Model::forward, py::arg("features"), "Rows of features -> rows of unit descriptors.")
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("input_dim", &Model::input_dim)
      .def_property_readonly("hidden_dim", &Model::hidden_dim)
      .def_property_readonly("output_dim", &Model::output_dim);

  m.def(
      "triplet_loss",
      [](const F64Array& descriptors, const std::vector<int>& labels, double alpha) {
        const auto l = embed::triplet_loss(descriptors_from(descriptors), labels, alpha);
        return py::dict(py::arg("value") = l.value, py::arg("triplets") = l.triplets, py::arg("active") = l.active,
                        py::arg("degenerate") = l.degenerate);
      },
      py::arg("descriptors"), py::arg("labels"), py::arg("alpha") = 0.2);

  m.def(
      "affinity_propagation",
      [](const F64Array& descriptors, double preference, double damping, int max_iter, int convergence_iter) {
        cluster::APConfig cfg{damping, max_iter, convergence_iter};
        cfg.validate();
        const auto r = cluster::affinity_propagation(cluster::build_similarity(descriptors_from(descriptors), preference), cfg);
        return cluster::to_json(r).dump();
      },
      py::arg("descriptors"), py::arg("preference"), py::arg("damping") = 0.5, py::arg("max_iter") = 200,
      py::arg("convergence_iter") = 15);

  m.def(
      "preference_search",
      [](const F64Array& descriptors, const std::vector<int>& seeds, int steps) {
        const auto r = cluster::preference_search(descriptors_from(descriptors), seeds, {}, steps);
        return cluster::to_json(r.result).dump();
      },
      py::arg("descriptors"), py::arg("seeds"), py::arg("steps") = cluster::kPreferenceGridSteps);

  m.def(
      "count_image",
      [](const U8Array& raster, const std::string& record_json, const Model& model, const std::string& config_json,
         const std::vector<std::array<int, 4>>& seeds, bool fallback) {
        count::PipelineConfig pc;
        if (!config_json.empty()) pc = count::eval_config_from_json(Json::parse(config_json)).pipeline;
        std::optional<shapegen::ImageRecord> rec;
        if (!record_json.empty()) rec = shapegen::record_from_json(Json::parse(record_json));
        std::vector<BBox> boxes;
        for (const auto& s : seeds) boxes.push_back(to_box(s));
        const auto report =
            count::run_pipeline(from_numpy(raster), rec ? &*rec : nullptr, model.net(), pc, boxes, fallback);
        return count::to_json(report).dump();
      },
      py::arg("raster"), py::arg("record_json"), py::arg("model"), py::arg("config_json") = "",
      py::arg("seeds") = std::vector<std::array<int, 4>>{}, py::arg("fallback_on_inseparable") = false);

  m.def(
      "mae", [](const std::vector<double>& p, const std::vector<double>& g) { return count::mae(p, g); },
      py::arg("preds"), py::arg("gts"));
  m.def(
      "nmae", [](const std::vector<double>& p, const std::vector<double>& g) { return count::nmae(p, g); },
      py::arg("preds"), py::arg("gts"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"simco"};
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command line with the given arguments; returns the exit status.");
}
