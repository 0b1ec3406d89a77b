#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <torch/torch.h>

#include "compass/bitstream.hpp"
#include "compass/coords.hpp"
#include "compass/errors.hpp"
#include "compass/evaluate.hpp"
#include "compass/image_io.hpp"
#include "compass/metrics.hpp"
#include "compass/pipeline.hpp"
#include "compass/training.hpp"

namespace py = pybind11;
using namespace compass;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ModelPtr = std::shared_ptr<CompassModelImpl>;

torch::Tensor to_tensor(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(0) != 3) throw std::invalid_argument("expected an array of shape (3, H, W)");
  return torch::from_blob(const_cast<float*>(a.data()), {3, a.shape(1), a.shape(2)}, torch::kFloat32).clone();
}

FloatArray to_array(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat32).contiguous();
  FloatArray out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * c.numel());
  return out;
}

std::vector<torch::Tensor> to_tensors(const std::vector<FloatArray>& arrays) {
  std::vector<torch::Tensor> out;
  for (const auto& a : arrays) out.push_back(to_tensor(a));
  return out;
}

std::vector<FloatArray> to_arrays(const std::vector<torch::Tensor>& tensors) {
  std::vector<FloatArray> out;
  for (const auto& t : tensors) out.push_back(to_array(t));
  return out;
}

std::span<const uint8_t> view(const py::bytes& b) {
  const std::string_view s(b);
  return {reinterpret_cast<const uint8_t*>(s.data()), s.size()};
}

py::bytes to_bytes(const std::vector<uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

// Config values may be given as numbers or strings.
std::map<std::string, std::string> to_kv(const py::dict& d) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : d) kv[py::str(k)] = py::str(v);
  return kv;
}

py::dict rd_dict(const RDRecord& r) {
  py::dict d;
  d["layer"] = r.layer;
  d["bits"] = r.bits;
  d["acc_bits"] = r.acc_bits;
  d["bpp"] = r.bpp;
  d["mse"] = r.mse;
  d["psnr"] = r.psnr;
  return d;
}

RateCurve to_curve(const std::vector<std::pair<double, double>>& pts) {
  RateCurve c;
  for (auto [bpp, q] : pts) c.points.push_back({bpp, q});
  return c;
}

}  // namespace

PYBIND11_MODULE(_compass, m) {
  m.doc() = "Scalable learned image codec with arbitrary-scale layer prediction";
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DecodeError>(m, "DecodeError", PyExc_ValueError);

  py::class_<CompassModelImpl, ModelPtr>(m, "Model")
      .def(py::init([](const py::dict& config, uint64_t seed) {
             torch::manual_seed(seed);
             return CompassModel(ModelConfig::from_map(to_kv(config))).ptr();
           }),
           py::arg("config") = py::dict(), py::arg("seed") = 0,
           "Randomly initialised model; config uses the checkpoint keys, e.g. {'bl.n': 64}.")
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_model(p).ptr(); }, py::arg("path"))
      .def(
          "save", [](const ModelPtr& self, const std::filesystem::path& p) { save_model(CompassModel(self), p); },
          py::arg("path"))
      .def_property_readonly("config", [](const ModelPtr& self) { return self->config().to_map(); });

  m.def(
      "encode",
      [](const ModelPtr& model, const std::vector<FloatArray>& layers, uint8_t quality) {
        CompassModel cm(model);
        cm->eval();
        EncodeResult res;
        {
          py::gil_scoped_release release;
          res = encode(cm, to_tensors(layers), quality);
        }
        return py::make_tuple(to_bytes(pack(res.stream)), to_arrays(res.recons), res.estimated_bits);
      },
      py::arg("model"), py::arg("layers"), py::arg("quality") = 0,
      "Code layers 0..K; returns (stream bytes, reconstructions, estimated bits per layer).");
  m.def(
      "decode",
      [](const ModelPtr& model, const py::bytes& stream, int up_to) {
        CompassModel cm(model);
        cm->eval();
        return to_arrays(decode(cm, view(stream), up_to));
      },
      py::arg("model"), py::arg("stream"), py::arg("up_to") = -1);
  m.def(
      "extract_prefix", [](const py::bytes& stream, int k) { return to_bytes(extract_prefix(view(stream), k)); },
      py::arg("stream"), py::arg("k"), "Stream holding layers 0..k only.");
  m.def(
      "layer_rd",
      [](const ModelPtr& model, const py::bytes& stream, const std::vector<FloatArray>& originals) {
        CompassModel cm(model);
        cm->eval();
        py::list out;
        for (const auto& r : layer_rd(cm, unpack(view(stream)), to_tensors(originals))) out.append(rd_dict(r));
        return out;
      },
      py::arg("model"), py::arg("stream"), py::arg("originals"));
  m.def(
      "make_pyramid",
      [](const FloatArray& image, const std::vector<double>& scales) {
        return to_arrays(make_pyramid(to_tensor(image), scales));
      },
      py::arg("image"), py::arg("scales"));

  py::class_<Trainer>(m, "Trainer")
      .def(py::init([](const ModelPtr& model, const py::dict& config) {
             auto cfg = TrainConfig::from_map(to_kv(config));
             return std::make_unique<Trainer>(CompassModel(model), cfg);
           }),
           py::arg("model"), py::arg("config") = py::dict(), "config uses the train.* checkpoint keys.")
      .def(
          "step",
          [](Trainer& self, const std::vector<FloatArray>& images) {
            const auto data = to_tensors(images);
            StepLog log;
            {
              py::gil_scoped_release release;
              log = self.step(data);
            }
            py::dict d;
            d["step"] = log.step;
            d["loss"] = log.loss;
            d["rate"] = log.rate;
            d["distortion"] = log.distortion;
            d["lr"] = log.lr;
            return d;
          },
          py::arg("images"))
      .def_property_readonly("steps_done", &Trainer::steps_done)
      .def_property_readonly("lr", &Trainer::lr);

  m.def(
      "bd_rate",
      [](const std::vector<std::pair<double, double>>& anchor, const std::vector<std::pair<double, double>>& test) {
        return bd_rate(to_curve(anchor), to_curve(test));
      },
      py::arg("anchor"), py::arg("test"), "BD-rate in percent from (bpp, psnr) points.");
  m.def(
      "psnr", [](const FloatArray& a, const FloatArray& b) { return psnr(to_tensor(a), to_tensor(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "load_image", [](const std::filesystem::path& p) { return to_array(load_image(p)); }, py::arg("path"));
  m.def(
      "save_image", [](const FloatArray& a, const std::filesystem::path& p) { save_image(to_tensor(a), p); },
      py::arg("image"), py::arg("path"));

  m.def(
      "nearest_correspondence",
      [](std::pair<int64_t, int64_t> prev, std::pair<int64_t, int64_t> cur) {
        const auto c = nearest_correspondence({prev.first, prev.second}, {cur.first, cur.second});
        return py::make_tuple(c.rows, c.cols);
      },
      py::arg("prev"), py::arg("cur"), "Per-axis nearest source indices (rows, cols).");
  m.def(
      "local_grid",
      [](std::pair<int64_t, int64_t> prev, std::pair<int64_t, int64_t> cur) {
        const auto g = local_grid({prev.first, prev.second}, {cur.first, cur.second});
        py::array_t<double> out({static_cast<py::ssize_t>(cur.first * cur.second), py::ssize_t{2}});
        std::copy(g.values.begin(), g.values.end(), out.mutable_data());
        return out;
      },
      py::arg("prev"), py::arg("cur"));
  m.def(
      "scale_token",
      [](std::pair<int64_t, int64_t> prev, std::pair<int64_t, int64_t> cur) {
        const auto t = scale_token({prev.first, prev.second}, {cur.first, cur.second});
        return py::make_tuple(t.values[0], t.values[1]);
      },
      py::arg("prev"), py::arg("cur"));
  m.def(
      "variant_name",
      [](const std::string& predictor, const std::string& padding, bool noisy) {
        return variant_name(parse_predictor(predictor), parse_padding(padding), noisy);
      },
      py::arg("predictor") = "liff", py::arg("padding") = "layerwise", py::arg("noisy") = false);
}
