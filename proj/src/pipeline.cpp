#include "compass/pipeline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "compass/errors.hpp"
#include "compass/metrics.hpp"

namespace compass {

namespace {

std::string get(const std::map<std::string, std::string>& kv, const std::string& key,
                const std::string& fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

int64_t get_int(const std::map<std::string, std::string>& kv, const std::string& key,
                int64_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw DataError("model config: bad integer for " + key + ": " + it->second);
  }
}

void put_codec(std::map<std::string, std::string>& kv, const std::string& prefix,
               const CodecConfig& c) {
  kv[prefix + ".n"] = std::to_string(c.n);
  kv[prefix + ".m"] = std::to_string(c.m);
  kv[prefix + ".padding"] = to_string(c.padding);
  kv[prefix + ".symbol_range"] = std::to_string(c.symbol_range);
}

CodecConfig read_codec(const std::map<std::string, std::string>& kv, const std::string& prefix) {
  CodecConfig c;
  c.n = get_int(kv, prefix + ".n", c.n);
  c.m = get_int(kv, prefix + ".m", c.m);
  c.padding = parse_padding(get(kv, prefix + ".padding", to_string(c.padding)));
  c.symbol_range = static_cast<int32_t>(get_int(kv, prefix + ".symbol_range", c.symbol_range));
  return c;
}

Dims spatial(const torch::Tensor& x) { return {x.size(-2), x.size(-1)}; }

torch::Tensor batch1(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("expected a [3, H, W] image, got " + c10::str(image.sizes()));
  }
  return image.unsqueeze(0).to(torch::kFloat);
}

}  // namespace

const char* to_string(Predictor p) { return p == Predictor::liff ? "liff" : "bicubic"; }
const char* to_string(PaddingMode p) { return p == PaddingMode::layerwise ? "layerwise" : "lump"; }

Predictor parse_predictor(const std::string& s) {
  if (s == "liff") return Predictor::liff;
  if (s == "bicubic") return Predictor::bicubic;
  throw std::invalid_argument("unknown predictor '" + s + "' (expected liff or bicubic)");
}

PaddingMode parse_padding(const std::string& s) {
  if (s == "layerwise") return PaddingMode::layerwise;
  if (s == "lump") return PaddingMode::lump;
  throw std::invalid_argument("unknown padding '" + s + "' (expected layerwise or lump)");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> kv;
  put_codec(kv, "bl", bl);
  put_codec(kv, "rc", rc);
  kv["liff.features"] = std::to_string(liff.features);
  kv["liff.blocks"] = std::to_string(liff.blocks);
  kv["liff.convs_per_block"] = std::to_string(liff.convs_per_block);
  kv["liff.growth"] = std::to_string(liff.growth);
  kv["liff.mlp_hidden"] = std::to_string(liff.mlp_hidden);
  kv["liff.mlp_layers"] = std::to_string(liff.mlp_layers);
  kv["liff.pixel_grid"] = liff.pixel_grid ? "1" : "0";
  kv["model.predictor"] = to_string(predictor);
  kv["model.lambda"] = std::to_string(lambda);
  return kv;
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.bl = read_codec(kv, "bl");
  c.rc = read_codec(kv, "rc");
  c.liff.features = get_int(kv, "liff.features", c.liff.features);
  c.liff.blocks = get_int(kv, "liff.blocks", c.liff.blocks);
  c.liff.convs_per_block = get_int(kv, "liff.convs_per_block", c.liff.convs_per_block);
  c.liff.growth = get_int(kv, "liff.growth", c.liff.growth);
  c.liff.mlp_hidden = get_int(kv, "liff.mlp_hidden", c.liff.mlp_hidden);
  c.liff.mlp_layers = get_int(kv, "liff.mlp_layers", c.liff.mlp_layers);
  c.liff.pixel_grid = get_int(kv, "liff.pixel_grid", 1) != 0;
  c.predictor = parse_predictor(get(kv, "model.predictor", "liff"));
  c.lambda = std::stod(get(kv, "model.lambda", "0.01"));
  return c;
}

void LayerConfig::validate() const {
  if (dims.empty()) throw std::invalid_argument("layer config: no layers");
  for (size_t k = 0; k < dims.size(); ++k) {
    require_positive(dims[k], "layer config");
    if (k > 0 && (dims[k].h < dims[k - 1].h || dims[k].w < dims[k - 1].w)) {
      throw std::invalid_argument("layer config: layer " + std::to_string(k) +
                                  " is smaller than layer " + std::to_string(k - 1));
    }
  }
}

LayerConfig LayerConfig::from_scales(Dims largest, std::span<const double> scales) {
  require_positive(largest, "from_scales");
  for (size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] >= 1.0) || (i > 0 && !(scales[i] > scales[i - 1]))) {
      throw std::invalid_argument("scales must be >= 1 and strictly increasing");
    }
  }
  LayerConfig cfg;
  if (scales.empty()) {
    cfg.dims = {largest};
    return cfg;
  }
  auto scaled = [](int64_t v, double f) {
    return std::max<int64_t>(1, std::llround(static_cast<double>(v) * f));
  };
  const Dims base{scaled(largest.h, 1.0 / scales.back()), scaled(largest.w, 1.0 / scales.back())};
  cfg.dims.push_back(base);
  for (size_t k = 0; k + 1 < scales.size(); ++k) {
    cfg.dims.push_back({std::min(largest.h, scaled(base.h, scales[k])),
                        std::min(largest.w, scaled(base.w, scales[k]))});
  }
  cfg.dims.push_back(largest);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

CompassModelImpl::CompassModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  bl = register_module("bl", MeanScaleCodec(cfg.bl));
  rc = register_module("rc", MeanScaleCodec(cfg.rc));
  if (cfg.predictor == Predictor::liff) liff = register_module("liff", Liff(cfg.liff));
}

torch::Tensor CompassModelImpl::predict(const torch::Tensor& prev_recon, Dims target) {
  if (cfg_.predictor == Predictor::bicubic) return bicubic_resize(prev_recon, target);
  return liff->predict(prev_recon, target);
}

EncodeResult encode(CompassModel& model, const std::vector<torch::Tensor>& images,
                    uint8_t quality) {
  torch::NoGradGuard no_grad;
  LayerConfig layers;
  for (const auto& img : images) {
    if (img.dim() != 3 || img.size(0) != 3) {
      throw std::invalid_argument("encode: expected [3, H, W] images");
    }
    layers.dims.push_back(spatial(img));
  }
  layers.validate();
  for (const auto& img : images) {
    if (img.min().item<double>() < 0.0 || img.max().item<double>() > 1.0) {
      throw std::invalid_argument("encode: pixel values must lie in [0, 1]");
    }
  }

  EncodeResult out;
  out.stream.quality = quality;
  out.stream.dims = layers.dims;
  torch::Tensor prev;
  for (size_t k = 0; k < images.size(); ++k) {
    const auto x = batch1(images[k]);
    torch::Tensor recon;
    CodedImage coded;
    if (k == 0) {
      coded = compress(model->bl, x);
      recon = coded.recon.clamp(0.0, 1.0);
    } else {
      const auto pred = model->predict(prev, layers.dims[k]);
      coded = compress(model->rc, x - pred);
      recon = (pred + coded.recon).clamp(0.0, 1.0);
    }
    out.stream.layers.push_back(std::move(coded.payload));
    out.estimated_bits.push_back(coded.estimated_bits);
    out.recons.push_back(recon.squeeze(0));
    prev = recon;
  }
  return out;
}

std::vector<torch::Tensor> decode(CompassModel& model, const ScalableBitstream& stream,
                                  int up_to) {
  torch::NoGradGuard no_grad;
  const int last = up_to < 0 ? stream.layer_count() - 1 : up_to;
  if (last >= stream.layer_count()) {
    throw DecodeError("decode: layer " + std::to_string(last) + " requested but stream has " +
                      std::to_string(stream.layer_count()));
  }
  LayerConfig{stream.dims}.validate();
  std::vector<torch::Tensor> recons;
  torch::Tensor prev;
  for (int k = 0; k <= last; ++k) {
    const auto& dims = stream.dims[k];
    torch::Tensor recon;
    if (k == 0) {
      recon = decompress(model->bl, stream.layers[k], dims).clamp(0.0, 1.0);
    } else {
      const auto pred = model->predict(prev, dims);
      recon = (pred + decompress(model->rc, stream.layers[k], dims)).clamp(0.0, 1.0);
    }
    recons.push_back(recon.squeeze(0));
    prev = recon;
  }
  return recons;
}

std::vector<torch::Tensor> decode(CompassModel& model, std::span<const uint8_t> bytes,
                                  int up_to) {
  const auto stream = unpack(bytes, up_to < 0 ? std::nullopt : std::optional<int>(up_to));
  return decode(model, stream, up_to);
}

std::vector<RDRecord> layer_rd(const ScalableBitstream& stream,
                               const std::vector<torch::Tensor>& recons,
                               const std::vector<torch::Tensor>& originals) {
  if (recons.size() > originals.size() || recons.size() > stream.layers.size()) {
    throw std::invalid_argument("layer_rd: more reconstructions than layers or originals");
  }
  std::vector<RDRecord> out;
  double acc = 0;
  for (size_t k = 0; k < recons.size(); ++k) {
    RDRecord r;
    r.layer = static_cast<int>(k);
    r.bits = 8.0 * static_cast<double>(layer_cost_bytes(stream, r.layer));
    acc += r.bits;
    r.acc_bits = acc;
    r.bpp = acc / static_cast<double>(stream.dims[k].pixels());
    r.mse = mse(recons[k], originals[k]);
    r.psnr = psnr(recons[k], originals[k]);
    out.push_back(r);
  }
  return out;
}

std::vector<RDRecord> layer_rd(CompassModel& model, const ScalableBitstream& stream,
                               const std::vector<torch::Tensor>& originals) {
  const auto recons = decode(model, stream, std::min<int>(stream.layer_count(),
                                                          static_cast<int>(originals.size())) - 1);
  return layer_rd(stream, recons, originals);
}

}  // namespace compass
