#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "compass/bitstream.hpp"
#include "compass/codec.hpp"
#include "compass/coords.hpp"
#include "compass/liff.hpp"

namespace compass {

enum class Predictor { liff, bicubic };

struct ModelConfig {
  CodecConfig bl;
  CodecConfig rc;
  LiffConfig liff;
  Predictor predictor = Predictor::liff;
  double lambda = 0.01;  ///< RD trade-off the model was trained for

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

const char* to_string(Predictor p);
const char* to_string(PaddingMode p);
Predictor parse_predictor(const std::string& s);
PaddingMode parse_padding(const std::string& s);

/// Sizes of layers 0..K, nondecreasing on both axes.
struct LayerConfig {
  std::vector<Dims> dims;

  int enhancement_layers() const { return static_cast<int>(dims.size()) - 1; }
  /// Throws std::invalid_argument if empty, nonpositive or decreasing.
  void validate() const;

  /// Layer sizes for an image of size `largest` taken as layer K and
  /// strictly increasing scale factors relative to the base layer; the last
  /// factor belongs to layer K. The base layer is largest / scales.back(),
  /// layer k is base * scales[k-1], all rounded to nearest and capped at
  /// `largest`.
  static LayerConfig from_scales(Dims largest, std::span<const double> scales);
};

/// Base-layer codec, one shared predictor and one shared residual codec.
class CompassModelImpl : public torch::nn::Module {
 public:
  explicit CompassModelImpl(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Prediction of layer size `target` from the previous reconstruction,
  /// [B, 3, h, w] -> [B, 3, H, W], unclamped.
  torch::Tensor predict(const torch::Tensor& prev_recon, Dims target);

  MeanScaleCodec bl{nullptr};
  MeanScaleCodec rc{nullptr};
  Liff liff{nullptr};  ///< null for the bicubic predictor

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(CompassModel);

struct EncodeResult {
  ScalableBitstream stream;
  std::vector<torch::Tensor> recons;   ///< [3, H, W] per layer
  std::vector<double> estimated_bits;  ///< rate model on rounded latents, per layer
};

/// Code images[0..K] (each [3, H, W] on [0, 1], sizes forming a valid
/// LayerConfig). The returned reconstructions equal what decode() yields.
EncodeResult encode(CompassModel& model, const std::vector<torch::Tensor>& images,
                    uint8_t quality = 0);

/// Reconstructions of layers 0..up_to; up_to < 0 decodes every layer.
std::vector<torch::Tensor> decode(CompassModel& model, const ScalableBitstream& stream,
                                  int up_to = -1);
std::vector<torch::Tensor> decode(CompassModel& model, std::span<const uint8_t> bytes,
                                  int up_to = -1);

struct RDRecord {
  int layer = 0;
  double bits = 0;      ///< bytes layer k adds to the stream, times 8
  double acc_bits = 0;  ///< bits of layers 0..k, equal to the prefix size
  double bpp = 0;       ///< acc_bits over the pixel count of layer k
  double mse = 0;
  double psnr = 0;
};

std::vector<RDRecord> layer_rd(const ScalableBitstream& stream,
                               const std::vector<torch::Tensor>& recons,
                               const std::vector<torch::Tensor>& originals);
/// Decodes `stream` with `model` and scores it against `originals`.
std::vector<RDRecord> layer_rd(CompassModel& model, const ScalableBitstream& stream,
                               const std::vector<torch::Tensor>& originals);

}  // namespace compass
