#pragma once

#include <torch/torch.h>

#include <cmath>
#include <optional>
#include <vector>

#include "compass/bitstream.hpp"
#include "compass/coords.hpp"
#include "compass/entropy.hpp"

namespace compass {

enum class PaddingMode {
  layerwise,  ///< replicate-pad odd sizes by one before every stride-2 stage
  lump,       ///< pad once to a multiple of 64 before the encoder
};

inline constexpr int kAnalysisStages = 4;
inline constexpr int kHyperStages = 2;
inline constexpr int64_t kLumpMultiple = 64;
inline constexpr double kSigmaMin = 1e-6;
inline const double kLikelihoodMin = std::ldexp(1.0, -30);

struct CodecConfig {
  int64_t n = 128;  ///< channels of y (encoder output) and encoder intermediates
  int64_t m = 192;  ///< channels of z (hyper-encoder output)
  PaddingMode padding = PaddingMode::layerwise;
  int32_t symbol_range = kDefaultSymbolRange;
};

struct PadStage {
  Dims in;
  bool pad_h = false;
  bool pad_w = false;

  Dims padded() const { return {in.h + (pad_h ? 1 : 0), in.w + (pad_w ? 1 : 0)}; }
  Dims out() const { return {padded().h / 2, padded().w / 2}; }
};

struct PadPlan {
  Dims input;
  std::vector<PadStage> stages;

  Dims output() const { return stages.empty() ? input : stages.back().out(); }
};

/// At each stage: pad bottom/right by one on every odd axis, then halve.
PadPlan pad_plan(Dims dims, int stages);

/// Spatial bookkeeping of one codec invocation, derived from the image size
/// alone so the decoder needs no side information.
struct CodecGeometry {
  Dims input;
  Dims padded_input;  ///< equals input for layerwise padding
  PadPlan analysis;
  PadPlan hyper;

  Dims y() const { return analysis.output(); }
  Dims z() const { return hyper.output(); }
};

CodecGeometry codec_geometry(Dims input, PaddingMode mode);

/// max(x, bound) whose gradient still flows where it would raise x.
torch::Tensor lower_bound(const torch::Tensor& x, double bound);

/// Rounds half away from zero. The gradient passes through unchanged.
torch::Tensor quantize_round(const torch::Tensor& v);

/// v + Uniform(-0.5, 0.5).
torch::Tensor add_uniform_noise(const torch::Tensor& v,
                                std::optional<torch::Generator> gen = std::nullopt);

/// Probability of the unit bin around v under N(mu, sigma), floored at 2^-30.
torch::Tensor gaussian_likelihood(const torch::Tensor& v, const torch::Tensor& mu,
                                  const torch::Tensor& sigma);

/// Per-element -log2 likelihood.
torch::Tensor rate_bit_map(const torch::Tensor& v, const torch::Tensor& mu,
                           const torch::Tensor& sigma);
torch::Tensor rate_bits(const torch::Tensor& v, const torch::Tensor& mu,
                        const torch::Tensor& sigma);

/// Generalized divisive normalization; inverse=true gives IGDN.
class GdnImpl : public torch::nn::Module {
 public:
  GdnImpl(int64_t channels, bool inverse);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool inverse_;
  torch::Tensor beta_;
  torch::Tensor gamma_;
};
TORCH_MODULE(Gdn);

/// Learned per-channel non-parametric density for z.
class FactorizedPriorImpl : public torch::nn::Module {
 public:
  explicit FactorizedPriorImpl(int64_t channels);

  /// Bin probabilities for v of shape [B, C, H, W], floored at 2^-30.
  torch::Tensor likelihood(const torch::Tensor& v);
  /// One 16-bit table per channel over [-range, range] plus escape.
  std::vector<CdfTable> tables(int32_t range);

 private:
  torch::Tensor logits_cumulative(const torch::Tensor& x);

  int64_t channels_;
  std::vector<torch::Tensor> matrices_;
  std::vector<torch::Tensor> biases_;
  std::vector<torch::Tensor> factors_;
};
TORCH_MODULE(FactorizedPrior);

struct GaussianParams {
  torch::Tensor mu;
  torch::Tensor sigma;
};

/// Mean-scale hyperprior autoencoder with the padding scheme of CodecConfig.
/// Inputs and outputs are [B, C, H, W].
class MeanScaleCodecImpl : public torch::nn::Module {
 public:
  explicit MeanScaleCodecImpl(const CodecConfig& cfg);

  const CodecConfig& config() const { return cfg_; }
  CodecGeometry geometry(Dims input) const { return codec_geometry(input, cfg_.padding); }

  torch::Tensor analysis(const torch::Tensor& x);
  torch::Tensor synthesis(const torch::Tensor& y_hat, Dims target);
  torch::Tensor hyper_analysis(const torch::Tensor& y);
  GaussianParams hyper_synthesis(const torch::Tensor& z_hat, Dims y_dims);

  FactorizedPrior prior{nullptr};

 private:
  CodecConfig cfg_;
  std::vector<torch::nn::Conv2d> enc_;
  std::vector<Gdn> enc_gdn_;
  std::vector<torch::nn::ConvTranspose2d> dec_;
  std::vector<Gdn> dec_igdn_;
  torch::nn::Conv2d h_enc0_{nullptr}, h_enc1_{nullptr}, h_enc2_{nullptr};
  torch::nn::ConvTranspose2d h_dec0_{nullptr}, h_dec1_{nullptr};
  torch::nn::Conv2d h_dec2_{nullptr};
};
TORCH_MODULE(MeanScaleCodec);

/// Result of entropy-coding one image (or residual) with a codec.
struct CodedImage {
  LayerPayload payload;
  torch::Tensor recon;          ///< [1, 3, H, W], decoder-identical
  double estimated_bits = 0.0;  ///< rate_bits on the rounded latents, y and z
};

/// Round and entropy-code x of shape [1, 3, H, W].
CodedImage compress(MeanScaleCodec& codec, const torch::Tensor& x);

/// Reconstruct an image of size `target` from a payload written by compress().
torch::Tensor decompress(MeanScaleCodec& codec, const LayerPayload& payload, Dims target);

}  // namespace compass
