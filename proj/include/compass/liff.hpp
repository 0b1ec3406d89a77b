#pragma once

#include <torch/torch.h>

#include <vector>

#include "compass/coords.hpp"

namespace compass {

/// Shape of the inter-layer predictor. Defaults are the full-size model.
struct LiffConfig {
  int64_t features = 64;        ///< RDN output channels (before unfolding)
  int64_t blocks = 4;           ///< residual dense blocks
  int64_t convs_per_block = 4;  ///< conv layers inside each block
  int64_t growth = 32;          ///< growth rate of each block
  int64_t mlp_hidden = 256;
  int64_t mlp_layers = 5;  ///< hidden layers of the filter MLP
  /// Feed the local grid to the MLP in units of source pixels (the offset
  /// times the source size, as LIIF does) instead of raw normalized offsets.
  /// The raw offsets shrink as 1/size, so a predictor trained on crops would
  /// see different inputs on full images.
  bool pixel_grid = true;

  int64_t unfolded() const { return features * 9; }
};

/// Normalized offsets to the nearest source pixel as a [H*W, 2] tensor.
torch::Tensor local_grid_tensor(Dims prev, Dims cur, const torch::TensorOptions& opts = {});
/// Scale token as a [H*W, 2] tensor.
torch::Tensor scale_token_tensor(Dims prev, Dims cur, const torch::TensorOptions& opts = {});

/// [B, C, H, W] -> [B, 9C, H, W]. Output channel c*9 + k holds neighbor k of
/// channel c, neighbors in row-major order of the 3x3 window; outside pixels
/// read as zero.
torch::Tensor unfold_features(const torch::Tensor& features);

/// Nearest-neighbor resampling of [B, C, h, w] to `target` using the same
/// correspondence as the local grid.
torch::Tensor upsample_nearest(const torch::Tensor& features, Dims target);

/// [B, C, H, W] -> [B, H*W, C] with pixel n = i*W + j.
torch::Tensor flatten_pixels(const torch::Tensor& features);

class RdbImpl : public torch::nn::Module {
 public:
  RdbImpl(int64_t channels, int64_t growth, int64_t convs);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::Conv2d fuse_{nullptr};
};
TORCH_MODULE(Rdb);

/// RDN-style extractor: shallow convs, residual dense blocks, global feature
/// fusion and a global residual. Spatial size is preserved.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(const LiffConfig& cfg);
  torch::Tensor forward(const torch::Tensor& image);

 private:
  torch::nn::Conv2d shallow0_{nullptr}, shallow1_{nullptr};
  std::vector<Rdb> blocks_;
  torch::nn::Conv2d fuse0_{nullptr}, fuse1_{nullptr};
};
TORCH_MODULE(FeatureExtractor);

/// Filter generation MLP: ReLU hidden layers, linear output.
class FilterMlpImpl : public torch::nn::Module {
 public:
  FilterMlpImpl(int64_t in, int64_t hidden, int64_t layers, int64_t out);
  torch::Tensor forward(torch::Tensor x);

 private:
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(FilterMlp);

/// Per-pixel C x 3 filters from [features | local grid | scale token].
/// features: [B, N, C]; grid, token: [N, 2]. Returns [B, N, C, 3].
torch::Tensor generate_filters(const torch::Tensor& features, const torch::Tensor& grid,
                               const torch::Tensor& token, FilterMlp& mlp);

/// Per-pixel product of a 1 x C feature row with its C x 3 filter, reshaped
/// to [B, 3, H, W]. No clamping.
torch::Tensor pixelwise_predict(const torch::Tensor& features, const torch::Tensor& filters,
                                Dims target);

class LiffImpl : public torch::nn::Module {
 public:
  explicit LiffImpl(const LiffConfig& cfg);

  const LiffConfig& config() const { return cfg_; }

  /// Features of [B, 3, h, w] before unfolding.
  torch::Tensor extract_features(const torch::Tensor& image);
  /// Prediction of size `target` from the previous-layer reconstruction.
  torch::Tensor predict(const torch::Tensor& prev_recon, Dims target);

  FeatureExtractor extractor{nullptr};
  FilterMlp mlp{nullptr};

 private:
  LiffConfig cfg_;
};
TORCH_MODULE(Liff);

}  // namespace compass
