#include "compass/liff.hpp"

#include <stdexcept>
#include <string>

namespace compass {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).padding(kernel / 2));
}

torch::Tensor pairs_tensor(const std::vector<double>& values, const torch::TensorOptions& opts) {
  auto t = torch::tensor(values, torch::kDouble).view({-1, 2});
  return t.to(opts.has_dtype() ? opts.dtype().toScalarType() : torch::kFloat);
}

}  // namespace

torch::Tensor local_grid_tensor(Dims prev, Dims cur, const torch::TensorOptions& opts) {
  return pairs_tensor(local_grid(prev, cur).values, opts);
}

torch::Tensor scale_token_tensor(Dims prev, Dims cur, const torch::TensorOptions& opts) {
  return pairs_tensor(scale_token(prev, cur).values, opts);
}

torch::Tensor unfold_features(const torch::Tensor& features) {
  if (features.dim() != 4) throw std::invalid_argument("unfold_features: expected [B, C, H, W]");
  const auto b = features.size(0), c = features.size(1);
  const auto h = features.size(2), w = features.size(3);
  return F::unfold(features, F::UnfoldFuncOptions({3, 3}).padding(1)).view({b, c * 9, h, w});
}

torch::Tensor upsample_nearest(const torch::Tensor& features, Dims target) {
  const Dims src{features.size(-2), features.size(-1)};
  const auto corr = nearest_correspondence(src, target);
  const auto rows = torch::tensor(corr.rows, torch::kLong);
  const auto cols = torch::tensor(corr.cols, torch::kLong);
  return features.index_select(-2, rows).index_select(-1, cols);
}

torch::Tensor flatten_pixels(const torch::Tensor& features) {
  return features.flatten(2).transpose(1, 2);
}

// ---------------------------------------------------------------------------

RdbImpl::RdbImpl(int64_t channels, int64_t growth, int64_t convs) {
  for (int64_t i = 0; i < convs; ++i) {
    convs_.push_back(
        register_module("conv" + std::to_string(i), conv(channels + i * growth, growth, 3)));
  }
  fuse_ = register_module("fuse", conv(channels + convs * growth, channels, 1));
}

torch::Tensor RdbImpl::forward(const torch::Tensor& x) {
  auto dense = x;
  for (auto& c : convs_) dense = torch::cat({dense, F::relu(c(dense))}, 1);
  return fuse_(dense) + x;
}

FeatureExtractorImpl::FeatureExtractorImpl(const LiffConfig& cfg) {
  const auto c = cfg.features;
  shallow0_ = register_module("shallow0", conv(3, c, 3));
  shallow1_ = register_module("shallow1", conv(c, c, 3));
  for (int64_t i = 0; i < cfg.blocks; ++i) {
    blocks_.push_back(
        register_module("rdb" + std::to_string(i), Rdb(c, cfg.growth, cfg.convs_per_block)));
  }
  fuse0_ = register_module("fuse0", conv(cfg.blocks * c, c, 1));
  fuse1_ = register_module("fuse1", conv(c, c, 3));
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw std::invalid_argument("extract_features: expected [B, 3, H, W], got " +
                                c10::str(image.sizes()));
  }
  const auto f0 = shallow0_(image);
  auto x = shallow1_(f0);
  std::vector<torch::Tensor> outs;
  for (auto& block : blocks_) {
    x = block(x);
    outs.push_back(x);
  }
  return fuse1_(fuse0_(torch::cat(outs, 1))) + f0;
}

FilterMlpImpl::FilterMlpImpl(int64_t in, int64_t hidden, int64_t layers, int64_t out) {
  int64_t width = in;
  for (int64_t i = 0; i < layers; ++i) {
    layers_.push_back(
        register_module("fc" + std::to_string(i), torch::nn::Linear(width, hidden)));
    width = hidden;
  }
  layers_.push_back(register_module("out", torch::nn::Linear(width, out)));
}

torch::Tensor FilterMlpImpl::forward(torch::Tensor x) {
  for (size_t i = 0; i + 1 < layers_.size(); ++i) x = F::relu(layers_[i](x));
  return layers_.back()(x);
}

torch::Tensor generate_filters(const torch::Tensor& features, const torch::Tensor& grid,
                               const torch::Tensor& token, FilterMlp& mlp) {
  if (features.dim() != 3 || grid.dim() != 2 || token.dim() != 2 ||
      features.size(1) != grid.size(0) || grid.size(0) != token.size(0)) {
    throw std::invalid_argument("generate_filters: batch mismatch between features " +
                                c10::str(features.sizes()) + ", grid " + c10::str(grid.sizes()) +
                                " and token " + c10::str(token.sizes()));
  }
  const auto b = features.size(0), n = features.size(1), c = features.size(2);
  const auto coords = torch::cat({grid, token}, 1).to(features.dtype()).expand({b, n, 4});
  return mlp(torch::cat({features, coords}, 2)).view({b, n, c, 3});
}

torch::Tensor pixelwise_predict(const torch::Tensor& features, const torch::Tensor& filters,
                                Dims target) {
  if (features.dim() != 3 || filters.dim() != 4 || filters.size(3) != 3 ||
      features.size(0) != filters.size(0) || features.size(1) != filters.size(1) ||
      features.size(2) != filters.size(2) || features.size(1) != target.pixels()) {
    throw std::invalid_argument("pixelwise_predict: dimension mismatch between features " +
                                c10::str(features.sizes()) + " and filters " +
                                c10::str(filters.sizes()));
  }
  const auto rgb = torch::matmul(features.unsqueeze(2), filters).squeeze(2);  // [B, N, 3]
  return rgb.view({features.size(0), target.h, target.w, 3}).permute({0, 3, 1, 2});
}

// ---------------------------------------------------------------------------

LiffImpl::LiffImpl(const LiffConfig& cfg) : cfg_(cfg) {
  extractor = register_module("extractor", FeatureExtractor(cfg));
  mlp = register_module(
      "mlp", FilterMlp(cfg.unfolded() + 4, cfg.mlp_hidden, cfg.mlp_layers, cfg.unfolded() * 3));
}

torch::Tensor LiffImpl::extract_features(const torch::Tensor& image) { return extractor(image); }

torch::Tensor LiffImpl::predict(const torch::Tensor& prev_recon, Dims target) {
  require_positive(target, "predict");
  const Dims src{prev_recon.size(-2), prev_recon.size(-1)};
  const auto opts = prev_recon.options();
  const auto features =
      flatten_pixels(upsample_nearest(unfold_features(extract_features(prev_recon)), target));
  auto grid = local_grid_tensor(src, target, opts);
  if (cfg_.pixel_grid) {
    grid = grid * torch::tensor({static_cast<double>(src.h), static_cast<double>(src.w)}, opts);
  }
  const auto filters = generate_filters(features, grid, scale_token_tensor(src, target, opts), mlp);
  return pixelwise_predict(features, filters, target);
}

}  // namespace compass
