#pragma once

#include <torch/torch.h>

#include <vector>

#include "compass/coords.hpp"

namespace compass {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kBicubicA = -0.5;

/// PSNR in dB for signals on [0, 1]; identical inputs give kPsnrCap.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
double mse(const torch::Tensor& a, const torch::Tensor& b);

struct RatePoint {
  double bpp = 0;
  double psnr = 0;
};

/// Rate-PSNR points of one codec, sorted by strictly increasing bpp.
struct RateCurve {
  std::vector<RatePoint> points;

  /// Throws std::invalid_argument unless there are >= 4 points with positive,
  /// strictly increasing bpp.
  void validate() const;
};

/// Coefficients c0..c3 of the least-squares cubic log2(bpp) ~ poly(psnr).
std::vector<double> fit_log_rate(const RateCurve& curve);

/// Bjontegaard delta rate of `test` against `anchor` in percent; negative
/// means `test` needs fewer bits for the same PSNR. Throws
/// std::invalid_argument when the PSNR ranges do not overlap.
double bd_rate(const RateCurve& anchor, const RateCurve& test);

/// Catmull-Rom kernel with a = -0.5.
double cubic_kernel(double x);

/// [dst, src] matrix of separable bicubic weights with edge replication and
/// half-pixel-aligned sampling.
torch::Tensor bicubic_matrix(int64_t src, int64_t dst);

/// Bicubic resize of [..., H, W] to `target`. Differentiable.
torch::Tensor bicubic_resize(const torch::Tensor& image, Dims target);

}  // namespace compass
