#include "compass/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace compass {

double mse(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) {
    throw std::invalid_argument("mse: shape mismatch " + c10::str(a.sizes()) + " vs " +
                                c10::str(b.sizes()));
  }
  const auto d = a.to(torch::kDouble) - b.to(torch::kDouble);
  return (d * d).mean().item<double>();
}

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  const double e = mse(a, b);
  if (e <= 0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(e));
}

void RateCurve::validate() const {
  if (points.size() < 4) throw std::invalid_argument("rate curve needs at least 4 points");
  for (size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].bpp > 0)) throw std::invalid_argument("rate curve: bpp must be positive");
    if (i > 0 && !(points[i].bpp > points[i - 1].bpp)) {
      throw std::invalid_argument("rate curve: bpp must be strictly increasing");
    }
  }
}

std::vector<double> fit_log_rate(const RateCurve& curve) {
  curve.validate();
  const auto n = static_cast<Eigen::Index>(curve.points.size());
  Eigen::MatrixXd vander(n, 4);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = curve.points[i].psnr;
    vander.row(i) << 1.0, p, p * p, p * p * p;
    rhs(i) = std::log2(curve.points[i].bpp);
  }
  const Eigen::VectorXd c = vander.colPivHouseholderQr().solve(rhs);
  return {c(0), c(1), c(2), c(3)};
}

namespace {

double integral(const std::vector<double>& c, double lo, double hi) {
  auto prim = [&](double x) {
    return c[0] * x + c[1] * x * x / 2 + c[2] * x * x * x / 3 + c[3] * x * x * x * x / 4;
  };
  return prim(hi) - prim(lo);
}

std::pair<double, double> psnr_range(const RateCurve& c) {
  const auto [lo, hi] = std::minmax_element(
      c.points.begin(), c.points.end(),
      [](const RatePoint& a, const RatePoint& b) { return a.psnr < b.psnr; });
  return {lo->psnr, hi->psnr};
}

}  // namespace

double bd_rate(const RateCurve& anchor, const RateCurve& test) {
  const auto fa = fit_log_rate(anchor);
  const auto ft = fit_log_rate(test);
  const auto [alo, ahi] = psnr_range(anchor);
  const auto [tlo, thi] = psnr_range(test);
  const double lo = std::max(alo, tlo);
  const double hi = std::min(ahi, thi);
  if (!(hi > lo)) throw std::invalid_argument("bd_rate: PSNR ranges do not overlap");
  const double delta = (integral(ft, lo, hi) - integral(fa, lo, hi)) / (hi - lo);
  return (std::exp2(delta) - 1.0) * 100.0;
}

double cubic_kernel(double x) {
  constexpr double a = kBicubicA;
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

torch::Tensor bicubic_matrix(int64_t src, int64_t dst) {
  if (src < 1 || dst < 1) throw std::invalid_argument("bicubic_matrix: sizes must be positive");
  auto m = torch::zeros({dst, src}, torch::kDouble);
  auto acc = m.accessor<double, 2>();
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (int64_t i = 0; i < dst; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const auto x0 = static_cast<int64_t>(std::floor(x));
    const double t = x - static_cast<double>(x0);
    for (int64_t k = -1; k <= 2; ++k) {
      const auto idx = std::clamp<int64_t>(x0 + k, 0, src - 1);
      acc[i][idx] += cubic_kernel(t - static_cast<double>(k));
    }
  }
  return m;
}

torch::Tensor bicubic_resize(const torch::Tensor& image, Dims target) {
  require_positive(target, "bicubic_resize");
  if (image.dim() < 2) throw std::invalid_argument("bicubic_resize: expected [..., H, W]");
  const auto h = image.size(-2), w = image.size(-1);
  if (h == target.h && w == target.w) return image;
  const auto rows = bicubic_matrix(h, target.h).to(image.dtype());
  const auto cols = bicubic_matrix(w, target.w).to(image.dtype());
  return torch::matmul(torch::matmul(rows, image), cols.t());
}

}  // namespace compass
