#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace compass::testing {

struct GradCheckResult {
  double worst_rel = 0;
  std::string worst_where;
  int checked = 0;
};

// `terms` returns a tensor whose sum is the loss. Differences are taken term
// by term before summing, which keeps the round-off of a large total out of
// the numeric derivative.
//
// Central finite differences on up to `samples` random entries of every tensor in
// `inputs`, compared with autograd. All tensors must be double. The relative
// error of an entry is taken against the larger of its own magnitude and
// 1% of the largest gradient in the same tensor, so entries that are
// numerically zero do not turn round-off into failures.
inline GradCheckResult gradcheck(const std::function<torch::Tensor()>& terms,
                                 const std::vector<std::pair<std::string, torch::Tensor>>& inputs,
                                 int samples = 6, double h = 1e-5, uint64_t seed = 11) {
  for (const auto& [name, t] : inputs) {
    if (t.grad().defined()) t.mutable_grad().zero_();
  }
  terms().sum().backward();
  std::mt19937_64 rng(seed);
  GradCheckResult res;
  torch::NoGradGuard no_grad;
  for (const auto& [name, t] : inputs) {
    const auto flat = t.view(-1);
    const auto grad = t.grad().defined() ? t.grad().view(-1) : torch::zeros_like(flat);
    const int64_t n = flat.numel();
    const double scale = grad.abs().max().item<double>();
    const int64_t count = std::min<int64_t>(n, samples);
    for (int64_t s = 0; s < count; ++s) {
      const int64_t i = n <= samples ? s : static_cast<int64_t>(rng() % n);
      const double orig = flat[i].item<double>();
      auto at = [&](double offset) {
        flat[i] = orig + offset;
        return terms().to(torch::kDouble);
      };
      // Fourth-order central stencil: a larger step keeps round-off small.
      const double numeric =
          ((at(-2 * h) - at(2 * h)) + 8 * (at(h) - at(-h))).sum().item<double>() / (12 * h);
      flat[i] = orig;
      const double analytic = grad[i].item<double>();
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-2 * scale, 1e-9});
      ++res.checked;
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        char buf[160];
        std::snprintf(buf, sizeof buf, "[%lld] analytic=%.6e numeric=%.6e scale=%.3e",
                      static_cast<long long>(i), analytic, numeric, scale);
        res.worst_where = name + buf;
      }
    }
  }
  return res;
}

inline std::vector<std::pair<std::string, torch::Tensor>> named_params(torch::nn::Module& m) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : m.named_parameters()) out.emplace_back(p.key(), p.value());
  return out;
}

}  // namespace compass::testing
