#include "compass/codec.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "compass/errors.hpp"

namespace compass {

namespace F = torch::nn::functional;
using torch::indexing::Slice;
using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

namespace {

struct LowerBoundFn : public torch::autograd::Function<LowerBoundFn> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& x, double bound) {
    ctx->save_for_backward({x});
    ctx->saved_data["bound"] = bound;
    return x.clamp_min(bound);
  }
  static variable_list backward(AutogradContext* ctx, variable_list grads) {
    const auto x = ctx->get_saved_variables()[0];
    const double bound = ctx->saved_data["bound"].toDouble();
    const auto pass = (x >= bound).logical_or(grads[0] < 0);
    return {grads[0] * pass.to(grads[0].dtype()), torch::Tensor()};
  }
};

struct RoundFn : public torch::autograd::Function<RoundFn> {
  static torch::Tensor forward(AutogradContext*, const torch::Tensor& v) {
    return torch::sign(v) * torch::floor(torch::abs(v) + 0.5);
  }
  static variable_list backward(AutogradContext*, variable_list grads) { return {grads[0]}; }
};

torch::Tensor pad_stage(const torch::Tensor& x, const PadStage& stage) {
  if (!stage.pad_h && !stage.pad_w) return x;
  return F::pad(x, F::PadFuncOptions({0, stage.pad_w ? 1 : 0, 0, stage.pad_h ? 1 : 0})
                       .mode(torch::kReplicate));
}

torch::Tensor crop(const torch::Tensor& x, Dims d) {
  return x.index({Slice(), Slice(), Slice(0, d.h), Slice(0, d.w)});
}

Dims spatial(const torch::Tensor& x) { return {x.size(-2), x.size(-1)}; }

void require_shape(const torch::Tensor& x, int64_t channels, Dims d, const char* what) {
  if (x.dim() != 4 || x.size(1) != channels || spatial(x) != d) {
    throw std::invalid_argument(std::string(what) + ": expected [B, " + std::to_string(channels) +
                                ", " + std::to_string(d.h) + ", " + std::to_string(d.w) +
                                "], got " + c10::str(x.sizes()));
  }
}

torch::Tensor normal_cdf(const torch::Tensor& x) { return 0.5 * torch::erfc(x * -M_SQRT1_2); }

// Non-negative reparametrization for GDN parameters: stored as
// sqrt(value + pedestal), read back through a lower bound.
constexpr double kPedestal = 1.0 / (1ull << 36);

torch::Tensor nonneg_store(const torch::Tensor& v) {
  return torch::sqrt(torch::clamp_min(v + kPedestal, kPedestal));
}

torch::Tensor nonneg_read(const torch::Tensor& p, double minimum) {
  const double bound = std::sqrt(minimum + kPedestal);
  const auto b = lower_bound(p, bound);
  return b * b - kPedestal;
}

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2));
}

torch::nn::ConvTranspose2d deconv(int64_t in, int64_t out) {
  return torch::nn::ConvTranspose2d(
      torch::nn::ConvTranspose2dOptions(in, out, 5).stride(2).padding(2).output_padding(1));
}

std::vector<int32_t> to_symbols(const torch::Tensor& v) {
  const auto flat = v.to(torch::kDouble).contiguous().view(-1);
  const auto* p = flat.data_ptr<double>();
  std::vector<int32_t> out(static_cast<size_t>(flat.numel()));
  for (size_t n = 0; n < out.size(); ++n) {
    if (!(std::abs(p[n]) < 1e9)) throw DataError("compress: latent value out of coding range");
    out[n] = static_cast<int32_t>(p[n]);
  }
  return out;
}

torch::Tensor from_symbols(const std::vector<int32_t>& s, int64_t channels, Dims d,
                           torch::Dtype dtype) {
  return torch::tensor(s, torch::kInt32).to(dtype).view({1, channels, d.h, d.w});
}

std::vector<int32_t> channel_indexes(int64_t channels, Dims d) {
  std::vector<int32_t> idx(static_cast<size_t>(channels * d.pixels()));
  for (size_t n = 0; n < idx.size(); ++n) idx[n] = static_cast<int32_t>(n / d.pixels());
  return idx;
}

std::vector<CdfTable> gaussian_tables(const GaussianParams& p, int32_t range) {
  const auto mu = p.mu.to(torch::kDouble).contiguous().view(-1);
  const auto sigma = p.sigma.to(torch::kDouble).contiguous().view(-1);
  const auto* m = mu.data_ptr<double>();
  const auto* s = sigma.data_ptr<double>();
  std::vector<CdfTable> tables;
  tables.reserve(static_cast<size_t>(mu.numel()));
  for (int64_t n = 0; n < mu.numel(); ++n) tables.push_back(build_gaussian_cdf(m[n], s[n], range));
  return tables;
}

}  // namespace

PadPlan pad_plan(Dims dims, int stages) {
  require_positive(dims, "pad_plan");
  if (stages < 1) throw std::invalid_argument("pad_plan: stages must be >= 1");
  PadPlan plan{dims, {}};
  Dims cur = dims;
  for (int s = 0; s < stages; ++s) {
    PadStage stage{cur, cur.h % 2 == 1, cur.w % 2 == 1};
    cur = stage.out();
    plan.stages.push_back(stage);
  }
  return plan;
}

CodecGeometry codec_geometry(Dims input, PaddingMode mode) {
  require_positive(input, "codec_geometry");
  CodecGeometry g;
  g.input = input;
  g.padded_input = input;
  if (mode == PaddingMode::lump) {
    auto up = [](int64_t v) { return (v + kLumpMultiple - 1) / kLumpMultiple * kLumpMultiple; };
    g.padded_input = {up(input.h), up(input.w)};
  }
  g.analysis = pad_plan(g.padded_input, kAnalysisStages);
  g.hyper = pad_plan(g.y(), kHyperStages);
  return g;
}

torch::Tensor lower_bound(const torch::Tensor& x, double bound) {
  return LowerBoundFn::apply(x, bound);
}

torch::Tensor quantize_round(const torch::Tensor& v) { return RoundFn::apply(v); }

torch::Tensor add_uniform_noise(const torch::Tensor& v, std::optional<torch::Generator> gen) {
  return v + (torch::rand(v.sizes(), gen, v.options().requires_grad(false)) - 0.5);
}

torch::Tensor gaussian_likelihood(const torch::Tensor& v, const torch::Tensor& mu,
                                  const torch::Tensor& sigma) {
  // Evaluate on the lower side of the mean, where both CDF values are small.
  const auto dist = torch::abs(v - mu);
  const auto upper = normal_cdf((0.5 - dist) / sigma);
  const auto lower = normal_cdf((-0.5 - dist) / sigma);
  return lower_bound(upper - lower, kLikelihoodMin);
}

torch::Tensor rate_bit_map(const torch::Tensor& v, const torch::Tensor& mu,
                           const torch::Tensor& sigma) {
  return -torch::log2(gaussian_likelihood(v, mu, sigma));
}

torch::Tensor rate_bits(const torch::Tensor& v, const torch::Tensor& mu,
                        const torch::Tensor& sigma) {
  return rate_bit_map(v, mu, sigma).sum();
}

// ---------------------------------------------------------------------------

GdnImpl::GdnImpl(int64_t channels, bool inverse) : inverse_(inverse) {
  beta_ = register_parameter("beta", nonneg_store(torch::ones({channels})));
  gamma_ = register_parameter("gamma", nonneg_store(0.1 * torch::eye(channels)));
}

torch::Tensor GdnImpl::forward(const torch::Tensor& x) {
  const auto c = x.size(1);
  const auto beta = nonneg_read(beta_, 1e-6);
  const auto gamma = nonneg_read(gamma_, 0.0).view({c, c, 1, 1});
  const auto norm = torch::sqrt(F::conv2d(x * x, gamma, F::Conv2dFuncOptions().bias(beta)));
  return inverse_ ? x * norm : x / norm;
}

// ---------------------------------------------------------------------------

FactorizedPriorImpl::FactorizedPriorImpl(int64_t channels) : channels_(channels) {
  const std::vector<int64_t> filters = {1, 3, 3, 3, 1};
  const double init_scale = 10.0;
  const double scale = std::pow(init_scale, 1.0 / static_cast<double>(filters.size() - 1));
  for (size_t i = 0; i + 1 < filters.size(); ++i) {
    const double init = std::log(std::expm1(1.0 / scale / static_cast<double>(filters[i + 1])));
    const auto tag = std::to_string(i);
    matrices_.push_back(register_parameter(
        "matrix" + tag, torch::full({channels, filters[i + 1], filters[i]}, init)));
    biases_.push_back(register_parameter(
        "bias" + tag, torch::rand({channels, filters[i + 1], 1}) - 0.5));
    if (i + 2 < filters.size()) {
      factors_.push_back(
          register_parameter("factor" + tag, torch::zeros({channels, filters[i + 1], 1})));
    }
  }
}

torch::Tensor FactorizedPriorImpl::logits_cumulative(const torch::Tensor& x) {
  auto logits = x;  // [C, 1, L]
  for (size_t i = 0; i < matrices_.size(); ++i) {
    const auto m = F::softplus(matrices_[i].to(x.dtype()));
    logits = torch::matmul(m, logits) + biases_[i].to(x.dtype());
    if (i < factors_.size()) {
      logits = logits + torch::tanh(factors_[i].to(x.dtype())) * torch::tanh(logits);
    }
  }
  return logits;
}

torch::Tensor FactorizedPriorImpl::likelihood(const torch::Tensor& v) {
  if (v.dim() != 4 || v.size(1) != channels_) {
    throw std::invalid_argument("FactorizedPrior: expected [B, " + std::to_string(channels_) +
                                ", H, W]");
  }
  const auto perm = v.permute({1, 0, 2, 3});
  const auto shape = perm.sizes().vec();
  const auto flat = perm.reshape({channels_, 1, -1});
  const auto lower = logits_cumulative(flat - 0.5);
  const auto upper = logits_cumulative(flat + 0.5);
  const auto sign = torch::where(lower + upper > 0, -1.0, 1.0).to(v.dtype()).detach();
  auto p = torch::abs(torch::sigmoid(sign * upper) - torch::sigmoid(sign * lower));
  p = p.reshape(shape).permute({1, 0, 2, 3});
  return lower_bound(p, kLikelihoodMin);
}

std::vector<CdfTable> FactorizedPriorImpl::tables(int32_t range) {
  torch::NoGradGuard no_grad;
  const auto edges = torch::arange(-range, range + 2, torch::kDouble) - 0.5;
  const auto x = edges.view({1, 1, -1}).expand({channels_, 1, edges.size(0)}).contiguous();
  const auto cdf = torch::sigmoid(logits_cumulative(x)).view({channels_, -1}).contiguous();
  std::vector<CdfTable> out;
  std::vector<double> masses(static_cast<size_t>(2 * range + 2));
  for (int64_t c = 0; c < channels_; ++c) {
    const auto* e = cdf[c].data_ptr<double>();
    for (int32_t s = 0; s <= 2 * range; ++s) masses[s] = e[s + 1] - e[s];
    masses.back() = e[0] + (1.0 - e[2 * range + 1]);
    out.push_back(quantize_masses(masses, range));
  }
  return out;
}

// ---------------------------------------------------------------------------

MeanScaleCodecImpl::MeanScaleCodecImpl(const CodecConfig& cfg) : cfg_(cfg) {
  const auto n = cfg.n, m = cfg.m;
  for (int s = 0; s < kAnalysisStages; ++s) {
    const auto tag = std::to_string(s);
    enc_.push_back(register_module("enc" + tag, conv(s == 0 ? 3 : n, n, 5, 2)));
    dec_.push_back(register_module(
        "dec" + tag, deconv(n, s == kAnalysisStages - 1 ? 3 : n)));
    if (s + 1 < kAnalysisStages) {
      enc_gdn_.push_back(register_module("enc_gdn" + tag, Gdn(n, false)));
      dec_igdn_.push_back(register_module("dec_igdn" + tag, Gdn(n, true)));
    }
  }
  h_enc0_ = register_module("h_enc0", conv(n, m, 3, 1));
  h_enc1_ = register_module("h_enc1", conv(m, m, 5, 2));
  h_enc2_ = register_module("h_enc2", conv(m, m, 5, 2));
  h_dec0_ = register_module("h_dec0", deconv(m, n));
  h_dec1_ = register_module("h_dec1", deconv(n, n * 3 / 2));
  h_dec2_ = register_module("h_dec2", conv(n * 3 / 2, 2 * n, 3, 1));
  prior = register_module("prior", FactorizedPrior(m));

  // Start the scale half of the hyper-decoder output around 1 so freshly
  // initialized models do not sit on the sigma floor.
  torch::NoGradGuard no_grad;
  h_dec2_->bias.index({Slice(n, 2 * n)}).fill_(1.0);
}

torch::Tensor MeanScaleCodecImpl::analysis(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 3) {
    throw std::invalid_argument("analysis: expected [B, 3, H, W], got " + c10::str(x.sizes()));
  }
  const auto g = geometry(spatial(x));
  auto h = x;
  if (g.padded_input != g.input) {
    h = F::pad(h, F::PadFuncOptions({0, g.padded_input.w - g.input.w, 0,
                                     g.padded_input.h - g.input.h})
                      .mode(torch::kReplicate));
  }
  for (int s = 0; s < kAnalysisStages; ++s) {
    h = enc_[s](pad_stage(h, g.analysis.stages[s]));
    if (s + 1 < kAnalysisStages) h = enc_gdn_[s](h);
  }
  return h;
}

torch::Tensor MeanScaleCodecImpl::synthesis(const torch::Tensor& y_hat, Dims target) {
  const auto g = geometry(target);
  require_shape(y_hat, cfg_.n, g.y(), "synthesis");
  auto h = y_hat;
  for (int s = 0; s < kAnalysisStages; ++s) {
    const auto& stage = g.analysis.stages[kAnalysisStages - 1 - s];
    h = crop(dec_[s](h), stage.in);
    if (s + 1 < kAnalysisStages) h = dec_igdn_[s](h);
  }
  return crop(h, target);
}

torch::Tensor MeanScaleCodecImpl::hyper_analysis(const torch::Tensor& y) {
  if (y.dim() != 4 || y.size(1) != cfg_.n) {
    throw std::invalid_argument("hyper_analysis: expected [B, " + std::to_string(cfg_.n) +
                                ", H, W], got " + c10::str(y.sizes()));
  }
  const auto plan = pad_plan(spatial(y), kHyperStages);
  auto h = F::leaky_relu(h_enc0_(y));
  h = F::leaky_relu(h_enc1_(pad_stage(h, plan.stages[0])));
  return h_enc2_(pad_stage(h, plan.stages[1]));
}

GaussianParams MeanScaleCodecImpl::hyper_synthesis(const torch::Tensor& z_hat, Dims y_dims) {
  const auto plan = pad_plan(y_dims, kHyperStages);
  require_shape(z_hat, cfg_.m, plan.output(), "hyper_synthesis");
  auto h = F::leaky_relu(crop(h_dec0_(z_hat), plan.stages[1].in));
  h = F::leaky_relu(crop(h_dec1_(h), plan.stages[0].in));
  const auto out = h_dec2_(h);
  const auto n = cfg_.n;
  return {out.index({Slice(), Slice(0, n)}),
          lower_bound(out.index({Slice(), Slice(n, 2 * n)}), kSigmaMin)};
}

// ---------------------------------------------------------------------------

CodedImage compress(MeanScaleCodec& codec, const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  if (x.dim() != 4 || x.size(0) != 1) throw std::invalid_argument("compress: expected batch of 1");
  const auto& cfg = codec->config();
  const auto g = codec->geometry(spatial(x));

  const auto y = codec->analysis(x);
  const auto y_hat = quantize_round(y);
  const auto z_hat = quantize_round(codec->hyper_analysis(y));

  CodedImage out;
  const auto z_symbols = to_symbols(z_hat);
  const auto z_tables = codec->prior->tables(cfg.symbol_range);
  const auto z_index = channel_indexes(cfg.m, g.z());
  out.payload.z = encode_symbols(z_symbols, z_tables, z_index);

  const auto params = codec->hyper_synthesis(z_hat, g.y());
  const auto y_tables = gaussian_tables(params, cfg.symbol_range);
  out.payload.y = encode_symbols(to_symbols(y_hat), y_tables);

  out.recon = codec->synthesis(y_hat, g.input);
  const auto y_bits = rate_bits(y_hat.to(torch::kDouble), params.mu.to(torch::kDouble),
                                params.sigma.to(torch::kDouble));
  const auto z_bits = -torch::log2(codec->prior->likelihood(z_hat.to(torch::kDouble))).sum();
  out.estimated_bits = (y_bits + z_bits).item<double>();
  return out;
}

torch::Tensor decompress(MeanScaleCodec& codec, const LayerPayload& payload, Dims target) {
  torch::NoGradGuard no_grad;
  const auto& cfg = codec->config();
  const auto g = codec->geometry(target);
  const auto dtype = codec->parameters().front().scalar_type();

  const auto z_count = static_cast<size_t>(cfg.m * g.z().pixels());
  const auto z_tables = codec->prior->tables(cfg.symbol_range);
  const auto z_index = channel_indexes(cfg.m, g.z());
  const auto z_hat = from_symbols(decode_symbols(payload.z, z_tables, z_count, z_index), cfg.m,
                                  g.z(), dtype);

  const auto params = codec->hyper_synthesis(z_hat, g.y());
  const auto y_tables = gaussian_tables(params, cfg.symbol_range);
  const auto y_count = static_cast<size_t>(cfg.n * g.y().pixels());
  const auto y_hat = from_symbols(decode_symbols(payload.y, y_tables, y_count), cfg.n, g.y(),
                                  dtype);
  return codec->synthesis(y_hat, target);
}

}  // namespace compass
