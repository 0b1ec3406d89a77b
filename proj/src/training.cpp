#include "compass/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "compass/errors.hpp"
#include "compass/metrics.hpp"

namespace compass {

namespace {

constexpr double kPeak2 = 255.0 * 255.0;

double get_double(const std::map<std::string, std::string>& kv, const std::string& key,
                  double fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("train config: bad number for " + key + ": " + it->second);
  }
}

int64_t get_int(const std::map<std::string, std::string>& kv, const std::string& key,
                int64_t fallback) {
  return static_cast<int64_t>(get_double(kv, key, static_cast<double>(fallback)));
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

double uniform(torch::Generator& gen) { return torch::rand({1}, gen, torch::kDouble).item<double>(); }

int64_t pick(torch::Generator& gen, int64_t n) {
  return torch::randint(n, {1}, gen, torch::kLong).item<int64_t>();
}

// Clamp to [0, 1] in the forward pass with an identity gradient, so a
// reconstruction that drifts out of range can still be pulled back.
torch::Tensor clamp_unit(const torch::Tensor& x) {
  return x + (x.clamp(0.0, 1.0) - x).detach();
}

std::string adam_key(const std::string& name, const char* what) {
  return "adam/" + name + "/" + what;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::pretrain_bl: return "pretrain-bl";
    case Stage::pretrain_liff: return "pretrain-liff";
    case Stage::pretrain_rc: return "pretrain-rc";
    case Stage::joint: return "joint";
  }
  return "joint";
}

const char* to_string(LatentMode m) { return m == LatentMode::rounded ? "rounded" : "noisy"; }

Stage parse_stage(const std::string& s) {
  for (auto st : {Stage::pretrain_bl, Stage::pretrain_liff, Stage::pretrain_rc, Stage::joint}) {
    if (s == to_string(st)) return st;
  }
  throw std::invalid_argument("unknown stage '" + s +
                              "' (expected pretrain-bl, pretrain-liff, pretrain-rc or joint)");
}

LatentMode parse_latent(const std::string& s) {
  if (s == "rounded") return LatentMode::rounded;
  if (s == "noisy") return LatentMode::noisy;
  throw std::invalid_argument("unknown latent mode '" + s + "' (expected rounded or noisy)");
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {
      {"train.stage", to_string(stage)},
      {"train.lambda", num(lambda)},
      {"train.layers", std::to_string(enhancement_layers)},
      {"train.scale_min", num(sampler.min)},
      {"train.scale_max", num(sampler.max)},
      {"train.crop", std::to_string(crop)},
      {"train.batch", std::to_string(batch)},
      {"train.steps", std::to_string(steps)},
      {"train.lr", num(lr)},
      {"train.warmup", std::to_string(warmup)},
      {"train.clip_norm", num(clip_norm)},
      {"train.plateau_window", std::to_string(plateau_window)},
      {"train.plateau_patience", std::to_string(plateau_patience)},
      {"train.latent", to_string(latent)},
      {"train.seed", std::to_string(seed)},
  };
}

TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  if (auto it = kv.find("train.stage"); it != kv.end()) c.stage = parse_stage(it->second);
  if (auto it = kv.find("train.latent"); it != kv.end()) c.latent = parse_latent(it->second);
  c.lambda = get_double(kv, "train.lambda", c.lambda);
  c.enhancement_layers = static_cast<int>(get_int(kv, "train.layers", c.enhancement_layers));
  c.sampler.min = get_double(kv, "train.scale_min", c.sampler.min);
  c.sampler.max = get_double(kv, "train.scale_max", c.sampler.max);
  c.crop = get_int(kv, "train.crop", c.crop);
  c.batch = get_int(kv, "train.batch", c.batch);
  c.steps = get_int(kv, "train.steps", c.steps);
  c.lr = get_double(kv, "train.lr", c.lr);
  c.warmup = get_int(kv, "train.warmup", c.warmup);
  c.clip_norm = get_double(kv, "train.clip_norm", c.clip_norm);
  c.plateau_window = get_int(kv, "train.plateau_window", c.plateau_window);
  c.plateau_patience = get_int(kv, "train.plateau_patience", c.plateau_patience);
  if (auto it = kv.find("train.seed"); it != kv.end()) c.seed = std::stoull(it->second);
  return c;
}

void TrainConfig::validate() const {
  if (!(lambda > 0)) throw std::invalid_argument("lambda must be positive");
  if (enhancement_layers < 0) throw std::invalid_argument("K must be >= 0");
  if (!(sampler.min >= 1.0) || !(sampler.max >= sampler.min)) {
    throw std::invalid_argument("scale sampler needs 1 <= min <= max");
  }
  if (crop < 1 || batch < 1 || steps < 0) {
    throw std::invalid_argument("crop and batch must be positive, steps nonnegative");
  }
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be positive");
  if (warmup < 0 || clip_norm < 0) throw std::invalid_argument("warmup and clip_norm must be >= 0");
  if (plateau_window < 1 || plateau_patience < 1) {
    throw std::invalid_argument("plateau window and patience must be positive");
  }
  if (stage != Stage::pretrain_bl && enhancement_layers < 1) {
    throw std::invalid_argument(std::string("stage ") + to_string(stage) + " needs K >= 1");
  }
}

// ---------------------------------------------------------------------------

CodecPass codec_pass(MeanScaleCodec& codec, const torch::Tensor& x, LatentMode mode,
                     const std::optional<torch::Generator>& gen) {
  const Dims dims{x.size(-2), x.size(-1)};
  const auto y = codec->analysis(x);
  const auto z = codec->hyper_analysis(y);
  const auto y_noisy = add_uniform_noise(y, gen);
  const auto z_noisy = add_uniform_noise(z, gen);
  const auto params = codec->hyper_synthesis(z_noisy, {y.size(-2), y.size(-1)});
  const auto bits = rate_bits(y_noisy, params.mu, params.sigma) -
                    torch::log2(codec->prior->likelihood(z_noisy)).sum();
  const auto pixels = static_cast<double>(x.size(0) * dims.pixels());
  const auto latent = mode == LatentMode::rounded ? quantize_round(y) : y_noisy;
  return {bits / pixels, codec->synthesis(latent, dims)};
}

LossTerms combined_rd_loss(CompassModel& model, const std::vector<torch::Tensor>& pyramid,
                           double lambda, LatentMode mode,
                           const std::optional<torch::Generator>& gen) {
  if (pyramid.size() < 2) throw std::invalid_argument("combined_rd_loss: need K >= 1");
  torch::Tensor prev;
  {
    torch::NoGradGuard no_grad;
    auto& bl = model->bl;
    const auto x0 = pyramid[0];
    prev = bl->synthesis(quantize_round(bl->analysis(x0)), {x0.size(-2), x0.size(-1)})
               .clamp(0.0, 1.0);
  }
  LossTerms out;
  out.loss = torch::zeros({}, pyramid[0].options());
  for (size_t k = 1; k < pyramid.size(); ++k) {
    const auto& x = pyramid[k];
    const Dims dims{x.size(-2), x.size(-1)};
    const auto pred = model->predict(prev, dims);
    auto pass = codec_pass(model->rc, x - pred, mode, gen);
    const auto recon = clamp_unit(pred + pass.recon);
    const auto dist = kPeak2 * (recon - x).pow(2).mean();
    out.loss = out.loss + pass.rate_bpp + lambda * dist;
    out.rate.push_back(pass.rate_bpp);
    out.distortion.push_back(dist);
    prev = recon;
  }
  return out;
}

LossTerms base_layer_loss(CompassModel& model, const torch::Tensor& x, double lambda,
                          LatentMode mode, const std::optional<torch::Generator>& gen) {
  auto pass = codec_pass(model->bl, x, mode, gen);
  const auto dist = kPeak2 * (clamp_unit(pass.recon) - x).pow(2).mean();
  return {pass.rate_bpp + lambda * dist, {pass.rate_bpp}, {dist}};
}

namespace {

// Prediction-only objective for pretraining the predictor from ground-truth
// lower layers.
LossTerms prediction_loss(CompassModel& model, const std::vector<torch::Tensor>& pyramid) {
  LossTerms out;
  out.loss = torch::zeros({}, pyramid[0].options());
  for (size_t k = 1; k < pyramid.size(); ++k) {
    const auto& x = pyramid[k];
    const auto pred = model->predict(pyramid[k - 1], {x.size(-2), x.size(-1)});
    const auto dist = kPeak2 * (pred - x).pow(2).mean();
    out.loss = out.loss + dist;
    out.rate.push_back(torch::zeros({}, x.options()));
    out.distortion.push_back(dist);
  }
  return out;
}

}  // namespace

std::vector<Dims> sample_layer_dims(Dims top, int enhancement_layers, const ScaleSampler& sampler,
                                    torch::Generator& gen) {
  require_positive(top, "sample_layer_dims");
  std::vector<Dims> dims(static_cast<size_t>(enhancement_layers) + 1);
  dims.back() = top;
  for (int k = enhancement_layers - 1; k >= 0; --k) {
    const double f = sampler.min == sampler.max
                         ? sampler.min
                         : sampler.min + (sampler.max - sampler.min) * uniform(gen);
    const auto& next = dims[k + 1];
    dims[k] = {std::max<int64_t>(1, std::llround(static_cast<double>(next.h) / f)),
               std::max<int64_t>(1, std::llround(static_cast<double>(next.w) / f))};
  }
  return dims;
}

std::vector<torch::Tensor> sample_pyramid(const torch::Tensor& image, const std::vector<Dims>& dims,
                                          torch::Generator& gen) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("sample_pyramid: expected a [3, H, W] image");
  }
  LayerConfig{dims}.validate();
  const auto top = dims.back();
  const auto h = image.size(1), w = image.size(2);
  if (top.h > h || top.w > w) {
    throw std::invalid_argument("sample_pyramid: crop larger than the image");
  }
  const auto i = pick(gen, h - top.h + 1);
  const auto j = pick(gen, w - top.w + 1);
  using torch::indexing::Slice;
  const auto crop = image.index({Slice(), Slice(i, i + top.h), Slice(j, j + top.w)});
  std::vector<torch::Tensor> out;
  for (size_t k = 0; k + 1 < dims.size(); ++k) {
    out.push_back(bicubic_resize(crop, dims[k]).clamp(0.0, 1.0));
  }
  out.push_back(crop);
  return out;
}

uint64_t step_seed(uint64_t seed, int64_t step) {
  // splitmix64 finalizer over the pair
  uint64_t z = seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(step) + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(CompassModel model, TrainConfig cfg) : model_(std::move(model)), cfg_(cfg) {
  cfg_.validate();
  if (cfg_.stage == Stage::pretrain_liff && !model_->liff) {
    throw std::invalid_argument("stage pretrain-liff needs the liff predictor");
  }
  auto wanted = [&](const std::string& name) {
    switch (cfg_.stage) {
      case Stage::pretrain_bl: return name.rfind("bl.", 0) == 0;
      case Stage::pretrain_liff: return name.rfind("liff.", 0) == 0;
      case Stage::pretrain_rc: return name.rfind("rc.", 0) == 0;
      case Stage::joint: return name.rfind("rc.", 0) == 0 || name.rfind("liff.", 0) == 0;
    }
    return false;
  };
  std::vector<torch::Tensor> tensors;
  for (auto& p : model_->named_parameters()) {
    const bool on = wanted(p.key());
    p.value().set_requires_grad(on);
    if (on) {
      params_.emplace_back(p.key(), p.value());
      tensors.push_back(p.value());
    }
  }
  lr_ = cfg_.lr;
  optim_ = std::make_unique<torch::optim::Adam>(tensors, torch::optim::AdamOptions(lr_));
}

std::vector<std::string> Trainer::trainable() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_) out.push_back(name);
  return out;
}

StepLog Trainer::step(const std::vector<torch::Tensor>& dataset) {
  if (dataset.empty()) throw DataError("training needs at least one image");
  int64_t side = cfg_.crop;
  for (const auto& img : dataset) side = std::min({side, img.size(1), img.size(2)});

  auto gen = at::detail::createCPUGenerator(step_seed(cfg_.seed, step_));
  const int layers = cfg_.stage == Stage::pretrain_bl ? 0 : cfg_.enhancement_layers;
  const auto dims = sample_layer_dims({side, side}, layers, cfg_.sampler, gen);
  std::vector<std::vector<torch::Tensor>> per_layer(dims.size());
  for (int64_t b = 0; b < cfg_.batch; ++b) {
    const auto& img = dataset[static_cast<size_t>(pick(gen, static_cast<int64_t>(dataset.size())))];
    auto pyr = sample_pyramid(img, dims, gen);
    for (size_t k = 0; k < dims.size(); ++k) per_layer[k].push_back(pyr[k]);
  }
  std::vector<torch::Tensor> batch;
  for (auto& layer : per_layer) batch.push_back(torch::stack(layer));

  model_->train();
  LossTerms terms;
  switch (cfg_.stage) {
    case Stage::pretrain_bl:
      terms = base_layer_loss(model_, batch[0], cfg_.lambda, cfg_.latent, gen);
      break;
    case Stage::pretrain_liff:
      terms = prediction_loss(model_, batch);
      break;
    default:
      terms = combined_rd_loss(model_, batch, cfg_.lambda, cfg_.latent, gen);
  }
  optim_->zero_grad();
  terms.loss.backward();
  if (cfg_.clip_norm > 0) {
    std::vector<torch::Tensor> tensors;
    for (const auto& [name, t] : params_) tensors.push_back(t);
    torch::nn::utils::clip_grad_norm_(tensors, cfg_.clip_norm);
  }
  const double warm = cfg_.warmup > 0 && step_ < cfg_.warmup
                          ? static_cast<double>(step_ + 1) / static_cast<double>(cfg_.warmup)
                          : 1.0;
  set_lr(lr_ * warm);
  optim_->step();

  StepLog log;
  log.step = step_;
  log.loss = terms.loss.item<double>();
  for (const auto& r : terms.rate) log.rate.push_back(r.item<double>());
  for (const auto& d : terms.distortion) log.distortion.push_back(d.item<double>());
  log.lr = lr_;
  ++step_;
  update_schedule(log.loss);
  return log;
}

void Trainer::set_lr(double lr) {
  for (auto& group : optim_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

void Trainer::update_schedule(double loss) {
  window_sum_ += loss;
  if (++window_count_ < cfg_.plateau_window) return;
  const double avg = window_sum_ / static_cast<double>(window_count_);
  window_sum_ = 0;
  window_count_ = 0;
  if (!have_best_ || avg < best_window_) {
    best_window_ = avg;
    have_best_ = true;
    bad_windows_ = 0;
    return;
  }
  if (++bad_windows_ >= cfg_.plateau_patience) {
    lr_ /= 2;
    bad_windows_ = 0;
  }
}

Checkpoint Trainer::checkpoint() const {
  auto ckpt = model_checkpoint(model_, cfg_.seed, static_cast<uint64_t>(step_));
  for (const auto& [k, v] : cfg_.to_map()) ckpt.config[k] = v;
  ckpt.config["sched.lr"] = num(lr_);
  ckpt.config["sched.window_sum"] = num(window_sum_);
  ckpt.config["sched.window_count"] = std::to_string(window_count_);
  ckpt.config["sched.best"] = num(best_window_);
  ckpt.config["sched.have_best"] = have_best_ ? "1" : "0";
  ckpt.config["sched.bad_windows"] = std::to_string(bad_windows_);
  const auto& state = optim_->state();
  for (const auto& [name, p] : params_) {
    const auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ckpt.tensors.emplace_back(adam_key(name, "exp_avg"), s.exp_avg());
    ckpt.tensors.emplace_back(adam_key(name, "exp_avg_sq"), s.exp_avg_sq());
    ckpt.tensors.emplace_back(adam_key(name, "step"),
                              torch::tensor({static_cast<float>(s.step())}));
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_module_tensors(ckpt, *model_);
  step_ = static_cast<int64_t>(ckpt.step);
  const auto& kv = ckpt.config;
  lr_ = get_double(kv, "sched.lr", cfg_.lr);
  window_sum_ = get_double(kv, "sched.window_sum", 0);
  window_count_ = get_int(kv, "sched.window_count", 0);
  best_window_ = get_double(kv, "sched.best", 0);
  have_best_ = get_int(kv, "sched.have_best", 0) != 0;
  bad_windows_ = get_int(kv, "sched.bad_windows", 0);
  auto& state = optim_->state();
  state.clear();
  for (const auto& [name, p] : params_) {
    if (!ckpt.has(adam_key(name, "step"))) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(static_cast<int64_t>(ckpt.tensor(adam_key(name, "step")).item<float>()));
    s->exp_avg(ckpt.tensor(adam_key(name, "exp_avg")).clone().to(p.dtype()));
    s->exp_avg_sq(ckpt.tensor(adam_key(name, "exp_avg_sq")).clone().to(p.dtype()));
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

// ---------------------------------------------------------------------------

Checkpoint model_checkpoint(const CompassModel& model, uint64_t seed, uint64_t step) {
  Checkpoint ckpt;
  ckpt.seed = seed;
  ckpt.step = step;
  ckpt.config = model->config().to_map();
  add_module_tensors(ckpt, *model);
  return ckpt;
}

void save_model(const CompassModel& model, const std::filesystem::path& path, uint64_t seed,
                uint64_t step) {
  save_checkpoint(model_checkpoint(model, seed, step), path);
}

CompassModel load_model(const Checkpoint& ckpt) {
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_map(ckpt.config);
  } catch (const std::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  CompassModel model(cfg);
  load_module_tensors(ckpt, *model);
  model->eval();
  return model;
}

CompassModel load_model(const std::filesystem::path& path) {
  try {
    return load_model(load_checkpoint(path));
  } catch (const DataError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw DataError(path.string() + ": " + msg);
  }
}

std::string train_log_header(int enhancement_layers) {
  std::string h = "step,loss";
  const int n = std::max(enhancement_layers, 1);
  for (int k = 0; k < n; ++k) h += ",rate" + std::to_string(k + 1);
  for (int k = 0; k < n; ++k) h += ",distortion" + std::to_string(k + 1);
  return h + ",lr";
}

std::string train_log_row(const StepLog& s) {
  std::string row = std::to_string(s.step) + "," + num(s.loss);
  for (double r : s.rate) row += "," + num(r);
  for (double d : s.distortion) row += "," + num(d);
  return row + "," + num(s.lr);
}

}  // namespace compass
