// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// if any selected criterion fails. `--only 1,6` restricts the run.

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "compass/coords.hpp"
#include "compass/entropy.hpp"
#include "compass/evaluate.hpp"
#include "compass/image_io.hpp"
#include "compass/metrics.hpp"
#include "compass/training.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace compass;
using compass::testing::gradcheck;
using compass::testing::named_params;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criteria 1-3 share one corpus of random images and scale chains.

struct CorpusItem {
  std::vector<torch::Tensor> layers;
  std::vector<double> scales;
};

std::vector<CorpusItem> make_corpus(int count, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> side(17, 97);
  std::uniform_real_distribution<double> factor(1.1, 2.0);
  std::vector<CorpusItem> out;
  for (int i = 0; i < count; ++i) {
    const int k = i % 4;
    const Dims top{side(rng), side(rng)};
    CorpusItem item;
    double s = 1.0;
    for (int j = 0; j < k; ++j) item.scales.push_back(s *= factor(rng));
    // Smooth content plus noise, so latents carry both structure and detail.
    auto gen = at::detail::createCPUGenerator(rng());
    const auto coarse = torch::rand({3, 4, 4}, gen);
    const auto img = (bicubic_resize(coarse, top) + 0.1 * torch::randn({3, top.h, top.w}, gen)).clamp(0, 1);
    item.layers = make_pyramid(img, item.scales);
    out.push_back(std::move(item));
  }
  return out;
}

ModelConfig corpus_model(Predictor p, PaddingMode padding) {
  ModelConfig c;  // full-size codecs and predictor
  c.bl.padding = c.rc.padding = padding;
  c.predictor = p;
  return c;
}

struct CorpusResults {
  bool ran = false;
  int images = 0;
  int layers = 0;
  int exact_fail = 0;
  int prefix_fail = 0;
  int prefix_checks = 0;
  int rate_fail = 0;
  double worst_low = 1e9;   ///< min of actual / estimate
  double worst_high = 0;    ///< max of actual / (1.02 * estimate + 256)
  double payload_bits = 0;
  double pixels = 0;
  double seconds = 0;
  std::string first_problem;
};

CorpusResults& corpus_results() {
  static CorpusResults r;
  if (r.ran) return r;
  r.ran = true;
  const auto t0 = std::chrono::steady_clock::now();
  torch::manual_seed(2024);
  CompassModel models[2] = {CompassModel(corpus_model(Predictor::liff, PaddingMode::layerwise)),
                            CompassModel(corpus_model(Predictor::bicubic, PaddingMode::lump))};
  for (auto& m : models) m->eval();
  const auto corpus = make_corpus(56, 99);
  for (size_t i = 0; i < corpus.size(); ++i) {
    auto& model = models[i % 2];
    const auto& item = corpus[i];
    const auto enc = encode(model, item.layers);
    const auto bytes = pack(enc.stream);
    const auto full = decode(model, std::span<const uint8_t>(bytes));
    ++r.images;
    for (size_t k = 0; k < full.size(); ++k) {
      ++r.layers;
      if (!torch::equal(full[k], enc.recons[k])) {
        ++r.exact_fail;
        if (r.first_problem.empty()) r.first_problem = fmt("image %zu layer %zu differs", i, k);
      }
      const auto& payload = enc.stream.layers[k];
      const double actual = 8.0 * static_cast<double>(payload.z.size() + payload.y.size());
      const double est = enc.estimated_bits[k];
      r.payload_bits += actual;
      r.pixels += static_cast<double>(full[k].size(1) * full[k].size(2));
      r.worst_low = std::min(r.worst_low, actual / est);
      r.worst_high = std::max(r.worst_high, actual / (1.02 * est + 256));
      if (actual < est || actual > 1.02 * est + 256) ++r.rate_fail;
    }
    for (int k = 0; k + 1 < static_cast<int>(full.size()); ++k) {
      const auto prefix = extract_prefix(bytes, k);
      const auto part = decode(model, std::span<const uint8_t>(prefix));
      ++r.prefix_checks;
      bool same = part.size() == static_cast<size_t>(k + 1);
      for (int j = 0; same && j <= k; ++j) same = torch::equal(part[j], full[j]);
      if (!same) ++r.prefix_fail;
    }
  }
  r.seconds = seconds_since(t0);
  return r;
}

Outcome criterion_round_trip() {
  const auto& r = corpus_results();
  return {r.exact_fail == 0 && r.images >= 50 && r.seconds < 300,
          fmt("%d images, %d layers, %d mismatches, %.0f s (limit 300 s)%s", r.images, r.layers, r.exact_fail,
              r.seconds, r.first_problem.empty() ? "" : (": " + r.first_problem).c_str())};
}

Outcome criterion_prefix() {
  const auto& r = corpus_results();
  return {r.prefix_fail == 0 && r.prefix_checks > 0,
          fmt("%d proper prefixes decoded, %d mismatches", r.prefix_checks, r.prefix_fail)};
}

Outcome criterion_rate_fidelity() {
  const auto& r = corpus_results();
  return {r.rate_fail == 0,
          fmt("%d of %d layers outside [estimate, 1.02 estimate + 256]; min actual/estimate %.4f, "
              "max actual/bound %.4f, mean payload %.3f bpp",
              r.rate_fail, r.layers, r.worst_low, r.worst_high, r.payload_bits / r.pixels)};
}

// ---------------------------------------------------------------------------

void generic_point(MeanScaleCodec& codec) {
  torch::NoGradGuard g;
  for (auto& p : codec->named_parameters()) {
    if (p.key().find("gdn") != std::string::npos) p.value().add_(torch::rand_like(p.value()) * 0.2);
    if (p.key() == "h_dec2.bias") p.value().slice(0, 8, 16).fill_(4.0);
  }
}

Outcome criterion_gradients() {
  CodecConfig cc;
  cc.n = cc.m = 8;
  LiffConfig lc;
  lc.features = 4;
  lc.blocks = 1;
  lc.convs_per_block = 2;
  lc.growth = 4;
  lc.mlp_hidden = 8;
  lc.mlp_layers = 1;
  std::vector<std::pair<std::string, double>> worst;

  {
    torch::manual_seed(6);
    Liff liff(lc);
    liff->to(torch::kDouble);
    const auto img = torch::rand({1, 3, 5, 6}, torch::kDouble).requires_grad_(true);
    const auto target = torch::rand({1, 3, 7, 9}, torch::kDouble);
    auto inputs = named_params(*liff);
    inputs.emplace_back("image", img);
    worst.emplace_back("liff", gradcheck([&] { return (liff->predict(img, {7, 9}) - target).pow(2); }, inputs, 4)
                                   .worst_rel);
  }
  {
    torch::manual_seed(4);
    MeanScaleCodec codec(cc);
    codec->to(torch::kDouble);
    generic_point(codec);
    const auto x = torch::rand({1, 3, 19, 23}, torch::kDouble).requires_grad_(true);
    const auto target = torch::rand({1, 3, 19, 23}, torch::kDouble);
    std::vector<std::pair<std::string, torch::Tensor>> inputs;
    for (auto& [name, t] : named_params(*codec))
      if (name.rfind("enc", 0) == 0 || name.rfind("dec", 0) == 0) inputs.emplace_back(name, t);
    inputs.emplace_back("x", x);
    worst.emplace_back("analysis/synthesis",
                       gradcheck([&] { return (codec->synthesis(codec->analysis(x), {19, 23}) - target).pow(2); },
                                 inputs, 3, 1e-4)
                           .worst_rel);
  }
  {
    torch::manual_seed(5);
    MeanScaleCodec codec(cc);
    codec->to(torch::kDouble);
    generic_point(codec);
    const auto y = (torch::randn({1, 8, 5, 6}, torch::kDouble) * 2).requires_grad_(true);
    std::vector<std::pair<std::string, torch::Tensor>> inputs;
    for (auto& [name, t] : named_params(*codec))
      if (name.rfind("h_", 0) == 0 || name.rfind("prior", 0) == 0) inputs.emplace_back(name, t);
    inputs.emplace_back("y", y);
    worst.emplace_back("hyper path", gradcheck(
                                         [&] {
                                           const auto z = codec->hyper_analysis(y);
                                           const auto p = codec->hyper_synthesis(z, {5, 6});
                                           const auto zb = -torch::log2(codec->prior->likelihood(z));
                                           return torch::cat({rate_bit_map(y, p.mu, p.sigma).flatten(),
                                                              zb.flatten()});
                                         },
                                         inputs, 3)
                                         .worst_rel);
  }
  {
    torch::manual_seed(7);
    const auto mu = torch::randn({40}, torch::kDouble).requires_grad_(true);
    const auto sigma = (torch::rand({40}, torch::kDouble) * 3 + 0.2).requires_grad_(true);
    const auto v = (mu.detach() + torch::randn({40}, torch::kDouble) * sigma.detach() * 1.5).requires_grad_(true);
    worst.emplace_back("rate_bits", gradcheck([&] { return rate_bit_map(v, mu, sigma); },
                                              {{"v", v}, {"mu", mu}, {"sigma", sigma}}, 40)
                                        .worst_rel);
  }
  bool ok = true;
  std::string detail = "worst relative error:";
  for (const auto& [name, rel] : worst) {
    ok = ok && rel < 1e-4;
    detail += fmt(" %s %.2e", name.c_str(), rel);
  }
  return {ok, detail + " (limit 1e-4)"};
}

// ---------------------------------------------------------------------------

Outcome criterion_coords() {
  int64_t checked = 0, bad = 0;
  for (int64_t ph = 1; ph <= 8; ++ph)
    for (int64_t pw = 1; pw <= 8; ++pw)
      for (int64_t ch = 1; ch <= 8; ++ch)
        for (int64_t cw = 1; cw <= 8; ++cw) {
          const Dims prev{ph, pw}, cur{ch, cw};
          const auto corr = nearest_correspondence(prev, cur);
          const auto grid = local_grid(prev, cur);
          const auto token = scale_token(prev, cur);
          for (int64_t i = 0; i < ch; ++i)
            for (int64_t j = 0; j < cw; ++j) {
              const int64_t a = compass::testing::exact_nearest(i, ch, ph);
              const int64_t b = compass::testing::exact_nearest(j, cw, pw);
              const auto n = static_cast<size_t>(2 * (i * cw + j));
              const long double gy = (2.0L * i + 1) / ch - (2.0L * a + 1) / ph;
              const long double gx = (2.0L * j + 1) / cw - (2.0L * b + 1) / pw;
              ++checked;
              if (corr.rows[i] != a || corr.cols[j] != b ||
                  std::fabs(static_cast<long double>(grid.values[n]) - gy) > 1e-15L ||
                  std::fabs(static_cast<long double>(grid.values[n + 1]) - gx) > 1e-15L ||
                  token.values[n] != 2.0 * ph / ch || token.values[n + 1] != 2.0 * pw / cw) {
                ++bad;
              }
            }
        }
  return {bad == 0, fmt("%lld target pixels over all dim pairs up to 8x8, %lld mismatches",
                        static_cast<long long>(checked), static_cast<long long>(bad))};
}

// ---------------------------------------------------------------------------

ModelConfig smoke_model() {
  ModelConfig c;
  c.bl.n = c.rc.n = 64;
  c.bl.m = c.rc.m = 96;
  c.liff.features = 16;
  c.liff.blocks = 1;
  c.liff.convs_per_block = 3;
  c.liff.growth = 16;
  c.liff.mlp_hidden = 64;
  c.liff.mlp_layers = 2;
  return c;
}

Outcome criterion_overfit(const std::string& data_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto img = load_image(data_dir + "/astronaut.png");
  using torch::indexing::Slice;
  const auto top = img.index({Slice(), Slice(40, 168), Slice(64, 192)}).contiguous();
  const auto low = bicubic_resize(top, {64, 64}).clamp(0, 1);
  const std::vector<torch::Tensor> pyramid = {low.unsqueeze(0), top.unsqueeze(0)};

  torch::manual_seed(0);
  CompassModel model(smoke_model());
  auto loss_now = [&] {
    torch::NoGradGuard g;
    return combined_rd_loss(model, pyramid, 0.01, LatentMode::rounded, at::detail::createCPUGenerator(1))
        .loss.item<double>();
  };
  const double before = loss_now();

  TrainConfig tc;
  tc.crop = 128;
  tc.batch = 1;
  tc.sampler = {2.0, 2.0};
  tc.lr = 3e-3;
  tc.clip_norm = 1.0;
  tc.warmup = 10;
  tc.plateau_window = 1000000;
  Trainer tr(model, tc);
  for (int s = 0; s < 200; ++s) tr.step({top});
  const double after = loss_now();

  model->eval();
  const auto enc = encode(model, {low, top});
  const auto recons = decode(model, pack(enc.stream));
  const double q = psnr(recons[1], top);
  const double secs = seconds_since(t0);
  return {after <= 0.5 * before && q > 28.0 && secs < 600,
          fmt("L %.3f -> %.3f (ratio %.3f, limit 0.5), final-layer PSNR %.2f dB (limit 28), %.0f s (limit 600 s)",
              before, after, after / before, q, secs)};
}

// ---------------------------------------------------------------------------

Outcome criterion_ablation(const std::string& data_dir);

// ---------------------------------------------------------------------------

RateCurve curve(std::vector<std::pair<double, double>> pts) {
  RateCurve c;
  for (auto [b, p] : pts) c.points.push_back({b, p});
  return c;
}

Outcome criterion_bd_rate() {
  const auto a = curve({{0.1, 29.0}, {0.2, 31.5}, {0.4, 34.0}, {0.8, 36.2}});
  auto doubled = a;
  for (auto& p : doubled.points) p.bpp *= 2;
  const double same = bd_rate(a, a);
  const double twice = bd_rate(a, doubled);
  const std::vector<std::pair<RateCurve, RateCurve>> hand = {
      {a, curve({{0.09, 29.4}, {0.17, 31.9}, {0.35, 34.3}, {0.7, 36.9}})},
      {curve({{0.25, 30.2}, {0.5, 32.9}, {1.0, 35.8}, {2.0, 38.1}}),
       curve({{0.3, 30.0}, {0.6, 32.4}, {1.1, 35.0}, {2.2, 37.6}})},
      {curve({{0.05, 27.0}, {0.11, 28.9}, {0.24, 31.2}, {0.51, 33.8}, {1.02, 36.5}}),
       curve({{0.06, 27.8}, {0.13, 29.5}, {0.22, 31.0}, {0.48, 33.9}})},
  };
  double worst = 0;
  for (const auto& [x, y] : hand) worst = std::max(worst, std::fabs(bd_rate(x, y) - compass::testing::trapezoid_bd(x, y)));
  return {same == 0.0 && std::fabs(twice - 100.0) < 1e-9 && worst < 0.01,
          fmt("identical %.3g%%, doubled rate %.9g%%, worst oracle gap %.2e (limit 0.01)", same, twice, worst)};
}

// ---------------------------------------------------------------------------

Outcome criterion_entropy_coder() {
  const std::vector<std::pair<double, double>> params = {{0.0, 0.3}, {0.4, 1.0}, {-2.3, 4.0}, {7.1, 16.0}};
  std::vector<CdfTable> tables;
  std::vector<std::discrete_distribution<int>> draw;
  std::vector<double> entropy;
  for (const auto& [mu, sigma] : params) {
    tables.push_back(build_gaussian_cdf(mu, sigma, kDefaultSymbolRange));
    const auto& t = tables.back();
    // In-range slots only; the escape slot carries raw bits beyond the model.
    std::vector<double> w;
    for (int s = 0; s < t.escape_slot(); ++s) w.push_back(t.mass(s));
    double total = 0, h = 0;
    for (double x : w) total += x;
    for (double x : w) h -= x / total * std::log2(x / total);
    draw.emplace_back(w.begin(), w.end());
    entropy.push_back(h);
  }
  constexpr size_t n = 1000000;
  std::mt19937_64 rng(77);
  std::vector<int32_t> symbols(n), indexes(n);
  double shannon = 0;
  for (size_t i = 0; i < n; ++i) {
    const int t = static_cast<int>(i % tables.size());
    indexes[i] = t;
    symbols[i] = draw[t](rng) - tables[t].range;
    shannon += entropy[t];
  }
  const auto bytes = encode_symbols(symbols, tables, indexes);
  const bool round_trip = decode_symbols(bytes, tables, n, indexes) == symbols;
  const double bits = 8.0 * static_cast<double>(bytes.size());
  const double gap = (bits - shannon) / shannon;
  return {round_trip && std::fabs(gap) <= 0.02,
          fmt("%zu symbols, %.0f coded bits vs %.0f entropy bits (%+.3f%%, limit 2%%)", n, bits, shannon, 100 * gap)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Criterion 7 trains two small models per rate point, one per predictor,
// from one shared base layer and identical seeds and step budgets.

namespace {

ModelConfig ablation_model(Predictor p, double lambda) {
  ModelConfig c;
  c.bl.n = c.rc.n = 32;
  c.bl.m = c.rc.m = 48;
  c.liff.features = 8;
  c.liff.blocks = 1;
  c.liff.convs_per_block = 2;
  c.liff.growth = 8;
  c.liff.mlp_hidden = 32;
  c.liff.mlp_layers = 2;
  c.predictor = p;
  c.lambda = lambda;
  return c;
}

TrainConfig ablation_train(Stage stage, double lambda, int64_t crop) {
  TrainConfig tc;
  tc.stage = stage;
  tc.lambda = lambda;
  tc.crop = crop;
  tc.batch = 4;
  tc.lr = 2e-3;
  tc.clip_norm = 1.0;
  tc.warmup = 20;
  tc.plateau_window = 1000000;  // constant rate after warm-up
  return tc;
}

}  // namespace

namespace {

Outcome criterion_ablation(const std::string& data_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<torch::Tensor> data;
  for (const auto& p : list_images(data_dir)) data.push_back(load_image(p));
  constexpr int kSteps = 2000;
  constexpr int kBaseSteps = 500;
  const std::vector<double> lambdas = {0.0025, 0.005, 0.01, 0.02};
  const std::vector<double> scales = {2.0};

  RateCurve curves[2];
  double loss_at_default[2] = {0, 0};
  for (double lambda : lambdas) {
    // base layer shared by both predictors at this rate point
    torch::manual_seed(0);
    CompassModel base(ablation_model(Predictor::liff, lambda));
    Trainer bt(base, ablation_train(Stage::pretrain_bl, lambda, 32));
    for (int s = 0; s < kBaseSteps; ++s) bt.step(data);
    const auto base_ckpt = model_checkpoint(base);

    for (int v = 0; v < 2; ++v) {
      const auto pred = v == 0 ? Predictor::liff : Predictor::bicubic;
      torch::manual_seed(1);
      CompassModel m(ablation_model(pred, lambda));
      {
        torch::NoGradGuard g;
        for (auto& p : m->named_parameters())
          if (p.key().rfind("bl.", 0) == 0) p.value().copy_(base_ckpt.tensor(p.key()));
      }
      Trainer tr(m, ablation_train(Stage::joint, lambda, 64));
      for (int s = 0; s < kSteps; ++s) tr.step(data);
      m->eval();

      double loss = 0, bpp = 0, q = 0;
      for (size_t i = 0; i < data.size(); ++i) {
        const auto pyr = make_pyramid(data[i], scales);
        {
          torch::NoGradGuard g;
          std::vector<torch::Tensor> batch;
          for (const auto& t : pyr) batch.push_back(t.unsqueeze(0));
          loss += combined_rd_loss(m, batch, lambda, LatentMode::rounded, at::detail::createCPUGenerator(i))
                      .loss.item<double>();
        }
        const auto enc = encode(m, pyr);
        const auto rd = layer_rd(m, enc.stream, pyr);
        bpp += rd.back().bpp;
        q += rd.back().psnr;
      }
      const double n = static_cast<double>(data.size());
      curves[v].points.push_back({bpp / n, q / n});
      if (lambda == 0.01) loss_at_default[v] = loss / n;
    }
  }
  for (auto& c : curves)
    std::sort(c.points.begin(), c.points.end(), [](const auto& a, const auto& b) { return a.bpp < b.bpp; });
  double bd = NAN;
  std::string bd_note;
  try {
    bd = bd_rate(curves[1], curves[0]);  // LIFF against the bicubic anchor
  } catch (const std::invalid_argument& e) {
    bd_note = std::string(" (") + e.what() + ")";
  }
  const double secs = seconds_since(t0);
  return {loss_at_default[0] < loss_at_default[1] && std::isfinite(bd) && bd <= 0.0,
          fmt("%zu images, %d steps; combined loss at lambda 0.01: liff %.4f vs bicubic %.4f; "
              "BD-rate of liff vs bicubic %.2f%%%s; %.0f s",
              data.size(), kSteps, loss_at_default[0], loss_at_default[1], bd, bd_note.c_str(), secs)};
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  std::string data_dir = COMPASS_DESK_DIR;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream in(argv[++i]);
      std::string item;
      while (std::getline(in, item, ',')) only.insert(std::stoi(item));
    } else if (arg == "--data" && i + 1 < argc) {
      data_dir = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--data DIR]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"bit-exact round trip", criterion_round_trip},
      {"prefix decodability", criterion_prefix},
      {"rate-model fidelity", criterion_rate_fidelity},
      {"gradient correctness", criterion_gradients},
      {"coordinate oracles", criterion_coords},
      {"training smoke test", [&] { return criterion_overfit(data_dir); }},
      {"ablation direction", [&] { return criterion_ablation(data_dir); }},
      {"bd-rate oracle", criterion_bd_rate},
      {"entropy coder efficiency", criterion_entropy_coder},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
