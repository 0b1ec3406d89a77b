#include "cli.hpp"

#include <CLI11.hpp>
#include <torch/torch.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "compass/errors.hpp"
#include "compass/evaluate.hpp"
#include "compass/image_io.hpp"
#include "compass/training.hpp"

namespace compass::cli {
namespace fs = std::filesystem;

namespace {

/// A bad flag value or flag combination; exits with kExitUsage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw UsageError("--scales: bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--scales: expected a list such as 2.0,3.2");
  for (size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] >= 1.0) || (i > 0 && !(out[i] > out[i - 1]))) {
      throw UsageError("--scales must be >= 1 and strictly increasing, got '" + text + "'");
    }
  }
  return out;
}

std::vector<int> parse_indices(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size() || out.back() < 0) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--indices: bad index '" + item + "'");
    }
  }
  return out;
}

std::vector<torch::Tensor> load_dataset(const fs::path& dir, std::ostream& err) {
  std::vector<torch::Tensor> out;
  for (const auto& p : list_images(dir)) {
    try {
      out.push_back(load_image(p));
    } catch (const DataError& e) {
      err << "warning: skipping " << p.string() << ": " << e.what() << "\n";
    }
  }
  if (out.empty()) throw DataError("no readable images in " + dir.string());
  return out;
}

// Common flags selecting an ablation variant.
struct Ablation {
  std::string predictor = "liff";
  std::string padding = "layerwise";
  std::string latent = "rounded";

  void add(CLI::App* app) {
    app->add_option("--predictor", predictor, "inter-layer predictor")
        ->check(CLI::IsMember({"liff", "bicubic"}));
    app->add_option("--padding", padding, "codec padding scheme")
        ->check(CLI::IsMember({"layerwise", "lump"}));
    app->add_option("--latent", latent, "latent used by the training distortion")
        ->check(CLI::IsMember({"rounded", "noisy"}));
  }
  std::string variant() const {
    return variant_name(parse_predictor(predictor), parse_padding(padding), latent == "noisy");
  }
};

// Where encode/decode find their model.
struct ModelSource {
  std::string model;
  std::string model_dir;
  int quality = 0;
  Ablation ablation;

  void add(CLI::App* app) {
    app->add_option("--model", model, "model checkpoint (overrides the registry)");
    app->add_option("--model-dir", model_dir, "registry root (default $COMPASS_MODEL_DIR)");
    app->add_option("--quality", quality, "lambda index in the registry")->check(CLI::Range(0, 255));
    ablation.add(app);
  }
  fs::path resolve(std::optional<int> quality_override = std::nullopt) const {
    if (!model.empty()) return model;
    const auto reg = ModelRegistry::locate(model_dir.empty() ? std::nullopt
                                                             : std::optional<fs::path>(model_dir));
    return reg.path(ablation.variant(), quality_override.value_or(quality));
  }
};

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, init, resume, log;
  std::string stage = "joint";
  Ablation ablation;
  double lambda = 0.01;
  int layers = 1;
  double scale_min = 1.2, scale_max = 2.0;
  int64_t crop = 128, batch = 8, steps = 1000, save_every = 100;
  double lr = 1e-4, clip = 0.0;
  int64_t warmup = 0;
  int64_t n = 128, m = 192;
  LiffConfig liff;
};

// Copies every tensor of `src` whose name and shape exist in `model`.
int copy_matching(const Checkpoint& src, CompassModel& model) {
  torch::NoGradGuard guard;
  int copied = 0;
  for (auto& p : model->named_parameters()) {
    if (!src.has(p.key())) continue;
    const auto& t = src.tensor(p.key());
    if (t.sizes() != p.value().sizes()) continue;
    p.value().copy_(t);
    ++copied;
  }
  return copied;
}

int cmd_train(const TrainArgs& a, uint64_t seed, std::ostream& out, std::ostream& err) {
  const auto stage = parse_stage(a.stage);
  const auto dataset = load_dataset(a.data, err);

  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) resume = load_checkpoint(a.resume);

  TrainConfig tc;
  CompassModel model{nullptr};
  if (resume) {
    model = load_model(*resume);
    tc = TrainConfig::from_map(resume->config);
    tc.steps = a.steps;
  } else {
    tc.stage = stage;
    tc.lambda = a.lambda;
    tc.enhancement_layers = a.layers;
    tc.sampler = {a.scale_min, a.scale_max};
    tc.crop = a.crop;
    tc.batch = a.batch;
    tc.steps = a.steps;
    tc.lr = a.lr;
    tc.warmup = a.warmup;
    tc.clip_norm = a.clip;
    tc.latent = parse_latent(a.ablation.latent);
    tc.seed = seed;
    try {
      tc.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    std::optional<Checkpoint> init;
    if (!a.init.empty()) init = load_checkpoint(a.init);
    if (stage != Stage::pretrain_bl && !init) {
      throw DataError("stage " + a.stage +
                      " needs a trained base layer: pass --init with a pretrain-bl checkpoint");
    }
    ModelConfig mc;
    if (init) {
      mc = ModelConfig::from_map(init->config);
    } else {
      mc.bl.n = mc.rc.n = a.n;
      mc.bl.m = mc.rc.m = a.m;
      mc.liff = a.liff;
    }
    mc.predictor = parse_predictor(a.ablation.predictor);
    mc.bl.padding = mc.rc.padding = parse_padding(a.ablation.padding);
    mc.lambda = a.lambda;
    torch::manual_seed(seed);
    model = CompassModel(mc);
    if (init) {
      copy_matching(*init, model);
      for (const auto& p : model->bl->named_parameters()) {
        if (!init->has("bl." + p.key())) {
          throw DataError(a.init + ": no base-layer weights ('bl." + p.key() + "')");
        }
      }
    }
  }

  Trainer trainer(model, tc);
  if (resume) trainer.restore(*resume);

  std::string log;
  if (!a.log.empty()) {
    if (resume && fs::exists(a.log)) log = read_file(a.log);
    if (log.empty()) log = train_log_header(tc.stage == Stage::pretrain_bl ? 0 : tc.enhancement_layers) + "\n";
  }
  auto save = [&] {
    save_checkpoint(trainer.checkpoint(), a.out);
    if (!a.log.empty()) write_file_atomic(a.log, log);
  };
  while (trainer.steps_done() < tc.steps) {
    const auto s = trainer.step(dataset);
    if (!std::isfinite(s.loss)) throw DataError("training diverged at step " + std::to_string(s.step));
    log += train_log_row(s) + "\n";
    if (a.save_every > 0 && trainer.steps_done() % a.save_every == 0) save();
  }
  save();
  out << "trained " << trainer.steps_done() << " steps, wrote " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  ModelSource source;
  std::string input, out, recon_dir, scales = "2.0";
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  const auto scales = parse_scales(a.scales);
  auto model = load_model(a.source.resolve());
  const auto image = load_image(a.input);
  const auto pyramid = make_pyramid(image, scales);
  const auto enc = encode(model, pyramid, static_cast<uint8_t>(a.source.quality));
  const auto bytes = pack(enc.stream);
  write_file_atomic(a.out, std::string(bytes.begin(), bytes.end()));
  if (!a.recon_dir.empty()) {
    fs::create_directories(a.recon_dir);
    for (size_t k = 0; k < enc.recons.size(); ++k) {
      save_image(enc.recons[k], fs::path(a.recon_dir) / ("layer" + std::to_string(k) + ".png"));
    }
  }
  out << a.out << ": " << bytes.size() << " bytes, " << pyramid.size() << " layers\n";
  return kExitOk;
}

struct DecodeArgs {
  ModelSource source;
  std::string input, out;
  int layer = -1;
};

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
  const auto text = read_file(a.input);
  const std::vector<uint8_t> bytes(text.begin(), text.end());
  const auto stream = unpack(bytes, a.layer < 0 ? std::nullopt : std::optional<int>(a.layer));
  auto model = load_model(a.source.resolve(stream.quality));
  const auto recons = decode(model, stream);
  save_image(recons.back(), a.out);
  out << a.out << ": layer " << recons.size() - 1 << ", " << recons.back().size(1) << "x"
      << recons.back().size(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Ablation ablation;
  std::string data, model_dir, out_dir, scales = "2.0", indices;
};

EvalReport eval_variant(const ModelRegistry& reg, const std::string& variant,
                        const std::vector<int>& wanted, const std::string& data,
                        std::span<const double> scales) {
  const auto idx = wanted.empty() ? reg.indices(variant) : wanted;
  if (idx.empty()) throw DataError("no models under " + (reg.root() / variant).string());
  std::vector<CompassModel> models;
  for (int q : idx) models.push_back(load_model(reg.path(variant, q)));
  return evaluate(fs::path(data), models, scales);
}

void write_report(const fs::path& dir, const std::string& name, const EvalReport& r) {
  auto rows = r.rows;
  const auto mean = aggregate(r.rows);
  rows.insert(rows.end(), mean.begin(), mean.end());
  write_file_atomic(dir / (name + ".csv"), to_csv(rows));
}

std::string bd_or_throw(const std::string& an, const RateCurve& a, const std::string& tn,
                        const RateCurve& t) {
  try {
    return bd_rate_csv(an, a, tn, t);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("BD-rate ") + tn + " vs " + an + ": " + e.what());
  }
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto scales = parse_scales(a.scales);
  const auto wanted = parse_indices(a.indices);
  const auto reg = ModelRegistry::locate(a.model_dir.empty() ? std::nullopt
                                                             : std::optional<fs::path>(a.model_dir));
  const auto variant = a.ablation.variant();
  const auto report = eval_variant(reg, variant, wanted, a.data, scales);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  write_report(dir, variant, report);
  std::vector<NamedCurve> curves = {{variant, final_layer_curve(report.rows)}};
  if (variant != "liff") {
    const auto anchor = eval_variant(reg, "liff", wanted, a.data, scales);
    write_report(dir, "liff", anchor);
    curves.insert(curves.begin(), {"liff", final_layer_curve(anchor.rows)});
    const auto csv = bd_or_throw("liff", curves[0].curve, variant, curves[1].curve);
    write_file_atomic(dir / ("bd_" + variant + "_vs_liff.csv"), csv);
    out << csv;
  }
  save_image(plot_curves(curves), dir / (variant + "_rd.png"));
  out << "evaluated " << variant << " into " << a.out_dir << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out_dir;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<NamedCurve> curves;
  for (const auto& path : a.inputs) {
    curves.push_back({fs::path(path).stem().string(), final_layer_curve(parse_csv(read_file(path)))});
  }
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  std::string summary = "variant,bpp,psnr\n";
  for (const auto& c : curves)
    for (const auto& p : c.curve.points) {
      summary += c.name + "," + std::to_string(p.bpp) + "," + std::to_string(p.psnr) + "\n";
    }
  write_file_atomic(dir / "curves.csv", summary);
  if (curves.size() > 1) {
    std::string bd;
    for (size_t i = 1; i < curves.size(); ++i) {
      const auto csv = bd_or_throw(curves[0].name, curves[0].curve, curves[i].name, curves[i].curve);
      bd += i == 1 ? csv : csv.substr(csv.find('\n') + 1);
    }
    write_file_atomic(dir / "bd_rate.csv", bd);
    out << bd;
  }
  save_image(plot_curves(curves), dir / "rd.png");
  out << "report written to " << a.out_dir << "\n";
  return kExitOk;
}

// Expands `--config FILE` into flags placed right after the subcommand, so
// that flags given on the command line come later and take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                       const std::vector<std::string>& commands) {
  std::string path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path);
  std::vector<std::string> flags;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(n) + ": expected key=value");
    }
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t\r"));
      v.erase(v.find_last_not_of(" \t\r") + 1);
      return v;
    };
    flags.push_back("--" + trim(line.substr(0, eq)));
    flags.push_back(trim(line.substr(eq + 1)));
  }
  auto out = args;
  for (size_t i = 1; i < out.size(); ++i) {
    if (std::find(commands.begin(), commands.end(), out[i]) != commands.end()) {
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(i) + 1, flags.begin(), flags.end());
      break;
    }
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scalable learned image codec with arbitrary-scale layers"};
  app.name(args.empty() ? "compass" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  uint64_t seed = 0;
  app.add_option("--seed", seed, "seed for every random draw");

  std::string config_path;
  auto with_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path,
                    "key=value file mirroring the flags; flags take precedence");
  };

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train one stage of a model");
  with_config(train);
  train->add_option("--seed", seed, "seed for every random draw");
  train->add_option("--data", ta.data, "folder of training images")->required();
  train->add_option("--out", ta.out, "checkpoint to write")->required();
  train->add_option("--stage", ta.stage, "training stage")
      ->check(CLI::IsMember({"pretrain-bl", "pretrain-liff", "pretrain-rc", "joint"}));
  train->add_option("--init", ta.init, "checkpoint providing the base layer (and other weights)");
  train->add_option("--resume", ta.resume, "continue a run from its checkpoint");
  train->add_option("--log", ta.log, "CSV training log");
  ta.ablation.add(train);
  train->add_option("--lambda", ta.lambda, "rate-distortion trade-off");
  train->add_option("--layers", ta.layers, "enhancement layers per training pyramid");
  train->add_option("--scale-min", ta.scale_min, "smallest per-layer scale factor");
  train->add_option("--scale-max", ta.scale_max, "largest per-layer scale factor");
  train->add_option("--crop", ta.crop, "crop side of the largest layer");
  train->add_option("--batch", ta.batch, "batch size");
  train->add_option("--steps", ta.steps, "total optimizer steps");
  train->add_option("--save-every", ta.save_every, "checkpoint interval in steps (0: only at the end)");
  train->add_option("--lr", ta.lr, "initial learning rate");
  train->add_option("--warmup", ta.warmup, "linear warm-up steps");
  train->add_option("--clip", ta.clip, "gradient norm clip (0: off)");
  train->add_option("--n", ta.n, "latent channels of the codecs")->check(CLI::PositiveNumber);
  train->add_option("--m", ta.m, "hyper-latent channels of the codecs")->check(CLI::PositiveNumber);
  train->add_option("--liff-features", ta.liff.features)->check(CLI::PositiveNumber);
  train->add_option("--liff-blocks", ta.liff.blocks)->check(CLI::PositiveNumber);
  train->add_option("--liff-convs", ta.liff.convs_per_block)->check(CLI::PositiveNumber);
  train->add_option("--liff-growth", ta.liff.growth)->check(CLI::PositiveNumber);
  train->add_option("--mlp-hidden", ta.liff.mlp_hidden)->check(CLI::PositiveNumber);
  train->add_option("--mlp-layers", ta.liff.mlp_layers)->check(CLI::NonNegativeNumber);

  EncodeArgs ea;
  auto* enc = app.add_subcommand("encode", "code an image into a scalable stream");
  with_config(enc);
  ea.source.add(enc);
  enc->add_option("--input", ea.input, "image taken as the largest layer")->required();
  enc->add_option("--out", ea.out, ".cmps stream to write")->required();
  enc->add_option("--scales", ea.scales, "layer scale factors relative to the base layer");
  enc->add_option("--recon", ea.recon_dir, "folder for the layer reconstructions");

  DecodeArgs da;
  auto* dec = app.add_subcommand("decode", "reconstruct one layer of a stream");
  with_config(dec);
  da.source.add(dec);
  dec->add_option("--input", da.input, ".cmps stream")->required();
  dec->add_option("--out", da.out, "image to write")->required();
  dec->add_option("--layer", da.layer, "layer to reconstruct (default: the last)");

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "rate-distortion evaluation over a folder");
  with_config(ev);
  va.ablation.add(ev);
  ev->add_option("--data", va.data, "folder of test images")->required();
  ev->add_option("--model-dir", va.model_dir, "registry root (default $COMPASS_MODEL_DIR)");
  ev->add_option("--out-dir", va.out_dir, "folder for CSV reports and plots")->required();
  ev->add_option("--scales", va.scales, "layer scale factors relative to the base layer");
  ev->add_option("--indices", va.indices, "lambda indices, e.g. 0,1,2,3 (default: all present)");

  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "curves and BD-rate from evaluation CSVs");
  with_config(rep);
  rep->add_option("--inputs", ra.inputs, "evaluation CSVs; the first is the BD-rate anchor")
      ->required();
  rep->add_option("--out-dir", ra.out_dir, "folder for the summary and plot")->required();

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args, {"train", "encode", "decode", "eval", "report"});
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  std::vector<const char*> argv;
  for (const auto& s : expanded) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  torch::manual_seed(seed);
  try {
    if (train->parsed()) return cmd_train(ta, seed, out, err);
    if (enc->parsed()) return cmd_encode(ea, out);
    if (dec->parsed()) return cmd_decode(da, out);
    if (ev->parsed()) return cmd_eval(va, out);
    if (rep->parsed()) return cmd_report(ra, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DecodeError& e) {
    err << "error: corrupt stream: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace compass::cli
