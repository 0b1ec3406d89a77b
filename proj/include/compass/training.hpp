#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "compass/checkpoint.hpp"
#include "compass/pipeline.hpp"

namespace compass {

enum class Stage { pretrain_bl, pretrain_liff, pretrain_rc, joint };
/// Which latent feeds the distortion term: rounded (straight-through) or the
/// noisy proxy used for the rate.
enum class LatentMode { rounded, noisy };

const char* to_string(Stage s);
const char* to_string(LatentMode m);
Stage parse_stage(const std::string& s);
LatentMode parse_latent(const std::string& s);

/// Per-adjacent-layer scale factors drawn uniformly from [min, max].
struct ScaleSampler {
  double min = 1.2;
  double max = 2.0;
};

struct TrainConfig {
  Stage stage = Stage::joint;
  double lambda = 0.01;
  int enhancement_layers = 1;  ///< K
  ScaleSampler sampler;
  int64_t crop = 128;  ///< side of the largest layer
  int64_t batch = 8;
  int64_t steps = 1000;
  double lr = 1e-4;
  int64_t warmup = 0;      ///< steps of linear learning-rate warm-up
  double clip_norm = 0.0;  ///< global gradient-norm clip; 0 disables
  int64_t plateau_window = 100;  ///< steps averaged per plateau check
  int64_t plateau_patience = 2;  ///< windows without improvement before halving
  LatentMode latent = LatentMode::rounded;
  uint64_t seed = 0;

  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);
  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// Combined rate-distortion objective: loss = sum_k rate[k] + lambda * distortion[k].
struct LossTerms {
  torch::Tensor loss;
  std::vector<torch::Tensor> rate;        ///< bits per pixel of layer k
  std::vector<torch::Tensor> distortion;  ///< 255^2 * MSE of layer k
};

/// Rate of one codec pass on x in bits per pixel of x, plus its
/// reconstruction. Rate reads only the noisy latents; the reconstruction
/// reads the rounded latents (or the noisy ones in LatentMode::noisy).
struct CodecPass {
  torch::Tensor rate_bpp;
  torch::Tensor recon;
};
CodecPass codec_pass(MeanScaleCodec& codec, const torch::Tensor& x, LatentMode mode,
                     const std::optional<torch::Generator>& gen);

/// `pyramid` holds [B, 3, H, W] batches for layers 0..K. The base layer is
/// coded with rounded latents and no gradient and contributes no terms.
LossTerms combined_rd_loss(CompassModel& model, const std::vector<torch::Tensor>& pyramid,
                           double lambda, LatentMode mode = LatentMode::rounded,
                           const std::optional<torch::Generator>& gen = std::nullopt);

/// Rate-distortion loss of the base-layer codec alone on `x`.
LossTerms base_layer_loss(CompassModel& model, const torch::Tensor& x, double lambda,
                          LatentMode mode = LatentMode::rounded,
                          const std::optional<torch::Generator>& gen = std::nullopt);

/// Layer sizes for one training step: the largest layer is `top`, each
/// smaller one divides the next by a factor drawn from `sampler`.
std::vector<Dims> sample_layer_dims(Dims top, int enhancement_layers, const ScaleSampler& sampler,
                                    torch::Generator& gen);

/// Crop of `image` ([3, H, W]) at `top` size with the smaller layers made by
/// bicubic downscaling of the crop.
std::vector<torch::Tensor> sample_pyramid(const torch::Tensor& image,
                                          const std::vector<Dims>& dims, torch::Generator& gen);

struct StepLog {
  int64_t step = 0;
  double loss = 0;
  std::vector<double> rate;
  std::vector<double> distortion;
  double lr = 0;
};

/// Stateful optimizer for one training stage. Each step draws its batch and
/// noise from a generator seeded by (seed, step), so a resumed run repeats
/// the exact sequence of an uninterrupted one.
class Trainer {
 public:
  Trainer(CompassModel model, TrainConfig cfg);

  StepLog step(const std::vector<torch::Tensor>& dataset);
  int64_t steps_done() const { return step_; }
  double lr() const { return lr_; }
  const TrainConfig& config() const { return cfg_; }
  CompassModel& model() { return model_; }

  /// Model weights, optimizer state, configs and schedule position.
  Checkpoint checkpoint() const;
  /// Restore state written by checkpoint(); the model shape must match.
  void restore(const Checkpoint& ckpt);

  /// Names of parameters this stage updates.
  std::vector<std::string> trainable() const;

 private:
  void update_schedule(double loss);
  void set_lr(double lr);

  CompassModel model_;
  TrainConfig cfg_;
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::unique_ptr<torch::optim::Adam> optim_;
  int64_t step_ = 0;
  double lr_ = 0;
  double window_sum_ = 0;
  int64_t window_count_ = 0;
  double best_window_ = 0;
  bool have_best_ = false;
  int64_t bad_windows_ = 0;
};

/// Seed for step `step` of a run seeded with `seed`.
uint64_t step_seed(uint64_t seed, int64_t step);

/// Model-only checkpoints used by encode/decode/eval.
Checkpoint model_checkpoint(const CompassModel& model, uint64_t seed = 0, uint64_t step = 0);
void save_model(const CompassModel& model, const std::filesystem::path& path, uint64_t seed = 0,
                uint64_t step = 0);
/// Builds the model described by the checkpoint config and loads its weights.
CompassModel load_model(const Checkpoint& ckpt);
CompassModel load_model(const std::filesystem::path& path);

/// CSV header for a training log with K enhancement layers.
std::string train_log_header(int enhancement_layers);
std::string train_log_row(const StepLog& s);

}  // namespace compass
