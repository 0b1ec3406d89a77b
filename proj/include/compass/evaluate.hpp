#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "compass/metrics.hpp"
#include "compass/pipeline.hpp"

namespace compass {

/// Trained models laid out as `<root>/<variant>/q<index>.ckpt`, one file per
/// rate point. The root defaults to $COMPASS_MODEL_DIR.
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root) : root_(std::move(root)) {}
  /// `root` if given, else $COMPASS_MODEL_DIR; throws DataError if neither is set.
  static ModelRegistry locate(const std::optional<std::filesystem::path>& root = std::nullopt);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path(const std::string& variant, int index) const;
  /// Indices with a checkpoint present, ascending.
  std::vector<int> indices(const std::string& variant) const;

 private:
  std::filesystem::path root_;
};

/// Registry directory for an ablation: the predictor name, with "-lump" and
/// "-noisy" appended for the padding and latent ablations.
std::string variant_name(Predictor predictor, PaddingMode padding = PaddingMode::layerwise,
                         bool noisy_latent = false);

struct EvalRow {
  std::string image;
  double lambda = 0;
  RDRecord rd;
};

struct EvalReport {
  std::vector<EvalRow> rows;          ///< per image, per model, per layer
  std::vector<std::string> skipped;   ///< images that could not be read
};

/// Layers of `image` ([3, H, W], taken as the largest layer) for the given
/// scale factors relative to the base layer.
std::vector<torch::Tensor> make_pyramid(const torch::Tensor& image, std::span<const double> scales);

/// Code every image of `images` with every model and score each layer.
/// Unreadable images are skipped with a warning on stderr; an empty or
/// fully unreadable dataset throws DataError.
EvalReport evaluate(const std::vector<std::filesystem::path>& images,
                    std::vector<CompassModel>& models, std::span<const double> scales);
EvalReport evaluate(const std::filesystem::path& dataset_dir, std::vector<CompassModel>& models,
                    std::span<const double> scales);

/// Mean bits, bpp, MSE and PSNR over images for each (lambda, layer), in
/// rows whose image field is "mean".
std::vector<EvalRow> aggregate(const std::vector<EvalRow>& rows);

/// Aggregate rate-PSNR points of the final layer, one per lambda, sorted by bpp.
RateCurve final_layer_curve(const std::vector<EvalRow>& rows);

/// CSV with header image,lambda,layer,bits,acc_bits,bpp,mse,psnr.
std::string to_csv(const std::vector<EvalRow>& rows);
/// Parses the output of to_csv; throws DataError on malformed input.
std::vector<EvalRow> parse_csv(const std::string& text);

/// CSV comparing two final-layer curves: anchor,test,anchor_points,test_points,bd_rate.
std::string bd_rate_csv(const std::string& anchor_name, const RateCurve& anchor,
                        const std::string& test_name, const RateCurve& test);

struct NamedCurve {
  std::string name;
  RateCurve curve;
};

/// Rate-PSNR plot as a [3, H, W] image on [0, 1]: white background, axes
/// with tick marks, one colored polyline with point markers per curve.
torch::Tensor plot_curves(const std::vector<NamedCurve>& curves, int64_t height = 480,
                          int64_t width = 640);

}  // namespace compass
