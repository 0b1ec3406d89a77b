#include "compass/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>

#include "compass/errors.hpp"
#include "compass/image_io.hpp"

namespace compass {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_num(const std::string& s, size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw DataError("csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

ModelRegistry ModelRegistry::locate(const std::optional<fs::path>& root) {
  if (root && !root->empty()) return ModelRegistry(*root);
  if (const char* env = std::getenv("COMPASS_MODEL_DIR"); env && *env) return ModelRegistry(env);
  throw DataError("no model registry: pass --model-dir or set COMPASS_MODEL_DIR");
}

fs::path ModelRegistry::path(const std::string& variant, int index) const {
  return root_ / variant / ("q" + std::to_string(index) + ".ckpt");
}

std::vector<int> ModelRegistry::indices(const std::string& variant) const {
  std::vector<int> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(root_ / variant, ec)) {
    const auto name = e.path().filename().string();
    if (name.size() < 7 || name[0] != 'q' || e.path().extension() != ".ckpt") continue;
    const auto digits = name.substr(1, name.size() - 6);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    out.push_back(std::stoi(digits));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string variant_name(Predictor predictor, PaddingMode padding, bool noisy_latent) {
  std::string v = to_string(predictor);
  if (padding == PaddingMode::lump) v += "-lump";
  if (noisy_latent) v += "-noisy";
  return v;
}

std::vector<torch::Tensor> make_pyramid(const torch::Tensor& image, std::span<const double> scales) {
  const auto layers = LayerConfig::from_scales({image.size(-2), image.size(-1)}, scales);
  std::vector<torch::Tensor> out;
  for (size_t k = 0; k + 1 < layers.dims.size(); ++k) {
    out.push_back(bicubic_resize(image, layers.dims[k]).clamp(0.0, 1.0));
  }
  out.push_back(image);
  return out;
}

EvalReport evaluate(const std::vector<fs::path>& images, std::vector<CompassModel>& models,
                    std::span<const double> scales) {
  if (images.empty()) throw DataError("evaluate: empty dataset");
  if (models.empty()) throw DataError("evaluate: no models");
  EvalReport report;
  for (const auto& path : images) {
    torch::Tensor img;
    try {
      img = load_image(path);
    } catch (const DataError& e) {
      std::cerr << "warning: skipping " << path.string() << ": " << e.what() << "\n";
      report.skipped.push_back(path.string());
      continue;
    }
    const auto pyramid = make_pyramid(img, scales);
    for (auto& model : models) {
      model->eval();
      const auto enc = encode(model, pyramid);
      // Score what a decoder reconstructs from the packed stream.
      const auto bytes = pack(enc.stream);
      const auto stream = unpack(bytes);
      for (const auto& rd : layer_rd(model, stream, pyramid)) {
        report.rows.push_back({path.filename().string(), model->config().lambda, rd});
      }
    }
  }
  if (report.rows.empty()) throw DataError("evaluate: no readable images");
  return report;
}

EvalReport evaluate(const fs::path& dataset_dir, std::vector<CompassModel>& models,
                    std::span<const double> scales) {
  if (!fs::is_directory(dataset_dir)) {
    throw DataError("evaluate: " + dataset_dir.string() + " is not a directory");
  }
  return evaluate(list_images(dataset_dir), models, scales);
}

std::vector<EvalRow> aggregate(const std::vector<EvalRow>& rows) {
  std::map<std::pair<double, int>, std::pair<EvalRow, int>> acc;
  for (const auto& r : rows) {
    if (r.image == "mean") continue;
    auto& [sum, n] = acc[{r.lambda, r.rd.layer}];
    sum.rd.bits += r.rd.bits;
    sum.rd.acc_bits += r.rd.acc_bits;
    sum.rd.bpp += r.rd.bpp;
    sum.rd.mse += r.rd.mse;
    sum.rd.psnr += r.rd.psnr;
    ++n;
  }
  std::vector<EvalRow> out;
  for (auto& [key, entry] : acc) {
    auto& [sum, n] = entry;
    EvalRow r{"mean", key.first, sum.rd};
    r.rd.layer = key.second;
    r.rd.bits /= n;
    r.rd.acc_bits /= n;
    r.rd.bpp /= n;
    r.rd.mse /= n;
    r.rd.psnr /= n;
    out.push_back(r);
  }
  return out;
}

RateCurve final_layer_curve(const std::vector<EvalRow>& rows) {
  const auto means = aggregate(rows);
  int top = 0;
  for (const auto& r : means) top = std::max(top, r.rd.layer);
  RateCurve curve;
  for (const auto& r : means) {
    if (r.rd.layer == top) curve.points.push_back({r.rd.bpp, r.rd.psnr});
  }
  std::sort(curve.points.begin(), curve.points.end(),
            [](const RatePoint& a, const RatePoint& b) { return a.bpp < b.bpp; });
  return curve;
}

std::string to_csv(const std::vector<EvalRow>& rows) {
  std::string out = "image,lambda,layer,bits,acc_bits,bpp,mse,psnr\n";
  for (const auto& r : rows) {
    out += r.image + "," + num(r.lambda) + "," + std::to_string(r.rd.layer) + "," +
           num(r.rd.bits) + "," + num(r.rd.acc_bits) + "," + num(r.rd.bpp) + "," + num(r.rd.mse) +
           "," + num(r.rd.psnr) + "\n";
  }
  return out;
}

std::vector<EvalRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "image,lambda,layer,bits,acc_bits,bpp,mse,psnr") {
    throw DataError("csv: missing or unexpected header");
  }
  std::vector<EvalRow> rows;
  size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 8) throw DataError("csv line " + std::to_string(n) + ": expected 8 fields");
    EvalRow r;
    r.image = cells[0];
    r.lambda = parse_num(cells[1], n);
    r.rd.layer = static_cast<int>(parse_num(cells[2], n));
    r.rd.bits = parse_num(cells[3], n);
    r.rd.acc_bits = parse_num(cells[4], n);
    r.rd.bpp = parse_num(cells[5], n);
    r.rd.mse = parse_num(cells[6], n);
    r.rd.psnr = parse_num(cells[7], n);
    rows.push_back(r);
  }
  return rows;
}

std::string bd_rate_csv(const std::string& anchor_name, const RateCurve& anchor,
                        const std::string& test_name, const RateCurve& test) {
  return "anchor,test,anchor_points,test_points,bd_rate\n" + anchor_name + "," + test_name + "," +
         std::to_string(anchor.points.size()) + "," + std::to_string(test.points.size()) + "," +
         num(bd_rate(anchor, test)) + "\n";
}

// ---------------------------------------------------------------------------

namespace {

class Canvas {
 public:
  Canvas(int64_t h, int64_t w) : img_(torch::ones({3, h, w})), a_(img_.accessor<float, 3>()) {}

  void dot(int64_t y, int64_t x, const float* rgb, int r = 0) {
    for (int64_t i = y - r; i <= y + r; ++i)
      for (int64_t j = x - r; j <= x + r; ++j) {
        if (i < 0 || j < 0 || i >= img_.size(1) || j >= img_.size(2)) continue;
        for (int c = 0; c < 3; ++c) a_[c][i][j] = rgb[c];
      }
  }

  void line(double y0, double x0, double y1, double x1, const float* rgb, int r = 0) {
    const int steps = static_cast<int>(std::ceil(std::max(std::fabs(y1 - y0), std::fabs(x1 - x0)))) + 1;
    for (int s = 0; s <= steps; ++s) {
      const double t = static_cast<double>(s) / steps;
      dot(std::lround(y0 + t * (y1 - y0)), std::lround(x0 + t * (x1 - x0)), rgb, r);
    }
  }

  torch::Tensor image() const { return img_; }

 private:
  torch::Tensor img_;
  torch::TensorAccessor<float, 3> a_;
};

constexpr float kPalette[][3] = {{0.84f, 0.15f, 0.16f}, {0.12f, 0.47f, 0.71f},
                                 {0.17f, 0.63f, 0.17f}, {1.0f, 0.5f, 0.05f},
                                 {0.58f, 0.4f, 0.74f},  {0.55f, 0.34f, 0.29f}};
constexpr float kInk[3] = {0.0f, 0.0f, 0.0f};
constexpr float kGrid[3] = {0.88f, 0.88f, 0.88f};

}  // namespace

torch::Tensor plot_curves(const std::vector<NamedCurve>& curves, int64_t height, int64_t width) {
  if (height < 64 || width < 64) throw std::invalid_argument("plot_curves: canvas too small");
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& c : curves)
    for (const auto& p : c.curve.points) {
      x_lo = std::min(x_lo, p.bpp);
      x_hi = std::max(x_hi, p.bpp);
      y_lo = std::min(y_lo, p.psnr);
      y_hi = std::max(y_hi, p.psnr);
    }
  if (!std::isfinite(x_lo)) {
    x_lo = y_lo = 0;
    x_hi = y_hi = 1;
  }
  // Ranges snapped outward to tick steps of 0.1 bpp and 1 dB (or coarser).
  const double xs = std::max(0.1, std::pow(10.0, std::floor(std::log10(std::max(x_hi - x_lo, 1e-9)))));
  const double ys = std::max(1.0, std::pow(10.0, std::floor(std::log10(std::max(y_hi - y_lo, 1e-9)))));
  x_lo = std::floor(x_lo / xs) * xs;
  x_hi = std::max(std::ceil(x_hi / xs) * xs, x_lo + xs);
  y_lo = std::floor(y_lo / ys) * ys;
  y_hi = std::max(std::ceil(y_hi / ys) * ys, y_lo + ys);

  const double left = 48, right = static_cast<double>(width) - 16;
  const double top = 16, bottom = static_cast<double>(height) - 40;
  auto px = [&](double bpp) { return left + (bpp - x_lo) / (x_hi - x_lo) * (right - left); };
  auto py = [&](double db) { return bottom - (db - y_lo) / (y_hi - y_lo) * (bottom - top); };

  Canvas canvas(height, width);
  for (double x = x_lo; x <= x_hi + 1e-9; x += xs) {
    canvas.line(top, px(x), bottom, px(x), kGrid);
    canvas.line(bottom, px(x), bottom + 6, px(x), kInk);
  }
  for (double y = y_lo; y <= y_hi + 1e-9; y += ys) {
    canvas.line(py(y), left, py(y), right, kGrid);
    canvas.line(py(y), left - 6, py(y), left, kInk);
  }
  canvas.line(bottom, left, bottom, right, kInk);
  canvas.line(top, left, bottom, left, kInk);

  for (size_t i = 0; i < curves.size(); ++i) {
    const float* rgb = kPalette[i % std::size(kPalette)];
    const auto& pts = curves[i].curve.points;
    for (size_t j = 0; j < pts.size(); ++j) {
      if (j > 0) canvas.line(py(pts[j - 1].psnr), px(pts[j - 1].bpp), py(pts[j].psnr), px(pts[j].bpp), rgb, 1);
      canvas.dot(std::lround(py(pts[j].psnr)), std::lround(px(pts[j].bpp)), rgb, 3);
    }
    // legend swatch in the lower right corner, one per curve
    const double ly = bottom - 12 - 14 * static_cast<double>(i);
    canvas.line(ly, right - 40, ly, right - 10, rgb, 2);
  }
  return canvas.image();
}

}  // namespace compass
