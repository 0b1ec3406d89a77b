#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace compass {

/// Spatial size of one layer, rows first.
struct Dims {
  int64_t h = 0;
  int64_t w = 0;

  int64_t pixels() const { return h * w; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

void require_positive(Dims d, const char* what);

/// Center of pixel `i` on an axis of `n` pixels, mapped to [-1, 1].
inline double normalized_coord(int64_t i, int64_t n) {
  return -1.0 + static_cast<double>(2 * i + 1) / static_cast<double>(n);
}

/// Per-pixel normalized coordinates, row-major, two values per pixel.
struct CoordGrid {
  Dims dims;
  std::vector<double> values;

  std::array<double, 2> at(int64_t i, int64_t j) const {
    const auto n = 2 * (i * dims.w + j);
    return {values[n], values[n + 1]};
  }
};

/// Nearest source pixel for every target pixel. The match is separable, so it
/// is stored as one index table per axis.
struct Correspondence {
  Dims prev;
  Dims cur;
  std::vector<int64_t> rows;  // size cur.h, values in [0, prev.h)
  std::vector<int64_t> cols;  // size cur.w, values in [0, prev.w)

  std::array<int64_t, 2> at(int64_t i, int64_t j) const { return {rows[i], cols[j]}; }
  int64_t flat(int64_t i, int64_t j) const { return rows[i] * prev.w + cols[j]; }
};

/// Offsets from each target pixel to its matched source pixel, (H*W) x 2.
struct LocalGrid {
  Dims dims;
  std::vector<double> values;
};

/// Constant (2*Hprev/Hcur, 2*Wprev/Wcur) repeated for every target pixel.
struct ScaleToken {
  Dims dims;
  std::vector<double> values;
};

CoordGrid normalized_coords(Dims dims);

/// Index on an axis of `prev_n` pixels closest to target pixel `i` of
/// `cur_n`. Equidistant candidates resolve to the smaller index. Distances
/// are compared in exact integer arithmetic.
int64_t nearest_index(int64_t i, int64_t cur_n, int64_t prev_n);

Correspondence nearest_correspondence(Dims prev, Dims cur);
LocalGrid local_grid(Dims prev, Dims cur);
ScaleToken scale_token(Dims prev, Dims cur);

}  // namespace compass
