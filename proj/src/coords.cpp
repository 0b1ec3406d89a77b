#include "compass/coords.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace compass {

void require_positive(Dims d, const char* what) {
  if (d.h < 1 || d.w < 1) {
    throw std::invalid_argument(std::string(what) + ": dimensions must be positive, got " +
                                std::to_string(d.h) + "x" + std::to_string(d.w));
  }
}

CoordGrid normalized_coords(Dims dims) {
  require_positive(dims, "normalized_coords");
  CoordGrid grid{dims, std::vector<double>(static_cast<size_t>(2 * dims.pixels()))};
  for (int64_t i = 0; i < dims.h; ++i) {
    const double y = normalized_coord(i, dims.h);
    for (int64_t j = 0; j < dims.w; ++j) {
      const auto n = static_cast<size_t>(2 * (i * dims.w + j));
      grid.values[n] = y;
      grid.values[n + 1] = normalized_coord(j, dims.w);
    }
  }
  return grid;
}

int64_t nearest_index(int64_t i, int64_t cur_n, int64_t prev_n) {
  // Both coordinates scaled by cur_n * prev_n: target -> (2i+1)*prev_n,
  // source a -> (2a+1)*cur_n.
  const int64_t target = (2 * i + 1) * prev_n;
  auto distance = [&](int64_t a) {
    const int64_t d = target - (2 * a + 1) * cur_n;
    return d < 0 ? -d : d;
  };
  int64_t guess = (target - cur_n) / (2 * cur_n);
  guess = std::clamp<int64_t>(guess, 0, prev_n - 1);
  int64_t best = std::max<int64_t>(guess - 1, 0);
  int64_t best_d = distance(best);
  for (int64_t a = best + 1; a <= std::min(guess + 1, prev_n - 1); ++a) {
    const int64_t d = distance(a);
    if (d < best_d) {
      best = a;
      best_d = d;
    }
  }
  return best;
}

Correspondence nearest_correspondence(Dims prev, Dims cur) {
  require_positive(prev, "nearest_correspondence(prev)");
  require_positive(cur, "nearest_correspondence(cur)");
  Correspondence c{prev, cur, std::vector<int64_t>(static_cast<size_t>(cur.h)),
                   std::vector<int64_t>(static_cast<size_t>(cur.w))};
  for (int64_t i = 0; i < cur.h; ++i) c.rows[i] = nearest_index(i, cur.h, prev.h);
  for (int64_t j = 0; j < cur.w; ++j) c.cols[j] = nearest_index(j, cur.w, prev.w);
  return c;
}

LocalGrid local_grid(Dims prev, Dims cur) {
  const auto corr = nearest_correspondence(prev, cur);
  LocalGrid grid{cur, std::vector<double>(static_cast<size_t>(2 * cur.pixels()))};
  for (int64_t i = 0; i < cur.h; ++i) {
    const double dy = normalized_coord(i, cur.h) - normalized_coord(corr.rows[i], prev.h);
    for (int64_t j = 0; j < cur.w; ++j) {
      const auto n = static_cast<size_t>(2 * (i * cur.w + j));
      grid.values[n] = dy;
      grid.values[n + 1] = normalized_coord(j, cur.w) - normalized_coord(corr.cols[j], prev.w);
    }
  }
  return grid;
}

ScaleToken scale_token(Dims prev, Dims cur) {
  require_positive(prev, "scale_token(prev)");
  require_positive(cur, "scale_token(cur)");
  const double sh = 2.0 * static_cast<double>(prev.h) / static_cast<double>(cur.h);
  const double sw = 2.0 * static_cast<double>(prev.w) / static_cast<double>(cur.w);
  ScaleToken token{cur, std::vector<double>(static_cast<size_t>(2 * cur.pixels()))};
  for (size_t n = 0; n < token.values.size(); n += 2) {
    token.values[n] = sh;
    token.values[n + 1] = sw;
  }
  return token;
}

}  // namespace compass
