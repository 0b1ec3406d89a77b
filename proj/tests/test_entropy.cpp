#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "compass/entropy.hpp"
#include "compass/errors.hpp"

using namespace compass;

namespace {

// Simpson integration of the normal density over [a, b].
double simpson_mass(double mu, double sigma, double a, double b) {
  constexpr int n = 2000;
  const double h = (b - a) / n;
  auto pdf = [&](double x) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
  };
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  return s * h / 3.0;
}

void check_table(const CdfTable& t) {
  REQUIRE(t.cdf.front() == 0);
  REQUIRE(t.cdf.back() == kCdfTotal);
  for (int32_t s = 0; s < t.slots(); ++s) REQUIRE(t.mass(s) >= 1);
}

}  // namespace

TEST_CASE("gaussian bin masses match numeric integration") {
  for (double mu : {0.0, 0.3, -2.7, 10.2}) {
    for (double sigma : {0.2, 1.0, 4.5}) {
      const auto m = gaussian_bin_masses(mu, sigma, 16);
      REQUIRE(m.size() == 34);
      double total = 0;
      for (int v = -16; v <= 16; ++v) {
        CHECK(m[v + 16] == doctest::Approx(simpson_mass(mu, sigma, v - 0.5, v + 0.5)).epsilon(1e-9));
        total += m[v + 16];
      }
      CHECK(total + m.back() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("quantized tables are valid distributions") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> mu(-80, 80), ls(-7, 5);
  for (int i = 0; i < 500; ++i) check_table(build_gaussian_cdf(mu(rng), std::exp(ls(rng))));
  // Degenerate inputs still produce a usable table.
  std::vector<double> zeros(2 * 4 + 2, 0.0);
  check_table(quantize_masses(zeros, 4));
  std::vector<double> spike(10, 0.0);
  spike[3] = 1.0;
  const auto t = quantize_masses(spike, 4);
  check_table(t);
  CHECK(t.mass(3) == kCdfTotal - 9);
  CHECK_THROWS_AS(quantize_masses(spike, 5), std::invalid_argument);
  CHECK_THROWS_AS(build_gaussian_cdf(0, 0), std::invalid_argument);
}

TEST_CASE("quantization rounds to nearest and fixes the total on the largest slot") {
  std::vector<double> m = {0.1, 0.2, 0.3, 0.4};
  const auto t = quantize_masses(m, 1);
  std::vector<int64_t> expect;
  int64_t sum = 0;
  for (double p : m) {
    expect.push_back(std::max<int64_t>(1, std::llround(p * 65536)));
    sum += expect.back();
  }
  expect[3] += 65536 - sum;
  for (int s = 0; s < 4; ++s) CHECK(t.mass(s) == expect[s]);
}

TEST_CASE("symmetric gaussian tables are mirror images") {
  for (double sigma : {0.3, 1.0, 7.0}) {
    const auto t = build_gaussian_cdf(0.0, sigma, 20);
    for (int v = 1; v <= 20; ++v) CHECK(t.mass(20 + v) == t.mass(20 - v));
  }
}

TEST_CASE("range coder round trips random symbols") {
  std::mt19937 rng(42);
  std::vector<CdfTable> tables;
  std::normal_distribution<double> mu(0, 6);
  std::uniform_real_distribution<double> ls(-5, 4);
  for (int i = 0; i < 64; ++i) tables.push_back(build_gaussian_cdf(mu(rng), std::exp(ls(rng))));

  for (int trial = 0; trial < 20; ++trial) {
    const size_t n = 1 + rng() % 3000;
    std::vector<int32_t> sym(n), idx(n);
    for (size_t i = 0; i < n; ++i) {
      idx[i] = static_cast<int32_t>(rng() % tables.size());
      std::normal_distribution<double> d(0, 20);
      sym[i] = static_cast<int32_t>(std::lround(d(rng)));
      if (rng() % 50 == 0) sym[i] = static_cast<int32_t>(rng());  // far escapes
    }
    const auto bytes = encode_symbols(sym, tables, idx);
    CHECK(decode_symbols(bytes, tables, n, idx) == sym);
  }
}

TEST_CASE("extreme escapes round trip") {
  const auto t = build_gaussian_cdf(0, 1, 64);
  std::vector<CdfTable> tables{t};
  std::vector<int32_t> sym = {INT32_MIN, INT32_MAX, -65, 65, 64, -64, 0};
  std::vector<int32_t> idx(sym.size(), 0);
  CHECK(decode_symbols(encode_symbols(sym, tables, idx), tables, sym.size(), idx) == sym);
}

TEST_CASE("coded size tracks the model cost") {
  std::mt19937 rng(3);
  for (double sigma : {0.1, 0.8, 3.0, 20.0}) {
    const auto t = build_gaussian_cdf(0.4, sigma, 64);
    std::vector<CdfTable> tables{t};
    std::normal_distribution<double> d(0.4, sigma);
    const size_t n = 20000;
    std::vector<int32_t> sym(n), idx(n, 0);
    for (auto& s : sym) s = static_cast<int32_t>(std::lround(d(rng)));
    const double model = model_bits(sym, tables, idx);
    const double actual = 8.0 * static_cast<double>(encode_symbols(sym, tables, idx).size());
    CHECK(actual >= model);
    CHECK(actual <= model * 1.01 + 64);
  }
}

TEST_CASE("empty input round trips") {
  std::vector<CdfTable> tables{build_gaussian_cdf(0, 1)};
  const auto bytes = encode_symbols({}, tables);
  CHECK(bytes.size() == 4);
  CHECK(decode_symbols(bytes, tables, 0).empty());
}

TEST_CASE("truncated streams are rejected") {
  std::vector<CdfTable> tables{build_gaussian_cdf(0, 30)};
  std::vector<int32_t> sym(4000), idx(4000, 0);
  std::mt19937 rng(9);
  for (auto& s : sym) s = static_cast<int32_t>(rng() % 41) - 20;
  auto bytes = encode_symbols(sym, tables, idx);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_symbols(bytes, tables, sym.size(), idx), DecodeError);
  CHECK_THROWS_AS(decode_symbols(bytes, tables, sym.size(), std::vector<int32_t>(3, 0)),
                  std::invalid_argument);
}
