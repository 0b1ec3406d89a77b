#include <doctest.h>

#include <random>

#include "compass/bitstream.hpp"
#include "compass/errors.hpp"

using namespace compass;

namespace {

std::vector<uint8_t> random_bytes(std::mt19937& rng, size_t n) {
  std::vector<uint8_t> v(n);
  for (auto& b : v) b = static_cast<uint8_t>(rng());
  return v;
}

ScalableBitstream sample_stream(std::mt19937& rng, int layers) {
  ScalableBitstream s;
  s.quality = 3;
  for (int k = 0; k < layers; ++k) {
    s.dims.push_back({16 + 8 * k, 24 + 8 * k});
    s.layers.push_back({random_bytes(rng, rng() % 40), random_bytes(rng, rng() % 300)});
  }
  return s;
}

bool same(const ScalableBitstream& a, const ScalableBitstream& b) {
  if (a.quality != b.quality || a.dims != b.dims || a.layers.size() != b.layers.size()) return false;
  for (size_t k = 0; k < a.layers.size(); ++k) {
    if (a.layers[k].z != b.layers[k].z || a.layers[k].y != b.layers[k].y) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adler32 known values") {
  const std::string w = "Wikipedia";
  CHECK(adler32(std::span(reinterpret_cast<const uint8_t*>(w.data()), w.size())) == 0x11E60398u);
  CHECK(adler32({}) == 1u);
}

TEST_CASE("pack and unpack round trip") {
  std::mt19937 rng(5);
  for (int layers = 1; layers <= 5; ++layers) {
    const auto s = sample_stream(rng, layers);
    const auto bytes = pack(s);
    CHECK(bytes[0] == 'C');
    CHECK(bytes[4] == kBitstreamVersion);
    CHECK(bytes[5] == layers);
    CHECK(same(unpack(bytes), s));
    // Total size equals the per-layer costs.
    size_t total = 0;
    for (int k = 0; k < layers; ++k) total += layer_cost_bytes(s, k);
    CHECK(total == bytes.size());
  }
}

TEST_CASE("prefix extraction is self-contained and sized by layer costs") {
  std::mt19937 rng(6);
  const auto s = sample_stream(rng, 4);
  const auto bytes = pack(s);
  size_t acc = 0;
  for (int k = 0; k < 4; ++k) {
    acc += layer_cost_bytes(s, k);
    const auto prefix = extract_prefix(bytes, k);
    CHECK(prefix.size() == acc);
    CHECK(prefix == pack(extract_prefix(s, k)));
    const auto parsed = unpack(prefix);
    CHECK(parsed.layer_count() == k + 1);
    CHECK(same(parsed, extract_prefix(s, k)));
  }
}

TEST_CASE("raw byte prefixes decode up to the complete layers") {
  std::mt19937 rng(7);
  const auto s = sample_stream(rng, 3);
  const auto bytes = pack(s);
  size_t header = kFixedHeaderBytes + 3 * kPerLayerHeaderBytes;
  size_t end = header;
  for (int k = 0; k < 3; ++k) {
    end += s.layers[k].substream_bytes();
    const std::span<const uint8_t> cut(bytes.data(), end);
    CHECK(same(unpack(cut, k), extract_prefix(s, k)));
    if (k < 2) CHECK_THROWS_AS(unpack(cut, k + 1), DecodeError);
  }
}

TEST_CASE("malformed streams are rejected") {
  std::mt19937 rng(8);
  const auto s = sample_stream(rng, 2);
  const auto good = pack(s);

  auto bad = good;
  bad[0] = 'X';
  CHECK_THROWS_AS(unpack(bad), DecodeError);

  bad = good;
  bad[4] = 2;
  CHECK_THROWS_AS(unpack(bad), DecodeError);

  bad = good;
  bad.back() ^= 1;
  CHECK_THROWS_AS(unpack(bad), DecodeError);

  bad = good;
  bad[kFixedHeaderBytes + 2 * kPerLayerHeaderBytes + 6] ^= 0x40;  // inside layer 0
  CHECK_THROWS_AS(unpack(bad), DecodeError);

  bad = good;
  bad.push_back(0);
  CHECK_THROWS_AS(unpack(bad), DecodeError);

  for (size_t n = 0; n < good.size(); ++n) {
    CHECK_THROWS_AS(unpack(std::span(good.data(), n)), DecodeError);
  }
  CHECK_THROWS_AS(unpack(good, 2), DecodeError);
  CHECK_THROWS_AS(extract_prefix(s, 2), std::invalid_argument);
}

TEST_CASE("pack validates its input") {
  ScalableBitstream s;
  CHECK_THROWS_AS(pack(s), std::invalid_argument);
  s.dims = {{70000, 4}};
  s.layers = {{}};
  CHECK_THROWS_AS(pack(s), std::invalid_argument);
  s.dims = {{4, 4}, {8, 8}};
  CHECK_THROWS_AS(pack(s), std::invalid_argument);
}
