#include "compass/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "compass/errors.hpp"

namespace compass {
namespace {

constexpr uint32_t kTop = 1u << 24;
constexpr uint32_t kBottom = 1u << 16;

double upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }
double lower_tail(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

const CdfTable& table_for(std::span<const CdfTable> tables, std::span<const int32_t> indexes,
                          size_t n) {
  const size_t t = indexes.empty() ? n : static_cast<size_t>(indexes[n]);
  if (t >= tables.size()) throw std::invalid_argument("entropy: table index out of range");
  return tables[t];
}

}  // namespace

CdfTable quantize_masses(std::span<const double> masses, int32_t range) {
  const size_t slots = static_cast<size_t>(2 * range + 2);
  if (range < 0 || masses.size() != slots) {
    throw std::invalid_argument("quantize_masses: expected " + std::to_string(slots) +
                                " slot masses");
  }
  std::vector<int64_t> freq(slots);
  int64_t total = 0;
  for (size_t s = 0; s < slots; ++s) {
    const double p = std::isfinite(masses[s]) ? std::max(masses[s], 0.0) : 0.0;
    freq[s] = std::max<int64_t>(1, std::llround(p * kCdfTotal));
    total += freq[s];
  }
  auto largest = [&] { return std::max_element(freq.begin(), freq.end()) - freq.begin(); };
  if (total < kCdfTotal) {
    freq[largest()] += kCdfTotal - total;
  }
  while (total > kCdfTotal) {
    const auto s = largest();
    const int64_t take = std::min<int64_t>(total - kCdfTotal, freq[s] - 1);
    freq[s] -= take;
    total -= take;
  }
  CdfTable table{range, std::vector<uint32_t>(slots + 1)};
  for (size_t s = 0; s < slots; ++s) {
    table.cdf[s + 1] = table.cdf[s] + static_cast<uint32_t>(freq[s]);
  }
  return table;
}

std::vector<double> gaussian_bin_masses(double mu, double sigma, int32_t range) {
  std::vector<double> masses(static_cast<size_t>(2 * range + 2));
  for (int32_t v = -range; v <= range; ++v) {
    // Integrate on the side of the mean where the tail is small to avoid
    // cancellation far from mu.
    const double d = static_cast<double>(v) - mu;
    const double lo = (d - 0.5) / sigma;
    const double hi = (d + 0.5) / sigma;
    masses[v + range] = d >= 0 ? upper_tail(lo) - upper_tail(hi) : lower_tail(hi) - lower_tail(lo);
  }
  const double r = static_cast<double>(range);
  masses.back() = lower_tail((-r - 0.5 - mu) / sigma) + upper_tail((r + 0.5 - mu) / sigma);
  return masses;
}

CdfTable build_gaussian_cdf(double mu, double sigma, int32_t range) {
  if (!(sigma > 0)) throw std::invalid_argument("build_gaussian_cdf: sigma must be positive");
  return quantize_masses(gaussian_bin_masses(mu, sigma, range), range);
}

double model_bits(std::span<const int32_t> symbols, std::span<const CdfTable> tables,
                  std::span<const int32_t> indexes) {
  double bits = 0;
  for (size_t n = 0; n < symbols.size(); ++n) {
    const auto& t = table_for(tables, indexes, n);
    const auto slot = t.slot_of(symbols[n]);
    bits += kCdfPrecision - std::log2(static_cast<double>(t.mass(slot)));
    if (slot == t.escape_slot()) bits += kEscapeRawBits;
  }
  return bits;
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
  range_ >>= kCdfPrecision;
  low_ += cum * range_;
  range_ *= freq;
  normalize();
}

void RangeEncoder::encode_raw16(uint32_t bits) { encode(bits & 0xFFFFu, 1); }

void RangeEncoder::normalize() {
  while (true) {
    if ((low_ ^ (low_ + range_)) >= kTop) {
      if (range_ >= kBottom) break;
      range_ = (0u - low_) & (kBottom - 1);
    }
    out_.push_back(static_cast<uint8_t>(low_ >> 24));
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 4; ++i) {
    out_.push_back(static_cast<uint8_t>(low_ >> 24));
    low_ <<= 8;
  }
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  const uint8_t b = pos_ < bytes_.size() ? bytes_[pos_] : 0;
  ++pos_;
  return b;
}

uint32_t RangeDecoder::peek() {
  range_ >>= kCdfPrecision;
  const uint32_t value = (code_ - low_) / range_;
  return std::min(value, kCdfTotal - 1);
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq) {
  low_ += cum * range_;
  range_ *= freq;
  normalize();
}

uint32_t RangeDecoder::decode_raw16() {
  const uint32_t v = peek();
  consume(v, 1);
  return v;
}

void RangeDecoder::normalize() {
  while (true) {
    if ((low_ ^ (low_ + range_)) >= kTop) {
      if (range_ >= kBottom) break;
      range_ = (0u - low_) & (kBottom - 1);
    }
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

std::vector<uint8_t> encode_symbols(std::span<const int32_t> symbols,
                                    std::span<const CdfTable> tables,
                                    std::span<const int32_t> indexes) {
  if (!indexes.empty() && indexes.size() != symbols.size()) {
    throw std::invalid_argument("encode_symbols: indexes and symbols differ in length");
  }
  RangeEncoder enc;
  for (size_t n = 0; n < symbols.size(); ++n) {
    const auto& t = table_for(tables, indexes, n);
    const auto slot = t.slot_of(symbols[n]);
    enc.encode(t.cdf[slot], t.mass(slot));
    if (slot == t.escape_slot()) {
      const auto raw = static_cast<uint32_t>(symbols[n]);
      enc.encode_raw16(raw >> 16);
      enc.encode_raw16(raw);
    }
  }
  return enc.finish();
}

std::vector<int32_t> decode_symbols(std::span<const uint8_t> bytes,
                                    std::span<const CdfTable> tables, size_t count,
                                    std::span<const int32_t> indexes) {
  if (!indexes.empty() && indexes.size() != count) {
    throw std::invalid_argument("decode_symbols: indexes and count differ");
  }
  RangeDecoder dec(bytes);
  std::vector<int32_t> out(count);
  for (size_t n = 0; n < count; ++n) {
    const auto& t = table_for(tables, indexes, n);
    const uint32_t target = dec.peek();
    const auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), target);
    const auto slot = static_cast<int32_t>(it - t.cdf.begin()) - 1;
    dec.consume(t.cdf[slot], t.mass(slot));
    if (slot == t.escape_slot()) {
      const uint32_t hi = dec.decode_raw16();
      const uint32_t lo = dec.decode_raw16();
      out[n] = static_cast<int32_t>((hi << 16) | lo);
    } else {
      out[n] = slot - t.range;
    }
    if (dec.overrun()) throw DecodeError("decode_symbols: stream truncated");
  }
  return out;
}

}  // namespace compass
