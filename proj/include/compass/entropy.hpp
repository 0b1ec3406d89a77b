#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace compass {

inline constexpr int kCdfPrecision = 16;
inline constexpr uint32_t kCdfTotal = 1u << kCdfPrecision;
inline constexpr int32_t kDefaultSymbolRange = 64;
/// Escaped values are sent verbatim as a 32-bit two's complement word.
inline constexpr int kEscapeRawBits = 32;

/// Integer CDF over the symbols [-range, range] followed by one escape slot.
///
/// cdf has 2*range + 3 entries: cdf[0] = 0, cdf.back() = 2^16 and every slot
/// carries a mass of at least one.
struct CdfTable {
  int32_t range = kDefaultSymbolRange;
  std::vector<uint32_t> cdf;

  int32_t slots() const { return static_cast<int32_t>(cdf.size()) - 1; }
  int32_t escape_slot() const { return slots() - 1; }
  uint32_t mass(int32_t slot) const { return cdf[slot + 1] - cdf[slot]; }
  /// Slot for a symbol value; values outside [-range, range] map to escape.
  int32_t slot_of(int32_t value) const {
    return (value < -range || value > range) ? escape_slot() : value + range;
  }
};

/// Quantize real-valued slot probabilities (2*range + 2 of them, escape last)
/// to a 16-bit table. Each mass is rounded to nearest with a floor of one;
/// the total is then corrected on the largest slot (lowest index on ties).
CdfTable quantize_masses(std::span<const double> masses, int32_t range);

/// Slot probabilities of a Gaussian N(mu, sigma) integrated over unit bins
/// centered on the integers, plus the two-sided tail mass as escape.
std::vector<double> gaussian_bin_masses(double mu, double sigma, int32_t range);

CdfTable build_gaussian_cdf(double mu, double sigma, int32_t range = kDefaultSymbolRange);

/// Model cost of `symbols` in bits: -log2(mass / 2^16) per symbol plus the raw
/// escape payload.
double model_bits(std::span<const int32_t> symbols, std::span<const CdfTable> tables,
                  std::span<const int32_t> indexes);

/// Carry-less 32-bit range coder with 16-bit frequencies.
class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq);
  void encode_raw16(uint32_t bits);
  std::vector<uint8_t> finish();

 private:
  void normalize();

  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  std::vector<uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const uint8_t> bytes);

  /// Cumulative frequency of the next symbol; must be followed by consume().
  uint32_t peek();
  void consume(uint32_t cum, uint32_t freq);
  uint32_t decode_raw16();
  /// True once the decoder has read past the end of its input.
  bool overrun() const { return pos_ > bytes_.size(); }

 private:
  uint8_t next_byte();
  void normalize();

  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

/// Code `symbols[n]` with `tables[indexes[n]]`. An empty `indexes` means
/// symbol n uses table n.
std::vector<uint8_t> encode_symbols(std::span<const int32_t> symbols,
                                    std::span<const CdfTable> tables,
                                    std::span<const int32_t> indexes = {});

/// Inverse of encode_symbols. Throws DecodeError when the stream is too short
/// for `count` symbols.
std::vector<int32_t> decode_symbols(std::span<const uint8_t> bytes,
                                    std::span<const CdfTable> tables, size_t count,
                                    std::span<const int32_t> indexes = {});

}  // namespace compass
