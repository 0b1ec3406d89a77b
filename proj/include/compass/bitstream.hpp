#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "compass/coords.hpp"

namespace compass {

/// `.cmps` container, all integers big-endian:
///
///   "CMPS" | version u8 | layers u8 | quality u8
///   layers x (height u16, width u16)
///   layers x (substream length u32)
///   layers x substream
///
/// substream = z length u32 | z bytes | y bytes | adler32 u32
/// The checksum covers every substream byte before it.
inline constexpr uint8_t kBitstreamVersion = 1;
inline constexpr size_t kFixedHeaderBytes = 7;
inline constexpr size_t kPerLayerHeaderBytes = 8;
inline constexpr size_t kSubstreamOverheadBytes = 8;

struct LayerPayload {
  std::vector<uint8_t> z;
  std::vector<uint8_t> y;

  size_t substream_bytes() const { return kSubstreamOverheadBytes + z.size() + y.size(); }
};

struct ScalableBitstream {
  uint8_t version = kBitstreamVersion;
  uint8_t quality = 0;
  std::vector<Dims> dims;
  std::vector<LayerPayload> layers;

  int layer_count() const { return static_cast<int>(layers.size()); }
};

uint32_t adler32(std::span<const uint8_t> bytes);

std::vector<uint8_t> pack(const ScalableBitstream& stream);

/// Parse a stream. With `up_to` set, only the substreams of layers 0..up_to
/// must be present, so a byte prefix of a longer stream is accepted; the
/// result then holds layers 0..up_to only.
ScalableBitstream unpack(std::span<const uint8_t> bytes, std::optional<int> up_to = std::nullopt);

/// Layers 0..k of `stream` as a self-contained stream.
ScalableBitstream extract_prefix(const ScalableBitstream& stream, int k);
std::vector<uint8_t> extract_prefix(std::span<const uint8_t> bytes, int k);

/// Bytes that layer k adds to a stream: its substream, its header fields and,
/// for the base layer, the fixed header. Summing layers 0..k gives the size of
/// extract_prefix(stream, k).
size_t layer_cost_bytes(const ScalableBitstream& stream, int k);

}  // namespace compass
