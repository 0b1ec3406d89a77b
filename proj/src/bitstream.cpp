#include "compass/bitstream.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>

#include "compass/errors.hpp"

namespace compass {
namespace {

constexpr uint8_t kMagic[4] = {'C', 'M', 'P', 'S'};

void put_u16(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<uint8_t>(v >> shift));
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

  std::span<const uint8_t> take(size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DecodeError(std::string("cmps: truncated while reading ") + what);
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  uint32_t u8(const char* what) { return take(1, what)[0]; }
  uint32_t u16(const char* what) {
    auto s = take(2, what);
    return (uint32_t{s[0]} << 8) | s[1];
  }
  uint32_t u32(const char* what) {
    auto s = take(4, what);
    return (uint32_t{s[0]} << 24) | (uint32_t{s[1]} << 16) | (uint32_t{s[2]} << 8) | s[3];
  }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const uint8_t> bytes_;
  size_t pos_ = 0;
};

}  // namespace

uint32_t adler32(std::span<const uint8_t> bytes) {
  constexpr uint32_t kMod = 65521;
  uint32_t a = 1, b = 0;
  for (const uint8_t byte : bytes) {
    a = (a + byte) % kMod;
    b = (b + a) % kMod;
  }
  return (b << 16) | a;
}

std::vector<uint8_t> pack(const ScalableBitstream& stream) {
  const auto layers = stream.layers.size();
  if (layers == 0 || layers > 255) throw std::invalid_argument("pack: need 1..255 layers");
  if (stream.dims.size() != layers) throw std::invalid_argument("pack: dims/layers mismatch");

  std::vector<uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(stream.version);
  out.push_back(static_cast<uint8_t>(layers));
  out.push_back(stream.quality);
  for (const auto& d : stream.dims) {
    if (d.h < 1 || d.w < 1 || d.h > 0xFFFF || d.w > 0xFFFF) {
      throw std::invalid_argument("pack: layer dims must be in [1, 65535]");
    }
    put_u16(out, static_cast<uint32_t>(d.h));
    put_u16(out, static_cast<uint32_t>(d.w));
  }
  for (const auto& l : stream.layers) put_u32(out, static_cast<uint32_t>(l.substream_bytes()));
  for (const auto& l : stream.layers) {
    const auto start = out.size();
    put_u32(out, static_cast<uint32_t>(l.z.size()));
    out.insert(out.end(), l.z.begin(), l.z.end());
    out.insert(out.end(), l.y.begin(), l.y.end());
    const auto sum = adler32(std::span(out).subspan(start));
    put_u32(out, sum);
  }
  return out;
}

ScalableBitstream unpack(std::span<const uint8_t> bytes, std::optional<int> up_to) {
  Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw DecodeError("cmps: bad magic");
  }
  ScalableBitstream stream;
  stream.version = static_cast<uint8_t>(in.u8("version"));
  if (stream.version != kBitstreamVersion) {
    throw DecodeError("cmps: unsupported version " + std::to_string(stream.version));
  }
  const int layers = static_cast<int>(in.u8("layer count"));
  stream.quality = static_cast<uint8_t>(in.u8("quality"));
  if (layers == 0) throw DecodeError("cmps: zero layers");
  const int keep = up_to ? *up_to + 1 : layers;
  if (keep < 1 || keep > layers) {
    throw DecodeError("cmps: requested layer " + std::to_string(keep - 1) + " but stream has " +
                      std::to_string(layers));
  }
  std::vector<Dims> dims(layers);
  for (auto& d : dims) {
    d.h = in.u16("layer height");
    d.w = in.u16("layer width");
    if (d.h == 0 || d.w == 0) throw DecodeError("cmps: zero layer dimension");
  }
  std::vector<uint32_t> lengths(layers);
  for (auto& len : lengths) len = in.u32("substream length");

  stream.dims.assign(dims.begin(), dims.begin() + keep);
  for (int k = 0; k < keep; ++k) {
    const auto sub = in.take(lengths[k], "substream");
    if (sub.size() < kSubstreamOverheadBytes) throw DecodeError("cmps: substream too short");
    const auto body = sub.first(sub.size() - 4);
    Reader tail(sub.last(4));
    if (adler32(body) != tail.u32("checksum")) {
      throw DecodeError("cmps: checksum mismatch in layer " + std::to_string(k));
    }
    Reader body_in(body);
    const uint32_t zlen = body_in.u32("z length");
    if (zlen > body.size() - 4) throw DecodeError("cmps: z length exceeds substream");
    LayerPayload payload;
    const auto z = body.subspan(4, zlen);
    const auto y = body.subspan(4 + zlen);
    payload.z.assign(z.begin(), z.end());
    payload.y.assign(y.begin(), y.end());
    stream.layers.push_back(std::move(payload));
  }
  if (!up_to && in.remaining() != 0) throw DecodeError("cmps: trailing bytes after last layer");
  return stream;
}

ScalableBitstream extract_prefix(const ScalableBitstream& stream, int k) {
  if (k < 0 || k >= stream.layer_count()) {
    throw std::invalid_argument("extract_prefix: layer " + std::to_string(k) + " out of range");
  }
  ScalableBitstream out;
  out.version = stream.version;
  out.quality = stream.quality;
  out.dims.assign(stream.dims.begin(), stream.dims.begin() + k + 1);
  out.layers.assign(stream.layers.begin(), stream.layers.begin() + k + 1);
  return out;
}

std::vector<uint8_t> extract_prefix(std::span<const uint8_t> bytes, int k) {
  return pack(unpack(bytes, k));
}

size_t layer_cost_bytes(const ScalableBitstream& stream, int k) {
  const auto& layer = stream.layers.at(static_cast<size_t>(k));
  return layer.substream_bytes() + kPerLayerHeaderBytes + (k == 0 ? kFixedHeaderBytes : 0);
}

}  // namespace compass
