#include "compass/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "compass/errors.hpp"

namespace compass {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

torch::Tensor from_hwc_u8(const std::vector<uint8_t>& buf, int64_t h, int64_t w) {
  auto t = torch::from_blob(const_cast<uint8_t*>(buf.data()), {h, w, 3}, torch::kUInt8);
  return t.permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
}

std::vector<uint8_t> to_hwc_u8(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(0) != 3) {
    throw std::invalid_argument("save_image: expected [3, H, W], got " + c10::str(image.sizes()));
  }
  const auto t = image.detach()
                     .to(torch::kDouble)
                     .clamp(0.0, 1.0)
                     .mul(255.0)
                     .round()
                     .to(torch::kUInt8)
                     .permute({1, 2, 0})
                     .contiguous();
  const auto* p = t.data_ptr<uint8_t>();
  return {p, p + t.numel()};
}

torch::Tensor load_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return from_hwc_u8(buf, img.height, img.width);
}

std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

torch::Tensor load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (next_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(next_token(in));
    h = std::stoll(next_token(in));
    maxval = std::stoll(next_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) {
    throw DataError(path.string() + ": unsupported PPM header");
  }
  in.get();
  const int64_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<uint8_t> raw(static_cast<size_t>(w * h * 3 * bytes_per));
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw DataError(path.string() + ": truncated PPM data");
  }
  auto out = torch::empty({h, w, 3}, torch::kFloat);
  auto* o = out.data_ptr<float>();
  for (int64_t n = 0; n < h * w * 3; ++n) {
    const int64_t v = bytes_per == 2 ? (raw[2 * n] << 8) | raw[2 * n + 1] : raw[n];
    o[n] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
  }
  return out.permute({2, 0, 1}).contiguous();
}

}  // namespace

bool is_image_file(const fs::path& path) {
  const auto ext = lower_ext(path);
  return ext == ".png" || ext == ".ppm";
}

torch::Tensor load_image(const fs::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return load_png(path);
  if (ext == ".ppm") return load_ppm(path);
  throw DataError("unsupported image format: " + path.string());
}

void save_image(const torch::Tensor& image, const fs::path& path) {
  const auto buf = to_hwc_u8(image);
  const auto h = image.size(1), w = image.size(2);
  const auto ext = lower_ext(path);
  std::string bytes;
  if (ext == ".ppm") {
    bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    bytes.append(reinterpret_cast<const char*>(buf.data()), buf.size());
  } else if (ext == ".png") {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_get_memory_size(img, size, 0, buf.data(), 0, nullptr)) {
      throw DataError("cannot encode PNG: " + std::string(img.message));
    }
    bytes.resize(size);
    if (!png_image_write_to_memory(&img, bytes.data(), &size, 0, buf.data(), 0, nullptr)) {
      throw DataError("cannot encode PNG: " + std::string(img.message));
    }
    bytes.resize(size);
  } else {
    throw DataError("unsupported output image format: " + path.string());
  }
  write_file_atomic(path, bytes);
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace compass
