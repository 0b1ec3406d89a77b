#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace compass {

/// Load an 8-bit PNG or binary PPM (P6, maxval up to 65535) as a [3, H, W]
/// float tensor on [0, 1]. Throws DataError on unreadable files.
torch::Tensor load_image(const std::filesystem::path& path);

/// Write a [3, H, W] image on [0, 1] as 8-bit PNG or P6 PPM, chosen by
/// extension. Values are clamped and rounded to nearest.
void save_image(const torch::Tensor& image, const std::filesystem::path& path);

bool is_image_file(const std::filesystem::path& path);

/// Image files directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Write `bytes` to `path` through a temporary file and a rename, so readers
/// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace compass
