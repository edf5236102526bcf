#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace spot {

/// H×W×C image with values in [0,1], stored row-major as (h, w, c).
/// Immutable after construction.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, std::vector<double> data);

  /// Builds an image from 8-bit samples mapped by b/255.
  static Image from_bytes(int height, int width, int channels, std::span<const std::uint8_t> bytes);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  double at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }
  std::span<const double> data() const { return data_; }

  /// Re-quantizes to bytes via round(v·255).
  std::vector<std::uint8_t> to_bytes() const;

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// H×W saliency mask with values in [0,1].
class SaliencyMask {
 public:
  SaliencyMask() = default;
  SaliencyMask(int height, int width, std::vector<double> data);

  static SaliencyMask from_bytes(int height, int width, std::span<const std::uint8_t> bytes);

  int height() const { return height_; }
  int width() const { return width_; }
  double at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const double> data() const { return data_; }
  std::vector<std::uint8_t> to_bytes() const;

  /// Views the mask as a single-channel image, for sharing the bilinear sampler.
  Image as_image() const;

  bool operator==(const SaliencyMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// TensorFile: "SPTF" | u32 version | u32 dtype | u32 ndim | u32 dims[ndim] | payload.
// Everything little-endian; payload row-major.
enum class DType : std::uint32_t { f32 = 0, f64 = 1 };

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
  DType dtype = DType::f64;

  std::size_t element_count() const;
  bool operator==(const Tensor&) const = default;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
/// Decodes one tensor starting at `offset`; advances `offset` past it.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

/// Accepts binary PPM (P6, maxval 255) or a TensorFile with ndim = 3 (H, W, C).
Image load_image(const std::filesystem::path& path);
/// Accepts binary PGM (P5, maxval 255) or a TensorFile with ndim = 2.
SaliencyMask load_mask(const std::filesystem::path& path);

/// Writes P6 (3 channels) or P5 (1 channel); values re-quantized with round(v·255).
void save_ppm(const std::filesystem::path& path, const Image& image);
void save_pgm(const std::filesystem::path& path, const SaliencyMask& mask);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// FNV-1a over raw bytes; used for digests in manifests and freeze checks.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t digest_doubles(std::span<const double> values);
std::string hex64(std::uint64_t v);

}  // namespace spot
