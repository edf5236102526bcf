#include "spot/imagery.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spot/errors.hpp"

namespace spot {
namespace {

static_assert(std::endian::native == std::endian::little, "TensorFile I/O assumes a little-endian host");

void check_unit_range(std::span<const double> data, const char* what) {
  for (double v : data) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DataError(std::string(what) + ": value outside [0,1]");
    }
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (offset + 4 > bytes.size()) throw DataError("tensor: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  offset += 4;
  return v;
}

// Netpbm header: magic, width, height, maxval, separated by whitespace with
// '#' comments, then exactly one whitespace byte before the raster.
struct PnmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm(std::span<const std::uint8_t> bytes, char kind) {
  if (bytes.size() < 3 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
    throw DataError(std::string("pnm: expected P") + kind + " header");
  }
  std::size_t pos = 2;
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw DataError("pnm: malformed header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1L << 24)) throw DataError("pnm: header value too large");
      ++pos;
    }
    return v;
  };
  PnmHeader h;
  h.width = static_cast<int>(next_int());
  h.height = static_cast<int>(next_int());
  h.maxval = static_cast<int>(next_int());
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw DataError("pnm: malformed header");
  h.data_offset = pos + 1;
  if (h.maxval != 255) throw DataError("pnm: maxval must be 255");
  if (h.width < 2 || h.height < 2) throw DataError("pnm: dimension < 2");
  return h;
}

bool has_tensor_magic(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 4 && std::memcmp(bytes.data(), "SPTF", 4) == 0;
}

}  // namespace

Image::Image(int height, int width, int channels, std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (height < 2 || width < 2) throw DataError("image: dimension < 2");
  if (channels != 1 && channels != 3) throw DataError("image: channels must be 1 or 3");
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw DataError("image: data length does not match H*W*C");
  }
  check_unit_range(data_, "image");
}

Image Image::from_bytes(int height, int width, int channels, std::span<const std::uint8_t> bytes) {
  std::vector<double> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
  return Image(height, width, channels, std::move(data));
}

std::vector<std::uint8_t> Image::to_bytes() const {
  std::vector<std::uint8_t> out(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<std::uint8_t>(std::lround(data_[i] * 255.0));
  return out;
}

SaliencyMask::SaliencyMask(int height, int width, std::vector<double> data)
    : height_(height), width_(width), data_(std::move(data)) {
  if (height < 2 || width < 2) throw DataError("mask: dimension < 2");
  if (data_.size() != static_cast<std::size_t>(height) * width) throw DataError("mask: data length does not match H*W");
  check_unit_range(data_, "mask");
}

SaliencyMask SaliencyMask::from_bytes(int height, int width, std::span<const std::uint8_t> bytes) {
  std::vector<double> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
  return SaliencyMask(height, width, std::move(data));
}

std::vector<std::uint8_t> SaliencyMask::to_bytes() const {
  std::vector<std::uint8_t> out(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<std::uint8_t>(std::lround(data_[i] * 255.0));
  return out;
}

Image SaliencyMask::as_image() const { return Image(height_, width_, 1, data_); }

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return dims.empty() ? 0 : n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.dims.empty()) throw std::invalid_argument("tensor: dims must be nonempty");
  if (tensor.values.size() != tensor.element_count()) throw std::invalid_argument("tensor: value count does not match dims");
  for (double v : tensor.values)
    if (!std::isfinite(v)) throw std::invalid_argument("tensor: non-finite value");
  std::vector<std::uint8_t> out{'S', 'P', 'T', 'F'};
  put_u32(out, kTensorFileVersion);
  put_u32(out, static_cast<std::uint32_t>(tensor.dtype));
  put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_u32(out, d);
  const std::size_t header = out.size();
  if (tensor.dtype == DType::f64) {
    out.resize(header + tensor.values.size() * 8);
    std::memcpy(out.data() + header, tensor.values.data(), tensor.values.size() * 8);
  } else {
    out.resize(header + tensor.values.size() * 4);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      const float f = static_cast<float>(tensor.values[i]);
      std::memcpy(out.data() + header + i * 4, &f, 4);
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (offset + 4 > bytes.size() || std::memcmp(bytes.data() + offset, "SPTF", 4) != 0) {
    throw DataError("tensor: bad magic");
  }
  offset += 4;
  const std::uint32_t version = get_u32(bytes, offset);
  if (version != kTensorFileVersion) throw DataError("tensor: unsupported version " + std::to_string(version));
  const std::uint32_t dtype = get_u32(bytes, offset);
  if (dtype > 1) throw DataError("tensor: unknown dtype code");
  const std::uint32_t ndim = get_u32(bytes, offset);
  if (ndim == 0 || ndim > 16) throw DataError("tensor: invalid ndim");
  Tensor t;
  t.dtype = static_cast<DType>(dtype);
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get_u32(bytes, offset));
  const std::size_t n = t.element_count();
  const std::size_t width = t.dtype == DType::f64 ? 8 : 4;
  if (offset + n * width > bytes.size()) throw DataError("tensor: truncated payload");
  t.values.resize(n);
  if (t.dtype == DType::f64) {
    std::memcpy(t.values.data(), bytes.data() + offset, n * 8);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + offset + i * 4, 4);
      t.values[i] = f;
    }
  }
  offset += n * width;
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  for (double v : tensor.values) {
    if (!std::isfinite(v)) throw std::invalid_argument("tensor: values must be finite");
  }
  write_file_bytes(path, encode_tensor(tensor));
}

Tensor load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw DataError("tensor: trailing bytes after payload");
  return t;
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (has_tensor_magic(bytes)) {
    std::size_t offset = 0;
    Tensor t = decode_tensor(bytes, offset);
    if (t.dims.size() != 3) throw DataError("tensor: not an image (ndim != 3)");
    return Image(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]),
                 std::move(t.values));
  }
  const PnmHeader h = parse_pnm(bytes, '6');
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  if (h.data_offset + n > bytes.size()) throw DataError("pnm: truncated payload");
  return Image::from_bytes(h.height, h.width, 3, std::span(bytes).subspan(h.data_offset, n));
}

SaliencyMask load_mask(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (has_tensor_magic(bytes)) {
    std::size_t offset = 0;
    Tensor t = decode_tensor(bytes, offset);
    if (t.dims.size() != 2) throw DataError("tensor: not a mask (ndim != 2)");
    return SaliencyMask(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), std::move(t.values));
  }
  const PnmHeader h = parse_pnm(bytes, '5');
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (h.data_offset + n > bytes.size()) throw DataError("pnm: truncated payload");
  return SaliencyMask::from_bytes(h.height, h.width, std::span(bytes).subspan(h.data_offset, n));
}

void save_ppm(const std::filesystem::path& path, const Image& image) {
  const char kind = image.channels() == 3 ? '6' : '5';
  std::string header = std::string("P") + kind + "\n" + std::to_string(image.width()) + " " +
                       std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto raster = image.to_bytes();
  out.insert(out.end(), raster.begin(), raster.end());
  write_file_bytes(path, out);
}

void save_pgm(const std::filesystem::path& path, const SaliencyMask& mask) { save_ppm(path, mask.as_image()); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t digest_doubles(std::span<const double> values) {
  return fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(values.data()), values.size() * sizeof(double)));
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace spot
