#include "spot/render.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "spot/errors.hpp"

namespace spot {
namespace {

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, std::span<const std::uint8_t> data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

// Viridis control points at t = 0, 1/8, ..., 1.
constexpr std::array<std::array<double, 3>, 9> kViridis = {{
    {0.267, 0.005, 0.329},
    {0.283, 0.141, 0.458},
    {0.254, 0.265, 0.530},
    {0.207, 0.372, 0.553},
    {0.164, 0.471, 0.558},
    {0.128, 0.567, 0.551},
    {0.135, 0.659, 0.518},
    {0.267, 0.749, 0.441},
    {0.993, 0.906, 0.144},
}};

std::string num(double v) {
  // Four decimals keep rendered positions within 10⁻⁴ px of the trajectory.
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image& image) {
  const int w = image.width(), h = image.height(), c = image.channels();
  const auto bytes = image.to_bytes();
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(h) * (w * c + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), bytes.begin() + static_cast<std::ptrdiff_t>(y) * w * c,
               bytes.begin() + static_cast<std::ptrdiff_t>(y + 1) * w * c);
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_len);
  if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw std::runtime_error("png: zlib compression failed");
  }
  packed.resize(packed_len);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(w));
  put_u32be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);
  ihdr.push_back(c == 3 ? 2 : 0);
  ihdr.insert(ihdr.end(), {0, 0, 0});
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", packed);
  put_chunk(out, "IEND", {});
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[v >> 18];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string viridis_hex(double t) {
  t = std::clamp(t, 0.0, 1.0) * (kViridis.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), kViridis.size() - 2);
  const double f = t - static_cast<double>(i);
  char buf[8];
  int rgb[3];
  for (int c = 0; c < 3; ++c) {
    rgb[c] = static_cast<int>(std::lround(255.0 * ((1.0 - f) * kViridis[i][c] + f * kViridis[i + 1][c])));
  }
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

std::string render_trajectory_svg(const Image& image, std::span<const PlacementSet> rows, int window, double scale) {
  if (rows.empty()) throw DataError("render: trajectory has no rows");
  if (window < 1) throw std::invalid_argument("render: window must be >= 1");
  const std::size_t m = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != m) throw DataError("render: rows differ in token count");
    validate_placements(r, image.height(), image.width());
  }
  const int steps = static_cast<int>(rows.size()) - 1;
  const double W = image.width(), H = image.height();

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(W * scale) << "\" height=\"" << num(H * scale)
     << "\" viewBox=\"-0.5 -0.5 " << W << ' ' << H << "\">\n";
  os << "<image x=\"-0.5\" y=\"-0.5\" width=\"" << W << "\" height=\"" << H
     << "\" style=\"image-rendering:pixelated\" href=\"data:image/png;base64," << base64_encode(encode_png(image))
     << "\"/>\n";

  os << "<defs>\n";
  for (std::size_t i = 0; i < m; ++i) {
    const Point a = rows.front()[i], b = rows.back()[i];
    os << "<linearGradient id=\"g" << i << "\" gradientUnits=\"userSpaceOnUse\" x1=\"" << num(a.x) << "\" y1=\""
       << num(a.y) << "\" x2=\"" << num(b.x) << "\" y2=\"" << num(b.y) << "\"><stop offset=\"0\" stop-color=\""
       << viridis_hex(0.0) << "\"/><stop offset=\"1\" stop-color=\"" << viridis_hex(1.0) << "\"/></linearGradient>\n";
  }
  os << "</defs>\n";

  os << "<g fill=\"none\" stroke-width=\"0.25\">\n";
  for (std::size_t i = 0; i < m; ++i) {
    os << "<polyline stroke=\"url(#g" << i << ")\" points=\"";
    for (int t = 0; t <= steps; ++t) os << (t ? " " : "") << num(rows[t][i].x) << ',' << num(rows[t][i].y);
    os << "\"/>\n";
  }
  os << "</g>\n<g class=\"steps\">\n";
  for (int t = 1; t <= steps; ++t) {
    const std::string color = viridis_hex(static_cast<double>(t) / steps);
    for (std::size_t i = 0; i < m; ++i) {
      os << "<circle class=\"step\" cx=\"" << num(rows[t][i].x) << "\" cy=\"" << num(rows[t][i].y)
         << "\" r=\"0.2\" fill=\"" << color << "\"/>\n";
    }
  }
  os << "</g>\n<g class=\"starts\" fill=\"" << viridis_hex(0.0) << "\">\n";
  for (std::size_t i = 0; i < m; ++i) {
    os << "<circle class=\"start\" cx=\"" << num(rows.front()[i].x) << "\" cy=\"" << num(rows.front()[i].y)
       << "\" r=\"0.45\"/>\n";
  }
  os << "</g>\n<g fill=\"none\" stroke=\"" << viridis_hex(1.0) << "\" stroke-width=\"0.2\">\n";
  const double half = window / 2.0;
  for (std::size_t i = 0; i < m; ++i) {
    const Point s = rows.back()[i];
    os << "<rect x=\"" << num(s.x - half) << "\" y=\"" << num(s.y - half) << "\" width=\"" << window << "\" height=\""
       << window << "\"/>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

void render_trajectory_file(const std::filesystem::path& trajectory_csv, const std::filesystem::path& image_path,
                            const std::filesystem::path& out_svg, int window) {
  const auto rows = read_placements_csv(trajectory_csv);
  const Image image = load_image(image_path);
  const std::string svg = render_trajectory_svg(image, rows, window);
  write_file_bytes(out_svg, std::span(reinterpret_cast<const std::uint8_t*>(svg.data()), svg.size()));
}

}  // namespace spot
