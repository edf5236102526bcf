#include "spot/subpixel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "spot/errors.hpp"
#include "spot/rng.hpp"

namespace spot {
namespace {

// Interpolation cell along one axis: base index, fractional weight, and
// whether the coordinate was clamped to the domain (zero derivative then).
struct Cell {
  int lo;
  double frac;
  bool clamped;
};

Cell locate(double v, int extent) {
  Cell cell{};
  const double hi = extent - 1.0;
  double c = v;
  cell.clamped = false;
  if (c < 0.0) {
    c = 0.0;
    cell.clamped = true;
  } else if (c >= hi) {
    // The right-hand cell at the last row/column lies in the replicated
    // border, where the image is flat.
    c = hi;
    cell.clamped = true;
  }
  int lo = static_cast<int>(std::floor(c));
  if (lo >= extent - 1) lo = extent - 2;
  cell.lo = lo;
  cell.frac = c - lo;
  return cell;
}

void check_in_bounds(const Image& image, Point s) {
  if (!std::isfinite(s.x) || !std::isfinite(s.y) || s.x < 0.0 || s.y < 0.0 || s.x > image.width() - 1.0 ||
      s.y > image.height() - 1.0) {
    throw DataError("placement outside [0,W-1]x[0,H-1]");
  }
}

}  // namespace

void TokenizerConfig::validate() const {
  if (window < 1) throw std::invalid_argument("tokenizer: window must be >= 1");
  if (embed_dim < 4 || embed_dim % 4 != 0) throw std::invalid_argument("tokenizer: embed_dim must be a positive multiple of 4");
  if (num_freqs < 1) throw std::invalid_argument("tokenizer: num_freqs must be >= 1");
}

double bilinear_at(const Image& image, double x, double y, int c) {
  const Cell cx = locate(x, image.width());
  const Cell cy = locate(y, image.height());
  const double a = image.at(cy.lo, cx.lo, c);
  const double b = image.at(cy.lo, cx.lo + 1, c);
  const double d = image.at(cy.lo + 1, cx.lo, c);
  const double e = image.at(cy.lo + 1, cx.lo + 1, c);
  // (1-f)·a + f·b is exact at f = 0 and f = 1.
  const double top = (1.0 - cx.frac) * a + cx.frac * b;
  const double bottom = (1.0 - cx.frac) * d + cx.frac * e;
  return (1.0 - cy.frac) * top + cy.frac * bottom;
}

std::vector<double> extract_patch(const Image& image, Point s, int k) {
  if (k < 1) throw std::invalid_argument("extract_patch: k must be >= 1");
  check_in_bounds(image, s);
  const int channels = image.channels();
  std::vector<double> out(static_cast<std::size_t>(k) * k * channels);
  std::size_t idx = 0;
  for (int i = 0; i < k; ++i) {
    const double y = s.y + patch_offset(i, k);
    for (int j = 0; j < k; ++j) {
      const double x = s.x + patch_offset(j, k);
      for (int c = 0; c < channels; ++c) out[idx++] = bilinear_at(image, x, y, c);
    }
  }
  return out;
}

PatchJacobian patch_position_jacobian(const Image& image, Point s, int k) {
  if (k < 1) throw std::invalid_argument("patch_position_jacobian: k must be >= 1");
  check_in_bounds(image, s);
  const int channels = image.channels();
  const std::size_t n = static_cast<std::size_t>(k) * k * channels;
  PatchJacobian out{std::vector<double>(n), std::vector<double>(2 * n)};
  std::size_t idx = 0;
  for (int i = 0; i < k; ++i) {
    const Cell cy = locate(s.y + patch_offset(i, k), image.height());
    for (int j = 0; j < k; ++j) {
      const Cell cx = locate(s.x + patch_offset(j, k), image.width());
      for (int c = 0; c < channels; ++c, ++idx) {
        const double a = image.at(cy.lo, cx.lo, c);
        const double b = image.at(cy.lo, cx.lo + 1, c);
        const double d = image.at(cy.lo + 1, cx.lo, c);
        const double e = image.at(cy.lo + 1, cx.lo + 1, c);
        const double top = (1.0 - cx.frac) * a + cx.frac * b;
        const double bottom = (1.0 - cx.frac) * d + cx.frac * e;
        out.features[idx] = (1.0 - cy.frac) * top + cy.frac * bottom;
        out.jacobian[2 * idx] = cx.clamped ? 0.0 : (1.0 - cy.frac) * (b - a) + cy.frac * (e - d);
        out.jacobian[2 * idx + 1] = cy.clamped ? 0.0 : bottom - top;
      }
    }
  }
  return out;
}

PositionalEmbedding::PositionalEmbedding(int height, int width, int embed_dim, int num_freqs, std::uint64_t seed)
    : height_(height), width_(width), embed_dim_(embed_dim), num_freqs_(num_freqs) {
  if (height < 2 || width < 2) throw std::invalid_argument("positional embedding: image dims must be >= 2");
  if (embed_dim < 4 || embed_dim % 4 != 0) throw std::invalid_argument("positional embedding: embed_dim must be a multiple of 4");
  if (num_freqs < 1) throw std::invalid_argument("positional embedding: num_freqs must be >= 1");
  const int cols = fourier_dim();
  projection_.resize(static_cast<std::size_t>(embed_dim) * cols);
  CounterRng rng(derive_seed(seed, 0x9e0f));
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& w : projection_) w = scale * rng.normal();
}

void PositionalEmbedding::fourier(Point s, std::span<double> phi, std::span<double> dphi_dx,
                                  std::span<double> dphi_dy) const {
  const double u = s.x / (width_ - 1);
  const double v = s.y / (height_ - 1);
  const bool derivs = !dphi_dx.empty();
  for (int f = 0; f < num_freqs_; ++f) {
    const double omega = 2.0 * std::numbers::pi * std::ldexp(1.0, f);
    const double su = std::sin(omega * u), cu = std::cos(omega * u);
    const double sv = std::sin(omega * v), cv = std::cos(omega * v);
    phi[4 * f + 0] = su;
    phi[4 * f + 1] = cu;
    phi[4 * f + 2] = sv;
    phi[4 * f + 3] = cv;
    if (derivs) {
      const double gx = omega / (width_ - 1);
      const double gy = omega / (height_ - 1);
      dphi_dx[4 * f + 0] = gx * cu;
      dphi_dx[4 * f + 1] = -gx * su;
      dphi_dx[4 * f + 2] = 0.0;
      dphi_dx[4 * f + 3] = 0.0;
      dphi_dy[4 * f + 0] = 0.0;
      dphi_dy[4 * f + 1] = 0.0;
      dphi_dy[4 * f + 2] = gy * cv;
      dphi_dy[4 * f + 3] = -gy * sv;
    }
  }
}

std::vector<double> PositionalEmbedding::operator()(Point s) const {
  const int cols = fourier_dim();
  std::vector<double> phi(cols);
  fourier(s, phi, {}, {});
  std::vector<double> out(embed_dim_, 0.0);
  for (int r = 0; r < embed_dim_; ++r) {
    const double* row = projection_.data() + static_cast<std::size_t>(r) * cols;
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += row[c] * phi[c];
    out[r] = acc;
  }
  return out;
}

std::vector<double> PositionalEmbedding::jacobian(Point s) const {
  const int cols = fourier_dim();
  std::vector<double> phi(cols), dx(cols), dy(cols);
  fourier(s, phi, dx, dy);
  std::vector<double> out(2 * static_cast<std::size_t>(embed_dim_), 0.0);
  for (int r = 0; r < embed_dim_; ++r) {
    const double* row = projection_.data() + static_cast<std::size_t>(r) * cols;
    double ax = 0.0, ay = 0.0;
    for (int c = 0; c < cols; ++c) {
      ax += row[c] * dx[c];
      ay += row[c] * dy[c];
    }
    out[2 * r] = ax;
    out[2 * r + 1] = ay;
  }
  return out;
}

Tokenizer::Tokenizer(int height, int width, const TokenizerConfig& config)
    : height_(height), width_(width), config_(config), embedding_(height, width, config) {
  config_.validate();
}

std::vector<Token> Tokenizer::operator()(const Image& image, std::span<const Point> placements) const {
  if (image.height() != height_ || image.width() != width_) throw DataError("tokenizer: image size mismatch");
  std::vector<Token> tokens;
  tokens.reserve(placements.size());
  for (const auto& s : placements) {
    tokens.push_back({extract_patch(image, s, config_.window), s, embedding_(s)});
  }
  return tokens;
}

std::vector<Token> tokenize(const Image& image, std::span<const Point> placements, const TokenizerConfig& config) {
  return Tokenizer(image.height(), image.width(), config)(image, placements);
}

}  // namespace spot
