#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spot/imagery.hpp"
#include "spot/priors.hpp"

namespace spot {

struct TokenizerConfig {
  int window = 16;      ///< k: the patch is k×k samples at unit spacing.
  int embed_dim = 128;  ///< d: must match the encoder width.
  int num_freqs = 6;    ///< F: octaves 2^0 .. 2^(F-1) of the Fourier features.
  std::uint64_t freq_seed = 0;

  void validate() const;
  int feature_dim(int channels) const { return window * window * channels; }
  bool operator==(const TokenizerConfig&) const = default;
};

struct Token {
  std::vector<double> features;       ///< k²·C, row-major (y offset, x offset, channel).
  Point position;
  std::vector<double> pos_embedding;  ///< d values.
};

/// Bilinear sample of channel c with edge replication outside the image.
double bilinear_at(const Image& image, double x, double y, int c);

/// Sample offset i − (k−1)/2 for i = 0..k−1.
inline double patch_offset(int i, int k) { return i - (k - 1) / 2.0; }

/// k×k bilinear window centered at s. Throws DataError if s is out of bounds.
std::vector<double> extract_patch(const Image& image, Point s, int k);

/// Features plus ∂features/∂(x,y), stored row-major as (k²·C)×2.
struct PatchJacobian {
  std::vector<double> features;
  std::vector<double> jacobian;
};

/// Analytic derivative of each bilinear sample. It is piecewise constant per
/// pixel cell; on integer sample coordinates the right-hand cell is used (the
/// same cell the value path interpolates in), and samples clamped to the edge
/// contribute zero along the clamped axis.
PatchJacobian patch_position_jacobian(const Image& image, Point s, int k);

/// Fourier features of the normalized position, mapped to d values by a fixed
/// seeded projection.
class PositionalEmbedding {
 public:
  PositionalEmbedding(int height, int width, int embed_dim, int num_freqs, std::uint64_t seed);
  PositionalEmbedding(int height, int width, const TokenizerConfig& config)
      : PositionalEmbedding(height, width, config.embed_dim, config.num_freqs, config.freq_seed) {}

  int dim() const { return embed_dim_; }
  int fourier_dim() const { return 4 * num_freqs_; }
  /// Row-major d × 4F.
  std::span<const double> projection() const { return projection_; }

  std::vector<double> operator()(Point s) const;
  /// ∂PE/∂(x,y) as a row-major d×2 matrix, in pixel units.
  std::vector<double> jacobian(Point s) const;

 private:
  void fourier(Point s, std::span<double> phi, std::span<double> dphi_dx, std::span<double> dphi_dy) const;

  int height_;
  int width_;
  int embed_dim_;
  int num_freqs_;
  std::vector<double> projection_;
};

/// Cached tokenizer for a fixed image size.
class Tokenizer {
 public:
  Tokenizer(int height, int width, const TokenizerConfig& config);

  const TokenizerConfig& config() const { return config_; }
  const PositionalEmbedding& embedding() const { return embedding_; }

  std::vector<Token> operator()(const Image& image, std::span<const Point> placements) const;

 private:
  int height_;
  int width_;
  TokenizerConfig config_;
  PositionalEmbedding embedding_;
};

/// One token per placement, order-preserving. Overlap is allowed.
std::vector<Token> tokenize(const Image& image, std::span<const Point> placements, const TokenizerConfig& config);

}  // namespace spot
