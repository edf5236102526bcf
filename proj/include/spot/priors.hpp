#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spot/imagery.hpp"

namespace spot {

/// Continuous placement in pixel units: x along width, y along height.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// Ordered token placements S = {s_1, ..., s_m} inside [0,W-1]×[0,H-1].
using PlacementSet = std::vector<Point>;

/// Throws DataError unless every point is finite and in bounds.
void validate_placements(std::span<const Point> points, int height, int width);

enum class PriorKind { uniform, gaussian, sobol, isotropic, center, salient, background, boundary };

std::string_view to_string(PriorKind kind);
PriorKind parse_prior_kind(std::string_view name);
/// Priors whose output depends on the seed.
bool is_stochastic(PriorKind kind);

struct PriorSpec {
  PriorKind kind = PriorKind::isotropic;
  int m = 1;
  std::uint64_t seed = 0;
  double gaussian_sigma_frac = 0.2;
  double center_gamma = 1.5;
  double boundary_tau_frac = 0.05;

  void validate() const;
};

/// Nonnegative per-pixel weights, row-major H×W.
struct WeightGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

PlacementSet sample_uniform(int m, int height, int width, std::uint64_t seed);
PlacementSet sample_gaussian(int m, int height, int width, double sigma_frac, std::uint64_t seed);
PlacementSet sample_sobol(int m, int height, int width);
PlacementSet sample_isotropic(int m, int height, int width);
PlacementSet sample_center(int m, int height, int width, double gamma);
/// Gumbel-top-k over log-weights, then U[-0.5, 0.5) jitter around each chosen pixel center.
PlacementSet sample_weighted(int m, const WeightGrid& weights, std::uint64_t seed);

WeightGrid derive_background_weights(const SaliencyMask& mask);
WeightGrid derive_boundary_weights(int height, int width, double tau_frac);
/// exp(-d_border / (tau_frac·min(H,W))) at a continuous position.
double boundary_weight(double x, double y, int height, int width, double tau_frac);
WeightGrid mask_weights(const SaliencyMask& mask);

/// Dispatches on spec.kind; mask is required for salient and background.
PlacementSet sample_prior(const PriorSpec& spec, int height, int width, const SaliencyMask* mask = nullptr);

/// Point `index` of the unscrambled 2-D Sobol sequence in [0,1)² (Gray-code order).
std::pair<double, double> sobol_unit_point(std::uint32_t index);

/// Side length g if m = g², otherwise nullopt.
std::optional<int> perfect_square_root(int m);

/// Grid center coordinate (j + 0.5)·D/g − 0.5.
inline double grid_center(int j, int extent, int g) { return (j + 0.5) * extent / g - 0.5; }

// CSV layout: header "x0,y0,...,x{m-1},y{m-1}", one row per placement set.
std::string placements_csv_header(int m);
std::string placements_csv_row(std::span<const Point> points);
void write_placements_csv(const std::filesystem::path& path, std::span<const PlacementSet> rows);
std::vector<PlacementSet> read_placements_csv(const std::filesystem::path& path);
/// Formats with enough digits to round-trip doubles exactly.
std::string format_double(double v);

}  // namespace spot
