#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "spot/encoder.hpp"
#include "spot/priors.hpp"

namespace spot {

enum class OracleMode { subpixel, grid_snap };
enum class OracleObjective { descent, ascent, obfuscated };
enum class SnapWhen { every_step, final };

std::string_view to_string(OracleMode mode);
std::string_view to_string(OracleObjective objective);
std::string_view to_string(SnapWhen when);
OracleMode parse_oracle_mode(std::string_view name);
OracleObjective parse_oracle_objective(std::string_view name);
SnapWhen parse_snap_when(std::string_view name);

struct OracleConfig {
  /// Step size in normalized coordinates u = (x/(W−1), y/(H−1)) per unit of ∂L/∂u.
  double lr = 3e-3;
  int steps = 5;
  OracleMode mode = OracleMode::subpixel;
  OracleObjective objective = OracleObjective::descent;
  SnapWhen snap_when = SnapWhen::every_step;
  int grid_g = 8;
  /// Seed for the obfuscated label draw.
  std::uint64_t seed = 0;
  PositionGradientOptions gradient;

  void validate() const;
};

struct Trajectory {
  std::vector<PlacementSet> positions;  ///< steps+1 rows; row 0 is S⁰
  std::vector<double> losses;           ///< cross-entropy against the true label, per row
  int final_prediction = 0;
  int target_label = 0;                 ///< label the search optimized for

  int steps() const { return static_cast<int>(positions.size()) - 1; }
  const PlacementSet& initial() const { return positions.front(); }
  const PlacementSet& final() const { return positions.back(); }
};

/// Per-image gradient search over placements with the encoder frozen.
/// Descent minimizes the loss; ascent maximizes it; obfuscated descends
/// towards a seeded label different from the true one. Positions are clamped
/// to the image after every step.
Trajectory spot_on_search(const EncoderParams& params, const Image& image, int label, const PlacementSet& initial,
                          const Tokenizer& tokenizer, const OracleConfig& config);

/// Nearest center of a g×g patch lattice per axis; ties go to the lower index.
PlacementSet grid_snap(std::span<const Point> points, int height, int width, int g);

/// Uniform draw over labels other than `label`.
int obfuscated_label(int label, int num_classes, std::uint64_t seed);

/// Top-1 accuracy of `target` evaluated at each trajectory's final placements.
double transfer_positions(const EncoderParams& target, std::span<const Image> images, std::span<const int> labels,
                          std::span<const Trajectory> source_trajectories, const Tokenizer& tokenizer);

/// Trajectory CSV (one row per step, 2m columns) plus a sidecar of per-step losses.
void write_trajectory(const std::filesystem::path& positions_csv, const std::filesystem::path& losses_csv,
                      const Trajectory& trajectory);

}  // namespace spot
