#include "spot/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "spot/errors.hpp"
#include "spot/rng.hpp"

namespace spot {

std::string_view to_string(OracleMode mode) { return mode == OracleMode::subpixel ? "subpixel" : "grid"; }

std::string_view to_string(OracleObjective objective) {
  switch (objective) {
    case OracleObjective::descent: return "descent";
    case OracleObjective::ascent: return "ascent";
    case OracleObjective::obfuscated: return "obfuscate";
  }
  return "unknown";
}

std::string_view to_string(SnapWhen when) { return when == SnapWhen::every_step ? "every-step" : "final"; }

OracleMode parse_oracle_mode(std::string_view name) {
  if (name == "subpixel") return OracleMode::subpixel;
  if (name == "grid" || name == "grid_snap") return OracleMode::grid_snap;
  throw std::invalid_argument("unknown oracle mode '" + std::string(name) + "'");
}

OracleObjective parse_oracle_objective(std::string_view name) {
  if (name == "descent") return OracleObjective::descent;
  if (name == "ascent") return OracleObjective::ascent;
  if (name == "obfuscate" || name == "obfuscated") return OracleObjective::obfuscated;
  throw std::invalid_argument("unknown oracle objective '" + std::string(name) + "'");
}

SnapWhen parse_snap_when(std::string_view name) {
  if (name == "every-step") return SnapWhen::every_step;
  if (name == "final") return SnapWhen::final;
  throw std::invalid_argument("unknown snap mode '" + std::string(name) + "'");
}

void OracleConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("oracle: lr must be > 0");
  if (steps < 0) throw std::invalid_argument("oracle: steps must be >= 0");
  if (grid_g < 1) throw std::invalid_argument("oracle: grid_g must be >= 1");
}

PlacementSet grid_snap(std::span<const Point> points, int height, int width, int g) {
  if (g < 1) throw std::invalid_argument("grid_snap: g must be >= 1");
  auto snap_axis = [g](double v, int extent) {
    const double t = (v + 0.5) * g / extent - 0.5;
    int j = std::clamp(static_cast<int>(std::floor(t)), 0, g - 1);
    if (j + 1 < g) {
      const double d0 = std::abs(v - grid_center(j, extent, g));
      const double d1 = std::abs(v - grid_center(j + 1, extent, g));
      if (d1 < d0) ++j;
    }
    return grid_center(j, extent, g);
  };
  PlacementSet out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i] = {snap_axis(points[i].x, width), snap_axis(points[i].y, height)};
  }
  return out;
}

int obfuscated_label(int label, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("obfuscated_label: need at least two classes");
  CounterRng rng(derive_seed(seed, 0x0bf));
  const int draw = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes - 1)));
  return draw >= label ? draw + 1 : draw;
}

Trajectory spot_on_search(const EncoderParams& params, const Image& image, int label, const PlacementSet& initial,
                          const Tokenizer& tokenizer, const OracleConfig& config) {
  config.validate();
  validate_placements(initial, image.height(), image.width());
  if (initial.empty()) throw DataError("oracle: empty initial placement set");
  const int num_classes = params.config().num_classes;
  if (label < 0 || label >= num_classes) throw std::invalid_argument("oracle: invalid label");

  Trajectory traj;
  traj.target_label = config.objective == OracleObjective::obfuscated ? obfuscated_label(label, num_classes, config.seed)
                                                                      : label;
  const double direction = config.objective == OracleObjective::ascent ? -1.0 : 1.0;
  const double wx = image.width() - 1.0;
  const double wy = image.height() - 1.0;
  const double smoothing = params.config().label_smoothing;

  traj.positions.reserve(config.steps + 1);
  traj.positions.push_back(initial);
  PlacementSet current = initial;
  for (int t = 0; t < config.steps; ++t) {
    const auto pg = position_gradient(params, image, current, traj.target_label, tokenizer, config.gradient);
    traj.losses.push_back(traj.target_label == label ? pg.loss : cross_entropy(pg.logits, label, smoothing));
    // u ← clamp(u − lr·∂L/∂u) with u = x/(W−1) and ∂L/∂u = (W−1)·∂L/∂x, done in pixel units.
    for (std::size_t i = 0; i < current.size(); ++i) {
      current[i].x = std::clamp(current[i].x - direction * config.lr * pg.gradient[i].x * wx * wx, 0.0, wx);
      current[i].y = std::clamp(current[i].y - direction * config.lr * pg.gradient[i].y * wy * wy, 0.0, wy);
    }
    const bool snap_now = config.mode == OracleMode::grid_snap &&
                          (config.snap_when == SnapWhen::every_step || t + 1 == config.steps);
    if (snap_now) current = grid_snap(current, image.height(), image.width(), config.grid_g);
    traj.positions.push_back(current);
  }
  const auto tokens = tokenizer(image, current);
  const auto trace = forward(params, tokens);
  traj.losses.push_back(cross_entropy(trace.logits, label, smoothing));
  traj.final_prediction = trace.prediction();
  return traj;
}

double transfer_positions(const EncoderParams& target, std::span<const Image> images, std::span<const int> labels,
                          std::span<const Trajectory> source_trajectories, const Tokenizer& tokenizer) {
  if (images.empty()) throw DataError("transfer: empty image set");
  if (images.size() != labels.size() || images.size() != source_trajectories.size()) {
    throw DataError("transfer: images, labels, and trajectories differ in count");
  }
  long correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto tokens = tokenizer(images[i], source_trajectories[i].final());
    if (forward(target, tokens).prediction() == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

void write_trajectory(const std::filesystem::path& positions_csv, const std::filesystem::path& losses_csv,
                      const Trajectory& trajectory) {
  write_placements_csv(positions_csv, trajectory.positions);
  std::ofstream out(losses_csv, std::ios::trunc);
  if (!out) throw DataError("cannot write " + losses_csv.string());
  out << "step,loss\n";
  for (std::size_t t = 0; t < trajectory.losses.size(); ++t) out << t << ',' << format_double(trajectory.losses[t]) << '\n';
}

}  // namespace spot
