#include "spot/priors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "spot/errors.hpp"
#include "spot/rng.hpp"

namespace spot {
namespace {

void require_positive_m(int m) {
  if (m < 1) throw std::invalid_argument("prior: m must be >= 1");
}

int require_square(int m) {
  require_positive_m(m);
  auto g = perfect_square_root(m);
  if (!g) throw std::invalid_argument("prior: m = " + std::to_string(m) + " is not a perfect square");
  return *g;
}

// Direction numbers for the first two Sobol dimensions, 32-bit. Dimension 1
// is the van der Corput sequence; dimension 2 uses the primitive polynomial
// x + 1 with m_1 = 1, i.e. m_k = 2·m_{k-1} XOR m_{k-1}.
struct SobolDirections {
  std::array<std::uint32_t, 32> dim1{};
  std::array<std::uint32_t, 32> dim2{};
  SobolDirections() {
    std::uint32_t mk = 1;
    for (int k = 1; k <= 32; ++k) {
      dim1[k - 1] = 1u << (32 - k);
      if (k > 1) mk = (mk << 1) ^ mk;
      dim2[k - 1] = mk << (32 - k);
    }
  }
};

const SobolDirections& sobol_directions() {
  static const SobolDirections dirs;
  return dirs;
}

double clamp_to(double v, double hi) { return std::clamp(v, 0.0, hi); }

}  // namespace

void validate_placements(std::span<const Point> points, int height, int width) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || p.x < 0.0 || p.y < 0.0 || p.x > width - 1.0 ||
        p.y > height - 1.0) {
      throw DataError("placement " + std::to_string(i) + " outside [0,W-1]x[0,H-1]");
    }
  }
}

std::string_view to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::uniform: return "uniform";
    case PriorKind::gaussian: return "gaussian";
    case PriorKind::sobol: return "sobol";
    case PriorKind::isotropic: return "isotropic";
    case PriorKind::center: return "center";
    case PriorKind::salient: return "salient";
    case PriorKind::background: return "background";
    case PriorKind::boundary: return "boundary";
  }
  return "unknown";
}

PriorKind parse_prior_kind(std::string_view name) {
  for (auto k : {PriorKind::uniform, PriorKind::gaussian, PriorKind::sobol, PriorKind::isotropic, PriorKind::center,
                 PriorKind::salient, PriorKind::background, PriorKind::boundary}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown prior '" + std::string(name) + "'");
}

bool is_stochastic(PriorKind kind) {
  switch (kind) {
    case PriorKind::sobol:
    case PriorKind::isotropic:
    case PriorKind::center: return false;
    default: return true;
  }
}

void PriorSpec::validate() const {
  require_positive_m(m);
  if (!(gaussian_sigma_frac > 0.0)) throw std::invalid_argument("prior: gaussian_sigma_frac must be > 0");
  if (!(boundary_tau_frac > 0.0)) throw std::invalid_argument("prior: boundary_tau_frac must be > 0");
  if (!(center_gamma >= 1.0)) throw std::invalid_argument("prior: center_gamma must be >= 1");
}

std::optional<int> perfect_square_root(int m) {
  if (m < 0) return std::nullopt;
  int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
  while (g * g > m) --g;
  while ((g + 1) * (g + 1) <= m) ++g;
  if (g * g != m) return std::nullopt;
  return g;
}

PlacementSet sample_uniform(int m, int height, int width, std::uint64_t seed) {
  require_positive_m(m);
  CounterRng rng(seed);
  PlacementSet out(m);
  for (auto& p : out) {
    p.x = rng.uniform() * (width - 1);
    p.y = rng.uniform() * (height - 1);
  }
  return out;
}

PlacementSet sample_gaussian(int m, int height, int width, double sigma_frac, std::uint64_t seed) {
  require_positive_m(m);
  if (!(sigma_frac > 0.0)) throw std::invalid_argument("prior: gaussian_sigma_frac must be > 0");
  const double sigma = sigma_frac * std::min(height, width);
  const double cx = (width - 1) / 2.0;
  const double cy = (height - 1) / 2.0;
  CounterRng rng(seed);
  PlacementSet out(m);
  for (auto& p : out) {
    p.x = clamp_to(cx + sigma * rng.normal(), width - 1);
    p.y = clamp_to(cy + sigma * rng.normal(), height - 1);
  }
  return out;
}

std::pair<double, double> sobol_unit_point(std::uint32_t index) {
  const auto& dirs = sobol_directions();
  const std::uint32_t gray = index ^ (index >> 1);
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  for (int k = 0; k < 32; ++k) {
    if (gray & (1u << k)) {
      a ^= dirs.dim1[k];
      b ^= dirs.dim2[k];
    }
  }
  return {a * 0x1.0p-32, b * 0x1.0p-32};
}

PlacementSet sample_sobol(int m, int height, int width) {
  require_positive_m(m);
  PlacementSet out(m);
  for (int i = 0; i < m; ++i) {
    const auto [u, v] = sobol_unit_point(static_cast<std::uint32_t>(i));
    out[i] = {u * (width - 1), v * (height - 1)};
  }
  return out;
}

PlacementSet sample_isotropic(int m, int height, int width) {
  const int g = require_square(m);
  PlacementSet out;
  out.reserve(m);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) out.push_back({grid_center(j, width, g), grid_center(i, height, g)});
  }
  return out;
}

PlacementSet sample_center(int m, int height, int width, double gamma) {
  const int g = require_square(m);
  if (!(gamma >= 1.0)) throw std::invalid_argument("prior: center_gamma must be >= 1");
  auto warp = [gamma](double u) {
    const double t = 2.0 * u - 1.0;
    const double s = t < 0.0 ? -1.0 : (t > 0.0 ? 1.0 : 0.0);
    return 0.5 + 0.5 * s * std::pow(std::abs(t), gamma);
  };
  PlacementSet out;
  out.reserve(m);
  for (int i = 0; i < g; ++i) {
    const double v = warp((i + 0.5) / g);
    for (int j = 0; j < g; ++j) {
      const double u = warp((j + 0.5) / g);
      out.push_back({u * (width - 1), v * (height - 1)});
    }
  }
  return out;
}

PlacementSet sample_weighted(int m, const WeightGrid& weights, std::uint64_t seed) {
  require_positive_m(m);
  const std::size_t n = static_cast<std::size_t>(weights.height) * weights.width;
  if (weights.values.size() != n) throw DataError("weights: size does not match H*W");
  struct Key {
    double key;
    std::size_t index;
  };
  std::vector<Key> keys;
  keys.reserve(n);
  double total = 0.0;
  CounterRng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights.values[i];
    if (!std::isfinite(w) || w < 0.0) throw DataError("weights: must be finite and nonnegative");
    // Draw for every pixel so the stream position never depends on the weights.
    const double g = rng.gumbel();
    if (w > 0.0) {
      keys.push_back({std::log(w) + g, i});
      total += w;
    }
  }
  if (!(total > 0.0)) throw DataError("weights: all zero");
  if (static_cast<std::size_t>(m) > keys.size()) {
    throw DataError("weights: m exceeds the number of positive-weight pixels");
  }
  auto by_key = [](const Key& a, const Key& b) { return a.key > b.key || (a.key == b.key && a.index < b.index); };
  std::partial_sort(keys.begin(), keys.begin() + m, keys.end(), by_key);

  PlacementSet out(m);
  for (int i = 0; i < m; ++i) {
    const auto idx = keys[i].index;
    const double px = static_cast<double>(idx % weights.width);
    const double py = static_cast<double>(idx / weights.width);
    // 2^-32 lattice keeps px + jitter strictly below px + 0.5 after rounding.
    out[i].x = clamp_to(px + rng.uniform32() - 0.5, weights.width - 1);
    out[i].y = clamp_to(py + rng.uniform32() - 0.5, weights.height - 1);
  }
  return out;
}

WeightGrid mask_weights(const SaliencyMask& mask) {
  return {mask.height(), mask.width(), std::vector<double>(mask.data().begin(), mask.data().end())};
}

WeightGrid derive_background_weights(const SaliencyMask& mask) {
  WeightGrid w{mask.height(), mask.width(), {}};
  w.values.reserve(mask.data().size());
  for (double v : mask.data()) w.values.push_back(1.0 - v);
  return w;
}

double boundary_weight(double x, double y, int height, int width, double tau_frac) {
  const double d = std::min({x, y, (width - 1) - x, (height - 1) - y});
  return std::exp(-d / (tau_frac * std::min(height, width)));
}

WeightGrid derive_boundary_weights(int height, int width, double tau_frac) {
  if (!(tau_frac > 0.0)) throw std::invalid_argument("prior: boundary_tau_frac must be > 0");
  WeightGrid w{height, width, std::vector<double>(static_cast<std::size_t>(height) * width)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) w.values[static_cast<std::size_t>(y) * width + x] = boundary_weight(x, y, height, width, tau_frac);
  }
  return w;
}

PlacementSet sample_prior(const PriorSpec& spec, int height, int width, const SaliencyMask* mask) {
  spec.validate();
  auto need_mask = [&]() -> const SaliencyMask& {
    if (!mask) throw std::invalid_argument(std::string("prior '") + std::string(to_string(spec.kind)) + "' needs a saliency mask");
    if (mask->height() != height || mask->width() != width) throw DataError("mask dimensions do not match image");
    return *mask;
  };
  switch (spec.kind) {
    case PriorKind::uniform: return sample_uniform(spec.m, height, width, spec.seed);
    case PriorKind::gaussian: return sample_gaussian(spec.m, height, width, spec.gaussian_sigma_frac, spec.seed);
    case PriorKind::sobol: return sample_sobol(spec.m, height, width);
    case PriorKind::isotropic: return sample_isotropic(spec.m, height, width);
    case PriorKind::center: return sample_center(spec.m, height, width, spec.center_gamma);
    case PriorKind::salient: return sample_weighted(spec.m, mask_weights(need_mask()), spec.seed);
    case PriorKind::background: return sample_weighted(spec.m, derive_background_weights(need_mask()), spec.seed);
    case PriorKind::boundary:
      return sample_weighted(spec.m, derive_boundary_weights(height, width, spec.boundary_tau_frac), spec.seed);
  }
  throw std::logic_error("unhandled prior kind");
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf.data(), ptr);
}

std::string placements_csv_header(int m) {
  std::string h;
  for (int i = 0; i < m; ++i) {
    if (i) h += ',';
    h += "x" + std::to_string(i) + ",y" + std::to_string(i);
  }
  return h;
}

std::string placements_csv_row(std::span<const Point> points) {
  std::string row;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) row += ',';
    row += format_double(points[i].x) + ',' + format_double(points[i].y);
  }
  return row;
}

void write_placements_csv(const std::filesystem::path& path, std::span<const PlacementSet> rows) {
  if (rows.empty()) throw std::invalid_argument("placements csv: no rows");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << placements_csv_header(static_cast<int>(rows.front().size())) << '\n';
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw std::invalid_argument("placements csv: ragged rows");
    out << placements_csv_row(r) << '\n';
  }
}

std::vector<PlacementSet> read_placements_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("placements csv: missing header");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',') + 1);
  if (columns % 2 != 0) throw DataError("placements csv: odd column count");
  if (line != placements_csv_header(static_cast<int>(columns / 2))) throw DataError("placements csv: bad header");
  std::vector<PlacementSet> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    std::size_t start = 0;
    while (start <= line.size()) {
      const auto end = std::min(line.find(',', start), line.size());
      double v = 0;
      auto [ptr, ec] = std::from_chars(line.data() + start, line.data() + end, v);
      if (ec != std::errc{} || ptr != line.data() + end) throw DataError("placements csv: bad number");
      vals.push_back(v);
      start = end + 1;
    }
    if (vals.size() != columns) throw DataError("placements csv: column-count mismatch");
    PlacementSet s(columns / 2);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = {vals[2 * i], vals[2 * i + 1]};
    rows.push_back(std::move(s));
  }
  return rows;
}

}  // namespace spot
