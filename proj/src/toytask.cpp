#include "spot/toytask.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "spot/errors.hpp"
#include "spot/metrics.hpp"
#include "spot/parallel.hpp"
#include "spot/rng.hpp"

namespace spot {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h_deg, double s, double v) {
  h_deg = std::fmod(h_deg, 360.0);
  if (h_deg < 0.0) h_deg += 360.0;
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb out{0, 0, 0};
  switch (static_cast<int>(hp)) {
    case 0: out = {c, x, 0}; break;
    case 1: out = {x, c, 0}; break;
    case 2: out = {0, c, x}; break;
    case 3: out = {0, x, c}; break;
    case 4: out = {x, 0, c}; break;
    default: out = {c, 0, x}; break;
  }
  const double mm = v - c;
  return {out.r + mm, out.g + mm, out.b + mm};
}

/// Membership test in the shape's own (rotated, centered) frame.
bool inside(ToyShape shape, double u, double v, double r) {
  switch (shape) {
    case ToyShape::disk: return u * u + v * v <= r * r;
    case ToyShape::square: return std::max(std::abs(u), std::abs(v)) <= 0.85 * r;
    case ToyShape::triangle: {
      // Equilateral; faces at distance 0.575·r from the center.
      static const std::array<std::pair<double, double>, 3> normals = {
          std::pair{0.0, -1.0}, std::pair{std::sqrt(3.0) / 2.0, 0.5}, std::pair{-std::sqrt(3.0) / 2.0, 0.5}};
      for (auto [nx, ny] : normals) {
        if (u * nx + v * ny > 0.575 * r) return false;
      }
      return true;
    }
    case ToyShape::cross: {
      const double arm = 0.3 * r;
      return (std::abs(u) <= r && std::abs(v) <= arm) || (std::abs(v) <= r && std::abs(u) <= arm);
    }
  }
  return false;
}

/// Class-specific fill, fixed to the image axes: 1 where the pattern darkens the fill.
int fill_pattern(ToyShape shape, double x, double y) {
  constexpr double period = 4.0;
  auto band = [](double t) { return t - period * std::floor(t / period) < period / 2 ? 1 : 0; };
  switch (shape) {
    case ToyShape::disk: return 0;
    case ToyShape::square: return band(y);
    case ToyShape::triangle: return band(x);
    case ToyShape::cross: return band(x) ^ band(y);
  }
  return 0;
}

ToySample make_sample(int label, std::uint64_t sample_seed, const ToyStyle& style) {
  constexpr int S = kToySize;
  constexpr int kSuper = 4;
  CounterRng rng(sample_seed);
  const auto shape = static_cast<ToyShape>(label / 2);
  const bool cool = label % 2 == 1;

  // Background: a desaturated base with a few low-frequency waves and pixel noise.
  const double base = rng.uniform(0.25, 0.6);
  const Rgb tint = hsv_to_rgb(rng.uniform(0.0, 360.0), rng.uniform(0.0, 0.15), 1.0);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves) {
    const double angle = rng.uniform(0.0, kTwoPi);
    const double freq = rng.uniform(1.0, 4.0) / S;
    w = {freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, kTwoPi), rng.uniform(0.02, 0.06)};
  }

  const double hue = cool ? rng.uniform(180.0, 250.0) : rng.uniform(-20.0, 45.0);
  const Rgb fg = hsv_to_rgb(hue, rng.uniform(0.6, 0.95), rng.uniform(0.65, 1.0));

  // Placement: center-biased, never within 12 px of the border.
  const double cx = std::clamp(31.5 + 9.0 * rng.normal(), 12.0, 51.0);
  const double cy = std::clamp(31.5 + 9.0 * rng.normal(), 12.0, 51.0);
  const double theta = rng.uniform(0.0, kTwoPi);
  const double ct = std::cos(theta), st = std::sin(theta);

  const double contrast = rng.uniform(style.fill_contrast_min, style.fill_contrast_max);

  std::vector<double> alpha, pattern;
  double area = 0.0;
  double radius = rng.uniform(11.5, 15.0);
  for (;;) {
    alpha.assign(S * S, 0.0);
    pattern.assign(S * S, 0.0);
    area = 0.0;
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        int hits = 0;
        double dark = 0.0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double px = x + (sx + 0.5) / kSuper - 0.5 - cx;
            const double py = y + (sy + 0.5) / kSuper - 0.5 - cy;
            const double u = ct * px + st * py, v = -st * px + ct * py;
            if (inside(shape, u, v, radius)) {
              ++hits;
              dark += fill_pattern(shape, px, py);
            }
          }
        }
        const double a = static_cast<double>(hits) / (kSuper * kSuper);
        alpha[y * S + x] = a;
        pattern[y * S + x] = hits ? dark / hits : 0.0;
        area += a;
      }
    }
    if (area >= 0.05 * S * S) break;
    radius += 0.5;
  }

  std::vector<std::uint8_t> pixels(S * S * 3);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      double tex = 0.0;
      for (const auto& w : waves) tex += w.amp * std::sin(kTwoPi * (w.fx * x + w.fy * y) + w.phase);
      const double noise = rng.uniform(-0.04, 0.04);
      const double g = base + tex + noise;
      const double a = alpha[y * S + x];
      const std::array<double, 3> bg{g * tint.r, g * tint.g, g * tint.b};
      const double shade = 1.0 - contrast * pattern[y * S + x];
      const std::array<double, 3> fc{fg.r * shade, fg.g * shade, fg.b * shade};
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp((1.0 - a) * bg[c] + a * fc[c], 0.0, 1.0);
        pixels[(y * S + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }

  std::vector<double> mask(S * S, 0.0);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      if (alpha[y * S + x] <= 0.0) continue;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (dx * dx + dy * dy > 4 || yy < 0 || yy >= S || xx < 0 || xx >= S) continue;
          mask[yy * S + xx] = 1.0;
        }
      }
    }
  }

  return ToySample{Image::from_bytes(S, S, 3, pixels), label, SaliencyMask(S, S, std::move(mask))};
}

double lr_at(const TrainConfig& cfg, long step, long total_steps) {
  if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
  const double span = std::max<long>(1, total_steps - cfg.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return cfg.min_lr + 0.5 * (cfg.lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

}  // namespace

std::vector<int> ToyDataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

ToyDataset gen_dataset(int n, std::uint64_t seed, const ToyStyle& style) {
  if (n < kToyClasses) throw std::invalid_argument("gen_dataset: n must be at least the class count (8)");
  ToyDataset ds;
  ds.seed = seed;
  ds.samples.resize(n);
  parallel_for(n, [&](long i) {
    ds.samples[i] = make_sample(static_cast<int>(i % kToyClasses), derive_seed(seed, static_cast<std::uint64_t>(i)), style);
  });
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const ToyDataset& dataset) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.csv").string());
  manifest << "index,label,image,mask\n";
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    const std::string img = std::string(stem) + ".ppm";
    const std::string msk = std::string(stem) + "_mask.pgm";
    save_ppm(dir / img, dataset.samples[i].image);
    save_pgm(dir / msk, dataset.samples[i].saliency);
    manifest << i << ',' << dataset.samples[i].label << ',' << img << ',' << msk << '\n';
  }
  if (!manifest) throw DataError("failed writing dataset manifest");
}

ToyDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("dataset: missing manifest.csv in " + dir.string());
  std::string line;
  if (!std::getline(manifest, line) || line != "index,label,image,mask") throw DataError("dataset: bad manifest header");
  ToyDataset ds;
  std::size_t expected = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string idx, lab, img, msk;
    if (!std::getline(row, idx, ',') || !std::getline(row, lab, ',') || !std::getline(row, img, ',') ||
        !std::getline(row, msk)) {
      throw DataError("dataset: malformed manifest row " + std::to_string(expected));
    }
    std::size_t index = 0;
    int label = 0;
    try {
      index = std::stoul(idx);
      label = std::stoi(lab);
    } catch (const std::exception&) {
      throw DataError("dataset: non-numeric manifest field in row " + std::to_string(expected));
    }
    if (index != expected) throw DataError("dataset: manifest indices must be consecutive from 0");
    if (label < 0 || label >= kToyClasses) throw DataError("dataset: label out of range in row " + idx);
    ToySample s{load_image(dir / img), label, load_mask(dir / msk)};
    if (s.saliency.height() != s.image.height() || s.saliency.width() != s.image.width()) {
      throw DataError("dataset: mask dimensions differ from image in row " + idx);
    }
    ds.samples.push_back(std::move(s));
    ++expected;
  }
  if (ds.samples.empty()) throw DataError("dataset: manifest lists no samples");
  return ds;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(lr > 0.0) || min_lr < 0.0 || min_lr > lr) throw std::invalid_argument("train: need 0 <= min_lr <= lr, lr > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight decay must be >= 0");
  if (warmup_steps < 1) throw std::invalid_argument("train: warmup steps must be >= 1");
  if (priors.empty() || budgets.empty()) throw std::invalid_argument("train: need at least one prior and one budget");
  for (int m : budgets) {
    if (m < 1) throw std::invalid_argument("train: budgets must be >= 1");
    for (PriorKind k : priors) {
      if ((k == PriorKind::isotropic || k == PriorKind::center) && !perfect_square_root(m)) {
        throw std::invalid_argument("train: budget " + std::to_string(m) + " is not a perfect square, required by prior " +
                                    std::string(to_string(k)));
      }
    }
  }
  encoder.validate();
  tokenizer.validate();
  if (encoder.width != tokenizer.embed_dim) throw std::invalid_argument("train: encoder width must equal embed dim");
}

double evaluate_fixed(const EncoderParams& params, const Tokenizer& tokenizer, const ToyDataset& dataset,
                      std::size_t begin, std::size_t end, const PlacementSet& placements) {
  if (begin >= end || end > dataset.size()) throw std::invalid_argument("evaluate_fixed: bad index range");
  const long n = static_cast<long>(end - begin);
  std::vector<int> preds(n), labels(n);
  parallel_for(n, [&](long i) {
    const auto& s = dataset.samples[begin + i];
    preds[i] = forward(params, tokenizer(s.image, placements)).prediction();
    labels[i] = s.label;
  });
  return accuracy(preds, labels);
}

TrainResult train_toy(const TrainConfig& config, const ToyDataset& dataset, const EpochCallback& on_epoch) {
  config.validate();
  const std::size_t n_train = dataset.train_count();
  if (n_train < 1 || n_train >= dataset.size()) throw DataError("train: dataset too small for a 90/10 split");
  const int H = dataset.samples[0].image.height();
  const int W = dataset.samples[0].image.width();
  const int C = dataset.samples[0].image.channels();
  if (config.tokenizer.feature_dim(C) != config.encoder.token_dim) {
    throw std::invalid_argument("train: encoder token_dim must equal window²·channels");
  }
  const Tokenizer tokenizer(H, W, config.tokenizer);
  const int g_dense = std::max(1, std::min(H, W) / config.tokenizer.window);
  const PlacementSet val_placements = sample_isotropic(g_dense * g_dense, H, W);

  EncoderParams params = EncoderParams::initialize(config.encoder, config.seed);
  const std::size_t P = params.values().size();
  std::vector<double> m1(P, 0.0), m2(P, 0.0);
  // Decay applies to matrices only; biases, norms, and the class token are exempt.
  std::vector<unsigned char> decay(P, 0);
  for (const auto& t : params.layout().tensors) {
    if (t.dims.size() >= 2) std::fill(decay.begin() + t.offset, decay.begin() + t.offset + t.size, 1);
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  const long batches_per_epoch = static_cast<long>((n_train + config.batch_size - 1) / config.batch_size);
  const long total_steps = batches_per_epoch * config.epochs;

  TrainResult result{params, {}, 0, -1.0};
  std::vector<std::vector<double>> sample_grads(config.batch_size);
  std::vector<double> sample_loss(config.batch_size);
  std::vector<double> grad(P);
  long step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = permutation(n_train, derive_seed(config.seed, 0x7e0000ULL + epoch));
    double loss_sum = 0.0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * config.batch_size;
      const int count = static_cast<int>(std::min<std::size_t>(config.batch_size, n_train - lo));
      CounterRng batch_rng(derive_seed(config.seed, 0xb000000ULL + static_cast<std::uint64_t>(step)));
      const int m = config.budgets[batch_rng.below(config.budgets.size())];
      std::vector<PriorKind> kinds(count);
      for (int j = 0; j < count; ++j) kinds[j] = config.priors[batch_rng.below(config.priors.size())];

      parallel_for(count, [&](long j) {
        const auto& s = dataset.samples[order[lo + j]];
        PriorSpec spec;
        spec.kind = kinds[j];
        spec.m = m;
        spec.seed = derive_seed(config.seed, (static_cast<std::uint64_t>(step) << 16) + j);
        const auto placements = sample_prior(spec, H, W, &s.saliency);
        const auto trace = forward(params, tokenizer(s.image, placements));
        sample_loss[j] = cross_entropy(trace.logits, s.label, config.encoder.label_smoothing);
        sample_grads[j] = backward_params(trace, s.label);
      });

      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (int j = 0; j < count; ++j) {
        batch_loss += sample_loss[j];
        const auto& gj = sample_grads[j];
        for (std::size_t p = 0; p < P; ++p) grad[p] += gj[p];
      }
      batch_loss /= count;
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      loss_sum += batch_loss;

      const double lr = lr_at(config, step, total_steps);
      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto w = params.mutable_values();
      const double inv = 1.0 / count;
      for (std::size_t p = 0; p < P; ++p) {
        const double g = grad[p] * inv;
        m1[p] = beta1 * m1[p] + (1.0 - beta1) * g;
        m2[p] = beta2 * m2[p] + (1.0 - beta2) * g * g;
        const double update = (m1[p] / bc1) / (std::sqrt(m2[p] / bc2) + adam_eps);
        w[p] -= lr * (update + (decay[p] ? config.weight_decay * w[p] : 0.0));
      }
    }

    const double val = evaluate_fixed(params, tokenizer, dataset, n_train, dataset.size(), val_placements);
    EpochLog log{epoch, loss_sum / batches_per_epoch, val};
    result.history.push_back(log);
    if (val > result.best_val_top1) {
      result.best_val_top1 = val;
      result.best_epoch = epoch;
      result.params = params;
    }
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace spot
