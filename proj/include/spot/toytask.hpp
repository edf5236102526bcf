#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "spot/encoder.hpp"
#include "spot/imagery.hpp"
#include "spot/priors.hpp"
#include "spot/subpixel.hpp"

namespace spot {

inline constexpr int kToySize = 64;
inline constexpr int kToyClasses = 8;

enum class ToyShape { disk = 0, square = 1, triangle = 2, cross = 3 };

/// Label = 2·shape + color family (0 warm, 1 cool).
struct ToySample {
  Image image;
  int label = 0;
  SaliencyMask saliency;  ///< shape support dilated by 2 px, binary
};

struct ToyDataset {
  std::vector<ToySample> samples;
  std::uint64_t seed = 0;

  std::size_t size() const { return samples.size(); }
  /// First ⌊0.9·n⌋ indices.
  std::size_t train_count() const { return samples.size() * 9 / 10; }
  std::vector<int> labels() const;
};

/// Appearance knobs. Each shape carries a fill pattern aligned with the image
/// axes (disk flat, square horizontal stripes, triangle vertical stripes,
/// cross checker); the contrast sets how legible it is inside one window.
struct ToyStyle {
  double fill_contrast_min = 0.3;
  double fill_contrast_max = 0.6;
};

/// Class of sample i is i mod 8, so any n gives counts within ±1.
ToyDataset gen_dataset(int n, std::uint64_t seed, const ToyStyle& style = {});

/// Directory of PPM images, PGM masks, and manifest.csv (index,label,image,mask).
void save_dataset(const std::filesystem::path& dir, const ToyDataset& dataset);
ToyDataset load_dataset(const std::filesystem::path& dir);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double min_lr = 1e-5;
  double weight_decay = 0.05;
  int warmup_steps = 50;
  std::uint64_t seed = 0;
  /// Each training sample draws its prior from this list and its budget
  /// from `budgets` (one budget per batch).
  std::vector<PriorKind> priors{PriorKind::isotropic};
  std::vector<int> budgets{64};
  EncoderConfig encoder;
  TokenizerConfig tokenizer;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
};

struct TrainResult {
  EncoderParams params;  ///< weights from the epoch with the best validation accuracy
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_val_top1 = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam with decoupled weight decay, linear warmup, and cosine decay.
/// Per-sample gradients are summed in index order, so the result does not
/// depend on the thread count. Validation uses dense isotropic placements.
/// Throws NumericError on a non-finite loss.
TrainResult train_toy(const TrainConfig& config, const ToyDataset& dataset, const EpochCallback& on_epoch = {});

/// Top-1 over samples [begin, end) using a fixed placement set.
double evaluate_fixed(const EncoderParams& params, const Tokenizer& tokenizer, const ToyDataset& dataset,
                      std::size_t begin, std::size_t end, const PlacementSet& placements);

}  // namespace spot
