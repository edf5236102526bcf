#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spot/encoder.hpp"
#include "spot/metrics.hpp"
#include "spot/oracle.hpp"
#include "spot/priors.hpp"
#include "spot/toytask.hpp"

namespace spot {

/// Encoder, tokenizer, and trainer settings used for the toy experiments.
EncoderConfig toy_encoder_config();
TokenizerConfig toy_tokenizer_config();
TrainConfig toy_train_config(std::uint64_t seed);

/// Sparse and dense budgets for 64×64 images with k = 8.
inline constexpr int kToySparseM = 9;
inline constexpr int kToyDenseM = 64;

/// Initial placements for sample `index`: stochastic priors are keyed by
/// derive_seed(prior.seed, index) so every image has its own stream.
PlacementSet initial_placements(const PriorSpec& prior, std::size_t index, const ToySample& sample);

struct EvalOptions {
  PriorSpec prior;
  std::optional<OracleConfig> oracle;
  bool keep_trajectories = false;
};

/// Per-image outcomes in dataset order.
struct EvalResult {
  std::vector<std::size_t> indices;
  std::vector<int> labels;
  std::vector<int> initial_predictions;
  std::vector<int> final_predictions;  ///< equals initial_predictions without an oracle
  std::vector<double> initial_losses;
  std::vector<double> final_losses;
  std::vector<Trajectory> trajectories;  ///< filled when an oracle ran and keep_trajectories is set

  double baseline_top1() const { return accuracy(initial_predictions, labels); }
  double top1() const { return accuracy(final_predictions, labels); }
  /// Share of images whose final loss does not exceed the initial loss.
  double non_increasing_share() const;
};

/// Evaluates samples [begin, end). Images run in parallel; results are stored by index.
EvalResult evaluate(const EncoderParams& params, const Tokenizer& tokenizer, const ToyDataset& dataset,
                    std::size_t begin, std::size_t end, const EvalOptions& options);

struct SeedSummary {
  double mean = 0.0;
  double spread = 0.0;  ///< population standard deviation over seeds
  std::vector<double> values;
};
SeedSummary summarize(std::vector<double> values);

struct DatasetRsg {
  double mean = 0.0;                ///< mean over images of per-image token means
  std::vector<double> per_image;    ///< images with at least one scorable token
  std::vector<double> per_token;    ///< every scorable token, image-major
  int excluded_tokens = 0;
  int excluded_images = 0;
};
/// Token → image → dataset aggregation over trajectories (in `result.indices` order).
DatasetRsg dataset_rsg(const EvalResult& result, const ToyDataset& dataset, int k);

/// kNN top-1 of samples [val_begin, val_end) against features of [0, train_end),
/// both tokenized with `prior`.
double knn_top1(const EncoderParams& params, const Tokenizer& tokenizer, const ToyDataset& dataset,
                std::size_t train_end, std::size_t val_begin, std::size_t val_end, const PriorSpec& prior,
                const KnnOptions& options = {});

}  // namespace spot
