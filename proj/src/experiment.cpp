#include "spot/experiment.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "spot/errors.hpp"
#include "spot/parallel.hpp"
#include "spot/rng.hpp"

namespace spot {

EncoderConfig toy_encoder_config() {
  EncoderConfig c;
  c.depth = 2;
  c.width = 64;
  c.heads = 4;
  c.mlp_ratio = 4;
  c.num_classes = kToyClasses;
  c.token_dim = 8 * 8 * 3;
  return c;
}

TokenizerConfig toy_tokenizer_config() {
  TokenizerConfig t;
  t.window = 8;
  t.embed_dim = 64;
  t.num_freqs = 6;
  return t;
}

TrainConfig toy_train_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.encoder = toy_encoder_config();
  c.tokenizer = toy_tokenizer_config();
  // Small batches and a long warmup get the encoder past the early plateau
  // where it only reads colour; mixed priors and budgets keep it usable at
  // every evaluation budget.
  c.epochs = 40;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.warmup_steps = 300;
  c.priors = {PriorKind::isotropic, PriorKind::uniform, PriorKind::salient};
  c.budgets = {kToySparseM, 16, 36, kToyDenseM};
  return c;
}

PlacementSet initial_placements(const PriorSpec& prior, std::size_t index, const ToySample& sample) {
  PriorSpec spec = prior;
  if (is_stochastic(prior.kind)) spec.seed = derive_seed(prior.seed, index);
  return sample_prior(spec, sample.image.height(), sample.image.width(), &sample.saliency);
}

double EvalResult::non_increasing_share() const {
  if (final_losses.empty()) throw std::invalid_argument("eval: no images");
  long ok = 0;
  for (std::size_t i = 0; i < final_losses.size(); ++i) ok += final_losses[i] <= initial_losses[i];
  return static_cast<double>(ok) / static_cast<double>(final_losses.size());
}

EvalResult evaluate(const EncoderParams& params, const Tokenizer& tokenizer, const ToyDataset& dataset,
                    std::size_t begin, std::size_t end, const EvalOptions& options) {
  if (begin >= end || end > dataset.size()) throw std::invalid_argument("eval: bad index range");
  options.prior.validate();
  if (options.oracle) options.oracle->validate();
  const long n = static_cast<long>(end - begin);
  const double smoothing = params.config().label_smoothing;

  EvalResult r;
  r.indices.resize(n);
  r.labels.resize(n);
  r.initial_predictions.resize(n);
  r.final_predictions.resize(n);
  r.initial_losses.resize(n);
  r.final_losses.resize(n);
  if (options.oracle && options.keep_trajectories) r.trajectories.resize(n);

  parallel_for(n, [&](long i) {
    const std::size_t index = begin + i;
    const auto& s = dataset.samples[index];
    const auto start = initial_placements(options.prior, index, s);
    const auto trace = forward(params, tokenizer(s.image, start));
    r.indices[i] = index;
    r.labels[i] = s.label;
    r.initial_predictions[i] = trace.prediction();
    r.initial_losses[i] = cross_entropy(trace.logits, s.label, smoothing);
    if (!options.oracle) {
      r.final_predictions[i] = r.initial_predictions[i];
      r.final_losses[i] = r.initial_losses[i];
      return;
    }
    OracleConfig oc = *options.oracle;
    oc.seed = derive_seed(options.oracle->seed, index);
    auto traj = spot_on_search(params, s.image, s.label, start, tokenizer, oc);
    r.final_predictions[i] = traj.final_prediction;
    r.final_losses[i] = traj.losses.back();
    if (options.keep_trajectories) r.trajectories[i] = std::move(traj);
  });
  return r;
}

SeedSummary summarize(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  SeedSummary s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.spread = std::sqrt(var / n);
  s.values = std::move(values);
  return s;
}

DatasetRsg dataset_rsg(const EvalResult& result, const ToyDataset& dataset, int k) {
  if (result.trajectories.size() != result.indices.size()) throw DataError("rsg: evaluation kept no trajectories");
  DatasetRsg out;
  for (std::size_t i = 0; i < result.indices.size(); ++i) {
    const auto tok = rsg(result.trajectories[i], dataset.samples[result.indices[i]].saliency, k);
    out.excluded_tokens += tok.excluded;
    if (tok.per_token.empty()) {
      ++out.excluded_images;
      continue;
    }
    out.per_image.push_back(tok.mean());
    out.per_token.insert(out.per_token.end(), tok.per_token.begin(), tok.per_token.end());
  }
  if (out.per_image.empty()) throw DataError("rsg: every token had zero initial saliency");
  out.mean = std::accumulate(out.per_image.begin(), out.per_image.end(), 0.0) / static_cast<double>(out.per_image.size());
  return out;
}

double knn_top1(const EncoderParams& params, const Tokenizer& tokenizer, const ToyDataset& dataset,
                std::size_t train_end, std::size_t val_begin, std::size_t val_end, const PriorSpec& prior,
                const KnnOptions& options) {
  if (train_end < 1 || val_begin >= val_end || val_end > dataset.size()) throw std::invalid_argument("knn: bad ranges");
  auto features = [&](std::size_t lo, std::size_t hi) {
    std::vector<std::vector<double>> f(hi - lo);
    parallel_for(static_cast<long>(hi - lo), [&](long i) {
      const auto& s = dataset.samples[lo + i];
      f[i] = forward(params, tokenizer(s.image, initial_placements(prior, lo + i, s))).cls_feature;
    });
    return f;
  };
  const auto train = features(0, train_end);
  const auto val = features(val_begin, val_end);
  std::vector<int> train_labels(train_end);
  for (std::size_t i = 0; i < train_end; ++i) train_labels[i] = dataset.samples[i].label;

  std::vector<int> preds(val.size()), labels(val.size());
  parallel_for(static_cast<long>(val.size()), [&](long i) {
    preds[i] = knn_classify(train, train_labels, val[i], options);
    labels[i] = dataset.samples[val_begin + i].label;
  });
  return accuracy(preds, labels);
}

}  // namespace spot
