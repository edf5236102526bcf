#pragma once

#include <span>
#include <string>
#include <vector>

#include "spot/imagery.hpp"
#include "spot/oracle.hpp"
#include "spot/priors.hpp"

namespace spot {

double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct KnnOptions {
  int k = 20;
  double temperature = 0.07;
};

/// Cosine-similarity kNN vote with weights exp(sim/T) over the k most similar
/// training features. Ties in similarity rank by lower index; ties in the
/// vote go to the lowest class.
int knn_classify(std::span<const std::vector<double>> train_features, std::span<const int> train_labels,
                 std::span<const double> query, const KnnOptions& options = {});

/// Mean of the k×k bilinear window of the mask centered at s.
double saliency_score(const SaliencyMask& mask, Point s, int k);
double saliency_score(const Image& mask_image, Point s, int k);

/// (score(final) − score(initial)) / score(initial); throws DataError when the initial score is zero.
double relative_saliency_gain(double initial_score, double final_score);

struct RsgResult {
  std::vector<double> per_token;  ///< tokens with nonzero initial score, in token order
  int excluded = 0;               ///< tokens skipped for zero initial score
  /// Mean over per_token; NaN when every token was excluded.
  double mean() const;
};

/// Per-token RSG between a trajectory's first and last rows.
RsgResult rsg(const Trajectory& trajectory, const SaliencyMask& mask, int k);

/// acc_transfer − acc_original; positive when transferred placements help.
double transfer_delta(double acc_original, double acc_transfer);

struct EvalReport {
  std::string label;  ///< free-form run description, e.g. "prior=isotropic oracle=none"
  double top1 = 0.0;         ///< mean over seeds
  double top1_spread = 0.0;  ///< population std over seeds; 0 for one seed
  int seeds = 1;
  double knn_top1 = -1.0;    ///< negative when not computed
  std::vector<double> per_class;
  int n_images = 0;
  int m = 0;

  void validate() const;
  std::string to_key_value() const;
  static std::string csv_header();
  std::string csv_row() const;
};

std::vector<double> per_class_accuracy(std::span<const int> predictions, std::span<const int> labels, int num_classes);

}  // namespace spot
