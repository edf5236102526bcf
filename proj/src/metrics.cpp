#include "spot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "spot/errors.hpp"
#include "spot/subpixel.hpp"

namespace spot {
namespace {

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  if (predictions.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  long hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

int knn_classify(std::span<const std::vector<double>> train_features, std::span<const int> train_labels,
                 std::span<const double> query, const KnnOptions& options) {
  const int n = static_cast<int>(train_features.size());
  if (n == 0) throw std::invalid_argument("knn: empty training set");
  if (train_labels.size() != train_features.size()) throw std::invalid_argument("knn: label count mismatch");
  if (options.k < 1 || options.k > n) throw std::invalid_argument("knn: k must be in [1, train size]");
  if (!(options.temperature > 0.0)) throw std::invalid_argument("knn: temperature must be > 0");
  const double qn = norm2(query);
  if (qn == 0.0) throw DataError("knn: zero-norm query feature");

  struct Cand {
    double sim;
    int index;
  };
  std::vector<Cand> cands(n);
  for (int i = 0; i < n; ++i) {
    const auto& f = train_features[i];
    if (f.size() != query.size()) throw DataError("knn: feature dimension mismatch");
    const double fn = norm2(f);
    if (fn == 0.0) throw DataError("knn: zero-norm training feature");
    double dot = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) dot += f[j] * query[j];
    cands[i] = {dot / (fn * qn), i};
  }
  auto closer = [](const Cand& a, const Cand& b) { return a.sim > b.sim || (a.sim == b.sim && a.index < b.index); };
  std::partial_sort(cands.begin(), cands.begin() + options.k, cands.end(), closer);

  const int num_classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;
  std::vector<double> votes(num_classes, 0.0);
  // Neighbors are summed in rank order so the vote is deterministic.
  for (int r = 0; r < options.k; ++r) {
    votes[train_labels[cands[r].index]] += std::exp(cands[r].sim / options.temperature);
  }
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

double saliency_score(const Image& mask_image, Point s, int k) {
  const auto window = extract_patch(mask_image, s, k);
  double sum = 0.0;
  for (double v : window) sum += v;
  return sum / static_cast<double>(window.size());
}

double saliency_score(const SaliencyMask& mask, Point s, int k) { return saliency_score(mask.as_image(), s, k); }

double relative_saliency_gain(double initial_score, double final_score) {
  if (initial_score == 0.0) throw DataError("rsg: zero initial saliency score");
  return (final_score - initial_score) / initial_score;
}

double RsgResult::mean() const {
  if (per_token.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(per_token.begin(), per_token.end(), 0.0) / static_cast<double>(per_token.size());
}

RsgResult rsg(const Trajectory& trajectory, const SaliencyMask& mask, int k) {
  if (trajectory.positions.empty()) throw DataError("rsg: empty trajectory");
  const Image img = mask.as_image();
  const auto& first = trajectory.initial();
  const auto& last = trajectory.final();
  RsgResult out;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const double s0 = saliency_score(img, first[i], k);
    if (s0 == 0.0) {
      ++out.excluded;
      continue;
    }
    out.per_token.push_back(relative_saliency_gain(s0, saliency_score(img, last[i], k)));
  }
  return out;
}

double transfer_delta(double acc_original, double acc_transfer) { return acc_transfer - acc_original; }

std::vector<double> per_class_accuracy(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
  std::vector<long> hits(num_classes, 0), totals(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++totals.at(labels[i]);
    hits[labels[i]] += predictions[i] == labels[i];
  }
  std::vector<double> out(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) out[c] = totals[c] ? static_cast<double>(hits[c]) / totals[c] : 0.0;
  return out;
}

void EvalReport::validate() const {
  if (n_images < 1) throw std::invalid_argument("report: n_images must be >= 1");
  if (seeds < 1) throw std::invalid_argument("report: seeds must be >= 1");
  if (top1 < 0.0 || top1 > 1.0) throw std::invalid_argument("report: top1 outside [0,1]");
  if (knn_top1 > 1.0) throw std::invalid_argument("report: knn_top1 outside [0,1]");
}

std::string EvalReport::to_key_value() const {
  std::ostringstream os;
  os << "label=" << label << '\n';
  os << "top1=" << format_double(top1) << '\n';
  os << "top1_spread=" << format_double(top1_spread) << '\n';
  os << "seeds=" << seeds << '\n';
  if (knn_top1 >= 0.0) os << "knn_top1=" << format_double(knn_top1) << '\n';
  os << "n_images=" << n_images << '\n';
  os << "m=" << m << '\n';
  for (std::size_t c = 0; c < per_class.size(); ++c) os << "class" << c << "_top1=" << format_double(per_class[c]) << '\n';
  return os.str();
}

std::string EvalReport::csv_header() { return "label,m,n_images,seeds,top1,top1_spread,knn_top1"; }

std::string EvalReport::csv_row() const {
  return label + ',' + std::to_string(m) + ',' + std::to_string(n_images) + ',' + std::to_string(seeds) + ',' +
         format_double(top1) + ',' + format_double(top1_spread) + ',' +
         (knn_top1 >= 0.0 ? format_double(knn_top1) : std::string());
}

}  // namespace spot
