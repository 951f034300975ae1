#include "conceptmil/metrics.hpp"

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>

#include "conceptmil/errors.hpp"

namespace conceptmil {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += (l != 0);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("roc_auc: needs both classes present");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank-sum with tie groups sharing the average rank. Ranks are multiples
  // of 0.5, so the sum stays exact in doubles and matches the pairwise
  // count bit for bit.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

std::size_t num_classes_checked(const Matrix& probs, std::span<const int> labels) {
  if (probs.rows() != labels.size()) {
    throw ShapeError("metric: " + std::to_string(probs.rows()) + " rows vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (probs.rows() == 0 || probs.cols() == 0) {
    throw ValidationError("metric: empty probability matrix");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= probs.cols()) {
      throw ValidationError("metric: label " + std::to_string(l) +
                            " outside " + std::to_string(probs.cols()) + " classes");
    }
  }
  return probs.cols();
}

std::size_t argmax_row(const Matrix& probs, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.cols(); ++c) {
    if (probs(r, c) > probs(r, best)) best = c;
  }
  return best;
}

}  // namespace

double macro_auc(const Matrix& probs, std::span<const int> labels) {
  const std::size_t k = num_classes_checked(probs, labels);
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> scores(probs.rows());
    std::vector<int> one_vs_rest(probs.rows());
    std::size_t present = 0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      scores[r] = probs(r, c);
      one_vs_rest[r] = (static_cast<std::size_t>(labels[r]) == c) ? 1 : 0;
      present += one_vs_rest[r];
    }
    if (present == 0 || present == probs.rows()) {
      throw ValidationError("macro_auc: class " + std::to_string(c) +
                            " missing from labels");
    }
    total += roc_auc(scores, one_vs_rest);
  }
  return total / static_cast<double>(k);
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
  num_classes_checked(probs, labels);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    if (argmax_row(probs, r) == static_cast<std::size_t>(labels[r])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

double macro_f1(const Matrix& probs, std::span<const int> labels) {
  const std::size_t k = num_classes_checked(probs, labels);
  std::vector<std::size_t> tp(k, 0), fp(k, 0), fn(k, 0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const std::size_t pred = argmax_row(probs, r);
    const std::size_t truth = static_cast<std::size_t>(labels[r]);
    if (pred == truth) {
      ++tp[pred];
    } else {
      ++fp[pred];
      ++fn[truth];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    total += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  return total / static_cast<double>(k);
}

}  // namespace conceptmil
