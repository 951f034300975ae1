#include <doctest.h>

#include <cmath>
#include <vector>

#include "conceptmil/errors.hpp"
#include "conceptmil/metrics.hpp"
#include "conceptmil/rng.hpp"

using namespace conceptmil;

namespace {

// O(N^2) pairwise oracle, ties at half credit.
double brute_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  for (int l : labels) n_neg += (l == 0);
  return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

TEST_CASE("roc_auc basics") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1},
                std::vector<int>{1, 1, 0, 0}) == doctest::Approx(1.0));
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9},
                std::vector<int>{1, 1, 0, 0}) == doctest::Approx(0.0));
  CHECK(roc_auc(std::vector<double>{0.9, 0.8, 0.8, 0.1},
                std::vector<int>{1, 0, 1, 0}) == doctest::Approx(0.875));
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}),
                  ValidationError);
}

TEST_CASE("roc_auc equals the pairwise brute force exactly, ties included") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.index(99);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    bool both = false;
    do {
      for (std::size_t i = 0; i < n; ++i) {
        // Quantized scores force plenty of ties.
        scores[i] = std::floor(rng.uniform() * 8.0) / 8.0;
        labels[i] = rng.uniform() < 0.5 ? 0 : 1;
      }
      both = false;
      bool pos = false, neg = false;
      for (int l : labels) (l ? pos : neg) = true;
      both = pos && neg;
    } while (!both);
    CAPTURE(trial);
    CHECK(roc_auc(scores, labels) == brute_auc(scores, labels));
  }
}

TEST_CASE("roc_auc is invariant under strictly monotone transforms") {
  Rng rng(7);
  std::vector<double> scores(40);
  std::vector<int> labels(40);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform();
    labels[i] = i % 3 == 0;
  }
  const double base = roc_auc(scores, labels);
  std::vector<double> affine(scores.size()), expup(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    affine[i] = 2.0 * scores[i] + 3.0;
    expup[i] = std::exp(scores[i]);
  }
  CHECK(roc_auc(affine, labels) == doctest::Approx(base));
  CHECK(roc_auc(expup, labels) == doctest::Approx(base));
}

TEST_CASE("roc_auc complement identity for tie-free scores") {
  Rng rng(19);
  std::vector<double> scores(30);
  std::vector<int> labels(30);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = rng.uniform() + 1e-9 * static_cast<double>(i);  // distinct
    labels[i] = i % 2;
  }
  std::vector<double> negated(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) negated[i] = -scores[i];
  CHECK(roc_auc(scores, labels) + roc_auc(negated, labels) == doctest::Approx(1.0));
}

TEST_CASE("macro_auc") {
  SUBCASE("binary reduces to roc_auc on class-1 probability") {
    Rng rng(5);
    const std::size_t n = 50;
    Matrix probs(n, 2);
    std::vector<int> labels(n);
    std::vector<double> p1(n);
    for (std::size_t i = 0; i < n; ++i) {
      p1[i] = rng.uniform();
      probs(i, 0) = 1.0 - p1[i];
      probs(i, 1) = p1[i];
      labels[i] = rng.uniform() < 0.4;
    }
    CHECK(macro_auc(probs, labels) == doctest::Approx(roc_auc(p1, labels)));
  }
  SUBCASE("perfect classifier") {
    Matrix probs(6, 3);
    std::vector<int> labels{0, 1, 2, 0, 1, 2};
    for (std::size_t i = 0; i < 6; ++i) probs(i, labels[i]) = 1.0;
    CHECK(macro_auc(probs, labels) == doctest::Approx(1.0));
  }
  SUBCASE("random uniform probabilities sit near one half") {
    Rng rng(11);
    const std::size_t n = 200;
    Matrix probs(n, 3);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        probs(i, c) = rng.uniform() + 1e-9;
        sum += probs(i, c);
      }
      for (std::size_t c = 0; c < 3; ++c) probs(i, c) /= sum;
      labels[i] = static_cast<int>(rng.index(3));
    }
    const double auc = macro_auc(probs, labels);
    CHECK(auc > 0.4);
    CHECK(auc < 0.6);
  }
  SUBCASE("missing class") {
    Matrix probs(3, 3);
    std::vector<int> labels{0, 0, 1};
    CHECK_THROWS_AS(macro_auc(probs, labels), ValidationError);
  }
}

TEST_CASE("accuracy") {
  Matrix probs(4, 2, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7});
  CHECK(accuracy(probs, std::vector<int>{0, 1, 0, 1}) == doctest::Approx(1.0));
  CHECK(accuracy(probs, std::vector<int>{1, 0, 1, 0}) == doctest::Approx(0.0));
  CHECK(accuracy(probs, std::vector<int>{0, 1, 0, 0}) == doctest::Approx(0.75));

  SUBCASE("argmax ties break toward the lowest class index") {
    Matrix tied(1, 3, {0.4, 0.4, 0.2});
    CHECK(accuracy(tied, std::vector<int>{0}) == doctest::Approx(1.0));
    CHECK(accuracy(tied, std::vector<int>{1}) == doctest::Approx(0.0));
  }
}

TEST_CASE("macro_f1 basics") {
  Matrix probs(4, 2, {0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7});
  CHECK(macro_f1(probs, std::vector<int>{0, 1, 0, 1}) == doctest::Approx(1.0));
  CHECK(macro_f1(probs, std::vector<int>{1, 0, 1, 0}) == doctest::Approx(0.0));
}
