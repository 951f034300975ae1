#include <doctest.h>

#include <cmath>

#include "conceptmil/errors.hpp"
#include "conceptmil/matrix.hpp"
#include "conceptmil/rng.hpp"
#include "conceptmil/tape.hpp"
#include "fd_check.hpp"
#include "helpers.hpp"

using namespace conceptmil;
using testutil::random_matrix;

TEST_CASE("matmul basics") {
  Tape t;
  Var a = t.constant(Matrix(2, 2, {1, 2, 3, 4}));
  Var id = t.constant(Matrix::identity(2));
  Var zero = t.constant(Matrix(2, 2));

  CHECK(t.value(t.matmul(id, a)).data() == std::vector<double>{1, 2, 3, 4});
  CHECK(t.value(t.matmul(a, id)).data() == std::vector<double>{1, 2, 3, 4});
  CHECK(t.value(t.matmul(zero, a)).data() == std::vector<double>{0, 0, 0, 0});

  Var bad = t.constant(Matrix(3, 2));
  CHECK_THROWS_WITH_AS(t.matmul(a, bad),
                       doctest::Contains("2x2") && doctest::Contains("3x2"),
                       ShapeError);
}

TEST_CASE("softmax values and invariants") {
  Tape t;

  SUBCASE("constant column is uniform for any scale") {
    Var m = t.constant(Matrix(4, 1, {2.5, 2.5, 2.5, 2.5}));
    for (double s : {0.5, 1.0, 10.0, 100.0}) {
      const Matrix& y = t.value(t.softmax(m, Axis::cols, s));
      for (std::size_t i = 0; i < 4; ++i) CHECK(y(i, 0) == doctest::Approx(0.25));
    }
  }

  SUBCASE("two-entry column, scale 1") {
    Var m = t.constant(Matrix(2, 1, {1.0, 0.0}));
    const Matrix& y = t.value(t.softmax(m, Axis::cols, 1.0));
    CHECK(y(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
    CHECK(y(1, 0) == doctest::Approx(0.2689).epsilon(1e-4));
  }

  SUBCASE("large scale saturates") {
    Var m = t.constant(Matrix(2, 1, {1.0, 0.0}));
    const Matrix& y = t.value(t.softmax(m, Axis::cols, 100.0));
    CHECK(y(0, 0) > 0.9999);
    CHECK(y(1, 0) < 1e-4);
  }

  SUBCASE("row axis normalizes rows") {
    Var m = t.constant(Matrix(2, 3, {0, 0, 0, 1, 2, 3}));
    const Matrix& y = t.value(t.softmax(m, Axis::rows, 2.0));
    for (std::size_t r = 0; r < 2; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 3; ++c) sum += y(r, c);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  SUBCASE("slices sum to one, entries in (0,1), random inputs") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Matrix m = random_matrix(5, 4, 900 + seed, 3.0);
      Tape tape;
      const Matrix& y = tape.value(tape.softmax(tape.constant(m), Axis::cols, 10.0));
      for (std::size_t c = 0; c < y.cols(); ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          sum += y(r, c);
          CHECK(y(r, c) > 0.0);
          CHECK(y(r, c) < 1.0);
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-9);
      }
    }
  }

  SUBCASE("non-finite input is rejected") {
    CHECK_THROWS_AS(
        t.constant(Matrix(1, 2, {1.0, std::numeric_limits<double>::infinity()})),
        NumericError);
  }
}

TEST_CASE("l2_normalize_rows") {
  Tape t;
  SUBCASE("3-4-5 triangle") {
    const Matrix& y = t.value(t.l2_normalize_rows(t.constant(Matrix(1, 2, {3, 4}))));
    CHECK(y(0, 0) == doctest::Approx(0.6));
    CHECK(y(0, 1) == doctest::Approx(0.8));
  }
  SUBCASE("1/sqrt(2)") {
    const Matrix& y = t.value(t.l2_normalize_rows(t.constant(Matrix(1, 2, {1, 1}))));
    CHECK(y(0, 0) == doctest::Approx(0.70711).epsilon(1e-5));
  }
  SUBCASE("idempotent within 1e-12") {
    Matrix m = random_matrix(4, 6, 7);
    Tape tape;
    Var once = tape.l2_normalize_rows(tape.constant(m));
    Var twice = tape.l2_normalize_rows(once);
    const Matrix& a = tape.value(once);
    const Matrix& b = tape.value(twice);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::fabs(a.data()[i] - b.data()[i]) <= 1e-12);
    }
  }
  SUBCASE("unit row is unchanged") {
    const Matrix& y = t.value(t.l2_normalize_rows(t.constant(Matrix(1, 2, {0, 1}))));
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == 1.0);
  }
  SUBCASE("zero row names the row index") {
    Matrix m(3, 2, {1, 0, 0, 0, 0, 1});
    CHECK_THROWS_WITH_AS(t.l2_normalize_rows(t.constant(m)),
                         doctest::Contains("row 1"), DegenerateInputError);
  }
}

TEST_CASE("cosine") {
  Tape t;
  Var u = t.constant(Matrix(1, 3, {0.3, -0.2, 0.9}));
  CHECK(t.value(t.cosine(u, u))(0, 0) == doctest::Approx(1.0));

  Var e1 = t.constant(Matrix(1, 2, {1, 0}));
  Var e2 = t.constant(Matrix(1, 2, {0, 1}));
  CHECK(t.value(t.cosine(e1, e2))(0, 0) == doctest::Approx(0.0));

  Var diag = t.constant(Matrix(1, 2, {1, 1}));
  CHECK(t.value(t.cosine(e1, diag))(0, 0) == doctest::Approx(0.70711).epsilon(1e-5));

  CHECK_THROWS_AS(t.cosine(e1, t.constant(Matrix(1, 2))), DegenerateInputError);

  SUBCASE("symmetric and scale invariant") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      Matrix a = random_matrix(1, 5, 100 + seed);
      Matrix b = random_matrix(1, 5, 200 + seed);
      const double lambda = rng.uniform(0.1, 10.0);
      Matrix scaled = a;
      for (double& v : scaled.data()) v *= lambda;
      Tape tape;
      const double ab = tape.value(tape.cosine(tape.constant(a), tape.constant(b)))(0, 0);
      const double ba = tape.value(tape.cosine(tape.constant(b), tape.constant(a)))(0, 0);
      const double sab =
          tape.value(tape.cosine(tape.constant(scaled), tape.constant(b)))(0, 0);
      CHECK(std::fabs(ab - ba) <= 1e-12);
      CHECK(std::fabs(ab - sab) <= 1e-12);
      CHECK(ab >= -1.0 - 1e-12);
      CHECK(ab <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("leaky_relu") {
  Tape t;
  const Matrix& pos = t.value(t.leaky_relu(t.constant(Matrix(1, 3, {1, 2, 3})), 0.01));
  CHECK(pos.data() == std::vector<double>{1, 2, 3});
  const Matrix& single = t.value(t.leaky_relu(t.constant(Matrix(1, 1, {-1})), 0.01));
  CHECK(single(0, 0) == doctest::Approx(-0.01));
  const Matrix& pair = t.value(t.leaky_relu(t.constant(Matrix(1, 2, {2, -2})), 0.1));
  CHECK(pair(0, 0) == doctest::Approx(2.0));
  CHECK(pair(0, 1) == doctest::Approx(-0.2));
}

TEST_CASE("backward on a linear loss gives the fixed factor") {
  Matrix w = random_matrix(1, 4, 3);
  const Matrix x = random_matrix(4, 1, 4);
  Tape t;
  Var wv = t.param(w);
  Var loss = t.matmul(wv, t.constant(x));
  t.backward(loss);
  const Matrix g = t.grad(wv);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g(0, i) == doctest::Approx(x(i, 0)));
}

TEST_CASE("backward contract") {
  SUBCASE("non-scalar loss") {
    Tape t;
    Var w = t.param(Matrix(2, 2, {1, 2, 3, 4}));
    CHECK_THROWS_AS(t.backward(w), ContractError);
  }
  SUBCASE("re-entry is forbidden") {
    Tape t;
    Var w = t.param(Matrix(1, 1, {2.0}));
    Var loss = t.scale(w, 3.0);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), ContractError);
  }
  SUBCASE("grad before backward") {
    Tape t;
    Var w = t.param(Matrix(1, 1, {2.0}));
    CHECK_THROWS_AS(t.grad(w), ContractError);
  }
  SUBCASE("grad of a constant") {
    Tape t;
    Var c = t.constant(Matrix(1, 1, {2.0}));
    Var w = t.param(Matrix(1, 1, {3.0}));
    Var loss = t.matmul(w, c);
    t.backward(loss);
    CHECK_THROWS_AS(t.grad(c), ContractError);
    CHECK_FALSE(t.has_grad(c));
  }
  SUBCASE("unused parameter gets a zero gradient") {
    Tape t;
    Var used = t.param(Matrix(1, 1, {1.0}));
    Var unused = t.param(Matrix(2, 3));
    Var loss = t.scale(used, 2.0);
    t.backward(loss);
    const Matrix g = t.grad(unused);
    CHECK(g.rows() == 2);
    for (double v : g.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("gradients match finite differences: individual ops") {
  SUBCASE("softmax") {
    Matrix m = random_matrix(4, 3, 11);
    const double err = fdcheck::max_grad_rel_err(
        [](Tape& t, std::span<const Var> vars) {
          Var y = t.softmax(vars[0], Axis::cols, 3.0);
          // Weighted sum to a scalar so every entry matters.
          return t.matmul(t.matmul(t.constant(Matrix(1, 4, {0.3, -1.2, 0.7, 2.0})), y),
                          t.constant(Matrix(3, 1, {1.0, -0.5, 0.25})));
        },
        {&m});
    CHECK(err < 1e-4);
  }
  SUBCASE("l2_normalize_rows after matmul") {
    Matrix a = random_matrix(2, 3, 21);
    Matrix b = random_matrix(3, 4, 22);
    const double err = fdcheck::max_grad_rel_err(
        [](Tape& t, std::span<const Var> vars) {
          Var y = t.l2_normalize_rows(t.matmul(vars[0], vars[1]));
          return t.matmul(t.matmul(t.constant(Matrix(1, 2, {1.0, 0.5})), y),
                          t.constant(Matrix(4, 1, {0.2, -0.4, 1.0, 0.3})));
        },
        {&a, &b});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("gradients match finite differences: 20 seeded random graphs over all ops") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng dims(1000 + seed);
    const std::size_t n = 2 + dims.index(3);
    const std::size_t m = 2 + dims.index(3);
    const std::size_t d = 2 + dims.index(4);
    Matrix a = random_matrix(n, d, 5000 + seed);
    Matrix b = random_matrix(m, d, 6000 + seed);
    Matrix u = random_matrix(1, d, 7000 + seed);

    // Composite touching every differentiable op.
    const double err = fdcheck::max_grad_rel_err(
        [&](Tape& t, std::span<const Var> vars) {
          Var av = vars[0], bv = vars[1], uv = vars[2];
          Var sim = t.matmul(av, t.transpose(bv));               // n x m
          Var w = t.softmax(sim, Axis::cols, 4.0);               // n x m
          Var h = t.matmul(t.transpose(w), av);                  // m x d
          Var hn = t.l2_normalize_rows(h);                       // m x d
          Var pooled = t.mean_rows(hn);                          // 1 x d
          Var act = t.leaky_relu(t.add(pooled, t.scale(uv, 0.5)), 0.1);
          Var cos = t.cosine(act, uv);                           // 1 x 1
          Var both = t.concat_rows(std::vector<Var>{cos, t.select(hn, 0, 0)});
          Var probs = t.softmax(both, Axis::cols, 2.0);          // 2 x 1
          return t.scale(t.log_clamped(t.select(probs, 0, 0)), -1.0);
        },
        {&a, &b, &u});
    CAPTURE(seed);
    CHECK(err < 1e-4);
  }
}
