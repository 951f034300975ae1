#pragma once

// Central finite-difference oracle for gradient checks. Lives in test code
// and touches only Matrix values, never the tape's backward rules.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "conceptmil/matrix.hpp"
#include "conceptmil/rng.hpp"
#include "conceptmil/tape.hpp"

namespace fdcheck {

template <typename Forward>
double central_diff(Forward&& value_of, conceptmil::Matrix& m, std::size_t r,
                    std::size_t c, double h = 1e-5) {
  const double orig = m(r, c);
  m(r, c) = orig + h;
  const double up = value_of();
  m(r, c) = orig - h;
  const double down = value_of();
  m(r, c) = orig;
  return (up - down) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1e-6, std::fabs(a), std::fabs(b)});
}

// Rebuilds the graph via `build(tape, vars)` (vars bound to `params` in
// order), compares tape gradients against central differences and returns
// the worst relative error. Samples at most `max_entries` entries per
// parameter when a parameter is large.
template <typename Build>
double max_grad_rel_err(Build&& build, std::vector<conceptmil::Matrix*> params,
                        std::size_t max_entries = static_cast<std::size_t>(-1),
                        std::uint64_t sample_seed = 1) {
  using namespace conceptmil;
  auto value_of = [&]() {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto* p : params) vars.push_back(tape.param(*p));
    return tape.value(build(tape, vars))(0, 0);
  };

  std::vector<Matrix> grads;
  {
    Tape tape;
    std::vector<Var> vars;
    for (auto* p : params) vars.push_back(tape.param(*p));
    Var loss = build(tape, vars);
    tape.backward(loss);
    for (Var v : vars) grads.push_back(tape.grad(v));
  }

  Rng rng(sample_seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& m = *params[pi];
    std::vector<std::pair<std::size_t, std::size_t>> entries;
    if (m.size() <= max_entries) {
      for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) entries.emplace_back(r, c);
      }
    } else {
      for (std::size_t k = 0; k < max_entries; ++k) {
        entries.emplace_back(rng.index(m.rows()), rng.index(m.cols()));
      }
    }
    for (const auto& [r, c] : entries) {
      const double fd = central_diff(value_of, m, r, c);
      worst = std::max(worst, rel_err(grads[pi](r, c), fd));
    }
  }
  return worst;
}

}  // namespace fdcheck
