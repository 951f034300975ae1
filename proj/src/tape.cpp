#include "conceptmil/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conceptmil/errors.hpp"

namespace conceptmil {

namespace {

bool is_vector(const Matrix& m) {
  return !m.empty() && (m.rows() == 1 || m.cols() == 1);
}

}  // namespace

Var Tape::push(Node node) {
  node.value.require_finite("tape op");
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::at(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
  return nodes_[v.id];
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  n.requires_grad = false;
  return push(std::move(n));
}

Var Tape::param(Matrix value) {
  Node n;
  n.op = Op::kParam;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& va = at(a).value;
  const Matrix& vb = at(b).value;
  if (va.cols() != vb.rows()) {
    throw ShapeError("matmul: incompatible shapes " + va.shape_str() + " and " +
                     vb.shape_str());
  }
  Matrix out(va.rows(), vb.cols());
  for (std::size_t i = 0; i < va.rows(); ++i) {
    for (std::size_t k = 0; k < va.cols(); ++k) {
      const double aik = va(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < vb.cols(); ++j) {
        out(i, j) += aik * vb(k, j);
      }
    }
  }
  Node n;
  n.op = Op::kMatmul;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  const Matrix& va = at(a).value;
  Matrix out(va.cols(), va.rows());
  for (std::size_t i = 0; i < va.rows(); ++i) {
    for (std::size_t j = 0; j < va.cols(); ++j) out(j, i) = va(i, j);
  }
  Node n;
  n.op = Op::kTranspose;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Matrix& va = at(a).value;
  const Matrix& vb = at(b).value;
  if (!va.same_shape(vb)) {
    throw ShapeError("add: shape mismatch " + va.shape_str() + " vs " +
                     vb.shape_str());
  }
  Matrix out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += vb.data()[i];
  Node n;
  n.op = Op::kAdd;
  n.value = std::move(out);
  n.inputs = {a.id, b.id};
  n.requires_grad = at(a).requires_grad || at(b).requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Matrix out = at(a).value;
  for (double& v : out.data()) v *= factor;
  Node n;
  n.op = Op::kScale;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.p0 = factor;
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::mean_rows(Var a) {
  const Matrix& va = at(a).value;
  if (va.rows() == 0) {
    throw DegenerateInputError("mean_rows: empty matrix");
  }
  Matrix out(1, va.cols());
  for (std::size_t i = 0; i < va.rows(); ++i) {
    for (std::size_t j = 0; j < va.cols(); ++j) out(0, j) += va(i, j);
  }
  for (double& v : out.data()) v /= static_cast<double>(va.rows());
  Node n;
  n.op = Op::kMeanRows;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::softmax(Var a, Axis axis, double scale) {
  if (!(scale > 0.0)) {
    throw ConfigError("softmax: scale must be positive");
  }
  const Matrix& va = at(a).value;
  va.require_finite("softmax input");
  Matrix out(va.rows(), va.cols());
  // Max subtraction keeps exp() in range for large scales.
  if (axis == Axis::cols) {
    for (std::size_t j = 0; j < va.cols(); ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < va.rows(); ++i) mx = std::max(mx, scale * va(i, j));
      double denom = 0.0;
      for (std::size_t i = 0; i < va.rows(); ++i) {
        out(i, j) = std::exp(scale * va(i, j) - mx);
        denom += out(i, j);
      }
      for (std::size_t i = 0; i < va.rows(); ++i) out(i, j) /= denom;
    }
  } else {
    for (std::size_t i = 0; i < va.rows(); ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < va.cols(); ++j) mx = std::max(mx, scale * va(i, j));
      double denom = 0.0;
      for (std::size_t j = 0; j < va.cols(); ++j) {
        out(i, j) = std::exp(scale * va(i, j) - mx);
        denom += out(i, j);
      }
      for (std::size_t j = 0; j < va.cols(); ++j) out(i, j) /= denom;
    }
  }
  Node n;
  n.op = Op::kSoftmax;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.p0 = scale;
  n.axis = axis;
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::l2_normalize_rows(Var a) {
  const Matrix& va = at(a).value;
  Matrix out = va;
  for (std::size_t r = 0; r < va.rows(); ++r) {
    const double norm = row_norm(va, r);
    if (norm == 0.0) {
      throw DegenerateInputError("l2_normalize_rows: zero row " + std::to_string(r));
    }
    for (double& v : out.row_span(r)) v /= norm;
  }
  Node n;
  n.op = Op::kL2NormalizeRows;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::leaky_relu(Var a, double slope) {
  const Matrix& va = at(a).value;
  Matrix out = va;
  for (double& v : out.data()) {
    if (v < 0.0) v *= slope;
  }
  Node n;
  n.op = Op::kLeakyRelu;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.p0 = slope;
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::cosine(Var u, Var v) {
  const Matrix& vu = at(u).value;
  const Matrix& vv = at(v).value;
  if (!is_vector(vu) || !vu.same_shape(vv)) {
    throw ShapeError("cosine: expected equal-shape vectors, got " +
                     vu.shape_str() + " and " + vv.shape_str());
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < vu.size(); ++i) {
    dot += vu.data()[i] * vv.data()[i];
    nu += vu.data()[i] * vu.data()[i];
    nv += vv.data()[i] * vv.data()[i];
  }
  nu = std::sqrt(nu);
  nv = std::sqrt(nv);
  if (nu == 0.0 || nv == 0.0) {
    throw DegenerateInputError("cosine: zero-norm vector");
  }
  Matrix out(1, 1);
  out(0, 0) = dot / (nu * nv);
  Node n;
  n.op = Op::kCosine;
  n.value = std::move(out);
  n.inputs = {u.id, v.id};
  n.requires_grad = at(u).requires_grad || at(v).requires_grad;
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) {
    throw ContractError("concat_rows: no inputs");
  }
  const std::size_t cols = at(parts[0]).value.cols();
  std::size_t rows = 0;
  bool needs_grad = false;
  for (Var p : parts) {
    const Matrix& vp = at(p).value;
    if (vp.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + vp.shape_str() +
                       " vs expected " + std::to_string(cols) + " columns");
    }
    rows += vp.rows();
    needs_grad = needs_grad || at(p).requires_grad;
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  Node n;
  for (Var p : parts) {
    const Matrix& vp = at(p).value;
    for (std::size_t i = 0; i < vp.rows(); ++i, ++r) {
      std::copy(vp.row_span(i).begin(), vp.row_span(i).end(),
                out.row_span(r).begin());
    }
    n.inputs.push_back(p.id);
  }
  n.op = Op::kConcatRows;
  n.value = std::move(out);
  n.requires_grad = needs_grad;
  return push(std::move(n));
}

Var Tape::log_clamped(Var a, double floor) {
  const Matrix& va = at(a).value;
  Matrix out = va;
  for (double& v : out.data()) v = std::log(std::max(v, floor));
  Node n;
  n.op = Op::kLogClamped;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.p0 = floor;
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

Var Tape::select(Var a, std::size_t r, std::size_t c) {
  const Matrix& va = at(a).value;
  if (r >= va.rows() || c >= va.cols()) {
    throw ShapeError("select: index (" + std::to_string(r) + "," +
                     std::to_string(c) + ") out of " + va.shape_str());
  }
  Matrix out(1, 1);
  out(0, 0) = va(r, c);
  Node n;
  n.op = Op::kSelect;
  n.value = std::move(out);
  n.inputs = {a.id};
  n.sel_r = r;
  n.sel_c = c;
  n.requires_grad = at(a).requires_grad;
  return push(std::move(n));
}

const Matrix& Tape::value(Var v) const { return at(v).value; }

bool Tape::requires_grad(Var v) const { return at(v).requires_grad; }

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_alloc) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
    n.grad_alloc = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& ln = at(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        ln.value.shape_str());
  }
  if (backward_done_) {
    throw ContractError("backward: tape already consumed");
  }
  backward_done_ = true;
  if (!ln.requires_grad) return;  // loss independent of all parameters
  grad_buffer(loss.id)(0, 0) = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.grad_alloc || !n.requires_grad) continue;
    backprop_node(id);
  }
}

void Tape::backprop_node(std::size_t id) {
  // nodes_[id].grad holds dLoss/dNode; push contributions into inputs that
  // require gradients.
  const Node& n = nodes_[id];
  const Matrix& g = n.grad;
  auto wants = [&](std::size_t in) { return nodes_[in].requires_grad; };

  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      return;

    case Op::kMatmul: {
      const std::size_t ia = n.inputs[0], ib = n.inputs[1];
      const Matrix& va = nodes_[ia].value;
      const Matrix& vb = nodes_[ib].value;
      if (wants(ia)) {
        Matrix& da = grad_buffer(ia);  // += G * B^T
        for (std::size_t i = 0; i < va.rows(); ++i) {
          for (std::size_t j = 0; j < vb.cols(); ++j) {
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            for (std::size_t k = 0; k < va.cols(); ++k) {
              da(i, k) += gij * vb(k, j);
            }
          }
        }
      }
      if (wants(ib)) {
        Matrix& db = grad_buffer(ib);  // += A^T * G
        for (std::size_t i = 0; i < va.rows(); ++i) {
          for (std::size_t k = 0; k < va.cols(); ++k) {
            const double aik = va(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < vb.cols(); ++j) {
              db(k, j) += aik * g(i, j);
            }
          }
        }
      }
      return;
    }

    case Op::kTranspose: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = 0; j < g.cols(); ++j) da(j, i) += g(i, j);
      }
      return;
    }

    case Op::kAdd: {
      for (std::size_t in : n.inputs) {
        if (!wants(in)) continue;
        Matrix& d = grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i];
      }
      return;
    }

    case Op::kScale: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da.data()[i] += n.p0 * g.data()[i];
      }
      return;
    }

    case Op::kMeanRows: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      const double inv = 1.0 / static_cast<double>(da.rows());
      for (std::size_t i = 0; i < da.rows(); ++i) {
        for (std::size_t j = 0; j < da.cols(); ++j) da(i, j) += inv * g(0, j);
      }
      return;
    }

    case Op::kSoftmax: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      const Matrix& y = n.value;
      // dx = s * y .* (g - sum(g .* y) per slice)
      if (n.axis == Axis::cols) {
        for (std::size_t j = 0; j < y.cols(); ++j) {
          double dot = 0.0;
          for (std::size_t i = 0; i < y.rows(); ++i) dot += g(i, j) * y(i, j);
          for (std::size_t i = 0; i < y.rows(); ++i) {
            da(i, j) += n.p0 * y(i, j) * (g(i, j) - dot);
          }
        }
      } else {
        for (std::size_t i = 0; i < y.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < y.cols(); ++j) {
            da(i, j) += n.p0 * y(i, j) * (g(i, j) - dot);
          }
        }
      }
      return;
    }

    case Op::kL2NormalizeRows: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      const Matrix& x = nodes_[ia].value;
      const Matrix& y = n.value;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        const double norm = row_norm(x, r);
        double dot = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) dot += g(r, j) * y(r, j);
        for (std::size_t j = 0; j < x.cols(); ++j) {
          da(r, j) += (g(r, j) - dot * y(r, j)) / norm;
        }
      }
      return;
    }

    case Op::kLeakyRelu: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      const Matrix& x = nodes_[ia].value;
      for (std::size_t i = 0; i < x.size(); ++i) {
        da.data()[i] += g.data()[i] * (x.data()[i] >= 0.0 ? 1.0 : n.p0);
      }
      return;
    }

    case Op::kCosine: {
      const std::size_t iu = n.inputs[0], iv = n.inputs[1];
      const Matrix& u = nodes_[iu].value;
      const Matrix& v = nodes_[iv].value;
      double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u.data()[i] * v.data()[i];
        nu2 += u.data()[i] * u.data()[i];
        nv2 += v.data()[i] * v.data()[i];
      }
      const double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
      const double c = dot / (nu * nv);
      const double gs = g(0, 0);
      if (wants(iu)) {
        Matrix& du = grad_buffer(iu);
        for (std::size_t i = 0; i < u.size(); ++i) {
          du.data()[i] += gs * (v.data()[i] / (nu * nv) - c * u.data()[i] / nu2);
        }
      }
      if (wants(iv)) {
        Matrix& dv = grad_buffer(iv);
        for (std::size_t i = 0; i < v.size(); ++i) {
          dv.data()[i] += gs * (u.data()[i] / (nu * nv) - c * v.data()[i] / nv2);
        }
      }
      return;
    }

    case Op::kConcatRows: {
      std::size_t r = 0;
      for (std::size_t in : n.inputs) {
        const std::size_t nr = nodes_[in].value.rows();
        if (wants(in)) {
          Matrix& d = grad_buffer(in);
          for (std::size_t i = 0; i < nr; ++i) {
            for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) += g(r + i, j);
          }
        }
        r += nr;
      }
      return;
    }

    case Op::kLogClamped: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      Matrix& da = grad_buffer(ia);
      const Matrix& x = nodes_[ia].value;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.data()[i] > n.p0) {
          da.data()[i] += g.data()[i] / x.data()[i];
        }
        // Below the clamp the output is constant.
      }
      return;
    }

    case Op::kSelect: {
      const std::size_t ia = n.inputs[0];
      if (!wants(ia)) return;
      grad_buffer(ia)(n.sel_r, n.sel_c) += g(0, 0);
      return;
    }
  }
}

Matrix Tape::grad(Var v) const {
  if (!backward_done_) {
    throw ContractError("grad: backward() has not run");
  }
  const Node& n = at(v);
  if (!n.requires_grad) {
    throw ContractError("grad: node does not require gradients");
  }
  if (!n.grad_alloc) {
    return Matrix(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const {
  const Node& n = at(v);
  return n.requires_grad && n.grad_alloc;
}

}  // namespace conceptmil
