// SPDX-License-Identifier: Apache-2.0
#include "m3/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "m3/parameter_store.hpp"

namespace m3 {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, Tensor(), nullptr, false});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(const ParameterStore& store, const std::string& name) {
  if (store_ != nullptr && store_ != &store)
    throw std::logic_error("tape already bound to a different parameter store");
  store_ = &store;
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  nodes_.push_back(Node{Tensor(), &store.at(name), Tensor(), nullptr, record_});
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_ids_.emplace(name, id);
  return Var{this, id};
}

Var Tape::push(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (const Var& v : inputs) {
      if (v.tape != this) throw std::logic_error("operand recorded on a different tape");
      needs = needs || nodes_[v.id].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), nullptr, Tensor(), needs ? std::move(fn) : nullptr, needs});
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  const Tensor& v = value(id);
  if (n.grad.size() != v.size()) n.grad = Tensor(v.shape());
  return n.grad;
}

void Tape::truncate(std::size_t size) {
  if (size > nodes_.size()) throw std::out_of_range("truncate beyond tape end");
  nodes_.resize(size);
  std::erase_if(param_ids_, [size](const auto& kv) { return kv.second >= size; });
}

GradientMap Tape::backward(Var loss, const ParameterStore& store) {
  if (loss.tape != this) throw std::logic_error("loss recorded on a different tape");
  if (!record_) throw std::logic_error("backward: tape was built without recording");
  if (value(loss).size() != 1 || value(loss).rank() != 0)
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(value(loss).shape()));

  for (auto& n : nodes_) n.grad = Tensor();
  if (nodes_[loss.id].requires_grad) {
    grad(loss.id)[0] = 1.0;
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() == value(i).size()) n.backward(*this, i);
    }
  }

  GradientMap out;
  for (const auto& [name, t] : store) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end() && store_ == &store && nodes_[it->second].grad.size() == t.size())
      out.emplace(name, nodes_[it->second].grad);
    else
      out.emplace(name, Tensor(t.shape()));
  }
  return out;
}

GradientMap backward(Var loss, const ParameterStore& store) { return loss.tape->backward(loss, store); }

namespace ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

bool is_vector(const Tensor& t) { return t.rank() == 1; }
bool is_matrix(const Tensor& t) { return t.rank() == 2; }

template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const auto in = a.id;
  return a.tape->push(std::move(y), {a}, [in, dfdx](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(in);
    const Tensor& yv = t.value(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  same_shape("add", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    for (auto in : {ia, ib}) {
      if (!t.requires_grad(in)) continue;
      Tensor& gx = t.grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  same_shape("sub", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape("mul", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  same_shape("div", a, b);
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& yv = t.value(self);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var shift(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale_by(Var a, Var s) {
  if (s.value().size() != 1 || s.value().rank() != 0) shape_error("scale_by", a.shape(), s.shape());
  const double sv = s.value()[0];
  Tensor y = a.value();
  for (auto& v : y.values()) v *= sv;
  return a.tape->push(std::move(y), {a, s}, [ia = a.id, is = s.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& av = t.value(ia);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const double sv = t.value(is)[0];
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
    }
    if (t.requires_grad(is)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad(is)[0] += acc;
    }
  });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softmax(Var v) {
  const Tensor& x = v.value();
  if (!is_vector(x)) throw std::invalid_argument("softmax: expected a vector, got " + shape_str(x.shape()));
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  Tensor y(x.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - mx));
  for (auto& e : y.values()) e /= z;
  return v.tape->push(std::move(y), {v}, [in = v.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    double inner = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * yv[i];
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += yv[i] * (g[i] - inner);
  });
}

Var log_softmax(Var v) {
  const Tensor& x = v.value();
  if (!is_vector(x)) throw std::invalid_argument("log_softmax: expected a vector, got " + shape_str(x.shape()));
  const double mx = *std::max_element(x.values().begin(), x.values().end());
  double z = 0.0;
  for (double e : x.values()) z += std::exp(e - mx);
  const double lse = mx + std::log(z);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  return v.tape->push(std::move(y), {v}, [in = v.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& yv = t.value(self);
    double gsum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gsum += g[i];
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(yv[i]) * gsum;
  });
}

Var matvec(Var w, Var x) {
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  if (!is_matrix(W) || !is_vector(X) || W.cols() != X.size()) shape_error("matvec", W.shape(), X.shape());
  const std::size_t m = W.rows(), n = W.cols();
  Tensor y(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    const double* wr = W.values().data() + r * n;
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += wr[c] * X[c];
    y[r] = acc;
  }
  return w.tape->push(std::move(y), {w, x}, [iw = w.id, ix = x.id, m, n](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(iw)) {
      const Tensor& X = t.value(ix);
      double* gw = t.grad(iw).values().data();
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        double* row = gw + r * n;
        for (std::size_t c = 0; c < n; ++c) row[c] += gr * X[c];
      }
    }
    if (t.requires_grad(ix)) {
      const double* W = t.value(iw).values().data();
      Tensor& gx = t.grad(ix);
      for (std::size_t r = 0; r < m; ++r) {
        const double gr = g[r];
        const double* wr = W + r * n;
        for (std::size_t c = 0; c < n; ++c) gx[c] += gr * wr[c];
      }
    }
  });
}

Var matmul_transposed(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!is_matrix(A) || !is_matrix(B) || A.cols() != B.cols()) shape_error("matmul_transposed", A.shape(), B.shape());
  const std::size_t n = A.rows(), m = B.rows(), k = A.cols();
  Tensor y(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += A.at(i, l) * B.at(j, l);
      y.at(i, j) = acc;
    }
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id, n, m, k](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t l = 0; l < k; ++l) ga.at(i, l) += g.at(i, j) * B.at(j, l);
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t l = 0; l < k; ++l) gb.at(j, l) += g.at(i, j) * A.at(i, l);
    }
  });
}

Var add_rowwise(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!is_matrix(A) || !is_vector(B) || A.cols() != B.size()) shape_error("add_rowwise", A.shape(), B.shape());
  Tensor y = A;
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) y.at(r, c) += B[c];
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
    }
  });
}

Var outer(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (!is_vector(A) || !is_vector(B)) shape_error("outer", A.shape(), B.shape());
  const std::size_t n = A.size(), m = B.size();
  Tensor y(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.at(i, j) = A[i] * B[j];
  return a.tape->push(std::move(y), {a, b}, [ia = a.id, ib = b.id, n, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += g.at(i, j) * B[j];
        ga[i] += acc;
      }
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += g.at(i, j) * A[i];
    }
  });
}

Var weighted_row_sum(Var w, Var mat) {
  const Tensor& W = w.value();
  const Tensor& M = mat.value();
  if (!is_vector(W) || !is_matrix(M) || W.size() != M.rows()) shape_error("weighted_row_sum", W.shape(), M.shape());
  const std::size_t n = M.rows(), m = M.cols();
  Tensor y(Shape{m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[j] += W[i] * M.at(i, j);
  return w.tape->push(std::move(y), {w, mat}, [iw = w.id, im = mat.id, n, m](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(iw)) {
      const Tensor& M = t.value(im);
      Tensor& gw = t.grad(iw);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += g[j] * M.at(i, j);
        gw[i] += acc;
      }
    }
    if (t.requires_grad(im)) {
      const Tensor& W = t.value(iw);
      Tensor& gm = t.grad(im);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gm.at(i, j) += W[i] * g[j];
    }
  });
}

Var row_norms(Var mat) {
  const Tensor& M = mat.value();
  if (!is_matrix(M)) throw std::invalid_argument("row_norms: expected a matrix, got " + shape_str(M.shape()));
  Tensor y(Shape{M.rows()});
  for (std::size_t i = 0; i < M.rows(); ++i) {
    double acc = 0.0;
    for (double v : M.row(i)) acc += v * v;
    y[i] = std::sqrt(acc);
  }
  return mat.tape->push(std::move(y), {mat}, [im = mat.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& M = t.value(im);
    const Tensor& yv = t.value(self);
    Tensor& gm = t.grad(im);
    for (std::size_t i = 0; i < M.rows(); ++i) {
      if (yv[i] == 0.0) continue;
      const double s = g[i] / yv[i];
      for (std::size_t j = 0; j < M.cols(); ++j) gm.at(i, j) += s * M.at(i, j);
    }
  });
}

Var norm(Var v) {
  const Tensor& x = v.value();
  double acc = 0.0;
  for (double e : x.values()) acc += e * e;
  return v.tape->push(Tensor::scalar(std::sqrt(acc)), {v}, [in = v.id](Tape& t, std::uint32_t self) {
    const double y = t.value(self)[0];
    if (y == 0.0) return;
    const double s = t.grad(self)[0] / y;
    const Tensor& x = t.value(in);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += s * x[i];
  });
}

Var dot(Var a, Var b) {
  if (!is_vector(a.value())) shape_error("dot", a.shape(), b.shape());
  same_shape("dot", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) acc += A[i] * B[i];
  return a.tape->push(Tensor::scalar(acc), {a, b}, [ia = a.id, ib = b.id](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    if (t.requires_grad(ia)) {
      const Tensor& B = t.value(ib);
      Tensor& ga = t.grad(ia);
      for (std::size_t i = 0; i < B.size(); ++i) ga[i] += g * B[i];
    }
    if (t.requires_grad(ib)) {
      const Tensor& A = t.value(ia);
      Tensor& gb = t.grad(ib);
      for (std::size_t i = 0; i < A.size(); ++i) gb[i] += g * A[i];
    }
  });
}

Var sum(Var a) {
  double acc = 0.0;
  for (double e : a.value().values()) acc += e;
  return a.tape->push(Tensor::scalar(acc), {a}, [in = a.id](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    for (auto& e : t.grad(in).values()) e += g;
  });
}

Var sum_squares(Var a) {
  double acc = 0.0;
  for (double e : a.value().values()) acc += e * e;
  return a.tape->push(Tensor::scalar(acc), {a}, [in = a.id](Tape& t, std::uint32_t self) {
    const double g = t.grad(self)[0];
    const Tensor& x = t.value(in);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * 2.0 * x[i];
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  std::vector<double> out;
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) {
    if (p.value().rank() > 1) shape_error("concat", parts.front().shape(), p.shape());
    out.insert(out.end(), p.value().values().begin(), p.value().values().end());
    ids.push_back(p.id);
  }
  return parts.front().tape->push(Tensor::vector(std::move(out)), parts, [ids](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (auto in : ids) {
      const std::size_t n = t.value(in).size();
      if (t.requires_grad(in)) {
        Tensor& gx = t.grad(in);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[off + i];
      }
      off += n;
    }
  });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var row(Var mat, std::size_t r) {
  const Tensor& M = mat.value();
  if (!is_matrix(M) || r >= M.rows())
    throw std::invalid_argument("row: index " + std::to_string(r) + " out of range for " + shape_str(M.shape()));
  std::vector<double> v(M.row(r).begin(), M.row(r).end());
  return mat.tape->push(Tensor::vector(std::move(v)), {mat}, [im = mat.id, r](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    auto dst = t.grad(im).row(r);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var pick(Var v, std::size_t i) {
  const Tensor& x = v.value();
  if (!is_vector(x) || i >= x.size())
    throw std::invalid_argument("pick: index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  return v.tape->push(Tensor::scalar(x[i]), {v},
                      [in = v.id, i](Tape& t, std::uint32_t self) { t.grad(in)[i] += t.grad(self)[0]; });
}

Var mask_fill(Var v, std::span<const double> keep, double fill) {
  const Tensor& x = v.value();
  if (keep.size() != x.size()) shape_error("mask_fill", x.shape(), Shape{keep.size()});
  Tensor y = x;
  std::vector<double> k(keep.begin(), keep.end());
  for (std::size_t i = 0; i < y.size(); ++i)
    if (k[i] == 0.0) y[i] = fill;
  return v.tape->push(std::move(y), {v}, [in = v.id, k = std::move(k)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (k[i] != 0.0) gx[i] += g[i];
  });
}

Var dropout(Var a, const Tensor& mask) {
  if (mask.shape() != a.shape()) shape_error("dropout", a.shape(), mask.shape());
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return a.tape->push(std::move(y), {a}, [in = a.id, mask](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(in);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

}  // namespace ad
}  // namespace m3
