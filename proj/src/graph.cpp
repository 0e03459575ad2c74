#include "scar/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace scar::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t) {
  return MapC(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
Map as_mat(Tensor& t) {
  return Map(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + t.shape_string());
  }
}

enum class Bcast { same, a_scalar, b_scalar };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bcast::same;
  if (a.size() == 1 && b.size() == 1) return Bcast::same;
  if (a.size() == 1) return Bcast::a_scalar;
  if (b.size() == 1) return Bcast::b_scalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                       b.shape_string());
}

// Generic binary elementwise op. f(x, y) gives the value; dfx/dfy the
// partials evaluated at (x, y).
template <class F, class Dx, class Dy>
Var binary(Var a, Var b, const char* op, F f, Dx dfx, Dy dfy) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Bcast mode = classify(av, bv, op);
  const Tensor& big = (mode == Bcast::a_scalar) ? bv : av;
  Tensor out(big.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    double x = mode == Bcast::a_scalar ? av[0] : av[i];
    double y = mode == Bcast::b_scalar ? bv[0] : bv[i];
    out[i] = f(x, y);
  }
  std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {ia, ib}, [ia, ib, mode, n, dfx, dfy](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    bool need_a = tp.requires_grad(ia);
    bool need_b = tp.requires_grad(ib);
    Tensor* ga = need_a ? &tp.grad_buffer(ia) : nullptr;
    Tensor* gb = need_b ? &tp.grad_buffer(ib) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      double x = mode == Bcast::a_scalar ? av[0] : av[i];
      double y = mode == Bcast::b_scalar ? bv[0] : bv[i];
      if (ga) (*ga)[mode == Bcast::a_scalar ? 0 : i] += g[i] * dfx(x, y);
      if (gb) (*gb)[mode == Bcast::b_scalar ? 0 : i] += g[i] * dfy(x, y);
    }
  });
}

// Unary elementwise op; d(x, y) is the derivative given input x and output y.
template <class F, class D>
Var unary(Var a, F f, D d) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  std::size_t ia = a.id();
  return t.record(std::move(out), {ia}, [ia, d](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Tape -------------------------------------------------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (auto p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent node does not precede child");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::stop_gradient(Var x) {
  Node n;
  n.value = x.value();
  n.parents = {x.id()};
  n.stopped = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (backward_done_) {
    throw ContractError("backward already ran on this tape; build a fresh tape per step");
  }
  const Tensor& rv = value(root.id());
  if (rv.size() != 1) {
    throw ContractError("backward root must be scalar, got shape " + rv.shape_string());
  }
  backward_done_ = true;
  grad_buffer(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, i);
  }
}

// ---- elementwise ------------------------------------------------------------

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double s) {
  return unary(
      a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- reductions -------------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {ia}, [ia](Tape& tp, std::size_t self) {
    double g = tp.grad(self)[0];
    Tensor& ga = tp.grad_buffer(ia);
    for (auto& x : ga.data()) x += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ---- linear algebra ---------------------------------------------------------

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul inner extents differ: " + av.shape_string() + " x " +
                         bv.shape_string());
  }
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    auto g = as_mat(tp.grad(self));
    if (tp.requires_grad(ia)) {
      as_mat(tp.grad_buffer(ia)).noalias() += g * as_mat(tp.value(ib)).transpose();
    }
    if (tp.requires_grad(ib)) {
      as_mat(tp.grad_buffer(ib)).noalias() += as_mat(tp.value(ia)).transpose() * g;
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  Tensor out = Tensor::matrix(av.cols(), av.rows());
  as_mat(out) = as_mat(av).transpose();
  std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape& tp, std::size_t self) {
    as_mat(tp.grad_buffer(ia)) += as_mat(tp.grad(self)).transpose();
  });
}

Var add_bias(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "add_bias");
  if (bv.size() != av.cols()) {
    throw DimensionError("add_bias: bias " + bv.shape_string() + " vs matrix " + av.shape_string());
  }
  Tensor out = av;
  const std::size_t r = av.rows(), c = av.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

Var scale_rows(Var a, Var v) {
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  require_rank2(av, "scale_rows");
  if (vv.size() != av.rows()) {
    throw DimensionError("scale_rows: " + vv.shape_string() + " vs " + av.shape_string());
  }
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] *= vv[i];
  std::size_t ia = a.id(), iv = v.id();
  return a.tape().record(std::move(out), {ia, iv}, [ia, iv, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(ia)) {
      const Tensor& vv = tp.value(iv);
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j] * vv[i];
    }
    if (tp.requires_grad(iv)) {
      const Tensor& av = tp.value(ia);
      Tensor& gv = tp.grad_buffer(iv);
      for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * av[i * c + j];
        gv[i] += s;
      }
    }
  });
}

// ---- set softmax and pooling ----------------------------------------------

Var softmax_over_set(Var scores, std::span<const std::uint8_t> active) {
  return segment_softmax(scores, active, scores.value().size());
}

Var segment_softmax(Var scores, std::span<const std::uint8_t> active, std::size_t segment) {
  const Tensor& sv = scores.value();
  const std::size_t n = sv.size();
  if (active.size() != n) throw DimensionError("segment_softmax: active mask length mismatch");
  if (segment == 0 || n % segment != 0) {
    throw DimensionError("segment_softmax: length not divisible by segment");
  }
  Tensor out(sv.shape(), 0.0);
  for (std::size_t base = 0; base < n; base += segment) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = base; i < base + segment; ++i) {
      if (active[i]) {
        mx = std::max(mx, sv[i]);
        any = true;
      }
    }
    if (!any) {
      throw EmptyVisibleSetError("softmax over an empty visible set (segment " +
                                 std::to_string(base / segment) + ")");
    }
    double z = 0.0;
    for (std::size_t i = base; i < base + segment; ++i) {
      if (active[i]) {
        out[i] = std::exp(sv[i] - mx);
        z += out[i];
      }
    }
    for (std::size_t i = base; i < base + segment; ++i) out[i] /= z;
  }
  std::size_t is = scores.id();
  return scores.tape().record(std::move(out), {is}, [is, n, segment](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor& gs = tp.grad_buffer(is);
    for (std::size_t base = 0; base < n; base += segment) {
      double dot = 0.0;
      for (std::size_t i = base; i < base + segment; ++i) dot += g[i] * y[i];
      for (std::size_t i = base; i < base + segment; ++i) gs[i] += y[i] * (g[i] - dot);
    }
  });
}

Var segment_weighted_sum(Var rows, Var weights, std::size_t segment) {
  const Tensor& rv = rows.value();
  const Tensor& wv = weights.value();
  require_rank2(rv, "segment_weighted_sum");
  const std::size_t n = rv.rows(), d = rv.cols();
  if (wv.size() != n) throw DimensionError("segment_weighted_sum: weight length mismatch");
  if (segment == 0 || n % segment != 0) {
    throw DimensionError("segment_weighted_sum: rows not divisible by segment");
  }
  const std::size_t m = n / segment;
  Tensor out = Tensor::matrix(m, d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = (i / segment) * d;
    const double w = wv[i];
    if (w == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out[o + j] += w * rv[i * d + j];
  }
  std::size_t ir = rows.id(), iw = weights.id();
  return rows.tape().record(
      std::move(out), {ir, iw}, [ir, iw, n, d, segment](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad(self);
        if (tp.requires_grad(ir)) {
          const Tensor& wv = tp.value(iw);
          Tensor& gr = tp.grad_buffer(ir);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t o = (i / segment) * d;
            for (std::size_t j = 0; j < d; ++j) gr[i * d + j] += wv[i] * g[o + j];
          }
        }
        if (tp.requires_grad(iw)) {
          const Tensor& rv = tp.value(ir);
          Tensor& gw = tp.grad_buffer(iw);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t o = (i / segment) * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += rv[i * d + j] * g[o + j];
            gw[i] += s;
          }
        }
      });
}

// ---- cosine and normalisation ----------------------------------------------

Var cosine_sim(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) {
    throw DimensionError("cosine_sim: " + av.shape_string() + " vs " + bv.shape_string());
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    ab += av[i] * bv[i];
    aa += av[i] * av[i];
    bb += bv[i] * bv[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < kNormEpsilon || nb < kNormEpsilon) {
    throw DegenerateVectorError("cosine_sim on a near-zero vector");
  }
  const double c = std::clamp(ab / (na * nb), -1.0, 1.0);
  std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(c), {ia, ib}, [ia, ib, na, nb](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    const double c = tp.value(self)[0];
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < av.size(); ++i)
        ga[i] += g * (bv[i] / (na * nb) - c * av[i] / (na * na));
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < bv.size(); ++i)
        gb[i] += g * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
    }
  });
}

Var row_normalize(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "row_normalize");
  const std::size_t r = av.rows(), c = av.cols();
  std::vector<double> norms(r);
  Tensor out = av;
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av[i * c + j] * av[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] < kNormEpsilon) throw DegenerateVectorError("row_normalize on a near-zero row");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= norms[i];
  }
  std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c, norms](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j)
        ga[i * c + j] += (g[i * c + j] - dot * y[i * c + j]) / norms[i];
    }
  });
}

Var row_cosine(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "row_cosine");
  if (!av.same_shape(bv)) {
    throw DimensionError("row_cosine: " + av.shape_string() + " vs " + bv.shape_string());
  }
  const std::size_t r = av.rows(), c = av.cols();
  Var an = row_normalize(a);
  Var bn = row_normalize(b);
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += an.value()[i * c + j] * bn.value()[i * c + j];
    out[i] = std::clamp(s, -1.0, 1.0);
  }
  std::size_t ia = an.id(), ib = bn.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * bv[i * c + j];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[i * c + j] += g[i] * av[i * c + j];
    }
  });
}

// ---- contrastive helpers ----------------------------------------------------

Var diagonal(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "diagonal");
  if (av.rows() != av.cols()) throw DimensionError("diagonal of non-square " + av.shape_string());
  const std::size_t n = av.rows();
  Tensor out = Tensor::matrix(n, 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i * n + i];
  std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i) ga[i * n + i] += g[i];
  });
}

Var logsumexp_rows(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "logsumexp_rows");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(av[i * c + j] - mx);
    out[i] = mx + std::log(s);
  }
  std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(ia);
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i] * std::exp(av[i * c + j] - y[i]);
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  require_rank2(tv, "gather_rows");
  const std::size_t c = tv.cols();
  Tensor out = Tensor::matrix(ids.size(), c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) throw DimensionError("gather_rows: index out of range");
    std::copy_n(tv.raw() + ids[i] * c, c, out.raw() + i * c);
  }
  std::size_t it = table.id();
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {it}, [it, c, idv](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gt = tp.grad_buffer(it);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gt[idv[i] * c + j] += g[i * c + j];
  });
}

}  // namespace scar::ag
