#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every value lives on a Tape as a node; a Tensor is a lightweight handle
// (tape pointer + node id). Vectors are stored as n x 1 matrices and scalars
// as 1 x 1, so every tensor is rank 2.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stpgsr/error.hpp"

namespace stpgsr::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] constexpr std::size_t size() const noexcept { return rows * cols; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

/// A named learnable array with its gradient accumulator.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(s), value(s.size(), 0.0), grad(s.size(), 0.0) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
  [[nodiscard]] std::size_t size() const noexcept { return value.size(); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Tensor {
public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape& tape() const { return *tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rows() const { return shape().rows; }
  [[nodiscard]] std::size_t cols() const { return shape().cols; }
  [[nodiscard]] std::span<const double> values() const;
  [[nodiscard]] std::span<const double> grad() const;
  [[nodiscard]] double operator()(std::size_t r, std::size_t c) const {
    return values()[r * cols() + c];
  }
  [[nodiscard]] double item() const;
  [[nodiscard]] bool requires_grad() const;

private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
public:
  /// Called during the reverse sweep with the id of the node it belongs to.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Constant leaf; gradients never flow into it.
  Tensor constant(Shape shape, std::vector<double> values) {
    check_size(shape, values);
    return push(shape, std::move(values), false, {});
  }

  /// Differentiable leaf not bound to a Parameter (gradient readable via Tensor::grad).
  Tensor variable(Shape shape, std::vector<double> values) {
    check_size(shape, values);
    return push(shape, std::move(values), true, {});
  }

  /// Leaf bound to a Parameter; backward() adds into param.grad.
  Tensor param(Parameter& p) {
    check_size(p.shape, p.value);
    Tensor t = push(p.shape, p.value, true, {});
    nodes_[t.id()].param = &p;
    return t;
  }

  Tensor record(Shape shape, std::vector<double> values, bool requires_grad, BackwardFn backward) {
    return push(shape, std::move(values), requires_grad, requires_grad ? std::move(backward) : BackwardFn{});
  }

  /// Reverse sweep from a scalar. Intermediate gradients are reset on every call;
  /// Parameter gradients accumulate across calls.
  void backward(const Tensor& loss) {
    if (&loss.tape() != this) {
      throw std::logic_error("backward: loss belongs to another tape");
    }
    if (loss.shape() != Shape{1, 1}) {
      throw DomainError("backward: loss must be scalar, got " + to_string(loss.shape()));
    }
    for (auto& n : nodes_) {
      n.grad.assign(n.requires_grad ? n.value.size() : 0, 0.0);
    }
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      const Node& n = nodes_[id];
      if (n.backward) n.backward(*this, id);
    }
    for (std::size_t id = 0; id <= loss.id(); ++id) {
      Node& n = nodes_[id];
      if (n.param != nullptr) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      }
    }
  }

  [[nodiscard]] const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  [[nodiscard]] std::span<const double> value(std::size_t id) const { return nodes_[id].value; }
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  /// Mutable gradient buffer, or nullptr when the node is a constant.
  [[nodiscard]] double* grad_sink(std::size_t id) {
    Node& n = nodes_[id];
    return n.requires_grad && !n.grad.empty() ? n.grad.data() : nullptr;
  }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  static void check_size(Shape shape, const std::vector<double>& values) {
    if (shape.size() != values.size()) {
      throw ShapeError("tensor " + to_string(shape) + " given " + std::to_string(values.size()) +
                       " values");
    }
  }

  Tensor push(Shape shape, std::vector<double> values, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{shape, std::move(values), {}, requires_grad, std::move(backward), nullptr});
    return Tensor(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Shape& Tensor::shape() const { return tape_->shape(id_); }
inline std::span<const double> Tensor::values() const { return tape_->value(id_); }
inline std::span<const double> Tensor::grad() const { return tape_->grad(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }
inline double Tensor::item() const {
  if (shape() != Shape{1, 1}) throw ShapeError("item: tensor is " + to_string(shape()));
  return values()[0];
}

namespace detail {

inline void same_tape(const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("operands recorded on different tapes");
}

inline void same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

} // namespace detail

// ------------------------------------------------------------------ linear algebra

/// [p x q] . [q x r] -> [p x r]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b);
  const auto [p, q] = a.shape();
  const auto [q2, r] = b.shape();
  if (q != q2) {
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " . " +
                     to_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = av[i * q + k];
      if (aik == 0.0) continue;
      const double* brow = &bv[k * r];
      double* orow = &out[i * r];
      for (std::size_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record({p, r}, std::move(out), a.requires_grad() || b.requires_grad(),
                         [=](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto av = t.value(ia);
                           auto bv = t.value(ib);
                           if (double* ga = t.grad_sink(ia)) {
                             // dA = G . B^T
                             for (std::size_t i = 0; i < p; ++i)
                               for (std::size_t k = 0; k < q; ++k) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < r; ++j) s += g[i * r + j] * bv[k * r + j];
                                 ga[i * q + k] += s;
                               }
                           }
                           if (double* gb = t.grad_sink(ib)) {
                             // dB = A^T . G
                             for (std::size_t i = 0; i < p; ++i)
                               for (std::size_t k = 0; k < q; ++k) {
                                 const double aik = av[i * q + k];
                                 if (aik == 0.0) continue;
                                 for (std::size_t j = 0; j < r; ++j) gb[k * r + j] += aik * g[i * r + j];
                               }
                           }
                         });
}

inline Tensor transpose(const Tensor& a) {
  const auto [p, q] = a.shape();
  auto av = a.values();
  std::vector<double> out(p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) out[j * p + i] = av[i * q + j];
  const std::size_t ia = a.id();
  return a.tape().record({q, p}, std::move(out), a.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    double* ga = t.grad_sink(ia);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < q; ++j) ga[i * q + j] += g[j * p + i];
  });
}

// ------------------------------------------------------------------ elementwise

enum class Binary { add, sub, mul };

inline Tensor elementwise(const Tensor& a, const Tensor& b, Binary op) {
  detail::same_tape(a, b);
  detail::same_shape("elementwise", a, b);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    switch (op) {
      case Binary::add: out[k] = av[k] + bv[k]; break;
      case Binary::sub: out[k] = av[k] - bv[k]; break;
      case Binary::mul: out[k] = av[k] * bv[k]; break;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(a.shape(), std::move(out), a.requires_grad() || b.requires_grad(),
                         [=](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           double* ga = t.grad_sink(ia);
                           double* gb = t.grad_sink(ib);
                           auto av = t.value(ia);
                           auto bv = t.value(ib);
                           for (std::size_t k = 0; k < g.size(); ++k) {
                             switch (op) {
                               case Binary::add:
                                 if (ga) ga[k] += g[k];
                                 if (gb) gb[k] += g[k];
                                 break;
                               case Binary::sub:
                                 if (ga) ga[k] += g[k];
                                 if (gb) gb[k] -= g[k];
                                 break;
                               case Binary::mul:
                                 if (ga) ga[k] += g[k] * bv[k];
                                 if (gb) gb[k] += g[k] * av[k];
                                 break;
                             }
                           }
                         });
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Binary::mul); }

inline Tensor scale(const Tensor& a, double c) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = c * av[k];
  const std::size_t ia = a.id();
  return a.tape().record(a.shape(), std::move(out), a.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    double* ga = t.grad_sink(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += c * g[k];
  });
}

/// Adds a constant to every entry.
inline Tensor shift(const Tensor& a, double c) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av[k] + c;
  const std::size_t ia = a.id();
  return a.tape().record(a.shape(), std::move(out), a.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    double* ga = t.grad_sink(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
  });
}

/// max(x, 0); the subgradient at exactly 0 is 0.
inline Tensor relu(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av[k] > 0.0 ? av[k] : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record(a.shape(), std::move(out), a.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto av = t.value(ia);
    double* ga = t.grad_sink(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (av[k] > 0.0) ga[k] += g[k];
  });
}

/// 1 / sqrt(x + eps), elementwise.
inline Tensor rsqrt(const Tensor& a, double eps) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (av[k] + eps <= 0.0) throw DomainError("rsqrt: non-positive argument");
    out[k] = 1.0 / std::sqrt(av[k] + eps);
  }
  const std::size_t ia = a.id();
  return a.tape().record(a.shape(), std::move(out), a.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    double* ga = t.grad_sink(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += -0.5 * g[k] * y[k] * y[k] * y[k];
  });
}

inline Tensor sum(const Tensor& a) {
  auto av = a.values();
  double s = 0.0;
  for (double v : av) s += v;
  const std::size_t ia = a.id();
  return a.tape().record({1, 1}, {s}, a.requires_grad(), [=](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    double* ga = t.grad_sink(ia);
    const std::size_t n = t.value(ia).size();
    for (std::size_t k = 0; k < n; ++k) ga[k] += g;
  });
}

// ------------------------------------------------------------------ shape plumbing

/// Column-wise concatenation [n x d1] | [n x d2] | ... in argument order.
inline Tensor concat_features(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_features: no parts");
  const std::size_t n = parts[0].rows();
  std::size_t width = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != n) {
      throw ShapeError("concat_features: node counts differ, " + to_string(parts[0].shape()) +
                       " vs " + to_string(p.shape()));
    }
    width += p.cols();
    rg = rg || p.requires_grad();
  }
  std::vector<double> out(n * width);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * width + off + j] = pv[i * w + j];
    ids.push_back(p.id());
    offsets.push_back(off);
    off += w;
  }
  return parts[0].tape().record({n, width}, std::move(out), rg,
                                [=, ids = std::move(ids), offsets = std::move(offsets)](Tape& t, std::size_t self) {
                                  auto g = t.grad(self);
                                  for (std::size_t p = 0; p < ids.size(); ++p) {
                                    double* gp = t.grad_sink(ids[p]);
                                    if (!gp) continue;
                                    const std::size_t w = t.shape(ids[p]).cols;
                                    for (std::size_t i = 0; i < n; ++i)
                                      for (std::size_t j = 0; j < w; ++j)
                                        gp[i * w + j] += g[i * width + offsets[p] + j];
                                  }
                                });
}

/// Row i of the output is row idx[i] of x.
inline Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> idx) {
  const auto [n, d] = x.shape();
  auto xv = x.values();
  std::vector<double> out(idx.size() * d);
  for (std::size_t e = 0; e < idx.size(); ++e) {
    if (idx[e] >= n) throw ValidationError("gather_rows: index " + std::to_string(idx[e]) + " out of range");
    std::copy_n(&xv[idx[e] * d], d, &out[e * d]);
  }
  const std::size_t ix = x.id();
  std::vector<std::uint32_t> keep(idx.begin(), idx.end());
  return x.tape().record({idx.size(), d}, std::move(out), x.requires_grad(),
                         [=, keep = std::move(keep)](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           double* gx = t.grad_sink(ix);
                           for (std::size_t e = 0; e < keep.size(); ++e)
                             for (std::size_t j = 0; j < d; ++j) gx[keep[e] * d + j] += g[e * d + j];
                         });
}

/// out[idx[e]] += x[e] row-wise into an n-row result.
inline Tensor scatter_add_rows(const Tensor& x, std::span<const std::uint32_t> idx, std::size_t n) {
  const auto [e_count, d] = x.shape();
  if (idx.size() != e_count) throw ShapeError("scatter_add_rows: index length differs from rows");
  auto xv = x.values();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t e = 0; e < e_count; ++e) {
    if (idx[e] >= n) throw ValidationError("scatter_add_rows: index " + std::to_string(idx[e]) + " out of range");
    for (std::size_t j = 0; j < d; ++j) out[idx[e] * d + j] += xv[e * d + j];
  }
  const std::size_t ix = x.id();
  std::vector<std::uint32_t> keep(idx.begin(), idx.end());
  return x.tape().record({n, d}, std::move(out), x.requires_grad(),
                         [=, keep = std::move(keep)](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           double* gx = t.grad_sink(ix);
                           for (std::size_t e = 0; e < keep.size(); ++e)
                             for (std::size_t j = 0; j < d; ++j) gx[e * d + j] += g[keep[e] * d + j];
                         });
}

/// Flat-index gather into a column vector: out[k] = x.flat[idx[k]].
inline Tensor gather_flat(const Tensor& x, std::span<const std::uint32_t> idx) {
  auto xv = x.values();
  std::vector<double> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= xv.size()) throw ValidationError("gather_flat: index out of range");
    out[k] = xv[idx[k]];
  }
  const std::size_t ix = x.id();
  std::vector<std::uint32_t> keep(idx.begin(), idx.end());
  return x.tape().record({idx.size(), 1}, std::move(out), x.requires_grad(),
                         [=, keep = std::move(keep)](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           double* gx = t.grad_sink(ix);
                           for (std::size_t k = 0; k < keep.size(); ++k) gx[keep[k]] += g[k];
                         });
}

/// Row-wise dot products of two [E x d] tensors -> [E x 1].
inline Tensor row_dot(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b);
  detail::same_shape("row_dot", a, b);
  const auto [e_count, d] = a.shape();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(e_count, 0.0);
  for (std::size_t e = 0; e < e_count; ++e)
    for (std::size_t j = 0; j < d; ++j) out[e] += av[e * d + j] * bv[e * d + j];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record({e_count, 1}, std::move(out), a.requires_grad() || b.requires_grad(),
                         [=](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto av = t.value(ia);
                           auto bv = t.value(ib);
                           double* ga = t.grad_sink(ia);
                           double* gb = t.grad_sink(ib);
                           for (std::size_t e = 0; e < e_count; ++e)
                             for (std::size_t j = 0; j < d; ++j) {
                               if (ga) ga[e * d + j] += g[e] * bv[e * d + j];
                               if (gb) gb[e * d + j] += g[e] * av[e * d + j];
                             }
                         });
}

/// Multiplies row e of x [E x d] by s[e] (s is [E x 1]).
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
  detail::same_tape(x, s);
  const auto [e_count, d] = x.shape();
  if (s.shape() != Shape{e_count, 1}) {
    throw ShapeError("scale_rows: scale " + to_string(s.shape()) + " for rows " + to_string(x.shape()));
  }
  auto xv = x.values();
  auto sv = s.values();
  std::vector<double> out(e_count * d);
  for (std::size_t e = 0; e < e_count; ++e)
    for (std::size_t j = 0; j < d; ++j) out[e * d + j] = sv[e] * xv[e * d + j];
  const std::size_t ix = x.id(), is = s.id();
  return x.tape().record({e_count, d}, std::move(out), x.requires_grad() || s.requires_grad(),
                         [=](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto xv = t.value(ix);
                           auto sv = t.value(is);
                           double* gx = t.grad_sink(ix);
                           double* gs = t.grad_sink(is);
                           for (std::size_t e = 0; e < e_count; ++e)
                             for (std::size_t j = 0; j < d; ++j) {
                               if (gx) gx[e * d + j] += g[e * d + j] * sv[e];
                               if (gs) gs[e] += g[e * d + j] * xv[e * d + j];
                             }
                         });
}

/// Per-column mean over rows: [n x d] -> [1 x d].
inline Tensor col_mean(const Tensor& x) {
  const auto [n, d] = x.shape();
  if (n == 0) throw DomainError("col_mean: no rows");
  auto xv = x.values();
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  for (auto& v : out) v /= static_cast<double>(n);
  const std::size_t ix = x.id();
  return x.tape().record({1, d}, std::move(out), x.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    double* gx = t.grad_sink(ix);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
  });
}

/// Tiles a [1 x d] row into [n x d].
inline Tensor repeat_rows(const Tensor& row, std::size_t n) {
  if (row.rows() != 1) throw ShapeError("repeat_rows: expected one row, got " + to_string(row.shape()));
  const std::size_t d = row.cols();
  auto rv = row.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy(rv.begin(), rv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
  const std::size_t ir = row.id();
  return row.tape().record({n, d}, std::move(out), row.requires_grad(), [=](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    double* gr = t.grad_sink(ir);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
  });
}

struct MeanVar {
  Tensor mean; ///< [1 x d]
  Tensor var;  ///< [1 x d], population variance
};

/// Per-feature mean and population variance across the node axis.
inline MeanVar feature_mean_var(const Tensor& x) {
  if (x.rows() == 0) throw DomainError("feature_mean_var: no nodes");
  Tensor mu = col_mean(x);
  Tensor centered = sub(x, repeat_rows(mu, x.rows()));
  return {mu, col_mean(mul(centered, centered))};
}

// ------------------------------------------------------------------ attention & losses

/// Groups entries by segment id once so segment_softmax can reuse the layout.
class Segments {
public:
  Segments() = default;

  /// `ids[e]` is the segment of entry e; segment ids must cover 0..count-1 with
  /// no gaps, otherwise a DomainError reports the first empty segment.
  Segments(std::vector<std::uint32_t> ids, std::size_t count) : ids_(std::move(ids)), count_(count) {
    std::vector<std::size_t> sizes(count, 0);
    for (auto s : ids_) {
      if (s >= count) throw DomainError("segments: id " + std::to_string(s) + " >= count " + std::to_string(count));
      ++sizes[s];
    }
    for (std::size_t s = 0; s < count; ++s)
      if (sizes[s] == 0) throw DomainError("segments: segment " + std::to_string(s) + " is empty");
  }

  [[nodiscard]] std::span<const std::uint32_t> ids() const noexcept { return ids_; }
  [[nodiscard]] std::size_t count() const noexcept { return count_; }
  [[nodiscard]] std::size_t entries() const noexcept { return ids_.size(); }

private:
  std::vector<std::uint32_t> ids_;
  std::size_t count_ = 0;
};

/// Softmax within each segment, stabilised by subtracting the segment maximum.
inline Tensor segment_softmax(const Tensor& logits, const Segments& seg) {
  if (logits.shape() != Shape{seg.entries(), 1}) {
    throw ShapeError("segment_softmax: logits " + to_string(logits.shape()) + " for " +
                     std::to_string(seg.entries()) + " entries");
  }
  auto lv = logits.values();
  auto ids = seg.ids();
  std::vector<double> mx(seg.count(), -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < ids.size(); ++e) mx[ids[e]] = std::max(mx[ids[e]], lv[e]);
  std::vector<double> out(ids.size());
  std::vector<double> denom(seg.count(), 0.0);
  for (std::size_t e = 0; e < ids.size(); ++e) {
    out[e] = std::exp(lv[e] - mx[ids[e]]);
    denom[ids[e]] += out[e];
  }
  for (std::size_t e = 0; e < ids.size(); ++e) out[e] /= denom[ids[e]];
  const std::size_t il = logits.id();
  std::vector<std::uint32_t> keep(ids.begin(), ids.end());
  const std::size_t count = seg.count();
  return logits.tape().record({ids.size(), 1}, std::move(out), logits.requires_grad(),
                              [=, keep = std::move(keep)](Tape& t, std::size_t self) {
                                auto g = t.grad(self);
                                auto y = t.value(self);
                                double* gl = t.grad_sink(il);
                                // dx_e = y_e (g_e - sum_{f in seg} g_f y_f)
                                std::vector<double> dot(count, 0.0);
                                for (std::size_t e = 0; e < keep.size(); ++e) dot[keep[e]] += g[e] * y[e];
                                for (std::size_t e = 0; e < keep.size(); ++e) gl[e] += y[e] * (g[e] - dot[keep[e]]);
                              });
}

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
/// Identity when !training or p == 0.
template <class Rng>
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto xv = x.values();
  std::vector<double> mask(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t k = 0; k < xv.size(); ++k) {
    mask[k] = unif(rng) < p ? 0.0 : keep_scale;
    out[k] = xv[k] * mask[k];
  }
  const std::size_t ix = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(),
                         [=, mask = std::move(mask)](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           double* gx = t.grad_sink(ix);
                           for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * mask[k];
                         });
}

/// Mean absolute error; subgradient 0 at exact ties.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  detail::same_tape(pred, target);
  detail::same_shape("l1_loss", pred, target);
  auto pv = pred.values();
  auto tv = target.values();
  if (pv.empty()) throw ShapeError("l1_loss: empty tensors");
  double s = 0.0;
  for (std::size_t k = 0; k < pv.size(); ++k) s += std::abs(pv[k] - tv[k]);
  const double count = static_cast<double>(pv.size());
  const std::size_t ip = pred.id(), it = target.id();
  return pred.tape().record({1, 1}, {s / count}, pred.requires_grad() || target.requires_grad(),
                            [=](Tape& t, std::size_t self) {
                              const double g = t.grad(self)[0] / count;
                              auto pv = t.value(ip);
                              auto tv = t.value(it);
                              double* gp = t.grad_sink(ip);
                              double* gt = t.grad_sink(it);
                              for (std::size_t k = 0; k < pv.size(); ++k) {
                                const double diff = pv[k] - tv[k];
                                const double sg = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                                if (gp) gp[k] += g * sg;
                                if (gt) gt[k] -= g * sg;
                              }
                            });
}

/// (x - min) / (max - min) over all entries; a constant input maps to zeros.
/// Gradient flows through the first arg-min and arg-max.
inline Tensor minmax_scale(const Tensor& x) {
  auto xv = x.values();
  if (xv.empty()) throw ShapeError("minmax_scale: empty tensor");
  const auto [lo_it, hi_it] = std::minmax_element(xv.begin(), xv.end());
  const std::size_t lo_idx = static_cast<std::size_t>(lo_it - xv.begin());
  const std::size_t hi_idx = static_cast<std::size_t>(hi_it - xv.begin());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  std::vector<double> out(xv.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t k = 0; k < xv.size(); ++k) out[k] = (xv[k] - lo) / range;
  }
  const std::size_t ix = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad() && range > 0.0,
                         [=](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto xv = t.value(ix);
                           double* gx = t.grad_sink(ix);
                           const double inv = 1.0 / range;
                           const double inv2 = inv * inv;
                           double g_lo = 0.0, g_hi = 0.0;
                           for (std::size_t k = 0; k < g.size(); ++k) {
                             gx[k] += g[k] * inv;
                             g_lo += g[k] * (xv[k] - hi) * inv2;
                             g_hi -= g[k] * (xv[k] - lo) * inv2;
                           }
                           gx[lo_idx] += g_lo;
                           gx[hi_idx] += g_hi;
                         });
}

// ------------------------------------------------------------------ gradient checking

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares backward() against central differences for every coordinate of
/// every listed parameter. `build` must record a scalar loss on the tape it is
/// given and be deterministic. Error per coordinate is
/// |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult grad_check(const std::function<Tensor(Tape&)>& build, std::span<Parameter* const> params,
                                  double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  {
    Tape tape;
    Tensor loss = build(tape);
    tape.backward(loss);
  }
  GradCheckResult res;
  std::size_t flat = 0;
  for (auto* p : params) {
    for (std::size_t k = 0; k < p->size(); ++k, ++flat) {
      const double orig = p->value[k];
      p->value[k] = orig + h;
      double fp = 0.0, fm = 0.0;
      {
        Tape tape;
        fp = build(tape).item();
      }
      p->value[k] = orig - h;
      {
        Tape tape;
        fm = build(tape).item();
      }
      p->value[k] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(p->grad[k] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_index = flat;
      }
      ++res.coordinates;
    }
  }
  for (auto* p : params) p->zero_grad();
  return res;
}

/// Single-input convenience form: checks d f(x) / dx at the given point.
inline GradCheckResult grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Shape shape,
                                  std::vector<double> x, double h = 1e-5) {
  Parameter p("x", shape);
  p.value = std::move(x);
  Parameter* ps[] = {&p};
  return grad_check([&](Tape& t) { return f(t, t.param(p)); }, ps, h);
}

} // namespace stpgsr::ad
