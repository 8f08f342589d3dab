#pragma once

// Dense tensors with reverse-mode automatic differentiation on an explicit
// tape. The operation set is exactly what the segmentation model needs;
// inner matrix products are delegated to Eigen, everything else is written
// out. Tensors are immutable values; recording on a tape is opt-in via
// Tensor::param or by deriving from a recorded tensor.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "scd/common.hpp"

namespace scd {

// When enabled, every op scans its output for NaN/Inf and throws
// NumericError. Off by default; tests and debug runs switch it on.
inline bool& debug_numeric_checks() {
  static bool enabled = false;
  return enabled;
}

template <typename S>
class Tape;

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<S> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<S>>(std::move(data))) {
    if (numel(shape_) != static_cast<int64_t>(data_->size()))
      throw DimensionError("tensor: shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_->size()) + " values");
  }

  static Tensor zeros(Shape shape) {
    std::vector<S> d(static_cast<size_t>(numel(shape)), S(0));
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor full(Shape shape, S value) {
    std::vector<S> d(static_cast<size_t>(numel(shape)), value);
    return Tensor(std::move(shape), std::move(d));
  }

  static Tensor scalar(S value) { return Tensor({1}, {value}); }

  // Identity matrix, handy in tests and attention checks.
  static Tensor eye(int64_t n) {
    Tensor t = zeros({n, n});
    for (int64_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = S(1);
    return t;
  }

  // Leaf recorded on a tape; receives a gradient after backward().
  static Tensor param(Shape shape, std::vector<S> data, Tape<S>& tape);

  // Records an existing tensor as a leaf, sharing its storage.
  static Tensor leaf(const Tensor& src, Tape<S>& tape);

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  bool defined() const { return data_ != nullptr; }

  const S* data() const { return data_->data(); }
  const std::vector<S>& vec() const { return *data_; }
  std::shared_ptr<std::vector<S>> storage() const { return data_; }

  S item() const {
    if (size() != 1) throw DimensionError("item(): tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  S at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != ndim())
      throw DimensionError("at(): rank mismatch");
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) {
      off = off * shape_[static_cast<size_t>(i)] + v;
      ++i;
    }
    return (*data_)[static_cast<size_t>(off)];
  }

  bool on_tape() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape<S>* tape() const { return tape_; }

  // Only valid before the tensor escapes; used by factories.
  S* mutable_data() { return data_->data(); }

  // Internal: attach tape bookkeeping to a freshly built tensor.
  Tensor with_node(Tape<S>* tape, int node) const {
    Tensor t = *this;
    t.tape_ = tape;
    t.node_ = node;
    return t;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<S>> data_;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode tape. Nodes are recorded in topological order (parents always
// precede children); backward walks the list once in reverse.
template <typename S>
class Tape {
 public:
  // Receives the upstream gradient and one span per parent to accumulate
  // into. Spans of constant (off-tape) parents are empty.
  using Backward =
      std::function<void(std::span<const S> gout, const std::vector<std::span<S>>& pgrads)>;

  int record(Shape out_shape, std::vector<int> parents, Backward fn) {
    nodes_.push_back(Node{std::move(out_shape), std::move(parents), std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void backward(const Tensor<S>& loss) {
    if (loss.size() != 1)
      throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.on_tape() || loss.tape() != this)
      throw InputError("backward: loss is not recorded on this tape");
    grads_.assign(nodes_.size(), {});
    touched_.assign(nodes_.size(), 0);
    grad_buffer(loss.node())[0] = S(1);
    for (int i = loss.node(); i >= 0; --i) {
      if (!touched_[static_cast<size_t>(i)]) continue;
      const Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.fn) continue;  // leaf
      std::vector<std::span<S>> pg;
      pg.reserve(n.parents.size());
      for (int p : n.parents) {
        if (p < 0)
          pg.emplace_back();
        else
          pg.emplace_back(grad_buffer(p).data(), grad_buffer(p).size());
      }
      n.fn(std::span<const S>(grads_[static_cast<size_t>(i)]), pg);
    }
  }

  // Gradient of a tensor recorded on this tape; nullptr if the tensor never
  // received one (not reachable from the loss).
  const std::vector<S>* gradient(const Tensor<S>& t) const {
    if (!t.on_tape() || t.tape() != this) return nullptr;
    size_t n = static_cast<size_t>(t.node());
    if (n >= grads_.size() || !touched_[n]) return nullptr;
    return &grads_[n];
  }

  size_t num_nodes() const { return nodes_.size(); }

  const Shape& node_shape(int node) const { return nodes_[static_cast<size_t>(node)].shape; }

 private:
  struct Node {
    Shape shape;
    std::vector<int> parents;
    Backward fn;
  };

  std::vector<S>& grad_buffer(int node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (!touched_[static_cast<size_t>(node)]) {
      g.assign(static_cast<size_t>(numel(nodes_[static_cast<size_t>(node)].shape)), S(0));
      touched_[static_cast<size_t>(node)] = 1;
    }
    return g;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
  std::vector<char> touched_;
};

template <typename S>
Tensor<S> Tensor<S>::param(Shape shape, std::vector<S> data, Tape<S>& tape) {
  Tensor t(std::move(shape), std::move(data));
  int node = tape.record(t.shape(), {}, nullptr);
  return t.with_node(&tape, node);
}

template <typename S>
Tensor<S> Tensor<S>::leaf(const Tensor<S>& src, Tape<S>& tape) {
  int node = tape.record(src.shape(), {}, nullptr);
  return src.with_node(&tape, node);
}

namespace detail {

template <typename S>
void check_finite(const std::vector<S>& v, const char* op) {
  if (!debug_numeric_checks()) return;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i]))
      throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
  }
}

// Common plumbing for every op: decides which tape (if any) the result lives
// on and records the backward closure.
template <typename S>
Tensor<S> make_op(const char* name, Shape out_shape, std::vector<S> out_data,
                  std::initializer_list<const Tensor<S>*> inputs,
                  typename Tape<S>::Backward fn) {
  check_finite(out_data, name);
  Tape<S>* tape = nullptr;
  for (const Tensor<S>* in : inputs) {
    if (!in->on_tape()) continue;
    if (tape && tape != in->tape())
      throw InputError(std::string(name) + ": inputs recorded on different tapes");
    tape = in->tape();
  }
  Tensor<S> out(std::move(out_shape), std::move(out_data));
  if (!tape) return out;
  std::vector<int> parents;
  parents.reserve(inputs.size());
  for (const Tensor<S>* in : inputs)
    parents.push_back(in->on_tape() ? in->node() : -1);
  int node = tape->record(out.shape(), std::move(parents), std::move(fn));
  return out.with_node(tape, node);
}

template <typename S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MMap = Eigen::Map<EMat<S>>;
template <typename S>
using CMap = Eigen::Map<const EMat<S>>;

// C(MxN) = A(MxK) * B(KxN), optionally accumulating.
template <typename S>
void gemm_nn(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n, bool acc) {
  MMap<S> C(c, m, n);
  CMap<S> A(a, m, k), B(b, k, n);
  if (acc)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C(MxN) = A(MxK) * B(NxK)^T
template <typename S>
void gemm_nt(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n, bool acc) {
  MMap<S> C(c, m, n);
  CMap<S> A(a, m, k), B(b, n, k);
  if (acc)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// C(MxN) = A(KxM)^T * B(KxN)
template <typename S>
void gemm_tn(S* c, const S* a, const S* b, int64_t m, int64_t k, int64_t n, bool acc) {
  MMap<S> C(c, m, n);
  CMap<S> A(a, k, m), B(b, k, n);
  if (acc)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

inline Shape pad_rank(const Shape& s, size_t rank) {
  Shape out(rank, 1);
  std::copy(s.begin(), s.end(), out.begin() + (rank - s.size()));
  return out;
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;  // 0 where broadcast
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  size_t rank = std::max(a.size(), b.size());
  Shape pa = pad_rank(a, rank), pb = pad_rank(b, rank);
  BroadcastPlan plan;
  plan.out.resize(rank);
  for (size_t i = 0; i < rank; ++i) {
    if (pa[i] == pb[i])
      plan.out[i] = pa[i];
    else if (pa[i] == 1)
      plan.out[i] = pb[i];
    else if (pb[i] == 1)
      plan.out[i] = pa[i];
    else
      throw DimensionError(std::string(op) + ": cannot broadcast axis " + std::to_string(i) +
                           " of " + shape_str(a) + " and " + shape_str(b));
  }
  auto sa = row_major_strides(pa), sb = row_major_strides(pb);
  plan.stride_a.resize(rank);
  plan.stride_b.resize(rank);
  for (size_t i = 0; i < rank; ++i) {
    plan.stride_a[i] = (pa[i] == 1 && plan.out[i] != 1) ? 0 : sa[i];
    plan.stride_b[i] = (pb[i] == 1 && plan.out[i] != 1) ? 0 : sb[i];
  }
  return plan;
}

// Visit every element of the broadcast output; f(out_flat, off_a, off_b).
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  size_t rank = plan.out.size();
  int64_t total = numel(plan.out);
  std::vector<int64_t> idx(rank, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t flat = 0; flat < total; ++flat) {
    f(flat, oa, ob);
    for (int i = static_cast<int>(rank) - 1; i >= 0; --i) {
      size_t u = static_cast<size_t>(i);
      ++idx[u];
      oa += plan.stride_a[u];
      ob += plan.stride_b[u];
      if (idx[u] < plan.out[u]) break;
      oa -= plan.stride_a[u] * plan.out[u];
      ob -= plan.stride_b[u] * plan.out[u];
      idx[u] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops (size-1 broadcasting only)

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  auto plan = detail::broadcast_plan(a.shape(), b.shape(), "add");
  std::vector<S> out(static_cast<size_t>(numel(plan.out)));
  const S* pa = a.data();
  const S* pb = b.data();
  detail::for_each_broadcast(plan, [&](int64_t o, int64_t oa, int64_t ob) {
    out[static_cast<size_t>(o)] = pa[oa] + pb[ob];
  });
  return detail::make_op<S>(
      "add", plan.out, std::move(out), {&a, &b},
      [plan](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        detail::for_each_broadcast(plan, [&](int64_t o, int64_t oa, int64_t ob) {
          if (!pg[0].empty()) pg[0][static_cast<size_t>(oa)] += g[static_cast<size_t>(o)];
          if (!pg[1].empty()) pg[1][static_cast<size_t>(ob)] += g[static_cast<size_t>(o)];
        });
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  auto plan = detail::broadcast_plan(a.shape(), b.shape(), "mul");
  std::vector<S> out(static_cast<size_t>(numel(plan.out)));
  const S* pa = a.data();
  const S* pb = b.data();
  detail::for_each_broadcast(plan, [&](int64_t o, int64_t oa, int64_t ob) {
    out[static_cast<size_t>(o)] = pa[oa] * pb[ob];
  });
  auto da = a.storage();
  auto db = b.storage();
  return detail::make_op<S>(
      "mul", plan.out, std::move(out), {&a, &b},
      [plan, da, db](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        detail::for_each_broadcast(plan, [&](int64_t o, int64_t oa, int64_t ob) {
          S gv = g[static_cast<size_t>(o)];
          if (!pg[0].empty()) pg[0][static_cast<size_t>(oa)] += gv * (*db)[static_cast<size_t>(ob)];
          if (!pg[1].empty()) pg[1][static_cast<size_t>(ob)] += gv * (*da)[static_cast<size_t>(oa)];
        });
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.vec());
  for (S& v : out) v *= c;
  return detail::make_op<S>(
      "scale", a.shape(), std::move(out), {&a},
      [c](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i] * c;
      });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> out(a.vec());
  for (S& v : out) v = v > S(0) ? v : S(0);
  auto da = a.storage();
  return detail::make_op<S>(
      "relu", a.shape(), std::move(out), {&a},
      [da](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (size_t i = 0; i < g.size(); ++i)
          if ((*da)[i] > S(0)) pg[0][i] += g[i];
      });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S acc = 0;
  for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  return detail::make_op<S>(
      "sum_all", {1}, {acc}, {&a},
      [](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (size_t i = 0; i < pg[0].size(); ++i) pg[0][i] += g[0];
      });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
  if (numel(new_shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
  std::vector<S> out(a.vec());
  return detail::make_op<S>(
      "reshape", std::move(new_shape), std::move(out), {&a},
      [](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
      });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes) {
  size_t rank = a.shape().size();
  if (axes.size() != rank) throw DimensionError("permute: axes rank mismatch");
  Shape out_shape(rank);
  for (size_t i = 0; i < rank; ++i) out_shape[i] = a.dim(axes[i]);
  auto in_strides = detail::row_major_strides(a.shape());
  // stride in the input for each output axis
  std::vector<int64_t> step(rank);
  for (size_t i = 0; i < rank; ++i) step[i] = in_strides[static_cast<size_t>(axes[i])];

  std::vector<S> out(static_cast<size_t>(a.size()));
  const S* src = a.data();
  std::vector<int64_t> idx(rank, 0);
  int64_t src_off = 0;
  for (int64_t flat = 0; flat < a.size(); ++flat) {
    out[static_cast<size_t>(flat)] = src[src_off];
    for (int i = static_cast<int>(rank) - 1; i >= 0; --i) {
      size_t u = static_cast<size_t>(i);
      ++idx[u];
      src_off += step[u];
      if (idx[u] < out_shape[u]) break;
      src_off -= step[u] * out_shape[u];
      idx[u] = 0;
    }
  }
  return detail::make_op<S>(
      "permute", out_shape, std::move(out), {&a},
      [out_shape, step, rank](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        std::vector<int64_t> idx(rank, 0);
        int64_t src_off = 0;
        for (size_t flat = 0; flat < g.size(); ++flat) {
          pg[0][static_cast<size_t>(src_off)] += g[flat];
          for (int i = static_cast<int>(rank) - 1; i >= 0; --i) {
            size_t u = static_cast<size_t>(i);
            ++idx[u];
            src_off += step[u];
            if (idx[u] < out_shape[u]) break;
            src_off -= step[u] * out_shape[u];
            idx[u] = 0;
          }
        }
      });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= a.ndim()) throw DimensionError("slice: bad axis");
  if (start < 0 || len < 0 || start + len > a.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") exceeds axis extent " +
                         std::to_string(a.dim(axis)));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= a.dim(i);
  int64_t in_axis = a.dim(axis);

  std::vector<S> out(static_cast<size_t>(outer * len * inner));
  const S* src = a.data();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner, src + (o * in_axis + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(S));
  return detail::make_op<S>(
      "slice", out_shape, std::move(out), {&a},
      [outer, inner, len, in_axis, start](std::span<const S> g,
                                          const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (int64_t o = 0; o < outer; ++o) {
          const S* gs = g.data() + o * len * inner;
          S* pd = pg[0].data() + (o * in_axis + start) * inner;
          for (int64_t i = 0; i < len * inner; ++i) pd[i] += gs[i];
        }
      });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  if (xs.empty()) throw InputError("concat: no inputs");
  const Shape& ref = xs[0].shape();
  if (axis < 0 || axis >= static_cast<int>(ref.size())) throw DimensionError("concat: bad axis");
  int64_t axis_total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != static_cast<int>(ref.size()))
      throw DimensionError("concat: rank mismatch");
    for (int i = 0; i < x.ndim(); ++i)
      if (i != axis && x.dim(i) != ref[static_cast<size_t>(i)])
        throw DimensionError("concat: off-axis extent mismatch at axis " + std::to_string(i) +
                             ": " + shape_str(x.shape()) + " vs " + shape_str(ref));
    axis_total += x.dim(axis);
  }
  Shape out_shape = ref;
  out_shape[static_cast<size_t>(axis)] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= ref[static_cast<size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(ref.size()); ++i) inner *= ref[static_cast<size_t>(i)];

  std::vector<S> out(static_cast<size_t>(numel(out_shape)));
  std::vector<int64_t> lens;
  int64_t pos = 0;
  for (const auto& x : xs) {
    int64_t l = x.dim(axis);
    lens.push_back(l);
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total + pos) * inner, x.data() + o * l * inner,
                  static_cast<size_t>(l * inner) * sizeof(S));
    pos += l;
  }

  // make_op takes an initializer_list; build the generic version by hand.
  detail::check_finite(out, "concat");
  Tape<S>* tape = nullptr;
  for (const auto& x : xs) {
    if (!x.on_tape()) continue;
    if (tape && tape != x.tape()) throw InputError("concat: inputs on different tapes");
    tape = x.tape();
  }
  Tensor<S> result(out_shape, std::move(out));
  if (!tape) return result;
  std::vector<int> parents;
  for (const auto& x : xs) parents.push_back(x.on_tape() ? x.node() : -1);
  int node = tape->record(
      out_shape, parents,
      [outer, inner, axis_total, lens](std::span<const S> g,
                                       const std::vector<std::span<S>>& pg) {
        int64_t pos = 0;
        for (size_t k = 0; k < lens.size(); ++k) {
          if (!pg[k].empty()) {
            for (int64_t o = 0; o < outer; ++o) {
              const S* gs = g.data() + (o * axis_total + pos) * inner;
              S* pd = pg[k].data() + o * lens[k] * inner;
              for (int64_t i = 0; i < lens[k] * inner; ++i) pd[i] += gs[i];
            }
          }
          pos += lens[k];
        }
      });
  return result.with_node(tape, node);
}

// ---------------------------------------------------------------------------
// Linear algebra

// input [..., Din] * weight [Dout, Din] + bias [Dout] -> [..., Dout]
template <typename S>
Tensor<S> fully_connected(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (w.ndim() != 2) throw DimensionError("fully_connected: weight must be 2-d");
  int64_t din = w.dim(1), dout = w.dim(0);
  if (x.ndim() < 1 || x.dim(x.ndim() - 1) != din)
    throw DimensionError("fully_connected: last axis of input " + shape_str(x.shape()) +
                         " must equal Din=" + std::to_string(din));
  if (b.size() != dout) throw DimensionError("fully_connected: bias extent mismatch");
  int64_t m = x.size() / din;
  Shape out_shape = x.shape();
  out_shape.back() = dout;

  std::vector<S> out(static_cast<size_t>(m * dout));
  detail::gemm_nt(out.data(), x.data(), w.data(), m, din, dout, false);
  for (int64_t r = 0; r < m; ++r)
    for (int64_t c = 0; c < dout; ++c) out[static_cast<size_t>(r * dout + c)] += b.data()[c];

  auto dx = x.storage();
  auto dw = w.storage();
  return detail::make_op<S>(
      "fully_connected", std::move(out_shape), std::move(out), {&x, &w, &b},
      [m, din, dout, dx, dw](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (!pg[0].empty()) detail::gemm_nn(pg[0].data(), g.data(), dw->data(), m, dout, din, true);
        if (!pg[1].empty()) detail::gemm_tn(pg[1].data(), g.data(), dx->data(), dout, m, din, true);
        if (!pg[2].empty())
          for (int64_t r = 0; r < m; ++r)
            for (int64_t c = 0; c < dout; ++c) pg[2][static_cast<size_t>(c)] += g[static_cast<size_t>(r * dout + c)];
      });
}

// a [..., M, P] * b [..., P, Q] -> [..., M, Q]; leading axes must be equal.
template <typename S>
Tensor<S> batched_matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.ndim() < 2 || b.ndim() < 2 || a.ndim() != b.ndim())
    throw DimensionError("batched_matmul: ranks must match and be >= 2");
  int nd = a.ndim();
  for (int i = 0; i < nd - 2; ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError("batched_matmul: leading axis " + std::to_string(i) + " differs: " +
                           shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  int64_t m = a.dim(nd - 2), p = a.dim(nd - 1), p2 = b.dim(nd - 2), q = b.dim(nd - 1);
  if (p != p2)
    throw DimensionError("batched_matmul: inner extents differ: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  int64_t batch = 1;
  for (int i = 0; i < nd - 2; ++i) batch *= a.dim(i);
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(nd - 1)] = q;

  std::vector<S> out(static_cast<size_t>(batch * m * q));
  for (int64_t bi = 0; bi < batch; ++bi)
    detail::gemm_nn(out.data() + bi * m * q, a.data() + bi * m * p, b.data() + bi * p * q, m, p,
                    q, false);
  auto da = a.storage();
  auto db = b.storage();
  return detail::make_op<S>(
      "batched_matmul", std::move(out_shape), std::move(out), {&a, &b},
      [batch, m, p, q, da, db](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        for (int64_t bi = 0; bi < batch; ++bi) {
          const S* gb = g.data() + bi * m * q;
          if (!pg[0].empty())
            detail::gemm_nt(pg[0].data() + bi * m * p, gb, db->data() + bi * p * q, m, q, p, true);
          if (!pg[1].empty())
            detail::gemm_tn(pg[1].data() + bi * p * q, da->data() + bi * m * p, gb, p, m, q, true);
        }
      });
}

// ---------------------------------------------------------------------------
// softmax along an axis with a temperature divisor

template <typename S>
Tensor<S> softmax_axis(const Tensor<S>& x, int axis, S temperature) {
  if (axis < 0 || axis >= x.ndim()) throw DimensionError("softmax_axis: bad axis");
  if (!(temperature > S(0))) throw InputError("softmax_axis: temperature must be positive");
  int64_t outer = 1, inner = 1, n = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);

  std::vector<S> out(static_cast<size_t>(x.size()));
  const S* src = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const S* s = src + o * n * inner + in;
      S* d = out.data() + o * n * inner + in;
      S mx = s[0];
      for (int64_t k = 1; k < n; ++k) mx = std::max(mx, s[k * inner]);
      S z = 0;
      for (int64_t k = 0; k < n; ++k) {
        S e = std::exp((s[k * inner] - mx) / temperature);
        d[k * inner] = e;
        z += e;
      }
      for (int64_t k = 0; k < n; ++k) d[k * inner] /= z;
    }
  }
  auto dcopy = std::make_shared<std::vector<S>>(out);
  return detail::make_op<S>(
      "softmax_axis", x.shape(), std::move(out), {&x},
      [outer, inner, n, temperature, dcopy](std::span<const S> g,
                                            const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t in = 0; in < inner; ++in) {
            const S* y = dcopy->data() + o * n * inner + in;
            const S* gy = g.data() + o * n * inner + in;
            S dot = 0;
            for (int64_t k = 0; k < n; ++k) dot += gy[k * inner] * y[k * inner];
            S* gx = pg[0].data() + o * n * inner + in;
            for (int64_t k = 0; k < n; ++k)
              gx[k * inner] += (gy[k * inner] - dot) * y[k * inner] / temperature;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation convention, NCHW)

namespace detail {

// col is (C*kh*kw) x (Ho*Wo)
template <typename S>
void im2col(const S* src, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, S* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        S* row = col + ((c * kh + i) * kw + j) * Ho * Wo;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t h = ho * stride + i - pad;
          if (h < 0 || h >= H) {
            std::fill(row + ho * Wo, row + (ho + 1) * Wo, S(0));
            continue;
          }
          const S* srow = src + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int64_t w = wo * stride + j - pad;
            row[ho * Wo + wo] = (w < 0 || w >= W) ? S(0) : srow[w];
          }
        }
      }
    }
  }
}

// adjoint of im2col: scatter-add col back into the image
template <typename S>
void col2im(const S* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, S* dst) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t i = 0; i < kh; ++i) {
      for (int64_t j = 0; j < kw; ++j) {
        const S* row = col + ((c * kh + i) * kw + j) * Ho * Wo;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          int64_t h = ho * stride + i - pad;
          if (h < 0 || h >= H) continue;
          S* drow = dst + (c * H + h) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            int64_t w = wo * stride + j - pad;
            if (w >= 0 && w < W) drow[w] += row[ho * Wo + wo];
          }
        }
      }
    }
  }
}

}  // namespace detail

// input [N,Ci,H,W], kernel [Co,Ci,kh,kw], bias [Co]
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& k, const Tensor<S>& b, int64_t stride,
                 int64_t pad) {
  if (x.ndim() != 4 || k.ndim() != 4)
    throw DimensionError("conv2d: input and kernel must be 4-d, got " + shape_str(x.shape()) +
                         " and " + shape_str(k.shape()));
  int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Co = k.dim(0), Ck = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  if (Ci != Ck)
    throw DimensionError("conv2d: input channels " + std::to_string(Ci) +
                         " != kernel channels " + std::to_string(Ck));
  if (b.size() != Co) throw DimensionError("conv2d: bias extent != Co");
  if (stride < 1) throw InputError("conv2d: stride must be >= 1");
  if (pad < 0) throw InputError("conv2d: padding must be >= 0");
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " exceeds padded input " + std::to_string(H + 2 * pad) + "x" +
                         std::to_string(W + 2 * pad));
  int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  int64_t ck = Ci * kh * kw;

  std::vector<S> out(static_cast<size_t>(N * Co * Ho * Wo));
  std::vector<S> col(static_cast<size_t>(ck * Ho * Wo));
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
    S* o = out.data() + n * Co * Ho * Wo;
    detail::gemm_nn(o, k.data(), col.data(), Co, ck, Ho * Wo, false);
    for (int64_t c = 0; c < Co; ++c) {
      S bias = b.data()[c];
      for (int64_t s = 0; s < Ho * Wo; ++s) o[c * Ho * Wo + s] += bias;
    }
  }
  auto dx = x.storage();
  auto dk = k.storage();
  return detail::make_op<S>(
      "conv2d", {N, Co, Ho, Wo}, std::move(out), {&x, &k, &b},
      [=](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        std::vector<S> col(static_cast<size_t>(ck * Ho * Wo));
        std::vector<S> gcol(static_cast<size_t>(ck * Ho * Wo));
        for (int64_t n = 0; n < N; ++n) {
          const S* gn = g.data() + n * Co * Ho * Wo;
          if (!pg[1].empty() || !pg[0].empty()) {
            if (!pg[1].empty()) {
              detail::im2col(dx->data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                             col.data());
              // gK (Co x ck) += gOut (Co x HoWo) * col^T
              detail::gemm_nt(pg[1].data(), gn, col.data(), Co, Ho * Wo, ck, true);
            }
            if (!pg[0].empty()) {
              // gcol (ck x HoWo) = K^T (ck x Co) * gOut
              detail::gemm_tn(gcol.data(), dk->data(), gn, ck, Co, Ho * Wo, false);
              detail::col2im(gcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo,
                             pg[0].data() + n * Ci * H * W);
            }
          }
          if (!pg[2].empty())
            for (int64_t c = 0; c < Co; ++c)
              for (int64_t s = 0; s < Ho * Wo; ++s)
                pg[2][static_cast<size_t>(c)] += gn[c * Ho * Wo + s];
        }
      });
}

// input [N,Ci,H,W], kernel [Ci,Co,kh,kw]; output [N,Co,(H-1)*stride+kh, ...].
// Adjoint of conv2d at the same stride with zero padding.
template <typename S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& k, int64_t stride) {
  if (x.ndim() != 4 || k.ndim() != 4)
    throw DimensionError("conv_transpose2d: input and kernel must be 4-d");
  int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t Ck = k.dim(0), Co = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  if (Ci != Ck)
    throw DimensionError("conv_transpose2d: input channels " + std::to_string(Ci) +
                         " != kernel channels " + std::to_string(Ck));
  if (stride < 1) throw InputError("conv_transpose2d: stride must be >= 1");
  int64_t Ho = (H - 1) * stride + kh;
  int64_t Wo = (W - 1) * stride + kw;
  int64_t ck = Co * kh * kw;

  // Kmat is (Co*kh*kw) x Ci: Kmat[(co,i,j), ci] = k[ci,co,i,j]
  std::vector<S> kmat(static_cast<size_t>(ck * Ci));
  for (int64_t ci = 0; ci < Ci; ++ci)
    for (int64_t r = 0; r < ck; ++r)
      kmat[static_cast<size_t>(r * Ci + ci)] = k.data()[ci * ck + r];

  std::vector<S> out(static_cast<size_t>(N * Co * Ho * Wo), S(0));
  std::vector<S> col(static_cast<size_t>(ck * H * W));
  for (int64_t n = 0; n < N; ++n) {
    // col (Co*kh*kw x H*W) = Kmat * x_n (Ci x H*W)
    detail::gemm_nn(col.data(), kmat.data(), x.data() + n * Ci * H * W, ck, Ci, H * W, false);
    detail::col2im(col.data(), Co, Ho, Wo, kh, kw, stride, /*pad=*/int64_t(0), H, W,
                   out.data() + n * Co * Ho * Wo);
  }
  auto dx = x.storage();
  return detail::make_op<S>(
      "conv_transpose2d", {N, Co, Ho, Wo}, std::move(out), {&x, &k},
      [=](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        std::vector<S> gcol(static_cast<size_t>(ck * H * W));
        for (int64_t n = 0; n < N; ++n) {
          detail::im2col(g.data() + n * Co * Ho * Wo, Co, Ho, Wo, kh, kw, stride,
                         /*pad=*/int64_t(0), H, W, gcol.data());
          if (!pg[0].empty()) {
            // gx (Ci x HW) += Kmat^T (Ci x ck) * gcol
            detail::gemm_tn(pg[0].data() + n * Ci * H * W, kmat.data(), gcol.data(), Ci, ck,
                            H * W, true);
          }
          if (!pg[1].empty()) {
            // gk[ci,(co,i,j)] += x_n (Ci x HW) * gcol^T (HW x ck)
            detail::gemm_nt(pg[1].data(), dx->data() + n * Ci * H * W, gcol.data(), Ci, H * W, ck,
                            true);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Group normalization over [N,C,H,W]

template <typename S>
Tensor<S> group_norm(const Tensor<S>& x, int64_t groups, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps) {
  if (x.ndim() != 4) throw DimensionError("group_norm: input must be 4-d");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (C % groups != 0)
    throw ConfigError("group_norm: channels " + std::to_string(C) + " not divisible by " +
                      std::to_string(groups) + " groups");
  if (gamma.size() != C || beta.size() != C)
    throw DimensionError("group_norm: affine extents must equal channel count");
  int64_t cg = C / groups;          // channels per group
  int64_t m = cg * H * W;           // elements per (sample, group)

  std::vector<S> out(static_cast<size_t>(x.size()));
  std::vector<S> xhat(static_cast<size_t>(x.size()));
  std::vector<S> inv_sd(static_cast<size_t>(N * groups));
  const S* src = x.data();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t g = 0; g < groups; ++g) {
      const S* s = src + (n * C + g * cg) * H * W;
      S mean = 0;
      for (int64_t i = 0; i < m; ++i) mean += s[i];
      mean /= static_cast<S>(m);
      S var = 0;
      for (int64_t i = 0; i < m; ++i) {
        S d = s[i] - mean;
        var += d * d;
      }
      var /= static_cast<S>(m);
      S isd = S(1) / std::sqrt(var + eps);
      inv_sd[static_cast<size_t>(n * groups + g)] = isd;
      S* xh = xhat.data() + (n * C + g * cg) * H * W;
      S* o = out.data() + (n * C + g * cg) * H * W;
      for (int64_t c = 0; c < cg; ++c) {
        S ga = gamma.data()[g * cg + c];
        S be = beta.data()[g * cg + c];
        for (int64_t i = 0; i < H * W; ++i) {
          S v = (s[c * H * W + i] - mean) * isd;
          xh[c * H * W + i] = v;
          o[c * H * W + i] = ga * v + be;
        }
      }
    }
  }
  auto xh_keep = std::make_shared<std::vector<S>>(std::move(xhat));
  auto isd_keep = std::make_shared<std::vector<S>>(std::move(inv_sd));
  auto dgamma = gamma.storage();
  return detail::make_op<S>(
      "group_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [=](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t gr = 0; gr < groups; ++gr) {
            int64_t base = (n * C + gr * cg) * H * W;
            const S* xh = xh_keep->data() + base;
            const S* gy = g.data() + base;
            // gamma/beta grads
            if (!pg[1].empty() || !pg[2].empty()) {
              for (int64_t c = 0; c < cg; ++c) {
                S sg = 0, sb = 0;
                for (int64_t i = 0; i < H * W; ++i) {
                  sg += gy[c * H * W + i] * xh[c * H * W + i];
                  sb += gy[c * H * W + i];
                }
                if (!pg[1].empty()) pg[1][static_cast<size_t>(gr * cg + c)] += sg;
                if (!pg[2].empty()) pg[2][static_cast<size_t>(gr * cg + c)] += sb;
              }
            }
            if (pg[0].empty()) continue;
            // gxhat = gy * gamma; gx = isd*(gxhat - mean(gxhat) - xhat*mean(gxhat*xhat))
            S sum_gx = 0, sum_gxx = 0;
            for (int64_t c = 0; c < cg; ++c) {
              S ga = (*dgamma)[static_cast<size_t>(gr * cg + c)];
              for (int64_t i = 0; i < H * W; ++i) {
                S v = gy[c * H * W + i] * ga;
                sum_gx += v;
                sum_gxx += v * xh[c * H * W + i];
              }
            }
            S mg = sum_gx / static_cast<S>(m);
            S mgx = sum_gxx / static_cast<S>(m);
            S isd = (*isd_keep)[static_cast<size_t>(n * groups + gr)];
            S* gx = pg[0].data() + base;
            for (int64_t c = 0; c < cg; ++c) {
              S ga = (*dgamma)[static_cast<size_t>(gr * cg + c)];
              for (int64_t i = 0; i < H * W; ++i) {
                S v = gy[c * H * W + i] * ga;
                gx[c * H * W + i] += isd * (v - mg - xh[c * H * W + i] * mgx);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Bilinear upsampling by an integer factor, half-pixel centers
// (align-corners-false). Acts on the last two axes.

namespace detail {

struct LerpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

inline LerpAxis lerp_axis(int64_t in, int64_t factor) {
  LerpAxis ax;
  int64_t out = in * factor;
  ax.i0.resize(static_cast<size_t>(out));
  ax.i1.resize(static_cast<size_t>(out));
  ax.w1.resize(static_cast<size_t>(out));
  for (int64_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) / static_cast<double>(factor) - 0.5;
    int64_t lo = static_cast<int64_t>(std::floor(s));
    double frac = s - static_cast<double>(lo);
    int64_t c0 = std::clamp<int64_t>(lo, 0, in - 1);
    int64_t c1 = std::clamp<int64_t>(lo + 1, 0, in - 1);
    ax.i0[static_cast<size_t>(d)] = c0;
    ax.i1[static_cast<size_t>(d)] = c1;
    ax.w1[static_cast<size_t>(d)] = frac;
  }
  return ax;
}

}  // namespace detail

template <typename S>
Tensor<S> upsample_bilinear(const Tensor<S>& x, int64_t factor) {
  if (x.ndim() < 2) throw DimensionError("upsample_bilinear: need at least 2 axes");
  if (factor < 1) throw InputError("upsample_bilinear: factor must be >= 1");
  int64_t H = x.dim(x.ndim() - 2), W = x.dim(x.ndim() - 1);
  int64_t batch = x.size() / (H * W);
  int64_t Ho = H * factor, Wo = W * factor;
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = Ho;
  out_shape[out_shape.size() - 1] = Wo;

  auto ay = detail::lerp_axis(H, factor);
  auto ax = detail::lerp_axis(W, factor);
  std::vector<S> out(static_cast<size_t>(batch * Ho * Wo));
  const S* src = x.data();
  for (int64_t b = 0; b < batch; ++b) {
    const S* s = src + b * H * W;
    S* d = out.data() + b * Ho * Wo;
    for (int64_t y = 0; y < Ho; ++y) {
      int64_t y0 = ay.i0[static_cast<size_t>(y)], y1 = ay.i1[static_cast<size_t>(y)];
      S wy1 = static_cast<S>(ay.w1[static_cast<size_t>(y)]);
      S wy0 = S(1) - wy1;
      for (int64_t xx = 0; xx < Wo; ++xx) {
        int64_t x0 = ax.i0[static_cast<size_t>(xx)], x1 = ax.i1[static_cast<size_t>(xx)];
        S wx1 = static_cast<S>(ax.w1[static_cast<size_t>(xx)]);
        S wx0 = S(1) - wx1;
        d[y * Wo + xx] = wy0 * (wx0 * s[y0 * W + x0] + wx1 * s[y0 * W + x1]) +
                         wy1 * (wx0 * s[y1 * W + x0] + wx1 * s[y1 * W + x1]);
      }
    }
  }
  return detail::make_op<S>(
      "upsample_bilinear", std::move(out_shape), std::move(out), {&x},
      [batch, H, W, Ho, Wo, ay, ax](std::span<const S> g, const std::vector<std::span<S>>& pg) {
        if (pg[0].empty()) return;
        for (int64_t b = 0; b < batch; ++b) {
          const S* gs = g.data() + b * Ho * Wo;
          S* gd = pg[0].data() + b * H * W;
          for (int64_t y = 0; y < Ho; ++y) {
            int64_t y0 = ay.i0[static_cast<size_t>(y)], y1 = ay.i1[static_cast<size_t>(y)];
            S wy1 = static_cast<S>(ay.w1[static_cast<size_t>(y)]);
            S wy0 = S(1) - wy1;
            for (int64_t xx = 0; xx < Wo; ++xx) {
              int64_t x0 = ax.i0[static_cast<size_t>(xx)], x1 = ax.i1[static_cast<size_t>(xx)];
              S wx1 = static_cast<S>(ax.w1[static_cast<size_t>(xx)]);
              S wx0 = S(1) - wx1;
              S gv = gs[y * Wo + xx];
              gd[y0 * W + x0] += wy0 * wx0 * gv;
              gd[y0 * W + x1] += wy0 * wx1 * gv;
              gd[y1 * W + x0] += wy1 * wx0 * gv;
              gd[y1 * W + x1] += wy1 * wx1 * gv;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker.
//
// f is called as f(tape, leaf) and must return a scalar tensor built from the
// leaf on the given tape. Returns the max over entries of
// |analytic - central_difference| / max(1, |analytic|).

template <typename S>
struct GradCheckResult {
  S max_rel_error = 0;
  int64_t worst_index = -1;
};

template <typename S, typename F>
GradCheckResult<S> grad_check(F&& f, const Tensor<S>& x, S h) {
  if (!(h > S(0))) throw InputError("grad_check: step must be positive");
  std::vector<S> base(x.vec());

  Tape<S> tape;
  Tensor<S> leaf = Tensor<S>::param(x.shape(), base, tape);
  Tensor<S> loss = f(tape, leaf);
  if (loss.size() != 1) throw DimensionError("grad_check: f must return a scalar");
  tape.backward(loss);
  const std::vector<S>* ga = tape.gradient(leaf);
  std::vector<S> analytic(ga ? *ga : std::vector<S>(base.size(), S(0)));

  GradCheckResult<S> res;
  for (size_t i = 0; i < base.size(); ++i) {
    auto eval = [&](S delta) {
      std::vector<S> d = base;
      d[i] += delta;
      Tape<S> t;
      Tensor<S> l = Tensor<S>::param(x.shape(), std::move(d), t);
      return f(t, l).item();
    };
    S lp = eval(h), lm = eval(-h);
    S num = (lp - lm) / (2 * h);
    if (!std::isfinite(num) || !std::isfinite(analytic[i]))
      throw NumericError("grad_check: non-finite value at flat index " + std::to_string(i));
    S err = std::abs(analytic[i] - num) / std::max(S(1), std::abs(analytic[i]));
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_index = static_cast<int64_t>(i);
    }
  }
  return res;
}

}  // namespace scd
