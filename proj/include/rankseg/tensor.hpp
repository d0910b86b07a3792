#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace rankseg {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + "]";
}

enum class OpKind {
  kAdd,
  kSub,
  kElementwiseMul,
  kScalarMul,
  kMatMul,
  kTranspose,
  kReshape,
  kConcat,
  kGatherRows,
  kReduceSum,
  kReduceMean,
  kSigmoid,
  kExp,
  kLog,
  kSoftmaxLastDim,
  kLayerNormLastDim,
  kGelu,
  kL2NormalizeLastDim,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kElementwiseMul: return "elementwise_mul";
    case OpKind::kScalarMul: return "scalar_mul";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kReduceMean: return "reduce_mean";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSoftmaxLastDim: return "softmax_last_dim";
    case OpKind::kLayerNormLastDim: return "layer_norm_last_dim";
    case OpKind::kGelu: return "gelu";
    case OpKind::kL2NormalizeLastDim: return "l2_normalize_last_dim";
  }
  return "?";
}

constexpr int kNumOpKinds = 18;

inline OpKind op_kind_at(int i) { return static_cast<OpKind>(i); }

// Attribute map carried by an operation record. Keys used:
//   scalar (double)        scalar_mul factor
//   perm (ints)            transpose axis permutation
//   shape (ints)           reshape target
//   indices (ints)         gather_rows row ids
//   axis (int)             reduce_sum / reduce_mean: -1 all, 0 rows, 1 cols
//   eps (double)           layer_norm_last_dim epsilon
//   orderfree (int)        softmax_last_dim: value-ordered normalizer sum
class Attrs {
 public:
  using Value = std::variant<int64_t, double, std::vector<int64_t>>;

  Attrs& set_int(const std::string& k, int64_t v) { kv_[k] = v; return *this; }
  Attrs& set_double(const std::string& k, double v) { kv_[k] = v; return *this; }
  Attrs& set_ints(const std::string& k, std::vector<int64_t> v) { kv_[k] = std::move(v); return *this; }

  bool has(const std::string& k) const { return kv_.count(k) != 0; }

  int64_t get_int(const std::string& k, int64_t dflt) const {
    auto it = kv_.find(k);
    if (it == kv_.end()) return dflt;
    return std::get<int64_t>(it->second);
  }
  double get_double(const std::string& k, double dflt) const {
    auto it = kv_.find(k);
    if (it == kv_.end()) return dflt;
    return std::get<double>(it->second);
  }
  const std::vector<int64_t>& get_ints(const std::string& k) const {
    static const std::vector<int64_t> kEmpty;
    auto it = kv_.find(k);
    if (it == kv_.end()) return kEmpty;
    return std::get<std::vector<int64_t>>(it->second);
  }

 private:
  std::map<std::string, Value> kv_;
};

namespace detail {

[[noreturn]] inline void fail_shape(OpKind kind, const std::string& msg) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + msg);
}

[[noreturn]] inline void fail_nonfinite(OpKind kind) {
  throw std::runtime_error(std::string("non-finite output in ") + op_name(kind));
}

inline std::atomic<long long>& flop_counter() {
  static std::atomic<long long> counter{0};
  return counter;
}


// permuted copy: out[idx_perm] = in[idx]; fast paths cover the attention
// permutations, the generic walk handles the rest
template <typename T>
void transpose_copy(const T* src, T* dst, const Shape& in_shape, const std::vector<int64_t>& perm,
                    bool accumulate_into_src_layout) {
  int rank = static_cast<int>(in_shape.size());
  auto generic = [&] {
    Shape in_strides(static_cast<size_t>(rank));
    int64_t acc = 1;
    for (int i = rank - 1; i >= 0; --i) {
      in_strides[static_cast<size_t>(i)] = acc;
      acc *= in_shape[static_cast<size_t>(i)];
    }
    Shape out_shape(static_cast<size_t>(rank));
    for (int i = 0; i < rank; ++i) out_shape[static_cast<size_t>(i)] = in_shape[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    int64_t total = shape_numel(in_shape);
    for (int64_t flat = 0; flat < total; ++flat) {
      int64_t src_off = 0;
      for (int a2 = 0; a2 < rank; ++a2) src_off += idx[static_cast<size_t>(a2)] * in_strides[static_cast<size_t>(perm[static_cast<size_t>(a2)])];
      if (accumulate_into_src_layout) {
        dst[src_off] += src[flat];
      } else {
        dst[flat] = src[src_off];
      }
      for (int a2 = rank - 1; a2 >= 0; --a2) {
        if (++idx[static_cast<size_t>(a2)] < out_shape[static_cast<size_t>(a2)]) break;
        idx[static_cast<size_t>(a2)] = 0;
      }
    }
  };

  // swap of two middle/outer axes with a contiguous inner row
  int64_t blocks = 0, rows_a = 0, rows_b = 0, width = 0;
  bool fast = false;
  if (rank == 4 && perm == std::vector<int64_t>{0, 2, 1, 3}) {
    blocks = in_shape[0];
    rows_a = in_shape[1];
    rows_b = in_shape[2];
    width = in_shape[3];
    fast = true;
  } else if (rank == 3 && perm == std::vector<int64_t>{1, 0, 2}) {
    blocks = 1;
    rows_a = in_shape[0];
    rows_b = in_shape[1];
    width = in_shape[2];
    fast = true;
  } else if ((rank == 3 && perm == std::vector<int64_t>{0, 2, 1}) ||
             (rank == 2 && perm == std::vector<int64_t>{1, 0})) {
    // plain 2-D transpose per block
    int64_t nb = rank == 3 ? in_shape[0] : 1;
    int64_t r = in_shape[static_cast<size_t>(rank - 2)];
    int64_t cdim = in_shape[static_cast<size_t>(rank - 1)];
    for (int64_t bl = 0; bl < nb; ++bl) {
      const T* sb = src + bl * r * cdim;
      T* db = dst + bl * r * cdim;
      if (accumulate_into_src_layout) {
        for (int64_t i = 0; i < r; ++i) {
          for (int64_t j = 0; j < cdim; ++j) db[i * cdim + j] += sb[j * r + i];
        }
      } else {
        for (int64_t i = 0; i < r; ++i) {
          for (int64_t j = 0; j < cdim; ++j) db[j * r + i] = sb[i * cdim + j];
        }
      }
    }
    return;
  }
  if (fast) {
    // in [blocks, rows_a, rows_b, width] -> out [blocks, rows_b, rows_a, width]
    for (int64_t bl = 0; bl < blocks; ++bl) {
      const T* sb = src + bl * rows_a * rows_b * width;
      T* db = dst + bl * rows_a * rows_b * width;
      for (int64_t ra = 0; ra < rows_a; ++ra) {
        for (int64_t rb = 0; rb < rows_b; ++rb) {
          if (accumulate_into_src_layout) {
            // src holds the out layout gradient; scatter back
            const T* from = sb + (rb * rows_a + ra) * width;
            T* to = db + (ra * rows_b + rb) * width;
            for (int64_t j = 0; j < width; ++j) to[j] += from[j];
          } else {
            const T* from = sb + (ra * rows_b + rb) * width;
            T* to = db + (rb * rows_a + ra) * width;
            for (int64_t j = 0; j < width; ++j) to[j] = from[j];
          }
        }
      }
    }
    return;
  }
  generic();
}

}  // namespace detail

inline void reset_flop_counter() { detail::flop_counter().store(0); }
inline long long read_flop_counter() { return detail::flop_counter().load(); }

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until the backward pass touches this node
  bool requires_grad = false;
};

// Value-semantics handle to a shared tensor node. Data is immutable once the
// forward pass that produced it has completed; leaf parameters are mutated
// only by the optimizer between steps.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape) {
    return from_data(std::move(shape), {}, false, true);
  }
  static TensorT full(Shape shape, T value) {
    TensorT t = zeros(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }
  static TensorT scalar(T value) { return full({1}, value); }
  static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false,
                           bool allow_empty = false) {
    for (int64_t e : shape) {
      if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
    }
    int64_t n = shape_numel(shape);
    if (data.empty() && allow_empty) data.assign(static_cast<size_t>(n), T(0));
    if (static_cast<int64_t>(data.size()) != n) {
      throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    TensorT t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  void ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
  }
  void clear_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
    return node_->data[0];
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }
  bool same_node(const TensorT& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor64 = TensorT<double>;
using Tensor32 = TensorT<float>;

template <typename T>
TensorT<T> forward(OpKind kind, const std::vector<TensorT<T>>& inputs, const Attrs& attrs = {});

// Wengert-list tape. Operations append in execution order, which is a
// topological order by construction; backward replays it once in reverse.
template <typename T>
class TapeT {
 public:
  struct Record {
    OpKind kind;
    Attrs attrs;
    std::vector<TensorT<T>> inputs;
    TensorT<T> output;
  };

  class Scope {
   public:
    explicit Scope(TapeT& tape) : prev_(active_ptr()) { active_ptr() = &tape; }
    ~Scope() { active_ptr() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    TapeT* prev_;
  };

  static TapeT* active() { return active_ptr(); }

  void record(OpKind kind, Attrs attrs, std::vector<TensorT<T>> inputs, TensorT<T> output) {
    records_.push_back(Record{kind, std::move(attrs), std::move(inputs), std::move(output)});
  }

  size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }
  const Record& record_at(size_t i) const { return records_[i]; }

  void backward(const TensorT<T>& loss);

 private:
  static TapeT*& active_ptr() {
    static thread_local TapeT* active = nullptr;
    return active;
  }

  std::vector<Record> records_;
  bool consumed_ = false;
};

using Tape64 = TapeT<double>;
using Tape32 = TapeT<float>;

namespace detail {

// exponent-bits scan; integer ops let the loop vectorize
inline bool all_finite(const float* v, size_t n) {
  uint32_t seen = 0;
  for (size_t i = 0; i < n; ++i) {
    uint32_t bits;
    std::memcpy(&bits, v + i, 4);
    seen |= static_cast<uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
  }
  return seen == 0;
}
inline bool all_finite(const double* v, size_t n) {
  uint64_t seen = 0;
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, v + i, 8);
    seen |= static_cast<uint64_t>((bits & 0x7ff0000000000000ull) == 0x7ff0000000000000ull);
  }
  return seen == 0;
}

template <typename T>
void check_finite(OpKind kind, const std::vector<T>& v) {
  if (!all_finite(v.data(), v.size())) fail_nonfinite(kind);
}

// Sum in a canonical (value-sorted) order so the result depends only on the
// multiset of summands, never on their layout. Used where an exact
// permutation invariance is part of the contract.
template <typename T>
T orderfree_sum(std::vector<T>& buf) {
  std::sort(buf.begin(), buf.end());
  T s = T(0);
  for (T v : buf) s += v;
  return s;
}

template <typename T>
bool is_scalar_shaped(const TensorT<T>& t) {
  return t.numel() == 1;
}

// last-dim geometry: rows x width
template <typename T>
std::pair<int64_t, int64_t> last_dim_geometry(const TensorT<T>& t) {
  int64_t width = t.shape().back();
  return {t.numel() / width, width};
}

template <typename T>
Shape binary_elementwise_shape(OpKind kind, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar_shaped(b)) return a.shape();
  if (is_scalar_shaped(a)) return b.shape();
  fail_shape(kind, "shape mismatch between " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " (only scalar-against-tensor broadcast is supported)");
}

template <typename T, typename F>
std::vector<T> binary_elementwise(const TensorT<T>& a, const TensorT<T>& b, int64_t out_n, F f) {
  std::vector<T> out(static_cast<size_t>(out_n));
  const auto& da = a.data();
  const auto& db = b.data();
  if (a.numel() == out_n && b.numel() == out_n) {
    for (int64_t i = 0; i < out_n; ++i) out[i] = f(da[i], db[i]);
  } else if (b.numel() == 1) {
    T s = db[0];
    for (int64_t i = 0; i < out_n; ++i) out[i] = f(da[i], s);
  } else {
    T s = da[0];
    for (int64_t i = 0; i < out_n; ++i) out[i] = f(s, db[i]);
  }
  return out;
}

template <typename T>
void accumulate_grad(TensorT<T>& t, std::vector<T> contribution) {
  if (!t.has_grad()) {
    t.grad() = std::move(contribution);
    return;
  }
  auto& g = t.grad();
  for (size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
}

// dC contribution for one side of a broadcast binary op: if the side is a
// broadcast scalar the incoming gradient is reduced to one entry.
template <typename T>
void accumulate_binary_grad(TensorT<T>& side, const std::vector<T>& dout) {
  if (side.numel() == static_cast<int64_t>(dout.size()) && !side.has_grad()) {
    side.grad() = dout;
    return;
  }
  side.ensure_grad();
  auto& g = side.grad();
  if (g.size() == dout.size()) {
    for (size_t i = 0; i < g.size(); ++i) g[i] += dout[i];
  } else {
    T s = T(0);
    for (T v : dout) s += v;
    g[0] += s;
  }
}

template <typename T>
struct MatMulDims {
  int64_t batch;
  int64_t m;
  int64_t k;
  int64_t n;
};

template <typename T>
MatMulDims<T> matmul_dims(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.dim(1) != b.dim(0)) {
      fail_shape(OpKind::kMatMul, "inner extents differ: " + shape_str(a.shape()) + " x " +
                                      shape_str(b.shape()));
    }
    return {1, a.dim(0), a.dim(1), b.dim(1)};
  }
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
      fail_shape(OpKind::kMatMul, "batched extents differ: " + shape_str(a.shape()) + " x " +
                                      shape_str(b.shape()));
    }
    return {a.dim(0), a.dim(1), a.dim(2), b.dim(2)};
  }
  fail_shape(OpKind::kMatMul, "expected 2-D x 2-D or 3-D x 3-D, got " + shape_str(a.shape()) +
                                  " x " + shape_str(b.shape()));
}

// C[m,n] += or = A[m,k] * B[k,n]; row-major. Four output rows share each
// streamed B row, and the inner loop over n vectorizes.
template <typename T>
void matmul_block(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const T* a0 = a + i * k;
    const T* a1 = a0 + k;
    const T* a2 = a1 + k;
    const T* a3 = a2 + k;
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    if (!accumulate) {
      const T* brow = b;
      T v0 = a0[0], v1 = a1[0], v2 = a2[0], v3 = a3[0];
      for (int64_t j = 0; j < n; ++j) {
        T bj = brow[j];
        c0[j] = v0 * bj;
        c1[j] = v1 * bj;
        c2[j] = v2 * bj;
        c3[j] = v3 * bj;
      }
    }
    for (int64_t p = accumulate ? 0 : 1; p < k; ++p) {
      const T* brow = b + p * n;
      T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      for (int64_t j = 0; j < n; ++j) {
        T bj = brow[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    if (!accumulate) {
      T av = arow[0];
      for (int64_t j = 0; j < n; ++j) crow[j] = av * b[j];
    }
    for (int64_t p = accumulate ? 0 : 1; p < k; ++p) {
      T av = arow[p];
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward
//
// Shape rules per kind:
//   add/sub/elementwise_mul  same shapes, or one side scalar (numel 1)
//   scalar_mul               one input, attr "scalar"
//   matmul                   [m,k]x[k,n] -> [m,n] or [b,m,k]x[b,k,n] -> [b,m,n]
//   transpose                attr "perm" (defaults to rank-2 swap)
//   reshape                  attr "shape", numel preserved
//   concat                   rank-2 inputs, same column count, stacked on axis 0
//   gather_rows              rank-1 or rank-2 input, attr "indices"
//   reduce_sum/reduce_mean   attr "axis": -1 all -> [1]; 0 rows of [n,d] -> [d];
//                            1 cols of [n,d] -> [n]
//   sigmoid/exp/log/gelu     elementwise
//   softmax_last_dim         softmax over the last axis, any rank
//   layer_norm_last_dim      inputs (x, gamma, beta), gamma/beta rank-1 of the
//                            last extent, attr "eps"
//   l2_normalize_last_dim    unit-norm rows; norm below 1e-12 is an error
// ---------------------------------------------------------------------------
template <typename T>
TensorT<T> forward(OpKind kind, const std::vector<TensorT<T>>& inputs, const Attrs& attrs) {
  using detail::fail_shape;
  auto expect_inputs = [&](size_t n) {
    if (inputs.size() != n) {
      fail_shape(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
    }
  };

  TensorT<T> out;

  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kElementwiseMul: {
      expect_inputs(2);
      Shape os = detail::binary_elementwise_shape(kind, inputs[0], inputs[1]);
      int64_t n = shape_numel(os);
      std::vector<T> data;
      if (kind == OpKind::kAdd) {
        data = detail::binary_elementwise(inputs[0], inputs[1], n, [](T x, T y) { return x + y; });
      } else if (kind == OpKind::kSub) {
        data = detail::binary_elementwise(inputs[0], inputs[1], n, [](T x, T y) { return x - y; });
      } else {
        data = detail::binary_elementwise(inputs[0], inputs[1], n, [](T x, T y) { return x * y; });
      }
      detail::flop_counter() += n;
      out = TensorT<T>::from_data(std::move(os), std::move(data));
      break;
    }

    case OpKind::kScalarMul: {
      expect_inputs(1);
      T c = static_cast<T>(attrs.get_double("scalar", 1.0));
      std::vector<T> data(inputs[0].data());
      for (auto& v : data) v *= c;
      detail::flop_counter() += inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }

    case OpKind::kMatMul: {
      expect_inputs(2);
      auto d = detail::matmul_dims(inputs[0], inputs[1]);
      Shape os = inputs[0].rank() == 2 ? Shape{d.m, d.n} : Shape{d.batch, d.m, d.n};
      std::vector<T> data(static_cast<size_t>(d.batch * d.m * d.n));
      const T* a = inputs[0].data().data();
      const T* b = inputs[1].data().data();
      for (int64_t bi = 0; bi < d.batch; ++bi) {
        detail::matmul_block(a + bi * d.m * d.k, b + bi * d.k * d.n,
                             data.data() + bi * d.m * d.n, d.m, d.k, d.n, false);
      }
      detail::flop_counter() += 2 * d.batch * d.m * d.k * d.n;
      out = TensorT<T>::from_data(std::move(os), std::move(data));
      break;
    }

    case OpKind::kTranspose: {
      expect_inputs(1);
      const auto& x = inputs[0];
      std::vector<int64_t> perm = attrs.get_ints("perm");
      if (perm.empty()) {
        if (x.rank() != 2) fail_shape(kind, "default transpose needs rank 2, got " + shape_str(x.shape()));
        perm = {1, 0};
      }
      if (static_cast<int>(perm.size()) != x.rank()) {
        fail_shape(kind, "perm length " + std::to_string(perm.size()) + " vs rank " +
                             std::to_string(x.rank()));
      }
      Shape os(perm.size());
      for (size_t i = 0; i < perm.size(); ++i) os[i] = x.dim(static_cast<int>(perm[i]));
      std::vector<T> data(static_cast<size_t>(x.numel()));
      detail::transpose_copy(x.data().data(), data.data(), x.shape(), perm, false);
      out = TensorT<T>::from_data(std::move(os), std::move(data));
      break;
    }

    case OpKind::kReshape: {
      expect_inputs(1);
      Shape os = attrs.get_ints("shape");
      if (shape_numel(os) != inputs[0].numel()) {
        fail_shape(kind, "cannot reshape " + shape_str(inputs[0].shape()) + " to " + shape_str(os));
      }
      out = TensorT<T>::from_data(std::move(os), inputs[0].data());
      break;
    }

    case OpKind::kConcat: {
      if (inputs.empty()) fail_shape(kind, "needs at least one input");
      int64_t cols = inputs[0].rank() == 2 ? inputs[0].dim(1) : -1;
      int64_t rows = 0;
      for (const auto& t : inputs) {
        if (t.rank() != 2 || t.dim(1) != cols) {
          fail_shape(kind, "inputs must be rank-2 with matching columns, got " + shape_str(t.shape()) +
                           " vs " + shape_str(inputs[0].shape()));
        }
        rows += t.dim(0);
      }
      std::vector<T> data;
      data.reserve(static_cast<size_t>(rows * cols));
      for (const auto& t : inputs) data.insert(data.end(), t.data().begin(), t.data().end());
      out = TensorT<T>::from_data({rows, cols}, std::move(data));
      break;
    }

    case OpKind::kGatherRows: {
      expect_inputs(1);
      const auto& x = inputs[0];
      const auto& idx = attrs.get_ints("indices");
      if (x.rank() != 1 && x.rank() != 2) {
        fail_shape(kind, "input must be rank 1 or 2, got " + shape_str(x.shape()));
      }
      int64_t rows = x.dim(0);
      int64_t width = x.rank() == 2 ? x.dim(1) : 1;
      for (int64_t i : idx) {
        if (i < 0 || i >= rows) fail_shape(kind, "row index " + std::to_string(i) + " out of range [0," +
                                                     std::to_string(rows) + ")");
      }
      std::vector<T> data(static_cast<size_t>(static_cast<int64_t>(idx.size()) * width));
      for (size_t r = 0; r < idx.size(); ++r) {
        const T* src = x.data().data() + idx[r] * width;
        std::copy(src, src + width, data.data() + static_cast<int64_t>(r) * width);
      }
      Shape os = x.rank() == 2 ? Shape{static_cast<int64_t>(idx.size()), width}
                               : Shape{static_cast<int64_t>(idx.size())};
      out = TensorT<T>::from_data(std::move(os), std::move(data));
      break;
    }

    case OpKind::kReduceSum:
    case OpKind::kReduceMean: {
      expect_inputs(1);
      const auto& x = inputs[0];
      int64_t axis = attrs.get_int("axis", -1);
      bool mean = kind == OpKind::kReduceMean;
      std::vector<T> data;
      Shape os;
      if (axis == -1) {
        T s = T(0);
        for (T v : x.data()) s += v;
        if (mean) s /= static_cast<T>(x.numel());
        data = {s};
        os = {1};
      } else if (axis == 0 && x.rank() == 2) {
        int64_t n = x.dim(0), d = x.dim(1);
        data.assign(static_cast<size_t>(d), T(0));
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j) data[static_cast<size_t>(j)] += x.data()[i * d + j];
        if (mean)
          for (auto& v : data) v /= static_cast<T>(n);
        os = {d};
      } else if (axis == 1 && x.rank() == 2) {
        int64_t n = x.dim(0), d = x.dim(1);
        data.assign(static_cast<size_t>(n), T(0));
        for (int64_t i = 0; i < n; ++i) {
          T s = T(0);
          for (int64_t j = 0; j < d; ++j) s += x.data()[i * d + j];
          data[static_cast<size_t>(i)] = mean ? s / static_cast<T>(d) : s;
        }
        os = {n};
      } else {
        fail_shape(kind, "axis " + std::to_string(axis) + " unsupported for " + shape_str(x.shape()));
      }
      detail::flop_counter() += x.numel();
      out = TensorT<T>::from_data(std::move(os), std::move(data));
      break;
    }

    case OpKind::kSigmoid: {
      expect_inputs(1);
      std::vector<T> data(inputs[0].data().size());
      const auto& src = inputs[0].data();
      for (size_t i = 0; i < data.size(); ++i) {
        T x = src[i];
        // sign-split stable form
        if (x >= T(0)) {
          T e = std::exp(-x);
          data[i] = T(1) / (T(1) + e);
        } else {
          T e = std::exp(x);
          data[i] = e / (T(1) + e);
        }
      }
      detail::flop_counter() += 4 * inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }

    case OpKind::kExp: {
      expect_inputs(1);
      std::vector<T> data(inputs[0].data().size());
      for (size_t i = 0; i < data.size(); ++i) data[i] = std::exp(inputs[0].data()[i]);
      detail::flop_counter() += inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }

    case OpKind::kLog: {
      expect_inputs(1);
      std::vector<T> data(inputs[0].data().size());
      for (size_t i = 0; i < data.size(); ++i) data[i] = std::log(inputs[0].data()[i]);
      detail::flop_counter() += inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }

    case OpKind::kSoftmaxLastDim: {
      expect_inputs(1);
      auto [rows, width] = detail::last_dim_geometry(inputs[0]);
      // with "orderfree" set the normalizer sums in value order, making each
      // row's denominator exactly invariant to column permutations
      bool orderfree = attrs.get_int("orderfree", 0) != 0;
      std::vector<T> data(inputs[0].data().size());
      std::vector<T> buf(static_cast<size_t>(width));
      const auto& src = inputs[0].data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* in = src.data() + r * width;
        T* o = data.data() + r * width;
        T mx = in[0];
        for (int64_t j = 1; j < width; ++j) mx = std::max(mx, in[j]);
        T denom;
        if (orderfree) {
          for (int64_t j = 0; j < width; ++j) {
            o[j] = std::exp(in[j] - mx);
            buf[static_cast<size_t>(j)] = o[j];
          }
          denom = detail::orderfree_sum(buf);
        } else {
          denom = T(0);
          for (int64_t j = 0; j < width; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
          }
        }
        for (int64_t j = 0; j < width; ++j) o[j] /= denom;
      }
      detail::flop_counter() += 4 * inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }

    case OpKind::kLayerNormLastDim: {
      expect_inputs(3);
      const auto& x = inputs[0];
      const auto& gamma = inputs[1];
      const auto& beta = inputs[2];
      int64_t width = x.shape().back();
      if (gamma.rank() != 1 || gamma.dim(0) != width || beta.rank() != 1 || beta.dim(0) != width) {
        fail_shape(kind, "gamma/beta must be rank-1 of extent " + std::to_string(width) + ", got " +
                             shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
      }
      T eps = static_cast<T>(attrs.get_double("eps", 1e-5));
      auto [rows, w] = detail::last_dim_geometry(x);
      std::vector<T> data(x.data().size());
      for (int64_t r = 0; r < rows; ++r) {
        const T* in = x.data().data() + r * w;
        T* o = data.data() + r * w;
        T mu = T(0);
        for (int64_t j = 0; j < w; ++j) mu += in[j];
        mu /= static_cast<T>(w);
        T var = T(0);
        for (int64_t j = 0; j < w; ++j) {
          T d = in[j] - mu;
          var += d * d;
        }
        var /= static_cast<T>(w);
        T inv = T(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < w; ++j) {
          o[j] = (in[j] - mu) * inv * gamma.data()[static_cast<size_t>(j)] +
                 beta.data()[static_cast<size_t>(j)];
        }
      }
      detail::flop_counter() += 8 * x.numel();
      out = TensorT<T>::from_data(x.shape(), std::move(data));
      break;
    }

    case OpKind::kGelu: {
      expect_inputs(1);
      std::vector<T> data(inputs[0].data().size());
      const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
      for (size_t i = 0; i < data.size(); ++i) {
        T x = inputs[0].data()[i];
        data[i] = x * T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      }
      detail::flop_counter() += 4 * inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }

    case OpKind::kL2NormalizeLastDim: {
      expect_inputs(1);
      auto [rows, width] = detail::last_dim_geometry(inputs[0]);
      std::vector<T> data(inputs[0].data().size());
      const auto& src = inputs[0].data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* in = src.data() + r * width;
        T sq = T(0);
        for (int64_t j = 0; j < width; ++j) sq += in[j] * in[j];
        T norm = std::sqrt(sq);
        if (!(norm >= T(1e-12))) {
          throw std::runtime_error("l2_normalize_last_dim: degenerate zero-norm row " +
                                   std::to_string(r));
        }
        T* o = data.data() + r * width;
        for (int64_t j = 0; j < width; ++j) o[j] = in[j] / norm;
      }
      detail::flop_counter() += 3 * inputs[0].numel();
      out = TensorT<T>::from_data(inputs[0].shape(), std::move(data));
      break;
    }
  }

  detail::check_finite(kind, out.data());

  bool needs_grad = false;
  for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
  TapeT<T>* tape = TapeT<T>::active();
  if (needs_grad && tape != nullptr) {
    out.set_requires_grad(true);
    tape->record(kind, attrs, inputs, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------
template <typename T>
void TapeT<T>::backward(const TensorT<T>& loss) {
  if (consumed_) throw std::runtime_error("backward: tape already consumed");
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  bool on_tape = false;
  for (const auto& r : records_) {
    if (r.output.same_node(loss)) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw std::invalid_argument("backward: loss was not produced on this tape");
  consumed_ = true;

  {
    TensorT<T> l = loss;
    l.ensure_grad();
    l.grad()[0] += T(1);
  }

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Record& rec = *it;
    if (!rec.output.has_grad()) continue;  // not on the path to the loss
    const std::vector<T>& dout = rec.output.grad();
    auto& inputs = rec.inputs;

    switch (rec.kind) {
      case OpKind::kAdd: {
        if (inputs[0].requires_grad()) detail::accumulate_binary_grad(inputs[0], dout);
        if (inputs[1].requires_grad()) detail::accumulate_binary_grad(inputs[1], dout);
        break;
      }
      case OpKind::kSub: {
        if (inputs[0].requires_grad()) detail::accumulate_binary_grad(inputs[0], dout);
        if (inputs[1].requires_grad()) {
          std::vector<T> neg(dout.size());
          for (size_t i = 0; i < dout.size(); ++i) neg[i] = -dout[i];
          detail::accumulate_binary_grad(inputs[1], neg);
        }
        break;
      }
      case OpKind::kElementwiseMul: {
        auto side_grad = [&](const TensorT<T>& other) {
          std::vector<T> g(dout.size());
          if (other.numel() == static_cast<int64_t>(dout.size())) {
            for (size_t i = 0; i < dout.size(); ++i) g[i] = dout[i] * other.data()[i];
          } else {
            T s = other.data()[0];
            for (size_t i = 0; i < dout.size(); ++i) g[i] = dout[i] * s;
          }
          return g;
        };
        if (inputs[0].requires_grad()) detail::accumulate_binary_grad(inputs[0], side_grad(inputs[1]));
        if (inputs[1].requires_grad()) detail::accumulate_binary_grad(inputs[1], side_grad(inputs[0]));
        break;
      }
      case OpKind::kScalarMul: {
        if (inputs[0].requires_grad()) {
          T c = static_cast<T>(rec.attrs.get_double("scalar", 1.0));
          std::vector<T> g(dout.size());
          for (size_t i = 0; i < dout.size(); ++i) g[i] = dout[i] * c;
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
      case OpKind::kMatMul: {
        auto d = detail::matmul_dims(inputs[0], inputs[1]);
        const T* a = inputs[0].data().data();
        const T* b = inputs[1].data().data();
        if (inputs[0].requires_grad()) {
          inputs[0].ensure_grad();
          T* da = inputs[0].grad().data();
          // dA[m,k] += dC[m,n] * B^T[n,k]
          std::vector<T> bt(static_cast<size_t>(d.k * d.n));
          for (int64_t bi = 0; bi < d.batch; ++bi) {
            const T* bb = b + bi * d.k * d.n;
            for (int64_t p = 0; p < d.k; ++p)
              for (int64_t j = 0; j < d.n; ++j) bt[static_cast<size_t>(j * d.k + p)] = bb[p * d.n + j];
            detail::matmul_block(dout.data() + bi * d.m * d.n, bt.data(), da + bi * d.m * d.k, d.m,
                                 d.n, d.k, true);
          }
          detail::flop_counter() += 2 * d.batch * d.m * d.k * d.n;
        }
        if (inputs[1].requires_grad()) {
          inputs[1].ensure_grad();
          T* db = inputs[1].grad().data();
          // dB[k,n] += A^T[k,m] * dC[m,n]
          std::vector<T> at(static_cast<size_t>(d.m * d.k));
          for (int64_t bi = 0; bi < d.batch; ++bi) {
            const T* ab = a + bi * d.m * d.k;
            for (int64_t i = 0; i < d.m; ++i)
              for (int64_t p = 0; p < d.k; ++p) at[static_cast<size_t>(p * d.m + i)] = ab[i * d.k + p];
            detail::matmul_block(at.data(), dout.data() + bi * d.m * d.n, db + bi * d.k * d.n, d.k,
                                 d.m, d.n, true);
          }
          detail::flop_counter() += 2 * d.batch * d.m * d.k * d.n;
        }
        break;
      }
      case OpKind::kTranspose: {
        if (inputs[0].requires_grad()) {
          std::vector<int64_t> perm = rec.attrs.get_ints("perm");
          if (perm.empty()) perm = {1, 0};
          inputs[0].ensure_grad();
          detail::transpose_copy(dout.data(), inputs[0].grad().data(), inputs[0].shape(), perm,
                                 true);
        }
        break;
      }
      case OpKind::kReshape: {
        if (inputs[0].requires_grad()) detail::accumulate_grad(inputs[0], dout);
        break;
      }
      case OpKind::kConcat: {
        int64_t offset = 0;
        for (auto& t : inputs) {
          int64_t n = t.numel();
          if (t.requires_grad()) {
            t.ensure_grad();
            auto& g = t.grad();
            for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] += dout[static_cast<size_t>(offset + i)];
          }
          offset += n;
        }
        break;
      }
      case OpKind::kGatherRows: {
        if (inputs[0].requires_grad()) {
          const auto& idx = rec.attrs.get_ints("indices");
          int64_t width = inputs[0].rank() == 2 ? inputs[0].dim(1) : 1;
          inputs[0].ensure_grad();
          auto& g = inputs[0].grad();
          for (size_t r = 0; r < idx.size(); ++r) {
            const T* src = dout.data() + static_cast<int64_t>(r) * width;
            T* dst = g.data() + idx[r] * width;
            for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
          }
        }
        break;
      }
      case OpKind::kReduceSum:
      case OpKind::kReduceMean: {
        if (!inputs[0].requires_grad()) break;
        int64_t axis = rec.attrs.get_int("axis", -1);
        bool mean = rec.kind == OpKind::kReduceMean;
        inputs[0].ensure_grad();
        auto& g = inputs[0].grad();
        if (axis == -1) {
          T dv = dout[0];
          if (mean) dv /= static_cast<T>(inputs[0].numel());
          for (auto& v : g) v += dv;
        } else if (axis == 0) {
          int64_t n = inputs[0].dim(0), d = inputs[0].dim(1);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
              g[static_cast<size_t>(i * d + j)] += mean ? dout[static_cast<size_t>(j)] / static_cast<T>(n)
                                                        : dout[static_cast<size_t>(j)];
        } else {
          int64_t n = inputs[0].dim(0), d = inputs[0].dim(1);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j)
              g[static_cast<size_t>(i * d + j)] += mean ? dout[static_cast<size_t>(i)] / static_cast<T>(d)
                                                        : dout[static_cast<size_t>(i)];
        }
        break;
      }
      case OpKind::kSigmoid: {
        if (inputs[0].requires_grad()) {
          std::vector<T> g(dout.size());
          const auto& y = rec.output.data();
          for (size_t i = 0; i < g.size(); ++i) g[i] = dout[i] * y[i] * (T(1) - y[i]);
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
      case OpKind::kExp: {
        if (inputs[0].requires_grad()) {
          std::vector<T> g(dout.size());
          const auto& y = rec.output.data();
          for (size_t i = 0; i < g.size(); ++i) g[i] = dout[i] * y[i];
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
      case OpKind::kLog: {
        if (inputs[0].requires_grad()) {
          std::vector<T> g(dout.size());
          const auto& x = inputs[0].data();
          for (size_t i = 0; i < g.size(); ++i) g[i] = dout[i] / x[i];
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
      case OpKind::kSoftmaxLastDim: {
        if (inputs[0].requires_grad()) {
          auto [rows, width] = detail::last_dim_geometry(rec.output);
          std::vector<T> g(dout.size());
          const auto& y = rec.output.data();
          for (int64_t r = 0; r < rows; ++r) {
            const T* yr = y.data() + r * width;
            const T* dr = dout.data() + r * width;
            T dsum = T(0);
            for (int64_t j = 0; j < width; ++j) dsum += dr[j] * yr[j];
            T* gr = g.data() + r * width;
            for (int64_t j = 0; j < width; ++j) gr[j] = yr[j] * (dr[j] - dsum);
          }
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
      case OpKind::kLayerNormLastDim: {
        const auto& x = inputs[0];
        const auto& gamma = inputs[1];
        T eps = static_cast<T>(rec.attrs.get_double("eps", 1e-5));
        auto [rows, w] = detail::last_dim_geometry(x);
        std::vector<T> dx(x.data().size(), T(0));
        std::vector<T> dgamma(static_cast<size_t>(w), T(0));
        std::vector<T> dbeta(static_cast<size_t>(w), T(0));
        for (int64_t r = 0; r < rows; ++r) {
          const T* in = x.data().data() + r * w;
          const T* dr = dout.data() + r * w;
          T mu = T(0);
          for (int64_t j = 0; j < w; ++j) mu += in[j];
          mu /= static_cast<T>(w);
          T var = T(0);
          for (int64_t j = 0; j < w; ++j) {
            T d = in[j] - mu;
            var += d * d;
          }
          var /= static_cast<T>(w);
          T inv = T(1) / std::sqrt(var + eps);
          // xhat_j = (x_j - mu) * inv
          T mean_gd = T(0), mean_gdx = T(0);
          for (int64_t j = 0; j < w; ++j) {
            T xhat = (in[j] - mu) * inv;
            T gd = dr[j] * gamma.data()[static_cast<size_t>(j)];
            mean_gd += gd;
            mean_gdx += gd * xhat;
            dgamma[static_cast<size_t>(j)] += dr[j] * xhat;
            dbeta[static_cast<size_t>(j)] += dr[j];
          }
          mean_gd /= static_cast<T>(w);
          mean_gdx /= static_cast<T>(w);
          T* dxr = dx.data() + r * w;
          for (int64_t j = 0; j < w; ++j) {
            T xhat = (in[j] - mu) * inv;
            T gd = dr[j] * gamma.data()[static_cast<size_t>(j)];
            dxr[j] = (gd - mean_gd - xhat * mean_gdx) * inv;
          }
        }
        if (inputs[0].requires_grad()) detail::accumulate_grad(inputs[0], std::move(dx));
        if (inputs[1].requires_grad()) detail::accumulate_grad(inputs[1], std::move(dgamma));
        if (inputs[2].requires_grad()) detail::accumulate_grad(inputs[2], std::move(dbeta));
        break;
      }
      case OpKind::kGelu: {
        if (inputs[0].requires_grad()) {
          std::vector<T> g(dout.size());
          const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
          const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
          const auto& x = inputs[0].data();
          for (size_t i = 0; i < g.size(); ++i) {
            T xv = x[i];
            T phi = T(0.5) * (T(1) + std::erf(xv * inv_sqrt2));
            T pdf = inv_sqrt2pi * std::exp(T(-0.5) * xv * xv);
            g[i] = dout[i] * (phi + xv * pdf);
          }
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
      case OpKind::kL2NormalizeLastDim: {
        if (inputs[0].requires_grad()) {
          auto [rows, width] = detail::last_dim_geometry(inputs[0]);
          std::vector<T> g(dout.size());
          const auto& x = inputs[0].data();
          const auto& y = rec.output.data();
          for (int64_t r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * width;
            const T* yr = y.data() + r * width;
            const T* dr = dout.data() + r * width;
            T sq = T(0);
            for (int64_t j = 0; j < width; ++j) sq += xr[j] * xr[j];
            T norm = std::sqrt(sq);
            T dot = T(0);
            for (int64_t j = 0; j < width; ++j) dot += dr[j] * yr[j];
            T* gr = g.data() + r * width;
            for (int64_t j = 0; j < width; ++j) gr[j] = (dr[j] - yr[j] * dot) / norm;
          }
          detail::accumulate_grad(inputs[0], std::move(g));
        }
        break;
      }
    }

    for (const auto& t : inputs) {
      if (t.has_grad()) detail::check_finite(rec.kind, t.grad());
    }
  }
}

// --- convenience wrappers --------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return forward(OpKind::kAdd, std::vector<TensorT<T>>{a, b});
}
template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return forward(OpKind::kSub, std::vector<TensorT<T>>{a, b});
}
template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return forward(OpKind::kElementwiseMul, std::vector<TensorT<T>>{a, b});
}
template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& a, double c) {
  return forward(OpKind::kScalarMul, std::vector<TensorT<T>>{a}, Attrs().set_double("scalar", c));
}
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  return forward(OpKind::kMatMul, std::vector<TensorT<T>>{a, b});
}
template <typename T>
TensorT<T> transpose(const TensorT<T>& a, std::vector<int64_t> perm = {}) {
  Attrs attrs;
  if (!perm.empty()) attrs.set_ints("perm", std::move(perm));
  return forward(OpKind::kTranspose, std::vector<TensorT<T>>{a}, attrs);
}
template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape shape) {
  return forward(OpKind::kReshape, std::vector<TensorT<T>>{a},
                 Attrs().set_ints("shape", std::vector<int64_t>(shape.begin(), shape.end())));
}
template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
  return forward(OpKind::kConcat, parts);
}
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& a, std::vector<int64_t> indices) {
  return forward(OpKind::kGatherRows, std::vector<TensorT<T>>{a},
                 Attrs().set_ints("indices", std::move(indices)));
}
template <typename T>
TensorT<T> reduce_sum(const TensorT<T>& a, int64_t axis = -1) {
  return forward(OpKind::kReduceSum, std::vector<TensorT<T>>{a}, Attrs().set_int("axis", axis));
}
template <typename T>
TensorT<T> reduce_mean(const TensorT<T>& a, int64_t axis = -1) {
  return forward(OpKind::kReduceMean, std::vector<TensorT<T>>{a}, Attrs().set_int("axis", axis));
}
template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
  return forward(OpKind::kSigmoid, std::vector<TensorT<T>>{a});
}
template <typename T>
TensorT<T> exp(const TensorT<T>& a) {
  return forward(OpKind::kExp, std::vector<TensorT<T>>{a});
}
template <typename T>
TensorT<T> log(const TensorT<T>& a) {
  return forward(OpKind::kLog, std::vector<TensorT<T>>{a});
}
template <typename T>
TensorT<T> softmax_last_dim(const TensorT<T>& a, bool orderfree = false) {
  Attrs attrs;
  if (orderfree) attrs.set_int("orderfree", 1);
  return forward(OpKind::kSoftmaxLastDim, std::vector<TensorT<T>>{a}, attrs);
}
template <typename T>
TensorT<T> layer_norm_last_dim(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                               double eps = 1e-5) {
  return forward(OpKind::kLayerNormLastDim, std::vector<TensorT<T>>{x, gamma, beta},
                 Attrs().set_double("eps", eps));
}
template <typename T>
TensorT<T> gelu(const TensorT<T>& a) {
  return forward(OpKind::kGelu, std::vector<TensorT<T>>{a});
}
template <typename T>
TensorT<T> l2_normalize_last_dim(const TensorT<T>& a) {
  return forward(OpKind::kL2NormalizeLastDim, std::vector<TensorT<T>>{a});
}

}  // namespace rankseg
