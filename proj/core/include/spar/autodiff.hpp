#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "spar/parameter.hpp"
#include "spar/tensor.hpp"

namespace spar::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of primitive operations. Nodes are appended in
/// execution order, so the vector is already a topological order and the
/// backward pass is a single reverse sweep.
class Tape {
 public:
  // Receives the tape and the id of the node whose gradient is ready.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  // With `track_gradients` false, parameter leaves do not require
  // gradients and no backward closures are kept (inference only).
  explicit Tape(bool track_gradients = true) : track_gradients_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter. Repeated calls within one tape return the
  // same node.
  Var parameter(Parameter& p);

  // Appends an op node. `fn` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of node `id`, allocated on first access.
  Tensor& grad(std::size_t id);
  const Tensor& grad(const Var& v) const;

  // Seeds d(loss)/d(loss) = 1 and sweeps in reverse. Parameter gradients
  // are accumulated into Parameter::grad.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  bool track_gradients_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Per-key flags, 1 = valid. An empty span means every key is valid.
using KeyValidity = std::span<const std::uint8_t>;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// x: [r x c], bias: [c]; adds bias to every row.
Var add_bias(Var x, Var bias);
Var matmul(Var a, Var b);
// a [p x q] times b^T where b is [r x q].
Var matmul_nt(Var a, Var b);
// Row-wise softmax with max subtraction. Keys (columns) flagged 0 in
// `valid` get weight exactly zero; empty span means all valid.
Var softmax_rows(Var x, KeyValidity valid = {});
// Normalizes over the last dimension.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Exact-erf GELU.
Var gelu(Var x);
Var sum(Var x);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
// Selects rows by index; repeats allowed (gradients accumulate).
Var gather_rows(Var x, std::span<const std::size_t> indices);
// Repeats each row `times` times consecutively: [r x c] -> [r*times x c].
Var repeat_rows(Var x, std::size_t times);
// Tiles the whole tensor `times` times: [r x c] -> [times*r x c].
Var tile_rows(Var x, std::size_t times);
// Copy of `base` with rows `indices[i]` replaced by row i of `values`.
Var replace_rows(Var base, std::span<const std::size_t> indices, Var values);
// Mean over the selected rows -> [1 x c].
Var mean_rows(Var x, std::span<const std::size_t> rows);
// sum over listed rows of ||pred_row - target_row||^2 / (rows * cols).
Var masked_mse(Var pred, const Tensor& target, std::span<const std::size_t> rows);
// Softmax cross-entropy of a [1 x C] logit row against class `label`.
Var cross_entropy(Var logits, std::size_t label);

}  // namespace spar::ad
