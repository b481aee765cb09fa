#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fnri/rng.hpp"
#include "fnri/tensor.hpp"

namespace fnri::ad {

enum class Mode { train, eval };

// Named parameters (weights, biases, batchnorm scale/shift) plus non-trainable
// buffers (running statistics). Each trainable entry carries an accumulated
// gradient slot of the same shape. Iteration order is name-sorted, which keeps
// optimizer updates and checkpoint layout deterministic.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Tensor init, bool trainable = true);
  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  bool trainable(const std::string& name) const;
  void zero_grads();
  std::vector<std::string> names() const;
  std::vector<std::string> trainable_names() const;
  int64_t total_trainable() const;

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool trainable;
  };
  std::map<std::string, Entry> entries_;
};

using Var = int32_t;

// Reverse-mode tape over dense matrices. Nodes are recorded in topological
// order during the forward pass; backward() replays them once in reverse and
// accumulates into every reachable ParameterStore gradient slot. One tape is
// owned by one trainer thread at a time.
class Tape {
 public:
  explicit Tape(Mode mode = Mode::train) : mode_(mode) {}
  Mode mode() const { return mode_; }

  Var input(Tensor v);
  Var param(ParameterStore& store, const std::string& name);
  const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
  double scalar(Var v) const;

  // y = x W + b (row-broadcast bias)
  Var linear(Var x, Var w, Var b);
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);
  // x[R,C] * col[R,1], broadcast over columns
  Var mul_col(Var x, Var col);
  Var elu(Var x);
  Var sigmoid(Var x);
  Var exp(Var x);
  Var softmax_rows(Var x);
  Var logsoftmax_rows(Var x);
  Var batchnorm(Var x, Var gamma, Var beta, Tensor& run_mean, Tensor& run_var,
                double eps = 1e-5, double momentum = 0.1);
  Var dropout(Var x, double p, Rng& rng);
  Var concat_cols(const std::vector<Var>& xs);
  Var concat_rows(const std::vector<Var>& xs);
  Var slice_cols(Var x, int64_t c0, int64_t c1);
  // y[r,:] = x[idx[r],:]
  Var gather_rows(Var x, std::shared_ptr<const std::vector<int64_t>> idx);
  // y[idx[r],:] += x[r,:], output has out_rows rows
  Var scatter_sum_rows(Var x, std::shared_ptr<const std::vector<int64_t>> idx, int64_t out_rows);
  // y[r,0] = x[r, idx[r]]
  Var select_cols(Var x, std::shared_ptr<const std::vector<int64_t>> idx);
  // Row-wise argmax one-hot with straight-through gradient.
  Var hard_onehot_rows(Var soft);
  Var row_sums(Var x);
  Var sum_all(Var x);
  Var sumsq(Var x);
  // Summed binary cross-entropy on logits; targets in {0,1}.
  Var bce_with_logits(Var logits, Tensor targets);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse. Gradients
  // of unreachable parameters are left untouched (zero if freshly zeroed).
  void backward(Var loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> back;
    ParameterStore* store = nullptr;
    std::string pname;
  };

  Var push(Tensor value, bool needs_grad, std::function<void(Tape&, Var)> back);
  Node& node(Var v) { return nodes_[static_cast<size_t>(v)]; }
  bool wants_grad(Var v) const { return nodes_[static_cast<size_t>(v)].needs_grad; }
  // Lazily allocated zero-filled gradient buffer for v.
  Tensor& gbuf(Var v);
  // Accumulate t into v's gradient if v participates in differentiation.
  void add_grad(Var v, const Tensor& t);
  double* grad_ptr(Var v);

  std::vector<Node> nodes_;
  Mode mode_;
};

}  // namespace fnri::ad
