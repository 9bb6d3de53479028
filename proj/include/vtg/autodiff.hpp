#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are computed
// eagerly; backward() replays the recorded closures in reverse order and
// accumulates gradients into the Parameters that were bound as leaves.
// Everything is double precision so finite-difference checks stay meaningful.

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace vtg::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// One byte per position; nonzero means valid.
using Mask = std::vector<std::uint8_t>;

Mask full_mask(Index n);
Index count_valid(const Mask& mask);

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool decay = true;
};

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

  const Matrix& value() const;
  // Gradient after Tape::backward; zero matrix if nothing flowed here.
  Matrix grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;
  using BackwardWithOutput = std::function<void(Tape&, const Matrix& out_grad, const Matrix& out_value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant_scalar(double v);
  Var leaf(Parameter& param);
  // Records a node; `inputs` decides whether it needs a gradient at all.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, const std::vector<Var>& inputs, Backward backward);
  // Same, for closures that need the op's own output (softmax, sigmoid, ...).
  Var record_with_output(Matrix value, std::initializer_list<Var> inputs, BackwardWithOutput backward);

  void backward(const Var& root);

  const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  // Zero-initialised on first touch.
  Matrix& grad(int id);
  bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.size() > 0; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  // deque: references to values stay valid while more nodes are recorded.
  std::deque<Node> nodes_;
};

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

// ---- elementwise / broadcasting ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var divide(const Var& a, const Var& b);
// a (r x c) + row (1 x c) on every row
Var add_row(const Var& a, const Var& row);
// a (r x c) * row (1 x c) on every row
Var mul_row(const Var& a, const Var& row);
// a (r x c) * col (r x 1) on every column
Var mul_col(const Var& a, const Var& col);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var sigmoid(const Var& a);
// Sigmoid clamped to the nearest doubles inside (0, 1), so it never saturates
// to exactly 0 or 1.
Var open_sigmoid(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
// log(1 + e^x), computed stably
Var softplus(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var abs(const Var& a);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// ---- reductions / structure ----
Var sum(const Var& a);
Var mean(const Var& a);
// r x 1 row sums
Var row_sum(const Var& a);
// n x 1 main diagonal of a square matrix
Var diagonal(const Var& a);
// Masked reductions over rows: 1 x c.
Var masked_mean_rows(const Var& a, const Mask& row_mask);
Var masked_max_rows(const Var& a, const Mask& row_mask);
// Weighted sum of all entries with a constant weight matrix: 1 x 1.
Var weighted_sum(const Var& a, const Matrix& weights);
// log(sum(exp(a_i))) over entries selected by `select` (same size as a).
Var logsumexp(const Var& a, const Mask& select);
Var log_softmax_rows(const Var& a);
Var softmax_rows(const Var& a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var element(const Var& a, Index r, Index c);
Var gather_rows(const Var& a, const std::vector<Index>& rows);

// ---- neural network primitives ----
// Row-wise layer normalisation with learned gain/bias (1 x c each).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
// Inverted dropout; identity when p == 0 or rng == nullptr.
Var dropout(const Var& a, double p, std::mt19937_64* rng);

// Multi-head scaled dot-product attention weights.
// q: n x d, k: m x d. Returns n x (heads*m); block h holds softmax over keys
// of head h, with masked keys at exactly zero. Throws if no key is valid.
Var attention_weights(const Var& q, const Var& k, const Mask& key_mask, int heads);
// Applies per-head weights (n x heads*m) to values v (m x d): n x d.
Var attention_apply(const Var& weights, const Var& v, int heads);
// Mean over heads of the weight blocks: n x m.
Var head_mean(const Var& weights, int heads);

// Per-row min-max normalisation over valid columns. Rows whose valid range
// is degenerate map to all ones; masked entries are zero.
Var minmax_normalize(const Var& a, const Mask& col_mask);

// Global L2 norm of all parameter gradients.
double grad_norm(const std::vector<Parameter*>& params);

}  // namespace vtg::ad
