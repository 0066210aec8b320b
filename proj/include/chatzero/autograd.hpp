#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every op applied during one forward pass; backward() walks
// it in reverse. Parameters enter a tape through Tape::parameter(), and their
// gradients are added into Parameter::grad when backward() finishes. A tape
// built with recording disabled keeps values only (inference).

#include <deque>
#include <memory>
#include <functional>
#include <span>
#include <vector>

#include "chatzero/kernels.hpp"
#include "chatzero/matrix.hpp"

namespace chatzero::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
  float item() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var parameter(Parameter& p);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss, propagates, and flushes
  // parameter gradients.
  void backward(Var loss);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient buffer of a node, zero-initialized on first access.
  Matrix& grad(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

  Var push(Matrix value, std::initializer_list<Var> parents, Backward fn);
  Var push(Matrix value, const std::vector<Var>& parents, Backward fn);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::deque<Node> nodes_;
  bool record_;
};

Var matmul(Var a, Var b);
// a * b^T
Var matmul_bt(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1 x cols row to every row.
Var add_row(Var x, Var row);
Var scale(Var x, float s);
Var gelu(Var x);
Var layer_norm(Var x, Var gain, Var bias, float eps = 1e-5f);

// Rows of table selected by ids.
Var embedding(Var table, std::span<const int> ids);

Var attention(Var q, Var k, Var v, std::vector<int> key_lengths, const kernels::AttentionShape& shape);

Var gather_rows(Var x, std::span<const int> rows);
Var concat_rows(const std::vector<Var>& parts);

// One output row per segment: the mean of the listed rows of x.
Var mean_rows(Var x, const std::vector<std::vector<int>>& segments);

// Sum over rows with target >= 0 of -log softmax(logits[row])[target].
Var nll_sum(Var logits, std::span<const int> targets);

// softmax((logits + noise) / temperature) row-wise; noise has the same shape.
// With hard set the forward value is the row-wise one-hot argmax while the
// gradient follows the soft sample.
Var gumbel_softmax(Var logits, const Matrix& noise, float temperature, bool hard = false);

// Sum over unordered pairs i > j of cos(x_i, x_j); 1 x 1.
Var pairwise_cosine_sum(Var x);
// Sum over all (i, j) of cos(x_i, n_j); 1 x 1.
Var cross_cosine_sum(Var x, Var negatives);

Var sum(const std::vector<Var>& scalars);

}  // namespace chatzero::ad
