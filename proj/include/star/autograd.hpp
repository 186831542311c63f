#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

namespace star::ag {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle into a tape node. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  const Mat& value() const;
  const Mat& grad() const;
};

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backward;  // empty for leaves/constants
  };

  Var leaf(Mat value, bool requires_grad);
  Var constant(Mat value) { return leaf(std::move(value), false); }

  Var make(Mat value, bool requires_grad, std::function<void(Tape&)> backward);

  Node& node(int idx) { return nodes_[idx]; }
  const Node& node(int idx) const { return nodes_[idx]; }

  // Accumulate into a node's grad, allocating on first touch.
  void add_grad(int idx, const Mat& g);

  // Reverse sweep from a scalar (1x1) output.
  void backward(Var output);

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// --- ops ---
Var matmul(Var a, Var b);        // A * B
Var matmul_nt(Var a, Var b);     // A * B^T
Var add(Var a, Var b);           // elementwise, same shape
Var add_rowvec(Var a, Var bias); // bias is 1 x cols, broadcast over rows
Var add_const(Var a, const Mat& c);
Var scale(Var a, double s);
Var relu(Var a);
Var softmax_rows(Var a);
Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5);
Var slice_cols(Var a, int start, int n);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var table, const std::vector<int>& indices);

// Weighted token-level cross entropy over a logits matrix (one row per
// step). Returns a 1x1 scalar: sum_l w_l * (logsumexp(row_l) -
// logit_l[target_l]). Per-step log-probs of the targets are written to
// step_log_probs if non-null.
Var weighted_cross_entropy(Var logits, const std::vector<int>& targets,
                           const std::vector<double>& weights,
                           std::vector<double>* step_log_probs = nullptr);

// Row-wise softmax of a plain matrix (no graph); shared with inference.
Mat softmax_rows_value(const Mat& a);

}  // namespace star::ag
