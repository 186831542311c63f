#include "star/autograd.hpp"

#include <cmath>

#include "star/error.hpp"

namespace star::ag {

const Mat& Var::value() const { return tape->node(idx).value; }
const Mat& Var::grad() const { return tape->node(idx).grad; }

Var Tape::leaf(Mat value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make(Mat value, bool requires_grad,
               std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::add_grad(int idx, const Mat& g) {
  Node& n = nodes_[idx];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::backward(Var output) {
  Node& out = nodes_[output.idx];
  if (out.value.rows() != 1 || out.value.cols() != 1)
    throw InputError("backward expects a scalar output");
  out.grad = Mat::Ones(1, 1);
  for (int i = output.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this);
  }
}

namespace {
bool rg(Var a) { return a.tape->node(a.idx).requires_grad; }
}  // namespace

// Backward closures capture their own output index, so nodes are built
// in two steps.
namespace {

Var make_op(Tape* t, Mat value, bool needs_grad,
            std::function<void(Tape&, int)> bw) {
  Var out = t->make(std::move(value), needs_grad, nullptr);
  int out_idx = out.idx;
  t->node(out_idx).backward = [bw = std::move(bw), out_idx](Tape& tp) {
    bw(tp, out_idx);
  };
  return out;
}

}  // namespace

Var matmul_impl(Var a, Var b, bool transpose_b) {
  Tape* t = a.tape;
  Mat v = transpose_b ? Mat(a.value() * b.value().transpose())
                      : Mat(a.value() * b.value());
  int ai = a.idx, bi = b.idx;
  return make_op(t, std::move(v), rg(a) || rg(b),
                 [ai, bi, transpose_b](Tape& tp, int oi) {
                   const Mat& g = tp.node(oi).grad;
                   const Mat& av = tp.node(ai).value;
                   const Mat& bv = tp.node(bi).value;
                   if (transpose_b) {
                     tp.add_grad(ai, g * bv);
                     tp.add_grad(bi, g.transpose() * av);
                   } else {
                     tp.add_grad(ai, g * bv.transpose());
                     tp.add_grad(bi, av.transpose() * g);
                   }
                 });
}

Var matmul(Var a, Var b) { return matmul_impl(a, b, false); }
Var matmul_nt(Var a, Var b) { return matmul_impl(a, b, true); }

Var add(Var a, Var b) {
  Tape* t = a.tape;
  int ai = a.idx, bi = b.idx;
  return make_op(t, a.value() + b.value(), rg(a) || rg(b),
                 [ai, bi](Tape& tp, int oi) {
                   const Mat& g = tp.node(oi).grad;
                   tp.add_grad(ai, g);
                   tp.add_grad(bi, g);
                 });
}

Var add_rowvec(Var a, Var bias) {
  Tape* t = a.tape;
  Mat v = a.value();
  v.rowwise() += Eigen::RowVectorXd(bias.value().row(0));
  int ai = a.idx, bi = bias.idx;
  return make_op(t, std::move(v), rg(a) || rg(bias),
                 [ai, bi](Tape& tp, int oi) {
                   const Mat& g = tp.node(oi).grad;
                   tp.add_grad(ai, g);
                   tp.add_grad(bi, g.colwise().sum());
                 });
}

Var add_const(Var a, const Mat& c) {
  Tape* t = a.tape;
  int ai = a.idx;
  return make_op(t, a.value() + c, rg(a), [ai](Tape& tp, int oi) {
    tp.add_grad(ai, tp.node(oi).grad);
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape;
  int ai = a.idx;
  return make_op(t, Mat(a.value() * s), rg(a), [ai, s](Tape& tp, int oi) {
    tp.add_grad(ai, Mat(tp.node(oi).grad * s));
  });
}

Var relu(Var a) {
  Tape* t = a.tape;
  int ai = a.idx;
  return make_op(t, a.value().cwiseMax(0.0), rg(a), [ai](Tape& tp, int oi) {
    const Mat& g = tp.node(oi).grad;
    const Mat& av = tp.node(ai).value;
    tp.add_grad(ai, Mat((av.array() > 0.0).cast<double>() * g.array()));
  });
}

Mat softmax_rows_value(const Mat& a) {
  Mat out(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i) {
    double m = a.row(i).maxCoeff();
    Eigen::ArrayXd e = (a.row(i).array() - m).exp();
    out.row(i) = (e / e.sum()).matrix();
  }
  return out;
}

Var softmax_rows(Var a) {
  Tape* t = a.tape;
  Mat p = softmax_rows_value(a.value());
  int ai = a.idx;
  return make_op(t, std::move(p), rg(a), [ai](Tape& tp, int oi) {
    const Mat& g = tp.node(oi).grad;
    const Mat& p = tp.node(oi).value;
    Mat da(p.rows(), p.cols());
    for (int i = 0; i < p.rows(); ++i) {
      double dot = g.row(i).dot(p.row(i));
      da.row(i) = (p.row(i).array() * (g.row(i).array() - dot)).matrix();
    }
    tp.add_grad(ai, da);
  });
}

Var layer_norm_rows(Var a, Var gain, Var bias, double eps) {
  Tape* t = a.tape;
  const Mat& x = a.value();
  const int rows = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Mat xhat(rows, d);
  Eigen::VectorXd inv_std(rows);
  for (int i = 0; i < rows; ++i) {
    double mu = x.row(i).mean();
    Eigen::ArrayXd c = x.row(i).array() - mu;
    double var = c.square().mean();
    double is = 1.0 / std::sqrt(var + eps);
    inv_std(i) = is;
    xhat.row(i) = (c * is).matrix();
  }
  Mat out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += Eigen::RowVectorXd(bias.value().row(0));
  int ai = a.idx, gi = gain.idx, bi = bias.idx;
  return make_op(
      t, std::move(out), rg(a) || rg(gain) || rg(bias),
      [ai, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std),
       d](Tape& tp, int oi) {
        const Mat& g = tp.node(oi).grad;
        const Eigen::RowVectorXd gv = tp.node(gi).value.row(0);
        // gain/bias grads
        Mat dgain = (g.array() * xhat.array()).colwise().sum().matrix();
        tp.add_grad(gi, dgain);
        tp.add_grad(bi, g.colwise().sum());
        // input grad
        Mat da(g.rows(), d);
        for (int i = 0; i < g.rows(); ++i) {
          Eigen::ArrayXd dy = (g.row(i).array() * gv.array()).transpose();
          double mean_dy = dy.mean();
          double mean_dy_xhat = (dy * xhat.row(i).array().transpose()).mean();
          da.row(i) = ((dy - mean_dy -
                        xhat.row(i).array().transpose() * mean_dy_xhat) *
                       inv_std(i))
                          .matrix()
                          .transpose();
        }
        tp.add_grad(ai, da);
      });
}

Var slice_cols(Var a, int start, int n) {
  Tape* t = a.tape;
  int ai = a.idx;
  long rows = a.value().rows(), cols = a.value().cols();
  return make_op(t, Mat(a.value().middleCols(start, n)), rg(a),
                 [ai, start, n, rows, cols](Tape& tp, int oi) {
                   Mat g = Mat::Zero(rows, cols);
                   g.middleCols(start, n) = tp.node(oi).grad;
                   tp.add_grad(ai, g);
                 });
}

Var concat_cols(const std::vector<Var>& parts) {
  Tape* t = parts.front().tape;
  long rows = parts.front().value().rows();
  long total = 0;
  bool needs = false;
  for (const Var& p : parts) {
    total += p.value().cols();
    needs = needs || rg(p);
  }
  Mat v(rows, total);
  std::vector<int> idxs;
  std::vector<long> widths;
  long off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.value().cols()) = p.value();
    idxs.push_back(p.idx);
    widths.push_back(p.value().cols());
    off += p.value().cols();
  }
  return make_op(t, std::move(v), needs,
                 [idxs, widths](Tape& tp, int oi) {
                   const Mat& g = tp.node(oi).grad;
                   long off = 0;
                   for (size_t k = 0; k < idxs.size(); ++k) {
                     tp.add_grad(idxs[k], Mat(g.middleCols(off, widths[k])));
                     off += widths[k];
                   }
                 });
}

Var gather_rows(Var table, const std::vector<int>& indices) {
  Tape* t = table.tape;
  const Mat& tv = table.value();
  Mat v(static_cast<long>(indices.size()), tv.cols());
  for (size_t i = 0; i < indices.size(); ++i) v.row(static_cast<long>(i)) = tv.row(indices[i]);
  int ti = table.idx;
  long trows = tv.rows(), tcols = tv.cols();
  return make_op(t, std::move(v), rg(table),
                 [ti, indices, trows, tcols](Tape& tp, int oi) {
                   const Mat& g = tp.node(oi).grad;
                   Mat dg = Mat::Zero(trows, tcols);
                   for (size_t i = 0; i < indices.size(); ++i)
                     dg.row(indices[i]) += g.row(static_cast<long>(i));
                   tp.add_grad(ti, dg);
                 });
}

Var weighted_cross_entropy(Var logits, const std::vector<int>& targets,
                           const std::vector<double>& weights,
                           std::vector<double>* step_log_probs) {
  Tape* t = logits.tape;
  const Mat& z = logits.value();
  if (static_cast<size_t>(z.rows()) != targets.size() ||
      targets.size() != weights.size())
    throw InputError("cross entropy: logits/targets/weights length mismatch");
  double loss = 0.0;
  if (step_log_probs) step_log_probs->clear();
  for (long i = 0; i < z.rows(); ++i) {
    double m = z.row(i).maxCoeff();
    double lse = m + std::log((z.row(i).array() - m).exp().sum());
    double lp = z(i, targets[static_cast<size_t>(i)]) - lse;
    if (step_log_probs) step_log_probs->push_back(lp);
    loss += -lp * weights[static_cast<size_t>(i)];
  }
  int zi = logits.idx;
  return make_op(t, Mat::Constant(1, 1, loss), rg(logits),
                 [zi, targets, weights](Tape& tp, int oi) {
                   double g = tp.node(oi).grad(0, 0);
                   const Mat& z = tp.node(zi).value;
                   Mat dz = softmax_rows_value(z);
                   for (long i = 0; i < z.rows(); ++i) {
                     dz(i, targets[static_cast<size_t>(i)]) -= 1.0;
                     dz.row(i) *= g * weights[static_cast<size_t>(i)];
                   }
                   tp.add_grad(zi, dz);
                 });
}

}  // namespace star::ag
