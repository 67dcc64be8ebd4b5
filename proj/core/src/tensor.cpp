#include "factsum/tensor.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "factsum/error.hpp"

namespace factsum::ad {

Mask::Mask(int rows, int cols, bool allowed)
    : rows_(rows), cols_(cols),
      bits_(static_cast<std::size_t>(rows) * cols, allowed ? 1 : 0) {}

Mask Mask::causal(int n) {
  Mask m(n, n, false);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c <= r; ++c) m.set(r, c, true);
  }
  return m;
}

Mask Mask::keys(int rows, std::span<const std::uint8_t> key_valid) {
  Mask m(rows, static_cast<int>(key_valid.size()), false);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < m.cols(); ++c) m.set(r, c, key_valid[c] != 0);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
  nodes_.push_back(Node{{}, &p.value, {}, {}});
  int id = static_cast<int>(nodes_.size() - 1);
  params_.emplace(&p, id);
  return Var{id};
}

const Matrix& Tape::value(Var v) const { return value(v.id); }

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.ref != nullptr ? *n.ref : n.value;
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const Matrix& v = n.ref != nullptr ? *n.ref : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

Var Tape::emit(Matrix value, Backward backward) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, record_ ? std::move(backward) : Backward{}});
  return Var{static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var output, double seed) {
  if (!record_) throw Error(ErrorKind::kPrecondition, "backward on a non-recording tape");
  const Matrix& out = value(output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error(ErrorKind::kPrecondition, "backward requires a scalar output");
  }
  if (!std::isfinite(out(0, 0))) throw Error(ErrorKind::kNumeric, "non-finite loss");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  grad(output.id)(0, 0) = seed;
  for (int i = output.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, i);
  }
}

Matrix Tape::gradient(const Parameter& p) const {
  auto it = params_.find(&p);
  if (it != params_.end()) {
    const Node& n = nodes_[static_cast<std::size_t>(it->second)];
    if (n.grad.size() != 0) return n.grad;
  }
  return Matrix::Zero(p.value.rows(), p.value.cols());
}

bool Tape::has_gradient(const Parameter& p) const {
  auto it = params_.find(&p);
  return it != params_.end() && nodes_[static_cast<std::size_t>(it->second)].grad.size() != 0;
}

// ---------------------------------------------------------------------------
// Ops

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::kPrecondition, what);
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul: shape mismatch");
  Matrix out = t.value(a) * t.value(b);
  return t.emit(std::move(out), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(a.id).noalias() += g * tp.value(b).transpose();
    tp.grad(b.id).noalias() += tp.value(a).transpose() * g;
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).cols(), "matmul_nt: shape mismatch");
  Matrix out = t.value(a) * t.value(b).transpose();
  return t.emit(std::move(out), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(a.id).noalias() += g * tp.value(b);
    tp.grad(b.id).noalias() += g.transpose() * tp.value(a);
  });
}

Var add(Tape& t, Var a, Var b) {
  require(t.value(a).rows() == t.value(b).rows() && t.value(a).cols() == t.value(b).cols(),
          "add: shape mismatch");
  Matrix out = t.value(a) + t.value(b);
  return t.emit(std::move(out), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(a.id) += g;
    tp.grad(b.id) += g;
  });
}

Var add_row(Tape& t, Var a, Var row) {
  require(t.value(row).rows() == 1 && t.value(row).cols() == t.value(a).cols(),
          "add_row: shape mismatch");
  Matrix out = t.value(a).rowwise() + t.value(row).row(0);
  return t.emit(std::move(out), [a, row](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    tp.grad(a.id) += g;
    tp.grad(row.id) += g.colwise().sum();
  });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = t.value(a) * s;
  return t.emit(std::move(out), [a, s](Tape& tp, int self) { tp.grad(a.id) += tp.grad(self) * s; });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var gelu(Tape& t, Var a) {
  Matrix out = t.value(a).unaryExpr([](double x) { return gelu_value(x); });
  return t.emit(std::move(out), [a](Tape& tp, int self) {
    const Matrix& x = tp.value(a);
    Matrix d = x.unaryExpr([](double v) {
      double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + v * pdf;
    });
    tp.grad(a.id) += tp.grad(self).cwiseProduct(d);
  });
}

Matrix layer_norm_value(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
  const Eigen::Index n = x.cols();
  Matrix out(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = x.row(r).mean();
    double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(n);
    double rstd = 1.0 / std::sqrt(var + eps);
    out.row(r) = ((x.row(r).array() - mean) * rstd * gain.row(0).array() + bias.row(0).array())
                     .matrix();
  }
  return out;
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = t.value(x);
  const Eigen::Index n = xv.cols();
  require(t.value(gain).cols() == n && t.value(bias).cols() == n, "layer_norm: shape mismatch");
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd rstd(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    double mean = xv.row(r).mean();
    double var = (xv.row(r).array() - mean).square().sum() / static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * rstd[r];
  }
  Matrix out = (xhat.array().rowwise() * t.value(gain).row(0).array()).matrix();
  out.rowwise() += t.value(bias).row(0);
  if (!t.recording()) return t.emit(std::move(out), {});
  return t.emit(std::move(out), [x, gain, bias, xhat = std::move(xhat),
                                 rstd = std::move(rstd)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const double n = static_cast<double>(g.cols());
    tp.grad(gain.id) += g.cwiseProduct(xhat).colwise().sum();
    tp.grad(bias.id) += g.colwise().sum();
    Matrix dxhat = (g.array().rowwise() * tp.value(gain).row(0).array()).matrix();
    Matrix& gx = tp.grad(x.id);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double mean_d = dxhat.row(r).sum() / n;
      double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
      gx.row(r) += rstd[r] * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx)
                                 .matrix();
    }
  });
}

Matrix softmax_rows(const Matrix& scores, const Mask* mask) {
  Matrix p = Matrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (mask == nullptr || mask->allowed(static_cast<int>(r), static_cast<int>(c))) {
        mx = std::max(mx, scores(r, c));
      }
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw Error(ErrorKind::kPrecondition, "attention row has no unmasked position");
    }
    double z = 0.0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (mask == nullptr || mask->allowed(static_cast<int>(r), static_cast<int>(c))) {
        p(r, c) = std::exp(scores(r, c) - mx);
        z += p(r, c);
      }
    }
    p.row(r) /= z;
  }
  return p;
}

Var masked_softmax(Tape& t, Var scores, const Mask& mask) {
  const Matrix& s = t.value(scores);
  require(mask.rows() == s.rows() && mask.cols() == s.cols(), "masked_softmax: mask shape");
  Matrix p = softmax_rows(s, &mask);
  return t.emit(std::move(p), [scores](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix& pv = tp.value(self);
    Eigen::VectorXd dot = (g.cwiseProduct(pv)).rowwise().sum();
    Matrix ds = pv.cwiseProduct((g.colwise() - dot));
    tp.grad(scores.id) += ds;
  });
}

Var slice_cols(Tape& t, Var a, int start, int count) {
  require(start >= 0 && start + count <= t.value(a).cols(), "slice_cols: out of range");
  Matrix out = t.value(a).middleCols(start, count);
  return t.emit(std::move(out), [a, start, count](Tape& tp, int self) {
    tp.grad(a.id).middleCols(start, count) += tp.grad(self);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    require(t.value(p).rows() == rows, "concat_cols: row mismatch");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.emit(std::move(out), [inputs](Tape& tp, int self) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      Eigen::Index c = tp.value(p).cols();
      tp.grad(p.id) += tp.grad(self).middleCols(off, c);
      off += c;
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows: column mismatch");
    rows += t.value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.emit(std::move(out), [inputs](Tape& tp, int self) {
    Eigen::Index off = 0;
    for (Var p : inputs) {
      Eigen::Index r = tp.value(p).rows();
      tp.grad(p.id) += tp.grad(self).middleRows(off, r);
      off += r;
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> rows) {
  const Matrix& tv = t.value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), tv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < tv.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(rows[i]);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  return t.emit(std::move(out), [table, idx = std::move(idx)](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix& gt = tp.grad(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> targets, int pad_id) {
  const Matrix& z = t.value(logits);
  require(z.rows() == static_cast<Eigen::Index>(targets.size()), "cross_entropy: length mismatch");
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  int count = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double mx = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - mx).exp();
    double sum = probs.row(r).sum();
    probs.row(r) /= sum;
    int y = targets[static_cast<std::size_t>(r)];
    if (y == pad_id) continue;
    require(y >= 0 && y < z.cols(), "cross_entropy: target out of range");
    total += (mx + std::log(sum)) - z(r, y);
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::kPrecondition, "cross_entropy: every position is padding");
  Matrix out(1, 1);
  out(0, 0) = total / count;
  std::vector<int> tg(targets.begin(), targets.end());
  return t.emit(std::move(out), [logits, tg = std::move(tg), probs = std::move(probs), count,
                                 pad_id](Tape& tp, int self) {
    double g = tp.grad(self)(0, 0) / count;
    Matrix& gz = tp.grad(logits.id);
    for (std::size_t r = 0; r < tg.size(); ++r) {
      if (tg[r] == pad_id) continue;
      auto row = static_cast<Eigen::Index>(r);
      gz.row(row) += g * probs.row(row);
      gz(row, tg[r]) -= g;
    }
  });
}

}  // namespace factsum::ad
