#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace factsum::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named trainable tensor. Gradients live on the tape, not here, so forward
// passes only ever need const access.
struct Parameter {
  std::string name;
  Matrix value;
};

// Which (query, key) pairs may attend. Row-major, one byte per entry.
class Mask {
 public:
  Mask() = default;
  Mask(int rows, int cols, bool allowed = true);

  // Lower-triangular n x n.
  static Mask causal(int n);
  // Every query row may see exactly the valid keys.
  static Mask keys(int rows, std::span<const std::uint8_t> key_valid);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool allowed(int r, int c) const { return bits_[static_cast<std::size_t>(r) * cols_ + c] != 0; }
  void set(int r, int c, bool allowed) {
    bits_[static_cast<std::size_t>(r) * cols_ + c] = allowed ? 1 : 0;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Attention weights captured during a forward pass, with the mask they were
// computed under.
struct AttentionRecord {
  Matrix weights;
  Mask mask;
};
using AttentionLog = std::vector<AttentionRecord>;

struct Var {
  int id = -1;
};

// Reverse-mode autodiff tape over row-major double matrices. With recording
// off, ops only compute values (inference).
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix value);
  // Each Parameter maps to a single node per tape; its value is referenced,
  // not copied.
  Var parameter(const Parameter& p);

  const Matrix& value(Var v) const;

  // Runs reverse accumulation from a 1x1 output seeded with `seed`.
  void backward(Var output, double seed = 1.0);

  // Gradient of the last backward() w.r.t. `p`; zeros if `p` never
  // contributed to the output.
  Matrix gradient(const Parameter& p) const;
  bool has_gradient(const Parameter& p) const;

  // Op construction.
  Var emit(Matrix value, Backward backward);
  Matrix& grad(int id);
  const Matrix& value(int id) const;

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> params_;
  bool record_;
};

Var matmul(Tape& t, Var a, Var b);     // a * b
Var matmul_nt(Tape& t, Var a, Var b);  // a * b^T
Var add(Tape& t, Var a, Var b);
Var add_row(Tape& t, Var a, Var row);  // broadcast a 1 x n row over a's rows
Var scale(Tape& t, Var a, double s);
Var gelu(Tape& t, Var a);
Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps);
// Row softmax over allowed entries; disallowed entries are exactly 0. A row
// with no allowed entry throws kPrecondition.
Var masked_softmax(Tape& t, Var scores, const Mask& mask);
Var slice_cols(Tape& t, Var a, int start, int count);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var gather_rows(Tape& t, Var table, std::span<const int> rows);
// Mean over positions whose target != pad_id of -log softmax(logits)[target].
Var cross_entropy(Tape& t, Var logits, std::span<const int> targets, int pad_id);

// Plain-value helpers shared with the inference path.
double gelu_value(double x);
Matrix layer_norm_value(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps);
Matrix softmax_rows(const Matrix& scores, const Mask* mask = nullptr);

}  // namespace factsum::ad
