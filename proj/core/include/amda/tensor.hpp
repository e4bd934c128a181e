#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "amda/errors.hpp"

namespace amda {

using Shape = std::vector<std::size_t>;
using BoolMask = std::vector<std::uint8_t>;

std::string shape_string(const Shape& s);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad; // empty until a gradient is accumulated
  bool requires_grad = false;

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

} // namespace detail

/// Dense row-major tensor of doubles. Copies are shallow: they share the
/// underlying node, so in-place parameter updates are visible through every
/// handle. Gradients live beside the values and accumulate across consumers.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  /// Row/column counts; a rank-1 tensor counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }

  double item() const;
  double at(std::size_t i) const { return node_->value[i]; }
  double at(std::size_t i, std::size_t j) const {
    return node_->value[i * cols() + j];
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of executed primitive ops. backward() replays the record in
/// exact reverse execution order; fan-out gradients sum because every step
/// accumulates with += into its inputs.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }
  std::size_t num_entries() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the record backwards.
  void backward(const Tensor& loss);

  /// Tape recording ops on the current thread, or nullptr in eval mode.
  static Tape* active();

private:
  friend class TapeScope;
  std::vector<std::function<void()>> steps_;
};

/// RAII activation of a tape on the current thread.
class TapeScope {
public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

private:
  Tape* previous_;
};

// ---- primitive ops -------------------------------------------------------
//
// Every op validates shapes, computes the forward value, checks the result
// for NaN/Inf, and (when a tape is active and an input requires grad)
// records one backward step.

/// c[i,j] = sum_t a[i,t] * b[t,j]. Backward: ga += g*b^T, gb += a^T*g.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise add/sub/mul. The right operand may be a same-shaped tensor or
/// a row vector (shape [m] or [1,m]) broadcast to every row of a [n,m] left
/// operand; that is the only broadcast rule.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

/// Stabilized softmax. Slices taken along `axis` sum to 1.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Identity forward; backward multiplies the upstream gradient by -weight.
Tensor gradient_reversal(const Tensor& x, double weight);

/// Mean of the rows of x[n,d] selected by mask[n]; result has shape [d].
Tensor masked_mean(const Tensor& x, const BoolMask& mask);

/// u.v / (|u||v|) for rank-1 tensors; norms below 1e-8 are degenerate.
Tensor cosine_similarity(const Tensor& u, const Tensor& v);

/// s[i,j] = cosine(a[i,:], b[j,:]) for a[n,d], b[m,d]. Rows excluded by a
/// mask produce zero entries and receive no gradient; an *included* row with
/// near-zero norm is degenerate. Empty masks include every row.
Tensor row_cosine_matrix(const Tensor& a, const Tensor& b,
                         const BoolMask& a_valid = {},
                         const BoolMask& b_valid = {});

/// Same-length 1-D cross-correlation: x[n,c_in] * kernel[k,c_in,c_out] with
/// zero padding of (k-1)/2 per side, plus bias[c_out]. k must be odd.
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].
/// The masked overload averages over the selected entries only.
Tensor bce_loss(const Tensor& pred, const Tensor& target);
Tensor bce_loss(const Tensor& pred, const Tensor& target, const BoolMask& mask);

/// Mean squared error. The row-masked overload averages over valid rows of
/// rank-2 inputs only.
Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor mse_loss_rows(const Tensor& a, const Tensor& b, const BoolMask& row_valid);

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(const std::vector<Tensor>& xs);

/// Sum of all entries, shape [1].
Tensor sum(const Tensor& x);

/// Inverted-scaling dropout: at train time each entry survives with
/// probability 1-rate and is scaled by 1/(1-rate); at eval time identity.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training);

namespace detail {
// Accumulating matmul kernels shared by forward and backward paths.
// c[n,m] += a[n,k] * b[k,m]
void mm_nn_acc(const double* a, const double* b, double* c, std::size_t n,
               std::size_t k, std::size_t m);
// c[n,k] += a[n,m] * b[k,m]^T
void mm_nt_acc(const double* a, const double* b, double* c, std::size_t n,
               std::size_t m, std::size_t k);
// c[k,m] += a[n,k]^T * b[n,m]
void mm_tn_acc(const double* a, const double* b, double* c, std::size_t n,
               std::size_t k, std::size_t m);
} // namespace detail

} // namespace amda
