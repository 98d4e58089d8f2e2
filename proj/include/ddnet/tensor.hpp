#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddnet/hash.hpp"

namespace ddnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
};

/// Dense row-major float64 array. Copies share storage (handle semantics), so
/// a parameter can be held by a module and an optimizer at once; use clone()
/// for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }
  /// Leading extent for rank >= 2 (product of all but the last axis), 1 otherwise.
  std::size_t rows() const;
  /// Extent of the last axis (1 for scalars).
  std::size_t cols() const;

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy of values; the copy does not require grad.
  Tensor clone() const;
  /// Same values, cut from the graph.
  Tensor detach() const { return clone(); }

  TensorImpl& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl>& handle() const { return impl_; }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations executed while it is the
/// current tape of this thread. Construction installs it, destruction
/// restores the previous one. Without a current tape ops run forward only.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(const Tensor& output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }

  /// Single reverse sweep from a scalar loss. Leaf gradients accumulate into
  /// whatever their grad buffers already hold; a tape runs backward once.
  void backward(const Tensor& loss);

 private:
  struct Entry {
    std::shared_ptr<TensorImpl> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

/// backward() on the current tape.
void backward(const Tensor& loss);

// ---- differentiable operations ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// a[m×n] + b[n] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
/// tanh approximation of GELU.
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// Row-wise layer normalisation over the last axis with gain and bias [n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Temperature softmax along the last axis, max-subtracted.
Tensor softmax_t(const Tensor& logits, double tau = 1.0);
/// As softmax_t, masked entries (mask[i] == 0) get probability 0.
/// Every slice must keep at least one admissible entry.
Tensor softmax_masked(const Tensor& logits, std::span<const unsigned char> mask, double tau = 1.0);
Tensor log_softmax_t(const Tensor& logits, double tau = 1.0);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Scalar a[index] of the flattened tensor.
Tensor pick(const Tensor& a, std::size_t index);
Tensor reshape(const Tensor& a, Shape shape);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
/// Rows of a 2-D table in the given order (embedding lookup, row selection).
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
/// Elements of a 1-D tensor in the given order.
Tensor gather(const Tensor& a, std::span<const std::size_t> indices);
/// [m×n] -> [1×n]
Tensor mean_rows(const Tensor& a);
/// [1×n] or [n] -> [count×n]
Tensor broadcast_rows(const Tensor& row, std::size_t count);

/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& a, double rate, Rng& rng);

/// -log softmax(logits)[target] for a 1-D logit vector.
Tensor cross_entropy(const Tensor& logits, std::size_t target);

/// KL(softmax(p_logits/tau) || softmax(q_logits/tau)) for 1-D logits.
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double tau);

// ---- gradient checking ----------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over components of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// numeric by central differences. f must be scalar valued and deterministic;
/// two evaluations that disagree raise ContractError.
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// Same measure over parameters captured by f. Parameters are perturbed in
/// place and restored. max_components caps how many entries per parameter
/// are probed (evenly spaced); 0 probes all of them.
double grad_check_params(const std::function<Tensor()>& f, std::span<const Tensor> params,
                         double eps = 1e-5, std::size_t max_components = 0);

}  // namespace ddnet
