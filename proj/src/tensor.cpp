#include "ddnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ddnet/errors.hpp"

namespace ddnet {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) { impl_->shape = {}; impl_->data = {0.0}; }

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() < 2) return 1;
  const auto c = cols();
  return c == 0 ? shape_numel(Shape(shape().begin(), shape().end() - 1)) : numel() / c;
}

std::size_t Tensor::cols() const { return rank() == 0 ? 1 : shape().back(); }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, false); }

// ---- Tape -----------------------------------------------------------------------

namespace {
thread_local Tape* g_current_tape = nullptr;

std::vector<double>& grad_buffer(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

bool tracking(std::span<const Tensor> inputs) {
  if (Tape::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be positive, got " + std::to_string(tau));
}
}  // namespace

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const Tensor& output, BackwardFn fn) {
  output.impl().requires_grad = true;
  entries_.push_back({output.handle(), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward already ran on this tape");
  if (loss.numel() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("loss is not connected to any parameter");
  consumed_ = true;
  grad_buffer(loss.impl())[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn(it->output->grad);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::current();
  if (tape == nullptr) throw ContractError("backward called without an active tape");
  tape->backward(loss);
}

// ---- linear algebra --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  Tensor out({m, n}, std::move(c));
  if (tracking({&a, &b})) {
    Tape::current()->record(out, [a, b, m, k, n](std::span<const double> g) {
      const double* A = a.data().data();
      const double* B = b.data().data();
      if (a.requires_grad()) {
        // dA = g B^T, accumulated row by row against B^T so the inner loop is contiguous
        std::vector<double> bt(n * k);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
        auto& ga = grad_buffer(a.impl());
        for (std::size_t i = 0; i < m; ++i) {
          double* garow = ga.data() + i * k;
          const double* grow = g.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = grow[j];
            const double* btrow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) garow[p] += gv * btrow[p];
          }
        }
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b.impl());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            const double* grow = g.data() + i * n;
            double* gbrow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> c(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = B[j * k + p];
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* btrow = bt.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * btrow[j];
    }
  }
  Tensor out({m, n}, std::move(c));
  if (tracking({&a, &b})) {
    Tape::current()->record(out, [a, b, m, k, n](std::span<const double> g) {
      const double* A = a.data().data();
      const double* B = b.data().data();
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a.impl());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * B[j * k + p];
          }
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b.impl());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * A[i * k + p];
          }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> t(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a.data()[i * n + j];
  Tensor out({n, m}, std::move(t));
  if (tracking({&a})) {
    Tape::current()->record(out, [a, m, n](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

// ---- elementwise -------------------------------------------------------------------

namespace {
template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& a, Fwd fwd, Bwd dfdx) {
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(a[i]);
  Tensor out(a.shape(), std::move(y));
  if (tracking({&a})) {
    Tape::current()->record(out, [a, out_impl = &out.impl(), dfdx](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfdx(a[i], out_impl->data[i]);
    });
  }
  return out;
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  Tensor out(a.shape(), std::move(y));
  if (tracking({&a, &b})) {
    Tape::current()->record(out, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a.impl());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b.impl());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  Tensor out(a.shape(), std::move(y));
  if (tracking({&a, &b})) {
    Tape::current()->record(out, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a.impl());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b.impl());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  Tensor out(a.shape(), std::move(y));
  if (tracking({&a, &b})) {
    Tape::current()->record(out, [a, b](std::span<const double> g) {
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a.impl());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b.impl());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_bias(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.cols();
  if (b.numel() != n || a.rank() == 0) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match " + shape_str(a.shape()));
  }
  const std::size_t m = a.rows();
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = a[i * n + j] + b[j];
  Tensor out(a.shape(), std::move(y));
  if (tracking({&a, &b})) {
    Tape::current()->record(out, [a, b, m, n](std::span<const double> g) {
      if (a.requires_grad()) {
        auto& ga = grad_buffer(a.impl());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = grad_buffer(b.impl());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double t = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * k * x * x);
      });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---- normalisation and softmax -------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.cols();
  if (gain.numel() != n || bias.numel() != n) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + " for input " + shape_str(x.shape()));
  }
  const std::size_t m = x.numel() / std::max<std::size_t>(n, 1);
  std::vector<double> y(x.numel()), xhat(x.numel()), rstd(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * rstd[i];
      y[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  Tensor out(x.shape(), std::move(y));
  if (tracking({&x, &gain, &bias})) {
    Tape::current()->record(out, [x, gain, bias, m, n, xhat = std::move(xhat), rstd = std::move(rstd)](
                                     std::span<const double> g) {
      if (gain.requires_grad()) {
        auto& gg = grad_buffer(gain.impl());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
      }
      if (bias.requires_grad()) {
        auto& gb = grad_buffer(bias.impl());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (x.requires_grad()) {
        auto& gx = grad_buffer(x.impl());
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = g[i * n + j] * gain[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * n + j];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j)
            gx[i * n + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
        }
      }
    });
  }
  return out;
}

namespace {
Tensor softmax_impl(const Tensor& logits, const unsigned char* mask, double tau) {
  check_tau(tau);
  const std::size_t n = logits.cols();
  const std::size_t m = n == 0 ? 0 : logits.numel() / n;
  std::vector<double> y(logits.numel(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!mask || mask[i * n + j]) mx = std::max(mx, row[j] / tau);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ContractError("softmax row " + std::to_string(i) + " has no admissible entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !mask[i * n + j]) continue;
      y[i * n + j] = std::exp(row[j] / tau - mx);
      z += y[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] /= z;
  }
  Tensor out(logits.shape(), std::move(y));
  if (tracking({&logits})) {
    Tape::current()->record(out, [logits, out_impl = &out.impl(), m, n, tau](std::span<const double> g) {
      auto& gl = grad_buffer(logits.impl());
      const auto& p = out_impl->data;
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * p[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += p[i * n + j] * (g[i * n + j] - dot) / tau;
      }
    });
  }
  return out;
}
}  // namespace

Tensor softmax_t(const Tensor& logits, double tau) { return softmax_impl(logits, nullptr, tau); }

Tensor softmax_masked(const Tensor& logits, std::span<const unsigned char> mask, double tau) {
  if (mask.size() != logits.numel()) {
    throw DimensionError("softmax mask has " + std::to_string(mask.size()) + " entries for logits " +
                         shape_str(logits.shape()));
  }
  return softmax_impl(logits, mask.data(), tau);
}

Tensor log_softmax_t(const Tensor& logits, double tau) {
  check_tau(tau);
  const std::size_t n = logits.cols();
  const std::size_t m = n == 0 ? 0 : logits.numel() / n;
  std::vector<double> y(logits.numel()), p(logits.numel());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.data().data() + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j] / tau);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] / tau - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      y[i * n + j] = row[j] / tau - lse;
      p[i * n + j] = std::exp(y[i * n + j]);
    }
  }
  Tensor out(logits.shape(), std::move(y));
  if (tracking({&logits})) {
    Tape::current()->record(out, [logits, m, n, tau, p = std::move(p)](std::span<const double> g) {
      auto& gl = grad_buffer(logits.impl());
      for (std::size_t i = 0; i < m; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gl[i * n + j] += (g[i * n + j] - p[i * n + j] * gsum) / tau;
      }
    });
  }
  return out;
}

// ---- reductions and indexing ---------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (tracking({&a})) {
    Tape::current()->record(out, [a](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (auto& v : ga) v += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.numel()) {
    throw BoundsError("pick index " + std::to_string(index) + " outside " + shape_str(a.shape()));
  }
  Tensor out = Tensor::scalar(a[index]);
  if (tracking({&a})) {
    Tape::current()->record(out, [a, index](std::span<const double> g) { grad_buffer(a.impl())[index] += g[0]; });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (tracking({&a})) {
    Tape::current()->record(out, [a](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_rows");
  const std::size_t n = a.shape()[1];
  if (begin > end || end > a.shape()[0]) {
    throw BoundsError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                      shape_str(a.shape()));
  }
  std::vector<double> y(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        a.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  Tensor out({end - begin, n}, std::move(y));
  if (tracking({&a})) {
    Tape::current()->record(out, [a, begin, n](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (begin > end || end > n) {
    throw BoundsError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                      shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> y(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * n + begin), w, y.begin() + static_cast<std::ptrdiff_t>(i * w));
  Tensor out({m, w}, std::move(y));
  if (tracking({&a})) {
    Tape::current()->record(out, [a, begin, m, n, w](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: " + shape_str(p.shape()) + " vs width " + std::to_string(n));
    m += p.shape()[0];
  }
  std::vector<double> y;
  y.reserve(m * n);
  for (const auto& p : parts) y.insert(y.end(), p.data().begin(), p.data().end());
  Tensor out({m, n}, std::move(y));
  if (tracking(parts)) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    Tape::current()->record(out, [held = std::move(held)](std::span<const double> g) {
      std::size_t offset = 0;
      for (const auto& p : held) {
        if (p.requires_grad()) {
          auto& gp = grad_buffer(p.impl());
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  require_rank2(parts[0], "concat_cols");
  const std::size_t m = parts[0].shape()[0];
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != m) throw DimensionError("concat_cols: " + shape_str(p.shape()) + " vs height " + std::to_string(m));
    n += p.shape()[1];
  }
  std::vector<double> y(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) y[i * n + offset + j] = p[i * w + j];
    offset += w;
  }
  Tensor out({m, n}, std::move(y));
  if (tracking(parts)) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    Tape::current()->record(out, [held = std::move(held), m, n](std::span<const double> g) {
      std::size_t offset = 0;
      for (const auto& p : held) {
        const std::size_t w = p.shape()[1];
        if (p.requires_grad()) {
          auto& gp = grad_buffer(p.impl());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + offset + j];
        }
        offset += w;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank2(table, "gather_rows");
  const std::size_t v = table.shape()[0], n = table.shape()[1];
  std::vector<double> y(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= v) {
      throw BoundsError("row " + std::to_string(rows[i]) + " outside table " + shape_str(table.shape()));
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * n), n,
                y.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  Tensor out({rows.size(), n}, std::move(y));
  if (tracking({&table})) {
    Tape::current()->record(out, [table, idx = std::vector<std::size_t>(rows.begin(), rows.end()), n](
                                     std::span<const double> g) {
      auto& gt = grad_buffer(table.impl());
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += g[i * n + j];
    });
  }
  return out;
}

Tensor gather(const Tensor& a, std::span<const std::size_t> indices) {
  std::vector<double> y(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.numel()) {
      throw BoundsError("index " + std::to_string(indices[i]) + " outside " + shape_str(a.shape()));
    }
    y[i] = a[indices[i]];
  }
  Tensor out = Tensor::vector(std::move(y));
  if (tracking({&a})) {
    Tape::current()->record(out, [a, idx = std::vector<std::size_t>(indices.begin(), indices.end())](
                                     std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& a) {
  require_rank2(a, "mean_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (m == 0) throw ContractError("mean_rows of an empty sequence");
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j] += a[i * n + j];
  for (auto& v : y) v /= static_cast<double>(m);
  Tensor out({1, n}, std::move(y));
  if (tracking({&a})) {
    Tape::current()->record(out, [a, m, n](std::span<const double> g) {
      auto& ga = grad_buffer(a.impl());
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
    });
  }
  return out;
}

Tensor broadcast_rows(const Tensor& row, std::size_t count) {
  if (row.rank() > 2 || (row.rank() == 2 && row.shape()[0] != 1)) {
    throw DimensionError("broadcast_rows expects a single row, got " + shape_str(row.shape()));
  }
  const std::size_t n = row.numel();
  std::vector<double> y(count * n);
  for (std::size_t i = 0; i < count; ++i) std::copy(row.data().begin(), row.data().end(), y.begin() + static_cast<std::ptrdiff_t>(i * n));
  Tensor out({count, n}, std::move(y));
  if (tracking({&row})) {
    Tape::current()->record(out, [row, count, n](std::span<const double> g) {
      auto& gr = grad_buffer(row.impl());
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ParameterError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (rate == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  std::vector<double> m(a.numel());
  for (auto& v : m) v = keep(rng) ? inv : 0.0;
  return mul(a, Tensor(a.shape(), std::move(m)));
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (target >= logits.numel()) {
    throw BoundsError("target " + std::to_string(target) + " outside logits " + shape_str(logits.shape()));
  }
  return scale(pick(log_softmax_t(reshape(logits, {logits.numel()}), 1.0), target), -1.0);
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits, double tau) {
  require_same_shape(p_logits, q_logits, "kl_divergence");
  const Tensor p = softmax_t(p_logits, tau);
  const Tensor log_p = log_softmax_t(p_logits, tau);
  const Tensor log_q = log_softmax_t(q_logits, tau);
  return sum(mul(p, sub(log_p, log_q)));
}

// ---- gradient checking -------------------------------------------------------------------

namespace {
void check_eps(double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ParameterError("grad_check eps must lie in [1e-6, 1e-3]");
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}
}  // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  check_eps(eps);
  const std::vector<double> x0(x.data().begin(), x.data().end());
  const double v1 = f(Tensor(x.shape(), x0)).item();
  const double v2 = f(Tensor(x.shape(), x0)).item();
  if (v1 != v2 && !(std::isnan(v1) && std::isnan(v2))) {
    throw ContractError("grad_check: function is not deterministic");
  }

  Tensor leaf(x.shape(), x0, true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor y = f(leaf);
    if (y.numel() != 1) throw ContractError("grad_check: function is not scalar valued");
    if (!y.requires_grad()) {
      analytic.assign(x0.size(), 0.0);
    } else {
      tape.backward(y);
      analytic.assign(leaf.grad().begin(), leaf.grad().end());
      if (analytic.empty()) analytic.assign(x0.size(), 0.0);
    }
  }

  double worst = 0.0;
  std::vector<double> probe = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    probe[i] = x0[i] + eps;
    const double fp = f(Tensor(x.shape(), probe)).item();
    probe[i] = x0[i] - eps;
    const double fm = f(Tensor(x.shape(), probe)).item();
    probe[i] = x0[i];
    worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& f, std::span<const Tensor> params, double eps,
                         std::size_t max_components) {
  check_eps(eps);
  if (f().item() != f().item()) throw ContractError("grad_check: function is not deterministic");

  for (auto p : params) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  {
    Tape tape;
    Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function is not scalar valued");
    tape.backward(y);
  }

  double worst = 0.0;
  for (auto p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.numel(), 0.0);
    const std::size_t n = p.numel();
    const std::size_t probes = max_components == 0 ? n : std::min(n, max_components);
    for (std::size_t k = 0; k < probes; ++k) {
      const std::size_t i = probes == n ? k : (k * n) / probes;
      auto data = p.mutable_data();
      const double x0 = data[i];
      data[i] = x0 + eps;
      const double fp = f().item();
      data[i] = x0 - eps;
      const double fm = f().item();
      data[i] = x0;
      worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace ddnet
