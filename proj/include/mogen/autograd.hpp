#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors. Backward rules are written in terms of the same public ops,
// so gradients can themselves be differentiated (needed by the critic's
// gradient penalty).

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mogen::ag {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<Tensor> parents;
  // Fills grads[i] for every parent i with need[i] set.
  std::function<void(const Tensor& self, const Tensor& grad, std::span<const bool> need,
                     std::vector<Tensor>& grads)>
      backward;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const double> values() const { return node_->value; }
  // Mutable access for leaves only (parameter updates, test perturbations).
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::int64_t flat) const { return node_->value[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return !node_->backward; }

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Graph recording is enabled by default; NoGradGuard disables it in scope.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Gradients of `output` (summed over its elements, or contracted with
/// `grad_output` when given) with respect to each tensor in `inputs`.
/// Inputs that `output` does not depend on get zero tensors. With
/// `create_graph` the returned gradients are themselves differentiable.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         bool create_graph = false, const Tensor& grad_output = {});

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
// Derivative taken as zero where the input is zero. Not twice differentiable.
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
// Exact (erf) GELU. Not twice differentiable.
Tensor gelu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);

Tensor sum(const Tensor& a, int dim, bool keepdim = false);
Tensor mean(const Tensor& a, int dim, bool keepdim = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor max_along(const Tensor& a, int dim, bool keepdim = false);

// Broadcast to `shape` and its adjoint (sum over broadcast axes).
Tensor expand(const Tensor& a, const Shape& shape);
Tensor sum_to(const Tensor& a, const Shape& shape);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, std::vector<int> dims);
Tensor transpose(const Tensor& a, int d0, int d1);

/// op(a) @ op(b). With a rank-2 `b` the leading axes of `a` are folded into
/// rows; otherwise both operands carry identical leading batch axes.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

Tensor softmax(const Tensor& a);  // over the last axis

/// y[.., i, ..] = x[.., index[i], ..] along `dim`; a negative index yields 0.
Tensor gather(const Tensor& a, int dim, std::span<const std::int64_t> index);
/// Adjoint of gather: y[.., index[i], ..] += x[.., i, ..], y has `out_size` along dim.
Tensor scatter_add(const Tensor& a, int dim, std::span<const std::int64_t> index, std::int64_t out_size);
Tensor slice(const Tensor& a, int dim, std::int64_t start, std::int64_t length);
Tensor concat(std::span<const Tensor> parts, int dim);
Tensor concat(std::initializer_list<Tensor> parts, int dim);

/// y[.., i, ..] = sum_j m[i, j] x[.., j, ..] along `dim`, `m` a constant
/// rows x cols matrix (row-major, cols == x.dim(dim)).
Tensor mix(const Tensor& a, int dim, std::span<const double> m, std::int64_t rows, std::int64_t cols);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace mogen::ag
