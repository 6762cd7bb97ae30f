#include "mogen/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace mogen::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_order{0};

using BackwardFn = std::function<void(const Tensor&, const Tensor&, std::span<const bool>,
                                      std::vector<Tensor>&)>;

Tensor make_leaf(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->order = g_order.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

// Result node; records the backward rule only when some parent needs it.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   BackwardFn backward) {
  Tensor out = make_leaf(std::move(shape), std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  Node* n = out.node();
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward = std::move(backward);
  return out;
}

int norm_dim(int dim, int rank) {
  int d = dim < 0 ? dim + rank : dim;
  if (d < 0 || d >= rank) throw std::invalid_argument("dimension out of range");
  return d;
}

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// Strides that read `src` when indexing with an `out`-shaped counter.
std::vector<std::int64_t> broadcast_strides(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  if (src.size() > r) throw std::invalid_argument("cannot broadcast " + to_string(src) + " to " + to_string(out));
  std::vector<std::int64_t> st(r, 0);
  auto cs = contiguous_strides(src);
  const std::size_t off = r - src.size();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i] == out[i + off]) {
      st[i + off] = out[i + off] == 1 ? 0 : cs[i];
    } else if (src[i] == 1) {
      st[i + off] = 0;
    } else {
      throw std::invalid_argument("cannot broadcast " + to_string(src) + " to " + to_string(out));
    }
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    std::int64_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) {
      throw std::invalid_argument("incompatible shapes " + to_string(a) + " and " + to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_flat, ia, ib) for every element of `out` in row-major order.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, F&& f) {
  const std::int64_t total = numel(out);
  if (total == 0) return;
  const int r = static_cast<int>(out.size());
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia_step = sa[r - 1], ib_step = sb[r - 1];
  std::vector<std::int64_t> counter(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t flat = 0; flat < total; flat += inner) {
    std::int64_t a = ia, b = ib;
    for (std::int64_t j = 0; j < inner; ++j, a += ia_step, b += ib_step) f(flat + j, a, b);
    for (int d = r - 2; d >= 0; --d) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

template <class F>
std::vector<double> binary_values(const Tensor& a, const Tensor& b, Shape& out_shape, F op) {
  if (a.shape() == b.shape()) {
    out_shape = a.shape();
    std::vector<double> v(a.values().size());
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = op(pa[i], pb[i]);
    return v;
  }
  out_shape = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> v(static_cast<std::size_t>(numel(out_shape)));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for_each_broadcast(out_shape, sa, sb,
                     [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { v[o] = op(pa[ia], pb[ib]); });
  return v;
}

template <class F>
std::vector<double> unary_values(const Tensor& a, F op) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (auto& x : v) x = op(x);
  return v;
}

// Shape split around `dim`: [outer, extent, inner].
struct Split3 {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

Split3 split_at(const Shape& s, int dim) {
  Split3 r;
  for (int i = 0; i < dim; ++i) r.outer *= s[i];
  r.extent = s[dim];
  for (std::size_t i = dim + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

void gemm(const double* a, std::int64_t ar, std::int64_t ac, bool ta, const double* b, std::int64_t br,
          std::int64_t bc, bool tb, double* c) {
  const std::int64_t m = ta ? ac : ar;
  const std::int64_t n = tb ? br : bc;
  const std::int64_t k = ta ? ar : ac;
  if (m * n * k <= 8192) {
    // Small products (per-head attention) lose more to Eigen's setup than they gain.
    const std::int64_t a_row = ta ? 1 : ac, a_col = ta ? ac : 1;
    const std::int64_t b_row = tb ? 1 : bc, b_col = tb ? bc : 1;
    std::fill(c, c + m * n, 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
      double* ci = c + i * n;
      for (std::int64_t q = 0; q < k; ++q) {
        const double av = a[i * a_row + q * a_col];
        const double* bq = b + q * b_row;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bq[j * b_col];
      }
    }
    return;
  }
  ConstMap A(a, ar, ac);
  ConstMap B(b, br, bc);
  MutMap C(c, m, n);
  if (!ta && !tb) {
    C.noalias() = A * B;
  } else if (ta && !tb) {
    C.noalias() = A.transpose() * B;
  } else if (!ta && tb) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }
double gelu_deriv(double x) { return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * normal_pdf(x); }

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape) {
  const auto n = static_cast<std::size_t>(numel(shape));
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double v) {
  const auto n = static_cast<std::size_t>(numel(shape));
  return make_leaf(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != numel(shape)) {
    throw std::invalid_argument("value count does not match shape " + to_string(shape));
  }
  return make_leaf(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double v) { return make_leaf({}, {v}); }

std::int64_t Tensor::dim(int i) const { return node_->shape[norm_dim(i, rank())]; }

double Tensor::item() const {
  if (node_->value.size() != 1) throw std::logic_error("item() on tensor with " + to_string(shape()));
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const { return make_leaf(node_->shape, node_->value); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node()->requires_grad = is_leaf() && requires_grad();
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace {
class GradModeScope {
 public:
  explicit GradModeScope(bool on) : prev_(g_grad_enabled) { g_grad_enabled = on; }
  ~GradModeScope() { g_grad_enabled = prev_; }

 private:
  bool prev_;
};
}  // namespace

// ---------------------------------------------------------------------------
// Backpropagation

std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs, bool create_graph,
                         const Tensor& grad_output) {
  std::vector<Tensor> result(inputs.size());
  std::unordered_set<const Node*> input_set;
  for (const auto& in : inputs) input_set.insert(in.node());

  // Reachable nodes that carry gradient.
  std::vector<std::shared_ptr<Node>> nodes;
  std::unordered_set<const Node*> seen;
  if (output.requires_grad()) {
    std::vector<std::shared_ptr<Node>> stack{output.handle()};
    seen.insert(output.node());
    while (!stack.empty()) {
      auto n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (const auto& p : n->parents) {
        if (p.requires_grad() && seen.insert(p.node()).second) stack.push_back(p.handle());
      }
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a->order < b->order; });

  // A node matters only if some requested input lies upstream of it.
  std::unordered_map<const Node*, bool> needed;
  needed.reserve(nodes.size());
  for (const auto& n : nodes) {
    bool need = input_set.count(n.get()) > 0;
    for (const auto& p : n->parents) {
      if (need) break;
      auto it = needed.find(p.node());
      need = it != needed.end() && it->second;
    }
    needed[n.get()] = need;
  }

  std::unordered_map<const Node*, Tensor> grads;
  if (output.requires_grad() && needed[output.node()]) {
    if (grad_output.defined()) {
      if (grad_output.shape() != output.shape()) throw std::invalid_argument("grad_output shape mismatch");
      grads[output.node()] = grad_output;
    } else {
      grads[output.node()] = Tensor::full(output.shape(), 1.0);
    }
  }

  GradModeScope mode(create_graph);
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node* n = it->get();
    if (!needed[n] || !n->backward) continue;
    auto git = grads.find(n);
    if (git == grads.end()) continue;
    Tensor g = git->second;
    if (!input_set.count(n)) grads.erase(git);

    std::vector<bool> need_flags(n->parents.size());
    std::vector<Tensor> pg(n->parents.size());
    bool any = false;
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      const auto& p = n->parents[i];
      need_flags[i] = p.requires_grad() && needed[p.node()];
      any = any || need_flags[i];
    }
    if (!any) continue;
    // std::vector<bool> has no contiguous storage; copy into a plain array.
    std::unique_ptr<bool[]> flags(new bool[need_flags.size()]);
    for (std::size_t i = 0; i < need_flags.size(); ++i) flags[i] = need_flags[i];
    n->backward(Tensor(*it), g, std::span<const bool>(flags.get(), need_flags.size()), pg);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      if (!need_flags[i] || !pg[i].defined()) continue;
      const Node* p = n->parents[i].node();
      auto [slot, inserted] = grads.try_emplace(p, pg[i]);
      if (!inserted) slot->second = add(slot->second, pg[i]);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto it = grads.find(inputs[i].node());
    result[i] = it != grads.end() ? it->second : Tensor::zeros(inputs[i].shape());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  Shape s;
  auto v = binary_values(a, b, s, [](double x, double y) { return x + y; });
  return make_result(std::move(s), std::move(v), {a, b},
                     [](const Tensor& self, const Tensor& g, std::span<const bool> need, std::vector<Tensor>& out) {
                       const auto& p = self.node()->parents;
                       if (need[0]) out[0] = sum_to(g, p[0].shape());
                       if (need[1]) out[1] = sum_to(g, p[1].shape());
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape s;
  auto v = binary_values(a, b, s, [](double x, double y) { return x - y; });
  return make_result(std::move(s), std::move(v), {a, b},
                     [](const Tensor& self, const Tensor& g, std::span<const bool> need, std::vector<Tensor>& out) {
                       const auto& p = self.node()->parents;
                       if (need[0]) out[0] = sum_to(g, p[0].shape());
                       if (need[1]) out[1] = neg(sum_to(g, p[1].shape()));
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape s;
  auto v = binary_values(a, b, s, [](double x, double y) { return x * y; });
  return make_result(std::move(s), std::move(v), {a, b},
                     [](const Tensor& self, const Tensor& g, std::span<const bool> need, std::vector<Tensor>& out) {
                       const auto& p = self.node()->parents;
                       if (need[0]) out[0] = sum_to(mul(g, p[1]), p[0].shape());
                       if (need[1]) out[1] = sum_to(mul(g, p[0]), p[1].shape());
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape s;
  auto v = binary_values(a, b, s, [](double x, double y) { return x / y; });
  return make_result(std::move(s), std::move(v), {a, b},
                     [](const Tensor& self, const Tensor& g, std::span<const bool> need, std::vector<Tensor>& out) {
                       const auto& p = self.node()->parents;
                       if (need[0]) out[0] = sum_to(div(g, p[1]), p[0].shape());
                       if (need[1]) out[1] = neg(sum_to(div(mul(g, self), p[1]), p[1].shape()));
                     });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
  auto v = unary_values(a, [s](double x) { return x * s; });
  return make_result(a.shape(), std::move(v), {a},
                     [s](const Tensor&, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = scale(g, s);
                     });
}

Tensor add_scalar(const Tensor& a, double s) {
  auto v = unary_values(a, [s](double x) { return x + s; });
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor&, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = g;
                     });
}

Tensor exp(const Tensor& a) {
  auto v = unary_values(a, [](double x) { return std::exp(x); });
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = mul(g, self);
                     });
}

Tensor log(const Tensor& a) {
  auto v = unary_values(a, [](double x) { return std::log(x); });
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = div(g, self.node()->parents[0]);
                     });
}

Tensor square(const Tensor& a) {
  auto v = unary_values(a, [](double x) { return x * x; });
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = mul(g, scale(self.node()->parents[0], 2.0));
                     });
}

Tensor sqrt(const Tensor& a) {
  auto v = unary_values(a, [](double x) { return std::sqrt(x); });
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       auto d = unary_values(self, [](double y) { return y > 0.0 ? 0.5 / y : 0.0; });
                       out[0] = mul(g, Tensor::from(self.shape(), std::move(d)));
                     });
}

Tensor tanh(const Tensor& a) {
  auto v = unary_values(a, [](double x) { return std::tanh(x); });
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = mul(g, add_scalar(neg(square(self)), 1.0));
                     });
}

Tensor gelu(const Tensor& a) {
  auto v = unary_values(a, gelu_value);
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       const Tensor& x = self.node()->parents[0];
                       out[0] = mul(g, Tensor::from(x.shape(), unary_values(x, gelu_deriv)));
                     });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  auto v = unary_values(a, [slope](double x) { return x > 0.0 ? x : slope * x; });
  return make_result(a.shape(), std::move(v), {a},
                     [slope](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       const Tensor& x = self.node()->parents[0];
                       auto m = unary_values(x, [slope](double t) { return t > 0.0 ? 1.0 : slope; });
                       out[0] = mul(g, Tensor::from(x.shape(), std::move(m)));
                     });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasting

Tensor sum(const Tensor& a, int dim, bool keepdim) {
  const int d = norm_dim(dim, a.rank());
  const Split3 sp = split_at(a.shape(), d);
  std::vector<double> v(static_cast<std::size_t>(sp.outer * sp.inner), 0.0);
  const double* src = a.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    double* dst = v.data() + o * sp.inner;
    for (std::int64_t k = 0; k < sp.extent; ++k) {
      const double* row = src + (o * sp.extent + k) * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  Shape kept = a.shape();
  kept[d] = 1;
  Shape s = kept;
  if (!keepdim) s.erase(s.begin() + d);
  return make_result(std::move(s), std::move(v), {a},
                     [kept](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = expand(reshape(g, kept), self.node()->parents[0].shape());
                     });
}

Tensor mean(const Tensor& a, int dim, bool keepdim) {
  const int d = norm_dim(dim, a.rank());
  return scale(sum(a, d, keepdim), 1.0 / static_cast<double>(a.shape()[d]));
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_result({}, {s}, {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = expand(g, self.node()->parents[0].shape());
                     });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor max_along(const Tensor& a, int dim, bool keepdim) {
  const int d = norm_dim(dim, a.rank());
  const Split3 sp = split_at(a.shape(), d);
  if (sp.extent == 0) throw std::invalid_argument("max over empty axis");
  std::vector<double> v(static_cast<std::size_t>(sp.outer * sp.inner));
  std::vector<double> mask(a.values().size(), 0.0);
  const double* src = a.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      std::int64_t best = 0;
      for (std::int64_t k = 1; k < sp.extent; ++k) {
        if (src[(o * sp.extent + k) * sp.inner + i] > src[(o * sp.extent + best) * sp.inner + i]) best = k;
      }
      v[o * sp.inner + i] = src[(o * sp.extent + best) * sp.inner + i];
      mask[(o * sp.extent + best) * sp.inner + i] = 1.0;
    }
  }
  Shape kept = a.shape();
  kept[d] = 1;
  Shape s = kept;
  if (!keepdim) s.erase(s.begin() + d);
  return make_result(std::move(s), std::move(v), {a},
                     [kept, mask = std::move(mask)](const Tensor& self, const Tensor& g, std::span<const bool>,
                                                    std::vector<Tensor>& out) {
                       const Shape& in = self.node()->parents[0].shape();
                       out[0] = mul(expand(reshape(g, kept), in), Tensor::from(in, mask));
                     });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  auto st = broadcast_strides(a.shape(), shape);
  std::vector<std::int64_t> zero(shape.size(), 0);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  const double* src = a.values().data();
  for_each_broadcast(shape, st, zero, [&](std::int64_t o, std::int64_t ia, std::int64_t) { v[o] = src[ia]; });
  return make_result(shape, std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = sum_to(g, self.node()->parents[0].shape());
                     });
}

Tensor sum_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  auto st = broadcast_strides(shape, a.shape());
  std::vector<std::int64_t> zero(a.shape().size(), 0);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)), 0.0);
  const double* src = a.values().data();
  for_each_broadcast(a.shape(), zero, st, [&](std::int64_t o, std::int64_t, std::int64_t it) { v[it] += src[o]; });
  return make_result(shape, std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = expand(g, self.node()->parents[0].shape());
                     });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& a, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = a.size() / known;
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(a.shape()) + " to " + to_string(shape));
  }
  if (shape == a.shape()) return a;
  return make_result(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = reshape(g, self.node()->parents[0].shape());
                     });
}

Tensor permute(const Tensor& a, std::vector<int> dims) {
  const int r = a.rank();
  if (static_cast<int>(dims.size()) != r) throw std::invalid_argument("permute rank mismatch");
  std::vector<int> inverse(r, -1);
  for (int i = 0; i < r; ++i) {
    dims[i] = norm_dim(dims[i], r);
    if (inverse[dims[i]] != -1) throw std::invalid_argument("permute dims repeat");
    inverse[dims[i]] = i;
  }
  bool identity = true;
  for (int i = 0; i < r; ++i) identity = identity && dims[i] == i;
  if (identity) return a;

  Shape out(r);
  auto in_st = contiguous_strides(a.shape());
  std::vector<std::int64_t> st(r), zero(r, 0);
  for (int i = 0; i < r; ++i) {
    out[i] = a.shape()[dims[i]];
    st[i] = in_st[dims[i]];
  }
  std::vector<double> v(a.values().size());
  const double* src = a.values().data();
  for_each_broadcast(out, st, zero, [&](std::int64_t o, std::int64_t ia, std::int64_t) { v[o] = src[ia]; });
  return make_result(std::move(out), std::move(v), {a},
                     [inverse](const Tensor&, const Tensor& g, std::span<const bool>, std::vector<Tensor>& res) {
                       res[0] = permute(g, inverse);
                     });
}

Tensor transpose(const Tensor& a, int d0, int d1) {
  std::vector<int> dims(a.rank());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[norm_dim(d0, a.rank())], dims[norm_dim(d1, a.rank())]);
  return permute(a, dims);
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() < 2 || b.rank() < 2) throw std::invalid_argument("matmul needs rank >= 2 operands");
  const std::int64_t ar = a.dim(-2), ac = a.dim(-1);
  const std::int64_t br = b.dim(-2), bc = b.dim(-1);
  const std::int64_t m = trans_a ? ac : ar, k = trans_a ? ar : ac;
  const std::int64_t kb = trans_b ? bc : br, n = trans_b ? br : bc;
  if (k != kb) {
    throw std::invalid_argument("matmul inner mismatch " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  Shape out;
  std::vector<double> v;
  if (shared_b) {
    if (trans_a && a.rank() > 2) throw std::invalid_argument("transposed batched lhs needs batched rhs");
    const std::int64_t rows = trans_a ? m : a.size() / ac;
    out = a.shape();
    out.back() = n;
    if (trans_a) out = {m, n};
    v.assign(static_cast<std::size_t>(rows * n), 0.0);
    gemm(a.values().data(), trans_a ? ar : rows, ac, trans_a, b.values().data(), br, bc, trans_b, v.data());
  } else {
    if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
      throw std::invalid_argument("batched matmul batch mismatch " + to_string(a.shape()) + " x " +
                                  to_string(b.shape()));
    }
    const std::int64_t batch = a.size() / (ar * ac);
    out = a.shape();
    out[out.size() - 2] = m;
    out.back() = n;
    v.assign(static_cast<std::size_t>(batch * m * n), 0.0);
    for (std::int64_t i = 0; i < batch; ++i) {
      gemm(a.values().data() + i * ar * ac, ar, ac, trans_a, b.values().data() + i * br * bc, br, bc, trans_b,
           v.data() + i * m * n);
    }
  }
  return make_result(
      std::move(out), std::move(v), {a, b},
      [trans_a, trans_b, shared_b](const Tensor& self, const Tensor& g, std::span<const bool> need,
                                   std::vector<Tensor>& res) {
        const Tensor& A = self.node()->parents[0];
        const Tensor& B = self.node()->parents[1];
        if (need[0]) res[0] = trans_a ? matmul(B, g, trans_b, true) : matmul(g, B, false, !trans_b);
        if (need[1]) {
          if (shared_b && A.rank() > 2) {
            const std::int64_t kdim = A.dim(-1);
            Tensor a2 = reshape(A, {-1, kdim});
            Tensor g2 = reshape(g, {-1, g.dim(-1)});
            res[1] = trans_b ? matmul(g2, a2, true, false) : matmul(a2, g2, true, false);
          } else {
            res[1] = trans_b ? matmul(g, A, true, trans_a) : matmul(A, g, !trans_a, false);
          }
        }
      });
}

Tensor softmax(const Tensor& a) {
  const std::int64_t L = a.dim(-1);
  std::vector<double> v(a.values().begin(), a.values().end());
  for (std::int64_t r = 0; r < a.size() / std::max<std::int64_t>(L, 1); ++r) {
    double* row = v.data() + r * L;
    double mx = *std::max_element(row, row + L);
    double s = 0.0;
    for (std::int64_t i = 0; i < L; ++i) {
      row[i] = std::exp(row[i] - mx);
      s += row[i];
    }
    for (std::int64_t i = 0; i < L; ++i) row[i] /= s;
  }
  return make_result(a.shape(), std::move(v), {a},
                     [](const Tensor& self, const Tensor& g, std::span<const bool>, std::vector<Tensor>& out) {
                       Tensor dot = sum(mul(g, self), -1, true);
                       out[0] = mul(self, sub(g, dot));
                     });
}

// ---------------------------------------------------------------------------
// Indexing

Tensor gather(const Tensor& a, int dim, std::span<const std::int64_t> index) {
  const int d = norm_dim(dim, a.rank());
  const Split3 sp = split_at(a.shape(), d);
  const auto len = static_cast<std::int64_t>(index.size());
  for (auto i : index) {
    if (i >= sp.extent) throw std::out_of_range("gather index out of range");
  }
  std::vector<double> v(static_cast<std::size_t>(sp.outer * len * sp.inner), 0.0);
  const double* src = a.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t j = 0; j < len; ++j) {
      if (index[j] < 0) continue;
      std::copy_n(src + (o * sp.extent + index[j]) * sp.inner, sp.inner, v.data() + (o * len + j) * sp.inner);
    }
  }
  Shape s = a.shape();
  s[d] = len;
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return make_result(std::move(s), std::move(v), {a},
                     [d, idx = std::move(idx), extent = sp.extent](const Tensor&, const Tensor& g,
                                                                  std::span<const bool>, std::vector<Tensor>& out) {
                       out[0] = scatter_add(g, d, idx, extent);
                     });
}

Tensor scatter_add(const Tensor& a, int dim, std::span<const std::int64_t> index, std::int64_t out_size) {
  const int d = norm_dim(dim, a.rank());
  const Split3 sp = split_at(a.shape(), d);
  if (static_cast<std::int64_t>(index.size()) != sp.extent) throw std::invalid_argument("scatter index length");
  std::vector<double> v(static_cast<std::size_t>(sp.outer * out_size * sp.inner), 0.0);
  const double* src = a.values().data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t j = 0; j < sp.extent; ++j) {
      if (index[j] < 0) continue;
      if (index[j] >= out_size) throw std::out_of_range("scatter index out of range");
      double* dst = v.data() + (o * out_size + index[j]) * sp.inner;
      const double* row = src + (o * sp.extent + j) * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  Shape s = a.shape();
  s[d] = out_size;
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return make_result(std::move(s), std::move(v), {a},
                     [d, idx = std::move(idx)](const Tensor&, const Tensor& g, std::span<const bool>,
                                               std::vector<Tensor>& out) { out[0] = gather(g, d, idx); });
}

Tensor slice(const Tensor& a, int dim, std::int64_t start, std::int64_t length) {
  const int d = norm_dim(dim, a.rank());
  if (start < 0 || length < 0 || start + length > a.shape()[d]) throw std::out_of_range("slice out of range");
  if (start == 0 && length == a.shape()[d]) return a;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(length));
  std::iota(idx.begin(), idx.end(), start);
  return gather(a, d, idx);
}

Tensor concat(std::span<const Tensor> parts, int dim) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  const int d = norm_dim(dim, parts[0].rank());
  Shape s = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (static_cast<int>(ps.size()) != static_cast<int>(s.size())) throw std::invalid_argument("concat rank mismatch");
    total += ps[d];
    ps[d] = s[d];
    if (ps != s) throw std::invalid_argument("concat shape mismatch " + to_string(p.shape()));
  }
  s[d] = total;
  const Split3 out_sp = split_at(s, d);
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  std::int64_t offset = 0;
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) {
    const Split3 sp = split_at(p.shape(), d);
    const double* src = p.values().data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * sp.extent * sp.inner, sp.extent * sp.inner,
                  v.data() + (o * out_sp.extent + offset) * sp.inner);
    }
    offset += sp.extent;
    sizes.push_back(sp.extent);
  }
  return make_result(std::move(s), std::move(v), std::vector<Tensor>(parts.begin(), parts.end()),
                     [d, sizes = std::move(sizes)](const Tensor&, const Tensor& g, std::span<const bool> need,
                                                   std::vector<Tensor>& out) {
                       std::int64_t off = 0;
                       for (std::size_t i = 0; i < sizes.size(); ++i) {
                         if (need[i]) out[i] = slice(g, d, off, sizes[i]);
                         off += sizes[i];
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, int dim) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), dim);
}

Tensor mix(const Tensor& a, int dim, std::span<const double> m, std::int64_t rows, std::int64_t cols) {
  const int d = norm_dim(dim, a.rank());
  const Split3 sp = split_at(a.shape(), d);
  if (sp.extent != cols || static_cast<std::int64_t>(m.size()) != rows * cols) {
    throw std::invalid_argument("mix matrix does not match axis of " + to_string(a.shape()));
  }
  std::vector<double> v(static_cast<std::size_t>(sp.outer * rows * sp.inner));
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    gemm(m.data(), rows, cols, false, a.values().data() + o * cols * sp.inner, cols, sp.inner, false,
         v.data() + o * rows * sp.inner);
  }
  Shape s = a.shape();
  s[d] = rows;
  std::vector<double> mt(m.size());
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) mt[j * rows + i] = m[i * cols + j];
  }
  return make_result(std::move(s), std::move(v), {a},
                     [d, rows, cols, mt = std::move(mt)](const Tensor&, const Tensor& g, std::span<const bool>,
                                                         std::vector<Tensor>& out) {
                       out[0] = mix(g, d, mt, cols, rows);
                     });
}

}  // namespace mogen::ag
