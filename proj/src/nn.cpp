#include "mogen/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mogen::nn {

ParameterSet::ParameterSet(const ParameterSet& other) : names_(other.names_) {
  tensors_.reserve(other.tensors_.size());
  for (const auto& t : other.tensors_) tensors_.push_back(t.clone());
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    ParameterSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

std::size_t ParameterSet::add(std::string name, ag::Tensor value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
  value.set_requires_grad(true);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

const ag::Tensor& ParameterSet::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw std::out_of_range("no parameter named " + std::string(name));
  return tensors_[*i];
}

std::int64_t ParameterSet::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors_) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::uint64_t ParameterSet::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    mix_bytes(names_[i].data(), names_[i].size());
    for (auto d : tensors_[i].shape()) mix_bytes(&d, sizeof d);
    mix_bytes(tensors_[i].values().data(), tensors_[i].values().size_bytes());
  }
  return h;
}

bool ParameterSet::equals(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto a = tensors_[i].values();
    const auto b = other.tensors_[i].values();
    if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
    if (std::memcmp(a.data(), b.data(), a.size_bytes()) != 0) return false;
  }
  return true;
}

ag::Tensor normal_tensor(ag::Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(ag::numel(shape)));
  for (auto& x : v) x = dist(rng);
  return ag::Tensor::from(std::move(shape), std::move(v));
}

ag::Tensor uniform_tensor(ag::Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(static_cast<std::size_t>(ag::numel(shape)));
  for (auto& x : v) x = dist(rng);
  return ag::Tensor::from(std::move(shape), std::move(v));
}

Linear Linear::create(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = ps.add(name + ".weight", uniform_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  l.bias = ps.add(name + ".bias", ag::Tensor::zeros({out}));
  return l;
}

ag::Tensor Linear::operator()(const ParameterSet& ps, const ag::Tensor& x) const {
  return ag::add(ag::matmul(x, ps[weight]), ps[bias]);
}

LayerNorm LayerNorm::create(ParameterSet& ps, const std::string& name, std::int64_t width) {
  LayerNorm n;
  n.gain = ps.add(name + ".gain", ag::Tensor::full({width}, 1.0));
  n.bias = ps.add(name + ".bias", ag::Tensor::zeros({width}));
  return n;
}

ag::Tensor LayerNorm::operator()(const ParameterSet& ps, const ag::Tensor& x) const {
  ag::Tensor centered = ag::sub(x, ag::mean(x, -1, true));
  ag::Tensor var = ag::mean(ag::square(centered), -1, true);
  ag::Tensor inv = ag::div(ag::Tensor::scalar(1.0), ag::sqrt(ag::add_scalar(var, eps)));
  return ag::add(ag::mul(ag::mul(centered, inv), ps[gain]), ps[bias]);
}

MultiHeadAttention MultiHeadAttention::create(ParameterSet& ps, const std::string& name, std::int64_t width,
                                              std::int64_t heads, Rng& rng) {
  if (heads < 1 || width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
  MultiHeadAttention a;
  a.heads = heads;
  a.qkv = Linear::create(ps, name + ".qkv", width, 3 * width, rng);
  a.proj = Linear::create(ps, name + ".proj", width, width, rng);
  return a;
}

ag::Tensor MultiHeadAttention::operator()(const ParameterSet& ps, const ag::Tensor& x) const {
  const std::int64_t n = x.dim(0), len = x.dim(1), width = x.dim(2);
  const std::int64_t head_dim = width / heads;
  // [N, L, 3, H, dh] -> [3, N, H, L, dh]
  ag::Tensor qkv_all = ag::reshape(qkv(ps, x), {n, len, 3, heads, head_dim});
  qkv_all = ag::permute(qkv_all, {2, 0, 3, 1, 4});
  auto part = [&](std::int64_t i) { return ag::reshape(ag::slice(qkv_all, 0, i, 1), {n * heads, len, head_dim}); };
  ag::Tensor q = part(0), k = part(1), v = part(2);
  ag::Tensor logits = ag::scale(ag::matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(head_dim)));
  ag::Tensor mixed = ag::matmul(ag::softmax(logits), v);  // [N*H, L, dh]
  mixed = ag::permute(ag::reshape(mixed, {n, heads, len, head_dim}), {0, 2, 1, 3});
  return proj(ps, ag::reshape(mixed, {n, len, width}));
}

EncoderBlock EncoderBlock::create(ParameterSet& ps, const std::string& name, std::int64_t width, std::int64_t heads,
                                  std::int64_t mlp_ratio, Rng& rng) {
  EncoderBlock b;
  b.norm1 = LayerNorm::create(ps, name + ".norm1", width);
  b.attn = MultiHeadAttention::create(ps, name + ".attn", width, heads, rng);
  b.norm2 = LayerNorm::create(ps, name + ".norm2", width);
  b.fc1 = Linear::create(ps, name + ".fc1", width, mlp_ratio * width, rng);
  b.fc2 = Linear::create(ps, name + ".fc2", mlp_ratio * width, width, rng);
  return b;
}

ag::Tensor EncoderBlock::operator()(const ParameterSet& ps, const ag::Tensor& x) const {
  ag::Tensor h = ag::add(x, attn(ps, norm1(ps, x)));
  return ag::add(h, fc2(ps, ag::gelu(fc1(ps, norm2(ps, h)))));
}

Adam::Adam(AdamConfig cfg, const ParameterSet& params) : cfg_(cfg) {
  for (const auto& t : params.tensors()) {
    m_.emplace_back(t.values().size(), 0.0);
    v_.emplace_back(t.values().size(), 0.0);
  }
}

void Adam::step(ParameterSet& params, std::span<const ag::Tensor> grads) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw std::invalid_argument("Adam: gradient count does not match parameters");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_values();
    auto g = grads[i].values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      w[j] -= cfg_.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

Sgd::Sgd(SgdConfig cfg, const ParameterSet& params) : cfg_(cfg) {
  for (const auto& t : params.tensors()) velocity_.emplace_back(t.values().size(), 0.0);
}

void Sgd::step(ParameterSet& params, std::span<const ag::Tensor> grads) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_values();
    auto g = grads[i].values();
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = g[j] + cfg_.weight_decay * w[j];
      vel[j] = cfg_.momentum * vel[j] + d;
      w[j] -= cfg_.learning_rate * vel[j];
    }
  }
}

void clip_weights(ParameterSet& params, double bound) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto& w : params[i].mutable_values()) w = std::clamp(w, -bound, bound);
  }
}

}  // namespace mogen::nn
