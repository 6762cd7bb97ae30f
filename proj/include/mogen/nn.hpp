#pragma once

#include "mogen/autograd.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mogen {

using Rng = std::mt19937_64;

namespace nn {

/// Ordered, named collection of trainable leaf tensors. Copies are deep, so a
/// copied model never aliases the parameters of the original.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  std::size_t add(std::string name, ag::Tensor value);

  const ag::Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  ag::Tensor& operator[](std::size_t i) { return tensors_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  const ag::Tensor& at(std::string_view name) const;

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::span<const ag::Tensor> tensors() const { return tensors_; }

  std::int64_t scalar_count() const;
  bool all_finite() const;
  /// FNV-1a over names, shapes and value bits; used to prove a set was untouched.
  std::uint64_t fingerprint() const;
  bool equals(const ParameterSet& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<ag::Tensor> tensors_;
};

ag::Tensor normal_tensor(ag::Shape shape, double stddev, Rng& rng);
ag::Tensor uniform_tensor(ag::Shape shape, double bound, Rng& rng);

/// Affine map x @ W + b with W stored as [in, out].
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::int64_t in = 0;
  std::int64_t out = 0;

  static Linear create(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng);
  ag::Tensor operator()(const ParameterSet& ps, const ag::Tensor& x) const;
};

struct LayerNorm {
  std::size_t gain = 0;
  std::size_t bias = 0;
  double eps = 1e-5;

  static LayerNorm create(ParameterSet& ps, const std::string& name, std::int64_t width);
  ag::Tensor operator()(const ParameterSet& ps, const ag::Tensor& x) const;
};

/// Multi-head self-attention over the second-to-last axis of [N, L, d].
struct MultiHeadAttention {
  Linear qkv;
  Linear proj;
  std::int64_t heads = 1;

  static MultiHeadAttention create(ParameterSet& ps, const std::string& name, std::int64_t width,
                                   std::int64_t heads, Rng& rng);
  ag::Tensor operator()(const ParameterSet& ps, const ag::Tensor& x) const;
};

/// Pre-norm encoder block: x + Attn(LN(x)), then x + MLP(LN(x)) with GELU.
struct EncoderBlock {
  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  Linear fc1;
  Linear fc2;

  static EncoderBlock create(ParameterSet& ps, const std::string& name, std::int64_t width, std::int64_t heads,
                             std::int64_t mlp_ratio, Rng& rng);
  ag::Tensor operator()(const ParameterSet& ps, const ag::Tensor& x) const;
};

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig cfg, const ParameterSet& params);

  void step(ParameterSet& params, std::span<const ag::Tensor> grads);
  std::int64_t steps() const { return steps_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::int64_t s) { steps_ = s; }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t steps_ = 0;
};

struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

class Sgd {
 public:
  Sgd(SgdConfig cfg, const ParameterSet& params);
  void step(ParameterSet& params, std::span<const ag::Tensor> grads);
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  double learning_rate() const { return cfg_.learning_rate; }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<double>> velocity_;
};

void clip_weights(ParameterSet& params, double bound);

}  // namespace nn
}  // namespace mogen
