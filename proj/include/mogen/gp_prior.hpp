#pragma once

#include "mogen/nn.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace mogen {

struct GPConfig {
  std::int64_t channels = 120;
  std::int64_t length = 60;
  double length_scale_min = 2.0;
  double length_scale_max = 60.0;
  double jitter = 1e-6;

  void validate() const;
};

/// A T x C0 block of latent values, row t holding the latent vector at frame t.
struct LatentSequence {
  Eigen::MatrixXd values;

  std::int64_t frames() const { return values.rows(); }
  std::int64_t channels() const { return values.cols(); }
};

/// Log-uniformly spaced length-scales, min and max inclusive.
std::vector<double> channel_length_scales(const GPConfig& cfg);

/// Squared-exponential kernel exp(-(i-j)^2 / (2 l^2)) over frame indices.
Eigen::MatrixXd kernel_matrix(std::int64_t frames, double length_scale);

/// Per-channel Gaussian-process sampler. The Cholesky factors are computed
/// once at construction; sampling only draws the white noise.
class GaussianProcessPrior {
 public:
  explicit GaussianProcessPrior(GPConfig cfg);

  const GPConfig& config() const { return cfg_; }
  /// Jitter that made each channel's kernel factorizable (>= cfg.jitter).
  const std::vector<double>& effective_jitter() const { return jitter_; }
  const Eigen::MatrixXd& cholesky_factor(std::int64_t channel) const { return factors_[channel]; }

  LatentSequence sample(Rng& rng) const;

 private:
  GPConfig cfg_;
  std::vector<Eigen::MatrixXd> factors_;
  std::vector<double> jitter_;
};

LatentSequence sample_latent(const GPConfig& cfg, Rng& rng);

/// Frame-independent N(0, 1) latents, the prior used when the GP is ablated.
LatentSequence sample_iid_latent(std::int64_t frames, std::int64_t channels, Rng& rng);

}  // namespace mogen
