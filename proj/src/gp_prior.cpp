#include "mogen/gp_prior.hpp"

#include "mogen/errors.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace mogen {

void GPConfig::validate() const {
  if (channels < 1) throw ConfigError("gp: channels must be >= 1");
  if (length < 1) throw ConfigError("gp: length must be >= 1");
  if (!(length_scale_min > 0.0) || !(length_scale_min <= length_scale_max)) {
    throw ConfigError("gp: need 0 < length_scale_min <= length_scale_max");
  }
  if (!(jitter > 0.0)) throw ConfigError("gp: jitter must be positive");
}

std::vector<double> channel_length_scales(const GPConfig& cfg) {
  cfg.validate();
  std::vector<double> scales(static_cast<std::size_t>(cfg.channels));
  if (cfg.channels == 1) {
    scales[0] = cfg.length_scale_min;
    return scales;
  }
  const double lo = std::log(cfg.length_scale_min);
  const double hi = std::log(cfg.length_scale_max);
  const double last = static_cast<double>(cfg.channels - 1);
  for (std::int64_t c = 0; c < cfg.channels; ++c) {
    scales[c] = std::exp(lo + (hi - lo) * static_cast<double>(c) / last);
  }
  scales.front() = cfg.length_scale_min;
  scales.back() = cfg.length_scale_max;
  return scales;
}

Eigen::MatrixXd kernel_matrix(std::int64_t frames, double length_scale) {
  Eigen::MatrixXd k(frames, frames);
  const double denom = 2.0 * length_scale * length_scale;
  for (std::int64_t i = 0; i < frames; ++i) {
    for (std::int64_t j = 0; j < frames; ++j) {
      const double lag = static_cast<double>(i - j);
      k(i, j) = std::exp(-lag * lag / denom);
    }
  }
  return k;
}

GaussianProcessPrior::GaussianProcessPrior(GPConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto scales = channel_length_scales(cfg_);
  const auto eye = Eigen::MatrixXd::Identity(cfg_.length, cfg_.length);
  for (double l : scales) {
    const Eigen::MatrixXd k = kernel_matrix(cfg_.length, l);
    double jitter = cfg_.jitter;
    bool ok = false;
    for (int attempt = 0; attempt <= 3 && !ok; ++attempt, jitter *= 2.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(k + jitter * eye);
      if (llt.info() == Eigen::Success) {
        factors_.push_back(llt.matrixL());
        jitter_.push_back(jitter);
        ok = true;
      }
    }
    if (!ok) {
      throw NumericalError("gp: kernel with length-scale " + std::to_string(l) +
                           " is not positive definite after jitter escalation");
    }
  }
}

LatentSequence GaussianProcessPrior::sample(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentSequence z;
  z.values.resize(cfg_.length, cfg_.channels);
  Eigen::VectorXd eps(cfg_.length);
  for (std::int64_t c = 0; c < cfg_.channels; ++c) {
    for (std::int64_t t = 0; t < cfg_.length; ++t) eps[t] = normal(rng);
    z.values.col(c).noalias() = factors_[c].triangularView<Eigen::Lower>() * eps;
  }
  return z;
}

LatentSequence sample_latent(const GPConfig& cfg, Rng& rng) { return GaussianProcessPrior(cfg).sample(rng); }

LatentSequence sample_iid_latent(std::int64_t frames, std::int64_t channels, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentSequence z;
  z.values.resize(frames, channels);
  for (std::int64_t t = 0; t < frames; ++t) {
    for (std::int64_t c = 0; c < channels; ++c) z.values(t, c) = normal(rng);
  }
  return z;
}

}  // namespace mogen
