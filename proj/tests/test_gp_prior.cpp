#include "doctest.h"

#include "mogen/errors.hpp"
#include "mogen/gp_prior.hpp"

#include <cmath>

using namespace mogen;

TEST_CASE("length scales are log-uniform with inclusive endpoints") {
  GPConfig cfg;
  cfg.channels = 1;
  cfg.length_scale_min = cfg.length_scale_max = 4.0;
  CHECK(channel_length_scales(cfg) == std::vector<double>{4.0});

  cfg.channels = 3;
  cfg.length_scale_min = 1.0;
  cfg.length_scale_max = 100.0;
  const auto three = channel_length_scales(cfg);
  CHECK(three[0] == 1.0);
  CHECK(three[1] == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(three[2] == 100.0);

  cfg.channels = 120;
  cfg.length_scale_min = 2.0;
  cfg.length_scale_max = 60.0;
  const auto many = channel_length_scales(cfg);
  const double ratio = std::pow(30.0, 1.0 / 119.0);
  for (std::size_t i = 1; i < many.size(); ++i) CHECK(many[i] / many[i - 1] == doctest::Approx(ratio).epsilon(1e-12));
}

TEST_CASE("kernel matrix entries") {
  const auto k = kernel_matrix(3, 1.0);
  CHECK(k(0, 2) == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
  CHECK(k(2, 0) == k(0, 2));
  for (int i = 0; i < 3; ++i) CHECK(k(i, i) == 1.0);
  const auto flat = kernel_matrix(2, 1e9);
  CHECK(flat(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("invalid configurations are rejected") {
  GPConfig cfg;
  cfg.length_scale_min = 5.0;
  cfg.length_scale_max = 2.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GPConfig{};
  cfg.jitter = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = GPConfig{};
  cfg.channels = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("sampling is deterministic given the seed") {
  GPConfig cfg;
  cfg.channels = 8;
  cfg.length = 16;
  Rng a(42), b(42);
  CHECK(sample_latent(cfg, a).values == sample_latent(cfg, b).values);
}

TEST_CASE("single-frame channels are standard normal draws") {
  GPConfig cfg;
  cfg.channels = 1;
  cfg.length = 1;
  GaussianProcessPrior prior(cfg);
  Rng rng(7);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = prior.sample(rng).values(0, 0);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  // Standard error of the variance estimate is sqrt(2/n) ~ 0.0045.
  CHECK(std::abs(var - (1.0 + cfg.jitter)) < 0.02);
  CHECK(std::abs(mean) < 0.02);
}

TEST_CASE("lag-one autocorrelation follows the kernel") {
  GPConfig cfg;
  cfg.channels = 1;
  cfg.length = 60;
  cfg.length_scale_min = cfg.length_scale_max = 10.0;
  GaussianProcessPrior prior(cfg);
  Rng rng(11);
  const int n = 10000;
  double num = 0, den = 0;
  for (int i = 0; i < n; ++i) {
    const auto z = prior.sample(rng).values;
    for (int t = 0; t + 1 < 60; ++t) num += z(t, 0) * z(t + 1, 0);
    for (int t = 0; t < 60; ++t) den += z(t, 0) * z(t, 0);
  }
  const double rho = (num / (59.0 * n)) / (den / (60.0 * n));
  CHECK(std::abs(rho - std::exp(-1.0 / 200.0)) < 0.02);
}

TEST_CASE("marginals, covariance and channel independence") {
  GPConfig cfg;
  cfg.channels = 4;
  cfg.length = 8;
  cfg.length_scale_min = 1.0;
  cfg.length_scale_max = 8.0;
  GaussianProcessPrior prior(cfg);
  Rng rng(3);
  const int n = 10000;
  const auto scales = channel_length_scales(cfg);
  std::vector<Eigen::MatrixXd> cov(4, Eigen::MatrixXd::Zero(8, 8));
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(8, 4);
  double cross = 0;
  for (int i = 0; i < n; ++i) {
    const auto z = prior.sample(rng).values;
    mean += z;
    for (int c = 0; c < 4; ++c) cov[c] += z.col(c) * z.col(c).transpose();
    cross += z(3, 0) * z(3, 1);
  }
  mean /= n;
  CHECK(mean.cwiseAbs().maxCoeff() < 0.05);
  for (int c = 0; c < 4; ++c) {
    const Eigen::MatrixXd emp = cov[c] / n;
    const Eigen::MatrixXd ref = kernel_matrix(8, scales[c]) + cfg.jitter * Eigen::MatrixXd::Identity(8, 8);
    CHECK((emp - ref).cwiseAbs().maxCoeff() < 0.05);
    CHECK(emp.diagonal().minCoeff() > 0.9);
    CHECK(emp.diagonal().maxCoeff() < 1.1);
  }
  CHECK(std::abs(cross / n) < 0.05);
}

TEST_CASE("iid latent has the requested shape") {
  Rng rng(1);
  const auto z = sample_iid_latent(5, 3, rng);
  CHECK(z.frames() == 5);
  CHECK(z.channels() == 3);
}
