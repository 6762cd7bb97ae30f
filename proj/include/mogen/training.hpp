#pragma once

#include "mogen/autograd.hpp"
#include "mogen/discriminator.hpp"
#include "mogen/generator.hpp"
#include "mogen/gp_prior.hpp"
#include "mogen/motion.hpp"
#include "mogen/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mogen {

enum class LatentPrior { GaussianProcess, IidGaussian };

std::string_view prior_name(LatentPrior prior);
LatentPrior parse_prior(std::string_view name);

struct TrainConfig {
  double learning_rate = 2e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  std::int64_t batch_size = 64;
  std::int64_t d_steps_per_g = 4;
  std::int64_t epochs = 1;
  /// Generator iterations; 0 means epochs * ceil(N / batch_size).
  std::int64_t max_iterations = 0;
  double gradient_penalty_weight = 10.0;
  /// Weight clipping bound applied after each critic step; 0 disables it.
  double clip_value = 0.0;
  std::uint64_t seed = 0;
  LatentPrior prior = LatentPrior::GaussianProcess;
  bool permute_persons = true;
  double divergence_threshold = 1e6;

  void validate() const;
};

struct TrainRecord {
  std::int64_t iter = 0;
  double d_loss = 0;
  double g_loss = 0;
  double penalty = 0;
  double gap = 0;  // mean D(real) - mean D(fake)
  std::int64_t epoch = 0;
  bool operator==(const TrainRecord&) const = default;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::vector<double> epoch_seconds;

  /// CSV with header iter,d_loss,g_loss,penalty,gap,epoch (17 significant digits).
  std::string to_csv() const;
  static TrainLog from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;
};

struct CriticTerms {
  ag::Tensor loss;  // differentiable w.r.t. the critic parameters
  double fake_mean = 0;
  double real_mean = 0;
  double penalty = 0;
};

/// mean(D(x_hat) gradient norm - 1)^2 at x_hat = u real + (1 - u) fake,
/// u ~ U(0, 1) per sample. Differentiable w.r.t. the critic parameters.
ag::Tensor gradient_penalty(const Critic& critic, const ag::Tensor& real, const ag::Tensor& fake,
                            std::span<const int> labels, Rng& rng);

/// mean D(fake) - mean D(real) + lambda * penalty. `fake` is treated as a
/// constant, so no gradient reaches the generator.
CriticTerms d_loss(const Critic& critic, const ag::Tensor& real, const ag::Tensor& fake,
                   std::span<const int> labels, double lambda, Rng& rng);

/// -mean D(fake); differentiable w.r.t. whatever produced `fake`.
ag::Tensor g_loss(const Critic& critic, const ag::Tensor& fake, std::span<const int> labels);

/// Draws latent_persons sequences per sample and stacks them for the generator.
class LatentSampler {
 public:
  LatentSampler(const GeneratorConfig& gen, LatentPrior prior, GPConfig gp);
  ag::Tensor batch(std::int64_t count, Rng& rng) const;
  std::vector<LatentSequence> draw(std::int64_t count, Rng& rng) const;
  const GPConfig& gp_config() const { return gp_cfg_; }

 private:
  GeneratorConfig gen_;
  LatentPrior prior_;
  GPConfig gp_cfg_;
  GaussianProcessPrior gp_;
};

/// Draws (real batch, labels): labels by square-root sampling, each real
/// sample uniformly from its class, with a fresh person permutation per draw.
class RealBatchSampler {
 public:
  RealBatchSampler(const LabeledDataset& data, bool permute);
  std::pair<ag::Tensor, std::vector<int>> draw(std::int64_t count, Rng& rng) const;
  std::vector<int> labels(std::int64_t count, Rng& rng) const;

 private:
  const LabeledDataset* data_;
  bool permute_;
  std::vector<std::vector<std::size_t>> index_;
  SquareRootClassSampler classes_;
};

/// Alternating conditional WGAN trainer: d_steps_per_g critic minibatches,
/// then one generator minibatch, both with Adam. Reproducible from the seed.
class GanTrainer {
 public:
  GanTrainer(const LabeledDataset& data, GeneratorConfig gen, DiscriminatorConfig disc, GPConfig gp,
             TrainConfig train);

  /// Runs generator iterations until `iterations` in total have been done
  /// (or the configured budget when omitted).
  void run(std::optional<std::int64_t> iterations = std::nullopt);
  /// One generator iteration including its critic steps.
  TrainRecord step();

  std::int64_t iteration() const { return iteration_; }
  std::int64_t planned_iterations() const;
  std::int64_t iterations_per_epoch() const;

  Generator& generator() { return gen_; }
  const Generator& generator() const { return gen_; }
  Discriminator& discriminator() { return disc_; }
  const Discriminator& discriminator() const { return disc_; }
  const TrainLog& log() const { return log_; }
  const TrainConfig& train_config() const { return cfg_; }
  const LatentSampler& latents() const { return latents_; }

  /// Optimiser moments, step counters and random streams, for resuming.
  nn::Adam& generator_optimizer() { return gen_opt_; }
  nn::Adam& discriminator_optimizer() { return disc_opt_; }
  std::string random_state() const;
  void set_random_state(const std::string& state);
  void set_iteration(std::int64_t iter) { iteration_ = iter; }
  TrainLog& mutable_log() { return log_; }

  /// Called after every generator iteration (checkpointing, progress output).
  std::function<void(const GanTrainer&, const TrainRecord&)> on_iteration;

 private:
  const LabeledDataset* data_;
  TrainConfig cfg_;
  Generator gen_;
  Discriminator disc_;
  LatentSampler latents_;
  RealBatchSampler reals_;
  nn::Adam gen_opt_;
  nn::Adam disc_opt_;
  Rng data_rng_;
  Rng latent_rng_;
  Rng penalty_rng_;
  TrainLog log_;
  std::int64_t iteration_ = 0;
};

/// Checks that dataset and model configurations agree on P, T, J, D and A.
void check_consistency(const LabeledDataset& data, const GeneratorConfig& gen, const DiscriminatorConfig& disc);

}  // namespace mogen
