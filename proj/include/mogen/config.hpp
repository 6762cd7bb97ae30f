#pragma once

#include "mogen/discriminator.hpp"
#include "mogen/evaluation.hpp"
#include "mogen/generator.hpp"
#include "mogen/gp_prior.hpp"
#include "mogen/synth.hpp"
#include "mogen/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mogen {

/// Everything a run needs, read from a sectioned key/value file:
///
///   [run]           seed, output_dir, run_id
///   [data]          classes, per_class, frames, joints, persons, representation,
///                   pose_noise, seed, val_fraction
///   [prior]         kind, length_scale_min, length_scale_max, jitter
///   [generator]     latent_channels, width, heads, layer_pairs, mlp_ratio, fixed_pe, shared_latent
///   [discriminator] width_scale
///   [train]         learning_rate, adam_beta1, adam_beta2, batch_size, d_steps_per_g, epochs,
///                   max_iterations, gradient_penalty_weight, clip_value, permute_persons,
///                   checkpoint_every
///   [recognizer]    width_scale, feature_width, epochs, batch_size, learning_rate, momentum,
///                   weight_decay, permute_persons
///   [eval]          per_class, seed, batch_size
///
/// Model shapes that follow from the data (A, P, T, J, D) are taken from the
/// dataset at run time and checked against [data].
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
  std::string run_id = "run";

  SynthSpec data;
  std::uint64_t data_seed = 0;
  double val_fraction = 0.2;

  LatentPrior prior = LatentPrior::GaussianProcess;
  GPConfig gp;
  GeneratorConfig generator;
  double disc_width_scale = 0.5;
  TrainConfig train;
  std::int64_t checkpoint_every = 0;  // iterations; 0 keeps only the final state

  double recognizer_width_scale = 0.5;
  std::int64_t recognizer_feature_width = 512;
  RecognizerConfig recognizer;  // optimiser fields only; shapes come from the data

  EvalProtocol eval;

  /// Desk-scale defaults: T = 16, J = 5, small models.
  static RunConfig defaults();

  /// Canonical text; parse(text()) reproduces the config.
  std::string text() const;
  /// SHA-256 of text().
  std::string hash() const;

  /// Applies "section.key=value" overrides.
  void set(const std::string& assignment);

  GeneratorConfig generator_for(const LabeledDataset& data) const;
  DiscriminatorConfig discriminator_for(const LabeledDataset& data) const;
  RecognizerConfig recognizer_for(const LabeledDataset& data) const;
  TrainConfig train_config() const;
  /// Throws ConfigError when the dataset disagrees with [data].
  void check_dataset(const LabeledDataset& data) const;
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace mogen
