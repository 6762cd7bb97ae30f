#pragma once

#include "mogen/autograd.hpp"
#include "mogen/generator.hpp"
#include "mogen/motion.hpp"
#include "mogen/nn.hpp"
#include "mogen/stgcn.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mogen {

class LatentSampler;

enum class PersonMode { WholeGroup, PerPerson };

/// Anything that assigns action labels to motion sequences.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<int> predict(std::span<const MotionSequence> seqs) const = 0;
};

struct RecognizerConfig {
  StgcnConfig backbone;
  std::int64_t class_count = 1;
  std::int64_t persons = 1;
  std::int64_t joints = 24;
  PoseRepresentation representation = PoseRepresentation::JointCoordinates;

  std::int64_t epochs = 20;
  std::int64_t batch_size = 16;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool permute_persons = true;
  std::uint64_t seed = 0;

  std::int64_t node_width() const { return channels_per_node(representation); }
  std::int64_t feature_width() const { return backbone.feature_width(); }
  void validate(const SkeletonTopology& topo) const;

  /// Discriminator-like backbone ending in `feature_width` channels, with
  /// batch normalisation.
  static RecognizerConfig standard(std::int64_t class_count, std::int64_t persons, const SkeletonTopology& topo,
                                   PoseRepresentation rep, double width_scale = 1.0,
                                   std::int64_t feature_width = 512);
};

/// Learning rate for `epoch` (0-based): base, then x0.1 from E/8, x0.01 from 5E/8.
double recognizer_learning_rate(const RecognizerConfig& cfg, std::int64_t epoch);

/// ST-GCN action recogniser: backbone features followed by an affine head.
class Recognizer : public Classifier {
 public:
  Recognizer() = default;
  Recognizer(RecognizerConfig cfg, SkeletonTopology topo, Rng& rng);

  const RecognizerConfig& config() const { return cfg_; }
  const SkeletonTopology& topology() const { return topo_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  /// Batch-normalisation running statistics (not trained by gradient).
  nn::ParameterSet& running() { return running_; }
  const nn::ParameterSet& running() const { return running_; }
  PersonMode mode() const { return cfg_.persons == 1 ? PersonMode::PerPerson : PersonMode::WholeGroup; }

  /// [B, P, T, C] -> [B, F] penultimate activations.
  ag::Tensor features(const ag::Tensor& motion) const;
  /// [B, P, T, C] -> [B, A].
  ag::Tensor logits(const ag::Tensor& motion) const;
  /// Training-mode logits: batch statistics, running statistics updated.
  ag::Tensor train_logits(const ag::Tensor& motion);
  std::vector<int> predict(std::span<const MotionSequence> seqs) const override;

 private:
  RecognizerConfig cfg_;
  SkeletonTopology topo_;
  nn::ParameterSet params_;
  nn::ParameterSet running_;
  StgcnBackbone backbone_;
  nn::Linear head_;
};

struct RecognizerReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_learning_rate;
  double train_accuracy = 0;
  double validation_accuracy = 0;
};

/// Mean cross-entropy of [B, A] logits against labels.
ag::Tensor cross_entropy(const ag::Tensor& logits, std::span<const int> labels);

/// SGD with momentum and the step schedule above; permutation-augmented when
/// multi-person. `validation` may be empty.
Recognizer train_recognizer(const LabeledDataset& train, const LabeledDataset& validation, const RecognizerConfig& cfg,
                            RecognizerReport* report = nullptr);

struct FeatureSet {
  Eigen::MatrixXd features;  // N x F
  std::vector<int> labels;
  PersonMode mode = PersonMode::WholeGroup;
};

/// Penultimate feature of one sequence. The recogniser must match the
/// sequence's person count (whole group) or be single-person with P == 1.
std::vector<double> extract_features(const MotionSequence& seq, const Recognizer& rec);
/// Channel-wise max over the per-person features of a single-person recogniser.
std::vector<double> aggregate_person_features(const MotionSequence& seq, const Recognizer& single);

/// Whole-group features, or per-person max-aggregated features when `mode` is
/// PerPerson. Batched, deterministic.
FeatureSet extract_feature_set(std::span<const MotionSequence> seqs, std::span<const int> labels,
                               const Recognizer& rec, PersonMode mode);

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Sample mean and unbiased covariance of the rows.
Gaussian fit_gaussian(const Eigen::MatrixXd& rows);

/// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), via the eigenvalues of
/// S1^(1/2) S2 S1^(1/2) clamped at zero.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2);
double frechet_distance(const Gaussian& a, const Gaussian& b);

double fid_whole(const FeatureSet& real, const FeatureSet& gen);
/// Unweighted mean over classes present in either set.
double fid_mean(const FeatureSet& real, const FeatureSet& gen);
/// Per-class distances, indexed by label; used by fid_mean.
std::vector<double> fid_per_class(const FeatureSet& real, const FeatureSet& gen);

double accuracy(std::span<const int> predicted, std::span<const int> intended);
double accuracy(const Classifier& clf, std::span<const MotionSequence> seqs, std::span<const int> intended);

struct EvalProtocol {
  std::int64_t per_class = 100;
  std::uint64_t seed = 0;
  std::int64_t batch_size = 64;
};

struct MetricsReport {
  std::string run_id;
  std::string config_hash;
  std::string recognizer_hash;
  std::string single_recognizer_hash;
  double acc = 0;
  double fid_m = 0;
  double fid_w = 0;
  std::optional<double> fid_a_m;
  std::optional<double> fid_a_w;
  std::int64_t real_samples = 0;
  std::int64_t generated_samples = 0;

  /// JSON with metrics keyed "Acc.", "FID_m", "FID_w", "FID^a_m", "FID^a_w".
  std::string to_json() const;
};

/// Metrics of `generated` (with intended labels) against the real set.
/// `single` enables FID^a and is required when the data is multi-person.
MetricsReport evaluate_samples(const LabeledDataset& real, std::span<const MotionSequence> generated,
                               std::span<const int> labels, const Recognizer& whole, const Recognizer* single);

/// Draws protocol.per_class samples per class from the generator.
std::pair<std::vector<MotionSequence>, std::vector<int>> generate_samples(const Generator& gen,
                                                                           const LatentSampler& latents,
                                                                           const EvalProtocol& protocol);

MetricsReport evaluate(const Generator& gen, const LatentSampler& latents, const Recognizer& whole,
                       const Recognizer* single, const LabeledDataset& real, const EvalProtocol& protocol);

}  // namespace mogen
