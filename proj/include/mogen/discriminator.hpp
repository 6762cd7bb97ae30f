#pragma once

#include "mogen/autograd.hpp"
#include "mogen/motion.hpp"
#include "mogen/nn.hpp"
#include "mogen/stgcn.hpp"

#include <cstdint>
#include <span>

namespace mogen {

/// Anything that scores a flattened motion batch [B, P, T, C] under labels,
/// returning [B] critic values. Training code only depends on this.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual ag::Tensor score(const ag::Tensor& motion, std::span<const int> labels) const = 0;
};

struct DiscriminatorConfig {
  StgcnConfig backbone;
  std::int64_t class_count = 1;
  std::int64_t persons = 1;
  std::int64_t joints = 24;
  PoseRepresentation representation = PoseRepresentation::JointCoordinates;

  std::int64_t node_width() const { return channels_per_node(representation); }
  std::int64_t feature_width() const { return backbone.feature_width(); }
  void validate(const SkeletonTopology& topo) const;

  /// Standard stage chain for the topology with input width P*D.
  static DiscriminatorConfig standard(std::int64_t class_count, std::int64_t persons, const SkeletonTopology& topo,
                                      PoseRepresentation rep, double width_scale = 1.0);
};

/// Graph-convolutional projection critic:
///   score = <w, phi> + b + <embed[a], phi>,
/// with phi the temporally averaged single-node backbone feature.
class Discriminator : public Critic {
 public:
  Discriminator() = default;
  Discriminator(DiscriminatorConfig cfg, SkeletonTopology topo, Rng& rng);

  const DiscriminatorConfig& config() const { return cfg_; }
  const SkeletonTopology& topology() const { return topo_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const StgcnBackbone& backbone() const { return backbone_; }

  /// phi for a flattened motion batch: [B, F].
  ag::Tensor features(const ag::Tensor& motion) const;
  ag::Tensor score_features(const ag::Tensor& phi, std::span<const int> labels) const;
  ag::Tensor score(const ag::Tensor& motion, std::span<const int> labels) const override;
  double score(const MotionSequence& seq, int label) const;

 private:
  DiscriminatorConfig cfg_;
  SkeletonTopology topo_;
  nn::ParameterSet params_;
  StgcnBackbone backbone_;
  nn::Linear output_;
  std::size_t class_embedding_ = 0;
};

}  // namespace mogen
