#pragma once

#include "mogen/nn.hpp"
#include "mogen/skeleton.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mogen {

enum class PoseRepresentation : std::uint32_t {
  JointCoordinates = 0,
  NormalizedLimbVectors = 1,
  Rotation6d = 2,
};

std::int64_t channels_per_node(PoseRepresentation rep);
std::string_view representation_name(PoseRepresentation rep);
PoseRepresentation parse_representation(std::string_view name);

/// P persons x T frames of (root translation, J local pose slots of width D).
///
/// Joint-coordinate slots are positions relative to the root translation;
/// limb-vector slots hold the unit vector from the parent joint.
struct MotionSequence {
  std::int64_t persons = 0;
  std::int64_t frames = 0;
  std::int64_t joints = 0;
  PoseRepresentation representation = PoseRepresentation::JointCoordinates;
  std::vector<double> root;  // [P, T, 3]
  std::vector<double> pose;  // [P, T, J, D]

  static MotionSequence zeros(std::int64_t persons, std::int64_t frames, std::int64_t joints,
                              PoseRepresentation rep);

  std::int64_t width() const { return channels_per_node(representation); }
  /// Per person-frame channels: 3 + J * D.
  std::int64_t channels() const { return 3 + joints * width(); }

  double& root_at(std::int64_t p, std::int64_t t, std::int64_t k) { return root[(p * frames + t) * 3 + k]; }
  double root_at(std::int64_t p, std::int64_t t, std::int64_t k) const { return root[(p * frames + t) * 3 + k]; }
  double& pose_at(std::int64_t p, std::int64_t t, std::int64_t j, std::int64_t d) {
    return pose[((p * frames + t) * joints + j) * width() + d];
  }
  double pose_at(std::int64_t p, std::int64_t t, std::int64_t j, std::int64_t d) const {
    return pose[((p * frames + t) * joints + j) * width() + d];
  }

  /// Throws DataError on non-finite values, size mismatches, or limb vectors
  /// whose norm deviates from 1 by more than 1e-5.
  void validate() const;
  bool operator==(const MotionSequence&) const = default;
};

/// Row-major [P, T, C] with per person-frame layout [root(3), slot_0(D), ...].
std::vector<double> flatten(const MotionSequence& seq);
MotionSequence unflatten(std::span<const double> values, std::int64_t persons, std::int64_t frames,
                         std::int64_t joints, PoseRepresentation rep);

MotionSequence to_limb_vectors(const MotionSequence& seq, const SkeletonTopology& topo);
/// Inverse of to_limb_vectors given per-slot bone lengths.
MotionSequence from_limb_vectors(const MotionSequence& seq, const SkeletonTopology& topo,
                                 std::span<const double> bone_lengths);
/// Normalise every limb slot to unit length in place (used on generator output).
void normalize_limbs(MotionSequence& seq);

/// Output person p is input person perm[p].
MotionSequence permute_persons(const MotionSequence& seq, std::span<const int> perm);
std::vector<int> random_permutation(std::int64_t n, Rng& rng);
std::vector<int> inverse_permutation(std::span<const int> perm);

/// Fixed-length policy: crop from the start, or pad by holding the last frame.
MotionSequence crop_or_pad(const MotionSequence& seq, std::int64_t frames);

/// Target slot i takes source slot source_slots[i]; remaps between skeletons.
MotionSequence remap_joints(const MotionSequence& seq, std::span<const int> source_slots);

/// One person extracted as a single-person sequence.
MotionSequence select_person(const MotionSequence& seq, std::int64_t person);

struct LabeledDataset {
  std::vector<MotionSequence> sequences;
  std::vector<int> labels;
  int class_count = 0;
  SkeletonTopology topology;
  std::vector<std::string> class_names;  // optional

  std::size_t size() const { return sequences.size(); }
  std::vector<std::int64_t> class_counts() const;
  /// Indices of the samples of each class.
  std::vector<std::vector<std::size_t>> class_index() const;
  void validate() const;
  bool operator==(const LabeledDataset& other) const;
};

/// Deterministic per-class split: the first `val_fraction` of each class
/// (in a seeded shuffle) goes to validation.
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data, double val_fraction,
                                                        std::uint64_t seed);

/// Draws class c with probability sqrt(n_c) / sum_j sqrt(n_j).
class SquareRootClassSampler {
 public:
  explicit SquareRootClassSampler(std::span<const std::int64_t> class_counts);
  const std::vector<double>& probabilities() const { return probs_; }
  int operator()(Rng& rng) const;

 private:
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

}  // namespace mogen
