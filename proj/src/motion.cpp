#include "mogen/motion.hpp"

#include "mogen/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mogen {

std::int64_t channels_per_node(PoseRepresentation rep) {
  switch (rep) {
    case PoseRepresentation::JointCoordinates:
    case PoseRepresentation::NormalizedLimbVectors:
      return 3;
    case PoseRepresentation::Rotation6d:
      return 6;
  }
  throw DataError("unknown pose representation");
}

std::string_view representation_name(PoseRepresentation rep) {
  switch (rep) {
    case PoseRepresentation::JointCoordinates:
      return "joint_coordinates";
    case PoseRepresentation::NormalizedLimbVectors:
      return "normalized_limb_vectors";
    case PoseRepresentation::Rotation6d:
      return "rotation_6d";
  }
  return "unknown";
}

PoseRepresentation parse_representation(std::string_view name) {
  for (auto rep : {PoseRepresentation::JointCoordinates, PoseRepresentation::NormalizedLimbVectors,
                   PoseRepresentation::Rotation6d}) {
    if (representation_name(rep) == name) return rep;
  }
  throw ConfigError("unknown pose representation '" + std::string(name) + "'");
}

MotionSequence MotionSequence::zeros(std::int64_t persons, std::int64_t frames, std::int64_t joints,
                                     PoseRepresentation rep) {
  MotionSequence s;
  s.persons = persons;
  s.frames = frames;
  s.joints = joints;
  s.representation = rep;
  s.root.assign(static_cast<std::size_t>(persons * frames * 3), 0.0);
  s.pose.assign(static_cast<std::size_t>(persons * frames * joints * channels_per_node(rep)), 0.0);
  return s;
}

void MotionSequence::validate() const {
  if (persons < 1 || frames < 1 || joints < 1) throw DataError("motion sequence with empty dimension");
  if (static_cast<std::int64_t>(root.size()) != persons * frames * 3 ||
      static_cast<std::int64_t>(pose.size()) != persons * frames * joints * width()) {
    throw DataError("motion sequence buffers do not match its dimensions");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(root.begin(), root.end(), finite) || !std::all_of(pose.begin(), pose.end(), finite)) {
    throw DataError("motion sequence contains non-finite values");
  }
  if (representation == PoseRepresentation::NormalizedLimbVectors) {
    for (std::size_t i = 0; i < pose.size(); i += 3) {
      const double n = std::sqrt(pose[i] * pose[i] + pose[i + 1] * pose[i + 1] + pose[i + 2] * pose[i + 2]);
      if (std::abs(n - 1.0) > 1e-5) throw DataError("limb vector is not unit length");
    }
  }
}

std::vector<double> flatten(const MotionSequence& seq) {
  const std::int64_t c = seq.channels();
  const std::int64_t pose_w = seq.joints * seq.width();
  std::vector<double> out(static_cast<std::size_t>(seq.persons * seq.frames * c));
  for (std::int64_t pt = 0; pt < seq.persons * seq.frames; ++pt) {
    std::copy_n(seq.root.begin() + pt * 3, 3, out.begin() + pt * c);
    std::copy_n(seq.pose.begin() + pt * pose_w, pose_w, out.begin() + pt * c + 3);
  }
  return out;
}

MotionSequence unflatten(std::span<const double> values, std::int64_t persons, std::int64_t frames,
                         std::int64_t joints, PoseRepresentation rep) {
  MotionSequence seq = MotionSequence::zeros(persons, frames, joints, rep);
  const std::int64_t c = seq.channels();
  if (static_cast<std::int64_t>(values.size()) != persons * frames * c) {
    throw DataError("flattened motion has " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(persons * frames * c));
  }
  const std::int64_t pose_w = joints * seq.width();
  for (std::int64_t pt = 0; pt < persons * frames; ++pt) {
    std::copy_n(values.begin() + pt * c, 3, seq.root.begin() + pt * 3);
    std::copy_n(values.begin() + pt * c + 3, pose_w, seq.pose.begin() + pt * pose_w);
  }
  return seq;
}

MotionSequence to_limb_vectors(const MotionSequence& seq, const SkeletonTopology& topo) {
  if (seq.representation != PoseRepresentation::JointCoordinates) {
    throw DataError("to_limb_vectors expects joint coordinates");
  }
  if (seq.joints != topo.joint_count) throw DataError("sequence does not match topology " + topo.name);
  const auto parent = topo.parents();
  MotionSequence out = seq;
  out.representation = PoseRepresentation::NormalizedLimbVectors;
  for (std::int64_t p = 0; p < seq.persons; ++p) {
    for (std::int64_t t = 0; t < seq.frames; ++t) {
      for (std::int64_t j = 0; j < seq.joints; ++j) {
        const int par = parent[j + 1];  // graph node of the parent; 0 is the root at the origin
        double v[3];
        for (int k = 0; k < 3; ++k) {
          const double from = par == 0 ? 0.0 : seq.pose_at(p, t, par - 1, k);
          v[k] = seq.pose_at(p, t, j, k) - from;
        }
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n < 1e-9) throw DataError("zero-length limb at slot " + std::to_string(j));
        for (int k = 0; k < 3; ++k) out.pose_at(p, t, j, k) = v[k] / n;
      }
    }
  }
  return out;
}

MotionSequence from_limb_vectors(const MotionSequence& seq, const SkeletonTopology& topo,
                                 std::span<const double> bone_lengths) {
  if (seq.representation != PoseRepresentation::NormalizedLimbVectors) {
    throw DataError("from_limb_vectors expects limb vectors");
  }
  if (static_cast<std::int64_t>(bone_lengths.size()) != seq.joints) throw DataError("bone length count");
  const auto parent = topo.parents();
  // Visit nodes parents-first.
  std::vector<int> order;
  std::vector<int> depth(parent.size(), 0);
  for (std::size_t n = 1; n < parent.size(); ++n) {
    for (int a = parent[n]; a > 0; a = parent[a]) ++depth[n];
    order.push_back(static_cast<int>(n));
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return depth[a] < depth[b]; });

  MotionSequence out = seq;
  out.representation = PoseRepresentation::JointCoordinates;
  for (std::int64_t p = 0; p < seq.persons; ++p) {
    for (std::int64_t t = 0; t < seq.frames; ++t) {
      for (int node : order) {
        const int par = parent[node];
        for (int k = 0; k < 3; ++k) {
          const double from = par == 0 ? 0.0 : out.pose_at(p, t, par - 1, k);
          out.pose_at(p, t, node - 1, k) = from + bone_lengths[node - 1] * seq.pose_at(p, t, node - 1, k);
        }
      }
    }
  }
  return out;
}

void normalize_limbs(MotionSequence& seq) {
  for (std::size_t i = 0; i + 2 < seq.pose.size(); i += 3) {
    double n = std::sqrt(seq.pose[i] * seq.pose[i] + seq.pose[i + 1] * seq.pose[i + 1] +
                         seq.pose[i + 2] * seq.pose[i + 2]);
    if (n < 1e-12) {
      seq.pose[i] = 0.0;
      seq.pose[i + 1] = 1.0;
      seq.pose[i + 2] = 0.0;
      continue;
    }
    for (int k = 0; k < 3; ++k) seq.pose[i + k] /= n;
  }
}

MotionSequence permute_persons(const MotionSequence& seq, std::span<const int> perm) {
  if (static_cast<std::int64_t>(perm.size()) != seq.persons) throw DataError("permutation size mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= seq.persons || seen[p]) throw DataError("not a permutation");
    seen[p] = true;
  }
  MotionSequence out = seq;
  const std::int64_t rw = seq.frames * 3;
  const std::int64_t pw = seq.frames * seq.joints * seq.width();
  for (std::int64_t p = 0; p < seq.persons; ++p) {
    std::copy_n(seq.root.begin() + perm[p] * rw, rw, out.root.begin() + p * rw);
    std::copy_n(seq.pose.begin() + perm[p] * pw, pw, out.pose.begin() + p * pw);
  }
  return out;
}

std::vector<int> random_permutation(std::int64_t n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  // Fisher-Yates with explicit draws so the order is library independent.
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

std::vector<int> inverse_permutation(std::span<const int> perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  return inv;
}

MotionSequence crop_or_pad(const MotionSequence& seq, std::int64_t frames) {
  if (frames < 1) throw DataError("target length must be positive");
  MotionSequence out = MotionSequence::zeros(seq.persons, frames, seq.joints, seq.representation);
  const std::int64_t pw = seq.joints * seq.width();
  for (std::int64_t p = 0; p < seq.persons; ++p) {
    for (std::int64_t t = 0; t < frames; ++t) {
      const std::int64_t src = std::min(t, seq.frames - 1);
      std::copy_n(seq.root.begin() + (p * seq.frames + src) * 3, 3, out.root.begin() + (p * frames + t) * 3);
      std::copy_n(seq.pose.begin() + (p * seq.frames + src) * pw, pw, out.pose.begin() + (p * frames + t) * pw);
    }
  }
  return out;
}

MotionSequence remap_joints(const MotionSequence& seq, std::span<const int> source_slots) {
  const auto target = static_cast<std::int64_t>(source_slots.size());
  MotionSequence out = MotionSequence::zeros(seq.persons, seq.frames, target, seq.representation);
  out.root = seq.root;
  const std::int64_t d = seq.width();
  for (std::int64_t p = 0; p < seq.persons; ++p) {
    for (std::int64_t t = 0; t < seq.frames; ++t) {
      for (std::int64_t j = 0; j < target; ++j) {
        const int s = source_slots[j];
        if (s < 0 || s >= seq.joints) throw DataError("joint map refers to a missing slot");
        for (std::int64_t k = 0; k < d; ++k) out.pose_at(p, t, j, k) = seq.pose_at(p, t, s, k);
      }
    }
  }
  return out;
}

MotionSequence select_person(const MotionSequence& seq, std::int64_t person) {
  if (person < 0 || person >= seq.persons) throw DataError("person index out of range");
  MotionSequence out = MotionSequence::zeros(1, seq.frames, seq.joints, seq.representation);
  const std::int64_t rw = seq.frames * 3;
  const std::int64_t pw = seq.frames * seq.joints * seq.width();
  std::copy_n(seq.root.begin() + person * rw, rw, out.root.begin());
  std::copy_n(seq.pose.begin() + person * pw, pw, out.pose.begin());
  return out;
}

std::vector<std::int64_t> LabeledDataset::class_counts() const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(class_count), 0);
  for (int l : labels) ++counts[l];
  return counts;
}

std::vector<std::vector<std::size_t>> LabeledDataset::class_index() const {
  std::vector<std::vector<std::size_t>> idx(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < labels.size(); ++i) idx[labels[i]].push_back(i);
  return idx;
}

void LabeledDataset::validate() const {
  if (sequences.size() != labels.size()) throw DataError("dataset: label count differs from sample count");
  if (class_count < 1) throw DataError("dataset: class count must be positive");
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (labels[i] < 0 || labels[i] >= class_count) throw DataError("dataset: action id out of range");
    if (s.joints != topology.joint_count) throw DataError("dataset: sample does not match the topology");
    const auto& f = sequences.front();
    if (s.frames != f.frames || s.persons != f.persons || s.representation != f.representation) {
      throw DataError("dataset: samples disagree on frames, persons or representation");
    }
    s.validate();
  }
}

bool LabeledDataset::operator==(const LabeledDataset& other) const {
  return sequences == other.sequences && labels == other.labels && class_count == other.class_count &&
         topology.joint_count == other.topology.joint_count;
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& data, double val_fraction,
                                                        std::uint64_t seed) {
  LabeledDataset train, val;
  for (auto* d : {&train, &val}) {
    d->class_count = data.class_count;
    d->topology = data.topology;
    d->class_names = data.class_names;
  }
  Rng rng(seed);
  for (const auto& members : data.class_index()) {
    auto perm = random_permutation(static_cast<std::int64_t>(members.size()), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < members.size(); ++k) {
      const std::size_t i = members[perm[k]];
      auto& dst = k < n_val ? val : train;
      dst.sequences.push_back(data.sequences[i]);
      dst.labels.push_back(data.labels[i]);
    }
  }
  return {std::move(train), std::move(val)};
}

SquareRootClassSampler::SquareRootClassSampler(std::span<const std::int64_t> class_counts) {
  if (class_counts.empty()) throw DataError("square-root sampler needs at least one class");
  double total = 0.0;
  for (auto n : class_counts) {
    if (n < 1) throw DataError("square-root sampler: every class needs at least one sample");
    total += std::sqrt(static_cast<double>(n));
  }
  double acc = 0.0;
  for (auto n : class_counts) {
    probs_.push_back(std::sqrt(static_cast<double>(n)) / total);
    acc += probs_.back();
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

int SquareRootClassSampler::operator()(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cumulative_.begin(), cumulative_.size() - 1));
}

}  // namespace mogen
