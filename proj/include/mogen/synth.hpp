#pragma once

#include "mogen/motion.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mogen {

/// Description of a procedurally generated labelled motion set.
///
/// With persons == 1 every class must be a single-person class; with
/// persons >= 2 every class must be an interaction class.
struct SynthSpec {
  std::vector<std::string> classes;
  std::int64_t per_class = 50;
  std::int64_t frames = 16;
  std::int64_t joints = 5;  // 5 -> star5, 24 -> ntu25
  std::int64_t persons = 1;
  PoseRepresentation representation = PoseRepresentation::JointCoordinates;
  double fps = 30.0;
  double pose_noise = 0.01;  // metres, white noise on joint positions

  /// Fill `classes` with the first `count` built-in names for the person mode.
  static SynthSpec with_class_count(std::int64_t count, std::int64_t persons);
  void validate() const;
};

const std::vector<std::string>& single_person_classes();
const std::vector<std::string>& interaction_classes();

/// Deterministic given the rng state. Values are rounded to f32 so the result
/// survives an MSEQ1 round trip bit for bit.
LabeledDataset synth_dataset(const SynthSpec& spec, Rng& rng);

/// One noise-free sample with fixed jitter parameters (amplitude 1, phase 0,
/// root at the origin); used by tests to reason about the parametric motions.
MotionSequence synth_reference(const std::string& cls, std::int64_t frames, std::int64_t joints,
                               std::int64_t persons, double fps = 30.0);

}  // namespace mogen
