#pragma once

#include "mogen/motion.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mogen {

/// "MSEQ1" binary layout (little-endian):
///   magic "MSEQ1" (5 bytes)
///   u32 P, T, J, D, representation, class_count A, sample_count N
///   N x { u32 action_id, P*T*3 f32 root translations, P*T*J*D f32 poses }
/// Values are stored as f32, so a round trip is exact for f32-representable data.
std::vector<unsigned char> encode_mseq(const LabeledDataset& data);
LabeledDataset decode_mseq(const std::vector<unsigned char>& bytes);

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// A single sequence is stored as a one-sample, one-class dataset.
void save_sequence(const MotionSequence& seq, const std::filesystem::path& path);
MotionSequence load_sequence(const std::filesystem::path& path);

/// JSON mirror of the binary schema, for external viewers.
std::string dataset_to_json(const LabeledDataset& data);
LabeledDataset dataset_from_json(const std::string& text);

}  // namespace mogen
