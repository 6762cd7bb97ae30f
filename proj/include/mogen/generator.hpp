#pragma once

#include "mogen/autograd.hpp"
#include "mogen/gp_prior.hpp"
#include "mogen/motion.hpp"
#include "mogen/nn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mogen {

struct GeneratorConfig {
  std::int64_t latent_channels = 120;
  std::int64_t width = 200;
  std::int64_t heads = 8;
  std::int64_t layer_pairs = 2;  // I-Former + T-Former pairs; T-Former layers only when persons == 1
  std::int64_t class_count = 1;
  std::int64_t persons = 1;
  std::int64_t frames = 60;
  std::int64_t joints = 24;
  PoseRepresentation representation = PoseRepresentation::JointCoordinates;
  std::int64_t mlp_ratio = 4;
  bool fixed_pe = false;       // sinusoidal tables instead of learned ones
  bool shared_latent = true;   // one latent sequence for the whole group

  std::int64_t output_width() const { return 3 + joints * channels_per_node(representation); }
  std::int64_t temporal_pe_width() const { return persons > 1 ? width / 2 : width; }
  std::int64_t person_pe_width() const { return persons > 1 ? width - width / 2 : 0; }
  /// Number of latent sequences drawn per sample: 1 when shared, else P.
  std::int64_t latent_persons() const { return shared_latent ? 1 : persons; }
  void validate() const;
};

/// Tokens are laid out as [B, P, T + 1, d]; index T along the third axis is
/// the class token.
class Generator {
 public:
  Generator() = default;
  Generator(GeneratorConfig cfg, Rng& rng);

  const GeneratorConfig& config() const { return cfg_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  /// PE(t, p) = concat(TPE(t), PPE(p)) as a [P, T + 1, d] tensor.
  ag::Tensor positional_encoding() const;

  /// z is [B, latent_persons, T, C0]; returns the token grid before any layer.
  ag::Tensor embed(const ag::Tensor& z, std::span<const int> labels) const;
  /// Attention across persons within each frame.
  ag::Tensor iformer(std::size_t layer, const ag::Tensor& tokens) const;
  /// Attention across the frames (and class token) of each person.
  ag::Tensor tformer(std::size_t layer, const ag::Tensor& tokens) const;
  /// Full pass: [B, P, T, C] flattened motion.
  ag::Tensor forward(const ag::Tensor& z, std::span<const int> labels) const;

  /// Stack latent sequences into [B, latent_persons, T, C0]; `z` holds
  /// latent_persons consecutive entries per sample.
  ag::Tensor latent_batch(std::span<const LatentSequence> z) const;
  /// Generator output converted to motion sequences (limb slots renormalised).
  std::vector<MotionSequence> to_motion(const ag::Tensor& out) const;
  /// `z` holds latent_persons() sequences.
  MotionSequence generate(std::span<const LatentSequence> z, int label) const;

  std::size_t layer_count() const { return tformer_.size(); }

 private:
  GeneratorConfig cfg_;
  nn::ParameterSet params_;
  nn::Linear input_;
  std::size_t class_embedding_ = 0;
  std::size_t tpe_ = 0;
  std::size_t ppe_ = 0;
  ag::Tensor fixed_tpe_;
  ag::Tensor fixed_ppe_;
  std::vector<nn::EncoderBlock> iformer_;
  std::vector<nn::EncoderBlock> tformer_;
  nn::Linear output_;
};

/// Sinusoidal table [rows, width] with the usual 10000^(2i/width) frequencies.
ag::Tensor sinusoidal_table(std::int64_t rows, std::int64_t width);

}  // namespace mogen
