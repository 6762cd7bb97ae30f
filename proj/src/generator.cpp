#include "mogen/generator.hpp"

#include "mogen/errors.hpp"

#include <cmath>

namespace mogen {

void GeneratorConfig::validate() const {
  if (latent_channels < 1 || width < 1 || heads < 1 || class_count < 1 || persons < 1 || frames < 1 || joints < 1 ||
      mlp_ratio < 1 || layer_pairs < 0) {
    throw ConfigError("generator: sizes must be positive");
  }
  if (width % heads != 0) throw ConfigError("generator: width must be divisible by heads");
  if (persons > 1 && width % 2 != 0) throw ConfigError("generator: width must be even for multi-person encodings");
}

ag::Tensor sinusoidal_table(std::int64_t rows, std::int64_t width) {
  std::vector<double> v(static_cast<std::size_t>(rows * width));
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      v[r * width + i] = i % 2 == 0 ? std::sin(r * freq) : std::cos(r * freq);
    }
  }
  return ag::Tensor::from({rows, width}, std::move(v));
}

Generator::Generator(GeneratorConfig cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::int64_t d = cfg_.width;
  input_ = nn::Linear::create(params_, "input", cfg_.latent_channels, d, rng);
  class_embedding_ = params_.add("class_embedding", nn::normal_tensor({cfg_.class_count, d}, 0.02, rng));
  if (cfg_.fixed_pe) {
    fixed_tpe_ = sinusoidal_table(cfg_.frames + 1, cfg_.temporal_pe_width());
    if (cfg_.persons > 1) fixed_ppe_ = sinusoidal_table(cfg_.persons, cfg_.person_pe_width());
  } else {
    tpe_ = params_.add("tpe", nn::normal_tensor({cfg_.frames + 1, cfg_.temporal_pe_width()}, 0.02, rng));
    if (cfg_.persons > 1) {
      ppe_ = params_.add("ppe", nn::normal_tensor({cfg_.persons, cfg_.person_pe_width()}, 0.02, rng));
    }
  }
  for (std::int64_t l = 0; l < cfg_.layer_pairs; ++l) {
    if (cfg_.persons > 1) {
      iformer_.push_back(nn::EncoderBlock::create(params_, "iformer." + std::to_string(l), d, cfg_.heads,
                                                  cfg_.mlp_ratio, rng));
    }
    tformer_.push_back(
        nn::EncoderBlock::create(params_, "tformer." + std::to_string(l), d, cfg_.heads, cfg_.mlp_ratio, rng));
  }
  output_ = nn::Linear::create(params_, "output", d, cfg_.output_width(), rng);
}

ag::Tensor Generator::positional_encoding() const {
  const std::int64_t p = cfg_.persons, rows = cfg_.frames + 1;
  const ag::Tensor tpe = cfg_.fixed_pe ? fixed_tpe_ : params_[tpe_];
  if (p == 1) return ag::reshape(tpe, {1, rows, cfg_.width});
  const ag::Tensor ppe = cfg_.fixed_pe ? fixed_ppe_ : params_[ppe_];
  const ag::Tensor t = ag::expand(ag::reshape(tpe, {1, rows, cfg_.temporal_pe_width()}),
                                  {p, rows, cfg_.temporal_pe_width()});
  const ag::Tensor q = ag::expand(ag::reshape(ppe, {p, 1, cfg_.person_pe_width()}), {p, rows, cfg_.person_pe_width()});
  return ag::concat({t, q}, 2);
}

ag::Tensor Generator::embed(const ag::Tensor& z, std::span<const int> labels) const {
  const std::int64_t b = z.dim(0), p = cfg_.persons, t = cfg_.frames, d = cfg_.width;
  if (z.rank() != 4 || z.dim(1) != cfg_.latent_persons() || z.dim(2) != t || z.dim(3) != cfg_.latent_channels) {
    throw ConfigError("generator: latent batch has shape " + ag::to_string(z.shape()));
  }
  if (static_cast<std::int64_t>(labels.size()) != b) throw ConfigError("generator: one label per sample expected");
  std::vector<std::int64_t> rows;
  for (int a : labels) {
    if (a < 0 || a >= cfg_.class_count) throw ConfigError("generator: label out of range");
    rows.push_back(a);
  }
  ag::Tensor frames = input_(params_, z);  // [B, Pz, T, d]
  if (z.dim(1) != p) frames = ag::expand(frames, {b, p, t, d});
  ag::Tensor cls = ag::reshape(ag::gather(params_[class_embedding_], 0, rows), {b, 1, 1, d});
  cls = ag::expand(cls, {b, p, 1, d});
  return ag::concat({frames, cls}, 2) + positional_encoding();
}

ag::Tensor Generator::iformer(std::size_t layer, const ag::Tensor& tokens) const {
  const std::int64_t b = tokens.dim(0), p = tokens.dim(1), l = tokens.dim(2), d = tokens.dim(3);
  ag::Tensor x = ag::reshape(ag::permute(tokens, {0, 2, 1, 3}), {b * l, p, d});
  x = iformer_.at(layer)(params_, x);
  return ag::permute(ag::reshape(x, {b, l, p, d}), {0, 2, 1, 3});
}

ag::Tensor Generator::tformer(std::size_t layer, const ag::Tensor& tokens) const {
  const std::int64_t b = tokens.dim(0), p = tokens.dim(1), l = tokens.dim(2), d = tokens.dim(3);
  ag::Tensor x = tformer_.at(layer)(params_, ag::reshape(tokens, {b * p, l, d}));
  return ag::reshape(x, {b, p, l, d});
}

ag::Tensor Generator::forward(const ag::Tensor& z, std::span<const int> labels) const {
  ag::Tensor x = embed(z, labels);
  for (std::size_t l = 0; l < tformer_.size(); ++l) {
    if (!iformer_.empty()) x = iformer(l, x);
    x = tformer(l, x);
  }
  return output_(params_, ag::slice(x, 2, 0, cfg_.frames));
}

ag::Tensor Generator::latent_batch(std::span<const LatentSequence> z) const {
  const std::int64_t per = cfg_.latent_persons();
  if (z.empty() || static_cast<std::int64_t>(z.size()) % per != 0) {
    throw ConfigError("generator: latent count must be a multiple of " + std::to_string(per));
  }
  const std::int64_t b = static_cast<std::int64_t>(z.size()) / per, t = cfg_.frames, c = cfg_.latent_channels;
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(b * per * t * c));
  for (const auto& s : z) {
    if (s.frames() != t || s.channels() != c) throw ConfigError("generator: latent sequence has the wrong shape");
    for (std::int64_t i = 0; i < t; ++i) {
      for (std::int64_t k = 0; k < c; ++k) v.push_back(s.values(i, k));
    }
  }
  return ag::Tensor::from({b, per, t, c}, std::move(v));
}

std::vector<MotionSequence> Generator::to_motion(const ag::Tensor& out) const {
  const std::int64_t b = out.dim(0), block = out.size() / b;
  std::vector<MotionSequence> seqs;
  for (std::int64_t i = 0; i < b; ++i) {
    auto s = unflatten(out.values().subspan(static_cast<std::size_t>(i * block), static_cast<std::size_t>(block)),
                       cfg_.persons, cfg_.frames, cfg_.joints, cfg_.representation);
    if (cfg_.representation == PoseRepresentation::NormalizedLimbVectors) normalize_limbs(s);
    seqs.push_back(std::move(s));
  }
  return seqs;
}

MotionSequence Generator::generate(std::span<const LatentSequence> z, int label) const {
  ag::NoGradGuard guard;
  const int labels[1] = {label};
  return to_motion(forward(latent_batch(z), labels)).front();
}

}  // namespace mogen
