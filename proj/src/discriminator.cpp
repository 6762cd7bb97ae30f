#include "mogen/discriminator.hpp"

#include "mogen/errors.hpp"

namespace mogen {

void DiscriminatorConfig::validate(const SkeletonTopology& topo) const {
  if (class_count < 1 || persons < 1) throw ConfigError("discriminator: class and person counts must be positive");
  if (joints != topo.joint_count) throw ConfigError("discriminator: joint count does not match " + topo.name);
  if (backbone.stages.empty() || backbone.stages.front().in_channels != persons * node_width()) {
    throw ConfigError("discriminator: first stage must take P*D input channels");
  }
  backbone.validate(topo);
}

DiscriminatorConfig DiscriminatorConfig::standard(std::int64_t class_count, std::int64_t persons,
                                                  const SkeletonTopology& topo, PoseRepresentation rep,
                                                  double width_scale) {
  DiscriminatorConfig cfg;
  cfg.class_count = class_count;
  cfg.persons = persons;
  cfg.joints = topo.joint_count;
  cfg.representation = rep;
  cfg.backbone = StgcnConfig::standard(persons * channels_per_node(rep), topo, width_scale);
  return cfg;
}

Discriminator::Discriminator(DiscriminatorConfig cfg, SkeletonTopology topo, Rng& rng)
    : cfg_(std::move(cfg)), topo_(std::move(topo)) {
  cfg_.validate(topo_);
  backbone_ = StgcnBackbone(params_, "backbone", cfg_.backbone, topo_, rng);
  output_ = nn::Linear::create(params_, "output", cfg_.feature_width(), 1, rng);
  class_embedding_ = params_.add("class_embedding", nn::normal_tensor({cfg_.class_count, cfg_.feature_width()}, 0.02, rng));
}

ag::Tensor Discriminator::features(const ag::Tensor& motion) const {
  if (motion.rank() != 4 || motion.dim(1) != cfg_.persons) {
    throw DataError("discriminator: expected [B, " + std::to_string(cfg_.persons) + ", T, C], got " +
                    ag::to_string(motion.shape()));
  }
  return backbone_.features(params_, graph_input(motion, cfg_.joints, cfg_.node_width()));
}

ag::Tensor Discriminator::score_features(const ag::Tensor& phi, std::span<const int> labels) const {
  const std::int64_t b = phi.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != b) throw DataError("discriminator: one label per sample expected");
  std::vector<std::int64_t> rows;
  for (int a : labels) {
    if (a < 0 || a >= cfg_.class_count) throw DataError("discriminator: label out of range");
    rows.push_back(a);
  }
  const ag::Tensor uncond = ag::reshape(output_(params_, phi), {b});
  const ag::Tensor proj = ag::sum(ag::gather(params_[class_embedding_], 0, rows) * phi, 1);
  return uncond + proj;
}

ag::Tensor Discriminator::score(const ag::Tensor& motion, std::span<const int> labels) const {
  return score_features(features(motion), labels);
}

double Discriminator::score(const MotionSequence& seq, int label) const {
  ag::NoGradGuard guard;
  const MotionSequence one[1] = {seq};
  const int labels[1] = {label};
  return score(motion_batch(one), labels).item();
}

}  // namespace mogen
