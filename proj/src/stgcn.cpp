#include "mogen/stgcn.hpp"

#include "mogen/errors.hpp"

#include <algorithm>
#include <cmath>

namespace mogen {

void StgcnConfig::validate(const SkeletonTopology& topo) const {
  if (stages.empty()) throw ConfigError("graph network needs at least one stage");
  const auto sizes = topo.level_sizes();
  std::size_t level = 0;
  std::int64_t channels = stages.front().in_channels;
  for (const auto& s : stages) {
    if (s.in_channels != channels || s.out_channels < 1) throw ConfigError("graph stage channels do not chain");
    if (s.level != level) throw ConfigError("graph stage levels do not chain with the skeleton");
    if (s.spatial_kernel < 1 || s.temporal_kernel < 1 || s.temporal_stride < 1) {
      throw ConfigError("graph stage kernels must be positive");
    }
    if (s.coarsen) {
      if (level + 1 >= sizes.size()) throw ConfigError("graph stage pools past the last level");
      ++level;
    }
    channels = s.out_channels;
  }
  if (sizes[level] != 1) throw ConfigError("graph network must end on a single node");
}

StgcnConfig StgcnConfig::with_channels(std::int64_t in_channels, const SkeletonTopology& topo,
                                       std::span<const std::int64_t> channels) {
  const std::size_t levels = topo.level_sizes().size() - 1;
  if (channels.size() != levels + 1) {
    throw ConfigError("graph network needs " + std::to_string(levels + 1) + " channel widths for " + topo.name);
  }
  StgcnConfig cfg;
  std::int64_t in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    GraphStage s;
    s.in_channels = in;
    s.out_channels = channels[i];
    s.level = i == 0 ? 0 : i - 1;
    s.coarsen = i > 0;
    cfg.stages.push_back(s);
    in = channels[i];
  }
  return cfg;
}

StgcnConfig StgcnConfig::standard(std::int64_t in_channels, const SkeletonTopology& topo, double width_scale) {
  auto scaled = [&](std::int64_t c) { return std::max<std::int64_t>(1, std::llround(c * width_scale)); };
  const std::size_t levels = topo.level_sizes().size() - 1;
  if (levels == 3) {
    // 25 -> 25 -> 11 -> 5 -> 5 -> 1; the last stage uses five spatial partitions.
    StgcnConfig cfg;
    const std::int64_t widths[5] = {32, 64, 128, 256, 512};
    const std::size_t level[5] = {0, 0, 1, 2, 2};
    const bool coarsen[5] = {false, true, true, false, true};
    std::int64_t in = in_channels;
    for (int i = 0; i < 5; ++i) {
      GraphStage s;
      s.in_channels = in;
      s.out_channels = scaled(widths[i]);
      s.level = level[i];
      s.coarsen = coarsen[i];
      s.spatial_kernel = i == 4 ? 5 : 2;
      cfg.stages.push_back(s);
      in = s.out_channels;
    }
    return cfg;
  }
  std::vector<std::int64_t> widths;
  for (std::size_t i = 0; i <= levels; ++i) widths.push_back(scaled(32LL << std::min<std::size_t>(i, 4)));
  return with_channels(in_channels, topo, widths);
}

ag::Tensor graph_input(const ag::Tensor& motion, std::int64_t joints, std::int64_t width) {
  const std::int64_t b = motion.dim(0), p = motion.dim(1), t = motion.dim(2);
  if (motion.dim(3) != 3 + joints * width) throw DataError("graph input: motion width does not match the skeleton");
  ag::Tensor root = ag::slice(motion, 3, 0, 3);
  if (width > 3) root = ag::concat({root, ag::Tensor::zeros({b, p, t, width - 3})}, 3);
  ag::Tensor pose = ag::reshape(ag::slice(motion, 3, 3, joints * width), {b, p, t, joints, width});
  ag::Tensor nodes = ag::concat({ag::reshape(root, {b, p, t, 1, width}), pose}, 3);  // [B, P, T, K, D]
  return ag::reshape(ag::permute(nodes, {0, 2, 3, 1, 4}), {b, t, joints + 1, p * width});
}

ag::Tensor motion_batch(std::span<const MotionSequence> seqs) {
  if (seqs.empty()) throw DataError("empty motion batch");
  const auto& f = seqs.front();
  std::vector<double> v;
  v.reserve(seqs.size() * static_cast<std::size_t>(f.persons * f.frames * f.channels()));
  for (const auto& s : seqs) {
    if (s.persons != f.persons || s.frames != f.frames || s.joints != f.joints || s.representation != f.representation) {
      throw DataError("motion batch mixes sequence shapes");
    }
    const auto flat = flatten(s);
    v.insert(v.end(), flat.begin(), flat.end());
  }
  return ag::Tensor::from({static_cast<std::int64_t>(seqs.size()), f.persons, f.frames, f.channels()}, std::move(v));
}

ag::Tensor build_st_graph(const MotionSequence& seq, const SkeletonTopology& topo) {
  if (seq.joints != topo.joint_count) throw DataError("sequence does not match topology " + topo.name);
  const MotionSequence one[1] = {seq};
  ag::Tensor g = graph_input(motion_batch(one), seq.joints, seq.width());
  return ag::reshape(g, {seq.frames, topo.node_count(), seq.persons * seq.width()});
}

StgcnBackbone::StgcnBackbone(nn::ParameterSet& ps, const std::string& name, StgcnConfig cfg,
                             const SkeletonTopology& topo, Rng& rng, nn::ParameterSet* running)
    : cfg_(std::move(cfg)) {
  cfg_.validate(topo);
  if (cfg_.batch_norm && running == nullptr) throw ConfigError("batch-normalised graph network needs running buffers");
  const auto sizes = topo.level_sizes();
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const auto& s = cfg_.stages[i];
    const std::string prefix = name + ".stage" + std::to_string(i);
    StageParams sp;
    sp.spatial = nn::Linear::create(ps, prefix + ".spatial", s.spatial_kernel * s.in_channels, s.out_channels, rng);
    sp.temporal = nn::Linear::create(ps, prefix + ".temporal", s.temporal_kernel * s.out_channels, s.out_channels, rng);
    for (int k = 0; k < s.spatial_kernel; ++k) sp.partitions.push_back(topo.distance_partition(s.level, k));
    sp.nodes_in = sizes[s.level];
    sp.nodes_out = s.coarsen ? sizes[s.level + 1] : sp.nodes_in;
    if (s.coarsen) sp.pooling = topo.pooling_matrix(s.level);
    if (cfg_.batch_norm) {
      sp.gain = ps.add(prefix + ".norm.gain", ag::Tensor::full({s.out_channels}, 1.0));
      sp.bias = ps.add(prefix + ".norm.bias", ag::Tensor::zeros({s.out_channels}));
      sp.run_mean = running->add(prefix + ".norm.mean", ag::Tensor::zeros({s.out_channels}));
      sp.run_var = running->add(prefix + ".norm.var", ag::Tensor::full({s.out_channels}, 1.0));
    }
    stages_.push_back(std::move(sp));
  }
}

ag::Tensor StgcnBackbone::stage(const nn::ParameterSet& ps, std::size_t i, const ag::Tensor& x,
                                NormState norm) const {
  const auto& s = cfg_.stages.at(i);
  const auto& sp = stages_.at(i);
  if (x.rank() != 4 || x.dim(2) != sp.nodes_in || x.dim(3) != s.in_channels) {
    throw DataError("graph stage " + std::to_string(i) + " got input " + ag::to_string(x.shape()));
  }
  // Spatial: one neighbourhood sum per partition, concatenated and mixed by one weight bank.
  std::vector<ag::Tensor> parts;
  for (const auto& m : sp.partitions) parts.push_back(ag::mix(x, 2, m, sp.nodes_in, sp.nodes_in));
  ag::Tensor h = sp.spatial(ps, parts.size() == 1 ? parts.front() : ag::concat(parts, 3));

  // Temporal: strided convolution with zero padding, taps concatenated on channels.
  const std::int64_t t_in = x.dim(1), stride = s.temporal_stride, taps = s.temporal_kernel;
  const std::int64_t t_out = (t_in + stride - 1) / stride;
  const std::int64_t pad = std::max<std::int64_t>(0, (taps - stride + 1) / 2);
  std::vector<ag::Tensor> shifted;
  for (std::int64_t k = 0; k < taps; ++k) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(t_out));
    for (std::int64_t t = 0; t < t_out; ++t) {
      const std::int64_t src = t * stride + k - pad;
      idx[t] = src >= 0 && src < t_in ? src : -1;
    }
    shifted.push_back(ag::gather(h, 1, idx));
  }
  h = sp.temporal(ps, shifted.size() == 1 ? shifted.front() : ag::concat(shifted, 3));

  if (!sp.pooling.empty()) h = ag::mix(h, 2, sp.pooling, sp.nodes_out, sp.nodes_in);
  if (cfg_.batch_norm) h = normalize(ps, sp, h, norm);
  return ag::leaky_relu(h, cfg_.leaky_slope);
}

ag::Tensor StgcnBackbone::normalize(const nn::ParameterSet& ps, const StageParams& sp, const ag::Tensor& h,
                                    NormState norm) const {
  if (norm.running == nullptr) throw ConfigError("batch-normalised graph network needs running buffers");
  const ag::Shape shape = h.shape();
  const std::int64_t c = shape.back();
  ag::Tensor flat = ag::reshape(h, {-1, c});
  ag::Tensor mean, var;
  if (norm.training) {
    mean = ag::mean(flat, 0, true);
    var = ag::mean(ag::square(flat - mean), 0, true);
    const double m = cfg_.norm_momentum;
    const double n = static_cast<double>(flat.dim(0));
    auto rm = (*norm.running)[sp.run_mean].mutable_values();
    auto rv = (*norm.running)[sp.run_var].mutable_values();
    for (std::int64_t k = 0; k < c; ++k) {
      rm[k] = (1 - m) * rm[k] + m * mean.at(k);
      rv[k] = (1 - m) * rv[k] + m * var.at(k) * (n > 1 ? n / (n - 1) : 1.0);
    }
  } else {
    mean = ag::reshape((*norm.running)[sp.run_mean].detach(), {1, c});
    var = ag::reshape((*norm.running)[sp.run_var].detach(), {1, c});
  }
  ag::Tensor y = (flat - mean) / ag::sqrt(ag::add_scalar(var, 1e-5));
  y = y * ps[sp.gain] + ps[sp.bias];
  return ag::reshape(y, shape);
}

ag::Tensor StgcnBackbone::features(const nn::ParameterSet& ps, const ag::Tensor& graph, NormState norm) const {
  ag::Tensor h = graph;
  for (std::size_t i = 0; i < stages_.size(); ++i) h = stage(ps, i, h, norm);
  // [B, T', 1, F] -> [B, F]
  return ag::mean(ag::reshape(h, {h.dim(0), h.dim(1), h.dim(3)}), 1);
}

}  // namespace mogen
