#pragma once

#include "mogen/autograd.hpp"
#include "mogen/motion.hpp"
#include "mogen/nn.hpp"
#include "mogen/skeleton.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mogen {

/// One spatial-temporal graph convolution stage at pooling level `level`.
/// Spatial partitions are hop-distance masks {self, 1 hop, ...}; the
/// temporal convolution has `temporal_kernel` taps and stride
/// `temporal_stride` (output length ceil(T / stride)); with `coarsen` the
/// nodes are mean-pooled to the next level. Ends in LeakyReLU(0.2).
struct GraphStage {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int spatial_kernel = 2;
  int temporal_kernel = 4;
  int temporal_stride = 2;
  std::size_t level = 0;
  bool coarsen = false;
};

struct StgcnConfig {
  std::vector<GraphStage> stages;
  double leaky_slope = 0.2;
  /// Batch normalisation before each activation, with running statistics
  /// for inference. Off for the critic, whose gradient penalty is per sample.
  bool batch_norm = false;
  double norm_momentum = 0.1;

  std::int64_t feature_width() const { return stages.empty() ? 0 : stages.back().out_channels; }
  void validate(const SkeletonTopology& topo) const;

  /// Five stages, nodes 25 -> 25 -> 11 -> 5 -> 5 -> 1 on the NTU tree with
  /// channels in -> 32 -> 64 -> 128 -> 256 -> 512 scaled by `width_scale`.
  /// Other topologies get one stage per pooling level plus a leading
  /// non-pooling stage, with the same channel progression.
  static StgcnConfig standard(std::int64_t in_channels, const SkeletonTopology& topo, double width_scale = 1.0);
  /// Explicit channel list, one pooling stage per level after an initial
  /// same-level stage; the final stage pools to one node.
  static StgcnConfig with_channels(std::int64_t in_channels, const SkeletonTopology& topo,
                                   std::span<const std::int64_t> channels);
};

/// Flattened motion [B, P, T, 3 + J*D] to the graph layout [B, T, K, P*D]:
/// node 0 carries the root translation (zero padded to D), node j+1 pose
/// slot j, and the persons' D-channel blocks are concatenated per node.
ag::Tensor graph_input(const ag::Tensor& motion, std::int64_t joints, std::int64_t width);
/// Stack sequences into a flattened motion batch [B, P, T, C].
ag::Tensor motion_batch(std::span<const MotionSequence> seqs);
/// [T, K, P*D] array for one sequence.
ag::Tensor build_st_graph(const MotionSequence& seq, const SkeletonTopology& topo);

/// Running statistics for batch-normalised backbones. In training mode the
/// batch statistics are used and the running ones updated.
struct NormState {
  nn::ParameterSet* running = nullptr;
  bool training = false;
};

class StgcnBackbone {
 public:
  StgcnBackbone() = default;
  /// `running` receives the normalisation buffers when cfg.batch_norm is set.
  StgcnBackbone(nn::ParameterSet& ps, const std::string& name, StgcnConfig cfg, const SkeletonTopology& topo,
                Rng& rng, nn::ParameterSet* running = nullptr);

  const StgcnConfig& config() const { return cfg_; }
  /// x is [B, T, K, C]; returns [B, T', K', C'].
  ag::Tensor stage(const nn::ParameterSet& ps, std::size_t i, const ag::Tensor& x, NormState norm = {}) const;
  /// Graph input to the [B, F] temporally averaged single-node feature.
  ag::Tensor features(const nn::ParameterSet& ps, const ag::Tensor& graph, NormState norm = {}) const;

 private:
  struct StageParams {
    nn::Linear spatial;
    nn::Linear temporal;
    std::vector<std::vector<double>> partitions;
    std::int64_t nodes_in = 0;
    std::int64_t nodes_out = 0;
    std::vector<double> pooling;
    std::size_t gain = 0, bias = 0;        // in the parameter set
    std::size_t run_mean = 0, run_var = 0;  // in the running set
  };
  ag::Tensor normalize(const nn::ParameterSet& ps, const StageParams& sp, const ag::Tensor& h, NormState norm) const;

  StgcnConfig cfg_;
  std::vector<StageParams> stages_;
};

}  // namespace mogen
