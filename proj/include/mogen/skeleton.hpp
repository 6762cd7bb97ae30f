#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mogen {

/// Joint graph used by the graph-convolutional networks.
///
/// Graph node 0 is the root: it carries the root translation and is the
/// parent of the top-level pose nodes. Nodes 1..J hold the J pose slots of a
/// MotionSequence, so the graph has K = J + 1 nodes. Each coarsen map sends
/// every node of one pooling level to a node of the next, coarser level; the
/// last level has a single node.
struct SkeletonTopology {
  std::string name;
  std::int64_t joint_count = 0;
  std::vector<std::pair<int, int>> edges;  // (parent, child) graph-node pairs
  int root_index = 0;
  std::vector<std::vector<int>> coarsen_maps;
  std::vector<std::string> node_labels;  // optional, K entries when present

  std::int64_t node_count() const { return joint_count + 1; }
  void validate() const;

  /// parent graph node of every node (-1 for the root), via BFS from the root.
  std::vector<int> parents() const;
  /// Node counts per pooling level, starting at K and ending at 1.
  std::vector<std::int64_t> level_sizes() const;
  /// Undirected adjacency (0/1, no self loops) of pooling level `level`, row-major.
  std::vector<double> adjacency(std::size_t level) const;
  /// 0/1 mask of the node pairs exactly `hop` edges apart at pooling level
  /// `level`; hop 0 is the identity. With `normalize` each nonempty row sums to 1.
  std::vector<double> distance_partition(std::size_t level, int hop, bool normalize = false) const;
  /// Mean-pooling matrix [coarse x fine] realising coarsen_maps[level].
  std::vector<double> pooling_matrix(std::size_t level) const;

  /// Root plus five limbs (head, two hands, two feet) all attached to the root.
  static SkeletonTopology star5();
  /// 25-node tree following the Kinect v2 joint layout (24 pose nodes + root).
  static SkeletonTopology ntu25();
  /// star5 for 5 slots, ntu25 for 24, otherwise a flat star pooled straight to one node.
  static SkeletonTopology for_joint_count(std::int64_t joints);
};

}  // namespace mogen
