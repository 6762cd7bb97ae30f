#include "mogen/skeleton.hpp"

#include "mogen/errors.hpp"

#include <algorithm>
#include <deque>
#include <limits>

namespace mogen {

namespace {

// Edges of pooling level `level` as an adjacency list.
std::vector<std::vector<int>> level_neighbors(const SkeletonTopology& topo, std::size_t level) {
  std::vector<int> to_level(static_cast<std::size_t>(topo.node_count()));
  for (std::size_t i = 0; i < to_level.size(); ++i) to_level[i] = static_cast<int>(i);
  std::int64_t size = topo.node_count();
  for (std::size_t l = 0; l < level; ++l) {
    for (auto& n : to_level) n = topo.coarsen_maps[l][n];
    size = static_cast<std::int64_t>(*std::max_element(topo.coarsen_maps[l].begin(), topo.coarsen_maps[l].end())) + 1;
  }
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(size));
  for (auto [a, b] : topo.edges) {
    const int u = to_level[a], v = to_level[b];
    if (u == v) continue;
    if (std::find(nb[u].begin(), nb[u].end(), v) == nb[u].end()) {
      nb[u].push_back(v);
      nb[v].push_back(u);
    }
  }
  return nb;
}

std::vector<int> hop_distances(const std::vector<std::vector<int>>& nb, int from) {
  std::vector<int> dist(nb.size(), std::numeric_limits<int>::max());
  std::deque<int> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : nb[u]) {
      if (dist[v] == std::numeric_limits<int>::max()) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace

void SkeletonTopology::validate() const {
  const std::int64_t k = node_count();
  if (joint_count < 1) throw ConfigError("topology " + name + ": needs at least one pose node");
  if (root_index != 0) throw ConfigError("topology " + name + ": the root must be graph node 0");
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= k || b >= k || a == b) throw ConfigError("topology " + name + ": bad edge");
  }
  auto nb = level_neighbors(*this, 0);
  auto dist = hop_distances(nb, root_index);
  if (std::any_of(dist.begin(), dist.end(), [](int d) { return d == std::numeric_limits<int>::max(); })) {
    throw ConfigError("topology " + name + ": joint graph is not connected");
  }
  std::int64_t size = k;
  for (const auto& map : coarsen_maps) {
    if (static_cast<std::int64_t>(map.size()) != size) throw ConfigError("topology " + name + ": coarsen map size");
    const int coarse = *std::max_element(map.begin(), map.end()) + 1;
    std::vector<bool> hit(static_cast<std::size_t>(coarse), false);
    for (int c : map) {
      if (c < 0) throw ConfigError("topology " + name + ": negative coarse node");
      hit[c] = true;
    }
    if (std::find(hit.begin(), hit.end(), false) != hit.end()) {
      throw ConfigError("topology " + name + ": coarsen map is not surjective");
    }
    size = coarse;
  }
  if (size != 1) throw ConfigError("topology " + name + ": coarsening must end at a single node");
  if (!node_labels.empty() && static_cast<std::int64_t>(node_labels.size()) != k) {
    throw ConfigError("topology " + name + ": node label count");
  }
}

std::vector<int> SkeletonTopology::parents() const {
  auto nb = level_neighbors(*this, 0);
  std::vector<int> parent(nb.size(), -2);
  std::deque<int> queue{root_index};
  parent[root_index] = -1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : nb[u]) {
      if (parent[v] == -2) {
        parent[v] = u;
        queue.push_back(v);
      }
    }
  }
  return parent;
}

std::vector<std::int64_t> SkeletonTopology::level_sizes() const {
  std::vector<std::int64_t> sizes{node_count()};
  for (const auto& map : coarsen_maps) sizes.push_back(*std::max_element(map.begin(), map.end()) + 1);
  return sizes;
}

std::vector<double> SkeletonTopology::adjacency(std::size_t level) const {
  auto nb = level_neighbors(*this, level);
  const std::size_t n = nb.size();
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j : nb[i]) a[i * n + j] = 1.0;
  }
  return a;
}

std::vector<double> SkeletonTopology::distance_partition(std::size_t level, int hop, bool normalize) const {
  auto nb = level_neighbors(*this, level);
  const std::size_t n = nb.size();
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto dist = hop_distances(nb, static_cast<int>(i));
    int count = 0;
    for (std::size_t j = 0; j < n; ++j) count += dist[j] == hop;
    if (count == 0) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (dist[j] == hop) a[i * n + j] = normalize ? 1.0 / count : 1.0;
    }
  }
  return a;
}

std::vector<double> SkeletonTopology::pooling_matrix(std::size_t level) const {
  const auto& map = coarsen_maps.at(level);
  const int coarse = *std::max_element(map.begin(), map.end()) + 1;
  const std::size_t fine = map.size();
  std::vector<int> counts(static_cast<std::size_t>(coarse), 0);
  for (int c : map) ++counts[c];
  std::vector<double> p(static_cast<std::size_t>(coarse) * fine, 0.0);
  for (std::size_t i = 0; i < fine; ++i) p[map[i] * fine + i] = 1.0 / counts[map[i]];
  return p;
}

SkeletonTopology SkeletonTopology::star5() {
  SkeletonTopology t;
  t.name = "star5";
  t.joint_count = 5;
  t.edges = {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}};
  t.coarsen_maps = {{0, 0, 1, 1, 2, 2}, {0, 0, 0}};
  t.node_labels = {"root", "head", "hand_l", "hand_r", "foot_l", "foot_r"};
  return t;
}

SkeletonTopology SkeletonTopology::ntu25() {
  SkeletonTopology t;
  t.name = "ntu25";
  t.joint_count = 24;
  t.edges = {{0, 1},   {20, 2},  {2, 3},   {20, 4},   {4, 5},   {5, 6},   {6, 7},   {20, 8},
             {8, 9},   {9, 10},  {10, 11}, {0, 12},   {12, 13}, {13, 14}, {14, 15}, {0, 16},
             {16, 17}, {17, 18}, {18, 19}, {1, 20},   {7, 21},  {6, 22},  {11, 23}, {10, 24}};
  // pelvis+root, torso, head, upper arms, forearm+hand, thighs, shin+foot
  t.coarsen_maps = {{0, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7, 8, 8, 9, 9, 10, 10, 1, 4, 4, 6, 6},
                    {0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4},
                    {0, 0, 0, 0, 0}};
  t.node_labels = {"spine_base", "spine_mid", "neck",     "head",    "shoulder_l", "elbow_l",   "wrist_l",
                   "hand_l",     "shoulder_r", "elbow_r", "wrist_r", "hand_r",     "hip_l",     "knee_l",
                   "ankle_l",    "foot_l",     "hip_r",   "knee_r",  "ankle_r",    "foot_r",    "spine_shoulder",
                   "handtip_l",  "thumb_l",    "handtip_r", "thumb_r"};
  return t;
}

SkeletonTopology SkeletonTopology::for_joint_count(std::int64_t joints) {
  if (joints == 5) return star5();
  if (joints == 24) return ntu25();
  if (joints < 1) throw DataError("skeleton needs at least one pose node");
  SkeletonTopology t;
  t.name = "star" + std::to_string(joints);
  t.joint_count = joints;
  for (int j = 1; j <= joints; ++j) t.edges.emplace_back(0, j);
  t.coarsen_maps = {std::vector<int>(static_cast<std::size_t>(joints + 1), 0)};
  return t;
}

}  // namespace mogen
