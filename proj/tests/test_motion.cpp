#include "doctest.h"

#include "mogen/errors.hpp"
#include "mogen/motion.hpp"
#include "mogen/motion_io.hpp"
#include "mogen/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

using namespace mogen;

namespace {

MotionSequence random_sequence(std::int64_t p, std::int64_t t, std::int64_t j, PoseRepresentation rep, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto s = MotionSequence::zeros(p, t, j, rep);
  for (auto& v : s.root) v = static_cast<float>(n(rng));
  for (auto& v : s.pose) v = static_cast<float>(n(rng));
  return s;
}

double dist(const MotionSequence& s, std::int64_t a, std::int64_t b, std::int64_t t) {
  double d = 0;
  for (int k = 0; k < 3; ++k) d += std::pow(s.root_at(a, t, k) - s.root_at(b, t, k), 2);
  return std::sqrt(d);
}

}  // namespace

TEST_CASE("skeleton topologies are valid and coarsen to one node") {
  for (const auto& topo : {SkeletonTopology::star5(), SkeletonTopology::ntu25(), SkeletonTopology::for_joint_count(3)}) {
    CHECK_NOTHROW(topo.validate());
    CHECK(topo.level_sizes().back() == 1);
  }
  CHECK(SkeletonTopology::ntu25().level_sizes() == std::vector<std::int64_t>{25, 11, 5, 1});
  CHECK(SkeletonTopology::star5().level_sizes() == std::vector<std::int64_t>{6, 3, 1});
  const auto topo = SkeletonTopology::ntu25();
  const auto pool = topo.pooling_matrix(0);
  for (int r = 0; r < 11; ++r) CHECK(std::accumulate(pool.begin() + r * 25, pool.begin() + (r + 1) * 25, 0.0) ==
                                     doctest::Approx(1.0));
  auto broken = SkeletonTopology::star5();
  broken.edges.pop_back();
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("distance partitions") {
  const auto topo = SkeletonTopology::star5();
  const auto self = topo.distance_partition(0, 0);
  for (int i = 0; i < 6; ++i) CHECK(self[i * 6 + i] == 1.0);
  const auto one = topo.distance_partition(0, 1, true);
  CHECK(one[0 * 6 + 3] == doctest::Approx(0.2));  // root has five neighbours
  CHECK(one[1 * 6 + 0] == 1.0);
  const auto two = topo.distance_partition(0, 2, true);
  CHECK(two[0 * 6 + 1] == 0.0);
  CHECK(two[1 * 6 + 2] == doctest::Approx(0.25));
  const auto mask = topo.distance_partition(0, 1);
  CHECK(mask[0 * 6 + 3] == 1.0);
  CHECK(mask == topo.adjacency(0));
}

TEST_CASE("flatten layout and exact round trip") {
  Rng rng(1);
  auto s = MotionSequence::zeros(1, 1, 24, PoseRepresentation::JointCoordinates);
  CHECK(s.channels() == 75);
  CHECK(flatten(s) == std::vector<double>(75, 0.0));
  s = random_sequence(2, 4, 5, PoseRepresentation::Rotation6d, rng);
  const auto flat = flatten(s);
  CHECK(flat.size() == 2u * 4 * 33);
  CHECK(flat[33] == s.root_at(0, 1, 0));
  CHECK(flat[3 + 6 * 2 + 1] == s.pose_at(0, 0, 2, 1));
  CHECK(unflatten(flat, 2, 4, 5, PoseRepresentation::Rotation6d) == s);
}

TEST_CASE("limb vectors") {
  auto topo = SkeletonTopology::for_joint_count(1);
  auto s = MotionSequence::zeros(1, 1, 1, PoseRepresentation::JointCoordinates);
  s.pose = {0.0, 0.0, 2.0};
  s.root = {1.0, 2.0, 3.0};
  const auto l = to_limb_vectors(s, topo);
  CHECK(l.pose == std::vector<double>{0.0, 0.0, 1.0});
  CHECK(l.root == s.root);
  CHECK_NOTHROW(l.validate());

  s.pose = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(to_limb_vectors(s, topo), DataError);

  // Static sequence stays static.
  Rng rng(2);
  auto one = random_sequence(1, 1, 5, PoseRepresentation::JointCoordinates, rng);
  auto stat = MotionSequence::zeros(1, 4, 5, PoseRepresentation::JointCoordinates);
  for (int t = 0; t < 4; ++t) std::copy(one.pose.begin(), one.pose.end(), stat.pose.begin() + t * 15);
  const auto ls = to_limb_vectors(stat, SkeletonTopology::star5());
  for (int t = 1; t < 4; ++t) CHECK(std::equal(ls.pose.begin(), ls.pose.begin() + 15, ls.pose.begin() + t * 15));
}

TEST_CASE("limb vectors invert given bone lengths on a two-joint chain") {
  SkeletonTopology chain;
  chain.name = "chain2";
  chain.joint_count = 2;
  chain.edges = {{0, 1}, {1, 2}};
  chain.coarsen_maps = {{0, 0, 0}};
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_sequence(2, 3, 2, PoseRepresentation::JointCoordinates, rng);
    const auto l = to_limb_vectors(s, chain);
    for (int p = 0; p < 2; ++p) {
      for (int t = 0; t < 3; ++t) {
        std::vector<double> bones(2);
        for (int j = 0; j < 2; ++j) {
          double n = 0;
          for (int k = 0; k < 3; ++k) {
            const double from = j == 0 ? 0.0 : s.pose_at(p, t, 0, k);
            n += std::pow(s.pose_at(p, t, j, k) - from, 2);
          }
          bones[j] = std::sqrt(n);
        }
        auto frame = MotionSequence::zeros(1, 1, 2, PoseRepresentation::NormalizedLimbVectors);
        for (int j = 0; j < 2; ++j) {
          for (int k = 0; k < 3; ++k) frame.pose_at(0, 0, j, k) = l.pose_at(p, t, j, k);
        }
        const auto back = from_limb_vectors(frame, chain, bones);
        for (int j = 0; j < 2; ++j) {
          for (int k = 0; k < 3; ++k) CHECK(std::abs(back.pose_at(0, 0, j, k) - s.pose_at(p, t, j, k)) < 1e-6);
        }
      }
    }
  }
}

TEST_CASE("person permutation") {
  Rng rng(4);
  const auto s = random_sequence(5, 3, 5, PoseRepresentation::JointCoordinates, rng);
  const std::vector<int> id{0, 1, 2, 3, 4};
  CHECK(permute_persons(s, id) == s);

  const auto two = random_sequence(2, 3, 5, PoseRepresentation::JointCoordinates, rng);
  const std::vector<int> swap{1, 0};
  const auto swapped = permute_persons(two, swap);
  CHECK(swapped.root_at(0, 2, 1) == two.root_at(1, 2, 1));
  CHECK(permute_persons(swapped, swap) == two);

  const auto perm = random_permutation(5, rng);
  const auto permuted = permute_persons(s, perm);
  CHECK(permute_persons(permuted, inverse_permutation(perm)) == s);
  std::multiset<std::vector<double>> before, after;
  for (int p = 0; p < 5; ++p) {
    before.insert(flatten(select_person(s, p)));
    after.insert(flatten(select_person(permuted, p)));
  }
  CHECK(before == after);

  // Permutation commutes with flatten up to person blocks.
  const auto f = flatten(s), fp = flatten(permuted);
  const std::size_t block = 3 * s.channels();
  for (int p = 0; p < 5; ++p) {
    CHECK(std::equal(fp.begin() + p * block, fp.begin() + (p + 1) * block, f.begin() + perm[p] * block));
  }
  CHECK_THROWS_AS(permute_persons(s, std::vector<int>{0, 0, 1, 2, 3}), DataError);
}

TEST_CASE("random permutations cover all orderings uniformly") {
  Rng rng(5);
  std::map<std::vector<int>, int> hist;
  for (int i = 0; i < 1000; ++i) ++hist[random_permutation(3, rng)];
  REQUIRE(hist.size() == 6);
  double chi2 = 0;
  for (const auto& [k, c] : hist) chi2 += std::pow(c - 1000.0 / 6, 2) / (1000.0 / 6);
  CHECK(chi2 < 15.086);  // chi-square 5 dof, p = 0.01
}

TEST_CASE("square-root class sampler") {
  const std::vector<std::int64_t> c1{1, 4, 9};
  SquareRootClassSampler s1(c1);
  CHECK(s1.probabilities()[0] == doctest::Approx(1.0 / 6));
  CHECK(s1.probabilities()[1] == doctest::Approx(2.0 / 6));
  CHECK(s1.probabilities()[2] == doctest::Approx(3.0 / 6));
  const std::vector<std::int64_t> c2{7, 7, 7, 7};
  SquareRootClassSampler s2(c2);
  for (double p : s2.probabilities()) CHECK(p == doctest::Approx(0.25));

  const std::vector<std::int64_t> c3{100, 1};
  SquareRootClassSampler s3(c3);
  CHECK(s3.probabilities()[0] == doctest::Approx(10.0 / 11));
  Rng rng(6);
  int zero = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) zero += s3(rng) == 0;
  CHECK(std::abs(zero / static_cast<double>(n) - 10.0 / 11) < 0.01);
}

TEST_CASE("crop, pad and joint remapping") {
  Rng rng(7);
  const auto s = random_sequence(1, 4, 2, PoseRepresentation::JointCoordinates, rng);
  const auto padded = crop_or_pad(s, 6);
  CHECK(padded.frames == 6);
  CHECK(padded.root_at(0, 5, 2) == s.root_at(0, 3, 2));
  CHECK(crop_or_pad(padded, 4) == s);
  const auto r = remap_joints(s, std::vector<int>{1, 1, 0});
  CHECK(r.joints == 3);
  CHECK(r.pose_at(0, 2, 2, 1) == s.pose_at(0, 2, 0, 1));
}

TEST_CASE("MSEQ1 round trip and error reporting") {
  Rng rng(8);
  LabeledDataset d;
  d.class_count = 3;
  d.topology = SkeletonTopology::star5();
  for (int i = 0; i < 4; ++i) {
    d.sequences.push_back(random_sequence(2, 5, 5, PoseRepresentation::JointCoordinates, rng));
    d.labels.push_back(i % 3);
  }
  const auto bytes = encode_mseq(d);
  CHECK(decode_mseq(bytes) == d);

  const auto path = std::filesystem::temp_directory_path() / "mogen_roundtrip.mseq";
  save_dataset(d, path);
  CHECK(load_dataset(path) == d);
  std::filesystem::remove(path);

  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_mseq(bad);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::MalformedHeader);
    CHECK(e.offset() == 0);
  }

  // Header claims T=5; drop one frame worth of payload.
  auto short_payload = bytes;
  short_payload.resize(bytes.size() - 4 * (2 * 3 + 2 * 5 * 3));
  try {
    decode_mseq(short_payload);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::Truncated);
    CHECK(e.offset() == short_payload.size());
  }

  auto wrong_width = bytes;
  wrong_width[5 + 12] = 6;
  try {
    decode_mseq(wrong_width);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatError::Kind::DimensionMismatch);
    CHECK(e.offset() == 17);
  }

  auto bad_label = bytes;
  bad_label[5 + 28] = 9;
  CHECK_THROWS_AS(decode_mseq(bad_label), FormatError);

  const auto json = dataset_to_json(d);
  auto back = dataset_from_json(json);
  back.topology = d.topology;
  CHECK(back == d);
}

TEST_CASE("synthetic dataset construction") {
  Rng rng(9);
  auto spec = SynthSpec::with_class_count(4, 1);
  const auto d = synth_dataset(spec, rng);
  CHECK(d.size() == 200);
  CHECK(d.class_counts() == std::vector<std::int64_t>{50, 50, 50, 50});
  CHECK_NOTHROW(d.validate());
  for (const auto& s : d.sequences) CHECK_NOTHROW(s.validate());

  Rng again(9);
  CHECK(synth_dataset(spec, again) == d);
  CHECK(decode_mseq(encode_mseq(d)) == d);

  spec.classes.push_back("moonwalk");
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  auto mixed = SynthSpec::with_class_count(2, 1);
  mixed.classes.push_back("approach");
  CHECK_THROWS_AS(mixed.validate(), ConfigError);

  auto limbs = SynthSpec::with_class_count(2, 2);
  limbs.representation = PoseRepresentation::NormalizedLimbVectors;
  limbs.per_class = 3;
  for (const auto& s : synth_dataset(limbs, rng).sequences) CHECK_NOTHROW(s.validate());
}

TEST_CASE("synthetic root trajectories follow their parametric motions") {
  // Walking covers 1.5 * amplitude m/s; at T=16, 30 fps and amplitude >= 0.8
  // that is at least 0.6 m. Waving keeps the root fixed.
  Rng rng(10);
  SynthSpec spec;
  spec.classes = {"wave", "walk"};
  spec.per_class = 20;
  const auto d = synth_dataset(spec, rng);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.sequences[i];
    double disp = 0;
    for (int k = 0; k < 3; ++k) disp += std::pow(s.root_at(0, 15, k) - s.root_at(0, 0, k), 2);
    disp = std::sqrt(disp);
    if (d.labels[i] == 0) CHECK(disp < 0.05);
    if (d.labels[i] == 1) CHECK(disp > 0.5);
  }

  SynthSpec pair;
  pair.classes = {"approach", "mirrored_wave"};
  pair.persons = 2;
  pair.per_class = 20;
  const auto inter = synth_dataset(pair, rng);
  for (std::size_t i = 0; i < inter.size(); ++i) {
    if (inter.labels[i] != 0) continue;
    const auto& s = inter.sequences[i];
    CHECK(dist(s, 0, 1, 15) < dist(s, 0, 1, 0));
  }
  // Reference approach: distance 2 * 1.2 at the start, 0.4 once converged.
  const auto ref = synth_reference("approach", 16, 5, 2);
  CHECK(dist(ref, 0, 1, 0) == doctest::Approx(2.4));
  CHECK(dist(ref, 0, 1, 15) == doctest::Approx(0.4));
}

TEST_CASE("synthetic classes are separable by nearest centroid") {
  for (std::int64_t persons : {1, 2}) {
    Rng rng(11);
    auto spec = SynthSpec::with_class_count(persons == 1 ? 4 : 2, persons);
    spec.per_class = 60;
    const auto d = synth_dataset(spec, rng);
    const auto [val, train] = split_dataset(d, 0.5, 12);
    const std::size_t c = static_cast<std::size_t>(d.class_count);
    std::vector<std::vector<double>> centroid(c);
    std::vector<int> n(c, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto f = flatten(train.sequences[i]);
      auto& cen = centroid[train.labels[i]];
      if (cen.empty()) cen.assign(f.size(), 0.0);
      for (std::size_t k = 0; k < f.size(); ++k) cen[k] += f[k];
      ++n[train.labels[i]];
    }
    for (std::size_t k = 0; k < c; ++k) {
      for (auto& v : centroid[k]) v /= n[k];
    }
    int correct = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const auto f = flatten(val.sequences[i]);
      double best = 1e300;
      int arg = -1;
      for (std::size_t k = 0; k < c; ++k) {
        double dd = 0;
        for (std::size_t q = 0; q < f.size(); ++q) dd += std::pow(f[q] - centroid[k][q], 2);
        if (dd < best) {
          best = dd;
          arg = static_cast<int>(k);
        }
      }
      correct += arg == val.labels[i];
    }
    CHECK(correct / static_cast<double>(val.size()) >= 0.8);
  }
}
