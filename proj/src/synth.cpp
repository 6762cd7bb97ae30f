#include "mogen/synth.hpp"

#include "mogen/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

namespace mogen {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kPelvisHeight = 0.95;

double rad(double deg) { return deg * kPi / 180.0; }

struct Vec3 {
  double x = 0, y = 0, z = 0;
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
};

// Joint angles of one person in one frame. Index 0 is the left side, 1 the right.
struct BodyState {
  std::array<double, 2> arm_abd{rad(10), rad(10)};
  std::array<double, 2> arm_fwd{0, 0};
  std::array<double, 2> elbow{rad(10), rad(10)};
  std::array<double, 2> leg_abd{0, 0};
  std::array<double, 2> leg_fwd{0, 0};
  std::array<double, 2> knee{0, 0};
  double lean = 0;
  double yaw = 0;
  Vec3 root{0, kPelvisHeight, 0};
};

struct Jitter {
  double amp = 1.0;
  double phase = 0.0;
  double x0 = 0.0;
  double z0 = 0.0;
};

// Limb direction from abduction (sideways raise) and forward swing; (0,-1,0) at rest.
Vec3 limb_dir(double side, double abd, double fwd) {
  return {side * std::sin(abd) * std::cos(fwd), -std::cos(abd) * std::cos(fwd), std::sin(fwd)};
}

// Named anatomical points relative to the pelvis, in the NTU slot order.
std::array<Vec3, 24> body_points(const BodyState& b) {
  auto trunk = [&](double h) { return Vec3{0, h * std::cos(b.lean), h * std::sin(b.lean)}; };
  const Vec3 spine_mid = trunk(0.25), spine_shoulder = trunk(0.5), neck = trunk(0.58), head = trunk(0.72);
  std::array<Vec3, 2> shoulder, elbow, wrist, hand, tip, thumb, hip, knee, ankle, foot;
  for (int s = 0; s < 2; ++s) {
    const double side = s == 0 ? -1.0 : 1.0;
    shoulder[s] = spine_shoulder + Vec3{side * 0.18, 0, 0};
    const Vec3 upper = limb_dir(side, b.arm_abd[s], b.arm_fwd[s]);
    const Vec3 fore = limb_dir(side, b.arm_abd[s], b.arm_fwd[s] + b.elbow[s]);
    elbow[s] = shoulder[s] + upper * 0.28;
    wrist[s] = elbow[s] + fore * 0.25;
    hand[s] = wrist[s] + fore * 0.08;
    tip[s] = hand[s] + fore * 0.06;
    thumb[s] = wrist[s] + fore * 0.04 + Vec3{0, 0, 0.03};
    hip[s] = Vec3{side * 0.1, -0.02, 0};
    const Vec3 thigh = limb_dir(side, b.leg_abd[s], b.leg_fwd[s]);
    const Vec3 shin = limb_dir(side, b.leg_abd[s], b.leg_fwd[s] - b.knee[s]);
    knee[s] = hip[s] + thigh * 0.42;
    ankle[s] = knee[s] + shin * 0.40;
    foot[s] = ankle[s] + Vec3{0, -0.04, 0.13};
  }
  std::array<Vec3, 24> pts{spine_mid, neck,     head,     shoulder[0], elbow[0], wrist[0], hand[0],  shoulder[1],
                           elbow[1],  wrist[1], hand[1],  hip[0],      knee[0],  ankle[0], foot[0],  hip[1],
                           knee[1],   ankle[1], foot[1],  spine_shoulder, tip[0], thumb[0], tip[1],  thumb[1]};
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  for (auto& p : pts) p = Vec3{p.x * c + p.z * s, p.y, -p.x * s + p.z * c};
  return pts;
}

// Slot selection per topology: star5 keeps head, hands and feet.
std::vector<int> slots_for(std::int64_t joints) {
  if (joints == 5) return {2, 6, 10, 14, 18};
  if (joints == 24) {
    std::vector<int> all(24);
    for (int i = 0; i < 24; ++i) all[i] = i;
    return all;
  }
  throw ConfigError("synthetic data supports 5 or 24 pose slots, got " + std::to_string(joints));
}

// Frame context handed to the class motion functions.
struct FrameCtx {
  double sec;       // time in seconds
  double progress;  // frame index / (T - 1), 0 for single-frame sequences
  int person;
  int persons;
};

using MotionFn = std::function<BodyState(const FrameCtx&, const Jitter&)>;

BodyState standing(const Jitter& j) {
  BodyState b;
  b.root = {j.x0, kPelvisHeight, j.z0};
  return b;
}

void apply_gait(BodyState& b, double sec, double amp, double phase, double strength) {
  const double w = 2 * kPi * 1.8;
  const double swing = strength * amp * rad(25) * std::sin(w * sec + phase);
  b.leg_fwd = {swing, -swing};
  b.knee = {strength * rad(15) * (1 + std::sin(w * sec + phase)), strength * rad(15) * (1 - std::sin(w * sec + phase))};
  b.arm_fwd = {-0.7 * swing, 0.7 * swing};
}

void apply_wave(BodyState& b, int side, double sec, double amp, double phase) {
  const double osc = std::sin(2 * kPi * 1.5 * sec + phase);
  b.arm_abd[side] = rad(130 + 25 * amp * osc);
  b.elbow[side] = rad(30 + 30 * amp * osc);
}

// Circle layout shared by the interaction classes: person p sits at angle
// 2*pi*p/P around the group centre.
double seat_angle(const FrameCtx& f) { return 2 * kPi * f.person / f.persons; }

double yaw_towards(double dx, double dz) { return std::atan2(dx, dz); }

const std::vector<std::pair<std::string, MotionFn>>& single_registry() {
  static const std::vector<std::pair<std::string, MotionFn>> reg = {
      {"wave",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b = standing(j);
         apply_wave(b, 1, f.sec, j.amp, j.phase);
         return b;
       }},
      {"walk",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b = standing(j);
         apply_gait(b, f.sec, j.amp, j.phase, 1.0);
         b.root.z += 1.5 * j.amp * f.sec;
         b.root.y += 0.02 * std::sin(2 * (2 * kPi * 1.8 * f.sec + j.phase));
         return b;
       }},
      {"squat",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b = standing(j);
         const double q = j.amp * 0.5 * (1 - std::cos(2 * kPi * 0.9 * f.sec + j.phase));
         b.knee = {q * rad(90), q * rad(90)};
         b.leg_fwd = {q * rad(60), q * rad(60)};
         b.arm_fwd = {q * rad(80), q * rad(80)};
         b.lean = q * rad(25);
         b.root.y -= 0.35 * q;
         return b;
       }},
      {"jumping_jack",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b = standing(j);
         const double q = 0.5 * (1 - std::cos(2 * kPi * 1.2 * f.sec + j.phase));
         b.arm_abd = {rad(15) + j.amp * rad(140) * q, rad(15) + j.amp * rad(140) * q};
         b.leg_abd = {rad(5) + j.amp * rad(20) * q, rad(5) + j.amp * rad(20) * q};
         b.root.y += 0.06 * q;
         return b;
       }},
      {"punch",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b = standing(j);
         const double s = std::sin(2 * kPi * 1.4 * f.sec + j.phase);
         const double r = std::max(0.0, s), l = std::max(0.0, -s);
         b.arm_fwd = {j.amp * rad(85) * l, j.amp * rad(85) * r};
         b.elbow = {rad(90) * (1 - l), rad(90) * (1 - r)};
         b.lean = rad(5);
         return b;
       }},
      {"kick",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b = standing(j);
         const double k = std::max(0.0, std::sin(2 * kPi * 1.1 * f.sec + j.phase));
         b.leg_fwd[1] = j.amp * rad(70) * k;
         b.knee[1] = rad(40) * k * (1 - k);
         b.arm_abd = {rad(35), rad(35)};
         return b;
       }},
  };
  return reg;
}

const std::vector<std::pair<std::string, MotionFn>>& interaction_registry() {
  static const std::vector<std::pair<std::string, MotionFn>> reg = {
      // Converge on the group centre; once the pair is closer than 0.5 m the
      // first person extends the right arm.
      {"approach",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b;
         const double r0 = 1.2 * j.amp;
         const double travel = std::min(1.0, f.progress / 0.6);
         const double r = r0 + (0.2 - r0) * travel;
         const double a = seat_angle(f);
         b.root = {j.x0 + r * std::cos(a), kPelvisHeight, j.z0 + r * std::sin(a)};
         b.yaw = yaw_towards(-std::cos(a), -std::sin(a));
         apply_gait(b, f.sec, j.amp, j.phase, travel < 1.0 ? 1.0 : 0.0);
         if (f.person == 0 && 2 * r < 0.5) {
           b.arm_fwd[1] = rad(85);
           b.elbow[1] = 0;
         }
         return b;
       }},
      // Face each other and wave phase-locked with mirrored arms.
      {"mirrored_wave",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b;
         const double r = 1.0 * j.amp;
         const double a = seat_angle(f);
         b.root = {j.x0 + r * std::cos(a), kPelvisHeight, j.z0 + r * std::sin(a)};
         b.yaw = yaw_towards(-std::cos(a), -std::sin(a));
         apply_wave(b, f.person % 2 == 0 ? 1 : 0, f.sec, j.amp, j.phase);
         return b;
       }},
      // Walk together around the group centre.
      {"orbit",
       [](const FrameCtx& f, const Jitter& j) {
         BodyState b;
         const double r = 0.8 * j.amp;
         const double a = seat_angle(f) + 1.5 * f.sec;
         b.root = {j.x0 + r * std::cos(a), kPelvisHeight, j.z0 + r * std::sin(a)};
         b.yaw = yaw_towards(-std::sin(a), std::cos(a));
         apply_gait(b, f.sec, j.amp, j.phase, 1.0);
         return b;
       }},
  };
  return reg;
}

const MotionFn& find_motion(const std::string& name, std::int64_t persons) {
  const auto& reg = persons == 1 ? single_registry() : interaction_registry();
  for (const auto& [n, fn] : reg) {
    if (n == name) return fn;
  }
  const auto& other = persons == 1 ? interaction_registry() : single_registry();
  for (const auto& entry : other) {
    if (entry.first == name) {
      throw ConfigError("class '" + name + "' does not fit a " + std::to_string(persons) + "-person dataset");
    }
  }
  throw ConfigError("unknown motion class '" + name + "'");
}

MotionSequence render(const MotionFn& fn, const Jitter& jitter, std::int64_t frames, std::int64_t joints,
                      std::int64_t persons, double fps, double noise, Rng* rng) {
  const auto slots = slots_for(joints);
  MotionSequence seq = MotionSequence::zeros(persons, frames, joints, PoseRepresentation::JointCoordinates);
  std::normal_distribution<double> white(0.0, noise);
  for (std::int64_t p = 0; p < persons; ++p) {
    for (std::int64_t t = 0; t < frames; ++t) {
      FrameCtx ctx{static_cast<double>(t) / fps, frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0,
                   static_cast<int>(p), static_cast<int>(persons)};
      const BodyState b = fn(ctx, jitter);
      const auto pts = body_points(b);
      seq.root_at(p, t, 0) = b.root.x;
      seq.root_at(p, t, 1) = b.root.y;
      seq.root_at(p, t, 2) = b.root.z;
      for (std::int64_t j = 0; j < joints; ++j) {
        const Vec3& q = pts[slots[j]];
        const double xyz[3] = {q.x, q.y, q.z};
        for (int k = 0; k < 3; ++k) seq.pose_at(p, t, j, k) = xyz[k] + (rng && noise > 0 ? white(*rng) : 0.0);
      }
    }
  }
  return seq;
}

void round_to_f32(MotionSequence& s) {
  for (auto& v : s.root) v = static_cast<double>(static_cast<float>(v));
  for (auto& v : s.pose) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

const std::vector<std::string>& single_person_classes() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : single_registry()) n.push_back(e.first);
    return n;
  }();
  return names;
}

const std::vector<std::string>& interaction_classes() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& e : interaction_registry()) n.push_back(e.first);
    return n;
  }();
  return names;
}

SynthSpec SynthSpec::with_class_count(std::int64_t count, std::int64_t persons) {
  const auto& pool = persons == 1 ? single_person_classes() : interaction_classes();
  if (count < 1 || count > static_cast<std::int64_t>(pool.size())) {
    throw ConfigError("only " + std::to_string(pool.size()) + " built-in classes for this person count");
  }
  SynthSpec s;
  s.persons = persons;
  s.classes.assign(pool.begin(), pool.begin() + count);
  return s;
}

void SynthSpec::validate() const {
  if (persons < 1 || persons > 5) throw ConfigError("synthetic data supports 1 to 5 persons");
  if (classes.size() < 2) throw ConfigError("synthetic data needs at least two classes");
  if (per_class < 1 || frames < 1) throw ConfigError("per_class and frames must be positive");
  if (!(fps > 0)) throw ConfigError("fps must be positive");
  slots_for(joints);
  for (const auto& c : classes) find_motion(c, persons);
}

LabeledDataset synth_dataset(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  LabeledDataset data;
  data.class_count = static_cast<int>(spec.classes.size());
  data.class_names = spec.classes;
  data.topology = SkeletonTopology::for_joint_count(spec.joints);
  std::uniform_real_distribution<double> amp(0.8, 1.2), phase(0.0, 2 * kPi), place(-0.5, 0.5);
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const MotionFn& fn = find_motion(spec.classes[c], spec.persons);
    for (std::int64_t i = 0; i < spec.per_class; ++i) {
      Jitter j;
      j.amp = amp(rng);
      j.phase = phase(rng);
      j.x0 = place(rng);
      j.z0 = place(rng);
      MotionSequence s = render(fn, j, spec.frames, spec.joints, spec.persons, spec.fps, spec.pose_noise, &rng);
      if (spec.representation == PoseRepresentation::NormalizedLimbVectors) {
        s = to_limb_vectors(s, data.topology);
      } else if (spec.representation != PoseRepresentation::JointCoordinates) {
        throw ConfigError("synthetic data is generated as joint coordinates or limb vectors");
      }
      round_to_f32(s);
      data.sequences.push_back(std::move(s));
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

MotionSequence synth_reference(const std::string& cls, std::int64_t frames, std::int64_t joints,
                               std::int64_t persons, double fps) {
  return render(find_motion(cls, persons), Jitter{}, frames, joints, persons, fps, 0.0, nullptr);
}

}  // namespace mogen
