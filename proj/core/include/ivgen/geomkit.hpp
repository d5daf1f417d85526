#pragma once

#include <Eigen/Geometry>

#include <cstdint>
#include <string_view>
#include <vector>

namespace ivgen {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

// Rigid transform. The orientation is kept unit-norm with w >= 0 so equal
// rotations serialize to equal bytes.
struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  static Pose identity() { return {}; }
  static Pose from_translation(double x, double y, double z);
  static Pose from_yaw(double yaw, const Vec3& position = Vec3::Zero());

  double yaw() const;
};

// Returns q normalized with w >= 0 (and, for w == 0, the first nonzero
// vector component positive).
Quat canonical(const Quat& q);

enum class Gripper : std::uint8_t { open, close, hold };
std::string_view to_string(Gripper g);
Gripper parse_gripper(std::string_view s);

struct DeltaAction {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();  // axis-angle, world frame
  Gripper gripper = Gripper::hold;
};

struct StepLimits {
  double max_translation = 0.005;
  double max_rotation = 0.05;
};

struct ClampedDelta {
  DeltaAction delta;
  bool clamped = false;
};

using PoseSequence = std::vector<Pose>;

// a then b's frame: the homogeneous product T_a * T_b.
Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

// Rotation taking `from` to `to` as an axis-angle vector with angle in
// [0, pi]. At exactly pi the axis sign is chosen so its first nonzero
// component is positive.
Vec3 rotation_between(const Quat& from, const Quat& to);
double angle_between(const Quat& from, const Quat& to);

Quat exp_rotation(const Vec3& axis_angle);

// Retargets `segment` so every pose keeps its offset relative to the object
// frame when the object moves from `object_source` to `object_target`.
PoseSequence transform_segment(const PoseSequence& segment,
                               const Pose& object_source,
                               const Pose& object_target);

// Linear in position, shortest-arc in orientation. Both endpoints included;
// the step count is the smallest that keeps every step within both limits.
PoseSequence interpolate(const Pose& from, const Pose& to,
                         double max_step_translation,
                         double max_step_rotation);

ClampedDelta clamp(const DeltaAction& delta, const StepLimits& limits);

// World-frame delta taking `from` to `to`, clamped by magnitude.
ClampedDelta delta_between(const Pose& from, const Pose& to,
                           const StepLimits& limits);
DeltaAction delta_between(const Pose& from, const Pose& to);

Pose apply_delta(const Pose& p, const DeltaAction& d);

bool approx_equal(const Pose& a, const Pose& b, double tol);

}  // namespace ivgen
