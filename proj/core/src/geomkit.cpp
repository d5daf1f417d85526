#include "ivgen/geomkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ivgen {

namespace {

constexpr double kTieEps = 1e-15;

Quat relative_shortest(const Quat& from, const Quat& to) {
  // World-frame rotation r with r * from = to.
  Quat r = to * from.conjugate();
  return canonical(r);
}

}  // namespace

std::string_view to_string(Gripper g) {
  switch (g) {
    case Gripper::open: return "open";
    case Gripper::close: return "close";
    case Gripper::hold: return "hold";
  }
  return "?";
}

Gripper parse_gripper(std::string_view s) {
  if (s == "open") return Gripper::open;
  if (s == "close") return Gripper::close;
  if (s == "hold") return Gripper::hold;
  throw std::invalid_argument("unknown gripper command: " + std::string(s));
}

Pose Pose::from_translation(double x, double y, double z) {
  Pose p;
  p.position = Vec3(x, y, z);
  return p;
}

Pose Pose::from_yaw(double yaw, const Vec3& position) {
  Pose p;
  p.position = position;
  p.orientation = canonical(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())));
  return p;
}

double Pose::yaw() const {
  const Quat& q = orientation;
  return std::atan2(2.0 * (q.w() * q.z() + q.x() * q.y()),
                    1.0 - 2.0 * (q.y() * q.y() + q.z() * q.z()));
}

Quat canonical(const Quat& q) {
  Quat n = q.normalized();
  bool flip = n.w() < 0.0;
  if (std::abs(n.w()) <= kTieEps) {
    const double comps[3] = {n.x(), n.y(), n.z()};
    for (double c : comps) {
      if (std::abs(c) > kTieEps) {
        flip = c < 0.0;
        break;
      }
    }
    n.w() = 0.0;
  }
  if (flip) n.coeffs() = -n.coeffs();
  return n;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.position = a.position + a.orientation * b.position;
  out.orientation = canonical(a.orientation * b.orientation);
  return out;
}

Pose inverse(const Pose& p) {
  Pose out;
  out.orientation = canonical(p.orientation.conjugate());
  out.position = -(out.orientation * p.position);
  return out;
}

Vec3 rotation_between(const Quat& from, const Quat& to) {
  const Quat r = relative_shortest(from, to);
  const Vec3 v = r.vec();
  const double s = v.norm();
  if (s <= kTieEps) return Vec3::Zero();
  const double angle = 2.0 * std::atan2(s, r.w());
  return v * (angle / s);
}

double angle_between(const Quat& from, const Quat& to) {
  return rotation_between(from, to).norm();
}

Quat exp_rotation(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle <= kTieEps) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, axis_angle / angle));
}

PoseSequence transform_segment(const PoseSequence& segment,
                               const Pose& object_source,
                               const Pose& object_target) {
  const Pose retarget = compose(object_target, inverse(object_source));
  PoseSequence out;
  out.reserve(segment.size());
  for (const Pose& p : segment) out.push_back(compose(retarget, p));
  return out;
}

PoseSequence interpolate(const Pose& from, const Pose& to,
                         double max_step_translation,
                         double max_step_rotation) {
  const Vec3 dp = to.position - from.position;
  const Vec3 dr = rotation_between(from.orientation, to.orientation);
  const double need = std::max(dp.norm() / max_step_translation,
                               dr.norm() / max_step_rotation);
  // Absorb quotient rounding such as 0.1 / 0.02 = 5.000000000000001.
  const auto steps = static_cast<std::size_t>(std::ceil(need - 1e-9));

  PoseSequence out;
  out.reserve(steps + 1);
  out.push_back(from);
  for (std::size_t i = 1; i < steps; ++i) {
    const double s = static_cast<double>(i) / static_cast<double>(steps);
    Pose p;
    p.position = from.position + s * dp;
    p.orientation = canonical(exp_rotation(s * dr) * from.orientation);
    out.push_back(p);
  }
  if (steps > 0) out.push_back(to);
  return out;
}

ClampedDelta clamp(const DeltaAction& delta, const StepLimits& limits) {
  // Rescaling to the limit can land a rounding error above it; the slack
  // keeps clamp idempotent.
  constexpr double kSlack = 1.0 + 1e-12;
  ClampedDelta out{delta, false};
  const double t = delta.translation.norm();
  if (t > limits.max_translation * kSlack) {
    out.delta.translation *= limits.max_translation / t;
    out.clamped = true;
  }
  const double r = delta.rotation.norm();
  if (r > limits.max_rotation * kSlack) {
    out.delta.rotation *= limits.max_rotation / r;
    out.clamped = true;
  }
  return out;
}

DeltaAction delta_between(const Pose& from, const Pose& to) {
  DeltaAction d;
  d.translation = to.position - from.position;
  d.rotation = rotation_between(from.orientation, to.orientation);
  return d;
}

ClampedDelta delta_between(const Pose& from, const Pose& to,
                           const StepLimits& limits) {
  return clamp(delta_between(from, to), limits);
}

Pose apply_delta(const Pose& p, const DeltaAction& d) {
  Pose out;
  out.position = p.position + d.translation;
  out.orientation = canonical(exp_rotation(d.rotation) * p.orientation);
  return out;
}

bool approx_equal(const Pose& a, const Pose& b, double tol) {
  return (a.position - b.position).norm() <= tol &&
         angle_between(a.orientation, b.orientation) <= tol;
}

}  // namespace ivgen
