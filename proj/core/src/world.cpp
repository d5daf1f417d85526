#include "ivgen/world.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ivgen {

namespace {

constexpr double kSurfaceTol = 1e-12;
constexpr double kClosedTol = 1e-9;

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<E, N>& values,
             const char* what) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument(std::string("unknown ") + what + ": " +
                              std::string(s));
}

double planar_distance(const Vec3& a, const Vec3& b) {
  return std::hypot(a.x() - b.x(), a.y() - b.y());
}

Vec3 sample_offset(const CorruptionModel& z, Rng& rng) {
  switch (z.kind) {
    case CorruptionKind::uniform_box: {
      for (int draw = 0; draw < 10000; ++draw) {
        Vec3 o;
        for (int i = 0; i < 3; ++i) {
          const double h = z.half_widths[i];
          o[i] = h > 0.0 ? rng.uniform(-h, h) : 0.0;
        }
        bool ok = true;
        switch (z.min_offset_axis) {
          case OffsetAxis::any:
            ok = o.cwiseAbs().maxCoeff() >= z.min_offset;
            break;
          case OffsetAxis::x: ok = std::abs(o.x()) >= z.min_offset; break;
          case OffsetAxis::y: ok = std::abs(o.y()) >= z.min_offset; break;
          case OffsetAxis::z: ok = std::abs(o.z()) >= z.min_offset; break;
        }
        if (ok) return o;
      }
      throw InfeasibleCorruption(
          "infeasible-constraint: no offset met min_offset in 10000 draws");
    }
    case CorruptionKind::radial: {
      const double r2 = rng.uniform(z.radial_min * z.radial_min,
                                    z.radial_max * z.radial_max);
      const double r = std::sqrt(r2);
      const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
      return {r * std::cos(a), r * std::sin(a), 0.0};
    }
    default:
      throw std::invalid_argument("corrupt: kind has no positional offset");
  }
}

bool positional(CorruptionKind k) {
  return k == CorruptionKind::uniform_box || k == CorruptionKind::radial;
}

int geometry_variant_for(const CorruptionModel& z, std::uint64_t cseed) {
  if (z.kind != CorruptionKind::geometry_flip) return 1;
  Rng rng(derive_seed({cseed, z.seed, 0x67656f6dULL}));
  return rng.bernoulli(z.flip_probability) ? 2 : 1;
}

Pose flipped(const Pose& p) {
  return compose(p, Pose::from_yaw(std::numbers::pi));
}

}  // namespace

std::string_view to_string(TaskId id) {
  switch (id) {
    case TaskId::planar_peg_insert: return "planar_peg_insert";
    case TaskId::geometry_assembly: return "geometry_assembly";
  }
  return "?";
}

std::string_view to_string(Predicate p) {
  switch (p) {
    case Predicate::grasped: return "grasped";
    case Predicate::inserted: return "inserted";
    case Predicate::placed: return "placed";
  }
  return "?";
}

std::string_view to_string(FeedbackMode m) {
  switch (m) {
    case FeedbackMode::full: return "full";
    case FeedbackMode::partial: return "partial";
    case FeedbackMode::none: return "none";
  }
  return "?";
}

std::string_view to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::none: return "none";
    case CorruptionKind::uniform_box: return "uniform_box";
    case CorruptionKind::radial: return "radial";
    case CorruptionKind::geometry_flip: return "geometry_flip";
  }
  return "?";
}

std::string_view to_string(OffsetAxis a) {
  switch (a) {
    case OffsetAxis::any: return "any";
    case OffsetAxis::x: return "x";
    case OffsetAxis::y: return "y";
    case OffsetAxis::z: return "z";
  }
  return "?";
}

TaskId parse_task_id(std::string_view s) {
  return parse_enum(s,
                    std::array{TaskId::planar_peg_insert,
                               TaskId::geometry_assembly},
                    "task");
}

FeedbackMode parse_feedback_mode(std::string_view s) {
  return parse_enum(
      s,
      std::array{FeedbackMode::full, FeedbackMode::partial, FeedbackMode::none},
      "feedback mode");
}

CorruptionKind parse_corruption_kind(std::string_view s) {
  return parse_enum(s,
                    std::array{CorruptionKind::none, CorruptionKind::uniform_box,
                               CorruptionKind::radial,
                               CorruptionKind::geometry_flip},
                    "corruption kind");
}

OffsetAxis parse_offset_axis(std::string_view s) {
  return parse_enum(
      s, std::array{OffsetAxis::any, OffsetAxis::x, OffsetAxis::y, OffsetAxis::z},
      "offset axis");
}

bool Box::contains(const Vec3& p, double tol) const {
  for (int i = 0; i < 3; ++i) {
    if (p[i] < lo[i] - tol || p[i] > hi[i] + tol) return false;
  }
  return true;
}

bool Box::contains(const Box& other) const {
  return contains(other.lo) && contains(other.hi);
}

Vec3 Box::clamp(const Vec3& p) const { return p.cwiseMax(lo).cwiseMin(hi); }

int TaskSpec::peg_index() const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i] == "peg") return static_cast<int>(i);
  }
  throw std::logic_error("task has no peg");
}

int TaskSpec::nut_index() const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i] == "nut") return static_cast<int>(i);
  }
  throw std::logic_error("task has no nut");
}

void TaskSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if ((workspace.hi - workspace.lo).minCoeff() < 0.0) fail("workspace inverted");
  if ((placement.hi - placement.lo).minCoeff() < 0.0) fail("placement inverted");
  if (!workspace.contains(placement)) fail("placement region outside workspace");
  if (!(goal_tolerance > 0.0)) fail("goal tolerance must be > 0");
  if (horizon <= 0) fail("horizon must be > 0");
  if (subtasks.empty()) fail("task needs at least one subtask");
  const int n = static_cast<int>(objects.size());
  for (const auto& s : subtasks) {
    if (s.reference_object < 0 || s.reference_object >= n) {
      fail("subtask reference object does not exist");
    }
  }
  if (default_object_poses.size() != objects.size()) {
    fail("default_object_poses size mismatch");
  }
  if (placed_object < 0 || placed_object >= n) fail("bad placed_object");
  if (corrupted_object < 0 || corrupted_object >= n) fail("bad corrupted_object");
  if (held_at_start >= n) fail("bad held_at_start");
  if (!(limits.max_translation > 0.0) || !(limits.max_rotation > 0.0)) {
    fail("controller limits must be > 0");
  }
  if (!(grasp_radius > 0.0)) fail("grasp radius must be > 0");
  if (!(obstruction_radius > goal_tolerance)) {
    fail("obstruction radius must exceed goal tolerance");
  }
}

TaskSpec make_task(TaskId id) {
  TaskSpec t;
  t.id = id;
  t.objects = {"nut", "peg"};
  t.workspace = {Vec3(-0.2, -0.2, 0.0), Vec3(0.2, 0.2, 0.2)};
  t.ee_start = Pose::from_translation(0.0, 0.0, 0.06);
  switch (id) {
    case TaskId::planar_peg_insert:
      // Nut in hand from the start; the peg is sampled in a 10 cm square.
      t.placement = {Vec3(0.03, -0.05, 0.0), Vec3(0.13, 0.05, 0.0)};
      t.placed_object = 1;
      t.corrupted_object = 1;
      t.held_at_start = 0;
      t.default_object_poses = {t.ee_start,
                                Pose::from_translation(0.08, 0.0, 0.0)};
      t.subtasks = {{1, Predicate::inserted}};
      t.feedback = FeedbackMode::full;
      break;
    case TaskId::geometry_assembly:
      // Nut on the table in a 0.5 cm x 11.5 cm strip with random yaw; the
      // peg is fixed.
      t.placement = {Vec3(-0.0825, -0.0575, 0.0), Vec3(-0.0775, 0.0575, 0.0)};
      t.placement_yaw_range = std::numbers::pi / 4.0;
      t.placed_object = 0;
      t.corrupted_object = 0;
      t.held_at_start = -1;
      t.default_object_poses = {Pose::from_translation(-0.08, 0.0, 0.0),
                                Pose::from_translation(0.08, 0.0, 0.0)};
      t.subtasks = {{0, Predicate::grasped}, {1, Predicate::placed}};
      t.feedback = FeedbackMode::none;
      break;
  }
  return t;
}

void CorruptionModel::validate() const {
  if (half_widths.minCoeff() < 0.0) {
    throw std::invalid_argument("corruption half-widths must be >= 0");
  }
  if (kind == CorruptionKind::uniform_box &&
      min_offset > half_widths.maxCoeff()) {
    throw std::invalid_argument("min_offset exceeds the largest half-width");
  }
  if (min_offset < 0.0) throw std::invalid_argument("min_offset must be >= 0");
  if (flip_probability < 0.0 || flip_probability > 1.0) {
    throw std::invalid_argument("flip_probability must lie in [0, 1]");
  }
  if (radial_min < 0.0 || radial_max < radial_min) {
    throw std::invalid_argument("radial bounds must satisfy 0 <= min <= max");
  }
}

CorruptionModel CorruptionModel::none() { return {}; }

CorruptionModel CorruptionModel::peg_noise() {
  CorruptionModel z;
  z.kind = CorruptionKind::uniform_box;
  z.half_widths = Vec3(0.04, 0.04, 0.0);
  z.min_offset = 0.02;
  return z;
}

CorruptionModel CorruptionModel::receptacle_noise() {
  CorruptionModel z = peg_noise();
  z.min_offset = 0.01;
  return z;
}

CorruptionModel CorruptionModel::radial_noise() {
  CorruptionModel z;
  z.kind = CorruptionKind::radial;
  z.radial_min = 0.02;
  z.radial_max = 0.04;
  return z;
}

CorruptionModel CorruptionModel::block_noise() {
  CorruptionModel z;
  z.kind = CorruptionKind::uniform_box;
  z.half_widths = Vec3(0.01, 0.07, 0.0);
  z.min_offset = 0.025;
  z.min_offset_axis = OffsetAxis::y;
  return z;
}

CorruptionModel CorruptionModel::geometry_flip(double probability) {
  CorruptionModel z;
  z.kind = CorruptionKind::geometry_flip;
  z.flip_probability = probability;
  return z;
}

WorldState reset(const TaskSpec& task, const CorruptionModel& z,
                 std::uint64_t seed,
                 std::optional<std::uint64_t> corruption_seed) {
  WorldState s;
  s.seed = seed;
  s.corruption_seed = corruption_seed.value_or(derive_seed({seed, 2}));
  s.ee = task.ee_start;
  s.objects = task.default_object_poses;

  Rng rng(derive_seed({seed, 1}));
  Vec3 pos;
  for (int i = 0; i < 3; ++i) {
    const double lo = task.placement.lo[i];
    const double hi = task.placement.hi[i];
    pos[i] = hi > lo ? rng.uniform(lo, hi) : lo;
  }
  const double yaw = task.placement_yaw_range > 0.0
                         ? rng.uniform(-task.placement_yaw_range,
                                       task.placement_yaw_range)
                         : 0.0;
  Pose placed = Pose::from_yaw(yaw, pos);

  s.geometry_variant = task.id == TaskId::geometry_assembly
                           ? geometry_variant_for(z, s.corruption_seed)
                           : 1;
  // The true nut frame always has its handle on +x; the alternate geometry
  // is the sampled (registered) pose turned half a revolution.
  if (s.geometry_variant == 2) placed = flipped(placed);
  s.objects[task.placed_object] = placed;

  if (task.held_at_start >= 0) {
    s.held = task.held_at_start;
    s.objects[s.held] = s.ee;
    s.held_offset = Pose::identity();
    s.gripper_width = task.grip_width;
  } else {
    s.gripper_width = task.gripper_max;
  }
  return s;
}

StepResult step(const TaskSpec& task, const WorldState& state,
                const DeltaAction& action) {
  if (state.step_count >= task.horizon) throw EpisodeOver();

  StepResult out{state, std::nullopt};
  WorldState& s = out.state;
  const DeltaAction a = clamp(action, task.limits).delta;
  const bool in_task = s.subtask < static_cast<int>(task.subtasks.size());

  Pose target = apply_delta(s.ee, a);
  target.position = task.workspace.clamp(target.position);

  bool completed = false;
  if (s.held >= 0) {
    Pose obj_next = compose(target, s.held_offset);
    if (obj_next.position.z() < 0.0) {
      target.position.z() -= obj_next.position.z();
      obj_next = compose(target, s.held_offset);
    }
    const SubtaskSpec* sub = in_task ? &task.subtasks[s.subtask] : nullptr;
    const bool seating = sub != nullptr &&
                         (sub->predicate == Predicate::inserted ||
                          sub->predicate == Predicate::placed);
    if (seating) {
      const Vec3& peg = s.objects[sub->reference_object].position;
      const Pose obj_now = compose(s.ee, s.held_offset);
      const double top = task.peg_top;
      const double miss_next = planar_distance(obj_next.position, peg);
      const bool below_next = obj_next.position.z() < top - kSurfaceTol;
      const bool above_now = obj_now.position.z() >= top - kSurfaceTol;
      bool blocked = false;
      if (below_next && above_now) {
        if (miss_next <= task.goal_tolerance) {
          completed = true;
        } else if (miss_next < task.obstruction_radius) {
          target.position.z() += top - obj_next.position.z();
          blocked = true;
        }
      } else if (below_next &&
                 planar_distance(obj_now.position, peg) >=
                     task.obstruction_radius &&
                 miss_next < task.obstruction_radius) {
        // Sliding sideways into the peg below its top face.
        target.position.x() = s.ee.position.x();
        target.position.y() = s.ee.position.y();
        blocked = true;
      }
      if (blocked) {
        obj_next = compose(target, s.held_offset);
        Vec3 dir(obj_next.position.x() - peg.x(),
                 obj_next.position.y() - peg.y(), 0.0);
        const double n = dir.norm();
        dir = n > 0.0 ? Vec3(dir / n) : Vec3::UnitX();
        ContactEvent c;
        c.object_a = s.held;
        c.object_b = sub->reference_object;
        c.location = Vec3(peg.x(), peg.y(), top) + task.peg_radius * dir;
        c.step = s.step_count;
        out.contact = c;
      }
    }
    s.ee = target;
    s.objects[s.held] = obj_next;
    if (completed) s.held = -1;
  } else {
    s.ee = target;
  }

  switch (a.gripper) {
    case Gripper::close:
      if (s.held < 0 && s.gripper_width > kClosedTol) {
        bool grasped = false;
        if (in_task && !completed &&
            task.subtasks[s.subtask].predicate == Predicate::grasped) {
          const int ref = task.subtasks[s.subtask].reference_object;
          const Pose& obj = s.objects[ref];
          const Vec3 handle = obj.position + obj.orientation * task.handle_offset;
          const double dyaw =
              std::remainder(s.ee.yaw() - obj.yaw(), std::numbers::pi);
          if ((s.ee.position - handle).norm() <= task.grasp_radius &&
              std::abs(dyaw) <= task.grasp_yaw_tolerance) {
            s.held = ref;
            s.held_offset = compose(inverse(s.ee), obj);
            s.gripper_width = task.grip_width;
            completed = true;
            grasped = true;
          }
        }
        if (!grasped) s.gripper_width = 0.0;
      }
      break;
    case Gripper::open:
      if (s.held >= 0) {
        s.objects[s.held].position.z() = 0.0;
        s.held = -1;
      }
      s.gripper_width = task.gripper_max;
      break;
    case Gripper::hold:
      break;
  }

  if (out.contact && !s.first_contact) {
    s.first_contact = out.contact;
    s.contact_truth =
        s.objects[task.subtasks[s.subtask].reference_object].position;
  }
  if (completed) {
    ++s.subtask;
    s.first_contact.reset();
    s.contact_truth = Vec3::Zero();
  }
  ++s.step_count;
  return out;
}

Vec3 corrupt(const Vec3& true_position, const CorruptionModel& z, Rng& rng) {
  return true_position + sample_offset(z, rng);
}

Vec3 corruption_offset(const TaskSpec& task, const WorldState& state,
                       const CorruptionModel& z, int object) {
  if (!positional(z.kind) || object != task.corrupted_object) {
    return Vec3::Zero();
  }
  Rng rng(derive_seed({state.corruption_seed, z.seed,
                       static_cast<std::uint64_t>(state.subtask),
                       static_cast<std::uint64_t>(object)}));
  return sample_offset(z, rng);
}

Observation observe(const TaskSpec& task, const WorldState& state,
                    const CorruptionModel& z, Role role) {
  Observation o;
  o.ee = state.ee;
  o.gripper_width = state.gripper_width;
  o.objects = state.objects;
  o.subtask = state.subtask;
  if (role == Role::robot) {
    const int c = task.corrupted_object;
    if (positional(z.kind)) {
      o.objects[c].position += corruption_offset(task, state, z, c);
    } else if (z.kind == CorruptionKind::geometry_flip &&
               state.geometry_variant == 2) {
      o.objects[c] = flipped(state.objects[c]);
    }
  }
  o.feedback.mode = task.feedback;
  if (state.first_contact && task.feedback != FeedbackMode::none) {
    o.feedback.active = true;
    if (task.feedback == FeedbackMode::full) {
      o.feedback.payload = state.contact_truth;
    } else {
      Vec3 d = state.contact_truth - state.first_contact->location;
      d.z() = 0.0;
      const double n = d.norm();
      o.feedback.payload = n > 0.0 ? Vec3(d / n) : Vec3::UnitX();
    }
  }
  return o;
}

bool goal_satisfied(const TaskSpec& task, const WorldState& state) {
  return state.subtask >= static_cast<int>(task.subtasks.size());
}

bool same_configuration(const WorldState& a, const WorldState& b) {
  auto pose_eq = [](const Pose& p, const Pose& q) {
    return p.position == q.position &&
           p.orientation.coeffs() == q.orientation.coeffs();
  };
  if (!pose_eq(a.ee, b.ee) || a.gripper_width != b.gripper_width ||
      a.held != b.held || a.subtask != b.subtask ||
      a.geometry_variant != b.geometry_variant ||
      a.first_contact.has_value() != b.first_contact.has_value() ||
      a.contact_truth != b.contact_truth ||
      a.objects.size() != b.objects.size()) {
    return false;
  }
  if (a.held >= 0 && !pose_eq(a.held_offset, b.held_offset)) return false;
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    if (!pose_eq(a.objects[i], b.objects[i])) return false;
  }
  return true;
}

bool gripper_closed_empty(const WorldState& state) {
  return state.held < 0 && state.gripper_width <= kClosedTol;
}

bool gripper_closed_empty(const Observation& obs) {
  return obs.gripper_width <= kClosedTol;
}

FrameDescriptor render_frame(const TaskSpec& task, const WorldState& state,
                             const CorruptionModel& z) {
  FrameDescriptor f;
  f.step = state.step_count;
  f.subtask = state.subtask;
  f.gripper_width = state.gripper_width;
  f.shapes.push_back({"ee", "marker", state.ee.position.x(),
                      state.ee.position.y(), state.ee.yaw(),
                      state.ee.position.z(), "#1f77b4", false});
  const Observation robot = observe(task, state, z, Role::robot);
  for (std::size_t i = 0; i < task.objects.size(); ++i) {
    const bool is_peg = task.objects[i] == "peg";
    const double size = is_peg ? task.peg_radius : task.obstruction_radius -
                                                       task.peg_radius;
    const Pose& seen = robot.objects[i];
    f.shapes.push_back({task.objects[i], "circle", seen.position.x(),
                        seen.position.y(), seen.yaw(), size,
                        is_peg ? "#2ca02c" : "#ff7f0e", false});
    const Pose& truth = state.objects[i];
    f.shapes.push_back({task.objects[i] + ".true", "circle",
                        truth.position.x(), truth.position.y(), truth.yaw(),
                        size, "#d62728", true});
  }
  return f;
}

}  // namespace ivgen
