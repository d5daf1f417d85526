#pragma once

#include "ivgen/geomkit.hpp"
#include "ivgen/rng.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ivgen {

enum class TaskId : std::uint8_t { planar_peg_insert, geometry_assembly };
enum class Predicate : std::uint8_t { grasped, inserted, placed };
enum class FeedbackMode : std::uint8_t { full, partial, none };
enum class CorruptionKind : std::uint8_t {
  none,
  uniform_box,
  radial,
  geometry_flip
};
enum class OffsetAxis : std::uint8_t { any, x, y, z };
enum class Role : std::uint8_t { robot, expert };

std::string_view to_string(TaskId id);
std::string_view to_string(Predicate p);
std::string_view to_string(FeedbackMode m);
std::string_view to_string(CorruptionKind k);
std::string_view to_string(OffsetAxis a);
TaskId parse_task_id(std::string_view s);
FeedbackMode parse_feedback_mode(std::string_view s);
CorruptionKind parse_corruption_kind(std::string_view s);
OffsetAxis parse_offset_axis(std::string_view s);

class EpisodeOver : public std::runtime_error {
 public:
  EpisodeOver() : std::runtime_error("episode-over: horizon reached") {}
};

class InfeasibleCorruption : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  bool contains(const Vec3& p, double tol = 1e-12) const;
  bool contains(const Box& other) const;
  Vec3 clamp(const Vec3& p) const;
};

struct SubtaskSpec {
  int reference_object = 0;
  Predicate predicate = Predicate::inserted;
};

// Task geometry. Both tasks share one layout: a peg (fixed receptacle) whose
// top face obstructs a disk of `obstruction_radius`, and a nut that is either
// held from the start (peg insertion) or must be grasped by its handle first
// (geometry assembly). Poses are planar: z is height, rotation is yaw only.
struct TaskSpec {
  TaskId id = TaskId::planar_peg_insert;
  std::vector<std::string> objects;
  Box workspace;
  Box placement;
  double placement_yaw_range = 0.0;  // half range, radians
  int placed_object = 0;             // object sampled in `placement`
  int corrupted_object = 0;          // object whose observation z perturbs
  std::vector<Pose> default_object_poses;
  int held_at_start = -1;
  double goal_tolerance = 0.01;
  double grasp_radius = 0.01;
  double grasp_yaw_tolerance = 0.2;
  int horizon = 400;
  std::vector<SubtaskSpec> subtasks;
  Pose ee_start;
  double gripper_max = 0.08;
  double grip_width = 0.02;
  double peg_radius = 0.01;
  double peg_top = 0.03;
  double obstruction_radius = 0.07;
  double hover_clearance = 0.01;
  Vec3 handle_offset = Vec3(0.03, 0.0, 0.01);  // grasp point, nut frame
  FeedbackMode feedback = FeedbackMode::full;
  StepLimits limits;

  int peg_index() const;
  int nut_index() const;
  void validate() const;  // throws std::invalid_argument
};

TaskSpec make_task(TaskId id);

struct CorruptionModel {
  CorruptionKind kind = CorruptionKind::none;
  Vec3 half_widths = Vec3::Zero();
  double min_offset = 0.0;
  OffsetAxis min_offset_axis = OffsetAxis::any;
  double radial_min = 0.0;
  double radial_max = 0.0;
  double flip_probability = 0.0;
  std::uint64_t seed = 0;

  void validate() const;  // throws std::invalid_argument

  static CorruptionModel none();
  // +-4 cm per planar axis, at least 2 cm on one axis.
  static CorruptionModel peg_noise();
  // +-4 cm per planar axis, at least 1 cm on one axis.
  static CorruptionModel receptacle_noise();
  // Planar radius between 2 and 4 cm.
  static CorruptionModel radial_noise();
  // +-1 cm in x, +-7 cm in y, at least 2.5 cm in y.
  static CorruptionModel block_noise();
  static CorruptionModel geometry_flip(double probability);
};

struct ContactEvent {
  int object_a = 0;
  int object_b = 0;
  Vec3 location = Vec3::Zero();
  int step = 0;
};

struct FeedbackFeatures {
  bool active = false;
  Vec3 payload = Vec3::Zero();
  FeedbackMode mode = FeedbackMode::none;
};

struct WorldState {
  Pose ee;
  double gripper_width = 0.0;
  std::vector<Pose> objects;  // ground truth
  int held = -1;
  Pose held_offset;  // object pose in the ee frame while held
  int geometry_variant = 1;
  int step_count = 0;
  int subtask = 0;
  std::uint64_t seed = 0;
  std::uint64_t corruption_seed = 0;
  std::optional<ContactEvent> first_contact;  // within current subtask
  Vec3 contact_truth = Vec3::Zero();          // reference position then
};

struct Observation {
  Pose ee;
  double gripper_width = 0.0;
  std::vector<Pose> objects;
  FeedbackFeatures feedback;
  int subtask = 0;
};

struct StepResult {
  WorldState state;
  std::optional<ContactEvent> contact;
};

// Samples an initial state. The corruption seed defaults to one derived from
// `seed`; pass one explicitly to replay another episode's corruption draw.
WorldState reset(const TaskSpec& task, const CorruptionModel& z,
                 std::uint64_t seed,
                 std::optional<std::uint64_t> corruption_seed = std::nullopt);

StepResult step(const TaskSpec& task, const WorldState& state,
                const DeltaAction& action);

Observation observe(const TaskSpec& task, const WorldState& state,
                    const CorruptionModel& z, Role role);

// Position offset drawn from z. Requires a positional corruption kind.
Vec3 corrupt(const Vec3& true_position, const CorruptionModel& z, Rng& rng);

// The frozen offset the robot sees on `object` in the state's current
// subtask (zero for objects z does not perturb).
Vec3 corruption_offset(const TaskSpec& task, const WorldState& state,
                       const CorruptionModel& z, int object);

bool goal_satisfied(const TaskSpec& task, const WorldState& state);

// Exact equality of everything except the step counter. A deterministic
// Markov controller that maps a state onto itself stays there until the
// horizon.
bool same_configuration(const WorldState& a, const WorldState& b);

// Fully closed with nothing in hand.
bool gripper_closed_empty(const WorldState& state);
bool gripper_closed_empty(const Observation& obs);

// Drawable 2D projection of a state.
struct FrameShape {
  std::string id;
  std::string kind;  // "circle" | "marker" | "rect"
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double size = 0.0;
  std::string color;
  bool debug_only = false;

  bool operator==(const FrameShape&) const = default;
};

struct FrameDescriptor {
  int step = 0;
  int subtask = 0;
  double gripper_width = 0.0;
  std::vector<FrameShape> shapes;

  bool operator==(const FrameDescriptor&) const = default;
};

// Robot-view object poses (corrupted by z) are drawn normally; the true
// poses are added as overlays flagged debug_only.
FrameDescriptor render_frame(const TaskSpec& task, const WorldState& state,
                             const CorruptionModel& z);

}  // namespace ivgen
