#pragma once

#include "ivgen/geomkit.hpp"
#include "ivgen/policy.hpp"
#include "ivgen/trajectory.hpp"
#include "ivgen/world.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivgen {

struct Segment {
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive
  Actor actor = Actor::policy;
  int subtask = 0;
  // True reference-object pose at the segment start (expert segments).
  std::optional<Pose> reference_pose;
};

// Maximal runs of one actor label.
std::vector<Segment> segment(const Trajectory& traj, const TaskSpec& task);

// Poses the controller was commanded through over steps [start, end): the
// start pose, then each step's clamped target. Length = steps + 1.
PoseSequence commanded_poses(const TaskSpec& task, const Trajectory& traj,
                             std::size_t start, std::size_t end);

std::optional<std::size_t> detect_termination(const Trajectory& traj,
                                              Criterion criterion,
                                              std::size_t from = 0);

class InfeasibleAdapt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Re-simulates a complete recorded episode from its header and actions.
// Returns the true state before every step plus the final state. Throws
// std::invalid_argument for suffix records or when the recorded robot
// observations disagree with the simulation.
std::vector<WorldState> resimulate(const TaskSpec& task, const Trajectory& traj);

// A recorded span ready for retargeting.
struct SourceSpan {
  Segment seg;
  PoseSequence poses;             // steps + 1
  std::vector<Gripper> grippers;  // one per step
  Pose reference_pose;            // true pose at span start
  int reference_object = 0;
  // Held body in the ee frame at span start; retargeting then preserves the
  // body's pose relative to the reference object instead of the ee's.
  std::optional<Pose> held_offset;
};

struct AdaptedSegment {
  PoseSequence poses;
  std::vector<Gripper> grippers;  // one per transition
  std::size_t bridge = 0;         // transitions belonging to the bridge
};

// Interpolation bridge from the current ee pose to the retargeted head,
// followed by the retargeted span. Throws InfeasibleAdapt when a pose
// leaves the workspace.
AdaptedSegment adapt(const TaskSpec& task, const WorldState& current,
                     const SourceSpan& source);

enum class ReplayStop : std::uint8_t {
  exhausted,          // every pose executed
  subtask_complete,   // the active subtask finished
  terminated,         // termination criterion fired (mistake replay)
  drift,              // controller missed a pose target
};

struct ReplayResult {
  WorldState state;
  std::vector<Step> steps;
  ReplayStop stop = ReplayStop::exhausted;
};

struct ReplayOptions {
  Actor actor = Actor::expert;
  // Mistake replay: stop (without a drift verdict) once this fires.
  std::optional<Criterion> stop_on;
  double drift_tolerance = 1e-6;
};

// Open-loop execution of a pose sequence through the controller. Throws
// EpisodeOver at the horizon.
ReplayResult replay(const TaskSpec& task, const CorruptionModel& z,
                    const WorldState& state, const AdaptedSegment& path,
                    const ReplayOptions& options = {});

enum class Outcome : std::uint8_t {
  success,
  goal_failed,
  horizon,
  no_mistake,
  infeasible_adapt,
};
std::string_view to_string(Outcome o);

enum class GenerationMode : std::uint8_t {
  interventions,  // closed-loop policy to the mistake, retargeted recovery
  no_policy,      // mistakes replayed open-loop from the source
  demo,           // whole-demonstration retargeting, no policy
};
std::string_view to_string(GenerationMode m);

// Source trajectories indexed by their recovery spans.
class SourceIndex {
 public:
  SourceIndex(const Dataset& source, const TaskSpec& task);

  const Dataset& dataset() const { return *source_; }
  std::size_t size() const { return spans_.size(); }
  // Trajectories with an expert segment starting in `subtask`.
  const std::vector<std::size_t>& with_recovery(int subtask) const;
  // First expert segment of trajectory `traj` that starts in `subtask`.
  const SourceSpan* recovery(std::size_t traj, int subtask) const;
  // Every actor run of `traj`, in order.
  const std::vector<SourceSpan>& spans(std::size_t traj) const {
    return spans_[traj];
  }
  // Steps of `traj` recorded in `subtask`, for demonstration retargeting.
  const std::optional<SourceSpan>& subtask_span(std::size_t traj,
                                                int subtask) const {
    return by_subtask_[traj][static_cast<std::size_t>(subtask)];
  }

 private:
  const Dataset* source_;
  std::vector<std::vector<SourceSpan>> spans_;
  std::vector<std::vector<std::optional<SourceSpan>>> by_subtask_;
  std::vector<std::vector<std::size_t>> with_recovery_;
};

struct GeneratorConfig {
  GenerationMode mode = GenerationMode::interventions;
  Provenance provenance = Provenance::synthetic;
  bool keep_policy_success = false;
};

struct GenerationAttempt {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  Outcome outcome = Outcome::success;
};

struct GenerationReport {
  std::uint64_t attempts = 0;
  std::uint64_t successes = 0;
  std::map<Outcome, std::uint64_t> failures;
  double wall_clock_seconds = 0.0;
  std::vector<GenerationAttempt> log;

  std::uint64_t failure_total() const;
};

struct GenerateOneResult {
  Outcome outcome = Outcome::success;
  std::optional<Trajectory> episode;
};

// One attempt. `policy` may be null for demo and no_policy modes.
GenerateOneResult generate_one(const TaskSpec& task, const CorruptionModel& z,
                               const PolicyModel* policy,
                               const SourceIndex& source,
                               const GeneratorConfig& config,
                               std::uint64_t seed);

class CapReached : public std::runtime_error {
 public:
  CapReached(Dataset partial, GenerationReport report);
  Dataset partial;
  GenerationReport report;
};

struct GenerateRequest {
  std::size_t n = 1;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::size_t attempt_cap = 0;  // 0 -> 20 n
  GeneratorConfig config;
};

struct GenerationResult {
  Dataset dataset;
  GenerationReport report;
};

// Attempts episodes with seeds derived from (seed, index) until n are
// retained. Output order follows attempt index regardless of `workers`.
GenerationResult generate(const TaskSpec& task, const CorruptionModel& z,
                          const PolicyModel* policy, const Dataset& source,
                          const GenerateRequest& request);

class CollectionFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Full expert demonstrations.
Dataset collect_demos(const TaskSpec& task, const CorruptionModel& z,
                      std::size_t m, std::uint64_t seed,
                      Provenance provenance = Provenance::source_human);

struct CollectionReport {
  std::uint64_t attempts = 0;
  std::uint64_t no_mistake = 0;
  std::uint64_t expert_failed = 0;
};

// Policy rollouts with the oracle gate; keeps episodes that needed the
// expert and reached the goal.
Dataset collect_interventions(const PolicyModel& policy, const TaskSpec& task,
                              const CorruptionModel& z, std::size_t m,
                              std::uint64_t seed,
                              CollectionReport* report = nullptr);

// A deliberate error: the expert acts on a reference pose perturbed by
// `offset` (world frame) and turned by `yaw`.
struct ScriptedMistake {
  Vec3 offset = Vec3::Zero();
  double yaw = 0.0;
};

struct OfflineResult {
  Dataset dataset;
  std::vector<bool> no_mistake;  // per episode
};

// Expert-demonstrated mistakes: approach a perturbed target until the
// termination criterion fires, then recover with the true pose. Mistake
// steps carry the policy label. Episode j uses mistakes[j % size]; an empty
// script records plain demonstrations flagged no_mistake.
OfflineResult offline_collect(const TaskSpec& task, const CorruptionModel& z,
                              const std::vector<ScriptedMistake>& mistakes,
                              std::size_t m, std::uint64_t seed);

// Concatenation; episodes keep their provenance tags.
Dataset aggregate(const Dataset& base, const Dataset& extra);

// Steps of `traj` from index `from` on, with termination metadata.
Trajectory suffix(const Trajectory& traj, std::size_t from);

}  // namespace ivgen
