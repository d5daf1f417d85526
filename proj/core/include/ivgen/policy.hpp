#pragma once

#include "ivgen/geomkit.hpp"
#include "ivgen/trajectory.hpp"
#include "ivgen/world.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivgen {

class EmptyDataset : public std::invalid_argument {
 public:
  EmptyDataset() : std::invalid_argument("empty-dataset: nothing to fit") {}
};

class LayoutMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Which observation fields enter the feature vector, in order:
// ee position, [ee yaw cos/sin], gripper width, per object position
// [and yaw cos/sin], feedback payload, feedback flag, subtask one-hot.
struct FeatureLayout {
  TaskId task = TaskId::planar_peg_insert;
  int objects = 0;
  bool orientation = false;
  int subtasks = 1;

  int dim() const;
  std::vector<std::string> names() const;
  bool operator==(const FeatureLayout&) const = default;
};

FeatureLayout layout_for(const TaskSpec& task);

void extract_features(const FeatureLayout& layout, const Observation& obs,
                      std::span<double> out);

enum class WeightsMode : std::uint8_t { uniform, balanced };
std::string_view to_string(WeightsMode m);
WeightsMode parse_weights_mode(std::string_view s);

struct FitConfig {
  int k = 3;
  WeightsMode weights = WeightsMode::uniform;
};

struct Neighbor {
  std::size_t row = 0;
  double distance = 0.0;
};

// k-nearest-neighbour behaviour cloning on standardized features. Immutable
// after construction.
class PolicyModel {
 public:
  PolicyModel() = default;

  static PolicyModel fit(const Dataset& data, const TaskSpec& task,
                         const FitConfig& config);

  // Raw row-major features; used directly by tests and by fit().
  static PolicyModel fit_features(const FeatureLayout& layout,
                                  std::vector<double> features,
                                  std::vector<DeltaAction> actions,
                                  std::vector<double> weights,
                                  std::vector<std::uint8_t> intervention,
                                  int k, const StepLimits& limits);

  DeltaAction act(const Observation& obs) const;
  DeltaAction act_features(std::span<const double> raw) const;

  // Nearest rows to a raw feature vector, ascending by (distance, row).
  std::vector<Neighbor> neighbors(std::span<const double> raw) const;

  const FeatureLayout& layout() const { return layout_; }
  int k() const { return k_; }
  std::size_t rows() const { return actions_.size(); }
  int dim() const { return dim_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& scale() const { return scale_; }
  const std::vector<double>& normalized() const { return rows_; }
  const std::vector<DeltaAction>& actions() const { return actions_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<std::uint8_t>& intervention() const {
    return intervention_;
  }
  const StepLimits& limits() const { return limits_; }

  // Rebuilds a model from stored normalized rows (store round-trip).
  static PolicyModel from_parts(const FeatureLayout& layout, int k,
                                const StepLimits& limits,
                                std::vector<double> mean,
                                std::vector<double> scale,
                                std::vector<double> normalized,
                                std::vector<DeltaAction> actions,
                                std::vector<double> weights,
                                std::vector<std::uint8_t> intervention);

 private:
  void normalize(std::span<const double> raw, std::span<double> out) const;
  void build_index();

  struct KdNode {
    int axis = -1;  // -1 for a leaf
    double split = 0.0;
    std::uint32_t left = 0, right = 0;  // children
    std::uint32_t begin = 0, end = 0;   // leaf range in order_
  };

  FeatureLayout layout_;
  int dim_ = 0;
  int k_ = 1;
  StepLimits limits_;
  std::vector<double> mean_;
  std::vector<double> scale_;
  std::vector<double> rows_;
  std::vector<DeltaAction> actions_;
  std::vector<double> weights_;
  std::vector<std::uint8_t> intervention_;
  std::vector<KdNode> nodes_;
  std::vector<std::uint32_t> order_;
  std::vector<double> leaf_rows_;  // rows_ permuted by order_
};

// Scripted expert with privileged (uncorrupted) observations.
struct OracleExpert {
  double tolerance = 1e-9;
  double hover_height = 0.02;  // above the grasp point

  DeltaAction act(const Observation& expert_obs, const TaskSpec& task) const;
};

enum class Criterion : std::uint8_t { contact, gripper_closed_empty, composite };
std::string_view to_string(Criterion c);
Criterion criterion_for(const TaskSpec& task);

// True if step i of the rollout triggers `criterion`.
bool fires(Criterion criterion, const Step& step, const Observation& post);

// Who acts each step. `robot` is the corrupted view, `expert` the truth.
struct Agent {
  Actor actor = Actor::policy;
  std::function<DeltaAction(const Observation& robot,
                            const Observation& expert)>
      act;
};

Agent policy_agent(const PolicyModel& model);
Agent expert_agent(const OracleExpert& expert, const TaskSpec& task);

// Hands control to `expert` when the criterion fires and back to the
// primary agent once the expert completes the subtask.
struct OracleGate {
  Criterion criterion = Criterion::contact;
  Agent expert;
};

struct RolloutOptions {
  std::optional<std::uint64_t> corruption_seed;
  Provenance provenance = Provenance::base;
  // End the episode early once it returns to a configuration it has already
  // visited with the same actor in control. Agents are deterministic
  // functions of the configuration, so the rest would repeat forever.
  bool stop_on_cycle = false;
};

Trajectory rollout(const Agent& agent, const TaskSpec& task,
                   const CorruptionModel& z, std::uint64_t seed,
                   const std::optional<OracleGate>& gate = std::nullopt,
                   const RolloutOptions& options = {});

EpisodeHeader make_header(const TaskSpec& task, const CorruptionModel& z,
                          const WorldState& initial, Provenance provenance);

}  // namespace ivgen
