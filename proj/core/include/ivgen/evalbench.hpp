#pragma once

#include "ivgen/datagen.hpp"
#include "ivgen/policy.hpp"
#include "ivgen/trajectory.hpp"
#include "ivgen/world.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ivgen {

struct SuccessStats {
  int trials = 0;
  int successes = 0;
  double success_rate = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint8_t> outcomes;  // 1 = goal, per trial
  double mean_steps_to_goal = 0.0;     // over successful trials
};

// Trial i uses seed derive_seed({seed, i}) for every model, so arms
// evaluated with the same seed are paired. Results do not depend on the
// worker count.
SuccessStats evaluate(const PolicyModel& model, const TaskSpec& task,
                      const CorruptionModel& z, int trials, std::uint64_t seed,
                      unsigned workers = 1);
SuccessStats evaluate_agent(const Agent& agent, const TaskSpec& task,
                            const CorruptionModel& z, int trials,
                            std::uint64_t seed, unsigned workers = 1);

enum class Arm : std::uint8_t {
  base,
  source_int,
  weighted_src_int,
  source_demo,
  mg_demo,
  ivg_minus_policy,
  ivg,
};
std::string_view to_string(Arm a);
Arm parse_arm(std::string_view s);
const std::vector<Arm>& all_arms();

struct ArmSpec {
  Arm arm = Arm::base;
  FitConfig fit;
};

struct ExperimentPlan {
  TaskId task = TaskId::planar_peg_insert;
  // Corruption present while collecting and generating data; it is also the
  // evaluation corruption except for geometry flips, which are evaluated on
  // each geometry separately.
  CorruptionModel corruption = CorruptionModel::peg_noise();
  std::vector<ArmSpec> arms;
  std::size_t m = 10;
  std::size_t n = 1000;
  int trials = 200;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  // Extra IVG dataset sizes (prefixes of the n-episode generation).
  std::vector<std::size_t> scaling;
  unsigned workers = 1;
  std::optional<FeedbackMode> observability;
  StepLimits controller;

  TaskSpec task_spec() const;
  void validate() const;
};

// The full seven-arm ladder with default fits.
ExperimentPlan default_plan(TaskId task);

ExperimentPlan plan_from_string(const std::string& text);
ExperimentPlan read_plan(const std::filesystem::path& path);
std::string plan_to_string(const ExperimentPlan& plan);

// Per-seed data every arm draws from.
struct SharedInputs {
  TaskSpec task;
  CorruptionModel corruption;
  std::uint64_t seed = 0;
  Dataset clean_demos;     // m demos without corruption
  Dataset base;            // clean demos expanded to n
  PolicyModel base_policy;
  Dataset interventions;   // m oracle-gated interventions
  std::optional<Dataset> source_demos;
  std::optional<Dataset> ivg;          // n generated, cached for scaling
  std::optional<GenerationReport> ivg_report;
};

SharedInputs prepare_inputs(const ExperimentPlan& plan, std::uint64_t seed);

// Training data for one arm. Throws std::runtime_error naming the arm when
// its recipe cannot be built.
Dataset build_arm_dataset(Arm arm, SharedInputs& inputs,
                          const ExperimentPlan& plan);

// Interventions cut to start at their first termination.
Dataset intervention_suffixes(const Dataset& interventions,
                              const TaskSpec& task);

struct EvalColumn {
  std::string name;  // "success" or "geometry 1" / "geometry 2"
  CorruptionModel corruption;
};
std::vector<EvalColumn> eval_columns(const ExperimentPlan& plan);

struct ArmSeedResult {
  std::uint64_t seed = 0;
  std::vector<SuccessStats> columns;  // aligned with eval_columns()
  std::size_t episodes = 0;
  std::size_t steps = 0;
  std::size_t active_feedback_steps = 0;
  std::size_t distinct_offsets = 0;  // generated episodes, first 200
};

struct ArmResult {
  std::string name;  // arm name, or "ivg@<n>" for scaling rows
  std::vector<ArmSeedResult> seeds;
  std::string error;  // non-empty if the arm failed

  // Mean success over seeds for column c; the mixture is the mean of all
  // columns.
  double mean(std::size_t column) const;
  double mixture() const;
};

struct ExperimentReport {
  ExperimentPlan plan;
  std::vector<std::string> columns;
  std::vector<ArmResult> arms;

  const ArmResult* find(const std::string& name) const;
  std::string table() const;
  std::string json() const;
};

using ProgressFn = std::function<void(const std::string&)>;
// Sees every training set as it is built, named as in the report.
using DatasetFn = std::function<void(const std::string& arm, std::uint64_t seed,
                                     const Dataset& ds)>;

ExperimentReport run_experiment(const ExperimentPlan& plan,
                                const ProgressFn& progress = {},
                                const DatasetFn& inspect = {});

struct Thresholds {
  double robustness_gain = 0.40;   // ivg - base
  double robust_floor = 0.80;      // ivg
  double ordering_slack = 0.05;
  double policy_gap = 0.10;        // ivg - ivg_minus_policy
  double geometry_base_native = 0.95;
  double geometry_base_alternate = 0.10;
  double geometry_ivg_floor = 0.75;
  double mixture_margin = 0.15;
  double scaling_slack = 0.05;
  double scaling_gain = 0.10;
  std::size_t fresh_offsets = 100;
  std::size_t offset_window = 200;
};

struct AssertionResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// The ordering and threshold checks that apply to the arms present in the
// report.
std::vector<AssertionResult> check_assertions(const ExperimentReport& report,
                                              const Thresholds& t = {});

std::size_t count_active_feedback(const Dataset& ds);
std::size_t count_distinct_offsets(const Dataset& ds, std::size_t limit);

}  // namespace ivgen
