#pragma once

#include "ivgen/datagen.hpp"
#include "ivgen/policy.hpp"
#include "ivgen/trajectory.hpp"
#include "ivgen/world.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ivgen {

inline constexpr int kSchemaVersion = 1;

class StoreError : public std::runtime_error {
 public:
  StoreError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " +
                                          what
                                    : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SchemaVersionError : public StoreError {
 public:
  using StoreError::StoreError;
};

// Datasets: UTF-8 JSON lines. Line 1 is a header object, then one episode
// per line.
std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

std::string episode_to_line(const Trajectory& traj);

struct Violation {
  std::size_t line = 0;  // 1-based file line, 0 for file-level issues
  std::string code;      // schema | malformed | monotone-t | goal-filter | ...
  std::string message;
};

std::vector<Violation> validate_text(const std::string& text);
std::vector<Violation> validate(const std::filesystem::path& path);

std::string model_to_string(const PolicyModel& model);
PolicyModel model_from_string(const std::string& text);
void write_model(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel read_model(const std::filesystem::path& path);

std::string report_to_string(const GenerationReport& report);

struct GenerationSettings {
  std::size_t m = 10;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::size_t attempt_cap = 0;
};

struct EvalSettings {
  int trials = 200;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

struct RunConfig {
  TaskId task = TaskId::planar_peg_insert;
  CorruptionModel corruption = CorruptionModel::peg_noise();
  FitConfig policy;
  StepLimits controller;
  GenerationSettings generation;
  std::optional<FeedbackMode> observability;
  std::optional<double> goal_tolerance;
  std::optional<int> horizon;
  EvalSettings eval;

  // Task defaults with this config's overrides applied.
  TaskSpec task_spec() const;
  void validate() const;  // throws std::invalid_argument
};

// Named corruption settings: none, peg_noise, receptacle_noise,
// radial_noise, block_noise, geometry_flip.
CorruptionModel corruption_preset(std::string_view name);

// Strict: unknown keys and out-of-range values are errors.
RunConfig run_config_from_string(const std::string& text);
RunConfig read_run_config(const std::filesystem::path& path);
std::string run_config_to_string(const RunConfig& config);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ivgen
