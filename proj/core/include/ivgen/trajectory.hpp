#pragma once

#include "ivgen/geomkit.hpp"
#include "ivgen/world.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace ivgen {

enum class Actor : std::uint8_t { policy, expert };
enum class Provenance : std::uint8_t { base, synthetic, source_human };

std::string_view to_string(Actor a);
std::string_view to_string(Provenance p);
Actor parse_actor(std::string_view s);
Provenance parse_provenance(std::string_view s);

struct Step {
  Observation obs;  // robot role
  DeltaAction action;
  Actor actor = Actor::policy;
  std::optional<ContactEvent> contact;
};

struct EpisodeHeader {
  TaskId task = TaskId::planar_peg_insert;
  std::uint64_t seed = 0;
  std::uint64_t corruption_seed = 0;
  CorruptionModel corruption;
  Vec3 corruption_offset = Vec3::Zero();  // first subtask, corrupted object
  int geometry_variant = 1;
  Provenance provenance = Provenance::base;
  // Privileged ground truth at reset. Reference objects never move during
  // their own subtask, so this also anchors every recovery segment.
  std::vector<Pose> true_objects;
  // Index in the originating rollout where this record begins; set on
  // records cut at a mistake.
  std::optional<int> termination;
};

struct Trajectory {
  EpisodeHeader header;
  std::vector<Step> steps;
  Observation final_obs;  // robot role, after the last step
  bool goal = false;

  // Robot observation after step i.
  const Observation& post(std::size_t i) const {
    return i + 1 < steps.size() ? steps[i + 1].obs : final_obs;
  }
};

struct Dataset {
  TaskId task = TaskId::planar_peg_insert;
  std::vector<Trajectory> episodes;

  std::size_t step_count() const;
};

}  // namespace ivgen
