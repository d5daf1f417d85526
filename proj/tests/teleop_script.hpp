#pragma once

// Scripted stand-in for a human operator: mirrors the session's world from
// the same seed and answers with oracle actions computed on the true state.

#include "ivgen/policy.hpp"
#include "ivgen/world.hpp"

#include <json.hpp>

#include <string>

namespace teleop_script {

struct Mirror {
  ivgen::TaskSpec task;
  ivgen::CorruptionModel z;
  ivgen::WorldState s;

  Mirror(const ivgen::TaskSpec& t, const ivgen::CorruptionModel& c,
         std::uint64_t session_seed, int episode)
      : task(t),
        z(c),
        s(ivgen::reset(t, c, ivgen::derive_seed({session_seed,
                                                 static_cast<std::uint64_t>(episode)}))) {}

  ivgen::DeltaAction oracle() const {
    return ivgen::OracleExpert{}.act(ivgen::observe(task, s, z, ivgen::Role::expert), task);
  }

  ivgen::StepResult apply(const ivgen::DeltaAction& a) {
    ivgen::StepResult r = ivgen::step(task, s, a);
    s = r.state;
    return r;
  }

  bool done() const { return ivgen::goal_satisfied(task, s) || s.step_count >= task.horizon; }
};

inline std::string action_message(const ivgen::DeltaAction& a) {
  return nlohmann::json{{"type", "action"},
                        {"dx", a.translation.x()},
                        {"dy", a.translation.y()},
                        {"dz", a.translation.z()},
                        {"grip", std::string(ivgen::to_string(a.gripper))}}
      .dump();
}

// Planar tasks only: the protocol carries no rotation.
inline ivgen::DeltaAction as_sent(ivgen::DeltaAction a) {
  a.rotation.setZero();
  return a;
}

}  // namespace teleop_script
