#pragma once

#include "ivgen/policy.hpp"
#include "ivgen/trajectory.hpp"
#include "ivgen/world.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ivgen::teleop {

inline constexpr int kProtocolVersion = 1;
inline constexpr int kVersionMismatchCode = 4000;

enum class Control : std::uint8_t { policy, human };
std::string_view to_string(Control c);

std::string frame_descriptor_to_string(const FrameDescriptor& f);
FrameDescriptor frame_descriptor_from_string(const std::string& text);

struct SessionConfig {
  TaskSpec task = make_task(TaskId::planar_peg_insert);
  CorruptionModel corruption = CorruptionModel::peg_noise();
  std::optional<PolicyModel> policy;  // zero action when absent
  std::uint64_t seed = 0;
  // Start an episode after the handshake and after each episode end.
  bool auto_start = true;
};

struct Reply {
  std::optional<std::string> text;
  bool close = false;
  int close_code = 0;
  std::string close_reason;
};

struct TickOutput {
  std::vector<std::string> messages;
  std::optional<Trajectory> finished;  // set on episode end
};

// One client's session. Not thread-safe; the server drives it from a single
// strand.
class Session {
 public:
  explicit Session(SessionConfig config);

  // Sent by the server right after the connection opens.
  std::string hello() const;

  Reply handle_message(std::string_view text);

  // Advances the episode by one control step when one is running.
  TickOutput tick();

  // Client went away: the running episode is discarded.
  void disconnect();

  Control control() const { return control_; }
  bool handshaken() const { return handshaken_; }
  bool episode_active() const { return world_.has_value(); }
  int episode() const { return episode_; }
  std::uint64_t ticks() const { return tick_; }
  const std::optional<DeltaAction>& fresh_action() const { return fresh_; }

 private:
  void start_episode();
  std::string ack(std::string_view of) const;

  SessionConfig config_;
  bool handshaken_ = false;
  Control control_ = Control::policy;
  std::optional<Control> pending_;
  std::optional<DeltaAction> fresh_;
  std::uint64_t tick_ = 0;
  int episode_ = -1;
  std::optional<WorldState> world_;
  Trajectory recording_;
};

// Appends one episode to a dataset file, writing the header line first when
// the file is new or empty.
void append_episode(const std::filesystem::path& path, TaskId task,
                    const Trajectory& traj);

}  // namespace ivgen::teleop
