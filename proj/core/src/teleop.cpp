#include "ivgen/teleop.hpp"

#include "ivgen/store.hpp"
#include "json_fields.hpp"

#include <fstream>

namespace ivgen::teleop {

namespace {

using detail::Json;

Json shape_json(const FrameShape& s) {
  return {{"id", s.id},     {"kind", s.kind},   {"x", s.x},
          {"y", s.y},       {"yaw", s.yaw},     {"size", s.size},
          {"color", s.color}, {"debug_only", s.debug_only}};
}

Json frame_json(const FrameDescriptor& f) {
  Json shapes = Json::array();
  for (const FrameShape& s : f.shapes) shapes.push_back(shape_json(s));
  return {{"step", f.step},
          {"subtask", f.subtask},
          {"gripper_width", f.gripper_width},
          {"shapes", std::move(shapes)}};
}

FrameDescriptor frame_from_json(const Json& j) {
  detail::Fields f(j, "frame");
  FrameDescriptor out;
  f.read("step", out.step);
  f.read("subtask", out.subtask);
  f.read("gripper_width", out.gripper_width);
  if (const Json* shapes = f.get("shapes")) {
    for (const Json& sj : *shapes) {
      detail::Fields sf(sj, "frame.shapes[]");
      FrameShape s;
      sf.read("id", s.id);
      sf.read("kind", s.kind);
      sf.read("x", s.x);
      sf.read("y", s.y);
      sf.read("yaw", s.yaw);
      sf.read("size", s.size);
      sf.read("color", s.color);
      sf.read("debug_only", s.debug_only);
      sf.finish();
      out.shapes.push_back(std::move(s));
    }
  }
  f.finish();
  return out;
}

std::string error(std::string_view code, const std::string& message) {
  return Json{{"type", "error"}, {"code", code}, {"message", message}}.dump();
}

double number(const Json& msg, const char* key) {
  const auto it = msg.find(key);
  if (it == msg.end()) return 0.0;
  if (!it->is_number()) {
    throw std::invalid_argument(std::string(key) + " must be a number");
  }
  return it->get<double>();
}

}  // namespace

std::string_view to_string(Control c) {
  return c == Control::human ? "human" : "policy";
}

std::string frame_descriptor_to_string(const FrameDescriptor& f) {
  return frame_json(f).dump();
}

FrameDescriptor frame_descriptor_from_string(const std::string& text) {
  return frame_from_json(Json::parse(text));
}

Session::Session(SessionConfig config) : config_(std::move(config)) {
  config_.task.validate();
  config_.corruption.validate();
}

std::string Session::hello() const {
  return Json{{"type", "hello"},
              {"version", kProtocolVersion},
              {"task", to_string(config_.task.id)}}
      .dump();
}

std::string Session::ack(std::string_view of) const {
  return Json{{"type", "ack"}, {"of", of}, {"tick", tick_}}.dump();
}

Reply Session::handle_message(std::string_view text) {
  Json msg;
  try {
    msg = Json::parse(text);
  } catch (const std::exception&) {
    return {error("malformed", "message is not JSON"), false, 0, {}};
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    return {error("malformed", "message needs a string \"type\""), false, 0,
            {}};
  }
  const std::string type = msg["type"].get<std::string>();

  if (type == "hello") {
    const auto v = msg.find("version");
    if (v == msg.end() || !v->is_number_integer() ||
        v->get<int>() != kProtocolVersion) {
      return {std::nullopt, true, kVersionMismatchCode,
              "version-mismatch: server speaks " +
                  std::to_string(kProtocolVersion)};
    }
    handshaken_ = true;
    if (config_.auto_start && !world_) start_episode();
    return {ack("hello"), false, 0, {}};
  }
  if (!handshaken_) {
    return {error("handshake-required", "send hello first"), false, 0, {}};
  }

  try {
    if (type == "takeover" || type == "release") {
      pending_ = type == "takeover" ? Control::human : Control::policy;
      return {ack(type), false, 0, {}};
    }
    if (type == "action") {
      DeltaAction a;
      a.translation = Vec3(number(msg, "dx"), number(msg, "dy"),
                           number(msg, "dz"));
      if (const auto g = msg.find("grip"); g != msg.end()) {
        if (!g->is_string()) throw std::invalid_argument("grip must be a string");
        a.gripper = parse_gripper(g->get<std::string>());
      }
      const DeltaAction applied = clamp(a, config_.task.limits).delta;
      fresh_ = applied;
      Json reply = Json::parse(ack("action"));
      reply["applied"] = {{"dx", applied.translation.x()},
                          {"dy", applied.translation.y()},
                          {"dz", applied.translation.z()},
                          {"grip", to_string(applied.gripper)}};
      return {reply.dump(), false, 0, {}};
    }
    if (type == "episode") {
      const auto c = msg.find("cmd");
      const std::string cmd =
          c != msg.end() && c->is_string() ? c->get<std::string>() : "";
      if (cmd == "start") {
        if (world_) return {error("episode-active", "an episode is running"), false, 0, {}};
        start_episode();
        return {ack("episode"), false, 0, {}};
      }
      if (cmd == "abort") {
        if (!world_) return {error("no-episode", "no episode is running"), false, 0, {}};
        world_.reset();
        return {ack("episode"), false, 0, {}};
      }
      return {error("malformed", "episode cmd must be start or abort"), false, 0, {}};
    }
  } catch (const std::exception& e) {
    return {error("malformed", e.what()), false, 0, {}};
  }
  return {error("unknown-type", "unknown message type: " + type), false, 0, {}};
}

void Session::start_episode() {
  ++episode_;
  const std::uint64_t seed =
      derive_seed({config_.seed, static_cast<std::uint64_t>(episode_)});
  world_ = reset(config_.task, config_.corruption, seed);
  recording_ = Trajectory{};
  recording_.header = make_header(config_.task, config_.corruption, *world_,
                                  Provenance::source_human);
  fresh_.reset();
}

TickOutput Session::tick() {
  TickOutput out;
  ++tick_;
  if (pending_) {
    control_ = *pending_;
    pending_.reset();
  }
  if (!world_) return out;

  const TaskSpec& task = config_.task;
  WorldState& s = *world_;
  Step st;
  st.obs = observe(task, s, config_.corruption, Role::robot);
  if (control_ == Control::human) {
    st.actor = Actor::expert;
    st.action = fresh_.value_or(DeltaAction{});
    fresh_.reset();
  } else {
    st.actor = Actor::policy;
    if (config_.policy) st.action = config_.policy->act(st.obs);
  }
  StepResult r = step(task, s, st.action);
  st.contact = r.contact;
  s = std::move(r.state);
  recording_.steps.push_back(std::move(st));

  Json frame = {{"type", "frame"},
                {"tick", tick_},
                {"scene", frame_json(render_frame(task, s, config_.corruption))},
                {"control", to_string(control_)},
                {"episode", episode_},
                {"subtask", s.subtask}};
  out.messages.push_back(frame.dump());

  const bool goal = goal_satisfied(task, s);
  if (goal || s.step_count >= task.horizon) {
    recording_.final_obs = observe(task, s, config_.corruption, Role::robot);
    recording_.goal = goal;
    out.messages.push_back(
        Json{{"type", "episode_end"}, {"goal", goal}, {"episode", episode_}}
            .dump());
    out.finished = std::move(recording_);
    world_.reset();
    if (config_.auto_start) start_episode();
  }
  return out;
}

void Session::disconnect() {
  world_.reset();
  recording_ = Trajectory{};
}

void append_episode(const std::filesystem::path& path, TaskId task,
                    const Trajectory& traj) {
  if (traj.header.task != task) {
    throw StoreError("episode task differs from dataset task");
  }
  std::string first;
  {
    std::ifstream in(path);
    if (in) std::getline(in, first);
  }
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw StoreError("cannot open " + path.string() + " for append");
  if (first.empty()) {
    Dataset empty;
    empty.task = task;
    out << dataset_to_string(empty);
  } else if (dataset_from_string(first + "\n").task != task) {
    throw StoreError("dataset file holds another task");
  }
  out << episode_to_line(traj) << '\n';
  if (!out) throw StoreError("write failed: " + path.string());
}

}  // namespace ivgen::teleop
