#include "ivgen/store.hpp"

#include "json_fields.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace ivgen {

namespace {

using detail::Fields;
using detail::Json;

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

using detail::vec_from;

Json pose_json(const Pose& p) {
  const Quat& q = p.orientation;
  return Json::array({p.position.x(), p.position.y(), p.position.z(), q.w(),
                      q.x(), q.y(), q.z()});
}

Pose pose_from(const Json& j) {
  if (!j.is_array() || j.size() != 7) {
    throw std::invalid_argument("expected a pose [x,y,z,qw,qx,qy,qz]");
  }
  Pose p;
  p.position = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  // Stored quaternions are already canonical; renormalizing could move the
  // last bit and break byte-identical rewrites.
  p.orientation = Quat(j[3].get<double>(), j[4].get<double>(),
                       j[5].get<double>(), j[6].get<double>());
  if (std::abs(p.orientation.norm() - 1.0) > 1e-9 || p.orientation.w() < 0.0) {
    throw std::invalid_argument("quaternion is not unit-norm canonical");
  }
  return p;
}

Json corruption_json(const CorruptionModel& z) {
  Json j;
  j["kind"] = to_string(z.kind);
  j["half_widths"] = vec_json(z.half_widths);
  j["min_offset"] = z.min_offset;
  j["min_offset_axis"] = to_string(z.min_offset_axis);
  j["radial_min"] = z.radial_min;
  j["radial_max"] = z.radial_max;
  j["flip_probability"] = z.flip_probability;
  j["seed"] = z.seed;
  return j;
}

CorruptionModel corruption_from(const Json& j) {
  CorruptionModel z;
  z.kind = parse_corruption_kind(j.at("kind").get<std::string>());
  z.half_widths = vec_from(j.at("half_widths"));
  z.min_offset = j.at("min_offset").get<double>();
  z.min_offset_axis =
      parse_offset_axis(j.at("min_offset_axis").get<std::string>());
  z.radial_min = j.at("radial_min").get<double>();
  z.radial_max = j.at("radial_max").get<double>();
  z.flip_probability = j.at("flip_probability").get<double>();
  z.seed = j.at("seed").get<std::uint64_t>();
  return z;
}

Json obs_json(const Observation& o) {
  Json j;
  j["ee"] = pose_json(o.ee);
  j["gripper_width"] = o.gripper_width;
  Json objs = Json::array();
  for (const Pose& p : o.objects) objs.push_back(pose_json(p));
  j["objects"] = std::move(objs);
  j["feedback"] = {{"active", o.feedback.active},
                   {"payload", vec_json(o.feedback.payload)},
                   {"mode", to_string(o.feedback.mode)}};
  j["subtask"] = o.subtask;
  return j;
}

Observation obs_from(const Json& j) {
  Observation o;
  o.ee = pose_from(j.at("ee"));
  o.gripper_width = j.at("gripper_width").get<double>();
  for (const Json& p : j.at("objects")) o.objects.push_back(pose_from(p));
  const Json& f = j.at("feedback");
  o.feedback.active = f.at("active").get<bool>();
  o.feedback.payload = vec_from(f.at("payload"));
  o.feedback.mode = parse_feedback_mode(f.at("mode").get<std::string>());
  o.subtask = j.at("subtask").get<int>();
  return o;
}

Json header_json(const EpisodeHeader& h) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["task"] = to_string(h.task);
  j["seed"] = h.seed;
  j["corruption_seed"] = h.corruption_seed;
  j["corruption"] = corruption_json(h.corruption);
  j["corruption_offset"] = vec_json(h.corruption_offset);
  j["geometry_variant"] = h.geometry_variant;
  j["provenance"] = to_string(h.provenance);
  Json truth = Json::array();
  for (const Pose& p : h.true_objects) truth.push_back(pose_json(p));
  j["true_objects"] = std::move(truth);
  j["termination"] = h.termination ? Json(*h.termination) : Json(nullptr);
  return j;
}

EpisodeHeader header_from(const Json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != kSchemaVersion) {
    throw SchemaVersionError("episode schema_version " +
                             std::to_string(version) + " is not supported");
  }
  EpisodeHeader h;
  h.task = parse_task_id(j.at("task").get<std::string>());
  h.seed = j.at("seed").get<std::uint64_t>();
  h.corruption_seed = j.at("corruption_seed").get<std::uint64_t>();
  h.corruption = corruption_from(j.at("corruption"));
  h.corruption_offset = vec_from(j.at("corruption_offset"));
  h.geometry_variant = j.at("geometry_variant").get<int>();
  h.provenance = parse_provenance(j.at("provenance").get<std::string>());
  for (const Json& p : j.at("true_objects")) {
    h.true_objects.push_back(pose_from(p));
  }
  const Json& t = j.at("termination");
  if (!t.is_null()) h.termination = t.get<int>();
  return h;
}

Json episode_json(const Trajectory& traj) {
  Json j;
  j["header"] = header_json(traj.header);
  Json steps = Json::array();
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& st = traj.steps[i];
    Json s;
    s["t"] = i;
    s["obs"] = obs_json(st.obs);
    s["action"] = {{"translation", vec_json(st.action.translation)},
                   {"rotation", vec_json(st.action.rotation)},
                   {"gripper", to_string(st.action.gripper)}};
    s["actor"] = to_string(st.actor);
    if (st.contact) {
      s["contact"] = {
          {"objects", Json::array({st.contact->object_a, st.contact->object_b})},
          {"location", vec_json(st.contact->location)},
          {"step", st.contact->step}};
    } else {
      s["contact"] = nullptr;
    }
    steps.push_back(std::move(s));
  }
  j["steps"] = std::move(steps);
  j["final_obs"] = obs_json(traj.final_obs);
  j["goal"] = traj.goal;
  return j;
}

Trajectory episode_from(const Json& j) {
  Trajectory traj;
  traj.header = header_from(j.at("header"));
  for (const Json& s : j.at("steps")) {
    Step st;
    st.obs = obs_from(s.at("obs"));
    const Json& a = s.at("action");
    st.action.translation = vec_from(a.at("translation"));
    st.action.rotation = vec_from(a.at("rotation"));
    st.action.gripper = parse_gripper(a.at("gripper").get<std::string>());
    st.actor = parse_actor(s.at("actor").get<std::string>());
    const Json& c = s.at("contact");
    if (!c.is_null()) {
      ContactEvent e;
      e.object_a = c.at("objects").at(0).get<int>();
      e.object_b = c.at("objects").at(1).get<int>();
      e.location = vec_from(c.at("location"));
      e.step = c.at("step").get<int>();
      st.contact = e;
    }
    traj.steps.push_back(std::move(st));
  }
  traj.final_obs = obs_from(j.at("final_obs"));
  traj.goal = j.at("goal").get<bool>();
  return traj;
}

Json dataset_header(TaskId task) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "dataset";
  j["task"] = to_string(task);
  return j;
}

TaskId check_dataset_header(const Json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version > kSchemaVersion) {
    throw SchemaVersionError("dataset schema_version " +
                                 std::to_string(version) +
                                 " is newer than this reader (" +
                                 std::to_string(kSchemaVersion) + ")",
                             1);
  }
  if (version != kSchemaVersion) {
    throw SchemaVersionError(
        "dataset schema_version " + std::to_string(version) + " unsupported",
        1);
  }
  if (j.at("kind").get<std::string>() != "dataset") {
    throw StoreError("header kind is not \"dataset\"", 1);
  }
  return parse_task_id(j.at("task").get<std::string>());
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

std::string episode_to_line(const Trajectory& traj) {
  return episode_json(traj).dump();
}

std::string dataset_to_string(const Dataset& ds) {
  std::string out = dataset_header(ds.task).dump();
  out += '\n';
  for (const Trajectory& t : ds.episodes) {
    if (t.header.task != ds.task) {
      throw StoreError("episode task differs from dataset task");
    }
    out += episode_to_line(t);
    out += '\n';
  }
  return out;
}

Dataset dataset_from_string(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw StoreError("missing header line", 1);
  Dataset ds;
  try {
    ds.task = check_dataset_header(Json::parse(lines[0]));
  } catch (const StoreError&) {
    throw;
  } catch (const std::exception& e) {
    throw StoreError(std::string("malformed header: ") + e.what(), 1);
  }
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      Trajectory t = episode_from(Json::parse(lines[i]));
      if (t.header.task != ds.task) {
        throw std::invalid_argument("episode task differs from dataset task");
      }
      ds.episodes.push_back(std::move(t));
    } catch (const SchemaVersionError& e) {
      throw SchemaVersionError(e.what(), i + 1);
    } catch (const std::exception& e) {
      throw StoreError(std::string("malformed episode: ") + e.what(), i + 1);
    }
  }
  return ds;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + path.string());
  out << text;
  if (!out) throw StoreError("write failed for " + path.string());
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_text(path, dataset_to_string(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  return dataset_from_string(read_text(path));
}

std::vector<Violation> validate_text(const std::string& text) {
  std::vector<Violation> out;
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) {
    out.push_back({0, "schema", "file is empty"});
    return out;
  }
  TaskId task_id{};
  try {
    task_id = check_dataset_header(Json::parse(lines[0]));
  } catch (const SchemaVersionError& e) {
    out.push_back({1, "schema", e.what()});
    return out;
  } catch (const std::exception& e) {
    out.push_back({1, "malformed", e.what()});
    return out;
  }
  const TaskSpec task = make_task(task_id);
  const Criterion criterion = criterion_for(task);

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line = i + 1;
    if (lines[i].empty()) continue;
    Json j;
    try {
      j = Json::parse(lines[i]);
    } catch (const std::exception& e) {
      out.push_back({line, "malformed", e.what()});
      continue;
    }
    Trajectory t;
    try {
      t = episode_from(j);
    } catch (const SchemaVersionError& e) {
      out.push_back({line, "schema", e.what()});
      continue;
    } catch (const std::exception& e) {
      out.push_back({line, "malformed", e.what()});
      continue;
    }
    if (t.header.task != task_id) {
      out.push_back({line, "schema", "episode task differs from header"});
    }
    long long expect = 0;
    for (const Json& s : j.at("steps")) {
      const long long ts = s.at("t").get<long long>();
      if (ts != expect) {
        out.push_back({line, "monotone-t",
                       "step t=" + std::to_string(ts) + " where " +
                           std::to_string(expect) + " was expected"});
        break;
      }
      ++expect;
    }
    if (t.header.provenance == Provenance::synthetic && !t.goal) {
      out.push_back({line, "goal-filter",
                     "generated episode does not end goal-satisfied"});
    }
    if (t.header.termination) {
      if (*t.header.termination < 0 || t.steps.empty() ||
          !fires(criterion, t.steps.front(), t.post(0))) {
        out.push_back({line, "suffix-filter",
                       "record does not start at its termination step"});
      }
    }
    if (t.steps.empty()) {
      out.push_back({line, "schema", "episode has no steps"});
    }
  }
  return out;
}

std::vector<Violation> validate(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const std::exception& e) {
    return {{0, "schema", e.what()}};
  }
  return validate_text(text);
}

std::string model_to_string(const PolicyModel& model) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "model";
  const FeatureLayout& l = model.layout();
  j["layout"] = {{"task", to_string(l.task)},
                 {"objects", l.objects},
                 {"orientation", l.orientation},
                 {"subtasks", l.subtasks}};
  j["k"] = model.k();
  j["limits"] = {{"max_translation", model.limits().max_translation},
                 {"max_rotation", model.limits().max_rotation}};
  j["mean"] = model.mean();
  j["scale"] = model.scale();
  j["rows"] = model.normalized();
  Json actions = Json::array();
  for (const DeltaAction& a : model.actions()) {
    actions.push_back(Json::array({a.translation.x(), a.translation.y(),
                                   a.translation.z(), a.rotation.x(),
                                   a.rotation.y(), a.rotation.z(),
                                   to_string(a.gripper)}));
  }
  j["actions"] = std::move(actions);
  j["weights"] = model.weights();
  j["intervention"] = model.intervention();
  return j.dump() + "\n";
}

PolicyModel model_from_string(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      throw SchemaVersionError("model schema_version " +
                               std::to_string(version) + " unsupported");
    }
    if (j.at("kind").get<std::string>() != "model") {
      throw StoreError("file is not a model");
    }
    FeatureLayout l;
    const Json& lj = j.at("layout");
    l.task = parse_task_id(lj.at("task").get<std::string>());
    l.objects = lj.at("objects").get<int>();
    l.orientation = lj.at("orientation").get<bool>();
    l.subtasks = lj.at("subtasks").get<int>();
    StepLimits lim;
    lim.max_translation = j.at("limits").at("max_translation").get<double>();
    lim.max_rotation = j.at("limits").at("max_rotation").get<double>();
    std::vector<DeltaAction> actions;
    for (const Json& a : j.at("actions")) {
      DeltaAction d;
      d.translation = Vec3(a.at(0).get<double>(), a.at(1).get<double>(),
                           a.at(2).get<double>());
      d.rotation = Vec3(a.at(3).get<double>(), a.at(4).get<double>(),
                        a.at(5).get<double>());
      d.gripper = parse_gripper(a.at(6).get<std::string>());
      actions.push_back(d);
    }
    return PolicyModel::from_parts(
        l, j.at("k").get<int>(), lim, j.at("mean").get<std::vector<double>>(),
        j.at("scale").get<std::vector<double>>(),
        j.at("rows").get<std::vector<double>>(), std::move(actions),
        j.at("weights").get<std::vector<double>>(),
        j.at("intervention").get<std::vector<std::uint8_t>>());
  } catch (const StoreError&) {
    throw;
  } catch (const std::exception& e) {
    throw StoreError(std::string("malformed model: ") + e.what());
  }
}

void write_model(const PolicyModel& model, const std::filesystem::path& path) {
  write_text(path, model_to_string(model));
}

PolicyModel read_model(const std::filesystem::path& path) {
  return model_from_string(read_text(path));
}

std::string report_to_string(const GenerationReport& report) {
  Json j;
  j["kind"] = "generation_report";
  j["attempts"] = report.attempts;
  j["successes"] = report.successes;
  Json failures = Json::object();
  for (Outcome o : {Outcome::goal_failed, Outcome::horizon,
                    Outcome::no_mistake, Outcome::infeasible_adapt}) {
    auto it = report.failures.find(o);
    failures[std::string(to_string(o))] =
        it == report.failures.end() ? 0 : it->second;
  }
  j["failures"] = std::move(failures);
  j["wall_clock_seconds"] = report.wall_clock_seconds;
  Json log = Json::array();
  for (const GenerationAttempt& a : report.log) {
    log.push_back({{"index", a.index},
                   {"seed", a.seed},
                   {"outcome", to_string(a.outcome)}});
  }
  j["attempts_log"] = std::move(log);
  return j.dump(2) + "\n";
}

TaskSpec RunConfig::task_spec() const {
  TaskSpec t = make_task(task);
  t.limits = controller;
  if (observability) t.feedback = *observability;
  if (goal_tolerance) t.goal_tolerance = *goal_tolerance;
  if (horizon) t.horizon = *horizon;
  t.validate();
  return t;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  corruption.validate();
  if (policy.k < 1) fail("policy.k must be >= 1");
  if (!(controller.max_translation > 0.0) || !(controller.max_rotation > 0.0)) {
    fail("controller limits must be > 0");
  }
  if (generation.m < 1) fail("generation.m must be >= 1");
  if (generation.n < 1) fail("generation.n must be >= 1");
  if (generation.workers < 1) fail("generation.workers must be >= 1");
  if (eval.trials < 1) fail("eval.trials must be >= 1");
  if (eval.seeds.empty()) fail("eval.seeds must not be empty");
  task_spec();
}

CorruptionModel corruption_preset(std::string_view name) {
  return detail::corruption_preset(std::string(name));
}

RunConfig run_config_from_string(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") +
                                e.what());
  }
  RunConfig c;
  Fields top(j, "config");
  if (const Json* v = top.get("task")) {
    c.task = parse_task_id(v->get<std::string>());
  }
  if (const Json* v = top.get("corruption")) {
    c.corruption = detail::corruption_config(*v);
  }
  if (const Json* v = top.get("policy")) {
    Fields f(*v, "policy");
    f.read("k", c.policy.k);
    if (const Json* w = f.get("weights")) {
      c.policy.weights = parse_weights_mode(w->get<std::string>());
    }
    f.finish();
  }
  if (const Json* v = top.get("controller")) {
    Fields f(*v, "controller");
    f.read("max_translation", c.controller.max_translation);
    f.read("max_rotation", c.controller.max_rotation);
    f.finish();
  }
  if (const Json* v = top.get("generation")) {
    Fields f(*v, "generation");
    f.read("m", c.generation.m);
    f.read("n", c.generation.n);
    f.read("seed", c.generation.seed);
    f.read("workers", c.generation.workers);
    f.read("attempt_cap", c.generation.attempt_cap);
    f.finish();
  }
  if (const Json* v = top.get("observability")) {
    c.observability = parse_feedback_mode(v->get<std::string>());
  }
  if (const Json* v = top.get("world")) {
    Fields f(*v, "world");
    if (const Json* g = f.get("goal_tolerance")) c.goal_tolerance = g->get<double>();
    if (const Json* h = f.get("horizon")) c.horizon = h->get<int>();
    f.finish();
  }
  if (const Json* v = top.get("eval")) {
    Fields f(*v, "eval");
    f.read("trials", c.eval.trials);
    f.read("seeds", c.eval.seeds);
    f.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  return run_config_from_string(read_text(path));
}

std::string run_config_to_string(const RunConfig& c) {
  Json j;
  j["task"] = to_string(c.task);
  Json z = corruption_json(c.corruption);
  j["corruption"] = std::move(z);
  j["policy"] = {{"k", c.policy.k}, {"weights", to_string(c.policy.weights)}};
  j["controller"] = {{"max_translation", c.controller.max_translation},
                     {"max_rotation", c.controller.max_rotation}};
  j["generation"] = {{"m", c.generation.m},
                     {"n", c.generation.n},
                     {"seed", c.generation.seed},
                     {"workers", c.generation.workers},
                     {"attempt_cap", c.generation.attempt_cap}};
  if (c.observability) j["observability"] = to_string(*c.observability);
  Json world = Json::object();
  if (c.goal_tolerance) world["goal_tolerance"] = *c.goal_tolerance;
  if (c.horizon) world["horizon"] = *c.horizon;
  if (!world.empty()) j["world"] = std::move(world);
  j["eval"] = {{"trials", c.eval.trials}, {"seeds", c.eval.seeds}};
  return j.dump(2) + "\n";
}

}  // namespace ivgen
