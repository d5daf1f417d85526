#include "ivgen/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ivgen {

namespace {

constexpr std::uint64_t kSourcePickStream = 3;
constexpr int kNoMistakeRetries = 100;

int reference_of(const TaskSpec& task, int subtask) {
  const int last = static_cast<int>(task.subtasks.size()) - 1;
  return task.subtasks[static_cast<std::size_t>(std::min(subtask, last))]
      .reference_object;
}

SourceSpan make_span(const TaskSpec& task, const Trajectory& traj,
                     const std::vector<WorldState>& states,
                     const Segment& seg) {
  SourceSpan sp;
  sp.seg = seg;
  sp.poses = commanded_poses(task, traj, seg.start, seg.end);
  for (std::size_t i = seg.start; i < seg.end; ++i) {
    sp.grippers.push_back(traj.steps[i].action.gripper);
  }
  const WorldState& s = states[seg.start];
  sp.reference_object = reference_of(task, seg.subtask);
  sp.reference_pose = s.objects[sp.reference_object];
  sp.seg.reference_pose = sp.reference_pose;
  if (s.held >= 0) sp.held_offset = s.held_offset;
  return sp;
}

void append(Trajectory& traj, ReplayResult& r) {
  for (Step& st : r.steps) traj.steps.push_back(std::move(st));
}

Trajectory finish(Trajectory traj, const TaskSpec& task,
                  const CorruptionModel& z, const WorldState& s) {
  traj.final_obs = observe(task, s, z, Role::robot);
  traj.goal = goal_satisfied(task, s);
  return traj;
}

GenerateOneResult fail(Outcome o) { return {o, std::nullopt}; }

GenerateOneResult generate_interventions(const TaskSpec& task,
                                         const CorruptionModel& z,
                                         const PolicyModel& policy,
                                         const SourceIndex& source,
                                         const GeneratorConfig& config,
                                         std::uint64_t seed) {
  const Criterion criterion = criterion_for(task);
  WorldState s = reset(task, z, seed);
  Trajectory traj;
  traj.header = make_header(task, z, s, config.provenance);
  Rng pick(derive_seed({seed, kSourcePickStream}));
  std::optional<std::size_t> first_t;

  while (!goal_satisfied(task, s)) {
    if (s.step_count >= task.horizon) return fail(Outcome::horizon);
    Step st;
    st.obs = observe(task, s, z, Role::robot);
    st.action = policy.act(st.obs);
    st.actor = Actor::policy;
    StepResult r = step(task, s, st.action);
    st.contact = r.contact;
    const bool stuck = same_configuration(s, r.state);
    s = std::move(r.state);
    traj.steps.push_back(st);

    const Observation post = observe(task, s, z, Role::robot);
    if (!fires(criterion, st, post) || goal_satisfied(task, s)) {
      if (stuck) return fail(Outcome::horizon);
      continue;
    }
    if (!first_t) first_t = traj.steps.size() - 1;

    const auto& candidates = source.with_recovery(s.subtask);
    if (candidates.empty()) return fail(Outcome::goal_failed);
    const std::size_t j = candidates[pick.below(candidates.size())];
    const AdaptedSegment path = adapt(task, s, *source.recovery(j, s.subtask));
    ReplayResult rr = replay(task, z, s, path);
    append(traj, rr);
    s = std::move(rr.state);
    if (rr.stop == ReplayStop::drift) return fail(Outcome::infeasible_adapt);
  }

  if (!first_t) {
    if (!config.keep_policy_success) return fail(Outcome::no_mistake);
    return {Outcome::success, finish(std::move(traj), task, z, s)};
  }
  Trajectory full = finish(std::move(traj), task, z, s);
  return {Outcome::success, suffix(full, *first_t)};
}

GenerateOneResult generate_without_policy(const TaskSpec& task,
                                          const CorruptionModel& z,
                                          const SourceIndex& source,
                                          const GeneratorConfig& config,
                                          std::uint64_t seed) {
  const Criterion criterion = criterion_for(task);
  Rng pick(derive_seed({seed, kSourcePickStream}));
  const std::size_t j = pick.below(source.size());
  const Trajectory& src = source.dataset().episodes[j];

  // Same corruption draw as the source; only the scene layout is new.
  WorldState s = reset(task, z, seed, src.header.corruption_seed);
  Trajectory traj;
  traj.header = make_header(task, z, s, config.provenance);
  std::optional<std::size_t> first_t;

  for (const SourceSpan& span : source.spans(j)) {
    if (goal_satisfied(task, s)) break;
    if (span.seg.subtask < s.subtask) continue;
    ReplayOptions opt;
    opt.actor = span.seg.actor;
    if (span.seg.actor == Actor::policy) {
      opt.stop_on = criterion;
      opt.drift_tolerance = std::numeric_limits<double>::infinity();
    }
    const AdaptedSegment path = adapt(task, s, span);
    ReplayResult rr = replay(task, z, s, path, opt);
    append(traj, rr);
    s = std::move(rr.state);
    if (rr.stop == ReplayStop::drift) return fail(Outcome::infeasible_adapt);
    if (rr.stop == ReplayStop::terminated && !first_t) {
      first_t = traj.steps.size() - 1;
    }
  }

  if (!goal_satisfied(task, s)) return fail(Outcome::goal_failed);
  if (!first_t) {
    if (!config.keep_policy_success) return fail(Outcome::no_mistake);
    return {Outcome::success, finish(std::move(traj), task, z, s)};
  }
  Trajectory full = finish(std::move(traj), task, z, s);
  return {Outcome::success, suffix(full, *first_t)};
}

GenerateOneResult generate_demo(const TaskSpec& task, const CorruptionModel& z,
                                const SourceIndex& source,
                                const GeneratorConfig& config,
                                std::uint64_t seed) {
  WorldState s = reset(task, z, seed);
  Trajectory traj;
  traj.header = make_header(task, z, s, config.provenance);
  Rng pick(derive_seed({seed, kSourcePickStream}));

  const int subtasks = static_cast<int>(task.subtasks.size());
  for (int sub = 0; sub < subtasks; ++sub) {
    if (s.subtask > sub) continue;
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < source.size(); ++j) {
      if (source.subtask_span(j, sub)) candidates.push_back(j);
    }
    if (candidates.empty()) return fail(Outcome::goal_failed);
    const std::size_t j = candidates[pick.below(candidates.size())];
    const AdaptedSegment path = adapt(task, s, *source.subtask_span(j, sub));
    ReplayResult rr = replay(task, z, s, path);
    append(traj, rr);
    s = std::move(rr.state);
    if (rr.stop == ReplayStop::drift) return fail(Outcome::infeasible_adapt);
    if (s.subtask <= sub) return fail(Outcome::goal_failed);
  }
  return {Outcome::success, finish(std::move(traj), task, z, s)};
}

bool has_expert_step(const Trajectory& t) {
  return std::any_of(t.steps.begin(), t.steps.end(),
                     [](const Step& s) { return s.actor == Actor::expert; });
}

}  // namespace

std::vector<Segment> segment(const Trajectory& traj, const TaskSpec& task) {
  std::vector<Segment> out;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& st = traj.steps[i];
    if (out.empty() || out.back().actor != st.actor) {
      Segment seg;
      seg.start = i;
      seg.actor = st.actor;
      seg.subtask = st.obs.subtask;
      if (st.actor == Actor::expert && !traj.header.true_objects.empty()) {
        seg.reference_pose =
            traj.header.true_objects[reference_of(task, seg.subtask)];
      }
      out.push_back(seg);
    }
    out.back().end = i + 1;
  }
  return out;
}

PoseSequence commanded_poses(const TaskSpec& task, const Trajectory& traj,
                             std::size_t start, std::size_t end) {
  PoseSequence out;
  out.push_back(traj.steps[start].obs.ee);
  for (std::size_t i = start; i < end; ++i) {
    const Step& st = traj.steps[i];
    Pose target = apply_delta(st.obs.ee, clamp(st.action, task.limits).delta);
    target.position = task.workspace.clamp(target.position);
    out.push_back(target);
  }
  return out;
}

std::optional<std::size_t> detect_termination(const Trajectory& traj,
                                              Criterion criterion,
                                              std::size_t from) {
  for (std::size_t i = from; i < traj.steps.size(); ++i) {
    if (fires(criterion, traj.steps[i], traj.post(i))) return i;
  }
  return std::nullopt;
}

std::vector<WorldState> resimulate(const TaskSpec& task,
                                   const Trajectory& traj) {
  if (traj.header.termination) {
    throw std::invalid_argument(
        "resimulate: record starts mid-episode and cannot be replayed");
  }
  std::vector<WorldState> states;
  states.reserve(traj.steps.size() + 1);
  states.push_back(reset(task, traj.header.corruption, traj.header.seed,
                         traj.header.corruption_seed));
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const WorldState& s = states.back();
    const Step& st = traj.steps[i];
    if (!approx_equal(s.ee, st.obs.ee, 1e-9) || s.subtask != st.obs.subtask) {
      throw std::invalid_argument("resimulate: step " + std::to_string(i) +
                                  " disagrees with the recorded observation");
    }
    states.push_back(step(task, s, st.action).state);
  }
  return states;
}

AdaptedSegment adapt(const TaskSpec& task, const WorldState& current,
                     const SourceSpan& source) {
  if (source.poses.empty()) {
    throw std::invalid_argument("adapt: empty source span");
  }
  const Pose& target = current.objects[source.reference_object];
  PoseSequence moved;
  if (source.held_offset && current.held >= 0) {
    const Pose retarget = compose(target, inverse(source.reference_pose));
    const Pose regrip =
        compose(*source.held_offset, inverse(current.held_offset));
    moved.reserve(source.poses.size());
    for (const Pose& p : source.poses) {
      moved.push_back(compose(compose(retarget, p), regrip));
    }
  } else {
    moved = transform_segment(source.poses, source.reference_pose, target);
  }

  AdaptedSegment out;
  out.poses = interpolate(current.ee, moved.front(), task.limits.max_translation,
                          task.limits.max_rotation);
  out.bridge = out.poses.size() - 1;
  out.grippers.assign(out.bridge, Gripper::hold);
  out.poses.insert(out.poses.end(), moved.begin() + 1, moved.end());
  out.grippers.insert(out.grippers.end(), source.grippers.begin(),
                      source.grippers.end());
  for (const Pose& p : out.poses) {
    if (!task.workspace.contains(p.position, 1e-9)) {
      throw InfeasibleAdapt("infeasible-adapt: pose leaves the workspace");
    }
  }
  return out;
}

ReplayResult replay(const TaskSpec& task, const CorruptionModel& z,
                    const WorldState& state, const AdaptedSegment& path,
                    const ReplayOptions& options) {
  ReplayResult out;
  out.state = state;
  WorldState& s = out.state;
  for (std::size_t i = 0; i + 1 < path.poses.size(); ++i) {
    const Pose& target = path.poses[i + 1];
    Step st;
    st.obs = observe(task, s, z, Role::robot);
    st.action = delta_between(s.ee, target, task.limits).delta;
    st.action.gripper = path.grippers[i];
    st.actor = options.actor;
    const int subtask_before = s.subtask;
    StepResult r = step(task, s, st.action);
    st.contact = r.contact;
    s = std::move(r.state);
    out.steps.push_back(std::move(st));

    if (s.subtask != subtask_before) {
      out.stop = ReplayStop::subtask_complete;
      return out;
    }
    if (options.stop_on &&
        fires(*options.stop_on, out.steps.back(),
              observe(task, s, z, Role::robot))) {
      out.stop = ReplayStop::terminated;
      return out;
    }
    if (!approx_equal(s.ee, target, options.drift_tolerance)) {
      out.stop = ReplayStop::drift;
      return out;
    }
  }
  out.stop = ReplayStop::exhausted;
  return out;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::success: return "success";
    case Outcome::goal_failed: return "goal-failed";
    case Outcome::horizon: return "horizon";
    case Outcome::no_mistake: return "no-mistake";
    case Outcome::infeasible_adapt: return "infeasible-adapt";
  }
  return "?";
}

std::string_view to_string(GenerationMode m) {
  switch (m) {
    case GenerationMode::interventions: return "interventions";
    case GenerationMode::no_policy: return "no-policy";
    case GenerationMode::demo: return "demo";
  }
  return "?";
}

SourceIndex::SourceIndex(const Dataset& source, const TaskSpec& task)
    : source_(&source) {
  if (source.task != task.id) {
    throw LayoutMismatch("source dataset task does not match");
  }
  const std::size_t subtasks = task.subtasks.size();
  with_recovery_.resize(subtasks);
  for (std::size_t j = 0; j < source.episodes.size(); ++j) {
    const Trajectory& traj = source.episodes[j];
    const std::vector<WorldState> states = resimulate(task, traj);
    std::vector<SourceSpan> spans;
    std::vector<bool> listed(subtasks, false);
    for (const Segment& seg : segment(traj, task)) {
      spans.push_back(make_span(task, traj, states, seg));
      const auto sub = static_cast<std::size_t>(seg.subtask);
      if (seg.actor == Actor::expert && sub < subtasks && !listed[sub]) {
        with_recovery_[sub].push_back(j);
        listed[sub] = true;
      }
    }
    spans_.push_back(std::move(spans));

    std::vector<std::optional<SourceSpan>> per(subtasks);
    std::size_t i = 0;
    while (i < traj.steps.size()) {
      const int sub = traj.steps[i].obs.subtask;
      std::size_t e = i;
      bool expert_only = true;
      while (e < traj.steps.size() && traj.steps[e].obs.subtask == sub) {
        expert_only = expert_only && traj.steps[e].actor == Actor::expert;
        ++e;
      }
      if (expert_only && static_cast<std::size_t>(sub) < subtasks) {
        Segment seg;
        seg.start = i;
        seg.end = e;
        seg.actor = Actor::expert;
        seg.subtask = sub;
        per[static_cast<std::size_t>(sub)] = make_span(task, traj, states, seg);
      }
      i = e;
    }
    by_subtask_.push_back(std::move(per));
  }
}

const std::vector<std::size_t>& SourceIndex::with_recovery(int subtask) const {
  static const std::vector<std::size_t> none;
  if (subtask < 0 || static_cast<std::size_t>(subtask) >= with_recovery_.size()) {
    return none;
  }
  return with_recovery_[static_cast<std::size_t>(subtask)];
}

const SourceSpan* SourceIndex::recovery(std::size_t traj, int subtask) const {
  for (const SourceSpan& sp : spans_[traj]) {
    if (sp.seg.actor == Actor::expert && sp.seg.subtask == subtask) return &sp;
  }
  return nullptr;
}

std::uint64_t GenerationReport::failure_total() const {
  std::uint64_t n = 0;
  for (const auto& [cause, count] : failures) n += count;
  return n;
}

GenerateOneResult generate_one(const TaskSpec& task, const CorruptionModel& z,
                               const PolicyModel* policy,
                               const SourceIndex& source,
                               const GeneratorConfig& config,
                               std::uint64_t seed) {
  try {
    switch (config.mode) {
      case GenerationMode::interventions:
        if (policy == nullptr) {
          throw std::invalid_argument("interventions mode needs a policy");
        }
        return generate_interventions(task, z, *policy, source, config, seed);
      case GenerationMode::no_policy:
        return generate_without_policy(task, z, source, config, seed);
      case GenerationMode::demo:
        return generate_demo(task, z, source, config, seed);
    }
  } catch (const EpisodeOver&) {
    return fail(Outcome::horizon);
  } catch (const InfeasibleAdapt&) {
    return fail(Outcome::infeasible_adapt);
  }
  return fail(Outcome::goal_failed);
}

CapReached::CapReached(Dataset partial_, GenerationReport report_)
    : std::runtime_error("cap-reached: attempt cap hit after " +
                         std::to_string(report_.attempts) + " attempts with " +
                         std::to_string(report_.successes) + " retained"),
      partial(std::move(partial_)),
      report(std::move(report_)) {}

GenerationResult generate(const TaskSpec& task, const CorruptionModel& z,
                          const PolicyModel* policy, const Dataset& source,
                          const GenerateRequest& request) {
  if (request.n < 1) throw std::invalid_argument("generate: n must be >= 1");
  if (source.episodes.empty()) {
    throw std::invalid_argument("generate: source dataset is empty");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const SourceIndex index(source, task);
  const std::size_t cap =
      request.attempt_cap > 0 ? request.attempt_cap : 20 * request.n;
  const unsigned workers = std::max(1u, request.workers);

  GenerationResult out;
  out.dataset.task = task.id;
  GenerationReport& report = out.report;

  std::size_t next = 0;
  while (out.dataset.episodes.size() < request.n && next < cap) {
    const std::size_t want = request.n - out.dataset.episodes.size();
    const std::size_t batch =
        std::min(cap - next, std::max<std::size_t>(want, workers));
    std::vector<GenerateOneResult> results(batch);
    std::vector<std::uint64_t> seeds(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      seeds[b] = derive_seed({request.seed, static_cast<std::uint64_t>(next + b)});
    }

    std::atomic<std::size_t> cursor{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
      for (std::size_t b = cursor++; b < batch; b = cursor++) {
        try {
          results[b] = generate_one(task, z, policy, index, request.config,
                                    seeds[b]);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    };
    if (workers == 1) {
      work();
    } else {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    if (error) std::rethrow_exception(error);

    for (std::size_t b = 0; b < batch; ++b) {
      GenerationAttempt a{next + b, seeds[b], results[b].outcome};
      report.log.push_back(a);
      ++report.attempts;
      if (a.outcome == Outcome::success) {
        ++report.successes;
        out.dataset.episodes.push_back(std::move(*results[b].episode));
        if (out.dataset.episodes.size() == request.n) break;
      } else {
        ++report.failures[a.outcome];
      }
    }
    next += batch;
  }
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (out.dataset.episodes.size() < request.n) {
    throw CapReached(std::move(out.dataset), std::move(out.report));
  }
  return out;
}

Dataset collect_demos(const TaskSpec& task, const CorruptionModel& z,
                      std::size_t m, std::uint64_t seed,
                      Provenance provenance) {
  const OracleExpert expert;
  const Agent agent = expert_agent(expert, task);
  Dataset out;
  out.task = task.id;
  RolloutOptions opt;
  opt.provenance = provenance;
  const std::size_t cap = 100 * std::max<std::size_t>(m, 1);
  for (std::size_t a = 0; out.episodes.size() < m; ++a) {
    if (a == cap) throw CollectionFailed("expert failed to reach the goal");
    Trajectory t = rollout(agent, task, z, derive_seed({seed, a}), std::nullopt,
                           opt);
    if (t.goal) out.episodes.push_back(std::move(t));
  }
  return out;
}

Dataset collect_interventions(const PolicyModel& policy, const TaskSpec& task,
                              const CorruptionModel& z, std::size_t m,
                              std::uint64_t seed, CollectionReport* report) {
  const OracleExpert expert;
  const OracleGate gate{criterion_for(task), expert_agent(expert, task)};
  const Agent agent = policy_agent(policy);
  RolloutOptions opt;
  opt.provenance = Provenance::source_human;

  CollectionReport local;
  CollectionReport& rep = report != nullptr ? *report : local;
  Dataset out;
  out.task = task.id;
  int no_mistake_run = 0;
  for (std::uint64_t a = 0; out.episodes.size() < m; ++a) {
    ++rep.attempts;
    Trajectory t = rollout(agent, task, z, derive_seed({seed, a}), gate, opt);
    if (!has_expert_step(t)) {
      ++rep.no_mistake;
      if (++no_mistake_run >= kNoMistakeRetries) {
        throw CollectionFailed("no-mistake: policy needed no intervention in " +
                               std::to_string(kNoMistakeRetries) +
                               " consecutive attempts");
      }
      continue;
    }
    no_mistake_run = 0;
    if (!t.goal) {
      ++rep.expert_failed;
      if (rep.expert_failed >= kNoMistakeRetries * std::max<std::size_t>(m, 1)) {
        throw CollectionFailed("expert failed to recover repeatedly");
      }
      continue;
    }
    out.episodes.push_back(std::move(t));
  }
  return out;
}

OfflineResult offline_collect(const TaskSpec& task, const CorruptionModel& z,
                              const std::vector<ScriptedMistake>& mistakes,
                              std::size_t m, std::uint64_t seed) {
  const OracleExpert expert;
  const Criterion criterion = criterion_for(task);
  OfflineResult out;
  out.dataset.task = task.id;
  const std::size_t cap = 100 * std::max<std::size_t>(m, 1);

  for (std::uint64_t a = 0; out.dataset.episodes.size() < m; ++a) {
    if (a == cap) throw CollectionFailed("expert failed to reach the goal");
    const std::size_t j = out.dataset.episodes.size();
    const std::optional<ScriptedMistake> mistake =
        mistakes.empty() ? std::nullopt
                         : std::optional(mistakes[j % mistakes.size()]);
    WorldState s = reset(task, z, derive_seed({seed, a}));
    Trajectory traj;
    traj.header = make_header(task, z, s, Provenance::source_human);
    bool mistaking = mistake.has_value();
    bool fired = false;
    const int mistake_subtask = s.subtask;
    const int mistake_budget = task.horizon / 2;

    while (!goal_satisfied(task, s) && s.step_count < task.horizon) {
      Observation view = observe(task, s, z, Role::expert);
      Step st;
      st.obs = observe(task, s, z, Role::robot);
      st.actor = Actor::expert;
      if (mistaking) {
        Pose& ref = view.objects[reference_of(task, s.subtask)];
        ref.position += mistake->offset;
        ref.orientation = canonical(
            exp_rotation(Vec3(0.0, 0.0, mistake->yaw)) * ref.orientation);
        st.actor = Actor::policy;
      }
      st.action = expert.act(view, task);
      StepResult r = step(task, s, st.action);
      st.contact = r.contact;
      s = std::move(r.state);
      traj.steps.push_back(st);
      if (mistaking) {
        const Observation post = observe(task, s, z, Role::robot);
        if (fires(criterion, st, post)) {
          fired = true;
          mistaking = false;
        } else if (s.subtask != mistake_subtask ||
                   s.step_count >= mistake_budget) {
          mistaking = false;
        }
      }
    }
    Trajectory done = finish(std::move(traj), task, z, s);
    if (!done.goal) continue;
    out.dataset.episodes.push_back(std::move(done));
    out.no_mistake.push_back(!fired);
  }
  return out;
}

Dataset aggregate(const Dataset& base, const Dataset& extra) {
  if (base.task != extra.task) {
    throw LayoutMismatch("aggregate: datasets belong to different tasks");
  }
  Dataset out = base;
  out.episodes.insert(out.episodes.end(), extra.episodes.begin(),
                      extra.episodes.end());
  return out;
}

Trajectory suffix(const Trajectory& traj, std::size_t from) {
  Trajectory out;
  out.header = traj.header;
  out.header.termination =
      traj.header.termination.value_or(0) + static_cast<int>(from);
  out.steps.assign(traj.steps.begin() + static_cast<std::ptrdiff_t>(from),
                   traj.steps.end());
  out.final_obs = traj.final_obs;
  out.goal = traj.goal;
  return out;
}

}  // namespace ivgen
