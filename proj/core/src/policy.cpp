#include "ivgen/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

namespace ivgen {

namespace {

constexpr double kDistanceFloor = 1e-6;

void mix(std::size_t& h, std::uint64_t v) {
  h ^= std::hash<std::uint64_t>{}(v) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

void mix(std::size_t& h, double v) { mix(h, std::bit_cast<std::uint64_t>(v)); }

void mix(std::size_t& h, const Pose& p) {
  for (int i = 0; i < 3; ++i) mix(h, p.position[i]);
  for (int i = 0; i < 4; ++i) mix(h, p.orientation.coeffs()[i]);
}

// Consistent with same_configuration: equal configurations hash equally.
std::size_t configuration_hash(const WorldState& s, bool expert_in_control) {
  std::size_t h = expert_in_control ? 1 : 0;
  mix(h, s.ee);
  mix(h, s.gripper_width);
  mix(h, static_cast<std::uint64_t>(s.held + 1));
  mix(h, static_cast<std::uint64_t>(s.subtask));
  mix(h, static_cast<std::uint64_t>(s.geometry_variant));
  mix(h, static_cast<std::uint64_t>(s.first_contact.has_value()));
  for (int i = 0; i < 3; ++i) mix(h, s.contact_truth[i]);
  if (s.held >= 0) mix(h, s.held_offset);
  for (const Pose& o : s.objects) mix(h, o);
  return h;
}

double planar_distance(const Vec3& a, const Vec3& b) {
  return std::hypot(a.x() - b.x(), a.y() - b.y());
}

DeltaAction toward(const Pose& from, const Vec3& position, double yaw,
                   Gripper gripper, const StepLimits& limits) {
  Pose target = Pose::from_yaw(yaw, position);
  DeltaAction d = delta_between(from, target, limits).delta;
  d.gripper = gripper;
  return d;
}

// Moves the held object's footprint onto the peg, then lowers it.
DeltaAction seat_action(const OracleExpert& self, const Observation& obs,
                        const TaskSpec& task, const SubtaskSpec& sub) {
  const Vec3& peg = obs.objects[sub.reference_object].position;
  const Vec3& body = obs.objects[task.nut_index()].position;
  const Vec3 ee = obs.ee.position;
  const double yaw = obs.ee.yaw();
  const double carry = task.peg_top + task.hover_clearance;
  const double lift = ee.z() + (carry - body.z());

  if (planar_distance(body, peg) > self.tolerance) {
    if (body.z() < task.peg_top - self.tolerance) {
      return toward(obs.ee, Vec3(ee.x(), ee.y(), lift), yaw, Gripper::hold,
                    task.limits);
    }
    const Vec3 target(ee.x() + peg.x() - body.x(), ee.y() + peg.y() - body.y(),
                      lift);
    return toward(obs.ee, target, yaw, Gripper::hold, task.limits);
  }
  return toward(obs.ee, Vec3(ee.x(), ee.y(), ee.z() - body.z()), yaw,
                Gripper::hold, task.limits);
}

DeltaAction grasp_action(const OracleExpert& self, const Observation& obs,
                         const TaskSpec& task, const SubtaskSpec& sub) {
  const Pose& obj = obs.objects[sub.reference_object];
  const Vec3 handle = obj.position + obj.orientation * task.handle_offset;
  const double ee_yaw = obs.ee.yaw();
  // Parallel jaws: a half-turn grasps the same handle.
  const double yaw =
      ee_yaw + std::remainder(obj.yaw() - ee_yaw, std::numbers::pi);
  const Vec3 hover(handle.x(), handle.y(), handle.z() + self.hover_height);

  const bool xy_ok = planar_distance(obs.ee.position, handle) <= self.tolerance;
  const bool yaw_ok = std::abs(yaw - ee_yaw) <= self.tolerance;

  if (gripper_closed_empty(obs)) {
    if (xy_ok && yaw_ok &&
        std::abs(obs.ee.position.z() - hover.z()) <= self.tolerance) {
      DeltaAction d;
      d.gripper = Gripper::open;
      return d;
    }
    return toward(obs.ee, hover, yaw, Gripper::hold, task.limits);
  }
  if (!(xy_ok && yaw_ok)) {
    return toward(obs.ee, hover, yaw, Gripper::hold, task.limits);
  }
  if (obs.ee.position.z() > handle.z() + self.tolerance) {
    return toward(obs.ee, handle, yaw, Gripper::hold, task.limits);
  }
  DeltaAction d;
  d.gripper = Gripper::close;
  return d;
}

}  // namespace

int FeatureLayout::dim() const {
  const int pose_dim = orientation ? 5 : 3;
  return pose_dim + 1 + objects * pose_dim + 4 + subtasks;
}

std::vector<std::string> FeatureLayout::names() const {
  std::vector<std::string> n;
  auto pose = [&](const std::string& p) {
    n.push_back(p + ".x");
    n.push_back(p + ".y");
    n.push_back(p + ".z");
    if (orientation) {
      n.push_back(p + ".cos_yaw");
      n.push_back(p + ".sin_yaw");
    }
  };
  pose("ee");
  n.push_back("gripper_width");
  for (int i = 0; i < objects; ++i) pose("object" + std::to_string(i));
  n.push_back("feedback.x");
  n.push_back("feedback.y");
  n.push_back("feedback.z");
  n.push_back("feedback.active");
  for (int i = 0; i < subtasks; ++i) n.push_back("subtask" + std::to_string(i));
  return n;
}

FeatureLayout layout_for(const TaskSpec& task) {
  FeatureLayout l;
  l.task = task.id;
  l.objects = static_cast<int>(task.objects.size());
  l.orientation = task.placement_yaw_range > 0.0;
  l.subtasks = static_cast<int>(task.subtasks.size());
  return l;
}

void extract_features(const FeatureLayout& layout, const Observation& obs,
                      std::span<double> out) {
  if (static_cast<int>(out.size()) != layout.dim() ||
      static_cast<int>(obs.objects.size()) != layout.objects) {
    throw LayoutMismatch("observation does not match feature layout");
  }
  std::size_t i = 0;
  auto pose = [&](const Pose& p) {
    out[i++] = p.position.x();
    out[i++] = p.position.y();
    out[i++] = p.position.z();
    if (layout.orientation) {
      const double yaw = p.yaw();
      out[i++] = std::cos(yaw);
      out[i++] = std::sin(yaw);
    }
  };
  pose(obs.ee);
  out[i++] = obs.gripper_width;
  for (const Pose& p : obs.objects) pose(p);
  out[i++] = obs.feedback.payload.x();
  out[i++] = obs.feedback.payload.y();
  out[i++] = obs.feedback.payload.z();
  out[i++] = obs.feedback.active ? 1.0 : 0.0;
  for (int s = 0; s < layout.subtasks; ++s) {
    out[i++] = obs.subtask == s ? 1.0 : 0.0;
  }
}

std::string_view to_string(WeightsMode m) {
  return m == WeightsMode::uniform ? "uniform" : "balanced";
}

WeightsMode parse_weights_mode(std::string_view s) {
  if (s == "uniform") return WeightsMode::uniform;
  if (s == "balanced") return WeightsMode::balanced;
  throw std::invalid_argument("unknown weights mode: " + std::string(s));
}

PolicyModel PolicyModel::fit(const Dataset& data, const TaskSpec& task,
                             const FitConfig& config) {
  if (data.task != task.id) {
    throw LayoutMismatch("dataset task does not match fit task");
  }
  const FeatureLayout layout = layout_for(task);
  const std::size_t dim = static_cast<std::size_t>(layout.dim());
  const std::size_t n = data.step_count();
  if (n == 0) throw EmptyDataset();

  std::vector<double> features(n * dim);
  std::vector<DeltaAction> actions;
  std::vector<std::uint8_t> intervention;
  actions.reserve(n);
  intervention.reserve(n);
  std::size_t row = 0;
  for (const auto& ep : data.episodes) {
    const bool inter = ep.header.provenance != Provenance::base;
    for (const auto& st : ep.steps) {
      extract_features(layout, st.obs,
                       std::span<double>(features.data() + row * dim, dim));
      actions.push_back(st.action);
      intervention.push_back(inter ? 1 : 0);
      ++row;
    }
  }

  std::vector<double> weights(n, 1.0);
  if (config.weights == WeightsMode::balanced) {
    const auto inter = static_cast<double>(
        std::count(intervention.begin(), intervention.end(), 1));
    const double base = static_cast<double>(n) - inter;
    if (inter > 0.0 && base > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        if (intervention[i]) weights[i] = base / inter;
      }
    }
  }
  return fit_features(layout, std::move(features), std::move(actions),
                      std::move(weights), std::move(intervention), config.k,
                      task.limits);
}

PolicyModel PolicyModel::fit_features(const FeatureLayout& layout,
                                      std::vector<double> features,
                                      std::vector<DeltaAction> actions,
                                      std::vector<double> weights,
                                      std::vector<std::uint8_t> intervention,
                                      int k, const StepLimits& limits) {
  const auto dim = static_cast<std::size_t>(layout.dim());
  const std::size_t n = actions.size();
  if (n == 0) throw EmptyDataset();
  if (features.size() != n * dim || weights.size() != n ||
      (!intervention.empty() && intervention.size() != n)) {
    throw LayoutMismatch("feature, action and weight rows are not aligned");
  }
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("sample weights must be > 0");
  }
  if (intervention.empty()) intervention.assign(n, 0);

  std::vector<double> mean(dim, 0.0);
  std::vector<double> scale(dim, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dim; ++c) mean[c] += features[r * dim + c];
  }
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      const double d = features[r * dim + c] - mean[c];
      scale[c] += d * d;
    }
  }
  for (double& s : scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;
  }
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      double& v = features[r * dim + c];
      v = (v - mean[c]) / scale[c];
    }
  }
  return from_parts(layout, k, limits, std::move(mean), std::move(scale),
                    std::move(features), std::move(actions),
                    std::move(weights), std::move(intervention));
}

PolicyModel PolicyModel::from_parts(const FeatureLayout& layout, int k,
                                    const StepLimits& limits,
                                    std::vector<double> mean,
                                    std::vector<double> scale,
                                    std::vector<double> normalized,
                                    std::vector<DeltaAction> actions,
                                    std::vector<double> weights,
                                    std::vector<std::uint8_t> intervention) {
  PolicyModel m;
  m.layout_ = layout;
  m.dim_ = layout.dim();
  m.k_ = k;
  m.limits_ = limits;
  m.mean_ = std::move(mean);
  m.scale_ = std::move(scale);
  m.rows_ = std::move(normalized);
  m.actions_ = std::move(actions);
  m.weights_ = std::move(weights);
  m.intervention_ = std::move(intervention);
  const auto dim = static_cast<std::size_t>(m.dim_);
  if (m.mean_.size() != dim || m.scale_.size() != dim ||
      m.rows_.size() != m.actions_.size() * dim ||
      m.weights_.size() != m.actions_.size() ||
      m.intervention_.size() != m.actions_.size()) {
    throw LayoutMismatch("model parts are not aligned");
  }
  if (m.actions_.empty()) throw EmptyDataset();
  m.build_index();
  return m;
}

void PolicyModel::build_index() {
  constexpr std::uint32_t kLeafSize = 16;
  const auto dim = static_cast<std::size_t>(dim_);
  order_.resize(actions_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.clear();

  auto build = [&](auto& self, std::uint32_t begin,
                   std::uint32_t end) -> std::uint32_t {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    int axis = -1;
    double spread = 0.0;
    if (end - begin > kLeafSize) {
      for (std::size_t c = 0; c < dim; ++c) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (std::uint32_t i = begin; i < end; ++i) {
          const double v = rows_[order_[i] * dim + c];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        if (hi - lo > spread) {
          spread = hi - lo;
          axis = static_cast<int>(c);
        }
      }
    }
    if (axis < 0) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    const std::uint32_t mid = begin + (end - begin) / 2;
    const auto key = [&](std::uint32_t r) {
      return rows_[r * dim + static_cast<std::size_t>(axis)];
    };
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](std::uint32_t a, std::uint32_t b) {
                       return key(a) < key(b);
                     });
    const double split = key(order_[mid]);
    const std::uint32_t left = self(self, begin, mid);
    const std::uint32_t right = self(self, mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  };
  build(build, 0, static_cast<std::uint32_t>(order_.size()));
  leaf_rows_.resize(rows_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) {
    std::copy_n(rows_.begin() + static_cast<std::ptrdiff_t>(order_[i] * dim), dim,
                leaf_rows_.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
}

void PolicyModel::normalize(std::span<const double> raw,
                            std::span<double> out) const {
  for (std::size_t c = 0; c < raw.size(); ++c) {
    out[c] = (raw[c] - mean_[c]) / scale_[c];
  }
}

std::vector<Neighbor> PolicyModel::neighbors(
    std::span<const double> raw) const {
  const auto dim = static_cast<std::size_t>(dim_);
  if (raw.size() != dim) throw LayoutMismatch("query has wrong dimension");
  std::vector<double> q(dim);
  normalize(raw, q);

  const std::size_t k = std::min<std::size_t>(k_, actions_.size());
  // Sorted ascending by (squared distance, row), the same order a linear
  // scan with strict comparisons produces.
  using Entry = std::pair<double, std::size_t>;
  std::vector<Entry> best;
  best.reserve(k + 1);
  double bound = std::numeric_limits<double>::infinity();

  auto scan = [&](const KdNode& leaf) {
    for (std::uint32_t i = leaf.begin; i < leaf.end; ++i) {
      const std::size_t r = order_[i];
      const double* row = leaf_rows_.data() + std::size_t{i} * dim;
      double d2 = 0.0;
      for (std::size_t c = 0; c < dim; ++c) {
        const double diff = row[c] - q[c];
        d2 += diff * diff;
        if (d2 > bound) break;
      }
      const Entry e{d2, r};
      if (best.size() == k && !(e < best.back())) continue;
      best.insert(std::upper_bound(best.begin(), best.end(), e), e);
      if (best.size() > k) best.pop_back();
      if (best.size() == k) bound = best.back().first;
    }
  };

  // A subtree is skipped only when the distance from the query to its cell
  // exceeds the current k-th distance by more than any rounding in either
  // sum could account for, so ties and near-ties are always scanned.
  constexpr double kMargin = 1.0 - 1e-9;
  std::vector<double> off(dim, 0.0);
  auto search = [&](auto& self, std::uint32_t id) -> void {
    const KdNode& node = nodes_[id];
    if (node.axis < 0) {
      scan(node);
      return;
    }
    const auto axis = static_cast<std::size_t>(node.axis);
    const double diff = node.split - q[axis];
    const bool go_left = diff > 0.0;
    self(self, go_left ? node.left : node.right);
    const double saved = off[axis];
    off[axis] = diff;
    double cell = 0.0;
    for (double o : off) cell += o * o;
    if (!(cell * kMargin > bound)) self(self, go_left ? node.right : node.left);
    off[axis] = saved;
  };
  search(search, 0);

  std::vector<Neighbor> out;
  out.reserve(best.size());
  for (const auto& [d2, r] : best) out.push_back({r, std::sqrt(d2)});
  return out;
}

DeltaAction PolicyModel::act_features(std::span<const double> raw) const {
  const std::vector<Neighbor> nn = neighbors(raw);
  if (nn.size() == 1) return clamp(actions_[nn[0].row], limits_).delta;
  DeltaAction out;
  double total = 0.0;
  double votes[3] = {0.0, 0.0, 0.0};
  for (const Neighbor& n : nn) {
    const double w = weights_[n.row] / (n.distance + kDistanceFloor);
    const DeltaAction& a = actions_[n.row];
    out.translation += w * a.translation;
    out.rotation += w * a.rotation;
    votes[static_cast<int>(a.gripper)] += w;
    total += w;
  }
  out.translation /= total;
  out.rotation /= total;

  const double top = std::max({votes[0], votes[1], votes[2]});
  int winners = 0;
  int winner = static_cast<int>(Gripper::hold);
  for (int g = 0; g < 3; ++g) {
    if (votes[g] == top) {
      ++winners;
      winner = g;
    }
  }
  out.gripper = winners == 1 ? static_cast<Gripper>(winner) : Gripper::hold;
  return clamp(out, limits_).delta;
}

DeltaAction PolicyModel::act(const Observation& obs) const {
  std::vector<double> raw(static_cast<std::size_t>(dim_));
  extract_features(layout_, obs, raw);
  return act_features(raw);
}

DeltaAction OracleExpert::act(const Observation& expert_obs,
                              const TaskSpec& task) const {
  if (expert_obs.subtask >= static_cast<int>(task.subtasks.size())) {
    return {};
  }
  const SubtaskSpec& sub = task.subtasks[expert_obs.subtask];
  if (sub.predicate == Predicate::grasped) {
    return grasp_action(*this, expert_obs, task, sub);
  }
  return seat_action(*this, expert_obs, task, sub);
}

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::contact: return "contact";
    case Criterion::gripper_closed_empty: return "gripper-closed-empty";
    case Criterion::composite: return "composite";
  }
  return "?";
}

Criterion criterion_for(const TaskSpec& task) {
  return task.id == TaskId::geometry_assembly ? Criterion::composite
                                              : Criterion::contact;
}

bool fires(Criterion criterion, const Step& step, const Observation& post) {
  const bool contact = step.contact.has_value();
  const bool closed = !gripper_closed_empty(step.obs) &&
                      gripper_closed_empty(post) &&
                      post.subtask == step.obs.subtask;
  switch (criterion) {
    case Criterion::contact: return contact;
    case Criterion::gripper_closed_empty: return closed;
    case Criterion::composite: return contact || closed;
  }
  return false;
}

Agent policy_agent(const PolicyModel& model) {
  return {Actor::policy,
          [&model](const Observation& robot, const Observation&) {
            return model.act(robot);
          }};
}

Agent expert_agent(const OracleExpert& expert, const TaskSpec& task) {
  return {Actor::expert,
          [expert, &task](const Observation&, const Observation& truth) {
            return expert.act(truth, task);
          }};
}

EpisodeHeader make_header(const TaskSpec& task, const CorruptionModel& z,
                          const WorldState& initial, Provenance provenance) {
  EpisodeHeader h;
  h.task = task.id;
  h.seed = initial.seed;
  h.corruption_seed = initial.corruption_seed;
  h.corruption = z;
  h.corruption_offset =
      corruption_offset(task, initial, z, task.corrupted_object);
  h.geometry_variant = initial.geometry_variant;
  h.provenance = provenance;
  h.true_objects = initial.objects;
  return h;
}

Trajectory rollout(const Agent& agent, const TaskSpec& task,
                   const CorruptionModel& z, std::uint64_t seed,
                   const std::optional<OracleGate>& gate,
                   const RolloutOptions& options) {
  WorldState s = reset(task, z, seed, options.corruption_seed);
  Trajectory traj;
  traj.header = make_header(task, z, s, options.provenance);

  bool expert_in_control = false;
  // Visited configurations, keyed by hash; values index into `visited`.
  std::unordered_multimap<std::size_t, std::size_t> seen;
  std::vector<std::pair<WorldState, bool>> visited;
  auto revisit = [&]() {
    const std::size_t h = configuration_hash(s, expert_in_control);
    auto [lo, hi] = seen.equal_range(h);
    for (auto it = lo; it != hi; ++it) {
      const auto& [prev, prev_expert] = visited[it->second];
      if (prev_expert == expert_in_control && same_configuration(prev, s)) {
        return true;
      }
    }
    seen.emplace(h, visited.size());
    visited.emplace_back(s, expert_in_control);
    return false;
  };
  if (options.stop_on_cycle) revisit();

  while (!goal_satisfied(task, s) && s.step_count < task.horizon) {
    const Observation robot = observe(task, s, z, Role::robot);
    const Observation truth = observe(task, s, z, Role::expert);
    const Agent& actor = expert_in_control ? gate->expert : agent;
    Step st;
    st.obs = robot;
    st.action = actor.act(robot, truth);
    st.actor = actor.actor;
    const int subtask_before = s.subtask;
    StepResult r = step(task, s, st.action);
    st.contact = r.contact;
    s = std::move(r.state);
    traj.steps.push_back(std::move(st));

    if (gate) {
      if (!expert_in_control) {
        const Observation post = observe(task, s, z, Role::robot);
        if (fires(gate->criterion, traj.steps.back(), post)) {
          expert_in_control = true;
        }
      } else if (s.subtask != subtask_before) {
        expert_in_control = false;
      }
    }
    if (options.stop_on_cycle && revisit()) break;
  }
  traj.final_obs = observe(task, s, z, Role::robot);
  traj.goal = goal_satisfied(task, s);
  return traj;
}

}  // namespace ivgen
