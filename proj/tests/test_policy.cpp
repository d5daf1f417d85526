#include "ivgen/datagen.hpp"
#include "ivgen/policy.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace ivgen;

namespace {

const TaskSpec kPeg = make_task(TaskId::planar_peg_insert);

Observation obs_at(double x, double y, bool feedback = false) {
  Observation o;
  o.ee = Pose::from_translation(x, y, 0.05);
  o.gripper_width = 0.02;
  o.objects = {o.ee, Pose::from_translation(0.08, 0.0, 0.0)};
  o.feedback.mode = FeedbackMode::full;
  if (feedback) {
    o.feedback.active = true;
    o.feedback.payload = Vec3(0.08, 0.0, 0.0);
  }
  return o;
}

DeltaAction act_x(double dx, Gripper g = Gripper::hold) {
  DeltaAction a;
  a.translation = Vec3(dx, 0, 0);
  a.gripper = g;
  return a;
}

Trajectory episode(Provenance p, int steps, double x0) {
  Trajectory t;
  t.header.task = TaskId::planar_peg_insert;
  t.header.provenance = p;
  for (int i = 0; i < steps; ++i) {
    Step s;
    s.obs = obs_at(x0 + 0.001 * i, 0.0);
    s.action = act_x(0.001);
    t.steps.push_back(s);
  }
  t.final_obs = obs_at(x0 + 0.001 * steps, 0.0);
  t.goal = true;
  return t;
}

std::vector<double> raw(const PolicyModel& m, const Observation& o) {
  std::vector<double> v(static_cast<std::size_t>(m.dim()));
  extract_features(m.layout(), o, v);
  return v;
}

}  // namespace

TEST_CASE("feature layout") {
  const FeatureLayout peg = layout_for(kPeg);
  CHECK_FALSE(peg.orientation);
  CHECK(peg.dim() == 3 + 1 + 2 * 3 + 4 + 1);
  CHECK(peg.names().size() == static_cast<std::size_t>(peg.dim()));
  const FeatureLayout geo = layout_for(make_task(TaskId::geometry_assembly));
  CHECK(geo.orientation);
  CHECK(geo.dim() == 5 + 1 + 2 * 5 + 4 + 2);
  std::vector<double> out(static_cast<std::size_t>(peg.dim()));
  Observation bad = obs_at(0, 0);
  bad.objects.pop_back();
  CHECK_THROWS_AS(extract_features(peg, bad, out), LayoutMismatch);
}

TEST_CASE("fit errors") {
  Dataset empty;
  CHECK_THROWS_AS(PolicyModel::fit(empty, kPeg, {}), EmptyDataset);
  Dataset other;
  other.task = TaskId::geometry_assembly;
  CHECK_THROWS_AS(PolicyModel::fit(other, kPeg, {}), LayoutMismatch);
}

TEST_CASE("single step dataset returns its action") {
  Dataset ds;
  Trajectory t = episode(Provenance::base, 1, 0.0);
  t.steps[0].action = act_x(0.003, Gripper::open);
  ds.episodes.push_back(t);
  const PolicyModel m = PolicyModel::fit(ds, kPeg, {1, WeightsMode::uniform});
  const DeltaAction a = m.act(t.steps[0].obs);
  CHECK(a.translation == Vec3(0.003, 0, 0));
  CHECK(a.gripper == Gripper::open);
}

TEST_CASE("k=1 memorizes every training pair") {
  const CorruptionModel z = CorruptionModel::peg_noise();
  Dataset ds = collect_demos(kPeg, z, 5, 3);
  const PolicyModel m = PolicyModel::fit(ds, kPeg, {1, WeightsMode::uniform});
  std::size_t row = 0;
  for (const Trajectory& t : ds.episodes) {
    for (const Step& s : t.steps) {
      const std::vector<Neighbor> nn = m.neighbors(raw(m, s.obs));
      REQUIRE(nn.size() == 1);
      CHECK(nn[0].distance == 0.0);
      const DeltaAction a = m.act(s.obs);
      const DeltaAction& want = m.actions()[nn[0].row];
      CHECK(a.translation == want.translation);
      CHECK(a.gripper == want.gripper);
      CHECK(a.translation == s.action.translation);
      ++row;
    }
  }
  CHECK(row == m.rows());
}

TEST_CASE("balanced weights scale intervention rows by the step ratio") {
  Dataset ds;
  ds.episodes.push_back(episode(Provenance::base, 900, 0.0));
  ds.episodes.push_back(episode(Provenance::synthetic, 100, 0.0));
  const PolicyModel bal = PolicyModel::fit(ds, kPeg, {3, WeightsMode::balanced});
  const PolicyModel uni = PolicyModel::fit(ds, kPeg, {3, WeightsMode::uniform});
  for (std::size_t r = 0; r < 900; ++r) CHECK(bal.weights()[r] == 1.0);
  for (std::size_t r = 900; r < 1000; ++r) CHECK(bal.weights()[r] == 9.0);
  for (double w : uni.weights()) CHECK(w == 1.0);
  // Weighting leaves the stored feature geometry alone.
  CHECK(bal.normalized() == uni.normalized());
  CHECK(bal.mean() == uni.mean());
  CHECK(bal.scale() == uni.scale());
}

TEST_CASE("duplicate rows break ties by lowest row index") {
  const FeatureLayout layout = layout_for(kPeg);
  const auto dim = static_cast<std::size_t>(layout.dim());
  std::vector<double> f(3 * dim, 0.0);
  for (std::size_t c = 0; c < dim; ++c) f[2 * dim + c] = 1.0;
  const PolicyModel m = PolicyModel::fit_features(
      layout, f, {act_x(0.001), act_x(-0.001), act_x(0.004)}, {1, 1, 1}, {}, 1,
      kPeg.limits);
  const std::vector<double> q(dim, 0.0);
  const auto nn = m.neighbors(q);
  REQUIRE(nn.size() == 1);
  CHECK(nn[0].row == 0);
  CHECK(m.act_features(q).translation.x() == 0.001);
}

TEST_CASE("two equidistant neighbours average to the midpoint") {
  const FeatureLayout layout = layout_for(kPeg);
  const auto dim = static_cast<std::size_t>(layout.dim());
  std::vector<double> f(2 * dim, 0.0);
  f[0] = -1.0;
  f[dim] = 1.0;
  DeltaAction a = act_x(0.004);
  DeltaAction b = act_x(-0.002);
  b.translation.y() = 0.002;
  const PolicyModel m =
      PolicyModel::fit_features(layout, f, {a, b}, {1, 1}, {}, 2, kPeg.limits);
  const std::vector<double> q(dim, 0.0);
  const DeltaAction out = m.act_features(q);
  CHECK(out.translation.x() == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(out.translation.y() == doctest::Approx(0.001).epsilon(1e-12));
}

TEST_CASE("gripper vote ties go to hold") {
  const FeatureLayout layout = layout_for(kPeg);
  const auto dim = static_cast<std::size_t>(layout.dim());
  std::vector<double> f(2 * dim, 0.0);
  f[0] = -1.0;
  f[dim] = 1.0;
  const PolicyModel m = PolicyModel::fit_features(
      layout, f, {act_x(0, Gripper::open), act_x(0, Gripper::close)}, {1, 1}, {},
      2, kPeg.limits);
  CHECK(m.act_features(std::vector<double>(dim, 0.0)).gripper == Gripper::hold);
}

TEST_CASE("outputs are clamped to controller limits") {
  const FeatureLayout layout = layout_for(kPeg);
  const auto dim = static_cast<std::size_t>(layout.dim());
  const PolicyModel m = PolicyModel::fit_features(
      layout, std::vector<double>(dim, 0.0), {act_x(0.5)}, {1}, {}, 1, kPeg.limits);
  CHECK(m.act_features(std::vector<double>(dim, 0.0)).translation.norm() ==
        doctest::Approx(kPeg.limits.max_translation));
}

TEST_CASE("affine rescaling of a feature column keeps the neighbours") {
  const FeatureLayout layout = layout_for(kPeg);
  const auto dim = static_cast<std::size_t>(layout.dim());
  std::mt19937_64 g(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t n = 200;
  std::vector<double> f(n * dim);
  for (double& v : f) v = u(g);
  std::vector<DeltaAction> actions(n, act_x(0.001));
  std::vector<double> scaled = f;
  for (std::size_t r = 0; r < n; ++r) scaled[r * dim + 2] = 37.0 * f[r * dim + 2] - 4.0;
  const PolicyModel a = PolicyModel::fit_features(layout, f, actions,
                                                  std::vector<double>(n, 1.0), {}, 3,
                                                  kPeg.limits);
  const PolicyModel b = PolicyModel::fit_features(layout, scaled, actions,
                                                  std::vector<double>(n, 1.0), {}, 3,
                                                  kPeg.limits);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> q(dim);
    for (double& v : q) v = u(g);
    std::vector<double> qs = q;
    qs[2] = 37.0 * q[2] - 4.0;
    const auto na = a.neighbors(q);
    const auto nb = b.neighbors(qs);
    REQUIRE(na.size() == nb.size());
    for (std::size_t i = 0; i < na.size(); ++i) CHECK(na[i].row == nb[i].row);
  }
}

TEST_CASE("active feedback retrieves intervention rows") {
  Dataset ds;
  Trajectory base = episode(Provenance::base, 50, 0.0);
  Trajectory fix = episode(Provenance::synthetic, 20, 0.02);
  for (Step& s : fix.steps) {
    s.obs.feedback.active = true;
    s.obs.feedback.payload = Vec3(0.08, 0, 0);
    s.action = act_x(-0.002);
  }
  ds.episodes = {base, fix};
  const PolicyModel m = PolicyModel::fit(ds, kPeg, {3, WeightsMode::uniform});
  for (double x : {0.0, 0.02, 0.03, 0.045}) {
    for (const Neighbor& n : m.neighbors(raw(m, obs_at(x, 0.0, true)))) {
      CHECK(m.intervention()[n.row] == 1);
    }
    CHECK(m.act(obs_at(x, 0.0, true)).translation.x() < 0.0);
  }
}

TEST_CASE("oracle expert") {
  const OracleExpert expert;
  SUBCASE("ten centimetres short of the peg moves one full step toward it") {
    WorldState s = reset(kPeg, CorruptionModel::none(), 1);
    const Vec3 peg = s.objects[1].position;
    s.ee = Pose::from_translation(peg.x() - 0.1, peg.y(),
                                  kPeg.peg_top + kPeg.hover_clearance);
    s.objects[0] = s.ee;
    const DeltaAction a =
        expert.act(observe(kPeg, s, CorruptionModel::none(), Role::expert), kPeg);
    CHECK(a.translation.x() == doctest::Approx(0.005));
    CHECK(std::abs(a.translation.y()) < 1e-12);
    CHECK(std::abs(a.translation.z()) < 1e-12);
  }
  SUBCASE("at the handle it closes without moving") {
    const TaskSpec geo = make_task(TaskId::geometry_assembly);
    WorldState s = reset(geo, CorruptionModel::none(), 1);
    const Pose nut = s.objects[0];
    s.ee = Pose::from_yaw(nut.yaw(), nut.position + nut.orientation * geo.handle_offset);
    const DeltaAction a =
        expert.act(observe(geo, s, CorruptionModel::none(), Role::expert), geo);
    CHECK(a.translation.norm() == 0.0);
    CHECK(a.gripper == Gripper::close);
  }
  SUBCASE("reaches the goal from 1000 clean resets on both tasks") {
    for (TaskId id : {TaskId::planar_peg_insert, TaskId::geometry_assembly}) {
      const TaskSpec task = make_task(id);
      const Agent agent = expert_agent(expert, task);
      int goals = 0;
      for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        goals += rollout(agent, task, CorruptionModel::none(), seed).goal ? 1 : 0;
      }
      CHECK(goals == 1000);
    }
  }
  SUBCASE("the expert ignores corruption") {
    const Agent agent = expert_agent(expert, kPeg);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      CHECK(rollout(agent, kPeg, CorruptionModel::peg_noise(), seed).goal);
    }
  }
}

TEST_CASE("rollout") {
  const Dataset demos = collect_demos(kPeg, CorruptionModel::none(), 10, 5,
                                      Provenance::base);
  const PolicyModel m = PolicyModel::fit(demos, kPeg, {});
  const Agent agent = policy_agent(m);
  SUBCASE("fixed seed is reproducible") {
    const Trajectory a = rollout(agent, kPeg, CorruptionModel::peg_noise(), 9);
    const Trajectory b = rollout(agent, kPeg, CorruptionModel::peg_noise(), 9);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      CHECK(a.steps[i].action.translation == b.steps[i].action.translation);
      CHECK(a.steps[i].obs.ee.position == b.steps[i].obs.ee.position);
    }
  }
  SUBCASE("clean-data policy under peg noise makes contact most of the time") {
    int contacts = 0;
    const int trials = 100;
    for (int i = 0; i < trials; ++i) {
      const Trajectory t = rollout(agent, kPeg, CorruptionModel::peg_noise(),
                                   static_cast<std::uint64_t>(1000 + i));
      bool hit = false;
      for (const Step& s : t.steps) hit = hit || s.contact.has_value();
      contacts += hit ? 1 : 0;
    }
    CHECK(contacts > trials / 2);
  }
  SUBCASE("labels and gate handoff") {
    OracleGate gate{Criterion::contact, expert_agent(OracleExpert{}, kPeg)};
    const Trajectory t = rollout(agent, kPeg, CorruptionModel::peg_noise(), 21, gate);
    bool seen_expert = false;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      if (t.steps[i].actor == Actor::expert) {
        seen_expert = true;
      } else {
        CHECK_FALSE(seen_expert);
      }
    }
    if (seen_expert) CHECK(t.goal);
  }
  SUBCASE("cycle stop only cuts runs that cannot change") {
    RolloutOptions stop;
    stop.stop_on_cycle = true;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Trajectory full = rollout(agent, kPeg, CorruptionModel::peg_noise(), seed);
      const Trajectory cut =
          rollout(agent, kPeg, CorruptionModel::peg_noise(), seed, std::nullopt, stop);
      CHECK(full.goal == cut.goal);
      CHECK(cut.steps.size() <= full.steps.size());
    }
  }
}

TEST_CASE("neighbour search agrees with a linear scan") {
  const FeatureLayout layout = layout_for(make_task(TaskId::geometry_assembly));
  const auto dim = static_cast<std::size_t>(layout.dim());
  std::mt19937_64 g(9);
  // Coarse integer grid so that exact distance ties are common.
  std::uniform_int_distribution<int> cell(-3, 3);
  const std::size_t n = 2000;
  std::vector<double> f(n * dim);
  for (double& v : f) v = cell(g);
  std::vector<DeltaAction> actions(n);
  for (int k : {1, 3, 7}) {
    const PolicyModel m = PolicyModel::fit_features(
        layout, f, actions, std::vector<double>(n, 1.0), {}, k, kPeg.limits);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> q(dim);
      for (double& v : q) v = trial % 2 == 0 ? cell(g) : cell(g) + 0.25;
      std::vector<double> z(dim);
      for (std::size_t c = 0; c < dim; ++c) z[c] = (q[c] - m.mean()[c]) / m.scale()[c];
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t r = 0; r < n; ++r) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = m.normalized()[r * dim + c] - z[c];
          d2 += d * d;
        }
        all.emplace_back(d2, r);
      }
      std::sort(all.begin(), all.end());
      const auto nn = m.neighbors(q);
      REQUIRE(nn.size() == static_cast<std::size_t>(k));
      for (std::size_t i = 0; i < nn.size(); ++i) {
        CHECK(nn[i].row == all[i].second);
        CHECK(nn[i].distance == std::sqrt(all[i].first));
      }
    }
  }
}
