// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include "oracle.hpp"

#include "ivgen/datagen.hpp"
#include "ivgen/evalbench.hpp"
#include "ivgen/store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace ivgen;

namespace {

constexpr double kRelativePoseTol = 1e-9;
constexpr double kStepBoundTol = 1e-12;
constexpr double kEndpointTol = 1e-12;

Thresholds pinned_thresholds() {
  Thresholds t;
  t.robustness_gain = 0.40;
  t.robust_floor = 0.80;
  t.ordering_slack = 0.05;
  t.policy_gap = 0.10;
  t.geometry_base_native = 0.95;
  t.geometry_base_alternate = 0.10;
  t.geometry_ivg_floor = 0.75;
  t.mixture_margin = 0.15;
  t.scaling_slack = 0.05;
  t.scaling_gain = 0.10;
  t.fresh_offsets = 100;
  t.offset_window = 200;
  return t;
}

unsigned workers() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Line {
  std::string id;
  bool pass = false;
  std::string detail;
};

std::vector<Line> lines;

void report(const std::string& id, bool pass, const std::string& detail) {
  lines.push_back({id, pass, detail});
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", id.c_str(), detail.c_str());
  std::fflush(stdout);
}

const AssertionResult* find(const std::vector<AssertionResult>& v, const std::string& name) {
  for (const auto& a : v) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void from_assertion(const std::string& id, const std::vector<AssertionResult>& v,
                    const std::string& name) {
  const AssertionResult* a = find(v, name);
  if (a == nullptr) {
    report(id, false, name + " could not be evaluated (arm missing or failed)");
  } else {
    report(id, a->pass, a->detail);
  }
}

std::function<void(const std::string&)> progress(const char* tag) {
  const auto t0 = std::chrono::steady_clock::now();
  return [tag, t0](const std::string& m) {
    const double s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "[%s %7.1fs] %s\n", tag, s, m.c_str());
  };
}

// Filters over one training set. The store validator checks every record.
// Generated episodes kept whole are also resimulated from their header to
// confirm the goal independently; suffix records cannot be replayed.
struct FilterAudit {
  std::size_t datasets = 0;
  std::size_t synthetic = 0;
  std::size_t resimulated = 0;
  std::size_t suffixes = 0;
  std::vector<std::string> problems;

  void operator()(const TaskSpec& task, const std::string& arm, std::uint64_t seed,
                  const Dataset& ds) {
    ++datasets;
    const std::string where = arm + " seed " + std::to_string(seed);
    bool needs_text = false;
    for (const Trajectory& t : ds.episodes) {
      if (t.header.provenance == Provenance::synthetic) {
        ++synthetic;
        needs_text = true;
      }
      if (t.header.provenance == Provenance::synthetic && !t.header.termination) {
        ++resimulated;
        try {
          const auto states = resimulate(task, t);
          if (!t.goal || !goal_satisfied(task, states.back())) {
            problems.push_back(where + ": generated episode misses the goal");
          }
        } catch (const std::exception& e) {
          problems.push_back(where + ": " + e.what());
        }
      }
      if (t.header.termination) {
        ++suffixes;
        needs_text = true;
      }
    }
    if (needs_text) {
      for (const Violation& v : validate_text(dataset_to_string(ds))) {
        problems.push_back(where + ": line " + std::to_string(v.line) + " " + v.code);
      }
    }
  }
};

std::string problems_text(const std::vector<std::string>& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size() && i < 3; ++i) out += "; " + p[i];
  return out;
}

Pose random_pose(std::mt19937_64& rng, double span) {
  std::uniform_real_distribution<double> u(-span, span);
  std::uniform_real_distribution<double> a(-3.0, 3.0);
  Pose p;
  p.position = Vec3(u(rng), u(rng), u(rng));
  p.orientation = canonical(exp_rotation(Vec3(a(rng), a(rng), a(rng)) / std::sqrt(3.0)));
  return p;
}

std::string check_transform_segment() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    PoseSequence seg;
    for (int i = 0; i < 20; ++i) seg.push_back(random_pose(rng, 0.3));
    const Pose src = random_pose(rng, 0.2);
    const Pose dst = random_pose(rng, 0.2);
    const PoseSequence out = transform_segment(seg, src, dst);
    if (out.size() != seg.size()) return "!length changed";
    const auto src_inv = oracle::rigid_inverse(oracle::from_pose(src));
    const auto dst_inv = oracle::rigid_inverse(oracle::from_pose(dst));
    for (std::size_t i = 0; i < seg.size(); ++i) {
      const auto before = oracle::mul(src_inv, oracle::from_pose(seg[i]));
      const auto after = oracle::mul(dst_inv, oracle::from_pose(out[i]));
      worst = std::max(worst, oracle::max_abs_diff(before, after));
    }
  }
  std::ostringstream s;
  s << "500 segments x 20 poses, worst relative-pose error " << worst << " (tol "
    << kRelativePoseTol << ")";
  return (worst <= kRelativePoseTol ? "" : "!") + s.str();
}

std::string check_interpolation() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> lim(0.002, 0.02);
  double worst_end = 0.0, worst_t = 0.0, worst_r = 0.0;
  int not_minimal = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Pose a = random_pose(rng, 0.3);
    const Pose b = random_pose(rng, 0.3);
    const double mt = lim(rng), mr = 5 * lim(rng);
    const PoseSequence seq = interpolate(a, b, mt, mr);
    if (seq.size() < 2) return "!fewer than two poses";
    worst_end = std::max({worst_end, oracle::max_abs_diff(oracle::from_pose(seq.front()),
                                                          oracle::from_pose(a)),
                          oracle::max_abs_diff(oracle::from_pose(seq.back()),
                                               oracle::from_pose(b))});
    for (std::size_t i = 1; i < seq.size(); ++i) {
      worst_t = std::max(worst_t, (seq[i].position - seq[i - 1].position).norm() - mt);
      worst_r = std::max(worst_r,
                         angle_between(seq[i - 1].orientation, seq[i].orientation) - mr);
    }
    const double d = (b.position - a.position).norm();
    const double ang = angle_between(a.orientation, b.orientation);
    const auto steps = static_cast<std::size_t>(
        std::max({1.0, std::ceil(d / mt), std::ceil(ang / mr)}));
    if (seq.size() != steps + 1) ++not_minimal;
  }
  std::ostringstream s;
  s << "500 pairs, endpoint error " << worst_end << " (tol " << kEndpointTol
    << "), step excess translation " << std::max(0.0, worst_t) << " rotation "
    << std::max(0.0, worst_r) << " (tol " << kStepBoundTol << "), non-minimal counts "
    << not_minimal;
  const bool ok = worst_end <= kEndpointTol && worst_t <= kStepBoundTol &&
                  worst_r <= kStepBoundTol && not_minimal == 0;
  return (ok ? "" : "!") + s.str();
}

std::string check_memorization(const TaskSpec& task, const CorruptionModel& z) {
  const Dataset demos = collect_demos(task, z, 10, 21);
  const PolicyModel model = PolicyModel::fit(demos, task, FitConfig{1, WeightsMode::uniform});
  std::size_t steps = 0, wrong = 0;
  for (const Trajectory& t : demos.episodes) {
    for (const Step& s : t.steps) {
      ++steps;
      const DeltaAction a = model.act(s.obs);
      if (a.translation != s.action.translation || a.rotation != s.action.rotation ||
          a.gripper != s.action.gripper) {
        ++wrong;
      }
    }
  }
  std::string out = std::string(to_string(task.id)) + " k=1 reproduces " +
                    std::to_string(steps - wrong) + "/" + std::to_string(steps) +
                    " recorded actions";
  return (wrong == 0 ? "" : "!") + out;
}

std::string check_generate_determinism(const TaskSpec& task, const CorruptionModel& z) {
  SharedInputs in = prepare_inputs(
      [&] {
        ExperimentPlan p = default_plan(task.id);
        p.n = 60;
        return p;
      }(),
      4);
  GenerateRequest req;
  req.n = 60;
  req.seed = 99;
  std::string first;
  std::string detail = std::string(to_string(task.id)) + " n=60 bytes identical for workers";
  for (unsigned w : {1u, 2u, 4u}) {
    req.workers = w;
    const std::string text =
        dataset_to_string(generate(task, z, &in.base_policy, in.interventions, req).dataset);
    detail += " " + std::to_string(w);
    if (first.empty()) {
      first = text;
    } else if (text != first) {
      return "!" + std::string(to_string(task.id)) + " output differs at workers " +
             std::to_string(w);
    }
  }
  return detail;
}

}  // namespace

int main() {
  const Thresholds t = pinned_thresholds();
  const TaskSpec peg = make_task(TaskId::planar_peg_insert);
  const TaskSpec geo = make_task(TaskId::geometry_assembly);

  FilterAudit audit;

  ExperimentPlan peg_plan = default_plan(TaskId::planar_peg_insert);
  peg_plan.m = 10;
  peg_plan.n = 1000;
  peg_plan.trials = 200;
  peg_plan.seeds = {1, 2, 3};
  peg_plan.scaling = {100, 300};
  peg_plan.workers = workers();
  const auto peg_start = std::chrono::steady_clock::now();
  const ExperimentReport peg_report = run_experiment(
      peg_plan, progress("peg"),
      [&](const std::string& arm, std::uint64_t seed, const Dataset& ds) {
        audit(peg, arm, seed, ds);
      });
  const double peg_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - peg_start).count();
  std::printf("%s\n", peg_report.table().c_str());
  const auto peg_checks = check_assertions(peg_report, t);

  ExperimentPlan geo_plan = default_plan(TaskId::geometry_assembly);
  geo_plan.m = 10;
  geo_plan.n = 1000;
  geo_plan.trials = 200;
  geo_plan.seeds = {1, 2, 3};
  geo_plan.workers = workers();
  const ExperimentReport geo_report = run_experiment(
      geo_plan, progress("geometry"),
      [&](const std::string& arm, std::uint64_t seed, const Dataset& ds) {
        audit(geo, arm, seed, ds);
      });
  std::printf("%s\n", geo_report.table().c_str());
  const auto geo_checks = check_assertions(geo_report, t);

  std::printf("peg experiment wall time %.1f s on %u worker(s)\n\n", peg_seconds,
              peg_plan.workers);

  from_assertion("A1 robustness gain", peg_checks, "robustness-gain");
  from_assertion("A2 ablation ordering", peg_checks, "ablation-ordering");
  from_assertion("A3 geometry mixture", geo_checks, "geometry-mixture");

  {
    bool pass = true;
    std::string detail;
    for (const auto* checks : {&peg_checks, &geo_checks}) {
      const char* task = checks == &peg_checks ? "peg" : "geometry";
      for (const char* name : {"no-recovery-in-source_demo", "no-recovery-in-mg_demo"}) {
        const AssertionResult* a = find(*checks, name);
        pass = pass && a != nullptr && a->pass;
        detail += std::string(task) + " " + (name + 15) + ": " +
                  (a ? a->detail : "not evaluated") + "; ";
      }
    }
    report("A4 no recovery in demos", pass, detail);
  }

  from_assertion("A5 scaling", peg_checks, "scaling");

  {
    std::vector<std::string> parts = {
        check_transform_segment(),
        check_interpolation(),
        check_memorization(peg, CorruptionModel::peg_noise()),
        check_memorization(geo, CorruptionModel::geometry_flip(1.0)),
        check_generate_determinism(peg, CorruptionModel::peg_noise()),
        check_generate_determinism(geo, CorruptionModel::geometry_flip(1.0)),
    };
    bool pass = audit.problems.empty() && audit.synthetic > 0 && audit.resimulated > 0 &&
                audit.suffixes > 0;
    std::string detail = "filters over " + std::to_string(audit.datasets) + " training sets, " +
                         std::to_string(audit.synthetic) + " generated episodes (" +
                         std::to_string(audit.resimulated) + " resimulated), " +
                         std::to_string(audit.suffixes) + " suffixes, " +
                         std::to_string(audit.problems.size()) + " violations" +
                         problems_text(audit.problems);
    for (const std::string& p : parts) {
      if (!p.empty() && p[0] == '!') {
        pass = false;
        detail += "; " + p.substr(1);
      } else {
        detail += "; " + p;
      }
    }
    report("A6 exact invariants", pass, detail);
  }

  from_assertion("A7 fresh mistakes", peg_checks, "fresh-mistakes");

  const bool all = std::all_of(lines.begin(), lines.end(), [](const Line& l) { return l.pass; });
  std::printf("\n%s: %zu/%zu criteria\n", all ? "ACCEPTED" : "REJECTED",
              static_cast<std::size_t>(
                  std::count_if(lines.begin(), lines.end(), [](const Line& l) { return l.pass; })),
              lines.size());
  return all ? 0 : 1;
}
