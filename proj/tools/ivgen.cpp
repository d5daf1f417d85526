#include "ivgen/datagen.hpp"
#include "ivgen/evalbench.hpp"
#include "ivgen/policy.hpp"
#include "ivgen/store.hpp"
#ifdef IVGEN_HAS_TELEOP
#include "ivgen/teleop_server.hpp"
#endif

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace ivgen;

struct Overrides {
  std::string config;
  std::optional<std::string> task;
  std::optional<std::string> corruption;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> m;
  std::optional<std::size_t> n;
  std::optional<unsigned> workers;
  std::optional<std::size_t> attempt_cap;
  std::optional<int> k;
  std::optional<std::string> weights;
  std::optional<std::string> observability;
  std::optional<double> goal_tolerance;
  std::optional<int> horizon;
  std::optional<double> max_translation;
  std::optional<double> max_rotation;
  std::optional<int> trials;
  std::vector<std::uint64_t> eval_seeds;

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : read_run_config(config);
    if (task) {
      c.task = parse_task_id(*task);
      if (!corruption && config.empty() && c.task == TaskId::geometry_assembly) {
        c.corruption = CorruptionModel::geometry_flip(1.0);
      }
    }
    if (corruption) c.corruption = corruption_preset(*corruption);
    if (seed) c.generation.seed = *seed;
    if (m) c.generation.m = *m;
    if (n) c.generation.n = *n;
    if (workers) c.generation.workers = *workers;
    if (attempt_cap) c.generation.attempt_cap = *attempt_cap;
    if (k) c.policy.k = *k;
    if (weights) c.policy.weights = parse_weights_mode(*weights);
    if (observability) c.observability = parse_feedback_mode(*observability);
    if (goal_tolerance) c.goal_tolerance = *goal_tolerance;
    if (horizon) c.horizon = *horizon;
    if (max_translation) c.controller.max_translation = *max_translation;
    if (max_rotation) c.controller.max_rotation = *max_rotation;
    if (trials) c.eval.trials = *trials;
    if (!eval_seeds.empty()) c.eval.seeds = eval_seeds;
    c.validate();
    return c;
  }
};

void add_run_flags(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config, "RunConfig JSON file")
      ->check(CLI::ExistingFile);
  app->add_option("--task", o.task, "planar_peg_insert | geometry_assembly");
  app->add_option("--corruption", o.corruption,
                  "none | peg_noise | receptacle_noise | radial_noise | "
                  "block_noise | geometry_flip");
  app->add_option("--seed", o.seed);
  app->add_option("--m", o.m, "source episodes to collect");
  app->add_option("--n", o.n, "episodes to generate");
  app->add_option("--workers", o.workers);
  app->add_option("--attempt-cap", o.attempt_cap);
  app->add_option("--k", o.k, "neighbours");
  app->add_option("--weights", o.weights, "uniform | balanced");
  app->add_option("--observability", o.observability, "full | partial | none");
  app->add_option("--goal-tolerance", o.goal_tolerance);
  app->add_option("--horizon", o.horizon);
  app->add_option("--max-translation", o.max_translation);
  app->add_option("--max-rotation", o.max_rotation);
  app->add_option("--trials", o.trials);
  app->add_option("--eval-seeds", o.eval_seeds);
}

Dataset read_all(const std::vector<std::string>& paths) {
  Dataset out = read_dataset(paths.at(0));
  for (std::size_t i = 1; i < paths.size(); ++i) {
    out = aggregate(out, read_dataset(paths[i]));
  }
  return out;
}

std::vector<ScriptedMistake> parse_mistakes(const std::vector<std::string>& specs) {
  std::vector<ScriptedMistake> out;
  for (const std::string& s : specs) {
    std::vector<double> v;
    std::stringstream ss(s);
    for (std::string part; std::getline(ss, part, ',');) v.push_back(std::stod(part));
    if (v.size() < 2 || v.size() > 3) {
      throw std::invalid_argument("--mistake expects dx,dy[,yaw]: " + s);
    }
    out.push_back({Vec3(v[0], v[1], 0.0), v.size() == 3 ? v[2] : 0.0});
  }
  return out;
}

void print_stats(std::uint64_t seed, const SuccessStats& s) {
  std::printf("seed %llu: %d/%d = %.3f (mean steps to goal %.1f)\n",
              static_cast<unsigned long long>(seed), s.successes, s.trials,
              s.success_rate, s.mean_steps_to_goal);
}

#ifdef IVGEN_HAS_TELEOP
teleop::Server* g_server = nullptr;
extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve(const RunConfig& c, const std::string& model, const std::string& out,
          const std::string& address, unsigned short port, double tick_ms,
          std::size_t stop_after) {
  teleop::ServerConfig sc;
  sc.session.task = c.task_spec();
  sc.session.corruption = c.corruption;
  sc.session.seed = c.generation.seed;
  if (!model.empty()) sc.session.policy = read_model(model);
  sc.address = address;
  sc.port = port;
  sc.tick = std::chrono::microseconds(static_cast<long long>(tick_ms * 1000.0));
  sc.output = out;
  sc.log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
  std::size_t recorded = 0;
  if (stop_after > 0) {
    sc.on_episode = [&recorded, stop_after](const Trajectory&) {
      if (++recorded == stop_after && g_server) g_server->stop();
    };
  }
  teleop::Server server(std::move(sc));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::fprintf(stderr, "listening on ws://%s:%u\n", address.c_str(),
               static_cast<unsigned>(server.port()));
  server.run();
  g_server = nullptr;
  return 0;
}
#endif

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interventional data generation for imitation learning"};
  app.require_subcommand(1);

  Overrides o;
  std::string out, model, source, plan_path, json_out, report_out, gate = "oracle";
  std::string ablation, address = "127.0.0.1", provenance;
  std::vector<std::string> data, mistakes;
  bool clean = false, offline = false, demo_mode = false, do_assert = false;
  unsigned short port = 8765;
  double tick_ms = 50.0;

  auto* cd = app.add_subcommand("collect-demos", "Oracle demonstrations");
  add_run_flags(cd, o);
  cd->add_option("--out", out)->required();
  cd->add_flag("--clean", clean, "no corruption, base provenance");

  auto* ci = app.add_subcommand("collect-interventions",
                                "Policy rollouts with expert takeover");
  add_run_flags(ci, o);
  ci->add_option("--out", out)->required();
  ci->add_option("--model", model, "policy model JSON");
  ci->add_option("--gate", gate)->check(CLI::IsMember({"oracle", "teleop"}));
  ci->add_flag("--offline", offline, "expert-demonstrated scripted mistakes");
  ci->add_option("--mistake", mistakes, "dx,dy[,yaw] (repeatable, offline)");
  ci->add_option("--address", address);
  ci->add_option("--port", port);
  ci->add_option("--tick-ms", tick_ms);

  auto* gen = app.add_subcommand("generate", "Expand source episodes");
  add_run_flags(gen, o);
  gen->add_option("--source", data, "source dataset(s)")->required();
  gen->add_option("--model", model, "policy model JSON");
  gen->add_option("--out", out)->required();
  gen->add_option("--report", report_out, "generation report JSON");
  auto* abl = gen->add_option("--ablation", ablation)
                  ->check(CLI::IsMember({"no-policy"}));
  gen->add_flag("--demo-mode", demo_mode)->excludes(abl);
  gen->add_option("--provenance", provenance, "base | synthetic");

  auto* fit = app.add_subcommand("fit", "Fit a k-NN policy");
  add_run_flags(fit, o);
  fit->add_option("--data", data, "dataset(s), aggregated in order")->required();
  fit->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "Success rate of a fitted policy");
  add_run_flags(ev, o);
  ev->add_option("--model", model)->required();

  auto* ex = app.add_subcommand("experiment", "Run a dataset-arm comparison");
  ex->add_option("--plan", plan_path)->required()->check(CLI::ExistingFile);
  ex->add_flag("--assert", do_assert, "exit 1 if any check fails");
  ex->add_option("--json", json_out, "structured report file");
  std::optional<unsigned> ex_workers;
  ex->add_option("--workers", ex_workers);

  auto* va = app.add_subcommand("validate", "Check a dataset file");
  va->add_option("dataset", source)->required();

  auto* sv = app.add_subcommand("serve", "Teleoperation WebSocket service");
  add_run_flags(sv, o);
  sv->add_option("--model", model);
  sv->add_option("--out", out)->required();
  sv->add_option("--address", address);
  sv->add_option("--port", port);
  sv->add_option("--tick-ms", tick_ms);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cd) {
      const RunConfig c = o.resolve();
      const Dataset ds = collect_demos(
          c.task_spec(), clean ? CorruptionModel::none() : c.corruption,
          c.generation.m, c.generation.seed,
          clean ? Provenance::base : Provenance::source_human);
      write_dataset(ds, out);
      std::printf("%zu demonstrations -> %s\n", ds.episodes.size(), out.c_str());
    } else if (*ci) {
      const RunConfig c = o.resolve();
      const TaskSpec task = c.task_spec();
      if (offline) {
        std::vector<ScriptedMistake> ms = parse_mistakes(mistakes);
        if (mistakes.empty()) {
          ms = {{Vec3(0.03, 0, 0), 0.0}, {Vec3(-0.03, 0, 0), 0.0},
                {Vec3(0, 0.03, 0), 0.0}, {Vec3(0, -0.03, 0), 0.0}};
        }
        const OfflineResult r = offline_collect(task, c.corruption, ms,
                                                c.generation.m, c.generation.seed);
        write_dataset(r.dataset, out);
        std::size_t plain = 0;
        for (bool b : r.no_mistake) plain += b ? 1 : 0;
        std::printf("%zu episodes (%zu without a mistake) -> %s\n",
                    r.dataset.episodes.size(), plain, out.c_str());
      } else if (gate == "oracle") {
        if (model.empty()) throw std::invalid_argument("--model is required");
        CollectionReport rep;
        const Dataset ds = collect_interventions(read_model(model), task,
                                                 c.corruption, c.generation.m,
                                                 c.generation.seed, &rep);
        write_dataset(ds, out);
        std::printf("%zu interventions from %llu attempts -> %s\n",
                    ds.episodes.size(),
                    static_cast<unsigned long long>(rep.attempts), out.c_str());
      } else {
#ifdef IVGEN_HAS_TELEOP
        return serve(c, model, out, address, port, tick_ms, c.generation.m);
#else
        throw std::runtime_error("built without the teleop service");
#endif
      }
    } else if (*gen) {
      const RunConfig c = o.resolve();
      GenerateRequest rq;
      rq.n = c.generation.n;
      rq.seed = c.generation.seed;
      rq.workers = c.generation.workers;
      rq.attempt_cap = c.generation.attempt_cap;
      rq.config.mode = demo_mode ? GenerationMode::demo
                       : ablation == "no-policy" ? GenerationMode::no_policy
                                                 : GenerationMode::interventions;
      if (!provenance.empty()) rq.config.provenance = parse_provenance(provenance);
      std::optional<PolicyModel> policy;
      if (rq.config.mode == GenerationMode::interventions) {
        if (model.empty()) throw std::invalid_argument("--model is required");
        policy = read_model(model);
      }
      try {
        const GenerationResult r =
            generate(c.task_spec(), c.corruption, policy ? &*policy : nullptr,
                     read_all(data), rq);
        write_dataset(r.dataset, out);
        if (!report_out.empty()) write_text(report_out, report_to_string(r.report));
        std::printf("%llu episodes from %llu attempts -> %s\n",
                    static_cast<unsigned long long>(r.report.successes),
                    static_cast<unsigned long long>(r.report.attempts),
                    out.c_str());
      } catch (const CapReached& e) {
        write_dataset(e.partial, out);
        if (!report_out.empty()) write_text(report_out, report_to_string(e.report));
        std::fprintf(stderr, "%s; %zu episodes written\n", e.what(),
                     e.partial.episodes.size());
        return 1;
      }
    } else if (*fit) {
      const RunConfig c = o.resolve();
      const PolicyModel pm = PolicyModel::fit(read_all(data), c.task_spec(), c.policy);
      write_model(pm, out);
      std::printf("%zu rows, k=%d -> %s\n", pm.rows(), pm.k(), out.c_str());
    } else if (*ev) {
      const RunConfig c = o.resolve();
      const PolicyModel pm = read_model(model);
      for (std::uint64_t s : c.eval.seeds) {
        print_stats(s, evaluate(pm, c.task_spec(), c.corruption, c.eval.trials, s,
                                c.generation.workers));
      }
    } else if (*ex) {
      ExperimentPlan plan = read_plan(plan_path);
      if (ex_workers) plan.workers = *ex_workers;
      const ExperimentReport r = run_experiment(
          plan, [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); });
      std::cout << r.table() << "\n";
      if (!json_out.empty()) write_text(json_out, r.json());
      bool all = true;
      for (const AssertionResult& a : check_assertions(r)) {
        std::printf("%s %s: %s\n", a.pass ? "PASS" : "FAIL", a.name.c_str(),
                    a.detail.c_str());
        all = all && a.pass;
      }
      for (const ArmResult& a : r.arms) all = all && a.error.empty();
      if (do_assert && !all) return 1;
    } else if (*va) {
      const std::vector<Violation> vs = validate(source);
      for (const Violation& v : vs) {
        std::printf("line %zu: %s: %s\n", v.line, v.code.c_str(), v.message.c_str());
      }
      if (!vs.empty()) return 1;
      std::printf("ok\n");
    } else if (*sv) {
#ifdef IVGEN_HAS_TELEOP
      return serve(o.resolve(), model, out, address, port, tick_ms, 0);
#else
      throw std::runtime_error("built without the teleop service");
#endif
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
