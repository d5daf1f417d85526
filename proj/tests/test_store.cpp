#include "ivgen/datagen.hpp"
#include "ivgen/store.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

using namespace ivgen;

namespace {

const TaskSpec kPeg = make_task(TaskId::planar_peg_insert);

const Dataset& demos() {
  static const Dataset d = collect_demos(kPeg, CorruptionModel::peg_noise(), 3, 4);
  return d;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

bool has_code(const std::vector<Violation>& v, const std::string& code,
              std::size_t line) {
  for (const Violation& x : v) {
    if (x.code == code && x.line == line) return true;
  }
  return false;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ivgen_test_store_" + name);
}

}  // namespace

TEST_CASE("dataset text round trips byte for byte") {
  const std::string text = dataset_to_string(demos());
  CHECK(lines_of(text).size() == 1 + demos().episodes.size());
  const Dataset back = dataset_from_string(text);
  CHECK(back.task == demos().task);
  REQUIRE(back.episodes.size() == demos().episodes.size());
  CHECK(dataset_to_string(back) == text);
  CHECK(validate_text(text).empty());

  const auto path = temp_path("roundtrip.jsonl");
  write_dataset(demos(), path);
  CHECK(read_text(path) == text);
  CHECK(dataset_to_string(read_dataset(path)) == text);
  std::filesystem::remove(path);
}

TEST_CASE("doubles survive the text format exactly") {
  const Dataset back = dataset_from_string(dataset_to_string(demos()));
  const Trajectory& a = demos().episodes[0];
  const Trajectory& b = back.episodes[0];
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].obs.ee.position == b.steps[i].obs.ee.position);
    CHECK(a.steps[i].action.translation == b.steps[i].action.translation);
  }
  CHECK(a.header.seed == b.header.seed);
  CHECK(a.header.corruption_seed == b.header.corruption_seed);
}

TEST_CASE("a header-only file is an empty dataset") {
  Dataset empty;
  empty.task = TaskId::geometry_assembly;
  const std::string text = dataset_to_string(empty);
  CHECK(lines_of(text).size() == 1);
  const Dataset back = dataset_from_string(text);
  CHECK(back.task == TaskId::geometry_assembly);
  CHECK(back.episodes.empty());
  CHECK(validate_text(text).empty());
}

TEST_CASE("a corrupted line is reported with its line number") {
  auto lines = lines_of(dataset_to_string(demos()));
  lines[2] = lines[2].substr(0, lines[2].size() / 2);
  const std::string text = join(lines);
  try {
    dataset_from_string(text);
    FAIL("expected StoreError");
  } catch (const StoreError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).rfind("line 3: ", 0) == 0);
  }
  const auto v = validate_text(text);
  REQUIRE(v.size() == 1);
  CHECK(v[0].code == "malformed");
  CHECK(v[0].line == 3);
}

TEST_CASE("validation codes") {
  SUBCASE("empty file") {
    const auto v = validate_text("");
    REQUIRE(v.size() == 1);
    CHECK(v[0].code == "schema");
    CHECK(v[0].line == 0);
  }
  SUBCASE("generated episode that misses the goal") {
    Dataset d = demos();
    d.episodes[1].header.provenance = Provenance::synthetic;
    d.episodes[1].goal = false;
    const auto v = validate_text(dataset_to_string(d));
    CHECK(has_code(v, "goal-filter", 3));
    CHECK(v.size() == 1);
  }
  SUBCASE("human episodes may miss the goal") {
    Dataset d = demos();
    d.episodes[1].goal = false;
    CHECK(validate_text(dataset_to_string(d)).empty());
  }
  SUBCASE("step indices must count up from zero") {
    auto lines = lines_of(dataset_to_string(demos()));
    const std::string needle = "\"t\":1,";
    const auto at = lines[1].find(needle);
    REQUIRE(at != std::string::npos);
    lines[1].replace(at, needle.size(), "\"t\":7,");
    const auto v = validate_text(join(lines));
    CHECK(has_code(v, "monotone-t", 2));
  }
  SUBCASE("suffix records must start at a firing step") {
    Dataset d = demos();
    d.episodes[0].header.termination = 0;
    for (Step& s : d.episodes[0].steps) s.contact.reset();
    CHECK(has_code(validate_text(dataset_to_string(d)), "suffix-filter", 2));
  }
  SUBCASE("episode without steps") {
    Dataset d = demos();
    d.episodes[2].steps.clear();
    CHECK(has_code(validate_text(dataset_to_string(d)), "schema", 4));
  }
  SUBCASE("missing file") {
    const auto v = validate(temp_path("does-not-exist.jsonl"));
    REQUIRE_FALSE(v.empty());
  }
}

TEST_CASE("schema version gate") {
  auto lines = lines_of(dataset_to_string(demos()));
  const std::string one = "\"schema_version\":1";
  SUBCASE("newer dataset header") {
    const auto at = lines[0].find(one);
    REQUIRE(at != std::string::npos);
    lines[0].replace(at, one.size(), "\"schema_version\":2");
    CHECK_THROWS_AS(dataset_from_string(join(lines)), SchemaVersionError);
    const auto v = validate_text(join(lines));
    REQUIRE(v.size() == 1);
    CHECK(v[0].code == "schema");
    CHECK(v[0].line == 1);
  }
  SUBCASE("older episode record") {
    const auto at = lines[2].find(one);
    REQUIRE(at != std::string::npos);
    lines[2].replace(at, one.size(), "\"schema_version\":0");
    try {
      dataset_from_string(join(lines));
      FAIL("expected SchemaVersionError");
    } catch (const SchemaVersionError& e) {
      CHECK(e.line() == 3);
    }
    CHECK(has_code(validate_text(join(lines)), "schema", 3));
  }
}

TEST_CASE("mixed tasks are rejected") {
  Dataset d = demos();
  d.episodes[0].header.task = TaskId::geometry_assembly;
  CHECK_THROWS_AS(dataset_to_string(d), StoreError);
}

TEST_CASE("run config") {
  SUBCASE("defaults from an empty object") {
    const RunConfig c = run_config_from_string("{}");
    CHECK(c.task == TaskId::planar_peg_insert);
    CHECK(c.policy.k == 3);
    CHECK(c.eval.trials == 200);
  }
  SUBCASE("overrides") {
    const RunConfig c = run_config_from_string(R"({
      "task": "geometry_assembly",
      "corruption": {"preset": "geometry_flip", "flip_probability": 0.25},
      "policy": {"k": 5, "weights": "balanced"},
      "generation": {"m": 4, "n": 40, "seed": 9, "workers": 2},
      "world": {"horizon": 150},
      "eval": {"trials": 20, "seeds": [7]}
    })");
    CHECK(c.task == TaskId::geometry_assembly);
    CHECK(c.corruption.kind == CorruptionKind::geometry_flip);
    CHECK(c.corruption.flip_probability == 0.25);
    CHECK(c.policy.k == 5);
    CHECK(c.policy.weights == WeightsMode::balanced);
    CHECK(c.generation.n == 40);
    CHECK(c.task_spec().horizon == 150);
    CHECK(c.eval.seeds == std::vector<std::uint64_t>{7});
  }
  SUBCASE("text round trip") {
    const RunConfig c = run_config_from_string(R"({"policy": {"k": 2}, "world": {"goal_tolerance": 0.004}})");
    const std::string text = run_config_to_string(c);
    CHECK(run_config_to_string(run_config_from_string(text)) == text);
  }
  SUBCASE("unknown keys") {
    CHECK_THROWS_AS(run_config_from_string(R"({"polcy": {}})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_string(R"({"policy": {"kk": 1}})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_string(R"({"corruption": {"preset": "peg_noise", "sead": 1}})"),
                    std::invalid_argument);
  }
  SUBCASE("out of range values") {
    CHECK_THROWS_AS(run_config_from_string(R"({"policy": {"k": 0}})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_string(R"({"generation": {"n": 0}})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_string(R"({"eval": {"seeds": []}})"), std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_string(R"({"controller": {"max_translation": 0}})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(run_config_from_string("not json"), std::invalid_argument);
  }
  SUBCASE("presets") {
    CHECK(corruption_preset("none").kind == CorruptionKind::none);
    CHECK_THROWS(corruption_preset("gale"));
  }
}

TEST_CASE("model round trip") {
  const PolicyModel m = PolicyModel::fit(demos(), kPeg, FitConfig{2, WeightsMode::uniform});
  const std::string text = model_to_string(m);
  const PolicyModel back = model_from_string(text);
  CHECK(model_to_string(back) == text);
  for (const Trajectory& t : demos().episodes) {
    for (const Step& s : t.steps) {
      const DeltaAction a = m.act(s.obs);
      const DeltaAction b = back.act(s.obs);
      CHECK(a.translation == b.translation);
      CHECK(a.rotation == b.rotation);
      CHECK(a.gripper == b.gripper);
    }
  }
  CHECK_THROWS(model_from_string("{}"));
}

TEST_CASE("generation report") {
  GenerationReport r;
  r.attempts = 3;
  r.successes = 2;
  r.failures[Outcome::horizon] = 1;
  r.log = {{0, 11, Outcome::success}, {1, 12, Outcome::horizon}, {2, 13, Outcome::success}};
  const std::string text = report_to_string(r);
  CHECK(text.find("\"horizon\"") != std::string::npos);
  CHECK(text.find("\"attempts\"") != std::string::npos);
  CHECK(report_to_string(r) == text);
}
