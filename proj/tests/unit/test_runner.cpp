#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "fccausal/errors.hpp"
#include "fccausal/reference_model.hpp"
#include "fccausal/runner.hpp"
#include "fccausal/scripted_model.hpp"
#include "test_support.hpp"

using namespace fccausal;
namespace fs = std::filesystem;

namespace {

const std::string kCall =
    R"({"name": "report_malware_generation", "arguments": {"category": "Malware Generation", "evidence": "x"}})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig small_config(const fs::path& out) {
  RunConfig c = load_config(testsupport::fixture("run_small.cfg"));
  c.out = out;
  return c;
}

}  // namespace

TEST_CASE("config: parse, defaults and round-trip") {
  const RunConfig c = parse_config(
      "# comment\n"
      "model = reference-seed:3\n"
      "settings = fc, w/o\n"
      "dataset = data.jsonl   # trailing comment\n"
      "sample_size = 7\n"
      "selective = true\n"
      "correlation = spearman\n"
      "analyses = layer\n");
  CHECK(c.model == "reference-seed:3");
  CHECK(c.settings == std::vector<SettingKind>{SettingKind::kFc, SettingKind::kWithout});
  CHECK(c.dataset == "data.jsonl");
  CHECK(c.sample_size == 7);
  CHECK(c.selective);
  CHECK(c.correlation == CorrelationKind::kSpearman);
  CHECK(c.analyses == std::vector<Analysis>{Analysis::kLayer});
  CHECK(c.repeats == 5);
  CHECK(c.mask == "-");

  const RunConfig back = parse_config(to_config_text(c));
  CHECK(to_config_text(back) == to_config_text(c));
  CHECK(back.settings == c.settings);
  CHECK(back.seed == c.seed);
}

TEST_CASE("config: bad input is rejected with the line") {
  auto message = [](std::string_view text) -> std::string {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  CHECK(message("dataset = a\ncolour = blue\n").find("line 2") != std::string::npos);
  CHECK(message("dataset = a\nsettings = without, tools\n").find("tools") != std::string::npos);
  CHECK(message("dataset = a\nseed = 1\nseed = 2\n").find("duplicate") != std::string::npos);
  CHECK(message("dataset = a\nworkers = many\n").find("line 2") != std::string::npos);
  CHECK(message("just words\n").find("line 1") != std::string::npos);
  CHECK(message("dataset = a\nselective = maybe\n") != "");
  CHECK_THROWS_AS(parse_config("dataset = a\nrun_name = ../up\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config("dataset = a\nanalyses = benchmark\n").validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST_CASE("config: relative paths resolve against the file") {
  const RunConfig c = load_config(testsupport::fixture("run_small.cfg"));
  CHECK(c.dataset == testsupport::fixture("queries20.jsonl"));
  CHECK(c.rules == testsupport::fixture("rules_small.json"));
  CHECK(fs::exists(c.dataset));
}

TEST_CASE("config errors stop the run before any inference") {
  const auto out = testsupport::scratch_dir("runner-cfg");
  int built = 0;
  ModelFactory counting = [&built] {
    ++built;
    return std::make_unique<ScriptedModel>(stubs::silent());
  };
  RunConfig c = small_config(out);
  c.dataset = out / "missing.jsonl";
  CHECK_THROWS_AS(run_experiment(c, counting), ConfigError);
  c = small_config(out);
  c.sample_size = 21;
  CHECK_THROWS_AS(run_experiment(c, counting), ConfigError);
  c = small_config(out);
  c.rules = out / "missing_rules.json";
  CHECK_THROWS_AS(run_experiment(c, counting), ConfigError);
  CHECK(built == 0);
  CHECK(fs::is_empty(out));
  fs::remove_all(out);
}

TEST_CASE("model specs") {
  const RuleSet rules = default_rules();
  CHECK(make_model_factory("reference", rules)()->identity() == "reference-v256-l4-w32-h2-s0");
  CHECK(make_model_factory("reference-seed:5", rules)()->identity() ==
        "reference-v256-l4-w32-h2-s5");
  CHECK_FALSE(make_model_factory("stub:silent", rules)()->logits_capability());
  auto fc_only = make_model_factory("stub:fc-only", rules)();
  CHECK(fc_only->generate(render_prompt(*fc_only, make_setting(SettingKind::kFc, rules), "q"))
            .find("report_illegal_activity") != std::string::npos);
  DecodeParams d;
  d.temperature = 0.5;
  d.max_new_tokens = 3;
  auto m = make_model_factory("reference", rules, d)();
  CHECK(m->decode().temperature == 0.5);
  CHECK(m->decode().max_new_tokens == 3);
  CHECK_THROWS_AS(make_model_factory("gpt-9", rules), ConfigError);
  CHECK_THROWS_AS(make_model_factory("stub:chatty", rules), ConfigError);
  CHECK_THROWS_AS(make_model_factory("weights:/nonexistent.bin", rules), ConfigError);
}

TEST_CASE("random sample: seeded subset without repeats") {
  const auto corpus = testsupport::corpus();
  const auto a = random_sample(corpus, 8, 3);
  CHECK(a == random_sample(corpus, 8, 3));
  CHECK(a != random_sample(corpus, 8, 4));
  std::vector<std::string> ids;
  for (const auto& q : a) ids.push_back(q.id);
  std::sort(ids.begin(), ids.end());
  CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
  CHECK_THROWS_AS(random_sample(corpus, 21, 3), PreconditionError);
}

TEST_CASE("selective sample: FC-only stub keeps the first k in seeded order") {
  const auto corpus = testsupport::corpus();
  auto m = stubs::fc_only(kCall);
  const SelectionResult r = selective_sample(m, corpus, 4, 21, default_rules());
  // Seeded order oracle: shuffle of the indices with the same engine.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(21);
  std::shuffle(order.begin(), order.end(), rng);
  REQUIRE(r.selected.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r.selected[i] == corpus[order[i]]);
  CHECK(r.scanned_ids.size() == 4);
  CHECK_FALSE(r.warning.has_value());

  const SelectionResult again = selective_sample(m, corpus, 4, 21, default_rules());
  CHECK(again.selected == r.selected);
  CHECK(again.scanned_ids == r.scanned_ids);
}

TEST_CASE("selective sample: a model flagging under both settings selects nothing") {
  const auto corpus = testsupport::corpus();
  auto m = stubs::compliant(kCall, "MALICIOUS: Malware Generation");
  const SelectionResult r = selective_sample(m, corpus, 3, 1, default_rules());
  CHECK(r.selected.empty());
  CHECK(r.scanned_ids.size() == corpus.size());
  REQUIRE(r.warning.has_value());
  CHECK(r.warning->find("0 of 3") != std::string::npos);
}

TEST_CASE("run: complete directory, manifest and deterministic analysis artifacts") {
  const auto out = testsupport::scratch_dir("runner-run");
  RunConfig c = small_config(out);
  const RunResult a = run_experiment(c);
  CHECK(a.directory == out / "small");
  CHECK(a.queries == 5);
  CHECK(a.failed_queries == 0);

  const std::vector<std::string> expected = {
      "config.txt",         "selection.json",     "sample.jsonl",
      "layer_profile_without.json", "layer_profile_prompt.json", "layer_profile_fc.json",
      "layer_profile_without.csv",  "clauses_fc.json",  "focus_prompt.json",
      "detection.json",     "metrics.json",       "failures.json",
      "outcomes.jsonl",     "timing.json"};
  for (const auto& name : expected) {
    INFO(name);
    CHECK(fs::exists(a.directory / name));
  }
  CHECK(fs::exists(a.directory / "manifest.json"));
  const auto manifest = read_manifest(a.directory);
  CHECK(manifest.size() == a.artifacts.size());
  for (const auto& e : manifest) {
    CHECK(fs::file_size(a.directory / e.path) == e.bytes);
    CHECK((e.kind == "analysis" || e.kind == "timing"));
  }
  // Nothing left in staging.
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(out)) ++entries;
  CHECK(entries == 1);

  // Same config, fresh directory: analysis artifacts identical byte for byte.
  c.run_name = "small2";
  c.workers = 1;
  const RunResult b = run_experiment(c);
  for (const auto& e : a.artifacts) {
    if (e.kind != "analysis") continue;
    INFO(e.path);
    if (e.path == "config.txt") continue;  // records run_name and workers
    CHECK(slurp(a.directory / e.path) == slurp(b.directory / e.path));
  }

  // Re-running into an existing directory needs overwrite.
  c.run_name = "small";
  CHECK_THROWS_AS(run_experiment(c), RunError);
  c.overwrite = true;
  CHECK_NOTHROW(run_experiment(c));
  fs::remove_all(out);
}

TEST_CASE("run: more than ten percent failed queries aborts with nothing written") {
  const auto out = testsupport::scratch_dir("runner-fail");
  RunConfig c = small_config(out);
  c.analyses = {Analysis::kDetection};
  c.sample_size = 20;
  // Two failing queries of twenty is 10%: still allowed. Three is not.
  auto factory_failing = [](std::vector<std::string> bad) -> ModelFactory {
    return [bad] {
      ScriptedModel::Options o;
      o.responder = [bad](std::string_view prompt) -> std::string {
        for (const auto& b : bad) {
          if (prompt.find(b) != std::string_view::npos) throw std::runtime_error("backend down");
        }
        return "fine";
      };
      return std::make_unique<ScriptedModel>(o);
    };
  };
  const auto corpus = testsupport::corpus();
  const RunResult ok = run_experiment(c, factory_failing({corpus[0].query, corpus[1].query}));
  CHECK(ok.failed_queries == 2);
  c.run_name = "again";
  CHECK_THROWS_AS(
      run_experiment(c, factory_failing({corpus[0].query, corpus[1].query, corpus[2].query})),
      RunError);
  CHECK_FALSE(fs::exists(out / "again"));
  for (const auto& e : fs::directory_iterator(out)) {
    CHECK(e.path().filename().string().find("staging") == std::string::npos);
  }
  fs::remove_all(out);
}

TEST_CASE("run: logits-free backends cannot run layer analysis") {
  const auto out = testsupport::scratch_dir("runner-cap");
  RunConfig c = small_config(out);
  c.model = "stub:always-calls";
  CHECK_THROWS_AS(run_experiment(c), CapabilityError);
  c.analyses = {Analysis::kDetection};
  const RunResult r = run_experiment(c);
  const auto det = nlohmann::json::parse(slurp(r.directory / "detection.json"));
  bool saw_fc = false;
  for (const auto& s : det["settings"]) {
    if (s["setting"] == "fc") {
      saw_fc = true;
      CHECK(s["rate"] == 1.0);
    }
  }
  CHECK(saw_fc);
  fs::remove_all(out);
}
