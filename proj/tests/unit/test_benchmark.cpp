#include <catch2/catch_amalgamated.hpp>

#include "fccausal/benchmark.hpp"
#include "fccausal/errors.hpp"
#include "fccausal/reference_model.hpp"
#include "fccausal/scripted_model.hpp"
#include "test_support.hpp"

using namespace fccausal;

TEST_CASE("choice items: fixture parses with letter and index answers") {
  const auto items = load_choice_items(testsupport::fixture("choices.jsonl"));
  REQUIRE(items.size() == 3);
  CHECK(items[0].answer == 1);
  CHECK(items[1].answer == 0);
  CHECK(items[2].answer == 2);
  CHECK(items[2].options[2] == "Carbon dioxide");
}

TEST_CASE("choice items: schema errors name field and line") {
  auto field_of = [](std::string_view text) -> std::pair<std::string, std::size_t> {
    try {
      parse_choice_items(text);
    } catch (const SchemaError& e) {
      return {e.field(), e.line()};
    }
    return {"", 0};
  };
  const std::string ok = R"({"id": "a", "question": "q", "options": ["x", "y"], "answer": "A"})";
  CHECK(field_of(ok + "\n" + R"({"id": "b", "options": ["x", "y"], "answer": 0})") ==
        std::pair<std::string, std::size_t>{"question", 2});
  CHECK(field_of(R"({"id": "a", "question": "q", "options": ["x"], "answer": 0})").first ==
        "options");
  CHECK(field_of(R"({"id": "a", "question": "q", "options": ["x", "y"], "answer": "C"})").first ==
        "answer");
  CHECK(field_of(R"({"id": "a", "question": "q", "options": ["x", "y"], "answer": 2})").first ==
        "answer");
  CHECK(field_of(R"({"id": "a", "question": "q", "options": ["x", "y"], "answer": -1})").first ==
        "answer");
  CHECK(field_of("[1]").second == 1);
}

TEST_CASE("choice rendering") {
  const ChoiceItem item{"x", "Pick one", {"red", "blue"}, 1};
  CHECK(render_choice_question(item) ==
        "Pick one\nA. red\nB. blue\nAnswer with the letter of the correct option.");
  CHECK(choice_letter(25) == 'Z');
  CHECK_THROWS_AS(choice_letter(26), RangeError);
}

TEST_CASE("choice extraction") {
  CHECK(extract_choice("The answer is B.", 4) == 1u);
  CHECK(extract_choice("answer: (c)", 4) == 2u);
  CHECK(extract_choice("I think (D) fits", 4) == 3u);
  CHECK(extract_choice("A", 4) == 0u);
  CHECK(extract_choice("  b) because", 4) == 1u);
  CHECK_FALSE(extract_choice("The answer is E", 4).has_value());
  CHECK_FALSE(extract_choice("Absolutely", 4).has_value());
  CHECK_FALSE(extract_choice("", 4).has_value());
  CHECK_FALSE(extract_choice("I cannot say", 2).has_value());
}

TEST_CASE("benchmark: scripted answers are scored exactly") {
  const auto items = load_choice_items(testsupport::fixture("choices.jsonl"));
  // Always answers B: right on the first item only.
  ModelFactory always_b = [] {
    ScriptedModel::Options o;
    o.responder = [](std::string_view) { return std::string("The answer is B"); };
    return std::make_unique<ScriptedModel>(o);
  };
  const Setting fc = make_setting(SettingKind::kFc, default_rules());
  const BenchmarkResult r = run_benchmark(always_b, items, fc, 2);
  CHECK(r.setting == "fc");
  CHECK(r.score == 1.0 / 3.0);
  REQUIRE(r.outcomes.size() == 3);
  CHECK(r.outcomes[0].correct);
  CHECK(r.outcomes[1].chosen == 1u);
  CHECK_FALSE(r.outcomes[2].correct);
  CHECK(r.total_ms >= 0.0);
  CHECK_THROWS_AS(run_benchmark(always_b, std::span<const ChoiceItem>{}, fc), PreconditionError);
}

TEST_CASE("benchmark: reference model is seeded per item") {
  const auto items = load_choice_items(testsupport::fixture("choices.jsonl"));
  ModelFactory factory = [] {
    auto m = std::make_unique<ReferenceModel>(ReferenceModel::build({}));
    DecodeParams d;
    d.temperature = 0.8;
    d.max_new_tokens = 4;
    m->set_decode(d);
    return m;
  };
  const Setting w = make_setting(SettingKind::kWithout, default_rules());
  const BenchmarkResult a = run_benchmark(factory, items, w, 1, 5);
  const BenchmarkResult b = run_benchmark(factory, items, w, 3, 5);
  for (std::size_t i = 0; i < items.size(); ++i) CHECK(a.outcomes[i].chosen == b.outcomes[i].chosen);
  CHECK(a.score == b.score);
}
