#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fccausal/errors.hpp"
#include "fccausal/reference_model.hpp"
#include "fccausal/scripted_model.hpp"
#include "test_support.hpp"

using namespace fccausal;
using testsupport::linf;

namespace {

const ReferenceModel& shared_model() {
  static const ReferenceModel m = ReferenceModel::build({});
  return m;
}

std::vector<std::string> probe_texts() {
  std::vector<std::string> out;
  for (const auto& q : testsupport::corpus()) out.push_back(q.query);
  out.resize(10);
  return out;
}

}  // namespace

TEST_CASE("byte tokenizer: empty text gives no tokens") {
  const auto seq = ByteTokenizer::tokenize("");
  CHECK(seq.empty());
  CHECK(seq.offsets.empty());
}

TEST_CASE("byte tokenizer: one token per byte with unit offsets") {
  const auto seq = ByteTokenizer::tokenize("ab");
  REQUIRE(seq.size() == 2);
  CHECK(seq.tokens == std::vector<int>{'a', 'b'});
  CHECK(seq.offsets[0] == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK(seq.offsets[1] == std::pair<std::size_t, std::size_t>{1, 2});
}

TEST_CASE("byte tokenizer: round-trips every corpus query, including multi-byte text") {
  auto texts = probe_texts();
  texts.push_back("Caf\xc3\xa9 \xe2\x80\x94 \xf0\x9f\x94\x92 line\nbreak");
  for (const auto& t : texts) {
    const auto seq = ByteTokenizer::tokenize(t);
    CHECK(ByteTokenizer::detokenize(seq.tokens) == t);
    CHECK(seq.source_text == t);
    for (std::size_t i = 1; i < seq.offsets.size(); ++i) {
      CHECK(seq.offsets[i].first >= seq.offsets[i - 1].second);
    }
    for (int tok : seq.tokens) CHECK((tok >= 0 && tok < 256));
  }
}

TEST_CASE("reference model: default config echoes dimensions") {
  const auto& m = shared_model();
  CHECK(m.layer_count() == 4);
  CHECK(m.vocab_size() == 256);
  CHECK(m.config().width == 32);
  CHECK(m.config().heads == 2);
}

TEST_CASE("reference model: bad dimensions are config errors") {
  ReferenceConfig c;
  c.layer_count = 0;
  CHECK_THROWS_AS(ReferenceModel::build(c), ConfigError);
  c = {};
  c.width = -4;
  CHECK_THROWS_AS(ReferenceModel::build(c), ConfigError);
  c = {};
  c.width = 33;  // not divisible by two heads
  CHECK_THROWS_AS(ReferenceModel::build(c), ConfigError);
  c = {};
  c.identity_layers = {4};
  CHECK_THROWS_AS(ReferenceModel::build(c), ConfigError);
}

TEST_CASE("reference model: same config and seed build identical logits") {
  auto a = ReferenceModel::build({});
  auto b = ReferenceModel::build({});
  const auto in = a.tokenize("probe input");
  CHECK(a.forward(in).values == b.forward(in).values);

  ReferenceConfig other;
  other.seed = 1;
  auto c = ReferenceModel::build(other);
  CHECK(c.forward(in).values != a.forward(in).values);
  CHECK(c.identity() != a.identity());
}

TEST_CASE("reference model: forward is deterministic and finite") {
  auto m = shared_model();
  for (const auto& t : probe_texts()) {
    const auto in = m.tokenize(t);
    const auto a = m.forward(in);
    const auto b = m.forward(in);
    CHECK(a.size() == 256);
    CHECK(a.all_finite());
    CHECK(a.values == b.values);
  }
}

TEST_CASE("reference model: forward preconditions") {
  auto m = shared_model();
  CHECK_THROWS_AS(m.forward(m.tokenize("")), PreconditionError);
  const auto in = m.tokenize("x");
  CHECK_THROWS_AS(m.forward(in, -1), RangeError);
  CHECK_THROWS_AS(m.forward(in, 4), RangeError);

  ReferenceConfig small;
  small.context_length = 8;
  auto tiny = ReferenceModel::build(small);
  try {
    tiny.forward(tiny.tokenize("123456789"));
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    CHECK(e.budget() == 8);
  }
}

TEST_CASE("reference model: hook skip equals rebuild without the layer") {
  auto m = shared_model();
  for (int l = 0; l < m.layer_count(); ++l) {
    auto rebuilt = m.without_layer(l);
    CHECK(rebuilt.layer_count() == 3);
    for (const auto& t : probe_texts()) {
      const auto in = m.tokenize(t);
      CHECK(linf(m.forward(in, l), rebuilt.forward(in)) <= 1e-6);
    }
  }
}

TEST_CASE("reference model: skipping a layer changes the logits") {
  auto m = shared_model();
  const auto in = m.tokenize("Do this. Then that.");
  const auto base = m.forward(in);
  for (int l = 0; l < m.layer_count(); ++l) CHECK(linf(base, m.forward(in, l)) > 0.0);
}

TEST_CASE("reference model: skipping an all-zero block leaves logits unchanged") {
  ReferenceConfig c;
  c.identity_layers = {2};
  auto m = ReferenceModel::build(c);
  const auto& zero = m.blocks()[2];
  CHECK(zero.qkv.isZero(0.0f));
  CHECK(zero.mlp_out.isZero(0.0f));
  for (const auto& t : probe_texts()) {
    const auto in = m.tokenize(t);
    CHECK(m.forward(in, 2).values == m.forward(in).values);
  }
}

TEST_CASE("reference model: hooks see each block's input and output") {
  auto m = shared_model();
  const auto in = m.tokenize("hook probe");
  std::vector<int> seen;
  const auto hooked = m.forward_hooked(in, [&](int layer, const Matrix& before, Matrix& after) {
    seen.push_back(layer);
    CHECK(before.rows() == static_cast<Eigen::Index>(in.size()));
    CHECK(after.rows() == before.rows());
  });
  CHECK(seen == std::vector<int>{0, 1, 2, 3});
  CHECK(hooked.values == m.forward(in).values);
}

TEST_CASE("reference model: greedy generation matches a manual argmax rollout") {
  auto m = shared_model();
  DecodeParams d;
  d.max_new_tokens = 12;
  m.set_decode(d);
  for (const std::string prompt : {"aaaa", "Hello, world", "Do this. Then that."}) {
    // Full recomputation each step, no cache.
    std::vector<int> tokens = m.tokenize(prompt).tokens;
    std::string expected;
    for (int step = 0; step < d.max_new_tokens; ++step) {
      TokenSequence seq;
      seq.tokens = tokens;
      seq.offsets.resize(tokens.size());
      const auto logits = m.forward(seq);
      const int next = static_cast<int>(
          std::max_element(logits.values.begin(), logits.values.end()) - logits.values.begin());
      if (next == m.config().eos_token) break;
      expected.push_back(static_cast<char>(next));
      tokens.push_back(next);
    }
    CHECK(m.generate(prompt) == expected);
    CHECK(m.generate(prompt) == m.generate(prompt));
  }
}

TEST_CASE("reference model: sampled generation is seeded") {
  auto m = shared_model();
  DecodeParams d;
  d.temperature = 1.5;
  d.max_new_tokens = 24;
  d.seed = 5;
  m.set_decode(d);
  const std::string a = m.generate("sample me");
  CHECK(m.generate("sample me") == a);
  bool differs = false;
  for (std::uint64_t s = 6; s < 12 && !differs; ++s) {
    m.reseed(s);
    differs = m.generate("sample me") != a;
  }
  CHECK(differs);
}

TEST_CASE("reference model: generation respects max_new_tokens and the context budget") {
  auto m = shared_model();
  DecodeParams d;
  d.max_new_tokens = 3;
  m.set_decode(d);
  CHECK(m.generate("abc").size() <= 3);

  ReferenceConfig small;
  small.context_length = 10;
  auto tiny = ReferenceModel::build(small);
  tiny.set_decode(d);
  CHECK_NOTHROW(tiny.generate("1234567"));
  CHECK_THROWS_AS(tiny.generate("12345678"), CapacityError);
}

TEST_CASE("decode parameters are validated") {
  auto m = shared_model();
  DecodeParams d;
  d.temperature = -0.1;
  CHECK_THROWS_AS(m.set_decode(d), ConfigError);
  d = {};
  d.max_new_tokens = 0;
  CHECK_THROWS_AS(m.set_decode(d), ConfigError);
}

TEST_CASE("reference model: weights round-trip through the binary format") {
  const auto dir = testsupport::scratch_dir("weights");
  ReferenceConfig c;
  c.seed = 9;
  c.identity_layers = {1};
  const auto m = ReferenceModel::build(c);
  m.save(dir / "m.bin");
  auto loaded = ReferenceModel::load(dir / "m.bin");
  auto orig = m;
  CHECK(loaded.identity() == orig.identity());
  CHECK(loaded.config().identity_layers == std::vector<int>{1});
  const auto in = orig.tokenize("round trip");
  CHECK(loaded.forward(in).values == orig.forward(in).values);

  // Header: little-endian u64 length followed by JSON.
  std::ifstream f(dir / "m.bin", std::ios::binary);
  unsigned char len_bytes[8];
  f.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | len_bytes[i];
  std::string header(len, '\0');
  f.read(header.data(), static_cast<std::streamsize>(len));
  const auto j = nlohmann::json::parse(header);
  CHECK(j.at("dtype") == "f32le");
  CHECK(j.at("config").at("layer_count") == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("reference model: loading a corrupt file fails cleanly") {
  const auto dir = testsupport::scratch_dir("corrupt");
  {
    std::ofstream f(dir / "bad.bin", std::ios::binary);
    f << "not a weights file";
  }
  CHECK_THROWS_AS(ReferenceModel::load(dir / "bad.bin"), Error);
  CHECK_THROWS_AS(ReferenceModel::load(dir / "missing.bin"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("default chat template uses the role markers") {
  auto m = shared_model();
  const std::string out = m.render_chat({"sys", "tools", "hi"});
  CHECK(out.find(std::string(kSystemMarker) + "\nsys\n") != std::string::npos);
  CHECK(out.find(std::string(kToolsMarker) + "\ntools\n") != std::string::npos);
  CHECK(out.find(std::string(kUserMarker) + "\nhi\n") < out.find(kAssistantMarker));
  const std::string bare = m.render_chat({"", "", "hi"});
  CHECK(bare.find(kSystemMarker) == std::string::npos);
  CHECK(bare.find(kToolsMarker) == std::string::npos);
}

TEST_CASE("scripted model: canned table, responder and capability") {
  ScriptedModel::Options o;
  o.canned["fixture prompt"] = "canned continuation";
  o.responder = [](std::string_view p) { return "echo:" + std::string(p); };
  ScriptedModel m(o);
  CHECK(m.generate("fixture prompt") == "canned continuation");
  CHECK(m.generate("other") == "echo:other");
  CHECK(m.generate_calls() == 2);
  CHECK_FALSE(m.logits_capability());
  CHECK_THROWS_AS(m.forward(m.tokenize("x")), CapabilityError);
}

TEST_CASE("scripted model: mocked logits honour forward preconditions") {
  ScriptedModel::Options o;
  o.logits = [](const TokenSequence&, std::optional<int> skip) {
    LogitsVector v;
    v.values = {0.0, skip ? 1.0 : 0.0};
    return v;
  };
  ScriptedModel m(o);
  CHECK(m.logits_capability());
  CHECK(m.forward(m.tokenize("x")).values == std::vector<double>{0.0, 0.0});
  CHECK(m.forward(m.tokenize("x"), 1).values == std::vector<double>{0.0, 1.0});
  CHECK_THROWS_AS(m.forward(m.tokenize("x"), 4), RangeError);
  CHECK_THROWS_AS(m.forward(m.tokenize("")), PreconditionError);
}

TEST_CASE("stubs respond by rendered setting") {
  auto fc = stubs::fc_only("CALL");
  CHECK(fc.generate(std::string(kToolsMarker) + "\n[]") == "CALL");
  CHECK(fc.generate("plain") != "CALL");
  auto c = stubs::compliant("CALL", "MALICIOUS: X");
  CHECK(c.generate(std::string(kSystemMarker) + "\nrules") == "MALICIOUS: X");
  CHECK(c.generate(std::string(kToolsMarker) + "\n[]") == "CALL");
  CHECK(stubs::silent().generate("anything").empty());
  CHECK(stubs::always_calls("CALL").generate("anything") == "CALL");
}
