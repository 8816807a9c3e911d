#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "fccausal/errors.hpp"
#include "fccausal/metrics.hpp"

using namespace fccausal;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

LayerProfile profile_from_rows(const std::vector<std::vector<double>>& rows) {
  LayerProfile p;
  for (std::size_t l = 0; l < rows.front().size(); ++l) p.layers.push_back(static_cast<int>(l));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    p.input_ids.push_back("q" + std::to_string(i));
    for (std::size_t l = 0; l < rows[i].size(); ++l) {
      EffectRecord r;
      r.input_id = p.input_ids.back();
      r.target = static_cast<int>(l);
      r.ce_raw = rows[i][l];
      r.ce_norm = rows[i][l];
      p.records.push_back(r);
    }
  }
  return p;
}

}  // namespace

TEST_CASE("ad: worked example and shape check") {
  const std::vector<double> a{0.2, 0.5, 0.9}, b{0.1, 0.7, 0.6};
  CHECK_THAT(ad(a, b), WithinAbs(0.6, 1e-12));
  const std::vector<double> shorter{0.1};
  CHECK_THROWS_AS(ad(a, shorter), ShapeError);
}

TEST_CASE("ad: metric axioms (property)") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const auto a = random_vec(rng, 6), b = random_vec(rng, 6), c = random_vec(rng, 6);
    CHECK(ad(a, a) == 0.0);
    CHECK(ad(a, b) == ad(b, a));
    CHECK(ad(a, b) >= 0.0);
    CHECK(ad(a, c) <= ad(a, b) + ad(b, c) + 1e-12);
  }
}

TEST_CASE("sdc: hand-computed values") {
  // Layer 0 column {0, 1}: population sd 0.5. Layer 1 column {1, 1}: 0.
  const std::vector<std::vector<double>> rows{{0.0, 1.0}, {1.0, 1.0}};
  CHECK_THAT(sdc(rows), WithinAbs(0.5, 1e-15));
  // Identical rows have zero spread.
  const std::vector<std::vector<double>> same{{0.0, 0.3, 1.0}, {0.0, 0.3, 1.0}, {0.0, 0.3, 1.0}};
  CHECK(sdc(same) == 0.0);
  // Column {0, 0.5, 1}: sd sqrt(1/6).
  const std::vector<std::vector<double>> three{{0.0}, {0.5}, {1.0}};
  CHECK_THAT(sdc(three), WithinAbs(std::sqrt(1.0 / 6.0), 1e-15));
}

TEST_CASE("sdc: profile overload agrees with the matrix overload") {
  std::mt19937_64 rng(5);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 7; ++i) rows.push_back(random_vec(rng, 4));
  CHECK(sdc(profile_from_rows(rows)) == sdc(rows));
}

TEST_CASE("sdc: invariant under input permutation (property)") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 5; ++i) rows.push_back(random_vec(rng, 4));
    const double base = sdc(rows);
    std::shuffle(rows.begin(), rows.end(), rng);
    CHECK_THAT(sdc(rows), WithinAbs(base, 1e-12));
  }
}

TEST_CASE("sdc: preconditions") {
  const std::vector<std::vector<double>> one{{0.0, 1.0}};
  CHECK_THROWS_AS(sdc(one), PreconditionError);
  const std::vector<std::vector<double>> ragged{{0.0, 1.0}, {0.0}};
  CHECK_THROWS_AS(sdc(ragged), ShapeError);
}

TEST_CASE("similarity: hand-computed term-frequency cosine") {
  // {steal:1, password:2} . {steal:1, password:1, now:1} = 3; norms sqrt5 * sqrt3.
  CHECK_THAT(semantic_similarity("steal password password", "steal password now"),
             WithinAbs(3.0 / std::sqrt(15.0), 1e-12));
  CHECK(semantic_similarity("abc", "abc") == 1.0);
  CHECK_THAT(semantic_similarity("Write Malware", "write malware"), WithinAbs(1.0, 1e-15));
  CHECK(semantic_similarity("alpha", "beta") == 0.0);
  CHECK(semantic_similarity("...", "beta") == 0.0);
  CHECK_THROWS_AS(semantic_similarity("", "beta"), PreconditionError);
  CHECK(word_tokens("Café au-lait, 3x") == std::vector<std::string>{"café", "au", "lait", "3x"});
}

TEST_CASE("correlation: perfect, affine-invariant and rank-based") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  std::vector<double> y, neg, cubic;
  for (double v : x) {
    y.push_back(2 * v + 1);
    neg.push_back(-3 * v + 7);
    cubic.push_back(v * v * v);
  }
  CHECK_THAT(pearson(x, y), WithinAbs(1.0, 1e-12));
  CHECK_THAT(pearson(x, neg), WithinAbs(-1.0, 1e-12));
  CHECK(pearson(x, cubic) < 1.0 - 1e-3);
  CHECK_THAT(spearman(x, cubic), WithinAbs(1.0, 1e-12));

  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const auto a = random_vec(rng, 8), b = random_vec(rng, 8);
    std::vector<double> a2;
    for (double v : a) a2.push_back(4.0 * v - 2.0);
    CHECK_THAT(pearson(a2, b), WithinAbs(pearson(a, b), 1e-10));
    CHECK(std::abs(pearson(a, b)) <= 1.0);
  }
}

TEST_CASE("correlation: spearman with ties uses average ranks") {
  // Ranks of x: 1, 2.5, 2.5, 4. y already ranked 1..4.
  const std::vector<double> x{10, 20, 20, 30}, y{1, 2, 3, 4};
  const std::vector<double> rx{1, 2.5, 2.5, 4};
  CHECK_THAT(spearman(x, y), WithinAbs(pearson(rx, y), 1e-15));
}

TEST_CASE("correlation: preconditions") {
  const std::vector<double> two{1, 2}, flat{1, 1, 1}, x{1, 2, 3};
  CHECK_THROWS_AS(pearson(two, two), PreconditionError);
  CHECK_THROWS_AS(pearson(flat, x), DegenerateInputError);
  CHECK_THROWS_AS(pearson(x, flat), DegenerateInputError);
  CHECK_THROWS_AS(pearson(x, two), ShapeError);
}

TEST_CASE("focus correlation: pooled and per-input modes") {
  std::vector<FocusSample> s;
  // Input a: effect rises with similarity. Input b: falls.
  for (int k = 0; k < 3; ++k) s.push_back({"a", "c" + std::to_string(k), k * 0.5, k * 0.5});
  for (int k = 0; k < 3; ++k) s.push_back({"b", "c" + std::to_string(k), k * 0.5, 1.0 - k * 0.5});
  // A third input with a flat effect is dropped in per-input mode only.
  for (int k = 0; k < 3; ++k) s.push_back({"c", "c" + std::to_string(k), k * 0.5, 0.25});

  const FocusResult per = focus_correlation(s, CorrelationKind::kPearson, CorrelationMode::kPerInput);
  CHECK_THAT(per.correlation, WithinAbs(0.0, 1e-12));
  CHECK(per.inputs_used == 2);
  CHECK(per.pairs == 6);

  std::vector<double> e, sim;
  for (const auto& f : s) {
    e.push_back(f.effect);
    sim.push_back(f.similarity);
  }
  const FocusResult pooled = focus_correlation(s, CorrelationKind::kPearson, CorrelationMode::kPooled);
  CHECK(pooled.correlation == pearson(e, sim));
  CHECK(pooled.pairs == 9);
  CHECK(pooled.inputs_used == 3);

  const std::vector<FocusSample> flat(s.begin() + 6, s.end());
  CHECK_THROWS_AS(focus_correlation(flat, CorrelationKind::kPearson, CorrelationMode::kPerInput),
                  DegenerateInputError);
}

TEST_CASE("metric report: JSON round-trip with absent fields") {
  MetricReport r;
  r.setting = "fc";
  r.baseline = "without";
  r.ad = 0.125;
  r.sdc = 1.0 / 3.0;
  const MetricReport back = metric_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.setting == "fc");
  CHECK(back.baseline == r.baseline);
  CHECK(back.ad == r.ad);
  CHECK(back.sdc == r.sdc);
  CHECK_FALSE(back.correlation.has_value());
  CHECK(parse_correlation_kind("spearman") == CorrelationKind::kSpearman);
  CHECK(parse_correlation_mode("per_input") == CorrelationMode::kPerInput);
  CHECK_THROWS_AS(parse_correlation_kind("kendall"), ConfigError);
}
