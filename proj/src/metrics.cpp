#include "fccausal/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>

#include "fccausal/errors.hpp"

namespace fccausal {

double ad(std::span<const double> ace_instructed, std::span<const double> ace_baseline) {
  if (ace_instructed.size() != ace_baseline.size()) {
    throw ShapeError("ad: " + std::to_string(ace_instructed.size()) + " layers vs " +
                     std::to_string(ace_baseline.size()));
  }
  double sum = 0.0;
  for (std::size_t l = 0; l < ace_instructed.size(); ++l) {
    sum += std::abs(ace_instructed[l] - ace_baseline[l]);
  }
  return sum;
}

double sdc(std::span<const std::vector<double>> rows) {
  if (rows.size() < 2) throw PreconditionError("sdc: needs at least two inputs");
  const std::size_t n_layers = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != n_layers) throw ShapeError("sdc: ragged CE matrix");
  }
  const double n = static_cast<double>(rows.size());
  double total = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[l];
    mean /= n;
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[l] - mean) * (r[l] - mean);
    total += std::sqrt(ss / n);
  }
  return total;
}

double sdc(const LayerProfile& profile) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < profile.input_ids.size(); ++i) {
    rows.push_back(profile.normalized_row(i));
  }
  return sdc(rows);
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (unsigned char c : text) {
    // Bytes >= 0x80 belong to multi-byte UTF-8 letters; keep them in words.
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double TfCosineSimilarity::similarity(std::string_view a, std::string_view b) const {
  if (a.empty() || b.empty()) throw PreconditionError("semantic_similarity: empty text");
  std::map<std::string, double> ta, tb;
  for (auto& w : word_tokens(a)) ta[w] += 1.0;
  for (auto& w : word_tokens(b)) tb[w] += 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  auto norm = [](const std::map<std::string, double>& t) {
    double s = 0.0;
    for (const auto& [w, c] : t) s += c * c;
    return std::sqrt(s);
  };
  double dot = 0.0;
  for (const auto& [w, c] : ta) {
    if (auto it = tb.find(w); it != tb.end()) dot += c * it->second;
  }
  return std::clamp(dot / (norm(ta) * norm(tb)), 0.0, 1.0);
}

double semantic_similarity(std::string_view clause_text, std::string_view core_objective) {
  return TfCosineSimilarity().similarity(clause_text, core_objective);
}

std::string_view to_string(CorrelationKind kind) {
  return kind == CorrelationKind::kPearson ? "pearson" : "spearman";
}

std::string_view to_string(CorrelationMode mode) {
  return mode == CorrelationMode::kPooled ? "pooled" : "per_input";
}

CorrelationKind parse_correlation_kind(std::string_view text) {
  if (text == "pearson") return CorrelationKind::kPearson;
  if (text == "spearman") return CorrelationKind::kSpearman;
  throw ConfigError("unknown correlation '" + std::string(text) + "'");
}

CorrelationMode parse_correlation_mode(std::string_view text) {
  if (text == "pooled") return CorrelationMode::kPooled;
  if (text == "per_input") return CorrelationMode::kPerInput;
  throw ConfigError("unknown correlation mode '" + std::string(text) + "'");
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("correlation: length mismatch");
  if (x.size() < 3) throw PreconditionError("correlation: needs at least 3 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw DegenerateInputError("correlation: first argument has zero variance", mx);
  if (!(syy > 0.0)) {
    throw DegenerateInputError("correlation: second argument has zero variance", my);
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

// Average ranks, ties sharing the mean of their positions.
std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("correlation: length mismatch");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

double focus_correlation(std::span<const double> clause_effects,
                         std::span<const double> similarities, CorrelationKind kind) {
  return kind == CorrelationKind::kPearson ? pearson(clause_effects, similarities)
                                           : spearman(clause_effects, similarities);
}

FocusResult focus_correlation(std::span<const FocusSample> samples, CorrelationKind kind,
                              CorrelationMode mode) {
  FocusResult result;
  if (mode == CorrelationMode::kPooled) {
    std::vector<double> e, s;
    for (const auto& f : samples) {
      e.push_back(f.effect);
      s.push_back(f.similarity);
    }
    result.correlation = focus_correlation(e, s, kind);
    result.pairs = samples.size();
    std::vector<std::string> ids;
    for (const auto& f : samples) ids.push_back(f.input_id);
    std::sort(ids.begin(), ids.end());
    result.inputs_used = static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
    return result;
  }
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& f : samples) {
    groups[f.input_id].first.push_back(f.effect);
    groups[f.input_id].second.push_back(f.similarity);
  }
  double sum = 0.0;
  for (const auto& [id, g] : groups) {
    if (g.first.size() < 3) continue;
    try {
      sum += focus_correlation(g.first, g.second, kind);
      ++result.inputs_used;
      result.pairs += g.first.size();
    } catch (const DegenerateInputError&) {
      // Inputs with flat effects or similarities carry no ranking signal.
    }
  }
  if (result.inputs_used == 0) {
    throw DegenerateInputError("focus_correlation: no input has a usable correlation", 0.0);
  }
  result.correlation = sum / static_cast<double>(result.inputs_used);
  return result;
}

namespace {
nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}
std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
}  // namespace

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["setting"] = r.setting;
  j["baseline"] = r.baseline ? nlohmann::ordered_json(*r.baseline) : nlohmann::ordered_json(nullptr);
  j["ad"] = opt(r.ad);
  j["sdc"] = opt(r.sdc);
  j["correlation"] = opt(r.correlation);
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.setting = j.at("setting").get<std::string>();
  if (!j.at("baseline").is_null()) r.baseline = j.at("baseline").get<std::string>();
  r.ad = opt_from(j, "ad");
  r.sdc = opt_from(j, "sdc");
  r.correlation = opt_from(j, "correlation");
  return r;
}

}  // namespace fccausal
