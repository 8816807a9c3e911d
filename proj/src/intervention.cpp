#include "fccausal/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <sstream>

#include "fccausal/errors.hpp"
#include "fccausal/io_util.hpp"
#include "fccausal/worker_pool.hpp"

namespace fccausal {

std::string_view to_string(LogitsPosition position) {
  return position == LogitsPosition::kFinalInput ? "final_input" : "first_generated";
}

LogitsPosition parse_logits_position(std::string_view text) {
  if (text == "final_input") return LogitsPosition::kFinalInput;
  if (text == "first_generated") return LogitsPosition::kFirstGenerated;
  throw ConfigError("unknown logits position '" + std::string(text) + "'");
}

std::string target_to_string(const EffectTarget& target) {
  if (const int* layer = std::get_if<int>(&target)) return std::to_string(*layer);
  return std::get<std::string>(target);
}

double l2_distance(const LogitsVector& a, const LogitsVector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("l2_distance: logits of size " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

LogitsVector observe(ModelBackend& model, const TokenSequence& input,
                     std::optional<int> skip_layer, LogitsPosition position) {
  if (!model.logits_capability()) {
    throw CapabilityError("model '" + model.identity() +
                          "' cannot expose logits; interventions are unavailable");
  }
  LogitsVector logits = model.forward(input, skip_layer);
  if (position == LogitsPosition::kFinalInput) return logits;

  const auto& v = logits.values;
  const int next = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
  TokenSequence extended = input;
  extended.tokens.push_back(next);
  const std::size_t end = input.source_text.size();
  extended.offsets.emplace_back(end, end);
  return model.forward(extended, skip_layer);
}

double layer_effect(ModelBackend& model, const TokenSequence& input, int layer,
                    LogitsPosition position) {
  if (layer < 0 || layer >= model.layer_count()) {
    throw RangeError("layer_effect: layer " + std::to_string(layer) + " out of range");
  }
  const LogitsVector base = observe(model, input, std::nullopt, position);
  return l2_distance(base, observe(model, input, layer, position));
}

std::vector<double> layer_effects(ModelBackend& model, const TokenSequence& input,
                                  LogitsPosition position) {
  const LogitsVector base = observe(model, input, std::nullopt, position);
  std::vector<double> effects;
  effects.reserve(static_cast<std::size_t>(model.layer_count()));
  for (int l = 0; l < model.layer_count(); ++l) {
    effects.push_back(l2_distance(base, observe(model, input, l, position)));
  }
  return effects;
}

double layer_ace(ModelBackend& model, std::span<const TokenSequence> dataset, int layer,
                 LogitsPosition position) {
  if (dataset.empty()) throw PreconditionError("layer_ace: empty dataset");
  double sum = 0.0;
  for (const auto& input : dataset) sum += layer_effect(model, input, layer, position);
  return sum / static_cast<double>(dataset.size());
}

std::vector<double> normalize_per_input(std::span<const double> values) {
  if (values.empty()) throw PreconditionError("normalize_per_input: empty vector");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  if (!(range > 0.0)) {
    throw DegenerateInputError(
        "normalize_per_input: all entries equal " + format_double(min), min);
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back((v - min) / range);
  return out;
}

std::vector<double> LayerProfile::normalized_row(std::size_t input) const {
  std::vector<double> row;
  for (std::size_t l = 0; l < layers.size(); ++l) row.push_back(at(input, l).ce_norm.value());
  return row;
}

std::vector<double> LayerProfile::normalized_column(std::size_t layer) const {
  std::vector<double> col;
  for (std::size_t i = 0; i < input_ids.size(); ++i) col.push_back(at(i, layer).ce_norm.value());
  return col;
}

namespace {

// Raw and normalized effects of every layer for one input.
std::vector<EffectRecord> scan_input(ModelBackend& model, const ScanInput& input,
                                     const Setting& setting, const EngineOptions& options) {
  std::optional<int> current_layer;
  try {
    const TokenSequence tokens = model.tokenize(render_prompt(model, setting, input.query));
    const LogitsVector base = observe(model, tokens, std::nullopt, options.position);
    std::vector<double> raw;
    for (int l = 0; l < model.layer_count(); ++l) {
      current_layer = l;
      raw.push_back(l2_distance(base, observe(model, tokens, l, options.position)));
    }
    current_layer.reset();
    const std::vector<double> norm = normalize_per_input(raw);
    std::vector<EffectRecord> records;
    for (int l = 0; l < model.layer_count(); ++l) {
      records.push_back({input.id, l, raw[static_cast<std::size_t>(l)],
                         norm[static_cast<std::size_t>(l)], setting.id(), options.seed});
    }
    return records;
  } catch (const std::exception& e) {
    std::string where = "input '" + input.id + "'";
    if (current_layer) where += ", layer " + std::to_string(*current_layer);
    std::throw_with_nested(InterventionError(where + ": " + e.what(), input.id, current_layer));
  }
}

LayerProfile assemble(const ModelBackend& model, std::span<const ScanInput> dataset,
                      const Setting& setting, const EngineOptions& options,
                      std::vector<std::optional<std::vector<EffectRecord>>>& rows,
                      std::vector<std::string>& errors) {
  LayerProfile p;
  p.model = model.identity();
  p.setting = setting.id();
  p.seed = options.seed;
  p.position = options.position;
  for (int l = 0; l < model.layer_count(); ++l) p.layers.push_back(l);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!rows[i]) {
      p.failures.push_back({dataset[i].id, errors[i]});
      continue;
    }
    p.input_ids.push_back(dataset[i].id);
    for (auto& r : *rows[i]) p.records.push_back(std::move(r));
  }
  if (p.input_ids.empty()) {
    throw PreconditionError("layer_scan: every input failed; first error: " +
                            p.failures.front().message);
  }
  p.ace = ace_from_records(p);
  return p;
}

void check_dataset(std::span<const ScanInput> dataset) {
  if (dataset.empty()) throw PreconditionError("layer_scan: empty dataset");
}

}  // namespace

LayerProfile layer_scan(ModelBackend& model, std::span<const ScanInput> dataset,
                        const Setting& setting, const EngineOptions& options) {
  check_dataset(dataset);
  std::vector<std::optional<std::vector<EffectRecord>>> rows(dataset.size());
  std::vector<std::string> errors(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    try {
      rows[i] = scan_input(model, dataset[i], setting, options);
    } catch (const InterventionError& e) {
      if (!options.skip_failed_inputs) throw;
      errors[i] = e.what();
    }
  }
  return assemble(model, dataset, setting, options, rows, errors);
}

LayerProfile layer_scan(const ModelFactory& factory, std::span<const ScanInput> dataset,
                        const Setting& setting, const EngineOptions& options) {
  check_dataset(dataset);
  std::vector<std::optional<std::vector<EffectRecord>>> rows(dataset.size());
  std::vector<std::string> errors(dataset.size());
  parallel_over_models(factory, dataset.size(), options.workers,
                       [&](ModelBackend& model, std::size_t i) {
                         try {
                           rows[i] = scan_input(model, dataset[i], setting, options);
                         } catch (const InterventionError& e) {
                           if (!options.skip_failed_inputs) throw;
                           errors[i] = e.what();
                         }
                       });
  const auto probe = factory();
  return assemble(*probe, dataset, setting, options, rows, errors);
}

std::vector<double> ace_from_records(const LayerProfile& profile) {
  const std::size_t n_layers = profile.layers.size();
  const std::size_t n_inputs = profile.input_ids.size();
  if (n_inputs == 0) throw PreconditionError("ace_from_records: profile has no inputs");
  std::vector<double> ace(n_layers, 0.0);
  for (std::size_t l = 0; l < n_layers; ++l) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n_inputs; ++i) sum += profile.at(i, l).ce_norm.value();
    ace[l] = sum / static_cast<double>(n_inputs);
  }
  return ace;
}

namespace {

nlohmann::ordered_json record_to_json(const EffectRecord& r) {
  nlohmann::ordered_json j;
  j["input_id"] = r.input_id;
  if (const int* layer = std::get_if<int>(&r.target)) {
    j["target"] = *layer;
  } else {
    j["target"] = std::get<std::string>(r.target);
  }
  j["ce_raw"] = r.ce_raw;
  j["ce_norm"] = r.ce_norm ? nlohmann::ordered_json(*r.ce_norm) : nlohmann::ordered_json(nullptr);
  j["setting"] = r.setting;
  j["seed"] = r.seed;
  return j;
}

EffectRecord record_from_json(const nlohmann::json& j) {
  EffectRecord r;
  r.input_id = j.at("input_id").get<std::string>();
  const auto& t = j.at("target");
  if (t.is_number_integer()) {
    r.target = t.get<int>();
  } else {
    r.target = t.get<std::string>();
  }
  r.ce_raw = j.at("ce_raw").get<double>();
  if (!j.at("ce_norm").is_null()) r.ce_norm = j.at("ce_norm").get<double>();
  r.setting = j.at("setting").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

}  // namespace

nlohmann::ordered_json to_json(const LayerProfile& p) {
  nlohmann::ordered_json j;
  j["kind"] = "layer_profile";
  nlohmann::ordered_json meta;
  meta["model"] = p.model;
  meta["setting"] = p.setting;
  meta["seed"] = p.seed;
  meta["logits_position"] = std::string(to_string(p.position));
  meta["distance"] = "l2_raw_logits";
  meta["layer_count"] = p.layers.size();
  meta["input_count"] = p.input_ids.size();
  j["metadata"] = std::move(meta);
  j["layers"] = p.layers;
  j["input_ids"] = p.input_ids;
  j["ace"] = p.ace;
  j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : p.records) j["records"].push_back(record_to_json(r));
  j["failures"] = nlohmann::ordered_json::array();
  for (const auto& f : p.failures) {
    j["failures"].push_back({{"input_id", f.input_id}, {"message", f.message}});
  }
  return j;
}

LayerProfile layer_profile_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "layer_profile") throw Error("not a layer_profile document");
  LayerProfile p;
  const auto& meta = j.at("metadata");
  p.model = meta.at("model").get<std::string>();
  p.setting = meta.at("setting").get<std::string>();
  p.seed = meta.at("seed").get<std::uint64_t>();
  p.position = parse_logits_position(meta.at("logits_position").get<std::string>());
  p.layers = j.at("layers").get<std::vector<int>>();
  p.input_ids = j.at("input_ids").get<std::vector<std::string>>();
  p.ace = j.at("ace").get<std::vector<double>>();
  for (const auto& r : j.at("records")) p.records.push_back(record_from_json(r));
  for (const auto& f : j.at("failures")) {
    p.failures.push_back({f.at("input_id").get<std::string>(), f.at("message").get<std::string>()});
  }
  if (p.records.size() != p.layers.size() * p.input_ids.size()) {
    throw Error("layer_profile: record count does not match inputs x layers");
  }
  return p;
}

std::string to_csv(std::span<const EffectRecord> records) {
  std::string out = "input_id,target,ce_raw,ce_norm,setting,seed\n";
  for (const auto& r : records) {
    out += csv_field(r.input_id) + "," + csv_field(target_to_string(r.target)) + "," +
           format_double(r.ce_raw) + "," + (r.ce_norm ? format_double(*r.ce_norm) : "") + "," +
           csv_field(r.setting) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

ClauseEffect clause_effect(ModelBackend& model, std::string_view query, const Clause& clause,
                           const ClauseOptions& options, const Setting* setting) {
  if (options.repeats < 1) throw PreconditionError("clause_effect: repeats must be >= 1");
  // Throws ConsistencyError when the clause does not belong to the query.
  const std::string masked = mask_clause(query, clause, options.mask);
  auto render = [&](std::string_view q) {
    return setting ? render_prompt(model, *setting, q) : std::string(q);
  };
  const TokenSequence original_tokens = model.tokenize(render(query));
  const TokenSequence masked_tokens = model.tokenize(render(masked));

  ClauseEffect effect;
  effect.requested_repeats = options.repeats;
  effect.effective_repeats = model.decode().temperature == 0.0 ? 1 : options.repeats;
  double sum = 0.0;
  for (int j = 0; j < effect.effective_repeats; ++j) {
    if (effect.effective_repeats > 1) model.reseed(options.seed + static_cast<std::uint64_t>(j));
    const LogitsVector a = observe(model, original_tokens, std::nullopt, options.position);
    const LogitsVector b = observe(model, masked_tokens, std::nullopt, options.position);
    sum += l2_distance(a, b);
  }
  effect.value = sum / static_cast<double>(effect.effective_repeats);
  return effect;
}

ClauseProfile clause_scan(ModelBackend& model, const ScanInput& input, const Setting& setting,
                          const ClauseOptions& options, const ClauseSplitter& splitter) {
  ClauseProfile p;
  p.input_id = input.id;
  p.setting = setting.id();
  p.seed = options.seed;
  p.mask = options.mask;
  p.clauses = splitter.split(input.query);
  std::vector<double> raw;
  for (const auto& c : p.clauses) {
    try {
      const ClauseEffect e = clause_effect(model, input.query, c, options, &setting);
      p.effective_repeats = e.effective_repeats;
      raw.push_back(e.value);
    } catch (const std::exception& e) {
      std::throw_with_nested(InterventionError(
          "input '" + input.id + "', clause " + c.clause_id + ": " + e.what(), input.id,
          std::nullopt));
    }
  }
  std::optional<std::vector<double>> norm;
  if (raw.size() >= 2) {
    try {
      norm = normalize_per_input(raw);
    } catch (const DegenerateInputError&) {
      // Equal effects everywhere: leave ce_norm unset for this input.
    }
  }
  for (std::size_t k = 0; k < p.clauses.size(); ++k) {
    EffectRecord r{input.id, p.clauses[k].clause_id, raw[k], std::nullopt, setting.id(),
                   options.seed};
    if (norm) r.ce_norm = (*norm)[k];
    p.records.push_back(std::move(r));
  }
  return p;
}

nlohmann::ordered_json to_json(const Clause& c) {
  nlohmann::ordered_json j;
  j["clause_id"] = c.clause_id;
  j["char_start"] = c.char_start;
  j["char_end"] = c.char_end;
  j["text"] = c.text;
  return j;
}

nlohmann::ordered_json to_json(const ClauseProfile& p) {
  nlohmann::ordered_json j;
  j["kind"] = "clause_profile";
  j["input_id"] = p.input_id;
  j["setting"] = p.setting;
  j["seed"] = p.seed;
  j["mask"] = p.mask;
  j["mask_mode"] = "span";
  j["effective_repeats"] = p.effective_repeats;
  j["clauses"] = nlohmann::ordered_json::array();
  for (const auto& c : p.clauses) j["clauses"].push_back(to_json(c));
  j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : p.records) j["records"].push_back(record_to_json(r));
  return j;
}

ClauseProfile clause_profile_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "clause_profile") throw Error("not a clause_profile document");
  ClauseProfile p;
  p.input_id = j.at("input_id").get<std::string>();
  p.setting = j.at("setting").get<std::string>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.mask = j.at("mask").get<std::string>();
  p.effective_repeats = j.at("effective_repeats").get<int>();
  for (const auto& c : j.at("clauses")) {
    p.clauses.push_back({c.at("clause_id").get<std::string>(), c.at("char_start").get<std::size_t>(),
                         c.at("char_end").get<std::size_t>(), c.at("text").get<std::string>()});
  }
  for (const auto& r : j.at("records")) p.records.push_back(record_from_json(r));
  return p;
}

}  // namespace fccausal
