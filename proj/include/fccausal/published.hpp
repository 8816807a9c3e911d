#pragma once

#include <array>
#include <optional>
#include <string_view>

// Published reference figures for the four large chat models, kept only so
// reports can print them next to locally computed values. Nothing here is
// recomputed at desk scale.
namespace fccausal::published {

struct SettingTriple {
  double without;
  double prompt;
  double fc;
};

struct ModelFigures {
  std::string_view model;
  SettingTriple sdc;
  // AD against the uninstructed baseline; the baseline itself has none.
  double ad_prompt;
  double ad_fc;
  double correlation_without;
  double correlation_fc;
  SettingTriple detection_rate;
  SettingTriple choice_score;
  SettingTriple choice_minutes;
};

inline constexpr std::array<ModelFigures, 4> kModels = {{
    {"Llama-3.1-8B",
     {0.5714, 0.1172, 0.0662},
     1.1347,
     1.5938,
     0.5331,
     0.5851,
     {0.7424, 0.8699, 0.9943},
     {0.4440, 0.2235, 0.1506},
     {13.80, 25.45, 25.63}},
    {"Llama-3.1-70B",
     {0.7557, 0.2463, 0.8735},
     0.8527,
     1.7096,
     0.4743,
     0.5586,
     {0.4796, 0.8133, 0.9831},
     {0.6231, 0.5852, 0.5096},
     {35.72, 64.50, 83.73}},
    {"Hermes-3-8B",
     {0.5081, 0.1075, 0.0652},
     0.8292,
     1.7249,
     0.4969,
     0.5562,
     {0.0531, 0.1440, 0.8492},
     {0.4122, 0.4135, 0.3998},
     {16.45, 18.80, 30.28}},
    {"Mistral-22B",
     {0.8578, 0.1917, 0.1192},
     1.1927,
     2.1819,
     0.5020,
     0.5465,
     {0.0825, 0.5915, 0.6817},
     {0.4993, 0.3778, 0.4938},
     {35.28, 54.65, 97.37}},
}};

// Headline mean FC-over-prompt improvement in detection rate (135%).
inline constexpr double kHeadlineImprovement = 1.35;

inline constexpr std::optional<ModelFigures> find(std::string_view model) {
  for (const auto& m : kModels) {
    if (m.model == model) return m;
  }
  return std::nullopt;
}

}  // namespace fccausal::published
