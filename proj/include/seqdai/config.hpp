#pragma once

#include <seqdai/model.hpp>
#include <seqdai/rules.hpp>
#include <seqdai/simulate.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace seqdai {

// One test configuration of a problem: prior, subsystems and test.
struct VariantConfig {
  std::string name;
  ProblemSpec spec;
  TestKind kind = TestKind::joint;
  TiePriority tie = TiePriority::null_first;
  RuleChoice rule = RuleChoice::automatic;
};

struct MonteCarloConfig {
  long reps = 2000;
  std::uint64_t seed = 0;
  long max_n = 1000000;
  int threads = 1;
};

struct Config {
  std::string path;
  std::vector<VariantConfig> variants;  // at least one
  std::optional<GaussianGlobal> truth;
  std::vector<ErrorLevels> levels;      // one entry, or the sweep grid
  bool sweep = false;
  MonteCarloConfig mc;
};

// Throws invalid_config on malformed JSON or fields, and the model errors of
// validate() on an inconsistent problem.
Config parse_config(const std::string& json_text, const std::string& path = "");
Config load_config(const std::string& path);

// Throws invalid_config when the config has no truth.
ExperimentConfig experiment_config(const Config& config, const VariantConfig& variant, const ErrorLevels& levels);

}  // namespace seqdai
