#include <seqdai/config.hpp>

#include <seqdai/errors.hpp>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace seqdai {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& what) { throw invalid_config(what); }

const json& required(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) bad(where + " lacks '" + key + "'");
  return j.at(key);
}

int source_index(const json& v, int K) {
  if (!v.is_number_integer()) bad("sources are 1-based integers");
  int k = v.get<int>();
  if (k < 1 || k > K) bad("source " + std::to_string(k) + " outside 1.." + std::to_string(K));
  return k - 1;
}

SourceSet source_set(const json& v, int K) {
  SourceSet s;
  if (v.is_number_integer()) {
    s.push_back(source_index(v, K));
  } else if (v.is_array()) {
    for (const auto& x : v) s.push_back(source_index(x, K));
  } else {
    bad("a source set is an integer or a list of integers");
  }
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) bad("source listed twice in a set");
  return s;
}

std::vector<double> numbers(const json& v, const std::string& what) {
  if (!v.is_array()) bad(what + " must be a list of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) bad(what + " must be a list of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

// A flat list applies to every entry; a list of lists gives one grid per entry.
std::vector<std::vector<double>> per_entry(const json& v, std::size_t count, const std::string& what) {
  if (!v.is_array()) bad(what + " must be a list");
  if (!v.empty() && v.front().is_array()) {
    if (v.size() != count) bad(what + " needs " + std::to_string(count) + " entries");
    std::vector<std::vector<double>> out;
    for (const auto& x : v) out.push_back(numbers(x, what));
    return out;
  }
  return std::vector<std::vector<double>>(count, numbers(v, what));
}

std::vector<Unit> parse_units(const json& problem, int K, ProblemKind kind) {
  if (!problem.contains("units")) return kind == ProblemKind::mean_shift ? singleton_units(K) : pair_units(K);
  const auto& u = problem.at("units");
  if (u.is_string()) {
    const auto name = u.get<std::string>();
    if (name == "singletons") return singleton_units(K);
    if (name == "pairs") return pair_units(K);
    bad("unknown units shorthand '" + name + "'");
  }
  if (!u.is_array()) bad("units must be a shorthand or a list of source sets");
  std::vector<Unit> out;
  for (const auto& x : u) out.push_back(Unit{source_set(x, K)});
  return out;
}

UnitSet unit_set_from(const json& v, const ProblemSpec& spec) {
  if (!v.is_array()) bad("a prior set is a list of units");
  UnitSet A = 0;
  for (const auto& u : v) {
    int e = spec.find_unit(source_set(u, spec.K));
    if (e < 0) bad("prior set refers to an unknown unit");
    A |= unit_set_of(e);
  }
  return A;
}

PriorPsi parse_psi(const json& j, const ProblemSpec& spec) {
  const auto variant = required(j, "variant", "psi").get<std::string>();
  if (variant == "powerset") return PriorPsi::powerset();
  if (variant == "cluster") return PriorPsi::cluster();
  if (variant == "disjoint") return PriorPsi::disjoint();
  if (variant == "bounded") {
    return PriorPsi::bounded(required(j, "l", "psi").get<int>(), required(j, "u", "psi").get<int>());
  }
  if (variant == "explicit") {
    std::vector<UnitSet> sets;
    for (const auto& s : required(j, "sets", "psi")) sets.push_back(unit_set_from(s, spec));
    return PriorPsi::explicit_sets(std::move(sets));
  }
  bad("unknown psi variant '" + variant + "'");
}

std::vector<SourceSet> parse_subsystems(const json& v, const ProblemSpec& spec) {
  if (v.is_string()) {
    const auto name = v.get<std::string>();
    if (name == "unit") return unit_subsystems(spec.units);
    if (name == "full") return full_subsystems(spec.units, spec.K);
    bad("unknown subsystem shorthand '" + name + "'");
  }
  if (v.is_object()) return padded_subsystems(spec.units, spec.K, required(v, "size", "subsystems").get<int>());
  if (!v.is_array() || v.size() != spec.units.size()) bad("subsystems need one source set per unit");
  std::vector<SourceSet> out;
  for (const auto& x : v) out.push_back(source_set(x, spec.K));
  return out;
}

TiePriority parse_tie(const std::string& name) {
  if (name == "null_first") return TiePriority::null_first;
  if (name == "signal_first") return TiePriority::signal_first;
  bad("unknown tie priority '" + name + "'");
}

RuleChoice parse_rule(const std::string& name) {
  if (name == "auto") return RuleChoice::automatic;
  if (name == "generic") return RuleChoice::generic;
  if (name == "fast") return RuleChoice::fast;
  bad("unknown rule choice '" + name + "'");
}

void apply_test(const json& t, VariantConfig& v) {
  if (t.contains("kind")) v.kind = test_kind_from_string(t.at("kind").get<std::string>());
  if (t.contains("tie")) v.tie = parse_tie(t.at("tie").get<std::string>());
  if (t.contains("rule")) v.rule = parse_rule(t.at("rule").get<std::string>());
}

void apply_subsystems(const json& s, ProblemSpec& spec) {
  if (s.contains("det")) spec.det_subsystems = parse_subsystems(s.at("det"), spec);
  if (s.contains("iso")) spec.iso_subsystems = parse_subsystems(s.at("iso"), spec);
}

ErrorLevels parse_level_entry(const json& v) {
  ErrorLevels l;
  if (v.is_number()) {
    l.alpha = l.beta = l.gamma = l.delta = v.get<double>();
    return l;
  }
  if (!v.is_object()) bad("a level entry is a number or an object");
  if (v.contains("alpha")) l.alpha = v.at("alpha").get<double>();
  if (v.contains("beta")) l.beta = v.at("beta").get<double>();
  if (v.contains("gamma")) l.gamma = v.at("gamma").get<double>();
  if (v.contains("delta")) l.delta = v.at("delta").get<double>();
  return l;
}

Config parse(const json& root, const std::string& path) {
  Config cfg;
  cfg.path = path;
  if (!root.is_object()) bad("config must be a JSON object");

  const auto& problem = required(root, "problem", "config");
  ProblemSpec base;
  base.K = required(problem, "K", "problem").get<int>();
  if (base.K < 1 || base.K > 24) bad("K must lie in 1..24");
  const auto kind = required(problem, "kind", "problem").get<std::string>();
  if (kind == "mean_shift") {
    base.kind = ProblemKind::mean_shift;
  } else if (kind == "dependence") {
    base.kind = ProblemKind::dependence;
  } else {
    bad("unknown problem kind '" + kind + "'");
  }
  base.units = parse_units(problem, base.K, base.kind);
  const auto& grid = required(problem, "grid", "problem");
  const std::size_t K = static_cast<std::size_t>(base.K);
  base.grid.means = grid.contains("means") ? per_entry(grid.at("means"), K, "grid.means")
                                           : std::vector<std::vector<double>>(K, {0.0});
  base.grid.variances = grid.contains("variances") ? per_entry(grid.at("variances"), K, "grid.variances")
                                                   : std::vector<std::vector<double>>(K, {1.0});
  base.grid.correlations = grid.contains("correlations")
                               ? per_entry(grid.at("correlations"), K * (K - 1) / 2, "grid.correlations")
                               : std::vector<std::vector<double>>(K * (K - 1) / 2, {0.0});

  base.psi = root.contains("psi") ? parse_psi(root.at("psi"), base) : PriorPsi::powerset();
  base.det_subsystems = unit_subsystems(base.units);
  base.iso_subsystems = unit_subsystems(base.units);
  if (root.contains("subsystems")) apply_subsystems(root.at("subsystems"), base);

  VariantConfig top;
  top.name = "default";
  top.spec = base;
  if (root.contains("test")) apply_test(root.at("test"), top);

  if (root.contains("variants")) {
    const auto& vs = root.at("variants");
    if (!vs.is_array() || vs.empty()) bad("variants must be a nonempty list");
    for (const auto& v : vs) {
      VariantConfig var = top;
      var.name = required(v, "name", "variant").get<std::string>();
      if (v.contains("psi")) var.spec.psi = parse_psi(v.at("psi"), var.spec);
      if (v.contains("subsystems")) apply_subsystems(v.at("subsystems"), var.spec);
      if (v.contains("test")) apply_test(v.at("test"), var);
      cfg.variants.push_back(std::move(var));
    }
  } else {
    cfg.variants.push_back(top);
  }
  for (std::size_t i = 0; i < cfg.variants.size(); ++i) {
    for (std::size_t j = i + 1; j < cfg.variants.size(); ++j) {
      if (cfg.variants[i].name == cfg.variants[j].name) bad("variant name '" + cfg.variants[i].name + "' repeats");
    }
    validate(cfg.variants[i].spec);
  }

  if (root.contains("truth")) {
    const auto& t = root.at("truth");
    GaussianGlobal law;
    auto mean = numbers(required(t, "mean", "truth"), "truth.mean");
    if (mean.size() != K) bad("truth.mean needs K entries");
    law.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), base.K);
    const auto& cov = required(t, "cov", "truth");
    if (!cov.is_array() || cov.size() != K) bad("truth.cov must be a K x K matrix");
    law.cov.resize(base.K, base.K);
    for (std::size_t i = 0; i < K; ++i) {
      auto row = numbers(cov.at(i), "truth.cov");
      if (row.size() != K) bad("truth.cov must be a K x K matrix");
      for (std::size_t j = 0; j < K; ++j) law.cov(i, j) = row[j];
    }
    cfg.truth = law;
  }

  if (root.contains("levels")) {
    const auto& l = root.at("levels");
    if (l.is_object() && l.contains("sweep")) {
      const auto& s = l.at("sweep");
      if (!s.is_array() || s.empty()) bad("levels.sweep must be a nonempty list");
      for (const auto& x : s) cfg.levels.push_back(parse_level_entry(x));
      cfg.sweep = true;
    } else {
      cfg.levels.push_back(parse_level_entry(l));
    }
  } else {
    cfg.levels.push_back(ErrorLevels{0.01, 0.01, 0.01, 0.01});
  }
  for (const auto& l : cfg.levels) {
    for (double v : {l.alpha, l.beta, l.gamma, l.delta}) {
      if (!(v > 0.0 && v <= 1.0)) throw invalid_level("levels must lie in (0, 1]");
    }
  }

  if (root.contains("mc")) {
    const auto& mc = root.at("mc");
    if (mc.contains("reps")) cfg.mc.reps = mc.at("reps").get<long>();
    if (mc.contains("seed")) cfg.mc.seed = mc.at("seed").get<std::uint64_t>();
    if (mc.contains("max_n")) cfg.mc.max_n = mc.at("max_n").get<long>();
    if (mc.contains("threads")) cfg.mc.threads = mc.at("threads").get<int>();
  }
  if (cfg.mc.reps < 1) bad("mc.reps must be at least 1");
  if (cfg.mc.max_n < 1) bad("mc.max_n must be at least 1");
  return cfg;
}

}  // namespace

Config parse_config(const std::string& json_text, const std::string& path) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw invalid_config(std::string("malformed JSON: ") + e.what());
  }
  try {
    return parse(root, path);
  } catch (const json::exception& e) {
    throw invalid_config(std::string("bad field type: ") + e.what());
  }
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw invalid_config("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

ExperimentConfig experiment_config(const Config& config, const VariantConfig& variant, const ErrorLevels& levels) {
  if (!config.truth) throw invalid_config("config has no truth");
  ExperimentConfig ex;
  ex.variant = variant.name;
  ex.spec = variant.spec;
  ex.truth = *config.truth;
  ex.kind = variant.kind;
  ex.levels = levels;
  ex.replications = config.mc.reps;
  ex.seed = config.mc.seed;
  ex.max_n = config.mc.max_n;
  ex.threads = config.mc.threads;
  ex.tie = variant.tie;
  ex.rule = variant.rule;
  return ex;
}

}  // namespace seqdai
