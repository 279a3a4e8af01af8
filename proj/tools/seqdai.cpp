#include <seqdai/config.hpp>
#include <seqdai/divergence.hpp>
#include <seqdai/errors.hpp>
#include <seqdai/oracle.hpp>
#include <seqdai/rules.hpp>
#include <seqdai/simulate.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#ifndef SEQDAI_VERSION
#define SEQDAI_VERSION "0.0.0"
#endif

namespace {

using namespace seqdai;
using nlohmann::json;

constexpr int exit_ok = 0;
constexpr int exit_usage = 1;
constexpr int exit_config = 2;
constexpr int exit_numerical = 3;
constexpr int exit_property = 4;

struct Options {
  std::string config;
  std::string out;
  std::optional<long> reps;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<long> max_n;
  long paths = 100;
  std::string command;
  std::string ext;
};

Config load(const Options& o) {
  Config cfg = load_config(o.config);
  if (o.reps) cfg.mc.reps = *o.reps;
  if (o.seed) cfg.mc.seed = *o.seed;
  if (o.max_n) cfg.mc.max_n = *o.max_n;
  if (o.threads) {
    cfg.mc.threads = *o.threads;
  } else if (const char* env = std::getenv("SEQDAI_THREADS")) {
    try {
      cfg.mc.threads = std::stoi(env);
    } catch (const std::exception&) {
      throw invalid_config("SEQDAI_THREADS is not an integer");
    }
  }
  if (cfg.mc.reps < 1) throw invalid_config("reps must be at least 1");
  return cfg;
}

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --out names a file, or a directory (existing, or given with a trailing slash)
// that receives <command><ext>. The manifest goes next to the output.
std::filesystem::path output_path(const Options& o) {
  std::filesystem::path p(o.out);
  if (std::filesystem::is_directory(p) || o.out.back() == '/') {
    std::filesystem::create_directories(p);
    return p / (o.command + o.ext);
  }
  return p;
}

void emit(const Options& o, const Config& cfg, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  const auto path = output_path(o);
  {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw invalid_config("cannot write " + path.string());
    f << text;
  }
  json manifest = {{"command", o.command},
                   {"config", std::filesystem::absolute(cfg.path).string()},
                   {"seed", cfg.mc.seed},
                   {"reps", cfg.mc.reps},
                   {"max_n", cfg.mc.max_n},
                   {"version", SEQDAI_VERSION},
                   {"timestamp", utc_timestamp()},
                   {"outputs", json::array({path.string()})}};
  if (o.command == "equiv-check") manifest["paths"] = o.paths;
  const auto mpath = path.string() + ".manifest.json";
  std::ofstream m(mpath);
  if (!m) throw invalid_config("cannot write " + mpath);
  m << manifest.dump(2) << '\n';
}

double finite_or_nan(double v) { return std::isfinite(v) ? v : std::nan(""); }

json number(double v) {
  if (std::isfinite(v)) return v;
  return format_number(v);
}

int cmd_validate(const Options& o) {
  Config cfg = load(o);
  for (const auto& v : cfg.variants) {
    check_kind(v.spec, v.kind);
    if (cfg.truth) {
      UnitSet A = signal_set(*cfg.truth, v.spec);
      if (!psi_contains(v.spec.psi, A, v.spec.units)) throw invalid_model("the true law is not in P_Psi");
      if (!is_positive_definite(cfg.truth->cov)) throw invalid_model("truth covariance is not positive definite");
    }
  }
  std::ostringstream os;
  os << "ok: " << cfg.variants.size() << " variant(s), K=" << cfg.variants.front().spec.K << ", "
     << cfg.variants.front().spec.unit_count() << " units\n";
  emit(o, cfg, os.str());
  return exit_ok;
}

int cmd_enumerate(const Options& o) {
  Config cfg = load(o);
  std::ostringstream os;
  os << "variant,unit,a,b,c,d\n";
  for (const auto& v : cfg.variants) {
    Enumerator en(v.spec);
    FamilyCounts mx;
    for (int e = 0; e < v.spec.unit_count(); ++e) {
      auto c = family_counts(en, e);
      os << v.name << ',' << '"' << to_string(v.spec.units[e]) << '"' << ',' << c.a << ',' << c.b << ',' << c.c << ','
         << c.d << '\n';
      mx.a = std::max(mx.a, c.a);
      mx.b = std::max(mx.b, c.b);
      mx.c = std::max(mx.c, c.c);
      mx.d = std::max(mx.d, c.d);
    }
    os << v.name << ",max," << mx.a << ',' << mx.b << ',' << mx.c << ',' << mx.d << '\n';
  }
  emit(o, cfg, os.str());
  return exit_ok;
}

int cmd_calibrate(const Options& o) {
  Config cfg = load(o);
  std::ostringstream os;
  os << "variant,alpha,beta,gamma,delta,logA,logB,logC,logD\n";
  for (const auto& v : cfg.variants) {
    Enumerator en(v.spec);
    for (const auto& l : cfg.levels) {
      auto th = calibrate(l, en, v.kind);
      os << v.name << ',' << format_number(l.alpha) << ',' << format_number(l.beta) << ',' << format_number(l.gamma)
         << ',' << format_number(l.delta) << ',' << format_number(th.logA) << ',' << format_number(th.logB) << ','
         << format_number(th.logC) << ',' << format_number(th.logD) << '\n';
    }
  }
  emit(o, cfg, os.str());
  return exit_ok;
}

int cmd_divergence(const Options& o) {
  Config cfg = load(o);
  if (!cfg.truth) throw invalid_config("divergence needs a truth");
  const auto& P = *cfg.truth;
  json out = json::object();
  out["variants"] = json::array();
  for (const auto& v : cfg.variants) {
    Enumerator en(v.spec);
    const auto& spec = en.spec();
    SourceSet all(spec.K);
    for (int k = 0; k < spec.K; ++k) all[k] = k;
    auto full = class_divergences(P, en, all);
    json units = json::array();
    for (int e = 0; e < spec.unit_count(); ++e) {
      units.push_back({{"unit", to_string(spec.units[e])},
                       {"null_at", number(full.null_at[e])},
                       {"signal_at", number(full.signal_at[e])}});
    }
    auto cond = check_optimality_conditions(P, en);
    json fo = json::array();
    for (const auto& l : cfg.levels) {
      json row = {{"alpha", l.alpha}, {"beta", l.beta}, {"gamma", l.gamma}, {"delta", l.delta}};
      try {
        auto ess = first_order_ess(P, en, l, v.kind);
        row["value"] = ess.value;
        row["upper"] = ess.upper;
        row["regime"] = ess.regime;
        row["label"] = ess.label();
      } catch (const degenerate_problem& e) {
        row["error"] = e.what();
      }
      fo.push_back(row);
    }
    json are = json::object();
    for (auto r : {AreRegime::gamma_fastest, AreRegime::delta_fastest, AreRegime::alpha_fastest, AreRegime::null}) {
      for (bool limit : {false, true}) {
        const std::string key = to_string(r) + (limit ? "_limit" : "");
        try {
          are[key] = are_bounds(P, spec, r, limit);
        } catch (const unsupported& e) {
          are[key] = std::string("n/a: ") + e.what();
        }
      }
    }
    out["variants"].push_back({{"name", v.name},
                               {"test", to_string(v.kind)},
                               {"truth_signals", to_string(signal_set(P, spec), spec.units)},
                               {"global_null", number(full.global_null)},
                               {"other_signal_sets", number(full.other_signal_sets)},
                               {"units", units},
                               {"conditions",
                                {{"P1", cond.p1}, {"P2", cond.p2}, {"PminusP0", cond.p_minus_p0}, {"P0", cond.p0}}},
                               {"first_order", fo},
                               {"are_bounds", are}});
  }
  emit(o, cfg, out.dump(2) + "\n");
  return exit_ok;
}

void warn_nostop(const std::vector<Aggregate>& rows) {
  for (const auto& r : rows) {
    if (r.nostop > 0) {
      std::cerr << "warning: " << r.variant << " at alpha=" << format_number(r.levels.alpha) << ": " << r.nostop
                << " trial(s) reached max_n without stopping; excluded from ESS\n";
    }
  }
}

int cmd_simulate(const Options& o, bool sweep_all) {
  Config cfg = load(o);
  std::vector<Aggregate> rows;
  for (const auto& v : cfg.variants) {
    if (sweep_all) {
      auto r = sweep(experiment_config(cfg, v, cfg.levels.front()), cfg.levels);
      rows.insert(rows.end(), r.begin(), r.end());
    } else {
      rows.push_back(run_experiment(experiment_config(cfg, v, cfg.levels.front())));
    }
  }
  sort_rows(rows);
  warn_nostop(rows);
  std::ostringstream os;
  write_csv(os, rows);
  emit(o, cfg, os.str());
  return exit_ok;
}

int cmd_equiv(const Options& o) {
  Config cfg = load(o);
  if (!cfg.truth) throw invalid_config("equiv-check needs a truth to sample from");
  std::ostringstream os;
  long mismatches = 0;
  int checked = 0;
  for (const auto& v : cfg.variants) {
    try {
      FastIndependentRule probe(v.spec, v.kind);
    } catch (const unsupported& e) {
      os << v.name << ": skipped (" << e.what() << ")\n";
      continue;
    }
    Enumerator en(v.spec);
    for (const auto& l : cfg.levels) {
      auto th = calibrate(l, en, v.kind);
      auto rep = equivalence_harness(v.spec, v.kind, th, *cfg.truth, o.paths, cfg.mc.seed, cfg.mc.max_n);
      ++checked;
      mismatches += rep.mismatches;
      os << v.name << " alpha=" << format_number(l.alpha) << " [" << rep.form << "]: " << rep.paths << " paths, "
         << rep.mismatches << " mismatches\n";
      for (const auto& d : rep.details) os << "  " << d << '\n';
    }
  }
  emit(o, cfg, os.str());
  if (checked == 0) {
    std::cerr << "error: no variant admits a closed-form rule\n";
    return exit_config;
  }
  return mismatches == 0 ? exit_ok : exit_property;
}

struct CheckLog {
  std::ostringstream os;
  int failures = 0;

  void check(bool ok, const std::string& name, const std::string& detail = "") {
    os << (ok ? "PASS " : "FAIL ") << name;
    if (!ok && !detail.empty()) os << ": " << detail;
    os << '\n';
    failures += ok ? 0 : 1;
  }
};

GaussianGlobal random_pattern_law(const Enumerator& en, const SourceSet& all, std::mt19937_64& rng) {
  const auto& ps = en.patterns(all);
  std::uniform_int_distribution<std::size_t> pick(0, ps.size() - 1);
  return en.pattern_law(all, ps[pick(rng)]);
}

int cmd_oracle(const Options& o) {
  Config cfg = load(o);
  CheckLog log;
  std::mt19937_64 rng(cfg.mc.seed);
  for (const auto& v : cfg.variants) {
    Enumerator en(v.spec);
    const auto& spec = en.spec();
    SourceSet all(spec.K);
    for (int k = 0; k < spec.K; ++k) all[k] = k;

    const double space = oracle::global_space_size(spec);
    if (space <= 1e6) {
      bool ok = true;
      std::string detail;
      for (int e = 0; e < spec.unit_count() && ok; ++e) {
        const std::pair<HypothesisClass, SourceSet> cases[] = {
            {HypothesisClass::global_null(), spec.det_subsystems[e]},
            {HypothesisClass::signal_at(e), spec.det_subsystems[e]},
            {HypothesisClass::null_at(e), spec.iso_subsystems[e]},
            {HypothesisClass::signal_at(e), spec.iso_subsystems[e]},
            {HypothesisClass::null_at(e), all},
            {HypothesisClass::signal_at(e), all}};
        for (const auto& [cls, s] : cases) {
          if (!oracle::same_laws(en.enumerate(cls, s).laws, oracle::restricted_family(spec, cls, s))) {
            ok = false;
            detail = "unit " + to_string(spec.units[e]) + " on " + to_string(s);
            break;
          }
        }
      }
      log.check(ok, v.name + ": restricted families equal brute force", detail);
    } else {
      log.os << "SKIP " << v.name << ": brute-force space " << space << " exceeds 10^6\n";
    }

    if (cfg.truth) {
      const auto& P = *cfg.truth;
      auto full = class_divergences(P, en, all);
      bool ok = true;
      std::string detail;
      for (int e = 0; e < spec.unit_count() && ok; ++e) {
        auto fam = en.enumerate(HypothesisClass::null_at(e), all).laws;
        double ref = fam.empty() ? INFINITY : oracle::min_kl(P, fam);
        if (!(std::abs(finite_or_nan(ref) - finite_or_nan(full.null_at[e])) <= 1e-9 || ref == full.null_at[e])) {
          ok = false;
          detail = "null class of unit " + to_string(spec.units[e]);
        }
      }
      log.check(ok, v.name + ": class divergences equal direct minimisation", detail);
    }

    // information-number lemmas on random pattern laws
    int mono_fail = 0, add_fail = 0;
    for (int t = 0; t < 200; ++t) {
      auto P = random_pattern_law(en, all, rng);
      auto Q = random_pattern_law(en, all, rng);
      SourceSet s1, s2;
      for (int k = 0; k < spec.K; ++k) {
        int r = static_cast<int>(rng() % 3);
        if (r >= 1) s2.push_back(k);
        if (r == 2) s1.push_back(k);
      }
      if (s1.empty()) s1.push_back(s2.empty() ? 0 : s2.front());
      if (s2.empty()) s2.push_back(s1.front());
      if (kl_gaussian(P, Q, s1) > kl_gaussian(P, Q, s2) + 1e-12) ++mono_fail;
      if (spec.K >= 2) {
        SourceSet a, b;
        for (int k = 0; k < spec.K; ++k) (rng() % 2 ? a : b).push_back(k);
        if (a.empty() || b.empty()) continue;
        auto block = [&](GaussianGlobal L) {
          for (int i : a) {
            for (int j : b) L.cov(i, j) = L.cov(j, i) = 0.0;
          }
          return L;
        };
        auto Pb = block(P), Qb = block(Q);
        double lhs = kl_gaussian(Pb, Qb, all);
        double rhs = kl_gaussian(Pb, Qb, a) + kl_gaussian(Pb, Qb, b);
        if (std::abs(lhs - rhs) > 1e-10 * std::max(1.0, std::abs(lhs))) ++add_fail;
      }
    }
    log.check(mono_fail == 0, v.name + ": KL monotone under subsystem inclusion",
              std::to_string(mono_fail) + " violations");
    log.check(add_fail == 0, v.name + ": KL additive over independent blocks",
              std::to_string(add_fail) + " violations");
  }

  int match_fail = 0;
  for (int t = 0; t < 50; ++t) {
    const int K = 2 + static_cast<int>(rng() % 7);
    std::vector<std::pair<Unit, double>> w;
    std::vector<std::pair<SourceSet, double>> ref;
    std::uniform_real_distribution<double> weight(0.01, 2.0);
    for (const auto& u : pair_units(K)) {
      if (rng() % 2) continue;
      double x = weight(rng);
      w.emplace_back(u, x);
      ref.emplace_back(u.members, x);
    }
    if (std::abs(max_disjoint_logproduct(w) - oracle::max_disjoint_weight(ref)) > 1e-12) ++match_fail;
  }
  log.check(match_fail == 0, "disjoint-pair maximisation equals exhaustive search",
            std::to_string(match_fail) + " cases");

  emit(o, cfg, log.os.str());
  return log.failures == 0 ? exit_ok : exit_property;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential joint detection and isolation of signals across dependent Gaussian streams"};
  app.set_version_flag("--version", SEQDAI_VERSION);
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "JSON configuration file")->required();
    sub->add_option("--out", opts.out, "Output file or directory; a manifest is written next to the output");
  };
  auto add_mc = [&](CLI::App* sub) {
    sub->add_option("--reps", opts.reps, "Monte Carlo replications");
    sub->add_option("--seed", opts.seed, "Master seed");
    sub->add_option("--threads", opts.threads, "Worker threads (0 = all cores); overrides SEQDAI_THREADS");
    sub->add_option("--max-n", opts.max_n, "Horizon per trial");
  };

  auto* validate_cmd = app.add_subcommand("validate", "Parse the config and check the model");
  auto* enumerate_cmd = app.add_subcommand("enumerate", "Family counts per unit");
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Thresholds per variant and level");
  auto* divergence_cmd = app.add_subcommand("divergence", "Information numbers, first-order ESS, ARE bounds");
  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo run at the first level");
  auto* sweep_cmd = app.add_subcommand("sweep", "Monte Carlo CSV over the level grid");
  auto* equiv_cmd = app.add_subcommand("equiv-check", "Closed-form versus generic rules on shared paths");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Brute-force invariant suite");
  for (auto* sub : {validate_cmd, enumerate_cmd, calibrate_cmd, divergence_cmd, simulate_cmd, sweep_cmd, equiv_cmd,
                    oracle_cmd}) {
    add_common(sub);
  }
  for (auto* sub : {simulate_cmd, sweep_cmd}) add_mc(sub);
  equiv_cmd->add_option("--paths", opts.paths, "Paths per variant and level")->check(CLI::PositiveNumber);
  equiv_cmd->add_option("--seed", opts.seed, "Master seed");
  equiv_cmd->add_option("--max-n", opts.max_n, "Horizon per path");
  oracle_cmd->add_option("--seed", opts.seed, "Seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  for (auto* sub : app.get_subcommands()) {
    opts.command = sub->get_name();
    const bool csv = sub == enumerate_cmd || sub == calibrate_cmd || sub == simulate_cmd || sub == sweep_cmd;
    opts.ext = sub == divergence_cmd ? ".json" : csv ? ".csv" : ".txt";
  }

  try {
    if (validate_cmd->parsed()) return cmd_validate(opts);
    if (enumerate_cmd->parsed()) return cmd_enumerate(opts);
    if (calibrate_cmd->parsed()) return cmd_calibrate(opts);
    if (divergence_cmd->parsed()) return cmd_divergence(opts);
    if (simulate_cmd->parsed()) return cmd_simulate(opts, false);
    if (sweep_cmd->parsed()) return cmd_simulate(opts, true);
    if (equiv_cmd->parsed()) return cmd_equiv(opts);
    if (oracle_cmd->parsed()) return cmd_oracle(opts);
  } catch (const invalid_config& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const invalid_model& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const invalid_subsystem& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const invalid_level& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const unsupported& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  }
  return exit_usage;
}
