// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "support.hpp"

#include <seqdai/config.hpp>
#include <seqdai/divergence.hpp>
#include <seqdai/errors.hpp>
#include <seqdai/oracle.hpp>
#include <seqdai/simulate.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#ifndef SEQDAI_CONFIG_DIR
#define SEQDAI_CONFIG_DIR "configs"
#endif

using namespace seqdai;
using namespace seqdai::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail = what;
    pass = false;
  }
};

ErrorLevels all_levels(double v) { return {v, v, v, v}; }

int worker_threads() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Outcome family_counts_criterion() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  for (const char* file : {"study1_k7.json", "study2_k3.json"}) {
    auto cfg = load_config(std::string(SEQDAI_CONFIG_DIR) + "/" + file);
    const bool k7 = cfg.variants.front().spec.K == 7;
    const std::map<std::string, FamilyCounts> expected =
        k7 ? std::map<std::string, FamilyCounts>{{"size3_powerset", {9, 14, 1, 14}}, {"size3_cluster", {5, 6, 1, 6}}}
           : std::map<std::string, FamilyCounts>{{"size3_powerset", {8, 14, 1, 14}}, {"size3_cluster", {4, 6, 1, 6}}};
    for (const auto& [name, want] : expected) {
      auto it = std::find_if(cfg.variants.begin(), cfg.variants.end(), [&](const auto& v) { return v.name == name; });
      if (it == cfg.variants.end()) {
        o.require(false, std::string(file) + " lacks variant " + name);
        continue;
      }
      Enumerator en(it->spec);
      FamilyCounts best;
      for (int e = 0; e < en.spec().unit_count(); ++e) {
        auto c = family_counts(en, e);
        best = {std::max(best.a, c.a), std::max(best.b, c.b), std::max(best.c, c.c), std::max(best.d, c.d)};
      }
      o.require(best == want, std::string(file) + " " + name + " counts differ");
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.require(secs < 10.0, fmt("took %.1f s", secs));
  if (o.pass) o.detail = fmt("4 rows exact in %.2f s", secs);
  return o;
}

Outcome closed_form_criterion() {
  Outcome o;
  double worst = 0.0;
  auto pair = [](double r) {
    Eigen::Matrix2d c;
    c << 1.0, r, r, 1.0;
    return GaussianGlobal{Eigen::Vector2d::Zero(), c};
  };
  for (int i = 1; i <= 9; ++i) {
    const double r = 0.1 * i;
    worst = std::max(worst, std::abs(kl_gaussian(pair(r), pair(0.0)) + std::log(std::sqrt(1.0 - r * r))));
    worst = std::max(worst, std::abs(kl_gaussian(pair(0.0), pair(r)) -
                                     (std::log(std::sqrt(1.0 - r * r)) + r * r / (1.0 - r * r))));
  }
  for (double mu : {-3.0, -1.0, -0.25, 0.1, 0.5, 1.0, 2.0, 5.0}) {
    for (double sigma : {0.1, 0.5, 1.0, 2.0, 10.0}) {
      const Eigen::MatrixXd v = Eigen::MatrixXd::Constant(1, 1, sigma * sigma);
      const double kl = kl_gaussian({Eigen::VectorXd::Constant(1, mu), v}, {Eigen::VectorXd::Zero(1), v});
      worst = std::max(worst, std::abs(kl - mu * mu / (2.0 * sigma * sigma)));
    }
  }
  o.require(worst <= 1e-10, fmt("max deviation %.3g", worst));
  if (o.pass) o.detail = fmt("max deviation %.2g over 18 correlation and 40 mean cases", worst);
  return o;
}

GaussianGlobal random_grid_law(int K, std::mt19937_64& rng) {
  const std::vector<double> means{0.0, 0.5, -1.0}, vars{0.5, 1.0, 2.0}, corrs{0.0, 0.3, -0.3, 0.6};
  auto pick = [&](const std::vector<double>& g) {
    return g[std::uniform_int_distribution<std::size_t>(0, g.size() - 1)(rng)];
  };
  while (true) {
    GaussianGlobal L{Eigen::VectorXd(K), Eigen::MatrixXd(K, K)};
    for (int k = 0; k < K; ++k) {
      L.mean(k) = pick(means);
      L.cov(k, k) = pick(vars);
    }
    for (int i = 0; i < K; ++i) {
      for (int j = i + 1; j < K; ++j) L.cov(i, j) = L.cov(j, i) = pick(corrs) * std::sqrt(L.cov(i, i) * L.cov(j, j));
    }
    if (is_positive_definite(L.cov)) return L;
  }
}

Outcome lemma_criterion() {
  Outcome o;
  std::mt19937_64 rng(2023);
  const int K = 6;
  double worst_mono = 0.0, worst_add = 0.0;
  for (int t = 0; t < 200; ++t) {
    auto P = random_grid_law(K, rng), Q = random_grid_law(K, rng);
    SourceSet s1, s2;
    for (int k = 0; k < K; ++k) {
      const int r = std::uniform_int_distribution<int>(0, 2)(rng);
      if (r >= 1) s2.push_back(k);
      if (r == 2) s1.push_back(k);
    }
    if (s2.empty()) s2.push_back(0);
    if (s1.empty()) s1.push_back(s2.front());
    worst_mono = std::max(worst_mono, kl_gaussian(P, Q, s1) - kl_gaussian(P, Q, s2));

    // independent blocks {0..split-1} and {split..K-1}
    const int split = std::uniform_int_distribution<int>(1, K - 1)(rng);
    SourceSet b1, b2, all;
    for (int k = 0; k < K; ++k) {
      (k < split ? b1 : b2).push_back(k);
      all.push_back(k);
    }
    for (auto* L : {&P, &Q}) {
      for (int i : b1) {
        for (int j : b2) L->cov(i, j) = L->cov(j, i) = 0.0;
      }
    }
    worst_add = std::max(worst_add, std::abs(kl_gaussian(P, Q, all) - kl_gaussian(P, Q, b1) - kl_gaussian(P, Q, b2)));
  }
  o.require(worst_mono <= 1e-10, fmt("monotonicity violated by %.3g", worst_mono));
  o.require(worst_add <= 1e-10, fmt("additivity off by %.3g", worst_add));
  if (o.pass) {
    o.detail = fmt("200 instances, worst monotonicity excess %.2g, additivity error %.2g", worst_mono, worst_add);
  }
  return o;
}

Outcome equivalence_criterion() {
  Outcome o;
  struct Case {
    const char* name;
    PriorPsi psi;
    TestKind kind;
    bool det_full, iso_full;
  };
  const std::vector<Case> cases{
      {"gap rule l=u", PriorPsi::bounded(2, 2), TestKind::isolation, false, true},
      {"gap-intersection l<u<K", PriorPsi::bounded(1, 3), TestKind::isolation, false, true},
      {"gap-intersection u=K", PriorPsi::bounded(1, 4), TestKind::isolation, false, true},
      {"isolation, unit subsystems", PriorPsi::bounded(1, 2), TestKind::isolation, false, false},
      {"detection rule l=0", PriorPsi::bounded(0, 2), TestKind::detection, false, false},
      {"detection rule l=0, full", PriorPsi::bounded(0, 2), TestKind::detection, true, true},
      {"joint, full subsystems", PriorPsi::bounded(0, 2), TestKind::joint, true, true},
      {"intersection rule u=K", PriorPsi::bounded(0, 4), TestKind::fwer, false, false},
      {"intersection rule, full isolation", PriorPsi::bounded(0, 2), TestKind::fwer, false, true},
  };
  long paths = 0, mismatches = 0;
  std::mt19937_64 rng(99);
  for (const auto& c : cases) {
    auto spec = mean_problem(4, c.psi, c.det_full, c.iso_full);
    Enumerator en(spec);
    // truth with max(l, 1) signals, capped by u
    const int n_sig = std::min(std::max(c.psi.l, 1), c.psi.u);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    for (int k = 0; k < n_sig; ++k) mean(k) = k % 2 ? 0.5 : 1.0;
    const GaussianGlobal truth{mean, Eigen::MatrixXd::Identity(4, 4)};
    for (double level : {0.1, 0.01}) {
      try {
        auto rep = equivalence_harness(spec, c.kind, calibrate(all_levels(level), en, c.kind), truth, 100,
                                       rng());
        paths += rep.paths;
        mismatches += rep.mismatches;
        o.require(rep.mismatches == 0, std::string(c.name) + ": " + std::to_string(rep.mismatches) + " mismatches");
      } catch (const error& e) {
        o.require(false, std::string(c.name) + ": " + e.what());
      }
    }
  }

  // matching search: DP against exhaustive search over disjoint pair families, K <= 8
  long matchings = 0;
  for (int K = 2; K <= 8; ++K) {
    const auto units = pair_units(K);
    std::normal_distribution<double> w(0.0, 2.0);
    for (int t = 0; t < 50; ++t) {
      std::vector<double> local(units.size());
      for (auto& v : local) v = w(rng);
      for (std::size_t e = 0; e < units.size(); ++e) {
        std::vector<std::pair<SourceSet, double>> rest;
        for (std::size_t f = 0; f < units.size(); ++f) {
          const auto& a = units[e].members;
          const auto& b = units[f].members;
          const bool disjoint = a[0] != b[0] && a[0] != b[1] && a[1] != b[0] && a[1] != b[1];
          if (disjoint && local[f] > 0.0) rest.emplace_back(b, local[f]);
        }
        const double want = local[e] + oracle::max_disjoint_weight(rest);
        const double got = disjoint_detection_llr(units, local, static_cast<int>(e));
        ++matchings;
        o.require(std::abs(got - want) <= 1e-12, fmt("matching differs at K=%g", K));
      }
    }
  }
  // and against the generic detection statistic on sampled data
  for (int K : {3, 4}) {
    auto spec = dependence_study(K, PriorPsi::disjoint(), K);
    StatisticEngine engine(spec);
    GaussianGlobal truth{Eigen::VectorXd::Zero(K), Eigen::MatrixXd::Identity(K, K)};
    truth.cov(0, 1) = truth.cov(1, 0) = 0.7;
    auto path = gaussian_path(truth, 100, rng);
    SufficientStats st(K);
    for (long n = 0; n < path.cols(); ++n) {
      st.add(path.col(n));
      auto snap = engine.snapshot(st);
      for (int e = 0; e < spec.unit_count(); ++e) {
        const double want = snap.det[e];
        o.require(std::abs(disjoint_detection_llr(spec.units, snap.local, e) - want) <=
                      1e-9 * std::max(1.0, std::abs(want)),
                  fmt("disjoint detection statistic differs from generic at K=%g", K));
      }
    }
  }
  if (o.pass) {
    std::ostringstream os;
    os << cases.size() << " configurations x 2 levels, " << paths << " paths, " << mismatches << " mismatches; "
       << matchings << " matching checks for K <= 8";
    o.detail = os.str();
  }
  return o;
}

struct StudyRows {
  std::string file;
  std::vector<Aggregate> rows;
};

std::vector<StudyRows> run_studies() {
  std::vector<StudyRows> out;
  for (const char* file : {"study1_k7.json", "study2_k3.json"}) {
    auto cfg = load_config(std::string(SEQDAI_CONFIG_DIR) + "/" + file);
    cfg.mc.reps = 2000;
    cfg.mc.threads = worker_threads();
    StudyRows s{file, {}};
    for (const auto& v : cfg.variants) {
      auto r = sweep(experiment_config(cfg, v, cfg.levels.front()), cfg.levels);
      s.rows.insert(s.rows.end(), r.begin(), r.end());
    }
    out.push_back(std::move(s));
  }
  return out;
}

Outcome error_control_criterion(const std::vector<StudyRows>& studies) {
  Outcome o;
  int checked = 0;
  for (const auto& s : studies) {
    for (const auto& a : s.rows) {
      if (a.levels.alpha < 0.01 - 1e-15) continue;
      o.require(a.reps == 2000, "replication count");
      o.require(a.nostop == 0, s.file + " " + a.variant + ": trials without a stop");
      const std::pair<Rate, double> rates[] = {{a.false_alarm, a.levels.alpha},
                                               {a.missed_detection, a.levels.beta},
                                               {a.false_positive, a.levels.gamma},
                                               {a.false_negative, a.levels.delta}};
      for (const auto& [r, target] : rates) {
        ++checked;
        o.require(r.rate <= target + 3.0 * r.se,
                  s.file + " " + a.variant + fmt(": rate %.4g above %.4g + 3 SE", r.rate, target));
      }
    }
  }
  o.require(checked > 0, "no study rows at levels 0.1 and 0.01");
  if (o.pass) o.detail = std::to_string(checked) + " rates within target + 3 SE (2000 reps, levels 0.1 and 0.01)";
  return o;
}

Outcome ratio_criterion(const std::vector<StudyRows>& studies) {
  Outcome o;
  o.require(studies.size() == 2, "study sweep missing");
  std::ostringstream summary;
  for (const auto& s : studies) {
    const bool k7 = s.file.find("k7") != std::string::npos;
    std::map<std::string, std::vector<Aggregate>> by_variant;
    for (const auto& a : s.rows) by_variant[a.variant].push_back(a);
    for (auto& [name, rows] : by_variant) {
      std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.levels.alpha > y.levels.alpha; });
      const bool size3 = name.find("size3") != std::string::npos;
      const bool optimal = k7 || size3;
      const auto& last = rows.back();
      o.require(last.has_first_order, s.file + " " + name + ": no first-order value");
      if (!last.has_first_order) continue;
      o.require(last.first_order.conditions_hold == optimal, s.file + " " + name + ": optimality label disagrees");
      auto se = [](const Aggregate& a) { return a.ess_se / a.first_order.value; };
      if (optimal) {
        for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
          const double slack = 3.0 * std::hypot(se(rows[i]), se(rows[i + 1]));
          o.require(rows[i + 1].ratio <= rows[i].ratio + slack,
                    s.file + " " + name + fmt(": ratio rises from %.4f to %.4f", rows[i].ratio, rows[i + 1].ratio));
        }
        o.require(rows.back().ratio < rows.front().ratio, s.file + " " + name + ": no overall decrease");
      } else {
        o.require(last.ratio - 1.0 > 3.0 * se(last),
                  s.file + " " + name + fmt(": ratio %.4f not above 1 by 3 SE", last.ratio));
      }
      summary << (summary.tellp() > 0 ? "; " : "") << (k7 ? "K7 " : "K3 ") << name << " "
              << fmt("%.3f->%.3f", rows.front().ratio, last.ratio);
    }
  }
  if (o.pass) o.detail = summary.str();
  return o;
}

Outcome are_criterion() {
  Outcome o;
  for (int i = 1; i <= 99; ++i) {
    const double rho = i / 100.0;
    o.require(dependence_are_bound(rho, 2, AreRegime::gamma_fastest) == 1.0, fmt("m=2 bound at rho=%.2f", rho));
    for (int m = 2; m <= 60; ++m) {
      for (auto r : {AreRegime::gamma_fastest, AreRegime::delta_fastest, AreRegime::alpha_fastest}) {
        o.require(dependence_are_bound(rho, m, r) >= 1.0 - 1e-12, fmt("bound below 1 at rho=%.2f m=%g", rho, m));
      }
    }
    for (auto r : {AreRegime::gamma_fastest, AreRegime::delta_fastest}) {
      o.require(dependence_are_bound_limit(rho, r) >= 1.0 - 1e-12, fmt("limit below 1 at rho=%.2f", rho));
    }
  }
  const double independent = std::log(0.3) / std::log(1.0 - 0.49);
  const double got = dependence_are_bound_limit(0.7, AreRegime::gamma_fastest);
  o.require(std::abs(got - independent) <= 1e-10, fmt("limit %.12f vs %.12f", got, independent));

  // anomalous case with independent noise: R^{-1} has unit diagonal
  auto spec = mean_problem(4, PriorPsi::bounded(0, 3), false, false);
  GaussianGlobal P{(Eigen::VectorXd(4) << 1.0, 0.5, 0.0, 0.0).finished(), Eigen::MatrixXd::Identity(4, 4)};
  for (auto r : {AreRegime::gamma_fastest, AreRegime::delta_fastest}) {
    o.require(std::abs(are_bounds(P, spec, r) - 1.0) <= 1e-12, "anomalous bound with identity correlation");
  }
  {
    const double expected = (1.0 + 0.25) / 1.0;
    o.require(std::abs(are_bounds(P, spec, AreRegime::alpha_fastest) - expected) <= 1e-12,
              "anomalous alpha-regime bound with identity correlation");
  }
  if (o.pass) o.detail = fmt("m=2 gives 1; size-free bound at 0.7 = %.10f; all bounds >= 1", got);
  return o;
}

Outcome determinism_criterion() {
  Outcome o;
  for (const char* file : {"study1_k7.json", "study2_k3.json"}) {
    auto cfg = load_config(std::string(SEQDAI_CONFIG_DIR) + "/" + file);
    cfg.mc.reps = 400;
    std::string reference;
    for (int threads : {1, 3}) {
      cfg.mc.threads = threads;
      std::vector<Aggregate> rows;
      for (const auto& v : cfg.variants) {
        auto r = sweep(experiment_config(cfg, v, cfg.levels.front()), cfg.levels);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      sort_rows(rows);
      std::ostringstream os;
      write_csv(os, rows);
      if (reference.empty()) {
        reference = os.str();
      } else {
        o.require(os.str() == reference, std::string(file) + ": CSV differs between 1 and 3 threads");
      }
    }
  }
  if (o.pass) o.detail = "sweep CSV byte-identical for 1 and 3 threads on both studies";
  return o;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& run) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  report("family-count reproduction", family_counts_criterion);
  report("closed-form divergences", closed_form_criterion);
  report("information-number lemmas", lemma_criterion);
  report("rule equivalence", equivalence_criterion);
  std::vector<StudyRows> studies;
  try {
    studies = run_studies();
  } catch (const std::exception& e) {
    std::printf("error: study sweep failed: %s\n", e.what());
  }
  report("error control", [&] { return error_control_criterion(studies); });
  report("optimality trend", [&] { return ratio_criterion(studies); });
  report("ARE bound evaluators", are_criterion);
  report("determinism", determinism_criterion);
  return failures == 0 ? 0 : 1;
}
