#include <seqdai/divergence.hpp>

#include <seqdai/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace seqdai {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();
constexpr double pd_tol = 1e-10;
constexpr double cond_tol = 1e-9;

void check_pd(const Eigen::MatrixXd& cov, const char* which) {
  const Eigen::Index m = cov.rows();
  for (Eigen::Index i = 0; i < m; ++i) {
    if (!(cov(i, i) > 0.0)) throw numerical_error(std::string(which) + " covariance has a nonpositive variance");
  }
  Eigen::VectorXd inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
  if (!is_positive_definite(corr, pd_tol)) throw numerical_error(std::string(which) + " covariance is singular");
}

// P^s prepared once for many divergences against laws on the same sources.
struct PreparedLaw {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  double logdet = 0.0;

  explicit PreparedLaw(const GaussianGlobal& law) : mean(law.mean), cov(law.cov) {
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw numerical_error("covariance is not positive definite");
    logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
};

double kl_prepared(const PreparedLaw& p, const Eigen::VectorXd& q_mean, const Eigen::MatrixXd& q_cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(q_cov);
  if (llt.info() != Eigen::Success) throw numerical_error("covariance is not positive definite");
  const double logdet_q = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const Eigen::VectorXd diff = q_mean - p.mean;
  const double trace = llt.solve(p.cov).trace();
  const double quad = diff.dot(llt.solve(diff));
  const double kl = 0.5 * (logdet_q - p.logdet - static_cast<double>(p.mean.size()) + trace + quad);
  return std::max(kl, 0.0);
}

bool units_within(const ProblemSpec& spec, int e, const SourceSet& s) {
  const auto& m = spec.units[e].members;
  return std::includes(s.begin(), s.end(), m.begin(), m.end());
}

SourceSet all_sources(int K) {
  SourceSet s(K);
  for (int k = 0; k < K; ++k) s[k] = k;
  return s;
}

}  // namespace

double kl_gaussian(const GaussianGlobal& P, const GaussianGlobal& Q) {
  if (P.mean.size() != Q.mean.size() || P.cov.rows() != Q.cov.rows() || P.cov.rows() != P.mean.size()) {
    throw invalid_model("laws have different dimensions");
  }
  check_pd(P.cov, "first");
  check_pd(Q.cov, "second");
  return kl_prepared(PreparedLaw(P), Q.mean, Q.cov);
}

double kl_gaussian(const GaussianGlobal& P, const GaussianGlobal& Q, const SourceSet& s) {
  return kl_gaussian(P.restrict_to(s), Q.restrict_to(s));
}

double info_to_class(const GaussianGlobal& P, const HypothesisClass& cls, const SourceSet& s, const Enumerator& en) {
  auto fam = en.enumerate(cls, s);
  if (fam.laws.empty()) throw invalid_model("empty hypothesis family on " + to_string(s));
  if (P.mean.size() != en.spec().K) throw invalid_model("law has wrong dimension");
  auto Ps = P.restrict_to(s);
  check_pd(Ps.cov, "first");
  PreparedLaw prep(Ps);
  double best = inf;
  for (const auto& q : fam.laws) best = std::min(best, kl_prepared(prep, q.mean, q.cov));
  return best;
}

double info_to_class(const GaussianGlobal& P, const HypothesisClass& cls, const SourceSet& s,
                     const ProblemSpec& spec) {
  return info_to_class(P, cls, s, Enumerator(spec));
}

ClassDivergences class_divergences(const GaussianGlobal& P, const Enumerator& en, const SourceSet& s) {
  const auto& spec = en.spec();
  if (P.mean.size() != spec.K) throw invalid_model("law has wrong dimension");
  const int n_units = spec.unit_count();
  ClassDivergences out;
  out.sources = s;
  out.global_null = inf;
  out.null_at.assign(n_units, inf);
  out.signal_at.assign(n_units, inf);
  out.other_signal_sets = inf;

  const bool full = static_cast<int>(s.size()) == spec.K;
  UnitSet truth = 0;
  if (full) truth = signal_set(P, spec);

  std::vector<int> inside;
  for (int e = 0; e < n_units; ++e) {
    if (units_within(spec, e, s)) inside.push_back(e);
  }
  auto Ps = P.restrict_to(s);
  check_pd(Ps.cov, "first");
  PreparedLaw prep(Ps);
  for (const auto& pattern : en.patterns(s)) {
    const bool null_member = pattern.inner_signals == 0;
    bool useful = null_member || (full && pattern.extends_to_psi && pattern.inner_signals != truth);
    for (int e : inside) {
      useful = useful || en.pattern_in_class(pattern, HypothesisClass::null_at(e)) ||
               en.pattern_in_class(pattern, HypothesisClass::signal_at(e));
    }
    if (!useful) continue;
    auto law = en.pattern_law(s, pattern);
    const double kl = kl_prepared(prep, law.mean, law.cov);
    if (null_member) out.global_null = std::min(out.global_null, kl);
    for (int e : inside) {
      if (en.pattern_in_class(pattern, HypothesisClass::null_at(e))) out.null_at[e] = std::min(out.null_at[e], kl);
      if (en.pattern_in_class(pattern, HypothesisClass::signal_at(e))) {
        out.signal_at[e] = std::min(out.signal_at[e], kl);
      }
    }
    if (full && pattern.extends_to_psi && pattern.inner_signals != truth) {
      out.other_signal_sets = std::min(out.other_signal_sets, kl);
    }
  }
  return out;
}

namespace {

// Divergences on the full system and on every subsystem the test uses.
class DivergenceTables {
 public:
  DivergenceTables(const GaussianGlobal& P, const Enumerator& en) : P_(P), en_(en) {
    full_ = class_divergences(P, en, all_sources(en.spec().K));
  }

  const ClassDivergences& full() const { return full_; }

  const ClassDivergences& on(const SourceSet& s) {
    if (static_cast<int>(s.size()) == en_.spec().K) return full_;
    auto it = cache_.find(s);
    if (it == cache_.end()) it = cache_.emplace(s, class_divergences(P_, en_, s)).first;
    return it->second;
  }

 private:
  const GaussianGlobal& P_;
  const Enumerator& en_;
  ClassDivergences full_;
  std::map<SourceSet, ClassDivergences> cache_;
};

bool same(double a, double b) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= cond_tol * std::max(1.0, std::abs(b));
}

double term(double level, double div) {
  const double num = std::abs(std::log(level));
  if (num == 0.0 || std::isinf(div)) return 0.0;
  if (!(div > 1e-12)) throw degenerate_problem("zero information number in the first-order expression");
  return num / div;
}

}  // namespace

OptimalityReport check_optimality_conditions(const GaussianGlobal& P, const Enumerator& en) {
  const auto& spec = en.spec();
  DivergenceTables tab(P, en);
  const UnitSet A = signal_set(P, spec);
  const int n_units = spec.unit_count();

  double p1_sub = inf, p1_full = inf, p2_sub = inf, p2_full = inf, pm_sub = inf, pm_full = inf;
  double p0_sub = -inf;
  for (int e = 0; e < n_units; ++e) {
    const auto& iso = tab.on(spec.iso_subsystems[e]);
    const auto& det = tab.on(spec.det_subsystems[e]);
    if (unit_set_has(A, e)) {
      p1_sub = std::min(p1_sub, iso.null_at[e]);
      p1_full = std::min(p1_full, tab.full().null_at[e]);
      p0_sub = std::max(p0_sub, det.global_null);
    } else {
      p2_sub = std::min(p2_sub, iso.signal_at[e]);
      p2_full = std::min(p2_full, tab.full().signal_at[e]);
    }
    pm_sub = std::min(pm_sub, det.signal_at[e]);
    pm_full = std::min(pm_full, tab.full().signal_at[e]);
  }
  OptimalityReport r;
  r.p1 = same(p1_sub, p1_full);
  r.p2 = same(p2_sub, p2_full);
  r.p_minus_p0 = same(pm_sub, pm_full);
  r.p0 = A == 0 || same(p0_sub, tab.full().global_null);
  return r;
}

EssApprox first_order_ess(const GaussianGlobal& P, const Enumerator& en, const ErrorLevels& levels, TestKind kind) {
  const auto& spec = en.spec();
  check_kind(spec, kind);
  const UnitSet A = signal_set(P, spec);
  if (!psi_contains(spec.psi, A, spec.units)) throw invalid_model("the true law is not in P_Psi");
  DivergenceTables tab(P, en);
  const auto& full = tab.full();
  const int n_units = spec.unit_count();

  // max over e in A of gamma-terms and over e not in A of delta-terms
  auto isolation_terms = [&](double gamma, double delta, bool restricted) {
    double v = 0.0;
    for (int e = 0; e < n_units; ++e) {
      const auto& d = restricted ? tab.on(spec.iso_subsystems[e]) : full;
      v = std::max(v, unit_set_has(A, e) ? term(gamma, d.null_at[e]) : term(delta, d.signal_at[e]));
    }
    return v;
  };
  auto null_terms = [&](double level, bool restricted) {
    double v = 0.0;
    for (int e = 0; e < n_units; ++e) {
      const auto& d = restricted ? tab.on(spec.det_subsystems[e]) : full;
      v = std::max(v, term(level, d.signal_at[e]));
    }
    return v;
  };
  // |log level| / I(P, H0; s_e), best signal unit
  auto detection_term_restricted = [&](double level) {
    double v = inf;
    for (int e = 0; e < n_units; ++e) {
      if (unit_set_has(A, e)) v = std::min(v, term(level, tab.on(spec.det_subsystems[e]).global_null));
    }
    return v;
  };

  EssApprox out;
  switch (kind) {
    case TestKind::isolation:
      out.regime = "isolation";
      if (spec.psi.is_fixed_size()) {
        const double m = std::min(levels.gamma, levels.delta);
        out.regime = "isolation_fixed_size";
        out.value = term(m, full.other_signal_sets);
        out.upper = isolation_terms(m, m, true);
      } else {
        out.value = isolation_terms(levels.gamma, levels.delta, false);
        out.upper = isolation_terms(levels.gamma, levels.delta, true);
      }
      break;
    case TestKind::detection:
    case TestKind::joint: {
      const std::string name = kind == TestKind::detection ? "detection" : "joint";
      if (A == 0) {
        out.regime = name + "_null";
        out.value = null_terms(levels.beta, false);
        out.upper = null_terms(levels.beta, true);
      } else {
        out.regime = name + "_signal";
        out.value = term(levels.alpha, full.global_null);
        out.upper = detection_term_restricted(levels.alpha);
        if (kind == TestKind::joint) {
          out.value = std::max(out.value, isolation_terms(levels.gamma, levels.delta, false));
          out.upper = std::max(out.upper, isolation_terms(levels.gamma, levels.delta, true));
        }
      }
      break;
    }
    case TestKind::fwer:
      if (A == 0) {
        out.regime = "fwer_null";
        out.value = null_terms(levels.delta, false);
        out.upper = null_terms(levels.delta, true);
      } else {
        out.regime = "fwer_signal";
        double v = 0.0;
        for (int e = 0; e < n_units; ++e) {
          if (unit_set_has(A, e)) {
            v = std::max(v, term(levels.gamma, std::min(full.global_null, full.null_at[e])));
          } else {
            v = std::max(v, term(levels.delta, full.signal_at[e]));
          }
        }
        out.value = v;
        out.upper =
            std::max(detection_term_restricted(levels.gamma), isolation_terms(levels.gamma, levels.delta, true));
      }
      break;
  }
  if (!(out.value > 0.0)) throw degenerate_problem("first-order expression is zero");
  out.conditions_hold = out.upper <= out.value * (1.0 + cond_tol);
  return out;
}

std::string to_string(AreRegime r) {
  switch (r) {
    case AreRegime::gamma_fastest:
      return "gamma_fastest";
    case AreRegime::delta_fastest:
      return "delta_fastest";
    case AreRegime::alpha_fastest:
      return "alpha_fastest";
    case AreRegime::null:
      return "null";
  }
  return "?";
}

AreRegime are_regime_from_string(const std::string& name) {
  if (name == "gamma_fastest") return AreRegime::gamma_fastest;
  if (name == "delta_fastest") return AreRegime::delta_fastest;
  if (name == "alpha_fastest") return AreRegime::alpha_fastest;
  if (name == "null") return AreRegime::null;
  throw invalid_config("unknown ARE regime '" + name + "'");
}

namespace {

void check_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0)) throw unsupported("correlation must lie in (0, 1)");
}

}  // namespace

double dependence_are_bound(double rho, int m, AreRegime regime) {
  check_rho(rho);
  if (m < 2) throw unsupported("cluster size must be at least 2");
  const double r2 = rho * rho;
  const double md = m;
  switch (regime) {
    case AreRegime::gamma_fastest:
      return std::log(1.0 - rho * rho * (md - 1.0) / (1.0 + rho * (md - 2.0))) / std::log(1.0 - r2);
    case AreRegime::delta_fastest: {
      const double num = 0.5 * std::log(1.0 - r2 * md / (1.0 + rho * (md - 1.0))) +
                         r2 * md / ((1.0 + rho * md) * (1.0 - rho));
      const double den = 0.5 * std::log(1.0 - r2) + r2 / (1.0 - r2);
      return num / den;
    }
    case AreRegime::alpha_fastest:
      return ((md - 1.0) * std::log(1.0 - rho) + std::log(1.0 + (md - 1.0) * rho)) / std::log(1.0 - r2);
    case AreRegime::null:
      break;
  }
  throw unsupported("no dependence bound for the null regime");
}

double dependence_are_bound_limit(double rho, AreRegime regime) {
  check_rho(rho);
  const double r2 = rho * rho;
  switch (regime) {
    case AreRegime::gamma_fastest:
      return std::log(1.0 - rho) / std::log(1.0 - r2);
    case AreRegime::delta_fastest:
      return (std::log(1.0 - rho) + 2.0 * rho / (1.0 - rho)) / (std::log(1.0 - r2) + 2.0 * r2 / (1.0 - r2));
    case AreRegime::alpha_fastest:
    case AreRegime::null:
      break;
  }
  throw unsupported("no cluster-size-free bound for this regime");
}

namespace {

bool unit_subsystems_everywhere(const ProblemSpec& spec) {
  for (int e = 0; e < spec.unit_count(); ++e) {
    if (spec.det_subsystems[e] != spec.units[e].members || spec.iso_subsystems[e] != spec.units[e].members) {
      return false;
    }
  }
  return true;
}

double anomalous_bound(const GaussianGlobal& P, const ProblemSpec& spec, AreRegime regime) {
  if (spec.units != singleton_units(spec.K)) throw unsupported("the bound needs every source as a unit");
  int u = spec.K;
  if (spec.psi.variant == PriorPsi::Variant::bounded) {
    if (spec.psi.l != 0) throw unsupported("the bound needs l = 0");
    u = spec.psi.u;
  } else if (spec.psi.variant != PriorPsi::Variant::powerset) {
    throw unsupported("the bound needs a bounded prior");
  }
  if (!unit_subsystems_everywhere(spec)) throw unsupported("the bound needs unit subsystems");
  const UnitSet A = signal_set(P, spec);
  if (!psi_contains(spec.psi, A, spec.units)) throw invalid_model("the true law is not in P_Psi");
  check_pd(P.cov, "true");

  const int K = spec.K;
  Eigen::VectorXd sd = P.cov.diagonal().cwiseSqrt();
  Eigen::MatrixXd R = sd.cwiseInverse().asDiagonal() * P.cov * sd.cwiseInverse().asDiagonal();
  Eigen::MatrixXd Rinv = R.inverse();
  const int n_signal = unit_set_size(A);

  // min R^{-1}_jj over the minimisers of score among candidates
  auto min_diag_at_argmin = [&](const std::vector<std::pair<int, double>>& scored) {
    if (scored.empty()) throw unsupported("no candidate sources for the bound");
    double best = inf;
    for (const auto& [k, v] : scored) best = std::min(best, v);
    double out = inf;
    for (const auto& [k, v] : scored) {
      if (v <= best * (1.0 + 1e-12)) out = std::min(out, Rinv(k, k));
    }
    return out;
  };
  auto min_alternative = [&](int k) {
    double best = inf;
    for (double theta : spec.grid.means[k]) {
      if (theta != 0.0) best = std::min(best, theta * theta / P.cov(k, k));
    }
    return best;
  };

  std::vector<std::pair<int, double>> scored;
  switch (regime) {
    case AreRegime::gamma_fastest:
      if (n_signal <= 1) throw unsupported("regime needs more than one signal");
      for (int k = 0; k < K; ++k) {
        if (unit_set_has(A, k)) scored.emplace_back(k, P.mean(k) * P.mean(k) / P.cov(k, k));
      }
      return min_diag_at_argmin(scored);
    case AreRegime::delta_fastest:
      if (n_signal < 1 || n_signal >= u) throw unsupported("regime needs 1 <= |A| < u");
      for (int k = 0; k < K; ++k) {
        if (!unit_set_has(A, k) && std::isfinite(min_alternative(k))) scored.emplace_back(k, min_alternative(k));
      }
      return min_diag_at_argmin(scored);
    case AreRegime::alpha_fastest: {
      if (n_signal == 0) throw unsupported("regime needs at least one signal");
      double num = 0.0, den = 0.0;
      for (int i = 0; i < K; ++i) {
        if (!unit_set_has(A, i)) continue;
        den = std::max(den, P.mean(i) * P.mean(i) / P.cov(i, i));
        for (int j = 0; j < K; ++j) {
          if (unit_set_has(A, j)) num += P.mean(i) * Rinv(i, j) * P.mean(j) / (sd(i) * sd(j));
        }
      }
      return num / den;
    }
    case AreRegime::null:
      if (n_signal != 0) throw unsupported("regime needs no signal");
      for (int k = 0; k < K; ++k) {
        if (std::isfinite(min_alternative(k))) scored.emplace_back(k, min_alternative(k));
      }
      return min_diag_at_argmin(scored);
  }
  return inf;
}

double dependence_bound(const GaussianGlobal& P, const ProblemSpec& spec, AreRegime regime, bool limit) {
  const int K = spec.K;
  if (spec.units != pair_units(K)) throw unsupported("the bound needs every pair of sources as a unit");
  if (spec.psi.variant != PriorPsi::Variant::cluster) throw unsupported("the bound needs the cluster prior");
  if (!unit_subsystems_everywhere(spec)) throw unsupported("the bound needs unit subsystems");
  double rho = 0.0;
  for (const auto& grid : spec.grid.correlations) {
    std::vector<double> g = grid;
    std::sort(g.begin(), g.end());
    if (g.size() != 2 || g[0] != 0.0 || !(g[1] > 0.0)) throw unsupported("the bound needs correlation grids {0, rho}");
    if (rho != 0.0 && g[1] != rho) throw unsupported("the bound needs a common rho");
    rho = g[1];
  }
  const UnitSet A = signal_set(P, spec);
  if (A == 0) throw unsupported("the bound needs one cluster of dependent sources");
  SourceSet cluster;
  for (int e : unit_set_members(A)) {
    for (int k : spec.units[e].members) cluster.push_back(k);
  }
  std::sort(cluster.begin(), cluster.end());
  cluster.erase(std::unique(cluster.begin(), cluster.end()), cluster.end());
  const int m = static_cast<int>(cluster.size());
  if (unit_set_size(A) != m * (m - 1) / 2) throw unsupported("the signal pairs do not form a single cluster");
  if (limit) return dependence_are_bound_limit(rho, regime);
  if (regime == AreRegime::delta_fastest && m >= K) throw unsupported("regime needs m < K");
  return dependence_are_bound(rho, m, regime);
}

}  // namespace

double are_bounds(const GaussianGlobal& P, const ProblemSpec& spec, AreRegime regime, bool limit) {
  validate(spec);
  if (spec.kind == ProblemKind::mean_shift) {
    if (limit) throw unsupported("the size-free relaxation only exists for the dependence problem");
    return anomalous_bound(P, spec, regime);
  }
  return dependence_bound(P, spec, regime, limit);
}

}  // namespace seqdai
