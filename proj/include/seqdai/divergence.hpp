#pragma once

#include <seqdai/model.hpp>
#include <seqdai/rules.hpp>

#include <string>
#include <vector>

namespace seqdai {

// KL divergence of P^s from Q^s for global laws P and Q, in nats.
// Throws numerical_error when either covariance is not positive definite on s.
double kl_gaussian(const GaussianGlobal& P, const GaussianGlobal& Q, const SourceSet& s);
// Same, for two laws of equal dimension.
double kl_gaussian(const GaussianGlobal& P, const GaussianGlobal& Q);

// Minimum KL from P^s to the restricted family of the class on s.
// Throws invalid_model when that family is empty.
double info_to_class(const GaussianGlobal& P, const HypothesisClass& cls, const SourceSet& s, const Enumerator& en);
double info_to_class(const GaussianGlobal& P, const HypothesisClass& cls, const SourceSet& s, const ProblemSpec& spec);

// All class divergences on one subsystem from a single pass over its patterns.
// Entries are +inf for units not contained in s and for empty families.
struct ClassDivergences {
  SourceSet sources;
  double global_null = 0.0;
  std::vector<double> null_at;
  std::vector<double> signal_at;
  // Over laws in P_Psi whose signal set differs from that of P; only filled when s = [K].
  double other_signal_sets = 0.0;
};

ClassDivergences class_divergences(const GaussianGlobal& P, const Enumerator& en, const SourceSet& s);

struct OptimalityReport {
  bool p1 = true;           // isolation divergences over signal units unaffected by s'
  bool p2 = true;           // isolation divergences over non-signal units unaffected by s'
  bool p_minus_p0 = true;   // detection divergences to G unaffected by s, all units
  bool p0 = true;           // some detection subsystem of a signal unit sees the full I(P, H0)
};

OptimalityReport check_optimality_conditions(const GaussianGlobal& P, const Enumerator& en);

struct EssApprox {
  double value = 0.0;     // first-order optimal ESS from full-system information numbers
  double upper = 0.0;     // the same expression with the test's subsystem-restricted numbers
  std::string regime;     // e.g. "joint_signal", "detection_null"
  bool conditions_hold = false;  // upper equals value, so the test attains the optimum

  std::string label() const { return conditions_hold ? "first-order optimal" : "upper-bound expression only"; }
};

// Throws degenerate_problem when a divergence in the display is zero, and
// invalid_model when P is not in P_Psi.
EssApprox first_order_ess(const GaussianGlobal& P, const Enumerator& en, const ErrorLevels& levels, TestKind kind);

// Error levels going to zero fastest select the regime.
enum class AreRegime { gamma_fastest, delta_fastest, alpha_fastest, null };

std::string to_string(AreRegime r);
AreRegime are_regime_from_string(const std::string& name);

// Equicorrelated cluster of size m with correlation rho, pair units, cluster prior,
// unit subsystems. Throws unsupported for m < 2, rho outside (0, 1) or the null regime.
double dependence_are_bound(double rho, int m, AreRegime regime);
// The m-free relaxation; unsupported for alpha_fastest.
double dependence_are_bound_limit(double rho, AreRegime regime);

// Checks the structural hypotheses on (P, spec) and evaluates the bound. For the
// dependence problem, limit = true gives the m-free relaxation.
double are_bounds(const GaussianGlobal& P, const ProblemSpec& spec, AreRegime regime, bool limit = false);

}  // namespace seqdai
