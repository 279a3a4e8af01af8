#pragma once

// Brute-force reference implementations, independent of the enumeration and
// rule code. Slow; meant for tests and the oracle-check command.

#include <seqdai/model.hpp>

#include <cstddef>
#include <utility>
#include <vector>

namespace seqdai::oracle {

// Number of grid-valid global parameter choices before the PD filter.
double global_space_size(const ProblemSpec& spec);

// Every grid-valid global law with positive definite covariance.
std::vector<GaussianGlobal> all_global_laws(const ProblemSpec& spec);

// Enumerate all global laws, keep the class members, project to s, deduplicate.
std::vector<GaussianGlobal> restricted_family(const ProblemSpec& spec, const HypothesisClass& cls, const SourceSet& s);

// Whether two lists hold the same laws up to order, entrywise within tol.
bool same_laws(const std::vector<GaussianGlobal>& a, const std::vector<GaussianGlobal>& b, double tol = 1e-12);

// KL from the explicit inverse and determinant.
double kl(const GaussianGlobal& P, const GaussianGlobal& Q);

double min_kl(const GaussianGlobal& Ps, const std::vector<GaussianGlobal>& family);

// Exhaustive search over all families of pairwise disjoint units.
double max_disjoint_weight(const std::vector<std::pair<SourceSet, double>>& units);

}  // namespace seqdai::oracle
