#pragma once

#include <seqdai/model.hpp>
#include <seqdai/rules.hpp>

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace seqdai::testing {

// Pair-unit dependence problem with correlation grid {0, +rho, -rho}; subsystem
// size 2 means unit subsystems.
inline ProblemSpec dependence_study(int K, PriorPsi psi, int subsystem_size, double rho = 0.7) {
  ProblemSpec spec;
  spec.K = K;
  spec.kind = ProblemKind::dependence;
  spec.units = pair_units(K);
  spec.grid = GridSpec::uniform(K, {0.0}, {1.0}, {0.0, rho, -rho});
  spec.psi = psi;
  if (subsystem_size <= 2) {
    spec.det_subsystems = unit_subsystems(spec.units);
  } else if (subsystem_size >= K) {
    spec.det_subsystems = full_subsystems(spec.units, K);
  } else {
    spec.det_subsystems = padded_subsystems(spec.units, K, subsystem_size);
  }
  spec.iso_subsystems = spec.det_subsystems;
  return spec;
}

// Sources 1, 2, 3 form a cluster with correlations rho, -rho, -rho; for K = 7,
// sources 4 and 5 form a second one with correlation rho.
inline GaussianGlobal study_truth(int K, double rho = 0.7) {
  GaussianGlobal P{Eigen::VectorXd::Zero(K), Eigen::MatrixXd::Identity(K, K)};
  auto set = [&](int i, int j, double r) { P.cov(i, j) = P.cov(j, i) = r; };
  set(0, 1, rho);
  set(0, 2, -rho);
  set(1, 2, -rho);
  if (K >= 5) set(3, 4, rho);
  return P;
}

inline ProblemSpec mean_problem(int K, PriorPsi psi, bool det_full, bool iso_full,
                                std::vector<double> means = {0.0, 0.5, 1.0}, std::vector<double> variances = {1.0}) {
  ProblemSpec spec;
  spec.K = K;
  spec.kind = ProblemKind::mean_shift;
  spec.units = singleton_units(K);
  spec.grid = GridSpec::uniform(K, means, variances, {0.0});
  spec.psi = psi;
  spec.det_subsystems = det_full ? full_subsystems(spec.units, K) : unit_subsystems(spec.units);
  spec.iso_subsystems = iso_full ? full_subsystems(spec.units, K) : unit_subsystems(spec.units);
  return spec;
}

inline GaussianGlobal independent_law(const Eigen::VectorXd& mean, const Eigen::VectorXd& var) {
  return {mean, var.asDiagonal()};
}

inline Eigen::MatrixXd gaussian_path(const GaussianGlobal& P, long n, std::mt19937_64& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(P.cov);
  const Eigen::MatrixXd L = llt.matrixL();
  std::normal_distribution<double> z;
  Eigen::MatrixXd path(P.mean.size(), n);
  for (long i = 0; i < n; ++i) {
    Eigen::VectorXd e(P.mean.size());
    for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = z(rng);
    path.col(i) = P.mean + L * e;
  }
  return path;
}

inline UnitSet units_of(const ProblemSpec& spec, const std::vector<SourceSet>& sets) {
  UnitSet A = 0;
  for (const auto& s : sets) A |= unit_set_of(spec.find_unit(s));
  return A;
}

}  // namespace seqdai::testing
