#include "support.hpp"

#include <seqdai/errors.hpp>
#include <seqdai/model.hpp>
#include <seqdai/oracle.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace seqdai;
using namespace seqdai::testing;

namespace {

std::vector<SourceSet> subsets_containing(int K, const SourceSet& must) {
  std::vector<SourceSet> out;
  for (int mask = 1; mask < (1 << K); ++mask) {
    SourceSet s;
    for (int k = 0; k < K; ++k) {
      if ((mask >> k) & 1) s.push_back(k);
    }
    if (std::includes(s.begin(), s.end(), must.begin(), must.end())) out.push_back(s);
  }
  return out;
}

// Every class and every subsystem that admits it, against the brute-force construction.
void expect_oracle_equivalence(const ProblemSpec& spec) {
  Enumerator en(spec);
  for (const auto& s : subsets_containing(spec.K, {})) {
    auto mine = en.enumerate(HypothesisClass::global_null(), s);
    auto ref = oracle::restricted_family(spec, HypothesisClass::global_null(), s);
    EXPECT_TRUE(oracle::same_laws(mine.laws, ref)) << to_string(spec.psi) << " H0 on " << to_string(s);
  }
  for (int e = 0; e < spec.unit_count(); ++e) {
    for (const auto& s : subsets_containing(spec.K, spec.units[e].members)) {
      for (auto cls : {HypothesisClass::null_at(e), HypothesisClass::signal_at(e)}) {
        auto mine = en.enumerate(cls, s);
        auto ref = oracle::restricted_family(spec, cls, s);
        EXPECT_TRUE(oracle::same_laws(mine.laws, ref))
            << to_string(spec.psi) << " unit " << to_string(spec.units[e]) << " on " << to_string(s) << ": "
            << mine.laws.size() << " vs " << ref.size();
      }
    }
  }
}

}  // namespace

TEST(PairIndex, RowMajorUpperTriangle) {
  EXPECT_EQ(pair_index(0, 1, 4), 0);
  EXPECT_EQ(pair_index(0, 3, 4), 2);
  EXPECT_EQ(pair_index(1, 2, 4), 3);
  EXPECT_EQ(pair_index(2, 1, 4), 3);
  EXPECT_EQ(pair_index(2, 3, 4), 5);
}

TEST(SignalSet, GlobalNullIsEmpty) {
  auto spec = dependence_study(3, PriorPsi::powerset(), 2);
  GaussianGlobal P{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
  EXPECT_EQ(signal_set(P, spec), 0U);
}

TEST(SignalSet, OneCorrelatedPair) {
  auto spec = dependence_study(3, PriorPsi::powerset(), 2);
  GaussianGlobal P{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
  P.cov(0, 1) = P.cov(1, 0) = 0.7;
  EXPECT_EQ(signal_set(P, spec), units_of(spec, {{0, 1}}));
}

TEST(SignalSet, MeanShiftedSource) {
  auto spec = mean_problem(3, PriorPsi::powerset(), false, false);
  GaussianGlobal P{Eigen::Vector3d(0.0, 0.5, 0.0), Eigen::MatrixXd::Identity(3, 3)};
  EXPECT_EQ(signal_set(P, spec), unit_set_of(1));
}

TEST(SignalSet, OffGridThrows) {
  auto spec = mean_problem(3, PriorPsi::powerset(), false, false);
  GaussianGlobal P{Eigen::Vector3d(0.0, 0.3, 0.0), Eigen::MatrixXd::Identity(3, 3)};
  EXPECT_THROW(signal_set(P, spec), invalid_model);
}

TEST(PsiContains, ClusterNeedsClosure) {
  auto units = pair_units(3);
  ProblemSpec spec = dependence_study(3, PriorPsi::cluster(), 2);
  EXPECT_FALSE(psi_contains(PriorPsi::cluster(), units_of(spec, {{0, 1}, {0, 2}}), units));
  EXPECT_TRUE(psi_contains(PriorPsi::cluster(), units_of(spec, {{0, 1}, {0, 2}, {1, 2}}), units));
  EXPECT_TRUE(psi_contains(PriorPsi::cluster(), units_of(spec, {{0, 1}}), units));
  EXPECT_TRUE(psi_contains(PriorPsi::cluster(), 0, units));
}

TEST(PsiContains, DisjointPairs) {
  ProblemSpec spec = dependence_study(4, PriorPsi::disjoint(), 2);
  EXPECT_TRUE(psi_contains(PriorPsi::disjoint(), units_of(spec, {{0, 1}, {2, 3}}), spec.units));
  EXPECT_FALSE(psi_contains(PriorPsi::disjoint(), units_of(spec, {{0, 1}, {1, 2}}), spec.units));
}

TEST(PsiContains, BoundedRejectsTooFew) {
  auto units = singleton_units(3);
  EXPECT_FALSE(psi_contains(PriorPsi::bounded(1, 2), 0, units));
  EXPECT_TRUE(psi_contains(PriorPsi::bounded(1, 2), 0b011, units));
  EXPECT_FALSE(psi_contains(PriorPsi::bounded(1, 2), 0b111, units));
}

TEST(PsiContains, PowersetAndFullBoundedAgree) {
  auto units = pair_units(4);
  const int n = static_cast<int>(units.size());
  for (UnitSet A = 0; A < (UnitSet{1} << n); ++A) {
    EXPECT_TRUE(psi_contains(PriorPsi::powerset(), A, units));
    EXPECT_EQ(psi_contains(PriorPsi::bounded(0, n), A, units), psi_contains(PriorPsi::powerset(), A, units));
  }
}

TEST(PsiContains, ExplicitListsOnly) {
  auto units = singleton_units(3);
  auto psi = PriorPsi::explicit_sets({0b001, 0b110});
  EXPECT_TRUE(psi_contains(psi, 0b110, units));
  EXPECT_FALSE(psi_contains(psi, 0b010, units));
  EXPECT_FALSE(psi_contains(psi, 0, units));
}

TEST(PaddedSubsystems, LowestOtherSources) {
  auto units = pair_units(7);
  auto subs = padded_subsystems(units, 7, 3);
  ASSERT_EQ(subs.size(), units.size());
  for (std::size_t e = 0; e < units.size(); ++e) {
    ASSERT_EQ(subs[e].size(), 3U);
    EXPECT_TRUE(std::includes(subs[e].begin(), subs[e].end(), units[e].members.begin(), units[e].members.end()));
  }
  EXPECT_EQ(subs[static_cast<std::size_t>(dependence_study(7, PriorPsi::powerset(), 2).find_unit({3, 4}))],
            (SourceSet{0, 3, 4}));
  EXPECT_EQ(subs[0], (SourceSet{0, 1, 2}));
  EXPECT_THROW(padded_subsystems(units, 7, 8), invalid_subsystem);
}

TEST(Validate, AcceptsStudyConfigs) {
  EXPECT_NO_THROW(validate(dependence_study(3, PriorPsi::powerset(), 3)));
  EXPECT_NO_THROW(validate(dependence_study(7, PriorPsi::cluster(), 3)));
  EXPECT_NO_THROW(validate(mean_problem(4, PriorPsi::bounded(0, 2), true, false)));
}

TEST(Validate, RejectsUnitCorrelation) {
  auto spec = dependence_study(3, PriorPsi::powerset(), 2, 1.0);
  EXPECT_THROW(validate(spec), invalid_model);
}

TEST(Validate, RejectsGridWithoutZero) {
  auto spec = mean_problem(3, PriorPsi::powerset(), false, false, {0.5, 1.0});
  EXPECT_THROW(validate(spec), invalid_model);
}

TEST(Validate, RejectsNonpositiveVariance) {
  auto spec = mean_problem(3, PriorPsi::powerset(), false, false, {0.0, 1.0}, {1.0, 0.0});
  EXPECT_THROW(validate(spec), invalid_model);
}

TEST(Validate, RejectsSubsystemMissingUnit) {
  auto spec = dependence_study(3, PriorPsi::powerset(), 2);
  spec.det_subsystems[0] = {0, 2};
  EXPECT_THROW(validate(spec), invalid_subsystem);
}

TEST(Validate, RejectsBadBounds) {
  auto spec = mean_problem(3, PriorPsi::bounded(2, 1), false, false);
  EXPECT_THROW(validate(spec), invalid_model);
  spec.psi = PriorPsi::bounded(0, 4);
  EXPECT_THROW(validate(spec), invalid_model);
}

TEST(Validate, RejectsWrongUnitShape) {
  auto spec = dependence_study(3, PriorPsi::powerset(), 2);
  spec.units = singleton_units(3);
  spec.det_subsystems = spec.iso_subsystems = unit_subsystems(spec.units);
  EXPECT_THROW(validate(spec), invalid_model);
}

TEST(Enumerate, GlobalNullOnFullSystemIsOneLaw) {
  Enumerator en(dependence_study(3, PriorPsi::powerset(), 3));
  EXPECT_EQ(en.count(HypothesisClass::global_null(), {0, 1, 2}), 1U);
}

TEST(Enumerate, ClusterNullAtUnitOnFullSystem) {
  Enumerator en(dependence_study(3, PriorPsi::cluster(), 3));
  for (int e = 0; e < 3; ++e) EXPECT_EQ(en.count(HypothesisClass::null_at(e), {0, 1, 2}), 4U);
}

TEST(Enumerate, ClusterNullAtUnitWithOneExtraSource) {
  auto spec = dependence_study(7, PriorPsi::cluster(), 3);
  Enumerator en(spec);
  const int e = spec.find_unit({2, 5});
  EXPECT_EQ(en.count(HypothesisClass::null_at(e), {2, 5, 6}), 5U);
  EXPECT_EQ(en.count(HypothesisClass::null_at(e), {0, 2, 5}), 5U);
}

TEST(Enumerate, ClassOutsideSubsystemThrows) {
  auto spec = dependence_study(3, PriorPsi::powerset(), 2);
  EXPECT_THROW(enumerate_restricted(spec, HypothesisClass::signal_at(spec.find_unit({0, 1})), {0, 2}),
               invalid_subsystem);
}

TEST(Enumerate, CovariancesArePositiveDefinite) {
  for (auto psi : {PriorPsi::powerset(), PriorPsi::cluster()}) {
    auto spec = dependence_study(4, psi, 4);
    Enumerator en(spec);
    for (const auto& s : subsets_containing(4, {})) {
      for (const auto& P : en.enumerate(HypothesisClass::global_null(), s).laws) {
        EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P.cov).eigenvalues().minCoeff(), 1e-10);
      }
      for (int e = 0; e < spec.unit_count(); ++e) {
        if (!std::includes(s.begin(), s.end(), spec.units[e].members.begin(), spec.units[e].members.end())) continue;
        for (auto cls : {HypothesisClass::null_at(e), HypothesisClass::signal_at(e)}) {
          for (const auto& P : en.enumerate(cls, s).laws) {
            EXPECT_LT((P.cov - P.cov.transpose()).cwiseAbs().maxCoeff(), 1e-15);
            EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(P.cov).eigenvalues().minCoeff(), 1e-10);
          }
        }
      }
    }
  }
}

TEST(FamilyCounts, StudyTwoRows) {
  for (int e = 0; e < 3; ++e) {
    EXPECT_EQ(family_counts(dependence_study(3, PriorPsi::powerset(), 3), e), (FamilyCounts{8, 14, 1, 14}));
    EXPECT_EQ(family_counts(dependence_study(3, PriorPsi::cluster(), 3), e), (FamilyCounts{4, 6, 1, 6}));
  }
}

TEST(FamilyCounts, StudyOneRows) {
  for (auto [psi, expected] : {std::pair{PriorPsi::powerset(), FamilyCounts{9, 14, 1, 14}},
                               std::pair{PriorPsi::cluster(), FamilyCounts{5, 6, 1, 6}}}) {
    Enumerator en(dependence_study(7, psi, 3));
    for (int e = 0; e < en.spec().unit_count(); ++e) EXPECT_EQ(family_counts(en, e), expected) << "unit " << e;
  }
}

TEST(FamilyCounts, UnitSubsystemsGiveOneTwoOneTwo) {
  for (int K : {3, 7}) {
    for (auto psi : {PriorPsi::powerset(), PriorPsi::cluster(), PriorPsi::disjoint()}) {
      Enumerator en(dependence_study(K, psi, 2));
      for (int e = 0; e < en.spec().unit_count(); ++e) EXPECT_EQ(family_counts(en, e), (FamilyCounts{1, 2, 1, 2}));
    }
  }
}

TEST(OracleEquivalence, DependenceThreeSources) {
  for (auto psi : {PriorPsi::powerset(), PriorPsi::cluster(), PriorPsi::disjoint(), PriorPsi::bounded(1, 2),
                   PriorPsi::explicit_sets({0b000, 0b011, 0b100})}) {
    expect_oracle_equivalence(dependence_study(3, psi, 2));
  }
}

TEST(OracleEquivalence, DependenceFourSources) {
  for (auto psi : {PriorPsi::powerset(), PriorPsi::cluster(), PriorPsi::disjoint(), PriorPsi::bounded(0, 1)}) {
    auto spec = dependence_study(4, psi, 2, 0.5);
    spec.grid = GridSpec::uniform(4, {0.0}, {1.0}, {0.0, 0.5});
    expect_oracle_equivalence(spec);
  }
}

TEST(OracleEquivalence, MeanShiftWithVarianceGrid) {
  for (auto psi : {PriorPsi::bounded(0, 2), PriorPsi::bounded(1, 1), PriorPsi::bounded(2, 3), PriorPsi::powerset()}) {
    expect_oracle_equivalence(mean_problem(3, psi, false, false, {0.0, 0.5}, {1.0, 2.0}));
  }
}

TEST(OracleEquivalence, RandomSmallProblems) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_real_distribution<double> corr(0.1, 0.9);
  for (int trial = 0; trial < 10; ++trial) {
    const double r1 = corr(rng);
    auto spec = dependence_study(3, PriorPsi::powerset(), 2);
    std::vector<double> grid{0.0, r1};
    if (coin(rng)) grid.push_back(-corr(rng));
    spec.grid = GridSpec::uniform(3, {0.0}, {1.0}, grid);
    switch (trial % 4) {
      case 0:
        spec.psi = PriorPsi::powerset();
        break;
      case 1:
        spec.psi = PriorPsi::cluster();
        break;
      case 2:
        spec.psi = PriorPsi::bounded(1, 3);
        break;
      default:
        spec.psi = PriorPsi::disjoint();
        break;
    }
    expect_oracle_equivalence(spec);
  }
}
