#pragma once

#include <seqdai/model.hpp>

#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace seqdai {

struct SufficientStats {
  long n = 0;
  Eigen::VectorXd sum;
  Eigen::MatrixXd outer_sum;  // sum of x x^T

  SufficientStats() = default;
  explicit SufficientStats(int K) : sum(Eigen::VectorXd::Zero(K)), outer_sum(Eigen::MatrixXd::Zero(K, K)) {}

  // Throws invalid_observation on non-finite input or wrong dimension.
  void add(const Eigen::VectorXd& x);
};

SufficientStats update(SufficientStats stats, const Eigen::VectorXd& x);

// Log density of the observations of X^s under a law on s (exact, including
// the normalising constant), computed from the sufficient statistics.
// Throws numerical_error when the covariance is singular.
double log_likelihood(const GaussianGlobal& marginal, const SourceSet& s, const SufficientStats& stats);

// max_num log L - max_den log L, both taken relative to a reference law on s.
double log_glr(const RestrictedFamily& num, const RestrictedFamily& den, const SufficientStats& stats,
               const GaussianGlobal& reference);
double log_glr(const RestrictedFamily& num, const RestrictedFamily& den, const SufficientStats& stats);

// Independent, zero-mean law with the smallest grid variance of every source.
GaussianGlobal default_reference(const ProblemSpec& spec, const SourceSet& s);

struct StatisticSnapshot {
  long n = 0;
  std::vector<double> local;  // log local statistic per unit
  std::vector<double> det;    // log detection statistic per unit (empty if not computed)
  std::vector<double> iso;    // log isolation statistic per unit (empty if not computed)
  std::vector<int> order;     // units by decreasing local statistic
  int p = 0;                  // number of positive local statistics
  UnitSet d_iso = 0;          // units with positive isolation statistic

  // j-th largest local statistic, j = 1..|units|; -inf beyond the last.
  double ordered(int j) const;
};

struct EngineOptions {
  bool detection = true;
  bool isolation = true;
};

// Precompiled hypothesis families of a problem; evaluates all per-unit log-GLR
// statistics from sufficient statistics. Immutable after construction.
class StatisticEngine {
 public:
  explicit StatisticEngine(std::shared_ptr<const Enumerator> en, EngineOptions options = {});
  explicit StatisticEngine(const ProblemSpec& spec, EngineOptions options = {});
  ~StatisticEngine();
  StatisticEngine(const StatisticEngine&) = delete;
  StatisticEngine& operator=(const StatisticEngine&) = delete;

  const ProblemSpec& spec() const { return en_->spec(); }
  const Enumerator& enumerator() const { return *en_; }
  std::shared_ptr<const Enumerator> shared_enumerator() const { return en_; }
  const EngineOptions& options() const { return options_; }

  double llr_local(int e, const SufficientStats& stats) const;
  double llr_det(int e, const SufficientStats& stats) const;
  double llr_iso(int e, const SufficientStats& stats) const;

  StatisticSnapshot snapshot(const SufficientStats& stats) const;
  // Same as snapshot() but reuses the caller's buffers.
  void snapshot(const SufficientStats& stats, StatisticSnapshot& out) const;
  // Local statistics only, with ordering and p filled in.
  void local_snapshot(const SufficientStats& stats, StatisticSnapshot& out) const;

  // Ties between equal local statistics go to the lexicographically smaller unit.
  void sort_units(StatisticSnapshot& snap) const;

 private:
  struct Table;
  struct Families;

  int table_for(const SourceSet& s);
  std::vector<int> add_laws(int table, const std::vector<GaussianGlobal>& laws);
  void evaluate(int table, const SufficientStats& stats, std::vector<double>& out) const;
  std::size_t law_count() const;
  double best(int table, const std::vector<int>& idx, const std::vector<double>& ll) const;

  std::shared_ptr<const Enumerator> en_;
  EngineOptions options_;
  std::vector<Table> tables_;
  std::vector<Families> families_;
  std::vector<int> lex_rank_;
};

}  // namespace seqdai
