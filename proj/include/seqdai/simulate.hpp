#pragma once

#include <seqdai/divergence.hpp>
#include <seqdai/likelihood.hpp>
#include <seqdai/model.hpp>
#include <seqdai/rules.hpp>

#include <cstdint>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace seqdai {

// Independent stream for one replication; depends only on (seed, rep).
std::mt19937_64 replication_rng(std::uint64_t seed, std::uint64_t rep);

// Draws x = mu + L z with L the lower Cholesky factor of the covariance.
class GaussianSampler {
 public:
  // Throws numerical_error when the covariance cannot be factorized.
  explicit GaussianSampler(const GaussianGlobal& truth);

  void operator()(std::mt19937_64& rng, Eigen::VectorXd& x) const;
  int dim() const { return static_cast<int>(mean_.size()); }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd chol_;
};

Eigen::VectorXd sample_obs(const GaussianGlobal& truth, std::mt19937_64& rng);

enum class RuleChoice { automatic, generic, fast };

struct ExperimentConfig {
  std::string variant = "default";
  ProblemSpec spec;
  GaussianGlobal truth;
  TestKind kind = TestKind::joint;
  ErrorLevels levels;
  long replications = 2000;
  std::uint64_t seed = 0;
  long max_n = 1000000;
  int threads = 1;
  TiePriority tie = TiePriority::null_first;
  RuleChoice rule = RuleChoice::automatic;
};

struct TrialResult {
  StopDecision stop;
  OutcomeFlags flags;
};

struct Rate {
  double rate = 0.0;
  double se = 0.0;
};

struct Aggregate {
  std::string variant;
  ErrorLevels levels;
  long reps = 0;
  long nostop = 0;
  double ess = 0.0;      // mean stopping time over stopped trials
  double ess_se = 0.0;   // sample SD / sqrt(stopped trials)
  Rate false_alarm;
  Rate missed_detection;
  Rate false_positive;
  Rate false_negative;
  bool has_first_order = false;
  EssApprox first_order;
  double ratio = 0.0;    // ess / first_order.value, NaN without a first-order value
};

// Pools trials in replication order.
Aggregate aggregate_trials(const std::vector<TrialResult>& trials);

// A configured experiment with its statistic tables built once, reusable across levels.
class Experiment {
 public:
  // Throws invalid_model when the truth is not a grid law with signal set in Psi.
  explicit Experiment(ExperimentConfig config);
  ~Experiment();

  const ExperimentConfig& config() const { return config_; }
  const StatisticEngine& engine() const { return *engine_; }
  bool uses_fast_rule() const { return fast_; }
  UnitSet truth_signals() const { return truth_signals_; }

  TrialResult run_trial(const Thresholds& th, std::uint64_t rep) const;
  std::vector<TrialResult> run_trials(const Thresholds& th) const;
  Aggregate run(const ErrorLevels& levels) const;

 private:
  ExperimentConfig config_;
  std::shared_ptr<const Enumerator> en_;
  std::unique_ptr<StatisticEngine> engine_;
  GaussianSampler sampler_;
  UnitSet truth_signals_ = 0;
  bool fast_ = false;
};

Aggregate run_experiment(const ExperimentConfig& config);

// One row per level, in the given order.
std::vector<Aggregate> sweep(const ExperimentConfig& config, const std::vector<ErrorLevels>& grid);

struct EquivalenceReport {
  std::string form;
  long paths = 0;
  long mismatches = 0;
  std::vector<std::string> details;  // first few mismatches
};

// Replays identical sample paths through the generic and closed-form rules.
// Throws unsupported when no closed form applies.
EquivalenceReport equivalence_harness(const ProblemSpec& spec, TestKind kind, const Thresholds& th,
                                      const GaussianGlobal& truth, long n_paths, std::uint64_t seed,
                                      long max_n = 100000);

// Orders rows by variant, then alpha, beta, gamma, delta ascending.
void sort_rows(std::vector<Aggregate>& rows);

void write_csv(std::ostream& out, const std::vector<Aggregate>& rows);

// %.10g formatting; "nan" and "inf" for non-finite values.
std::string format_number(double v);

}  // namespace seqdai
