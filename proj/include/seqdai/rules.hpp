#pragma once

#include <seqdai/likelihood.hpp>
#include <seqdai/model.hpp>

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace seqdai {

enum class TestKind { isolation, detection, joint, fwer };

std::string to_string(TestKind kind);
TestKind test_kind_from_string(const std::string& name);

struct ErrorLevels {
  double alpha = 1.0;  // false alarm
  double beta = 1.0;   // missed detection
  double gamma = 1.0;  // false positive
  double delta = 1.0;  // false negative
};

// Thresholds in the log domain, uniform over units.
struct Thresholds {
  double logA = 0.0;
  double logB = 0.0;
  double logC = 0.0;
  double logD = 0.0;
};

// Largest constants over units. Throws invalid_level for levels outside (0, 1]
// or a zero level the kind needs.
Thresholds calibrate(const ErrorLevels& levels, const std::vector<FamilyCounts>& counts, TestKind kind,
                     const PriorPsi& psi, bool local_subsystems);
Thresholds calibrate(const ErrorLevels& levels, const Enumerator& en, TestKind kind);

// Throws invalid_model when the kind does not fit whether the empty set is in Psi.
void check_kind(const ProblemSpec& spec, TestKind kind);

enum class Branch { none, t0, detection, joint, isolation, t1, t2, t3, t4, t5, t6, intersection };

std::string to_string(Branch b);

struct StopDecision {
  bool stopped = false;   // false: horizon reached without stopping
  long stopped_at = 0;
  UnitSet decision = 0;
  Branch triggered_by = Branch::none;

  friend bool operator==(const StopDecision&, const StopDecision&) = default;
};

struct OutcomeFlags {
  bool false_alarm = false;
  bool missed_detection = false;
  bool false_positive = false;
  bool false_negative = false;

  friend bool operator==(const OutcomeFlags&, const OutcomeFlags&) = default;
};

OutcomeFlags classify_outcome(UnitSet truth, UnitSet decision);

// Which stop wins when the null branch and a signal branch fire at the same n.
enum class TiePriority { null_first, signal_first };

struct RunOptions {
  long max_n = 1000000;
  TiePriority tie = TiePriority::null_first;
};

// Writes the next observation into x.
using ObservationSource = std::function<void(Eigen::VectorXd& x)>;

// Per-step stopping predicate of the generic tests on a full snapshot.
std::pair<Branch, UnitSet> generic_check(const ProblemSpec& spec, const StatisticSnapshot& snap, const Thresholds& th,
                                         TestKind kind, TiePriority tie);

StopDecision run_generic(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                         const ObservationSource& source, const RunOptions& options = {});
StopDecision run_generic(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                         const Eigen::MatrixXd& path, const RunOptions& options = {});

// Closed-form rules on ordered local statistics for independent mean-shift
// sources with a bounded prior.
class FastIndependentRule {
 public:
  // Throws unsupported when the configuration is outside the closed forms.
  FastIndependentRule(const ProblemSpec& spec, TestKind kind);

  std::pair<Branch, UnitSet> check(const StatisticSnapshot& snap, const Thresholds& th, TiePriority tie) const;

  enum class Form {
    iso_local,          // isolation, unit isolation subsystems
    iso_gap,            // isolation, l = u < K, full isolation subsystems
    iso_range,          // isolation, l < u, full isolation subsystems
    detection,          // detection-only test
    joint_full,         // joint or fwer, full detection and isolation subsystems
    fwer_intersection,  // fwer, unit subsystems, u = K
    fwer_local_full     // fwer, unit detection and full isolation subsystems, u < K
  };
  Form form() const { return form_; }

 private:
  UnitSet top(const StatisticSnapshot& snap, int count) const;

  Form form_;
  bool det_full_ = false;
  int l_ = 0;
  int u_ = 0;
  int K_ = 0;
};

StopDecision run_fast_independent(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                                  const ObservationSource& source, const RunOptions& options = {});
StopDecision run_fast_independent(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                                  const Eigen::MatrixXd& path, const RunOptions& options = {});

// Largest total log-weight over families of pairwise disjoint units. Weights
// must be positive; throws unsupported beyond 24 distinct sources.
double max_disjoint_logproduct(const std::vector<std::pair<Unit, double>>& positive_units);

// Detection log-statistic of unit e with a full detection subsystem, for units
// that are independent blocks under the disjoint prior: local[e] plus the best
// disjoint family of positive local statistics avoiding e.
double disjoint_detection_llr(const std::vector<Unit>& units, const std::vector<double>& local, int e);

}  // namespace seqdai
