#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace seqdai {

// Sorted, zero-based source indices.
using SourceSet = std::vector<int>;

// Bitmask over the indices of a problem's unit list.
using UnitSet = std::uint64_t;

constexpr int max_units = 64;

inline bool unit_set_has(UnitSet set, int e) { return ((set >> e) & 1U) != 0; }
inline UnitSet unit_set_of(int e) { return UnitSet{1} << e; }
int unit_set_size(UnitSet set);
std::vector<int> unit_set_members(UnitSet set);

struct Unit {
  SourceSet members;

  friend bool operator==(const Unit&, const Unit&) = default;
  friend auto operator<=>(const Unit&, const Unit&) = default;
};

std::string to_string(const Unit& unit);
std::string to_string(const SourceSet& sources);
std::string to_string(UnitSet set, const std::vector<Unit>& units);

enum class ProblemKind { mean_shift, dependence };

struct PriorPsi {
  enum class Variant { bounded, cluster, disjoint, powerset, explicit_sets };

  Variant variant = Variant::powerset;
  int l = 0;
  int u = 0;
  std::vector<UnitSet> sets;

  static PriorPsi bounded(int l, int u);
  static PriorPsi cluster();
  static PriorPsi disjoint();
  static PriorPsi powerset();
  static PriorPsi explicit_sets(std::vector<UnitSet> sets);

  bool is_fixed_size() const { return variant == Variant::bounded && l == u; }
};

std::string to_string(const PriorPsi& psi);

struct GridSpec {
  std::vector<std::vector<double>> means;         // per source, contains 0
  std::vector<std::vector<double>> variances;     // per source, positive
  std::vector<std::vector<double>> correlations;  // per pair (see pair_index), contains 0

  static GridSpec uniform(int K, const std::vector<double>& means, const std::vector<double>& variances,
                          const std::vector<double>& correlations);
};

// Position of the pair {i, j}, i != j, in row-major upper-triangular order.
int pair_index(int i, int j, int K);

struct GaussianGlobal {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  GaussianGlobal restrict_to(const SourceSet& s) const;
};

struct ProblemSpec {
  int K = 0;
  ProblemKind kind = ProblemKind::dependence;
  std::vector<Unit> units;
  GridSpec grid;
  PriorPsi psi;
  std::vector<SourceSet> det_subsystems;
  std::vector<SourceSet> iso_subsystems;

  int unit_count() const { return static_cast<int>(units.size()); }
  UnitSet all_units() const;
  int find_unit(const SourceSet& members) const;  // -1 when absent
};

std::vector<Unit> singleton_units(int K);
std::vector<Unit> pair_units(int K);
std::vector<SourceSet> unit_subsystems(const std::vector<Unit>& units);
std::vector<SourceSet> full_subsystems(const std::vector<Unit>& units, int K);
// Each unit padded with the lowest-indexed other sources up to `size` members.
std::vector<SourceSet> padded_subsystems(const std::vector<Unit>& units, int K, int size);

// Throws invalid_model or invalid_subsystem.
void validate(const ProblemSpec& spec);

struct HypothesisClass {
  enum class Kind { global_null, null_at, signal_at };

  Kind kind = Kind::global_null;
  int unit = -1;

  static HypothesisClass global_null() { return {Kind::global_null, -1}; }
  static HypothesisClass null_at(int e) { return {Kind::null_at, e}; }
  static HypothesisClass signal_at(int e) { return {Kind::signal_at, e}; }
};

// Throws invalid_model when a parameter of P is off the grid.
UnitSet signal_set(const GaussianGlobal& P, const ProblemSpec& spec);

bool psi_contains(const PriorPsi& psi, UnitSet A, const std::vector<Unit>& units);

// Whether a global law with signal set A belongs to the class.
bool class_contains(const ProblemSpec& spec, const HypothesisClass& cls, UnitSet A);

bool is_positive_definite(const Eigen::MatrixXd& m, double tol = 1e-10);

struct RestrictedFamily {
  SourceSet sources;
  std::vector<GaussianGlobal> laws;   // laws of X^s, dimension |s|
  std::vector<UnitSet> signals;       // signal units contained in s, per law
};

// One grid-valid positive-definite parameter pattern on a subsystem, with
// what can be reached by extending it to a law on all sources.
struct LocalPattern {
  std::vector<int> mean_idx;   // per member of s
  std::vector<int> var_idx;    // per member of s
  std::vector<int> corr_idx;   // per pair within s, lexicographic order
  UnitSet inner_signals = 0;   // signal units with all members in s
  bool extends_to_psi = false;           // some extension has A in Psi
  bool extends_to_nonnull_psi = false;   // some extension has A in Psi, A nonempty
};

// Enumerates restricted hypothesis families. Results per subsystem are cached;
// the cache is guarded so one instance can be shared between threads.
class Enumerator {
 public:
  explicit Enumerator(ProblemSpec spec);

  const ProblemSpec& spec() const { return spec_; }

  const std::vector<LocalPattern>& patterns(const SourceSet& s) const;
  bool pattern_in_class(const LocalPattern& p, const HypothesisClass& cls) const;
  GaussianGlobal pattern_law(const SourceSet& s, const LocalPattern& p) const;

  RestrictedFamily enumerate(const HypothesisClass& cls, const SourceSet& s) const;
  std::size_t count(const HypothesisClass& cls, const SourceSet& s) const;

 private:
  std::vector<LocalPattern> build(const SourceSet& s) const;

  ProblemSpec spec_;
  mutable std::mutex mutex_;
  mutable std::map<SourceSet, std::shared_ptr<const std::vector<LocalPattern>>> cache_;
};

// Throws invalid_subsystem when the class refers to a unit not contained in s.
RestrictedFamily enumerate_restricted(const ProblemSpec& spec, const HypothesisClass& cls, const SourceSet& s);

struct FamilyCounts {
  std::size_t a = 0;  // |H_{psi,e}| on the isolation subsystem
  std::size_t b = 0;  // |G_{psi,e}| on the isolation subsystem
  std::size_t c = 0;  // |H_0| on the detection subsystem
  std::size_t d = 0;  // |G_{psi,e}| on the detection subsystem

  friend bool operator==(const FamilyCounts&, const FamilyCounts&) = default;
};

FamilyCounts family_counts(const Enumerator& en, int e);
FamilyCounts family_counts(const ProblemSpec& spec, int e);

}  // namespace seqdai
