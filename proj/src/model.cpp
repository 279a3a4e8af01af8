#include <seqdai/model.hpp>

#include <seqdai/errors.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <sstream>

namespace seqdai {

int unit_set_size(UnitSet set) { return std::popcount(set); }

std::vector<int> unit_set_members(UnitSet set) {
  std::vector<int> out;
  while (set != 0) {
    int e = std::countr_zero(set);
    out.push_back(e);
    set &= set - 1;
  }
  return out;
}

std::string to_string(const SourceSet& sources) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (i > 0) os << ',';
    os << sources[i] + 1;
  }
  os << '}';
  return os.str();
}

std::string to_string(const Unit& unit) { return to_string(unit.members); }

std::string to_string(UnitSet set, const std::vector<Unit>& units) {
  std::ostringstream os;
  os << '[';
  bool first = true;
  for (int e : unit_set_members(set)) {
    if (!first) os << ' ';
    first = false;
    os << to_string(units[e]);
  }
  os << ']';
  return os.str();
}

PriorPsi PriorPsi::bounded(int l, int u) {
  PriorPsi p;
  p.variant = Variant::bounded;
  p.l = l;
  p.u = u;
  return p;
}

PriorPsi PriorPsi::cluster() {
  PriorPsi p;
  p.variant = Variant::cluster;
  return p;
}

PriorPsi PriorPsi::disjoint() {
  PriorPsi p;
  p.variant = Variant::disjoint;
  return p;
}

PriorPsi PriorPsi::powerset() { return PriorPsi{}; }

PriorPsi PriorPsi::explicit_sets(std::vector<UnitSet> sets) {
  PriorPsi p;
  p.variant = Variant::explicit_sets;
  p.sets = std::move(sets);
  return p;
}

std::string to_string(const PriorPsi& psi) {
  switch (psi.variant) {
    case PriorPsi::Variant::bounded:
      return "bounded(" + std::to_string(psi.l) + "," + std::to_string(psi.u) + ")";
    case PriorPsi::Variant::cluster:
      return "cluster";
    case PriorPsi::Variant::disjoint:
      return "disjoint";
    case PriorPsi::Variant::powerset:
      return "powerset";
    case PriorPsi::Variant::explicit_sets:
      return "explicit(" + std::to_string(psi.sets.size()) + " sets)";
  }
  return "?";
}

GridSpec GridSpec::uniform(int K, const std::vector<double>& means, const std::vector<double>& variances,
                           const std::vector<double>& correlations) {
  GridSpec g;
  g.means.assign(K, means);
  g.variances.assign(K, variances);
  g.correlations.assign(static_cast<std::size_t>(K * (K - 1) / 2), correlations);
  return g;
}

int pair_index(int i, int j, int K) {
  if (i > j) std::swap(i, j);
  return i * K - i * (i + 1) / 2 + (j - i - 1);
}

GaussianGlobal GaussianGlobal::restrict_to(const SourceSet& s) const {
  GaussianGlobal out;
  const auto m = static_cast<Eigen::Index>(s.size());
  out.mean.resize(m);
  out.cov.resize(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    out.mean(a) = mean(s[a]);
    for (Eigen::Index b = 0; b < m; ++b) out.cov(a, b) = cov(s[a], s[b]);
  }
  return out;
}

UnitSet ProblemSpec::all_units() const {
  return units.size() == 64 ? ~UnitSet{0} : (UnitSet{1} << units.size()) - 1;
}

int ProblemSpec::find_unit(const SourceSet& members) const {
  for (std::size_t e = 0; e < units.size(); ++e) {
    if (units[e].members == members) return static_cast<int>(e);
  }
  return -1;
}

std::vector<Unit> singleton_units(int K) {
  std::vector<Unit> out;
  for (int k = 0; k < K; ++k) out.push_back(Unit{{k}});
  return out;
}

std::vector<Unit> pair_units(int K) {
  std::vector<Unit> out;
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) out.push_back(Unit{{i, j}});
  }
  return out;
}

std::vector<SourceSet> unit_subsystems(const std::vector<Unit>& units) {
  std::vector<SourceSet> out;
  for (const auto& u : units) out.push_back(u.members);
  return out;
}

std::vector<SourceSet> full_subsystems(const std::vector<Unit>& units, int K) {
  SourceSet all(K);
  for (int k = 0; k < K; ++k) all[k] = k;
  return std::vector<SourceSet>(units.size(), all);
}

std::vector<SourceSet> padded_subsystems(const std::vector<Unit>& units, int K, int size) {
  std::vector<SourceSet> out;
  for (const auto& u : units) {
    if (size < static_cast<int>(u.members.size()) || size > K) {
      throw invalid_subsystem("cannot pad unit " + to_string(u) + " to size " + std::to_string(size));
    }
    SourceSet s = u.members;
    for (int k = 0; k < K && static_cast<int>(s.size()) < size; ++k) {
      if (std::find(u.members.begin(), u.members.end(), k) == u.members.end()) s.push_back(k);
    }
    std::sort(s.begin(), s.end());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

bool contains_value(const std::vector<double>& grid, double v, double tol) {
  return std::any_of(grid.begin(), grid.end(), [&](double g) { return std::abs(g - v) <= tol; });
}

bool has_duplicates(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

void check_source_set(const SourceSet& s, int K, const std::string& what) {
  if (s.empty()) throw invalid_subsystem(what + " is empty");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] < 0 || s[i] >= K) throw invalid_subsystem(what + " has a source out of range");
    if (i > 0 && s[i] <= s[i - 1]) throw invalid_subsystem(what + " is not strictly increasing");
  }
}

bool includes(const SourceSet& outer, const SourceSet& inner) {
  return std::includes(outer.begin(), outer.end(), inner.begin(), inner.end());
}

SourceSet symmetric_difference(const SourceSet& a, const SourceSet& b) {
  SourceSet out;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

bool disjoint(const SourceSet& a, const SourceSet& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) return false;
    if (a[i] < b[j]) ++i; else ++j;
  }
  return true;
}

}  // namespace

void validate(const ProblemSpec& spec) {
  const int K = spec.K;
  if (K < 1) throw invalid_model("K must be positive");
  if (spec.units.empty()) throw invalid_model("no units");
  if (spec.units.size() > static_cast<std::size_t>(max_units)) throw invalid_model("more than 64 units");
  std::set<SourceSet> seen;
  for (const auto& u : spec.units) {
    check_source_set(u.members, K, "unit");
    if (!seen.insert(u.members).second) throw invalid_model("duplicate unit " + to_string(u));
    if (spec.kind == ProblemKind::mean_shift && u.members.size() != 1) {
      throw invalid_model("mean-shift units must be single sources");
    }
    if (spec.kind == ProblemKind::dependence && u.members.size() != 2) {
      throw invalid_model("dependence units must be pairs of sources");
    }
  }

  const auto& g = spec.grid;
  if (static_cast<int>(g.means.size()) != K || static_cast<int>(g.variances.size()) != K) {
    throw invalid_model("grid must list means and variances for every source");
  }
  if (static_cast<int>(g.correlations.size()) != K * (K - 1) / 2) {
    throw invalid_model("grid must list correlations for every pair of sources");
  }
  for (int k = 0; k < K; ++k) {
    if (!contains_value(g.means[k], 0.0, 0.0)) throw invalid_model("mean grid of a source lacks 0");
    if (g.variances[k].empty()) throw invalid_model("empty variance grid");
    for (double m : g.means[k]) {
      if (!std::isfinite(m)) throw invalid_model("non-finite mean on grid");
    }
    for (double v : g.variances[k]) {
      if (!(v > 0.0) || !std::isfinite(v)) throw invalid_model("variances must be positive");
    }
    if (has_duplicates(g.means[k]) || has_duplicates(g.variances[k])) throw invalid_model("duplicate grid value");
  }
  for (const auto& r : g.correlations) {
    if (!contains_value(r, 0.0, 0.0)) throw invalid_model("correlation grid of a pair lacks 0");
    for (double v : r) {
      if (!(v > -1.0 && v < 1.0)) throw invalid_model("correlations must lie in (-1, 1)");
    }
    if (has_duplicates(r)) throw invalid_model("duplicate grid value");
  }

  const auto& psi = spec.psi;
  const int n_units = spec.unit_count();
  if (psi.variant == PriorPsi::Variant::bounded && !(0 <= psi.l && psi.l <= psi.u && psi.u <= n_units)) {
    throw invalid_model("bounded prior requires 0 <= l <= u <= number of units");
  }
  if (psi.variant == PriorPsi::Variant::explicit_sets) {
    if (psi.sets.empty()) throw invalid_model("explicit prior lists no sets");
    std::set<UnitSet> distinct;
    for (UnitSet A : psi.sets) {
      if ((A & ~spec.all_units()) != 0) throw invalid_model("explicit prior refers to unknown units");
      if (!distinct.insert(A).second) throw invalid_model("explicit prior lists a set twice");
    }
  }

  if (spec.det_subsystems.size() != spec.units.size() || spec.iso_subsystems.size() != spec.units.size()) {
    throw invalid_subsystem("one detection and one isolation subsystem per unit required");
  }
  for (std::size_t e = 0; e < spec.units.size(); ++e) {
    check_source_set(spec.det_subsystems[e], K, "detection subsystem");
    check_source_set(spec.iso_subsystems[e], K, "isolation subsystem");
    if (!includes(spec.det_subsystems[e], spec.units[e].members) ||
        !includes(spec.iso_subsystems[e], spec.units[e].members)) {
      throw invalid_subsystem("subsystem of unit " + to_string(spec.units[e]) + " does not contain the unit");
    }
  }
}

UnitSet signal_set(const GaussianGlobal& P, const ProblemSpec& spec) {
  const int K = spec.K;
  if (P.mean.size() != K || P.cov.rows() != K || P.cov.cols() != K) throw invalid_model("law has wrong dimension");
  for (int k = 0; k < K; ++k) {
    if (!contains_value(spec.grid.means[k], P.mean(k), 1e-12)) throw invalid_model("mean off the grid");
    if (!contains_value(spec.grid.variances[k], P.cov(k, k), 1e-12)) throw invalid_model("variance off the grid");
  }
  for (int i = 0; i < K; ++i) {
    for (int j = i + 1; j < K; ++j) {
      if (std::abs(P.cov(i, j) - P.cov(j, i)) > 1e-12) throw invalid_model("covariance is not symmetric");
      double r = P.cov(i, j) / std::sqrt(P.cov(i, i) * P.cov(j, j));
      if (!contains_value(spec.grid.correlations[pair_index(i, j, K)], r, 1e-9)) {
        throw invalid_model("correlation off the grid");
      }
    }
  }
  UnitSet A = 0;
  for (int e = 0; e < spec.unit_count(); ++e) {
    const auto& m = spec.units[e].members;
    bool signal = spec.kind == ProblemKind::mean_shift ? P.mean(m[0]) != 0.0 : std::abs(P.cov(m[0], m[1])) > 1e-12;
    if (signal) A |= unit_set_of(e);
  }
  return A;
}

bool psi_contains(const PriorPsi& psi, UnitSet A, const std::vector<Unit>& units) {
  switch (psi.variant) {
    case PriorPsi::Variant::powerset:
      return true;
    case PriorPsi::Variant::bounded: {
      int n = unit_set_size(A);
      return psi.l <= n && n <= psi.u;
    }
    case PriorPsi::Variant::explicit_sets:
      return std::find(psi.sets.begin(), psi.sets.end(), A) != psi.sets.end();
    case PriorPsi::Variant::disjoint: {
      auto members = unit_set_members(A);
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
          if (!disjoint(units[members[i]].members, units[members[j]].members)) return false;
        }
      }
      return true;
    }
    case PriorPsi::Variant::cluster: {
      auto members = unit_set_members(A);
      for (std::size_t i = 0; i < members.size(); ++i) {
        for (std::size_t j = i + 1; j < members.size(); ++j) {
          SourceSet d = symmetric_difference(units[members[i]].members, units[members[j]].members);
          for (std::size_t f = 0; f < units.size(); ++f) {
            if (units[f].members == d && !unit_set_has(A, static_cast<int>(f))) return false;
          }
        }
      }
      return true;
    }
  }
  return false;
}

bool class_contains(const ProblemSpec& spec, const HypothesisClass& cls, UnitSet A) {
  switch (cls.kind) {
    case HypothesisClass::Kind::global_null:
      return A == 0;
    case HypothesisClass::Kind::null_at:
      return A != 0 && !unit_set_has(A, cls.unit) && psi_contains(spec.psi, A, spec.units);
    case HypothesisClass::Kind::signal_at:
      return unit_set_has(A, cls.unit) && psi_contains(spec.psi, A, spec.units);
  }
  return false;
}

bool is_positive_definite(const Eigen::MatrixXd& m, double tol) {
  if (m.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return false;
  return es.eigenvalues().minCoeff() > tol;
}

namespace {

constexpr double pd_tol = 1e-10;

// Depth-first search for a global extension of a subsystem pattern whose
// signal set is a nonempty member of Psi.
class ExtensionSearch {
 public:
  ExtensionSearch(const ProblemSpec& spec, const std::vector<std::vector<int>>& symdiff)
      : spec_(spec), symdiff_(symdiff) {}

  // Dependence problems: the subsystem's correlation block is fixed.
  bool dependence(const SourceSet& s, const Eigen::MatrixXd& r_in, UnitSet inner) {
    const int K = spec_.K;
    order_ = s;
    for (int k = 0; k < K; ++k) {
      if (!std::binary_search(s.begin(), s.end(), k)) order_.push_back(k);
    }
    m_ = static_cast<int>(s.size());
    r_ = Eigen::MatrixXd::Identity(K, K);
    r_.topLeftCorner(m_, m_) = r_in;
    l_ = Eigen::MatrixXd::Zero(K, K);
    Eigen::LLT<Eigen::MatrixXd> llt(r_in);
    l_.topLeftCorner(m_, m_) = llt.matrixL();
    decided_ = 0;
    for (int e = 0; e < spec_.unit_count(); ++e) {
      if (std::includes(s.begin(), s.end(), spec_.units[e].members.begin(), spec_.units[e].members.end())) {
        decided_ |= unit_set_of(e);
      }
    }
    signals_ = inner;
    if (!partial_ok()) return false;
    if (m_ == K) return goal();
    return place(m_, 0);
  }

  // Mean-shift problems: sources outside s are uncorrelated with it, so only
  // the signal status of outside units is free.
  bool mean_shift(const SourceSet& s, UnitSet inner) {
    decided_ = 0;
    outside_.clear();
    for (int e = 0; e < spec_.unit_count(); ++e) {
      int k = spec_.units[e].members[0];
      if (std::binary_search(s.begin(), s.end(), k)) {
        decided_ |= unit_set_of(e);
      } else {
        outside_.push_back(e);
      }
    }
    signals_ = inner;
    if (!partial_ok()) return false;
    return assign_outside(0);
  }

 private:
  bool goal() const {
    return signals_ != 0 && psi_contains(spec_.psi, signals_, spec_.units);
  }

  bool partial_ok() const {
    const UnitSet all = spec_.all_units();
    const UnitSet open = all & ~decided_;
    const auto& psi = spec_.psi;
    if (signals_ == 0 && open == 0) return false;
    switch (psi.variant) {
      case PriorPsi::Variant::powerset:
        return true;
      case PriorPsi::Variant::bounded: {
        int n = unit_set_size(signals_);
        return n <= psi.u && n + unit_set_size(open) >= std::max(psi.l, 1);
      }
      case PriorPsi::Variant::explicit_sets:
        return std::any_of(psi.sets.begin(), psi.sets.end(),
                           [&](UnitSet A) { return A != 0 && (A & decided_) == signals_; });
      case PriorPsi::Variant::disjoint: {
        SourceSet used;
        for (int e : unit_set_members(signals_)) {
          for (int k : spec_.units[e].members) {
            if (std::find(used.begin(), used.end(), k) != used.end()) return false;
            used.push_back(k);
          }
        }
        return true;
      }
      case PriorPsi::Variant::cluster: {
        auto members = unit_set_members(signals_);
        for (std::size_t i = 0; i < members.size(); ++i) {
          for (std::size_t j = i + 1; j < members.size(); ++j) {
            int f = symdiff_[members[i]][members[j]];
            if (f >= 0 && unit_set_has(decided_, f) && !unit_set_has(signals_, f)) return false;
          }
        }
        return true;
      }
    }
    return false;
  }

  bool assign_outside(std::size_t idx) {
    if (idx == outside_.size()) return goal();
    const int e = outside_[idx];
    const UnitSet saved_decided = decided_;
    const UnitSet saved_signals = signals_;
    decided_ |= unit_set_of(e);
    if (partial_ok() && assign_outside(idx + 1)) return true;
    const auto& means = spec_.grid.means[spec_.units[e].members[0]];
    bool can_signal = std::any_of(means.begin(), means.end(), [](double m) { return m != 0.0; });
    if (can_signal) {
      signals_ |= unit_set_of(e);
      if (partial_ok() && assign_outside(idx + 1)) return true;
    }
    decided_ = saved_decided;
    signals_ = saved_signals;
    return false;
  }

  // Assigns the correlation between positions i and j (i < j), column by column.
  bool place(int j, int i) {
    const int K = spec_.K;
    if (j == K) {
      return goal() && is_positive_definite(r_, pd_tol);
    }
    if (i == j) {
      for (int k = 0; k < j; ++k) {
        double acc = r_(j, k);
        for (int t = 0; t < k; ++t) acc -= l_(j, t) * l_(k, t);
        l_(j, k) = acc / l_(k, k);
      }
      double d = 1.0;
      for (int t = 0; t < j; ++t) d -= l_(j, t) * l_(j, t);
      if (d <= pd_tol) return false;
      l_(j, j) = std::sqrt(d);
      return place(j + 1, 0);
    }
    const int a = order_[i];
    const int b = order_[j];
    const int e = spec_.find_unit({std::min(a, b), std::max(a, b)});
    std::vector<double> values = spec_.grid.correlations[pair_index(a, b, K)];
    std::stable_partition(values.begin(), values.end(), [](double v) { return v == 0.0; });
    const UnitSet saved_decided = decided_;
    const UnitSet saved_signals = signals_;
    for (double v : values) {
      r_(i, j) = r_(j, i) = v;
      decided_ = saved_decided;
      signals_ = saved_signals;
      if (e >= 0) {
        decided_ |= unit_set_of(e);
        if (v != 0.0) signals_ |= unit_set_of(e);
        if (!partial_ok()) continue;
      }
      if (place(j, i + 1)) return true;
    }
    r_(i, j) = r_(j, i) = 0.0;
    decided_ = saved_decided;
    signals_ = saved_signals;
    return false;
  }

  const ProblemSpec& spec_;
  const std::vector<std::vector<int>>& symdiff_;
  SourceSet order_;
  int m_ = 0;
  Eigen::MatrixXd r_;
  Eigen::MatrixXd l_;
  UnitSet decided_ = 0;
  UnitSet signals_ = 0;
  std::vector<int> outside_;
};

std::vector<std::vector<int>> symdiff_table(const ProblemSpec& spec) {
  const int n = spec.unit_count();
  std::vector<std::vector<int>> t(n, std::vector<int>(n, -1));
  for (int e = 0; e < n; ++e) {
    for (int f = 0; f < n; ++f) {
      if (e != f) t[e][f] = spec.find_unit(symmetric_difference(spec.units[e].members, spec.units[f].members));
    }
  }
  return t;
}

void check_subsystem(const ProblemSpec& spec, const SourceSet& s) { check_source_set(s, spec.K, "subsystem"); }

}  // namespace

Enumerator::Enumerator(ProblemSpec spec) : spec_(std::move(spec)) { validate(spec_); }

const std::vector<LocalPattern>& Enumerator::patterns(const SourceSet& s) const {
  check_subsystem(spec_, s);
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(s);
    if (it != cache_.end()) return *it->second;
  }
  auto built = std::make_shared<const std::vector<LocalPattern>>(build(s));
  std::lock_guard<std::mutex> lock(mutex_);
  auto [it, inserted] = cache_.emplace(s, std::move(built));
  return *it->second;
}

std::vector<LocalPattern> Enumerator::build(const SourceSet& s) const {
  const int K = spec_.K;
  const int m = static_cast<int>(s.size());
  const auto symdiff = symdiff_table(spec_);
  ExtensionSearch search(spec_, symdiff);

  // Pairs within s in lexicographic order, visited column by column.
  std::vector<std::vector<int>> slot(m, std::vector<int>(m, -1));
  int n_pairs = 0;
  for (int a = 0; a < m; ++a) {
    for (int b = a + 1; b < m; ++b) slot[a][b] = n_pairs++;
  }

  std::vector<int> inner_units;
  for (int e = 0; e < spec_.unit_count(); ++e) {
    const auto& mem = spec_.units[e].members;
    if (std::includes(s.begin(), s.end(), mem.begin(), mem.end())) inner_units.push_back(e);
  }
  auto local_pos = [&](int k) {
    return static_cast<int>(std::lower_bound(s.begin(), s.end(), k) - s.begin());
  };

  std::vector<LocalPattern> out;
  std::vector<int> corr_idx(n_pairs, 0);
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  std::map<UnitSet, std::pair<bool, bool>> mean_memo;

  auto reach = [&](UnitSet inner) -> std::pair<bool, bool> {
    bool nonnull = spec_.kind == ProblemKind::dependence ? search.dependence(s, r, inner) : search.mean_shift(s, inner);
    bool any = nonnull || (inner == 0 && psi_contains(spec_.psi, 0, spec_.units));
    return {any, nonnull};
  };

  auto emit = [&]() {
    if (!is_positive_definite(r, pd_tol)) return;
    std::pair<bool, bool> dep_reach{false, false};
    UnitSet dep_inner = 0;
    if (spec_.kind == ProblemKind::dependence) {
      for (int e : inner_units) {
        const auto& mem = spec_.units[e].members;
        if (r(local_pos(mem[0]), local_pos(mem[1])) != 0.0) dep_inner |= unit_set_of(e);
      }
      dep_reach = reach(dep_inner);
    }
    std::vector<int> mean_idx(m, 0);
    while (true) {
      UnitSet inner = dep_inner;
      std::pair<bool, bool> flags = dep_reach;
      if (spec_.kind == ProblemKind::mean_shift) {
        inner = 0;
        for (int e : inner_units) {
          int k = spec_.units[e].members[0];
          if (spec_.grid.means[k][mean_idx[local_pos(k)]] != 0.0) inner |= unit_set_of(e);
        }
        auto it = mean_memo.find(inner);
        if (it == mean_memo.end()) it = mean_memo.emplace(inner, reach(inner)).first;
        flags = it->second;
      }
      std::vector<int> var_idx(m, 0);
      while (true) {
        LocalPattern p;
        p.mean_idx = mean_idx;
        p.var_idx = var_idx;
        p.corr_idx = corr_idx;
        p.inner_signals = inner;
        p.extends_to_psi = flags.first;
        p.extends_to_nonnull_psi = flags.second;
        out.push_back(std::move(p));
        int a = 0;
        while (a < m && ++var_idx[a] == static_cast<int>(spec_.grid.variances[s[a]].size())) var_idx[a++] = 0;
        if (a == m) break;
      }
      int a = 0;
      while (a < m && ++mean_idx[a] == static_cast<int>(spec_.grid.means[s[a]].size())) mean_idx[a++] = 0;
      if (a == m) break;
    }
  };

  // Depth-first over within-s correlations with incremental Cholesky pruning.
  auto dfs = [&](auto&& self, int j, int i) -> void {
    if (j == m) {
      emit();
      return;
    }
    if (i == j) {
      for (int k = 0; k < j; ++k) {
        double acc = r(j, k);
        for (int t = 0; t < k; ++t) acc -= l(j, t) * l(k, t);
        l(j, k) = acc / l(k, k);
      }
      double d = 1.0;
      for (int t = 0; t < j; ++t) d -= l(j, t) * l(j, t);
      if (d <= pd_tol) return;
      l(j, j) = std::sqrt(d);
      self(self, j + 1, 0);
      return;
    }
    const auto& values = spec_.grid.correlations[pair_index(s[i], s[j], K)];
    for (std::size_t v = 0; v < values.size(); ++v) {
      r(i, j) = r(j, i) = values[v];
      corr_idx[slot[i][j]] = static_cast<int>(v);
      self(self, j, i + 1);
    }
    r(i, j) = r(j, i) = 0.0;
    corr_idx[slot[i][j]] = 0;
  };
  if (m > 0) {
    l(0, 0) = 1.0;
    dfs(dfs, 1, 0);
  }
  return out;
}

bool Enumerator::pattern_in_class(const LocalPattern& p, const HypothesisClass& cls) const {
  switch (cls.kind) {
    case HypothesisClass::Kind::global_null:
      return p.inner_signals == 0;
    case HypothesisClass::Kind::null_at:
      return !unit_set_has(p.inner_signals, cls.unit) && p.extends_to_nonnull_psi;
    case HypothesisClass::Kind::signal_at:
      return unit_set_has(p.inner_signals, cls.unit) && p.extends_to_psi;
  }
  return false;
}

GaussianGlobal Enumerator::pattern_law(const SourceSet& s, const LocalPattern& p) const {
  const int m = static_cast<int>(s.size());
  GaussianGlobal law;
  law.mean.resize(m);
  law.cov.resize(m, m);
  Eigen::VectorXd sd(m);
  for (int a = 0; a < m; ++a) {
    law.mean(a) = spec_.grid.means[s[a]][p.mean_idx[a]];
    sd(a) = std::sqrt(spec_.grid.variances[s[a]][p.var_idx[a]]);
  }
  int slot = 0;
  for (int a = 0; a < m; ++a) {
    law.cov(a, a) = spec_.grid.variances[s[a]][p.var_idx[a]];
    for (int b = a + 1; b < m; ++b) {
      double r = spec_.grid.correlations[pair_index(s[a], s[b], spec_.K)][p.corr_idx[slot++]];
      law.cov(a, b) = law.cov(b, a) = r * sd(a) * sd(b);
    }
  }
  return law;
}

namespace {

void check_class_subsystem(const ProblemSpec& spec, const HypothesisClass& cls, const SourceSet& s) {
  if (cls.kind == HypothesisClass::Kind::global_null) return;
  if (cls.unit < 0 || cls.unit >= spec.unit_count()) throw invalid_model("class refers to an unknown unit");
  const auto& mem = spec.units[cls.unit].members;
  if (!std::includes(s.begin(), s.end(), mem.begin(), mem.end())) {
    throw invalid_subsystem("unit " + to_string(spec.units[cls.unit]) + " is not contained in " + to_string(s));
  }
}

}  // namespace

RestrictedFamily Enumerator::enumerate(const HypothesisClass& cls, const SourceSet& s) const {
  check_subsystem(spec_, s);
  check_class_subsystem(spec_, cls, s);
  RestrictedFamily fam;
  fam.sources = s;
  for (const auto& p : patterns(s)) {
    if (!pattern_in_class(p, cls)) continue;
    fam.laws.push_back(pattern_law(s, p));
    fam.signals.push_back(p.inner_signals);
  }
  return fam;
}

std::size_t Enumerator::count(const HypothesisClass& cls, const SourceSet& s) const {
  check_subsystem(spec_, s);
  check_class_subsystem(spec_, cls, s);
  const auto& ps = patterns(s);
  return static_cast<std::size_t>(
      std::count_if(ps.begin(), ps.end(), [&](const LocalPattern& p) { return pattern_in_class(p, cls); }));
}

RestrictedFamily enumerate_restricted(const ProblemSpec& spec, const HypothesisClass& cls, const SourceSet& s) {
  return Enumerator(spec).enumerate(cls, s);
}

FamilyCounts family_counts(const Enumerator& en, int e) {
  const auto& spec = en.spec();
  if (e < 0 || e >= spec.unit_count()) throw invalid_model("unknown unit");
  FamilyCounts c;
  c.a = en.count(HypothesisClass::null_at(e), spec.iso_subsystems[e]);
  c.b = en.count(HypothesisClass::signal_at(e), spec.iso_subsystems[e]);
  c.c = en.count(HypothesisClass::global_null(), spec.det_subsystems[e]);
  c.d = en.count(HypothesisClass::signal_at(e), spec.det_subsystems[e]);
  return c;
}

FamilyCounts family_counts(const ProblemSpec& spec, int e) { return family_counts(Enumerator(spec), e); }

}  // namespace seqdai
