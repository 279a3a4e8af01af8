#include <seqdai/rules.hpp>

#include <seqdai/errors.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <unordered_map>

namespace seqdai {

std::string to_string(TestKind kind) {
  switch (kind) {
    case TestKind::isolation:
      return "isolation";
    case TestKind::detection:
      return "detection";
    case TestKind::joint:
      return "joint";
    case TestKind::fwer:
      return "fwer";
  }
  return "?";
}

TestKind test_kind_from_string(const std::string& name) {
  if (name == "isolation") return TestKind::isolation;
  if (name == "detection") return TestKind::detection;
  if (name == "joint") return TestKind::joint;
  if (name == "fwer") return TestKind::fwer;
  throw invalid_config("unknown test kind '" + name + "'");
}

std::string to_string(Branch b) {
  switch (b) {
    case Branch::none:
      return "none";
    case Branch::t0:
      return "T0";
    case Branch::detection:
      return "T_det";
    case Branch::joint:
      return "T_joint";
    case Branch::isolation:
      return "T_iso";
    case Branch::t1:
      return "T1";
    case Branch::t2:
      return "T2";
    case Branch::t3:
      return "T3";
    case Branch::t4:
      return "T4";
    case Branch::t5:
      return "T5";
    case Branch::t6:
      return "T6";
    case Branch::intersection:
      return "T_int";
  }
  return "?";
}

namespace {

void check_level(double v, const char* name) {
  if (!(v > 0.0 && v <= 1.0)) throw invalid_level(std::string(name) + " must lie in (0, 1]");
}

}  // namespace

Thresholds calibrate(const ErrorLevels& levels, const std::vector<FamilyCounts>& counts, TestKind kind,
                     const PriorPsi& psi, bool local_subsystems) {
  if (counts.empty()) throw invalid_model("no units");
  check_level(levels.gamma, "gamma");
  check_level(levels.delta, "delta");
  check_level(levels.alpha, "alpha");
  check_level(levels.beta, "beta");

  const double n = static_cast<double>(counts.size());
  double a = 0, b = 0, c = 0, d = 0, ac = 0, bd = 0;
  for (const auto& k : counts) {
    a = std::max(a, static_cast<double>(k.a));
    b = std::max(b, static_cast<double>(k.b));
    c = std::max(c, static_cast<double>(k.c));
    d = std::max(d, static_cast<double>(k.d));
    ac = std::max(ac, static_cast<double>(std::max(k.a, k.c)));
    bd = std::max(bd, static_cast<double>(std::max(k.b, k.d)));
  }

  Thresholds th;
  auto isolation_pair = [&](double gamma, double delta) {
    th.logA = std::log(a * n / delta);
    th.logB = std::log(b * n / gamma);
  };
  switch (kind) {
    case TestKind::isolation: {
      if (psi.is_fixed_size()) {
        double m = std::min(levels.gamma, levels.delta);
        isolation_pair(m, m);
      } else {
        isolation_pair(levels.gamma, levels.delta);
      }
      break;
    }
    case TestKind::detection:
      th.logC = std::log(c / levels.beta);
      th.logD = std::log(d * n / levels.alpha);
      break;
    case TestKind::joint:
      isolation_pair(levels.gamma, levels.delta);
      th.logC = std::log(c / levels.beta);
      th.logD = std::log(d * n / levels.alpha);
      break;
    case TestKind::fwer:
      if (local_subsystems) {
        isolation_pair(levels.gamma, levels.delta);
      } else {
        th.logA = std::log(ac * (n + 1.0) / levels.delta);
        th.logB = std::log(bd * n / levels.gamma);
      }
      th.logC = th.logA;
      th.logD = th.logB;
      break;
  }
  th.logA = std::max(th.logA, 0.0);
  th.logB = std::max(th.logB, 0.0);
  th.logC = std::max(th.logC, 0.0);
  th.logD = std::max(th.logD, 0.0);
  return th;
}

Thresholds calibrate(const ErrorLevels& levels, const Enumerator& en, TestKind kind) {
  const auto& spec = en.spec();
  check_kind(spec, kind);
  std::vector<FamilyCounts> counts;
  bool local = true;
  for (int e = 0; e < spec.unit_count(); ++e) {
    counts.push_back(family_counts(en, e));
    local = local && spec.det_subsystems[e] == spec.units[e].members && spec.iso_subsystems[e] == spec.units[e].members;
  }
  return calibrate(levels, counts, kind, spec.psi, local);
}

void check_kind(const ProblemSpec& spec, TestKind kind) {
  const bool empty_allowed = psi_contains(spec.psi, 0, spec.units);
  if (kind == TestKind::isolation && empty_allowed) {
    throw invalid_model("the isolation test needs a prior that excludes the empty set");
  }
  if (kind != TestKind::isolation && !empty_allowed) {
    throw invalid_model("detection, joint and fwer tests need a prior that contains the empty set");
  }
}

OutcomeFlags classify_outcome(UnitSet truth, UnitSet decision) {
  OutcomeFlags f;
  f.false_alarm = truth == 0 && decision != 0;
  f.missed_detection = truth != 0 && decision == 0;
  f.false_positive = truth != 0 && (decision & ~truth) != 0;
  f.false_negative = decision != 0 && (truth & ~decision) != 0;
  return f;
}

namespace {

bool outside(double v, const Thresholds& th) { return v <= -th.logA || v >= th.logB; }

bool lex_less(const ProblemSpec& spec, int a, int b) { return spec.units[a] < spec.units[b]; }

// Decision of the detection-only test when a detection statistic crosses.
UnitSet detection_decision(const ProblemSpec& spec, const StatisticSnapshot& snap) {
  if (snap.d_iso != 0 && psi_contains(spec.psi, snap.d_iso, spec.units)) return snap.d_iso;
  std::vector<int> by_iso(spec.unit_count());
  for (int e = 0; e < spec.unit_count(); ++e) by_iso[e] = e;
  std::sort(by_iso.begin(), by_iso.end(), [&](int a, int b) {
    if (snap.iso[a] != snap.iso[b]) return snap.iso[a] > snap.iso[b];
    return lex_less(spec, a, b);
  });
  UnitSet best = 0;
  UnitSet prefix = 0;
  for (int e : by_iso) {
    if (!(snap.iso[e] > 0.0)) break;
    prefix |= unit_set_of(e);
    if (psi_contains(spec.psi, prefix, spec.units)) best = prefix;
  }
  if (best != 0) return best;
  UnitSet single = unit_set_of(by_iso.front());
  if (psi_contains(spec.psi, single, spec.units)) return single;
  if (spec.psi.variant == PriorPsi::Variant::explicit_sets) {
    for (UnitSet A : spec.psi.sets) {
      if (A != 0) return A;
    }
  }
  return single;
}

std::pair<Branch, UnitSet> resolve(bool null_stop, Branch signal, UnitSet decision, TiePriority tie) {
  if (null_stop && signal != Branch::none) {
    return tie == TiePriority::null_first ? std::pair{Branch::t0, UnitSet{0}} : std::pair{signal, decision};
  }
  if (null_stop) return {Branch::t0, 0};
  if (signal != Branch::none) return {signal, decision};
  return {Branch::none, 0};
}

}  // namespace

std::pair<Branch, UnitSet> generic_check(const ProblemSpec& spec, const StatisticSnapshot& snap, const Thresholds& th,
                                         TestKind kind, TiePriority tie) {
  const int n_units = spec.unit_count();
  auto iso_all_outside = [&] {
    for (int e = 0; e < n_units; ++e) {
      if (!outside(snap.iso[e], th)) return false;
    }
    return true;
  };
  if (kind == TestKind::isolation) {
    if (psi_contains(spec.psi, snap.d_iso, spec.units) && iso_all_outside()) return {Branch::isolation, snap.d_iso};
    return {Branch::none, 0};
  }
  bool null_stop = true;
  bool any_det = false;
  for (int e = 0; e < n_units; ++e) {
    null_stop = null_stop && snap.det[e] <= -th.logC;
    any_det = any_det || snap.det[e] >= th.logD;
  }
  if (kind == TestKind::detection) {
    if (!any_det) return resolve(null_stop, Branch::none, 0, tie);
    return resolve(null_stop, Branch::detection, detection_decision(spec, snap), tie);
  }
  bool joint = any_det && snap.d_iso != 0 && psi_contains(spec.psi, snap.d_iso, spec.units) && iso_all_outside();
  return resolve(null_stop, joint ? Branch::joint : Branch::none, snap.d_iso, tie);
}

namespace {

template <class Check>
StopDecision drive(const StatisticEngine& engine, const ObservationSource& source, long max_n, bool full,
                   Check&& check) {
  const int K = engine.spec().K;
  SufficientStats stats(K);
  StatisticSnapshot snap;
  Eigen::VectorXd x(K);
  StopDecision out;
  for (long n = 1; n <= max_n; ++n) {
    source(x);
    stats.add(x);
    if (full) {
      engine.snapshot(stats, snap);
    } else {
      engine.local_snapshot(stats, snap);
    }
    auto [branch, decision] = check(snap);
    if (branch != Branch::none) {
      out.stopped = true;
      out.stopped_at = n;
      out.decision = decision;
      out.triggered_by = branch;
      return out;
    }
  }
  out.stopped_at = max_n;
  return out;
}

ObservationSource replay(const Eigen::MatrixXd& path) {
  auto column = std::make_shared<Eigen::Index>(0);
  return [&path, column](Eigen::VectorXd& x) { x = path.col((*column)++); };
}

}  // namespace

StopDecision run_generic(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                         const ObservationSource& source, const RunOptions& options) {
  const auto& spec = engine.spec();
  check_kind(spec, kind);
  const bool need_det = kind != TestKind::isolation;
  if ((need_det && !engine.options().detection) || !engine.options().isolation) {
    throw invalid_model("engine lacks the statistics this test needs");
  }
  return drive(engine, source, options.max_n, true,
               [&](const StatisticSnapshot& snap) { return generic_check(spec, snap, th, kind, options.tie); });
}

StopDecision run_generic(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                         const Eigen::MatrixXd& path, const RunOptions& options) {
  RunOptions capped = options;
  capped.max_n = std::min<long>(options.max_n, path.cols());
  return run_generic(engine, th, kind, replay(path), capped);
}

namespace {

bool all_units_are_subsystems(const ProblemSpec& spec, const std::vector<SourceSet>& subs) {
  for (int e = 0; e < spec.unit_count(); ++e) {
    if (subs[e] != spec.units[e].members) return false;
  }
  return true;
}

bool all_full(const ProblemSpec& spec, const std::vector<SourceSet>& subs) {
  for (const auto& s : subs) {
    if (static_cast<int>(s.size()) != spec.K) return false;
  }
  return true;
}

}  // namespace

FastIndependentRule::FastIndependentRule(const ProblemSpec& spec, TestKind kind) : K_(spec.K) {
  validate(spec);
  if (spec.kind != ProblemKind::mean_shift) throw unsupported("closed-form rules need a mean-shift problem");
  if (spec.units != singleton_units(spec.K)) throw unsupported("closed-form rules need every source as a unit");
  for (const auto& r : spec.grid.correlations) {
    if (r.size() != 1) throw unsupported("closed-form rules need independent sources");
  }
  if (spec.psi.variant == PriorPsi::Variant::bounded) {
    l_ = spec.psi.l;
    u_ = spec.psi.u;
  } else if (spec.psi.variant == PriorPsi::Variant::powerset) {
    l_ = 0;
    u_ = spec.K;
  } else {
    throw unsupported("closed-form rules need a bounded prior");
  }
  check_kind(spec, kind);

  const bool iso_unit = all_units_are_subsystems(spec, spec.iso_subsystems);
  const bool iso_full = all_full(spec, spec.iso_subsystems);
  const bool det_unit = all_units_are_subsystems(spec, spec.det_subsystems);
  det_full_ = all_full(spec, spec.det_subsystems);
  if (!iso_unit && !iso_full) throw unsupported("isolation subsystems must all be units or all be full");

  switch (kind) {
    case TestKind::isolation:
      if (iso_unit) {
        form_ = Form::iso_local;
      } else if (l_ == u_) {
        if (u_ >= K_) throw unsupported("the gap rule needs u < K");
        form_ = Form::iso_gap;
      } else {
        form_ = Form::iso_range;
      }
      return;
    case TestKind::detection:
      if (u_ < 1) throw unsupported("detection needs u >= 1");
      if (!det_unit && !det_full_) throw unsupported("detection subsystems must all be units or all be full");
      form_ = Form::detection;
      return;
    case TestKind::joint:
      if (!(det_full_ && iso_full)) throw unsupported("the joint closed form needs full subsystems");
      if (K_ < 2) throw unsupported("the joint closed form needs K >= 2");
      form_ = Form::joint_full;
      return;
    case TestKind::fwer:
      if (det_full_ && iso_full) {
        if (K_ < 2) throw unsupported("the joint closed form needs K >= 2");
        form_ = Form::joint_full;
      } else if (det_unit && iso_unit && u_ == K_) {
        form_ = Form::fwer_intersection;
      } else if (det_unit && iso_full && u_ < K_) {
        if (K_ < 2) throw unsupported("the closed form needs K >= 2");
        form_ = Form::fwer_local_full;
      } else {
        throw unsupported("no closed form for this fwer configuration");
      }
      return;
  }
}

UnitSet FastIndependentRule::top(const StatisticSnapshot& snap, int count) const {
  UnitSet out = 0;
  for (int j = 0; j < count; ++j) out |= unit_set_of(snap.order[j]);
  return out;
}

std::pair<Branch, UnitSet> FastIndependentRule::check(const StatisticSnapshot& snap, const Thresholds& th,
                                                      TiePriority tie) const {
  const double a = th.logA, b = th.logB, c = th.logC, d = th.logD;
  const int p = snap.p;
  const int l = l_, u = u_;
  auto lam = [&](int j) { return snap.ordered(j); };
  auto all_outside = [&] {
    return std::all_of(snap.local.begin(), snap.local.end(), [&](double v) { return v <= -a || v >= b; });
  };
  auto top_sum = [&](int k) {
    double acc = 0.0;
    for (int i = 1; i <= k; ++i) acc += lam(i);
    return acc;
  };
  const UnitSet signal_decision = top(snap, std::min(std::max(l, std::max(p, 1)), u));

  switch (form_) {
    case Form::iso_local:
      if (l <= p && p <= u && all_outside()) return {Branch::isolation, top(snap, p)};
      return {Branch::none, 0};

    case Form::iso_gap:
      if (lam(u) - lam(u + 1) >= std::max(a, b)) return {Branch::isolation, top(snap, u)};
      return {Branch::none, 0};

    case Form::iso_range: {
      const UnitSet dec = top(snap, std::min(std::max(l, p), u));
      if (p < l && lam(l) - lam(l + 1) >= std::max(a, b)) return {Branch::t1, dec};
      if (p == l && lam(l + 1) <= std::min(-a, lam(l) - b)) return {Branch::t2, dec};
      if (u == K_) {
        if (p > l && all_outside()) return {Branch::t3, dec};
        return {Branch::none, 0};
      }
      if (l < p && p < u && all_outside()) return {Branch::t4, dec};
      if (p == u && lam(u) >= std::max(b, a + lam(u + 1))) return {Branch::t5, dec};
      if (p > u && lam(u) - lam(u + 1) >= std::max(a, b)) return {Branch::t6, dec};
      return {Branch::none, 0};
    }

    case Form::detection: {
      const bool null_stop = lam(1) <= -c;
      double stat = lam(1);
      if (det_full_ && p >= 1) stat = top_sum(std::min(p, u));
      return resolve(null_stop, stat >= d ? Branch::detection : Branch::none, signal_decision, tie);
    }

    case Form::joint_full: {
      const bool null_stop = lam(1) <= -c;
      Branch sig = Branch::none;
      if (u == 1) {
        if (lam(1) >= d && lam(1) - lam(2) >= std::max(a, b)) sig = Branch::t1;
      } else if (lam(1) >= d && lam(2) <= std::min(-a, lam(1) - b)) {
        sig = Branch::t1;
      } else if (u == K_) {
        if (p > 1 && top_sum(p) >= d && all_outside()) sig = Branch::t2;
      } else if (1 < p && p < u && top_sum(p) >= d && all_outside()) {
        sig = Branch::t3;
      } else if (p == u && top_sum(u) >= d && lam(u) >= std::max(b, a + lam(u + 1))) {
        sig = Branch::t4;
      } else if (p > u && top_sum(u) >= d && lam(u) - lam(u + 1) >= std::max(a, b)) {
        sig = Branch::t5;
      }
      return resolve(null_stop, sig, signal_decision, tie);
    }

    case Form::fwer_intersection: {
      if (!all_outside()) return {Branch::none, 0};
      if (p == 0) return {Branch::t0, 0};
      return {Branch::intersection, top(snap, p)};
    }

    case Form::fwer_local_full: {
      const bool null_stop = lam(1) <= -a;
      Branch sig = Branch::none;
      if (u == 1) {
        if (lam(1) >= b && lam(1) - lam(2) >= std::max(a, b)) sig = Branch::t1;
      } else if (lam(1) >= b && lam(2) <= std::min(-a, lam(1) - b)) {
        sig = Branch::t1;
      } else if (1 < p && p < u && lam(1) >= b && all_outside()) {
        sig = Branch::t2;
      } else if (p == u && lam(u) >= std::max(b, a + lam(u + 1))) {
        sig = Branch::t3;
      } else if (p > u && lam(1) >= b && lam(u) - lam(u + 1) >= std::max(a, b)) {
        sig = Branch::t4;
      }
      return resolve(null_stop, sig, signal_decision, tie);
    }
  }
  return {Branch::none, 0};
}

StopDecision run_fast_independent(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                                  const ObservationSource& source, const RunOptions& options) {
  FastIndependentRule rule(engine.spec(), kind);
  return drive(engine, source, options.max_n, false,
               [&](const StatisticSnapshot& snap) { return rule.check(snap, th, options.tie); });
}

StopDecision run_fast_independent(const StatisticEngine& engine, const Thresholds& th, TestKind kind,
                                  const Eigen::MatrixXd& path, const RunOptions& options) {
  RunOptions capped = options;
  capped.max_n = std::min<long>(options.max_n, path.cols());
  return run_fast_independent(engine, th, kind, replay(path), capped);
}

double max_disjoint_logproduct(const std::vector<std::pair<Unit, double>>& positive_units) {
  std::vector<int> sources;
  for (const auto& [unit, w] : positive_units) {
    if (w > 0.0) sources.insert(sources.end(), unit.members.begin(), unit.members.end());
  }
  std::sort(sources.begin(), sources.end());
  sources.erase(std::unique(sources.begin(), sources.end()), sources.end());
  if (sources.size() > 24) throw unsupported("more than 24 sources in the disjoint-family search");
  const int n = static_cast<int>(sources.size());
  if (n == 0) return 0.0;

  // Units grouped by their lowest source, as masks over the compressed sources.
  std::vector<std::vector<std::pair<std::uint32_t, double>>> by_low(n);
  for (const auto& [unit, w] : positive_units) {
    if (!(w > 0.0)) continue;
    std::uint32_t mask = 0;
    for (int k : unit.members) {
      auto pos = std::lower_bound(sources.begin(), sources.end(), k) - sources.begin();
      mask |= std::uint32_t{1} << pos;
    }
    by_low[std::countr_zero(mask)].emplace_back(mask, w);
  }

  std::unordered_map<std::uint32_t, double> memo;
  auto solve = [&](auto&& self, std::uint32_t avail) -> double {
    if (avail == 0) return 0.0;
    if (auto it = memo.find(avail); it != memo.end()) return it->second;
    const int low = std::countr_zero(avail);
    double best = self(self, avail & (avail - 1));
    for (const auto& [mask, w] : by_low[low]) {
      if ((mask & avail) == mask) best = std::max(best, w + self(self, avail & ~mask));
    }
    memo.emplace(avail, best);
    return best;
  };
  const std::uint32_t all = n == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << n) - 1;
  return solve(solve, all);
}

double disjoint_detection_llr(const std::vector<Unit>& units, const std::vector<double>& local, int e) {
  const auto& own = units.at(static_cast<std::size_t>(e)).members;
  std::vector<std::pair<Unit, double>> rest;
  for (std::size_t f = 0; f < units.size(); ++f) {
    if (static_cast<int>(f) == e || !(local[f] > 0.0)) continue;
    const bool overlaps = std::any_of(units[f].members.begin(), units[f].members.end(), [&](int k) {
      return std::binary_search(own.begin(), own.end(), k);
    });
    if (!overlaps) rest.emplace_back(units[f], local[f]);
  }
  return local[static_cast<std::size_t>(e)] + max_disjoint_logproduct(rest);
}

}  // namespace seqdai
