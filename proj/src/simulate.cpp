#include <seqdai/simulate.hpp>

#include <seqdai/errors.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>

namespace seqdai {

std::mt19937_64 replication_rng(std::uint64_t seed, std::uint64_t rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(rep), static_cast<std::uint32_t>(rep >> 32)};
  return std::mt19937_64(seq);
}

GaussianSampler::GaussianSampler(const GaussianGlobal& truth) : mean_(truth.mean) {
  if (truth.cov.rows() != truth.mean.size() || truth.cov.cols() != truth.mean.size()) {
    throw invalid_model("law has wrong dimension");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(truth.cov);
  if (llt.info() != Eigen::Success) throw numerical_error("covariance cannot be factorized");
  chol_ = llt.matrixL();
}

void GaussianSampler::operator()(std::mt19937_64& rng, Eigen::VectorXd& x) const {
  std::normal_distribution<double> normal;
  const Eigen::Index m = mean_.size();
  Eigen::VectorXd z(m);
  for (Eigen::Index i = 0; i < m; ++i) z(i) = normal(rng);
  x = mean_ + chol_.triangularView<Eigen::Lower>() * z;
}

Eigen::VectorXd sample_obs(const GaussianGlobal& truth, std::mt19937_64& rng) {
  const GaussianSampler sampler(truth);
  Eigen::VectorXd x;
  sampler(rng, x);
  return x;
}

namespace {

Rate rate_of(long count, long n) {
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double r = static_cast<double>(count) / static_cast<double>(n);
  return {r, std::sqrt(r * (1.0 - r) / static_cast<double>(n))};
}

}  // namespace

Aggregate aggregate_trials(const std::vector<TrialResult>& trials) {
  Aggregate a;
  a.reps = static_cast<long>(trials.size());
  long stopped = 0, fa = 0, md = 0, fp = 0, fn = 0;
  double sum = 0.0;
  for (const auto& t : trials) {
    if (!t.stop.stopped) {
      ++a.nostop;
      continue;
    }
    ++stopped;
    sum += static_cast<double>(t.stop.stopped_at);
    fa += t.flags.false_alarm;
    md += t.flags.missed_detection;
    fp += t.flags.false_positive;
    fn += t.flags.false_negative;
  }
  if (stopped == 0) {
    a.ess = a.ess_se = std::numeric_limits<double>::quiet_NaN();
  } else {
    a.ess = sum / static_cast<double>(stopped);
    double ss = 0.0;
    for (const auto& t : trials) {
      if (!t.stop.stopped) continue;
      const double d = static_cast<double>(t.stop.stopped_at) - a.ess;
      ss += d * d;
    }
    a.ess_se = stopped > 1 ? std::sqrt(ss / static_cast<double>(stopped - 1)) / std::sqrt(static_cast<double>(stopped))
                           : 0.0;
  }
  a.false_alarm = rate_of(fa, stopped);
  a.missed_detection = rate_of(md, stopped);
  a.false_positive = rate_of(fp, stopped);
  a.false_negative = rate_of(fn, stopped);
  a.ratio = std::numeric_limits<double>::quiet_NaN();
  return a;
}

Experiment::Experiment(ExperimentConfig config) : config_(std::move(config)), sampler_(config_.truth) {
  if (config_.replications < 1) throw invalid_model("replications must be at least 1");
  if (config_.max_n < 1) throw invalid_model("max_n must be at least 1");
  en_ = std::make_shared<const Enumerator>(config_.spec);
  const auto& spec = en_->spec();
  check_kind(spec, config_.kind);
  if (config_.truth.mean.size() != spec.K) throw invalid_model("truth has wrong dimension");
  truth_signals_ = signal_set(config_.truth, spec);
  if (!psi_contains(spec.psi, truth_signals_, spec.units)) throw invalid_model("the true law is not in P_Psi");

  switch (config_.rule) {
    case RuleChoice::generic:
      fast_ = false;
      break;
    case RuleChoice::fast:
      static_cast<void>(FastIndependentRule{spec, config_.kind});
      fast_ = true;
      break;
    case RuleChoice::automatic:
      try {
        static_cast<void>(FastIndependentRule{spec, config_.kind});
        fast_ = true;
      } catch (const unsupported&) {
        fast_ = false;
      }
      break;
  }
  EngineOptions opts;
  if (fast_) {
    opts.detection = false;
    opts.isolation = false;
  } else {
    opts.detection = config_.kind != TestKind::isolation;
  }
  engine_ = std::make_unique<StatisticEngine>(en_, opts);
}

Experiment::~Experiment() = default;

TrialResult Experiment::run_trial(const Thresholds& th, std::uint64_t rep) const {
  auto rng = replication_rng(config_.seed, rep);
  ObservationSource source = [&](Eigen::VectorXd& x) { sampler_(rng, x); };
  RunOptions opts;
  opts.max_n = config_.max_n;
  opts.tie = config_.tie;
  TrialResult r;
  r.stop = fast_ ? run_fast_independent(*engine_, th, config_.kind, source, opts)
                 : run_generic(*engine_, th, config_.kind, source, opts);
  if (r.stop.stopped) r.flags = classify_outcome(truth_signals_, r.stop.decision);
  return r;
}

std::vector<TrialResult> Experiment::run_trials(const Thresholds& th) const {
  const long n = config_.replications;
  std::vector<TrialResult> out(static_cast<std::size_t>(n));
  int threads = config_.threads;
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = static_cast<int>(std::min<long>(threads, n));

  std::atomic<long> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (long i = next++; i < n; i = next++) {
        out[static_cast<std::size_t>(i)] = run_trial(th, static_cast<std::uint64_t>(i));
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = n;
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

Aggregate Experiment::run(const ErrorLevels& levels) const {
  const Thresholds th = calibrate(levels, *en_, config_.kind);
  Aggregate a = aggregate_trials(run_trials(th));
  a.variant = config_.variant;
  a.levels = levels;
  try {
    a.first_order = first_order_ess(config_.truth, *en_, levels, config_.kind);
    a.has_first_order = true;
    a.ratio = a.ess / a.first_order.value;
  } catch (const degenerate_problem&) {
    a.has_first_order = false;
  }
  return a;
}

Aggregate run_experiment(const ExperimentConfig& config) { return Experiment(config).run(config.levels); }

std::vector<Aggregate> sweep(const ExperimentConfig& config, const std::vector<ErrorLevels>& grid) {
  if (grid.empty()) throw invalid_level("empty level grid");
  Experiment ex(config);
  std::vector<Aggregate> rows;
  for (const auto& levels : grid) rows.push_back(ex.run(levels));
  return rows;
}

namespace {

std::string describe(const StopDecision& s, const std::vector<Unit>& units) {
  std::ostringstream os;
  if (s.stopped) {
    os << "T=" << s.stopped_at << " D=" << to_string(s.decision, units) << " via " << to_string(s.triggered_by);
  } else {
    os << "no stop by " << s.stopped_at;
  }
  return os.str();
}

std::string form_name(FastIndependentRule::Form f) {
  using F = FastIndependentRule::Form;
  switch (f) {
    case F::iso_local:
      return "isolation, unit subsystems";
    case F::iso_gap:
      return "gap rule";
    case F::iso_range:
      return "gap-intersection rule";
    case F::detection:
      return "detection rule";
    case F::joint_full:
      return "joint rule, full subsystems";
    case F::fwer_intersection:
      return "intersection rule";
    case F::fwer_local_full:
      return "intersection rule, full isolation subsystems";
  }
  return "?";
}

}  // namespace

EquivalenceReport equivalence_harness(const ProblemSpec& spec, TestKind kind, const Thresholds& th,
                                      const GaussianGlobal& truth, long n_paths, std::uint64_t seed, long max_n) {
  FastIndependentRule rule(spec, kind);
  EquivalenceReport report;
  report.form = form_name(rule.form());
  StatisticEngine engine(spec);
  GaussianSampler sampler(truth);
  if (sampler.dim() != spec.K) throw invalid_model("truth has wrong dimension");
  RunOptions opts;
  opts.max_n = max_n;
  for (long p = 0; p < n_paths; ++p) {
    auto rng_a = replication_rng(seed, static_cast<std::uint64_t>(p));
    auto rng_b = replication_rng(seed, static_cast<std::uint64_t>(p));
    auto g = run_generic(engine, th, kind, [&](Eigen::VectorXd& x) { sampler(rng_a, x); }, opts);
    auto f = run_fast_independent(engine, th, kind, [&](Eigen::VectorXd& x) { sampler(rng_b, x); }, opts);
    ++report.paths;
    const bool same = g.stopped == f.stopped && g.stopped_at == f.stopped_at && g.decision == f.decision;
    if (!same) {
      ++report.mismatches;
      if (report.details.size() < 10) {
        report.details.push_back("path " + std::to_string(p) + ": generic " + describe(g, spec.units) + ", fast " +
                                 describe(f, spec.units));
      }
    }
  }
  return report;
}

void sort_rows(std::vector<Aggregate>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const Aggregate& a, const Aggregate& b) {
    return std::tie(a.variant, a.levels.alpha, a.levels.beta, a.levels.gamma, a.levels.delta) <
           std::tie(b.variant, b.levels.alpha, b.levels.beta, b.levels.gamma, b.levels.delta);
  });
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_csv(std::ostream& out, const std::vector<Aggregate>& rows) {
  out << "test_variant,alpha,beta,gamma,delta,reps,ess,ess_se,fa_rate,fa_se,md_rate,md_se,fp_rate,fp_se,fn_rate,fn_se,"
         "nostop,first_order_ess,ratio\n";
  for (const auto& r : rows) {
    const double fo = r.has_first_order ? r.first_order.value : std::numeric_limits<double>::quiet_NaN();
    out << r.variant << ',' << format_number(r.levels.alpha) << ',' << format_number(r.levels.beta) << ','
        << format_number(r.levels.gamma) << ',' << format_number(r.levels.delta) << ',' << r.reps << ','
        << format_number(r.ess) << ',' << format_number(r.ess_se) << ',' << format_number(r.false_alarm.rate) << ','
        << format_number(r.false_alarm.se) << ',' << format_number(r.missed_detection.rate) << ','
        << format_number(r.missed_detection.se) << ',' << format_number(r.false_positive.rate) << ','
        << format_number(r.false_positive.se) << ',' << format_number(r.false_negative.rate) << ','
        << format_number(r.false_negative.se) << ',' << r.nostop << ',' << format_number(fo) << ','
        << format_number(r.ratio) << '\n';
  }
}

}  // namespace seqdai
