#include <seqdai/likelihood.hpp>

#include <seqdai/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace seqdai {

void SufficientStats::add(const Eigen::VectorXd& x) {
  if (x.size() != sum.size()) throw invalid_observation("dimension mismatch");
  if (!x.allFinite()) throw invalid_observation("non-finite value");
  ++n;
  sum += x;
  outer_sum.selfadjointView<Eigen::Lower>().rankUpdate(x);
  outer_sum.triangularView<Eigen::StrictlyUpper>() = outer_sum.transpose();
}

SufficientStats update(SufficientStats stats, const Eigen::VectorXd& x) {
  stats.add(x);
  return stats;
}

namespace {

const double log_two_pi = std::log(2.0 * std::numbers::pi);

struct CompiledLaw {
  int m = 0;
  double c0 = 0.0;  // -(m log 2pi + log det) / 2
  double q = 0.0;   // mu^T P mu
  std::vector<double> prec;
  std::vector<double> w;  // P mu
};

CompiledLaw compile(const GaussianGlobal& law) {
  CompiledLaw c;
  c.m = static_cast<int>(law.mean.size());
  Eigen::LLT<Eigen::MatrixXd> llt(law.cov);
  if (llt.info() != Eigen::Success) throw numerical_error("covariance is not positive definite");
  double logdet = 0.0;
  for (int a = 0; a < c.m; ++a) {
    double d = llt.matrixL()(a, a);
    if (!(d > 0.0)) throw numerical_error("singular covariance");
    logdet += 2.0 * std::log(d);
  }
  Eigen::MatrixXd prec = llt.solve(Eigen::MatrixXd::Identity(c.m, c.m));
  prec = 0.5 * (prec + prec.transpose());
  Eigen::VectorXd w = prec * law.mean;
  c.c0 = -0.5 * (c.m * log_two_pi + logdet);
  c.q = law.mean.dot(w);
  c.prec.assign(prec.data(), prec.data() + c.m * c.m);
  c.w.assign(w.data(), w.data() + c.m);
  return c;
}

double eval(const CompiledLaw& c, double n, const double* S, const double* O) {
  double quad = n * c.q;
  for (int a = 0; a < c.m; ++a) {
    quad -= 2.0 * c.w[a] * S[a];
    const double* pa = &c.prec[a * c.m];
    const double* oa = &O[a * c.m];
    for (int b = 0; b < c.m; ++b) quad += pa[b] * oa[b];
  }
  return n * c.c0 - 0.5 * quad;
}

void extract(const SourceSet& s, const SufficientStats& stats, std::vector<double>& S, std::vector<double>& O) {
  const auto m = s.size();
  S.resize(m);
  O.resize(m * m);
  for (std::size_t a = 0; a < m; ++a) {
    S[a] = stats.sum(s[a]);
    for (std::size_t b = 0; b < m; ++b) O[a * m + b] = stats.outer_sum(s[a], s[b]);
  }
}

double family_max(const RestrictedFamily& fam, const SufficientStats& stats, double offset) {
  if (fam.laws.empty()) throw invalid_model("empty hypothesis family");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& law : fam.laws) best = std::max(best, log_likelihood(law, fam.sources, stats) - offset);
  return best;
}

}  // namespace

double log_likelihood(const GaussianGlobal& marginal, const SourceSet& s, const SufficientStats& stats) {
  if (static_cast<std::size_t>(marginal.mean.size()) != s.size()) {
    throw invalid_model("law and subsystem differ in size");
  }
  CompiledLaw c = compile(marginal);
  std::vector<double> S, O;
  extract(s, stats, S, O);
  return eval(c, static_cast<double>(stats.n), S.data(), O.data());
}

double log_glr(const RestrictedFamily& num, const RestrictedFamily& den, const SufficientStats& stats,
               const GaussianGlobal& reference) {
  if (num.sources != den.sources) throw invalid_model("families live on different subsystems");
  double ref = log_likelihood(reference, num.sources, stats);
  return family_max(num, stats, ref) - family_max(den, stats, ref);
}

double log_glr(const RestrictedFamily& num, const RestrictedFamily& den, const SufficientStats& stats) {
  const auto m = static_cast<Eigen::Index>(num.sources.size());
  GaussianGlobal ref{Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Identity(m, m)};
  return log_glr(num, den, stats, ref);
}

GaussianGlobal default_reference(const ProblemSpec& spec, const SourceSet& s) {
  const auto m = static_cast<Eigen::Index>(s.size());
  GaussianGlobal ref{Eigen::VectorXd::Zero(m), Eigen::MatrixXd::Zero(m, m)};
  for (Eigen::Index a = 0; a < m; ++a) {
    const auto& v = spec.grid.variances[s[a]];
    ref.cov(a, a) = *std::min_element(v.begin(), v.end());
  }
  return ref;
}

double StatisticSnapshot::ordered(int j) const {
  if (j < 1 || j > static_cast<int>(order.size())) return -std::numeric_limits<double>::infinity();
  return local[order[j - 1]];
}

struct StatisticEngine::Table {
  SourceSet sources;
  std::vector<CompiledLaw> laws;
  std::map<std::vector<double>, int> index;
  std::size_t offset = 0;
};

struct StatisticEngine::Families {
  int local_table = -1;
  std::vector<int> local_g, local_h;
  int det_table = -1;
  std::vector<int> det_g, det_h;
  int iso_table = -1;
  std::vector<int> iso_g, iso_h;
};

StatisticEngine::~StatisticEngine() = default;

StatisticEngine::StatisticEngine(const ProblemSpec& spec, EngineOptions options)
    : StatisticEngine(std::make_shared<const Enumerator>(spec), options) {}

int StatisticEngine::table_for(const SourceSet& s) {
  for (std::size_t t = 0; t < tables_.size(); ++t) {
    if (tables_[t].sources == s) return static_cast<int>(t);
  }
  tables_.push_back(Table{s, {}, {}, 0});
  return static_cast<int>(tables_.size()) - 1;
}

std::vector<int> StatisticEngine::add_laws(int table, const std::vector<GaussianGlobal>& laws) {
  auto& t = tables_[table];
  std::vector<int> idx;
  for (const auto& law : laws) {
    std::vector<double> key(law.mean.data(), law.mean.data() + law.mean.size());
    key.insert(key.end(), law.cov.data(), law.cov.data() + law.cov.size());
    auto it = t.index.find(key);
    if (it == t.index.end()) {
      it = t.index.emplace(std::move(key), static_cast<int>(t.laws.size())).first;
      t.laws.push_back(compile(law));
    }
    idx.push_back(it->second);
  }
  return idx;
}

namespace {

// Marginal hypotheses of a single unit, straight from the grid.
void unit_families(const ProblemSpec& spec, int e, std::vector<GaussianGlobal>& g, std::vector<GaussianGlobal>& h) {
  const auto& mem = spec.units[e].members;
  const auto& grid = spec.grid;
  if (spec.kind == ProblemKind::mean_shift) {
    int k = mem[0];
    for (double mu : grid.means[k]) {
      for (double v : grid.variances[k]) {
        GaussianGlobal law{Eigen::VectorXd::Constant(1, mu), Eigen::MatrixXd::Constant(1, 1, v)};
        (mu != 0.0 ? g : h).push_back(law);
      }
    }
    return;
  }
  int i = mem[0], j = mem[1];
  for (double r : grid.correlations[pair_index(i, j, spec.K)]) {
    for (double mi : grid.means[i]) {
      for (double mj : grid.means[j]) {
        for (double vi : grid.variances[i]) {
          for (double vj : grid.variances[j]) {
            GaussianGlobal law;
            law.mean = Eigen::Vector2d(mi, mj);
            law.cov.resize(2, 2);
            const double c = r * std::sqrt(vi) * std::sqrt(vj);
            law.cov << vi, c, c, vj;
            (r != 0.0 ? g : h).push_back(law);
          }
        }
      }
    }
  }
}

}  // namespace

StatisticEngine::StatisticEngine(std::shared_ptr<const Enumerator> en, EngineOptions options)
    : en_(std::move(en)), options_(options) {
  const auto& spec = en_->spec();
  const int n_units = spec.unit_count();
  families_.resize(n_units);
  for (int e = 0; e < n_units; ++e) {
    auto& f = families_[e];
    const std::string name = to_string(spec.units[e]);

    std::vector<GaussianGlobal> g, h;
    unit_families(spec, e, g, h);
    if (g.empty() || h.empty()) throw invalid_model("empty local family for unit " + name);
    f.local_table = table_for(spec.units[e].members);
    f.local_g = add_laws(f.local_table, g);
    f.local_h = add_laws(f.local_table, h);

    if (options_.detection) {
      const auto& s = spec.det_subsystems[e];
      auto num = en_->enumerate(HypothesisClass::signal_at(e), s);
      auto den = en_->enumerate(HypothesisClass::global_null(), s);
      if (num.laws.empty() || den.laws.empty()) throw invalid_model("empty detection family for unit " + name);
      f.det_table = table_for(s);
      f.det_g = add_laws(f.det_table, num.laws);
      f.det_h = add_laws(f.det_table, den.laws);
    }
    if (options_.isolation) {
      const auto& s = spec.iso_subsystems[e];
      auto num = en_->enumerate(HypothesisClass::signal_at(e), s);
      auto den = en_->enumerate(HypothesisClass::null_at(e), s);
      if (num.laws.empty() || den.laws.empty()) throw invalid_model("empty isolation family for unit " + name);
      f.iso_table = table_for(s);
      f.iso_g = add_laws(f.iso_table, num.laws);
      f.iso_h = add_laws(f.iso_table, den.laws);
    }
  }
  std::size_t offset = 0;
  for (auto& t : tables_) {
    t.offset = offset;
    offset += t.laws.size();
    t.index.clear();
  }
  std::vector<int> by_lex(n_units);
  for (int e = 0; e < n_units; ++e) by_lex[e] = e;
  std::sort(by_lex.begin(), by_lex.end(), [&](int a, int b) { return spec.units[a] < spec.units[b]; });
  lex_rank_.resize(n_units);
  for (int r = 0; r < n_units; ++r) lex_rank_[by_lex[r]] = r;
}

void StatisticEngine::evaluate(int table, const SufficientStats& stats, std::vector<double>& out) const {
  thread_local std::vector<double> S, O;
  const auto& t = tables_[table];
  extract(t.sources, stats, S, O);
  const double n = static_cast<double>(stats.n);
  for (std::size_t i = 0; i < t.laws.size(); ++i) out[t.offset + i] = eval(t.laws[i], n, S.data(), O.data());
}

double StatisticEngine::best(int table, const std::vector<int>& idx, const std::vector<double>& ll) const {
  const std::size_t offset = tables_[table].offset;
  double b = -std::numeric_limits<double>::infinity();
  for (int i : idx) b = std::max(b, ll[offset + i]);
  return b;
}

std::size_t StatisticEngine::law_count() const {
  return tables_.empty() ? 0 : tables_.back().offset + tables_.back().laws.size();
}

double StatisticEngine::llr_local(int e, const SufficientStats& stats) const {
  const auto& f = families_.at(e);
  std::vector<double> ll(law_count());
  evaluate(f.local_table, stats, ll);
  return best(f.local_table, f.local_g, ll) - best(f.local_table, f.local_h, ll);
}

double StatisticEngine::llr_det(int e, const SufficientStats& stats) const {
  const auto& f = families_.at(e);
  if (f.det_table < 0) throw invalid_model("detection statistics were not compiled");
  std::vector<double> ll(law_count());
  evaluate(f.det_table, stats, ll);
  return best(f.det_table, f.det_g, ll) - best(f.det_table, f.det_h, ll);
}

double StatisticEngine::llr_iso(int e, const SufficientStats& stats) const {
  const auto& f = families_.at(e);
  if (f.iso_table < 0) throw invalid_model("isolation statistics were not compiled");
  std::vector<double> ll(law_count());
  evaluate(f.iso_table, stats, ll);
  return best(f.iso_table, f.iso_g, ll) - best(f.iso_table, f.iso_h, ll);
}

StatisticSnapshot StatisticEngine::snapshot(const SufficientStats& stats) const {
  StatisticSnapshot out;
  snapshot(stats, out);
  return out;
}

void StatisticEngine::sort_units(StatisticSnapshot& snap) const {
  const int n_units = static_cast<int>(snap.local.size());
  snap.order.resize(n_units);
  for (int e = 0; e < n_units; ++e) snap.order[e] = e;
  std::sort(snap.order.begin(), snap.order.end(), [&](int a, int b) {
    if (snap.local[a] != snap.local[b]) return snap.local[a] > snap.local[b];
    return lex_rank_[a] < lex_rank_[b];
  });
  snap.p = static_cast<int>(std::count_if(snap.local.begin(), snap.local.end(), [](double v) { return v > 0.0; }));
}

void StatisticEngine::local_snapshot(const SufficientStats& stats, StatisticSnapshot& out) const {
  thread_local std::vector<double> ll;
  ll.resize(law_count());
  const int n_units = static_cast<int>(families_.size());
  out.n = stats.n;
  out.local.resize(n_units);
  out.det.clear();
  out.iso.clear();
  out.d_iso = 0;
  for (int e = 0; e < n_units; ++e) {
    const auto& f = families_[e];
    evaluate(f.local_table, stats, ll);
    out.local[e] = best(f.local_table, f.local_g, ll) - best(f.local_table, f.local_h, ll);
  }
  sort_units(out);
}

void StatisticEngine::snapshot(const SufficientStats& stats, StatisticSnapshot& out) const {
  thread_local std::vector<double> ll;
  ll.resize(law_count());
  for (int t = 0; t < static_cast<int>(tables_.size()); ++t) evaluate(t, stats, ll);

  const int n_units = static_cast<int>(families_.size());
  out.n = stats.n;
  out.local.resize(n_units);
  out.det.resize(options_.detection ? n_units : 0);
  out.iso.resize(options_.isolation ? n_units : 0);
  out.d_iso = 0;
  for (int e = 0; e < n_units; ++e) {
    const auto& f = families_[e];
    out.local[e] = best(f.local_table, f.local_g, ll) - best(f.local_table, f.local_h, ll);
    if (options_.detection) out.det[e] = best(f.det_table, f.det_g, ll) - best(f.det_table, f.det_h, ll);
    if (options_.isolation) {
      out.iso[e] = best(f.iso_table, f.iso_g, ll) - best(f.iso_table, f.iso_h, ll);
      if (out.iso[e] > 0.0) out.d_iso |= unit_set_of(e);
    }
  }
  sort_units(out);
}

}  // namespace seqdai
