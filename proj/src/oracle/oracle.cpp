#include <seqdai/oracle.hpp>

#include <seqdai/errors.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

namespace seqdai::oracle {

namespace {

int pair_slot(int i, int j, int K) {
  // pairs (0,1), (0,2), ..., (0,K-1), (1,2), ...
  int slot = 0;
  for (int a = 0; a < i; ++a) slot += K - 1 - a;
  return slot + (j - i - 1);
}

bool pd(const Eigen::MatrixXd& cov) {
  Eigen::VectorXd d = cov.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd corr = d.asDiagonal() * cov * d.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(corr);
  return es.eigenvalues().minCoeff() > 1e-10;
}

UnitSet signals_of(const GaussianGlobal& P, const ProblemSpec& spec) {
  UnitSet A = 0;
  for (int e = 0; e < spec.unit_count(); ++e) {
    const auto& m = spec.units[e].members;
    bool on = false;
    if (spec.kind == ProblemKind::mean_shift) {
      for (int k : m) on = on || P.mean(k) != 0.0;
    } else {
      on = P.cov(m[0], m[1]) != 0.0;
    }
    if (on) A |= UnitSet{1} << e;
  }
  return A;
}

bool in_psi(const ProblemSpec& spec, UnitSet A) {
  const auto& psi = spec.psi;
  std::vector<int> members;
  for (int e = 0; e < spec.unit_count(); ++e) {
    if ((A >> e) & 1U) members.push_back(e);
  }
  const int n = static_cast<int>(members.size());
  switch (psi.variant) {
    case PriorPsi::Variant::powerset:
      return true;
    case PriorPsi::Variant::bounded:
      return psi.l <= n && n <= psi.u;
    case PriorPsi::Variant::explicit_sets:
      for (UnitSet s : psi.sets) {
        if (s == A) return true;
      }
      return false;
    case PriorPsi::Variant::disjoint:
      for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
          const auto& x = spec.units[members[a]].members;
          const auto& y = spec.units[members[b]].members;
          for (int k : x) {
            if (std::find(y.begin(), y.end(), k) != y.end()) return false;
          }
        }
      }
      return true;
    case PriorPsi::Variant::cluster:
      for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
          std::set<int> sd;
          for (int k : spec.units[members[a]].members) sd.insert(k);
          for (int k : spec.units[members[b]].members) {
            if (!sd.erase(k)) sd.insert(k);
          }
          for (int f = 0; f < spec.unit_count(); ++f) {
            std::set<int> uf(spec.units[f].members.begin(), spec.units[f].members.end());
            if (uf == sd && !((A >> f) & 1U)) return false;
          }
        }
      }
      return true;
  }
  return false;
}

bool member(const ProblemSpec& spec, const HypothesisClass& cls, UnitSet A) {
  switch (cls.kind) {
    case HypothesisClass::Kind::global_null:
      return A == 0;
    case HypothesisClass::Kind::null_at:
      return A != 0 && !((A >> cls.unit) & 1U) && in_psi(spec, A);
    case HypothesisClass::Kind::signal_at:
      return ((A >> cls.unit) & 1U) && in_psi(spec, A);
  }
  return false;
}

std::vector<double> key_of(const GaussianGlobal& law) {
  std::vector<double> key(law.mean.data(), law.mean.data() + law.mean.size());
  key.insert(key.end(), law.cov.data(), law.cov.data() + law.cov.size());
  return key;
}

}  // namespace

double global_space_size(const ProblemSpec& spec) {
  double n = 1.0;
  for (const auto& g : spec.grid.means) n *= static_cast<double>(g.size());
  for (const auto& g : spec.grid.variances) n *= static_cast<double>(g.size());
  for (const auto& g : spec.grid.correlations) n *= static_cast<double>(g.size());
  return n;
}

std::vector<GaussianGlobal> all_global_laws(const ProblemSpec& spec) {
  const int K = spec.K;
  const int pairs = K * (K - 1) / 2;
  std::vector<int> radix;
  for (int k = 0; k < K; ++k) radix.push_back(static_cast<int>(spec.grid.means[k].size()));
  for (int k = 0; k < K; ++k) radix.push_back(static_cast<int>(spec.grid.variances[k].size()));
  for (int p = 0; p < pairs; ++p) radix.push_back(static_cast<int>(spec.grid.correlations[p].size()));
  std::vector<int> digit(radix.size(), 0);
  std::vector<GaussianGlobal> out;
  while (true) {
    GaussianGlobal law{Eigen::VectorXd(K), Eigen::MatrixXd(K, K)};
    for (int k = 0; k < K; ++k) {
      law.mean(k) = spec.grid.means[k][digit[k]];
      law.cov(k, k) = spec.grid.variances[k][digit[K + k]];
    }
    for (int i = 0; i < K; ++i) {
      for (int j = i + 1; j < K; ++j) {
        const int slot = pair_slot(i, j, K);
        const double r = spec.grid.correlations[slot][digit[2 * K + slot]];
        law.cov(i, j) = law.cov(j, i) = r * std::sqrt(law.cov(i, i)) * std::sqrt(law.cov(j, j));
      }
    }
    if (pd(law.cov)) out.push_back(law);
    std::size_t d = 0;
    while (d < digit.size() && ++digit[d] == radix[d]) digit[d++] = 0;
    if (d == digit.size()) break;
  }
  return out;
}

std::vector<GaussianGlobal> restricted_family(const ProblemSpec& spec, const HypothesisClass& cls,
                                              const SourceSet& s) {
  if (global_space_size(spec) > 1e6) throw unsupported("brute-force space exceeds 10^6 laws");
  std::set<std::vector<double>> seen;
  std::vector<GaussianGlobal> out;
  for (const auto& P : all_global_laws(spec)) {
    if (!member(spec, cls, signals_of(P, spec))) continue;
    const int m = static_cast<int>(s.size());
    GaussianGlobal q{Eigen::VectorXd(m), Eigen::MatrixXd(m, m)};
    for (int a = 0; a < m; ++a) {
      q.mean(a) = P.mean(s[a]);
      for (int b = 0; b < m; ++b) q.cov(a, b) = P.cov(s[a], s[b]);
    }
    if (seen.insert(key_of(q)).second) out.push_back(q);
  }
  return out;
}

bool same_laws(const std::vector<GaussianGlobal>& a, const std::vector<GaussianGlobal>& b, double tol) {
  if (a.size() != b.size()) return false;
  auto rounded = [](const GaussianGlobal& law) {
    std::vector<long long> key;
    for (double v : key_of(law)) key.push_back(std::llround(v * 1e8));
    return key;
  };
  auto sorted = [&](const std::vector<GaussianGlobal>& v) {
    std::vector<std::pair<std::vector<long long>, const GaussianGlobal*>> out;
    for (const auto& law : v) out.emplace_back(rounded(law), &law);
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
    return out;
  };
  auto sa = sorted(a), sb = sorted(b);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const auto& x = *sa[i].second;
    const auto& y = *sb[i].second;
    if (x.mean.size() != y.mean.size()) return false;
    if ((x.mean - y.mean).cwiseAbs().maxCoeff() > tol) return false;
    if ((x.cov - y.cov).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

double kl(const GaussianGlobal& P, const GaussianGlobal& Q) {
  const double m = static_cast<double>(P.mean.size());
  const Eigen::MatrixXd qinv = Q.cov.inverse();
  const Eigen::VectorXd d = Q.mean - P.mean;
  return 0.5 * (std::log(Q.cov.determinant() / P.cov.determinant()) - m + (qinv * P.cov).trace() + d.dot(qinv * d));
}

double min_kl(const GaussianGlobal& Ps, const std::vector<GaussianGlobal>& family) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : family) best = std::min(best, kl(Ps, q));
  return best;
}

double max_disjoint_weight(const std::vector<std::pair<SourceSet, double>>& units) {
  std::function<double(std::size_t, std::set<int>&)> go = [&](std::size_t i, std::set<int>& used) -> double {
    if (i == units.size()) return 0.0;
    double best = go(i + 1, used);
    const auto& [members, w] = units[i];
    bool free = std::none_of(members.begin(), members.end(), [&](int k) { return used.count(k) > 0; });
    if (free) {
      for (int k : members) used.insert(k);
      best = std::max(best, w + go(i + 1, used));
      for (int k : members) used.erase(k);
    }
    return best;
  };
  std::set<int> used;
  return go(0, used);
}

}  // namespace seqdai::oracle
