#include "kmgpt/meta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "kmgpt/errors.hpp"

namespace kmgpt::meta {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

double log_half_normal(double x, double scale) { return std::log(2.0) + log_normal(x, 0.0, scale); }

double quantile_sorted(const std::vector<double>& v, double q) {
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

int IntervalGrid::index_of(double t) const {
  if (t <= cuts.front()) return 0;
  const auto it = std::lower_bound(cuts.begin() + 1, cuts.end(), t);
  if (it == cuts.end()) throw Error(ErrorCode::GridTooShort, "time " + std::to_string(t) + " beyond grid end");
  return static_cast<int>(it - cuts.begin()) - 1;
}

IntervalGrid make_grid(std::vector<double> cuts) {
  if (cuts.empty() || cuts.front() != 0.0) cuts.insert(cuts.begin(), 0.0);
  if (cuts.size() < 2) throw Error(ErrorCode::InvalidArgument, "grid needs at least one interval");
  for (std::size_t i = 0; i < cuts.size(); ++i) {
    if (!std::isfinite(cuts[i])) throw Error(ErrorCode::NonFiniteInput, "non-finite cut point");
    if (i > 0 && !(cuts[i] > cuts[i - 1]))
      throw Error(ErrorCode::InvalidArgument, "cut points must be strictly increasing");
  }
  return IntervalGrid{std::move(cuts)};
}

IntervalGrid auto_grid(const std::vector<std::vector<recon::IPDRecord>>& studies, int J) {
  if (J < 1) throw Error(ErrorCode::InvalidArgument, "J must be positive");
  std::vector<double> events;
  double tmax = 0;
  for (const auto& s : studies)
    for (const auto& r : s) {
      if (!std::isfinite(r.time) || r.time < 0) throw Error(ErrorCode::NonFiniteInput, "bad record time");
      tmax = std::max(tmax, r.time);
      if (r.status) events.push_back(r.time);
    }
  if (!(tmax > 0)) throw Error(ErrorCode::InvalidArgument, "no follow-up time in data");
  std::sort(events.begin(), events.end());
  std::vector<double> cuts{0.0};
  if (!events.empty()) {
    for (int k = 1; k < J; ++k) {
      const double c = quantile_sorted(events, static_cast<double>(k) / J);
      if (c > cuts.back() && c < tmax) cuts.push_back(c);
    }
  }
  cuts.push_back(tmax);
  return IntervalGrid{std::move(cuts)};
}

StudySufficientStats bin_ipd(const std::vector<std::vector<recon::IPDRecord>>& studies,
                             const IntervalGrid& grid) {
  const int J = grid.intervals();
  StudySufficientStats st;
  for (const auto& s : studies) {
    std::vector<double> d(J, 0.0), E(J, 0.0);
    for (const auto& r : s) {
      if (!std::isfinite(r.time) || r.time < 0) throw Error(ErrorCode::NonFiniteInput, "bad record time");
      if (r.time > grid.end())
        throw Error(ErrorCode::GridTooShort, "record at " + std::to_string(r.time) + " beyond grid end");
      for (int j = 0; j < J && grid.cuts[j] < r.time; ++j)
        E[j] += std::min(r.time, grid.cuts[j + 1]) - grid.cuts[j];
      if (r.status) d[grid.index_of(r.time)] += 1;
    }
    st.d.push_back(std::move(d));
    st.E.push_back(std::move(E));
  }
  return st;
}

double MetaParams::phi() const { return std::tanh(psi); }

namespace {

void check_shapes(const MetaParams& p, const StudySufficientStats& stats) {
  const int S = stats.studies(), J = stats.intervals();
  bool ok = static_cast<int>(p.alpha.size()) == S && static_cast<int>(p.a.size()) == J &&
            static_cast<int>(p.mu.size()) == J && static_cast<int>(p.sigma.size()) == J;
  for (const auto& row : p.alpha) ok = ok && static_cast<int>(row.size()) == J;
  if (!ok) throw Error(ErrorCode::InvalidArgument, "parameter shapes do not match the data");
  auto finite = [](double x) { return std::isfinite(x); };
  bool fin = finite(p.sigma_a) && finite(p.tau_ar) && finite(p.psi);
  for (const auto& row : p.alpha) fin = fin && std::all_of(row.begin(), row.end(), finite);
  for (const auto* v : {&p.a, &p.mu, &p.sigma}) fin = fin && std::all_of(v->begin(), v->end(), finite);
  if (!fin) throw Error(ErrorCode::NonFiniteInput, "non-finite parameter");
  bool pos = p.sigma_a > 0 && p.tau_ar > 0;
  for (double s : p.sigma) pos = pos && s > 0;
  if (!pos) throw Error(ErrorCode::NonFiniteInput, "standard deviations must be positive");
}

double ar1_log_density(const std::vector<double>& mu, double tau, double phi) {
  double lp = log_normal(mu[0], 0.0, tau / std::sqrt(1.0 - phi * phi));
  for (std::size_t j = 1; j < mu.size(); ++j) lp += log_normal(mu[j], phi * mu[j - 1], tau);
  return lp;
}

}  // namespace

double log_posterior(const MetaParams& p, const StudySufficientStats& stats, const IntervalGrid& grid,
                     const PriorConfig& prior) {
  check_shapes(p, stats);
  if (grid.intervals() != stats.intervals())
    throw Error(ErrorCode::InvalidArgument, "grid and stats disagree on interval count");
  const int S = stats.studies(), J = stats.intervals();
  double lp = 0;
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < J; ++j) {
      const double al = p.alpha[s][j];
      lp += stats.d[s][j] * al - std::exp(al) * stats.E[s][j];
      if (!prior.flat_alpha) lp += log_normal(al, p.a[j], p.sigma[j]);
    }
  for (int j = 0; j < J; ++j) lp += log_normal(p.a[j], p.mu[j], p.sigma_a);
  lp += ar1_log_density(p.mu, p.tau_ar, p.phi());
  for (double s : p.sigma) lp += log_half_normal(s, prior.sigma_scale);
  lp += log_half_normal(p.sigma_a, prior.sigma_a_scale);
  lp += log_half_normal(p.tau_ar, prior.tau_scale);
  lp += log_normal(p.psi, 0.0, prior.psi_sd);
  return lp;
}

double log_posterior_unconstrained(const MetaParams& p, const StudySufficientStats& stats,
                                   const IntervalGrid& grid, const PriorConfig& prior) {
  double lp = log_posterior(p, stats, grid, prior);
  for (double s : p.sigma) lp += std::log(s);
  return lp + std::log(p.sigma_a) + std::log(p.tau_ar);
}

MetaParams initial_params(const StudySufficientStats& stats, const PriorConfig& prior) {
  const int S = stats.studies(), J = stats.intervals();
  MetaParams p;
  p.alpha.assign(S, std::vector<double>(J));
  p.a.assign(J, 0.0);
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < J; ++j) {
      p.alpha[s][j] = std::log((stats.d[s][j] + 0.5) / (stats.E[s][j] + 1.0));
      p.a[j] += p.alpha[s][j] / S;
    }
  p.mu = p.a;
  // Half-normal median is scale * 0.6745.
  constexpr double kHalfNormalMedian = 0.674489750196;
  p.sigma.assign(J, prior.sigma_scale * kHalfNormalMedian);
  p.sigma_a = prior.sigma_a_scale * kHalfNormalMedian;
  p.tau_ar = prior.tau_scale * kHalfNormalMedian;
  p.psi = 0;
  return p;
}

std::vector<std::string> scalar_names(int S, int J) {
  std::vector<std::string> n;
  for (int s = 0; s < S; ++s)
    for (int j = 0; j < J; ++j) n.push_back("alpha[" + std::to_string(s) + "," + std::to_string(j) + "]");
  for (int j = 0; j < J; ++j) n.push_back("a[" + std::to_string(j) + "]");
  for (int j = 0; j < J; ++j) n.push_back("mu[" + std::to_string(j) + "]");
  for (int j = 0; j < J; ++j) n.push_back("sigma[" + std::to_string(j) + "]");
  n.push_back("sigma_a");
  n.push_back("tau_ar");
  n.push_back("psi");
  return n;
}

std::vector<double> flatten(const MetaParams& p) {
  std::vector<double> v;
  for (const auto& row : p.alpha) v.insert(v.end(), row.begin(), row.end());
  v.insert(v.end(), p.a.begin(), p.a.end());
  v.insert(v.end(), p.mu.begin(), p.mu.end());
  v.insert(v.end(), p.sigma.begin(), p.sigma.end());
  v.push_back(p.sigma_a);
  v.push_back(p.tau_ar);
  v.push_back(p.psi);
  return v;
}

namespace {

// Random-walk proposal scale adapted on the log scale during warmup.
struct Adaptive {
  double log_scale = std::log(0.5);
  long proposals = 0, accepts = 0;

  double scale() const { return std::exp(log_scale); }
  void record(bool accepted, bool adapting, int iter, double target) {
    ++proposals;
    accepts += accepted;
    if (adapting) log_scale += ((accepted ? 1.0 : 0.0) - target) / std::pow(iter + 1.0, 0.6);
  }
};

class Chain {
 public:
  Chain(const StudySufficientStats& st, const SamplerConfig& cfg, std::uint64_t seed)
      : st_(st), cfg_(cfg), pr_(cfg.prior), rng_(seed), S_(st.studies()), J_(st.intervals()) {
    p_ = initial_params(st, pr_);
    ad_alpha_.assign(static_cast<std::size_t>(S_ * J_), {});
    ad_sigma_.assign(J_, {});
    ad_shift2_.assign(J_, {});
    ad_shift3_.assign(J_, {});
  }

  void run(std::vector<MetaParams>& out, double& acceptance) {
    const int total = cfg_.warmup + cfg_.draws;
    out.reserve(cfg_.draws);
    for (int it = 0; it < total; ++it) {
      const bool adapting = it < cfg_.warmup;
      if (it == cfg_.warmup) reset_counts();
      step(it, adapting);
      if (!finite_state())
        throw Error(ErrorCode::SamplerFailure, "chain diverged to a non-finite state at iteration " +
                                                   std::to_string(it));
      if (!adapting) out.push_back(p_);
    }
    long props = 0, acc = 0;
    auto add = [&](const Adaptive& a) {
      props += a.proposals;
      acc += a.accepts;
    };
    for (const auto& a : ad_alpha_) add(a);
    for (const auto* v : {&ad_sigma_, &ad_shift2_, &ad_shift3_})
      for (const auto& a : *v) add(a);
    add(ad_sa_);
    add(ad_tau_);
    add(ad_psi_);
    acceptance = props ? static_cast<double>(acc) / props : 0.0;
  }

 private:
  void reset_counts() {
    for (auto& a : ad_alpha_) a.proposals = a.accepts = 0;
    for (auto* v : {&ad_sigma_, &ad_shift2_, &ad_shift3_})
      for (auto& a : *v) a.proposals = a.accepts = 0;
    for (auto* a : {&ad_sa_, &ad_tau_, &ad_psi_}) a->proposals = a->accepts = 0;
  }

  bool finite_state() const {
    for (double x : flatten(p_))
      if (!std::isfinite(x)) return false;
    return true;
  }

  double normal() { return norm_(rng_); }
  bool accept(double log_ratio) { return std::log(unif_(rng_)) < log_ratio; }

  // Metropolis update of one scalar on its current scale.
  template <typename LogTarget>
  void rw(double& x, Adaptive& ad, const LogTarget& f, int it, bool adapting) {
    const double old = x, f0 = f(old);
    const double prop = old + ad.scale() * normal();
    const double f1 = f(prop);
    const bool ok = std::isfinite(f1) && accept(f1 - f0);
    x = ok ? prop : old;
    ad.record(ok, adapting, it, cfg_.target_accept);
  }

  void step(int it, bool adapting) {
    // alpha_sj: likelihood plus its Gaussian layer.
    for (int s = 0; s < S_; ++s)
      for (int j = 0; j < J_; ++j) {
        const double d = st_.d[s][j], E = st_.E[s][j];
        const double a = p_.a[j], sg = p_.sigma[j];
        const bool flat = pr_.flat_alpha;
        rw(p_.alpha[s][j], ad_alpha_[static_cast<std::size_t>(s * J_ + j)],
           [&](double x) {
             double v = d * x - std::exp(x) * E;
             if (!flat) v -= 0.5 * (x - a) * (x - a) / (sg * sg);
             return v;
           },
           it, adapting);
      }
    // a_j: conjugate Gaussian.
    for (int j = 0; j < J_; ++j) {
      double prec = 1.0 / (p_.sigma_a * p_.sigma_a);
      double num = p_.mu[j] * prec;
      if (!pr_.flat_alpha) {
        const double w = 1.0 / (p_.sigma[j] * p_.sigma[j]);
        for (int s = 0; s < S_; ++s) num += p_.alpha[s][j] * w;
        prec += S_ * w;
      }
      p_.a[j] = num / prec + normal() / std::sqrt(prec);
    }
    sample_mu();
    shift_moves(it, adapting);
    // log sigma_j.
    for (int j = 0; j < J_; ++j) {
      double ls = std::log(p_.sigma[j]);
      double ss = 0;
      if (!pr_.flat_alpha)
        for (int s = 0; s < S_; ++s) ss += (p_.alpha[s][j] - p_.a[j]) * (p_.alpha[s][j] - p_.a[j]);
      const int n = pr_.flat_alpha ? 0 : S_;
      const double sc = pr_.sigma_scale;
      rw(ls, ad_sigma_[j],
         [&](double l) {
           const double s2 = std::exp(2 * l);
           return -n * l - 0.5 * ss / s2 - 0.5 * s2 / (sc * sc) + l;
         },
         it, adapting);
      p_.sigma[j] = std::exp(ls);
    }
    // log sigma_a.
    {
      double ss = 0;
      for (int j = 0; j < J_; ++j) ss += (p_.a[j] - p_.mu[j]) * (p_.a[j] - p_.mu[j]);
      double ls = std::log(p_.sigma_a);
      const double sc = pr_.sigma_a_scale;
      rw(ls, ad_sa_,
         [&](double l) {
           const double s2 = std::exp(2 * l);
           return -J_ * l - 0.5 * ss / s2 - 0.5 * s2 / (sc * sc) + l;
         },
         it, adapting);
      p_.sigma_a = std::exp(ls);
    }
    // log tau and psi through the AR(1) density.
    {
      double lt = std::log(p_.tau_ar);
      const double phi = p_.phi(), sc = pr_.tau_scale;
      rw(lt, ad_tau_,
         [&](double l) {
           const double t = std::exp(l);
           return ar1_log_density(p_.mu, t, phi) - 0.5 * t * t / (sc * sc) + l;
         },
         it, adapting);
      p_.tau_ar = std::exp(lt);
      const double tau = p_.tau_ar, sd = pr_.psi_sd;
      rw(p_.psi, ad_psi_,
         [&](double ps) {
           const double ph = std::tanh(ps);
           if (!(std::abs(ph) < 1)) return -std::numeric_limits<double>::infinity();
           return ar1_log_density(p_.mu, tau, ph) - 0.5 * ps * ps / (sd * sd);
         },
         it, adapting);
    }
  }

  // Joint location shifts along the ridges the one-at-a-time updates cross
  // slowly: (alpha_.j, a_j) leaves the alpha | a layer unchanged, and
  // (alpha_.j, a_j, mu_j) leaves both Gaussian layers unchanged.
  void shift_moves(int it, bool adapting) {
    for (int j = 0; j < J_; ++j) {
      auto lik = [&](double delta) {
        double v = 0;
        for (int s = 0; s < S_; ++s) {
          const double x = p_.alpha[s][j] + delta;
          v += st_.d[s][j] * x - std::exp(x) * st_.E[s][j];
        }
        return v;
      };
      {
        const double aj = p_.a[j], mj = p_.mu[j], sa = p_.sigma_a;
        double delta = 0;
        rw(delta, ad_shift2_[j],
           [&](double d) { return lik(d) - 0.5 * (aj + d - mj) * (aj + d - mj) / (sa * sa); }, it, adapting);
        for (int s = 0; s < S_; ++s) p_.alpha[s][j] += delta;
        p_.a[j] += delta;
      }
      {
        const double tau = p_.tau_ar, phi = p_.phi();
        std::vector<double> mu = p_.mu;
        const double m0 = mu[j];
        double delta = 0;
        rw(delta, ad_shift3_[j],
           [&](double d) {
             mu[j] = m0 + d;
             return lik(d) + ar1_log_density(mu, tau, phi);
           },
           it, adapting);
        for (int s = 0; s < S_; ++s) p_.alpha[s][j] += delta;
        p_.a[j] += delta;
        p_.mu[j] += delta;
      }
    }
  }

  // mu | a, sigma_a, tau, phi is Gaussian with tridiagonal precision.
  void sample_mu() {
    const double phi = p_.phi();
    const double it2 = 1.0 / (p_.tau_ar * p_.tau_ar), ia2 = 1.0 / (p_.sigma_a * p_.sigma_a);
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(J_, J_);
    Eigen::VectorXd b(J_);
    for (int j = 0; j < J_; ++j) {
      // Stationary AR(1) precision: 1 at the ends, 1 + phi^2 inside.
      double ar = (j == 0 || j == J_ - 1) ? 1.0 : 1.0 + phi * phi;
      if (J_ == 1) ar = 1.0 - phi * phi;
      Q(j, j) = ia2 + it2 * ar;
      if (j + 1 < J_) Q(j, j + 1) = Q(j + 1, j) = -phi * it2;
      b(j) = p_.a[j] * ia2;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(Q);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SamplerFailure, "mu precision not positive definite");
    const Eigen::VectorXd mean = llt.solve(b);
    Eigen::VectorXd z(J_);
    for (int j = 0; j < J_; ++j) z(j) = normal();
    const Eigen::VectorXd dev = llt.matrixU().solve(z);
    for (int j = 0; j < J_; ++j) p_.mu[j] = mean(j) + dev(j);
  }

  const StudySufficientStats& st_;
  const SamplerConfig& cfg_;
  const PriorConfig& pr_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> norm_{0.0, 1.0};
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  int S_, J_;
  MetaParams p_;
  std::vector<Adaptive> ad_alpha_, ad_sigma_, ad_shift2_, ad_shift3_;
  Adaptive ad_sa_, ad_tau_, ad_psi_;
};

std::uint64_t chain_seed(std::uint64_t seed, int chain) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(chain + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) throw Error(ErrorCode::InvalidArgument, "chains too short for split R-hat");
    halves.emplace_back(c.begin(), c.begin() + static_cast<long>(h));
    halves.emplace_back(c.end() - static_cast<long>(h), c.end());
  }
  const double n = static_cast<double>(halves.front().size());
  const double m = static_cast<double>(halves.size());
  std::vector<double> means;
  double W = 0;
  for (const auto& c : halves) {
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / n;
    double v = 0;
    for (double x : c) v += (x - mean) * (x - mean);
    W += v / (n - 1);
    means.push_back(mean);
  }
  W /= m;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double B = 0;
  for (double x : means) B += (x - grand) * (x - grand);
  B *= n / (m - 1);
  if (W <= 0) return B <= 0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size(), n = chains.front().size();
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "chains too short for ESS");
  std::vector<double> means(m), vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / static_cast<double>(n);
    double v = 0;
    for (double x : chains[c]) v += (x - means[c]) * (x - means[c]);
    vars[c] = v / static_cast<double>(n - 1);
  }
  const double W = std::accumulate(vars.begin(), vars.end(), 0.0) / static_cast<double>(m);
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double B = 0;
  for (double x : means) B += (x - grand) * (x - grand);
  B = m > 1 ? B * static_cast<double>(n) / static_cast<double>(m - 1) : 0.0;
  const double var_plus = (static_cast<double>(n) - 1) / static_cast<double>(n) * W + B / static_cast<double>(n);
  if (!(var_plus > 0)) return static_cast<double>(m * n);

  auto autocov = [&](std::size_t lag) {
    double acc = 0;
    for (std::size_t c = 0; c < m; ++c) {
      double s = 0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (chains[c][i] - means[c]) * (chains[c][i + lag] - means[c]);
      acc += s / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };
  auto rho = [&](std::size_t lag) { return 1.0 - (W - autocov(lag)) / var_plus; };

  // Sum of positive pair sums, forced monotone.
  double tau = -1.0;  // rho_0 + 2 * sum rho_t = -1 + 2 * sum of pairs
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (pair <= 0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

double MetaPosterior::max_rhat() const {
  double r = 0;
  for (const auto& d : diagnostics) r = std::max(r, d.rhat);
  return r;
}

double MetaPosterior::min_ess() const {
  double e = std::numeric_limits<double>::infinity();
  for (const auto& d : diagnostics) e = std::min(e, d.ess);
  return e;
}

MetaPosterior sample_posterior(const StudySufficientStats& stats, const IntervalGrid& grid,
                               const SamplerConfig& cfg) {
  if (cfg.chains < 1 || cfg.draws < 4 || cfg.warmup < 0)
    throw Error(ErrorCode::InvalidArgument, "need >= 1 chain and >= 4 draws");
  if (stats.studies() < 1 || stats.intervals() != grid.intervals())
    throw Error(ErrorCode::InvalidArgument, "stats do not match the grid");
  for (int s = 0; s < stats.studies(); ++s)
    for (int j = 0; j < stats.intervals(); ++j) {
      const double d = stats.d[s][j], E = stats.E[s][j];
      if (!std::isfinite(d) || !std::isfinite(E) || d < 0 || E < 0 || (E == 0 && d > 0))
        throw Error(ErrorCode::NonFiniteInput, "invalid sufficient statistics");
    }
  const auto t0 = std::chrono::steady_clock::now();
  MetaPosterior post;
  post.config = cfg;
  std::vector<std::vector<MetaParams>> per_chain(cfg.chains);
  post.acceptance.assign(cfg.chains, 0.0);
  std::vector<std::exception_ptr> errors(cfg.chains);
  auto run_chain = [&](int c) {
    try {
      Chain chain(stats, cfg, chain_seed(cfg.seed, c));
      chain.run(per_chain[c], post.acceptance[c]);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const int threads = cfg.threads > 0 ? std::min(cfg.threads, cfg.chains) : cfg.chains;
  for (int base = 0; base < cfg.chains; base += threads) {
    std::vector<std::thread> pool;
    for (int c = base; c < std::min(cfg.chains, base + threads); ++c) pool.emplace_back(run_chain, c);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (auto& c : per_chain) post.draws.insert(post.draws.end(), c.begin(), c.end());

  const auto names = scalar_names(stats.studies(), stats.intervals());
  std::vector<std::vector<std::vector<double>>> series(names.size(),
                                                       std::vector<std::vector<double>>(cfg.chains));
  for (int c = 0; c < cfg.chains; ++c)
    for (const auto& d : per_chain[c]) {
      const auto v = flatten(d);
      for (std::size_t k = 0; k < v.size(); ++k) series[k][c].push_back(v[k]);
    }
  for (std::size_t k = 0; k < names.size(); ++k)
    post.diagnostics.push_back({names[k], split_rhat(series[k]), effective_sample_size(series[k])});
  post.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return post;
}

double survival_at(const std::vector<double>& lh, const IntervalGrid& grid, double t) {
  if (t < 0) throw Error(ErrorCode::InvalidArgument, "negative time");
  if (t > grid.end()) throw Error(ErrorCode::GridTooShort, "evaluation beyond grid end");
  double H = 0;
  for (int j = 0; j < grid.intervals() && grid.cuts[j] < t; ++j)
    H += std::exp(lh[j]) * (std::min(t, grid.cuts[j + 1]) - grid.cuts[j]);
  return std::exp(-H);
}

double rmst_closed_form(const std::vector<double>& lh, const IntervalGrid& grid, double horizon) {
  if (horizon < 0) throw Error(ErrorCode::InvalidArgument, "negative horizon");
  if (horizon > grid.end()) throw Error(ErrorCode::GridTooShort, "horizon beyond grid end");
  double area = 0, S = 1;
  for (int j = 0; j < grid.intervals() && grid.cuts[j] < horizon; ++j) {
    const double w = std::min(horizon, grid.cuts[j + 1]) - grid.cuts[j];
    const double lam = std::exp(lh[j]);
    const double x = lam * w;
    // S * (1 - e^{-lam w}) / lam, with the lam -> 0 limit S * w.
    area += x > 1e-12 ? S * -std::expm1(-x) / lam : S * w;
    S *= std::exp(-x);
  }
  return area;
}

std::optional<double> median_time(const std::vector<double>& lh, const IntervalGrid& grid) {
  const double target = std::log(2.0);
  double H = 0;
  for (int j = 0; j < grid.intervals(); ++j) {
    const double lam = std::exp(lh[j]);
    const double Hn = H + lam * grid.width(j);
    if (Hn >= target) return grid.cuts[j] + (target - H) / lam;
    H = Hn;
  }
  return std::nullopt;
}

namespace {

Band band_of(double t, std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return {t, quantile_sorted(v, 0.5), quantile_sorted(v, 0.025), quantile_sorted(v, 0.975)};
}

}  // namespace

SurvivalBands pooled_survival(const MetaPosterior& post, const IntervalGrid& grid,
                              const std::vector<double>& times) {
  if (post.draws.empty()) throw Error(ErrorCode::InvalidArgument, "empty posterior");
  for (double t : times)
    if (t > grid.end()) throw Error(ErrorCode::GridTooShort, "evaluation beyond grid end");
  SurvivalBands out;
  const std::size_t S = post.draws.front().alpha.size();
  out.studies.resize(S);
  std::vector<double> vals(post.draws.size());
  for (double t : times) {
    for (std::size_t k = 0; k < post.draws.size(); ++k) vals[k] = survival_at(post.draws[k].a, grid, t);
    out.pooled.push_back(band_of(t, vals));
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t k = 0; k < post.draws.size(); ++k)
        vals[k] = survival_at(post.draws[k].alpha[s], grid, t);
      out.studies[s].push_back(band_of(t, vals));
    }
  }
  return out;
}

RmstSummary rmst(const MetaPosterior& post, const IntervalGrid& grid, double horizon) {
  if (post.draws.empty()) throw Error(ErrorCode::InvalidArgument, "empty posterior");
  if (horizon > grid.end()) throw Error(ErrorCode::GridTooShort, "horizon beyond grid end");
  RmstSummary r;
  r.horizon = horizon;
  for (const auto& d : post.draws) r.values.push_back(rmst_closed_form(d.a, grid, horizon));
  std::vector<double> sorted = r.values;
  std::sort(sorted.begin(), sorted.end());
  r.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
  r.q025 = quantile_sorted(sorted, 0.025);
  r.q50 = quantile_sorted(sorted, 0.5);
  r.q975 = quantile_sorted(sorted, 0.975);
  return r;
}

PooledMedian estimate_pooled_median(const MetaPosterior& post, const IntervalGrid& grid) {
  PooledMedian m;
  std::vector<double> v;
  for (const auto& d : post.draws) {
    if (auto t = median_time(d.a, grid)) v.push_back(*t);
    else ++m.not_reached;
  }
  m.reached = static_cast<int>(v.size());
  if (!v.empty()) {
    std::sort(v.begin(), v.end());
    m.median = quantile_sorted(v, 0.5);
    m.lo = quantile_sorted(v, 0.025);
    m.hi = quantile_sorted(v, 0.975);
  }
  return m;
}

std::string draws_csv(const MetaPosterior& post) {
  std::ostringstream out;
  if (post.draws.empty()) return "";
  const auto& f = post.draws.front();
  const auto names = scalar_names(static_cast<int>(f.alpha.size()), static_cast<int>(f.a.size()));
  out << "chain,draw";
  for (const auto& n : names) out << ",\"" << n << '"';
  out << '\n';
  out.precision(10);
  const int per = post.config.draws;
  for (std::size_t k = 0; k < post.draws.size(); ++k) {
    out << k / per << ',' << k % per;
    for (double x : flatten(post.draws[k])) out << ',' << x;
    out << '\n';
  }
  return out.str();
}

std::string bands_csv(const SurvivalBands& b) {
  std::ostringstream out;
  out << "curve,time,median,lower,upper\n";
  out.precision(8);
  auto emit = [&](const std::string& name, const std::vector<Band>& v) {
    for (const auto& x : v) out << name << ',' << x.t << ',' << x.median << ',' << x.lo << ',' << x.hi << '\n';
  };
  emit("pooled", b.pooled);
  for (std::size_t s = 0; s < b.studies.size(); ++s) emit("study" + std::to_string(s + 1), b.studies[s]);
  return out.str();
}

}  // namespace kmgpt::meta
