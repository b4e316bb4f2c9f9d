#include "mtlab/radial_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mtlab::radial {

namespace {

constexpr double kLog8 = 2.0794415416798359283;  // ln 8

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Safe ln(1 + (a/b)^2) given ln(a/b).
double log1p_exp2(double log_ratio) {
  const double w = 2.0 * log_ratio;
  if (w > 36.0) return w;              // 1 negligible against e^w
  if (w < -36.0) return std::exp(w);   // log1p(x) ~ x
  return std::log1p(std::exp(w));
}

}  // namespace

double t_gamma(double r, double mu) {
  if (r < 0.0 || mu <= 0.0) {
    throw std::invalid_argument("t_gamma: need r >= 0 and mu > 0");
  }
  const double q = r / mu;
  if (q > 1e150) return 2.0 * std::log(q);  // r^2/mu^2 would overflow
  return std::log1p(q * q);
}

double log_lambda_of(double gamma, double p, double mu) {
  if (gamma <= 0.0 || p <= 0.0 || mu <= 0.0) {
    throw std::invalid_argument("lambda_of: all inputs must be positive");
  }
  return kLog8 - 2.0 * std::log(p) - 2.0 * (p - 1.0) * std::log(gamma) -
         2.0 * std::log(mu) - std::pow(gamma, p);
}

double lambda_of(double gamma, double p, double mu) {
  return std::exp(log_lambda_of(gamma, p, mu));
}

double mu_of_log(double gamma, double p, double log_lambda) {
  if (gamma <= 0.0 || p <= 0.0) {
    throw std::invalid_argument("mu_of: need gamma > 0 and p > 0");
  }
  return std::exp(0.5 * (kLog8 - log_lambda - 2.0 * std::log(p) -
                         2.0 * (p - 1.0) * std::log(gamma) -
                         std::pow(gamma, p)));
}

double mu_of(double gamma, double p, double lambda) {
  if (lambda <= 0.0) {
    throw std::invalid_argument("mu_of: need lambda > 0");
  }
  return mu_of_log(gamma, p, std::log(lambda));
}

BubbleParams BubbleParams::create(double gamma, double p, double mu, double h0,
                                  double rbar) {
  BubbleParams b;
  b.gamma = gamma;
  b.p = p;
  b.mu = mu;
  b.h0 = h0;
  b.rbar = rbar;
  b.log_lambda = log_lambda_of(gamma, p, mu);
  b.lambda = std::exp(b.log_lambda);
  b.validate();
  return b;
}

BubbleParams BubbleParams::canonical(double gamma, double p, double h0) {
  const double gp = std::pow(gamma, p);
  const double log_mu = -std::log(gamma) - 0.5 * gp;
  const double mu = std::exp(log_mu);
  const double sg = std::sqrt(gamma);
  // t(rbar) = sqrt(gamma), i.e. rbar = mu * sqrt(e^{sqrt(gamma)} - 1).
  const double log_rbar = log_mu + 0.5 * (sg + std::log1p(-std::exp(-sg)));
  return create(gamma, p, mu, h0, std::exp(log_rbar));
}

void BubbleParams::validate() const {
  if (gamma <= 0.0 || p < 1.0 || p > 2.0 || mu <= 0.0 || h0 <= 0.0 ||
      rbar <= 0.0) {
    throw std::invalid_argument(
        "BubbleParams: need gamma > 0, p in [1,2], mu > 0, h0 > 0, rbar > 0");
  }
  const double gp = std::pow(gamma, p);
  const double defect = log_lambda + 2.0 * std::log(p) +
                        2.0 * (p - 1.0) * std::log(gamma) +
                        2.0 * std::log(mu) + gp - kLog8;
  if (std::abs(defect) > 1e-12) {
    throw std::invalid_argument("BubbleParams: scaling identity violated by " +
                                fmt(defect));
  }
  if (!(mu < rbar)) {
    throw std::invalid_argument("BubbleParams: require mu < rbar");
  }
  const double t_at_rbar = log1p_exp2(std::log(rbar) - std::log(mu));
  if (t_at_rbar > 0.5 * p * gp * (1.0 + 1e-12)) {
    throw std::invalid_argument(
        "BubbleParams: analysis radius exceeds the height cap t(rbar) <= "
        "p*gamma^p/2");
  }
}

namespace {

// Right-hand side of the deficit equation in x = ln s.  State is
// [z, dz/dx, m_plain, m_weighted]; the mass components accumulate
//   m_plain'   = e^{E} s^2,   m_weighted' = (1-q)^p e^{E} s^2,
// where q = 2z/(p gamma^p) and E = gamma^p((1-q)^p - 1) <= 0.
struct DeficitOde {
  double gamma, p, ch;  // ch = p*h0*gamma^p*mu^2/2

  void operator()(double x, const std::vector<double>& y,
                  std::vector<double>& dy) const {
    const double gp = std::pow(gamma, p);
    const double s2 = std::exp(2.0 * x);
    double q = 2.0 * y[0] / (p * gp);
    if (q >= 1.0) q = 1.0 - 1e-14;
    const double lq = std::log1p(-q);
    const double E = gp * std::expm1(p * lq);
    const double eE = std::exp(E);
    const double F = 4.0 * std::exp((p - 1.0) * lq + E) - ch * (1.0 - q);
    dy.resize(4);
    dy[0] = y[1];
    dy[1] = s2 * F;
    dy[2] = eE * s2;
    dy[3] = std::exp(p * lq) * eE * s2;
  }
};

struct DeficitRun {
  OdeSolution sol;
  double gamma, p, ch, s0;
};

// Integrates the deficit system from a quadratic series start at s0 up to
// s_max, stopping where the profile height would cross zero (q -> 1).
DeficitRun integrate_deficit(double gamma, double p, double ch, double s_max,
                             double rel_tol) {
  const double gp = std::pow(gamma, p);
  const double s0 = std::min(1e-6, 0.01 * s_max);
  const double cz = 1.0 - ch / 4.0;
  DeficitOde ode{gamma, p, ch};
  OdeOptions opt;
  opt.rel_tol = rel_tol;
  opt.abs_tol = 1e-15;
  opt.initial_step = 1e-3;
  opt.event = [p, gp](double, const std::vector<double>& y) {
    return (1.0 - 2.0 * y[0] / (p * gp)) - 1e-9;
  };
  std::vector<double> y0 = {cz * s0 * s0, 2.0 * cz * s0 * s0, 0.5 * s0 * s0,
                            0.5 * s0 * s0};
  DeficitRun run;
  run.sol = integrate_ode(
      [&ode](double x, const std::vector<double>& y, std::vector<double>& dy) {
        ode(x, y, dy);
      },
      std::log(s0), std::log(s_max), std::move(y0), opt);
  run.gamma = gamma;
  run.p = p;
  run.ch = ch;
  run.s0 = s0;
  return run;
}

double ch_of(double gamma, double p, double h0, double log_mu) {
  // p*h0*gamma^p*mu^2/2 fused in log domain (mu^2 may underflow).
  return std::exp(std::log(0.5 * p * h0) + p * std::log(gamma) + 2.0 * log_mu);
}

}  // namespace

RadialProfile solve_bubble(const BubbleParams& params, double s_max) {
  params.validate();
  if (!(s_max > 0.0)) {
    throw std::invalid_argument("solve_bubble: need s_max > 0");
  }
  if (s_max * params.mu > params.rbar * (1.0 + 1e-12)) {
    throw std::invalid_argument(
        "solve_bubble: s_max*mu exceeds the analysis radius rbar");
  }
  const double gamma = params.gamma, p = params.p;
  const double gp = std::pow(gamma, p);
  const double ch =
      ch_of(gamma, p, params.h0, std::log(params.mu));
  if (ch > 4.0) {
    throw std::invalid_argument(
        "solve_bubble: potential term dominates the series start (h0 too "
        "large for this scaling)");
  }
  DeficitRun run = integrate_deficit(gamma, p, ch, s_max, 1e-10);
  if (run.sol.event_hit) {
    const double r_cross = params.mu * std::exp(run.sol.event_x);
    throw Error(ErrorCode::NonPositiveBubble,
                "profile crosses zero at radius r=" + fmt(r_cross) +
                    " (s=" + fmt(std::exp(run.sol.event_x)) + ")");
  }

  RadialProfile prof;
  prof.params = params;
  const size_t m = run.sol.xs.size();
  prof.s_grid.reserve(m + 1);
  prof.z_values.reserve(m + 1);
  prof.b_values.reserve(m + 1);
  prof.bprime_values.reserve(m + 1);
  prof.s_grid.push_back(0.0);
  prof.z_values.push_back(0.0);
  prof.b_values.push_back(gamma);
  prof.bprime_values.push_back(0.0);
  const double bp_scale = 2.0 / (p * std::pow(gamma, p - 1.0) * params.mu);
  double bmax = gamma;
  for (size_t i = 0; i < m; ++i) {
    const double s = std::exp(run.sol.xs[i]);
    const double z = run.sol.ys[i][0];
    const double q = 2.0 * z / (p * gp);
    prof.s_grid.push_back(s);
    prof.z_values.push_back(z);
    prof.b_values.push_back(gamma * (1.0 - q));
    prof.bprime_values.push_back(-bp_scale * run.sol.ys[i][1] / s);
    bmax = std::max(bmax, gamma * (1.0 - q));
  }
  if (bmax > gamma * (1.0 + 1e-10)) {
    throw Error(ErrorCode::StepFailure,
                "profile exceeded its height bound (B_max=" + fmt(bmax) + ")");
  }
  return prof;
}

WGammaResult w_gamma_extract(const RadialProfile& profile) {
  WGammaResult out;
  const double p = profile.params.p;
  out.w_values.reserve(profile.s_grid.size());
  for (size_t i = 0; i < profile.s_grid.size(); ++i) {
    const double s = profile.s_grid[i];
    const double t = std::log1p(s * s);
    const double w = (2.0 / p) * (t - profile.z_values[i]);
    out.w_values.push_back(w);
    out.sup_ratio = std::max(out.sup_ratio, std::abs(w) / (t + 1.0));
  }
  return out;
}

double w0_eval(double r) {
  if (r < 0.0) throw std::invalid_argument("w0_eval: need r >= 0");
  if (r == 0.0) return 0.0;
  const double r2 = r * r;
  const double t0 = std::log1p(r2);
  // A = int_1^{1+r^2} ln t/(1-t) dt = -int_0^{t0} v/(1 - e^{-v}) dv; the
  // integrand tends to 1 at v = 0 (removable singularity).
  auto g = [](double v) {
    if (std::abs(v) < 1e-8) return 1.0 + 0.5 * v + v * v / 12.0;
    return v / (-std::expm1(-v));
  };
  const double A =
      -integrate_checked(g, 0.0, t0, 1e-13, 1e-300, "w0 auxiliary integral");
  return -t0 + 2.0 * r2 / (1.0 + r2) - 0.5 * t0 * t0 +
         ((1.0 - r2) / (1.0 + r2)) * A;
}

namespace {

// Source polynomial for the second correction function.
double f_source(double t0, double w0v, double p) {
  return 2.0 * (p - 1.0) * w0v + (p - 2.0) * t0 * t0 -
         8.0 * (p - 1.0) * t0 * w0v - (8.0 * p - 10.0) / 3.0 * t0 * t0 * t0 +
         4.0 * (p - 1.0) * w0v * w0v + 4.0 * (p - 1.0) * t0 * t0 * w0v +
         (p - 1.0) * t0 * t0 * t0 * t0;
}

constexpr double kCInf = 3.6449340668482264365;  // lim (w0 + ln(1+s^2))

}  // namespace

W1Solution solve_w1(double p, double s_max,
                    const std::vector<double>& probe_s) {
  if (!(p > 1.0 && p <= 2.0)) {
    throw std::invalid_argument("solve_w1: need p in (1,2]");
  }
  if (!(s_max >= 1e3)) {
    throw std::invalid_argument("solve_w1: need s_max >= 1e3");
  }
  const double cp = 4.0 * (p - 1.0) / (p * p * p);
  auto rhs = [cp, p](double x, const std::vector<double>& y,
                     std::vector<double>& dy) {
    const double s2 = std::exp(2.0 * x);
    const double t0 = std::log1p(s2);
    const double lapf = 4.0 * s2 / ((1.0 + s2) * (1.0 + s2));
    dy.resize(4);
    dy[0] = y[1];
    dy[1] = -lapf * (2.0 * y[0] + t0 * t0 - t0);
    dy[2] = y[3];
    dy[3] = -lapf * (2.0 * y[2] + cp * f_source(t0, y[0], p));
  };
  const double s0 = 1e-3;
  OdeOptions opt;
  opt.rel_tol = 1e-12;
  opt.abs_tol = 1e-16;
  opt.initial_step = 1e-3;

  // Break the x-range at each probe so the integrator lands on it exactly.
  if (!std::is_sorted(probe_s.begin(), probe_s.end())) {
    throw std::invalid_argument("solve_w1: probes must be ascending");
  }
  std::vector<double> breaks;
  for (double s : probe_s) {
    if (!(s > s0 && s < s_max)) {
      throw std::invalid_argument("solve_w1: probes must lie in (1e-3, s_max)");
    }
    breaks.push_back(std::log(s));
  }
  breaks.push_back(std::log(s_max));

  W1Solution out;
  std::vector<double> y = {0.25 * s0 * s0 * s0 * s0, s0 * s0 * s0 * s0, 0.0,
                           0.0};
  double x = std::log(s0);
  OdeSolution sol;
  for (size_t seg = 0; seg < breaks.size(); ++seg) {
    sol = integrate_ode(rhs, x, breaks[seg], y, opt);
    for (size_t i = (seg == 0 ? 0 : 1); i < sol.xs.size(); ++i) {
      out.s_grid.push_back(std::exp(sol.xs[i]));
      out.w0_values.push_back(sol.ys[i][0]);
      out.w1_values.push_back(sol.ys[i][2]);
    }
    y = sol.ys.back();
    x = breaks[seg];
    if (seg + 1 < breaks.size()) out.probe_values.push_back(y[2]);
  }

  // Flux extraction with an asymptotic tail beyond s_max: substitute the
  // far-field forms w0 ~ -T0 + c_inf, w1 ~ -(I/4pi) T0 + d_inf and iterate.
  const double t0S = std::log1p(s_max * s_max);
  const double w1S = sol.ys.back()[2];
  const double w1xS = sol.ys.back()[3];
  const double raw_flux = -2.0 * kPi * w1xS;
  double I = raw_flux;
  for (int it = 0; it < 4; ++it) {
    const double dinf = w1S + (I / (4.0 * kPi)) * t0S;
    const double slope = I / (4.0 * kPi);
    auto tail = [cp, p, slope, dinf](double x) {
      const double s2 = std::exp(2.0 * x);
      const double t0 = std::log1p(s2);
      const double w0a = -t0 + kCInf;
      const double w1a = -slope * t0 + dinf;
      return 4.0 * s2 / ((1.0 + s2) * (1.0 + s2)) *
             (2.0 * w1a + cp * f_source(t0, w0a, p));
    };
    double corr = 0.0;
    double lo = std::log(s_max);
    for (double hi : {std::log(1e6), std::log(1e9), std::log(1e13)}) {
      if (hi <= lo) continue;
      corr += integrate(tail, lo, hi, 1e-12, 1e-13, 4000).value;
      lo = hi;
    }
    I = raw_flux + 2.0 * kPi * corr;
  }
  out.flux_integral = I;
  out.far_field_constant = I / (4.0 * kPi);
  return out;
}

MomentTable moment_integrals(double quad_rel_tol) {
  // All six integrals are reduced to 1D integrals in u = 1 + r^2 (area
  // element pi du) and evaluated in x = ln u up to U = 1 + S^2, S = 1e4,
  // with exact log-polynomial tails from int_U^inf ln^k u / u^2 du.
  const double S = 1e4;
  const double U = 1.0 + S * S;
  const double X = std::log(U);

  auto tail_over_u2 = [U, X](int k) {
    // int_U^inf ln^j u / u^2 du = (1/U) sum_{j<=k} (k!/j!) X^j
    double fact = 1.0;
    for (int j = 1; j <= k; ++j) fact *= j;  // k!
    double sum = 0.0, xj = 1.0, jfact = 1.0;
    for (int j = 0; j <= k; ++j) {
      sum += (fact / jfact) * xj;
      xj *= X;
      jfact *= (j + 1.0);
    }
    return sum / U;
  };

  MomentTable tab;
  const double tol = quad_rel_tol;

  // [0] int 4 e^{-2T0} and [1] -int Lap T0: both pi * int 4/u^2 du.
  for (int idx : {0, 1}) {
    auto f = [](double x) { return 4.0 * std::exp(-x); };
    auto q = integrate(f, 0.0, X, tol, 1e-16, 4000);
    tab.values[static_cast<size_t>(idx)] = kPi * (q.value + 4.0 * tail_over_u2(0));
    tab.error_estimates[static_cast<size_t>(idx)] = kPi * q.error + 1e-16;
  }
  // [2] -int T0 Lap T0 = pi int 4 ln u / u^2 du.
  {
    auto f = [](double x) { return 4.0 * x * std::exp(-x); };
    auto q = integrate(f, 0.0, X, tol, 1e-16, 4000);
    tab.values[2] = kPi * (q.value + 4.0 * tail_over_u2(1));
    tab.error_estimates[2] = kPi * q.error + 1e-16;
  }
  // [3] -1/2 int T0^2 Lap T0 = pi int 2 ln^2 u / u^2 du.
  {
    auto f = [](double x) { return 2.0 * x * x * std::exp(-x); };
    auto q = integrate(f, 0.0, X, tol, 1e-16, 4000);
    tab.values[3] = kPi * (q.value + 2.0 * tail_over_u2(2));
    tab.error_estimates[3] = kPi * q.error + 1e-16;
  }
  // [4] int (w0 Lap T0 + T0 Lap w0): with the profile equation for Lap w0
  // the integrand is [-4 w0 + 4 L (2 w0 + L^2 - L)]/u^2, L = ln u.
  {
    auto f = [](double x) {
      const double r = std::sqrt(std::expm1(x));
      const double w0v = w0_eval(r);
      return (-4.0 * w0v + 4.0 * x * (2.0 * w0v + x * x - x)) * std::exp(-x);
    };
    auto q = integrate(f, 0.0, X, tol, 1e-14, 4000);
    const double tail = 4.0 * tail_over_u2(3) - 12.0 * tail_over_u2(2) +
                        (8.0 * kCInf + 4.0) * tail_over_u2(1) -
                        4.0 * kCInf * tail_over_u2(0);
    // Next-order truncation: the far field of w0 deviates from -L + c_inf by
    // O(ln^2 u / u), contributing O(ln^3 U / U^2).
    const double tail_bound = 8.0 * (X * X * X) / (2.0 * U * U) * 4.0;
    tab.values[4] = kPi * (q.value + tail);
    tab.error_estimates[4] = kPi * (q.error + tail_bound);
  }
  // [5] int ((|x|^2-1)/(1+|x|^2)^3) T0^2 = pi int (u-2) ln^2 u / u^3 du.
  {
    auto f = [](double x) {
      return x * x * (std::exp(-x) - 2.0 * std::exp(-2.0 * x));
    };
    auto q = integrate(f, 0.0, X, tol, 1e-16, 4000);
    const double tail =
        tail_over_u2(2) - (X * X + X + 0.5) / (U * U);
    tab.values[5] = kPi * (q.value + tail);
    tab.error_estimates[5] = kPi * q.error + 1e-15;
  }

  for (size_t i = 0; i < 6; ++i) {
    if (tab.error_estimates[i] > 1e-10 * std::abs(tab.values[i])) {
      throw Error(ErrorCode::QuadratureTolerance,
                  "moment integral " + std::to_string(i) +
                      " missed the 1e-10 budget (estimate " +
                      fmt(tab.error_estimates[i]) + ")");
    }
  }
  return tab;
}

namespace {

BubbleEnergy masses_from_run(const DeficitRun& run) {
  const double gamma = run.gamma, p = run.p;
  const double m_pl = run.sol.ys.back()[2];
  const double m_wt = run.sol.ys.back()[3];
  BubbleEnergy e;
  e.mass_plain = 8.0 * kPi * std::pow(gamma, -2.0 * (p - 1.0)) * m_pl;
  e.mass_weighted = 8.0 * kPi * std::pow(gamma, 2.0 - p) * m_wt;
  e.product = 8.0 * kPi * std::pow(m_pl, (2.0 - p) / p) *
              std::pow(m_wt, 2.0 * (p - 1.0) / p);
  return e;
}

}  // namespace

BubbleEnergy bubble_energy_at_cut(double gamma, double p, double h0,
                                  double t_cut) {
  if (!(gamma >= 4.0)) {
    throw std::invalid_argument("bubble_energy: need gamma >= 4");
  }
  if (!(p >= 1.0 && p <= 2.0)) {
    throw std::invalid_argument("bubble_energy: need p in [1,2]");
  }
  if (!(h0 > 0.0) || !(t_cut > 0.0)) {
    throw std::invalid_argument("bubble_energy: need h0 > 0 and t_cut > 0");
  }
  const double gp = std::pow(gamma, p);
  const double log_mu = -std::log(gamma) - 0.5 * gp;  // canonical scale
  const double ch = ch_of(gamma, p, h0, log_mu);
  const double s_cut = std::sqrt(std::expm1(t_cut));
  // Integration may terminate early where the profile height reaches zero
  // (possible for p = 1 near the support edge); masses are then evaluated at
  // the termination point, where the integrands are already negligible.
  DeficitRun run = integrate_deficit(gamma, p, ch, s_cut, 1e-12);
  return masses_from_run(run);
}

BubbleEnergy bubble_energy(double gamma, double p, double h0) {
  return bubble_energy_at_cut(gamma, p, h0, std::sqrt(gamma));
}

ExpansionFit fit_expansion(const std::vector<std::pair<double, double>>& samples,
                           double p) {
  if (samples.size() < 4) {
    throw std::invalid_argument("fit_expansion: need at least 4 samples");
  }
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = samples[static_cast<size_t>(i)].first;
    if (g <= 0.0) {
      throw std::invalid_argument("fit_expansion: gammas must be positive");
    }
    A(i, 0) = 1.0;
    A(i, 1) = std::pow(g, -p);
    A(i, 2) = std::pow(g, -2.0 * p);
    b(i) = samples[static_cast<size_t>(i)].second;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU |
                                               Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cond =
      sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                              : std::numeric_limits<double>::infinity();
  if (cond > 1e12) {
    throw Error(ErrorCode::SingularFit,
                "design matrix condition " + fmt(cond) + " exceeds 1e12");
  }
  Eigen::VectorXd c = svd.solve(b);
  ExpansionFit fit;
  fit.c0 = c(0);
  fit.c1 = c(1);
  fit.c2 = c(2);
  Eigen::VectorXd misfit = A * c - b;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double scale = std::max(std::abs(b(i)), 1e-300);
    fit.residual = std::max(fit.residual, std::abs(misfit(i)) / scale);
    fit.gammas.push_back(samples[static_cast<size_t>(i)].first);
  }
  return fit;
}

}  // namespace mtlab::radial
