// Radial bubble profiles: the concentrating radial solutions of the
// semilinear equation -(B'' + B'/r) + h0*B = lambda*p*B^{p-1}*exp(B^p),
// integrated in overflow-safe variables, together with the correction
// functions w0/w1, exact moment integrals, and energy-expansion fits.
#pragma once

#include <array>
#include <utility>
#include <vector>

#include "mtlab/common.hpp"

namespace mtlab::radial {

// Scaling quadruple (gamma, p, mu, lambda) plus the constant potential h0 and
// the analysis radius rbar.  The multiplier is tied to the other members by
//   lambda * p^2 * gamma^{2(p-1)} * mu^2 * exp(gamma^p) = 8,
// enforced entirely in log domain so that exp(gamma^p) is never materialized.
struct BubbleParams {
  double gamma = 0.0;
  double p = 0.0;
  double mu = 0.0;
  double lambda = 0.0;      // linear-domain value (may underflow to 0)
  double log_lambda = 0.0;  // authoritative log-domain copy
  double h0 = 1.0;
  double rbar = 0.0;

  // Builds params with lambda derived from (gamma, p, mu); validates the
  // log-domain identity, mu < rbar, and the height cap t(rbar) <= p*gamma^p/2.
  static BubbleParams create(double gamma, double p, double mu, double h0,
                             double rbar);
  // Canonical concentration scale mu = gamma^{-1} exp(-gamma^p/2) with the
  // analysis radius set by t(rbar) = sqrt(gamma).
  static BubbleParams canonical(double gamma, double p, double h0 = 1.0);

  void validate() const;  // throws std::invalid_argument on violation
};

// ln(1 + r^2/mu^2), evaluated via log1p.
double t_gamma(double r, double mu);

// Multiplier fixed by the scaling identity; log-domain companion below.
double lambda_of(double gamma, double p, double mu);
double log_lambda_of(double gamma, double p, double mu);

// Concentration scale recovered from (gamma, p, lambda).
double mu_of(double gamma, double p, double lambda);
double mu_of_log(double gamma, double p, double log_lambda);

// Radial profile on a nonuniform grid in the rescaled variable s = r/mu.
// z(s) = (p/2)*gamma^{p-1}*(gamma - B(mu*s)) is the overflow-safe deficit.
struct RadialProfile {
  std::vector<double> s_grid;          // increasing, s_grid[0] == 0
  std::vector<double> z_values;        // z(0) == 0
  std::vector<double> b_values;        // reconstructed B
  std::vector<double> bprime_values;   // dB/dr
  BubbleParams params;
};

// Adaptive integration of the profile equation in the deficit variable.
// Throws NonPositiveBubble (with the crossing radius) if B reaches 0 before
// s_max, StepFailure if the step controller underflows.
RadialProfile solve_bubble(const BubbleParams& params, double s_max);

// Remainder w = gamma^{p-1}(B - gamma) + (2/p) t on the profile grid, with
// the normalized statistic sup |w| / (t + 1).
struct WGammaResult {
  std::vector<double> w_values;
  double sup_ratio = 0.0;
};
WGammaResult w_gamma_extract(const RadialProfile& profile);

// First correction function, closed form with one adaptive quadrature for the
// auxiliary integral int_1^{1+r^2} ln t / (1 - t) dt (removable singularity
// at t = 1, integrand -> -1).
double w0_eval(double r);

// Second correction function, from the coupled linear radial system with
// zero initial data.  far_field_constant is the measured coefficient c in
// w1(s) ~ -c * ln(1+s^2); flux_integral = 4*pi*c is the associated integral
// of the (geometric-sign) Laplacian of w1 over the plane.
struct W1Solution {
  std::vector<double> s_grid;
  std::vector<double> w0_values;  // companion track, cross-checkable vs w0_eval
  std::vector<double> w1_values;
  double far_field_constant = 0.0;
  double flux_integral = 0.0;
  std::vector<double> probe_values;  // w1 at the requested probe abscissae
};
// probe_s: optional ascending abscissae in (1e-3, s_max) that the integrator
// lands on exactly; w1 there is returned in probe_values.
W1Solution solve_w1(double p, double s_max,
                    const std::vector<double>& probe_s = {});

// Six planar moment integrals of the limit profile T0 = ln(1+|x|^2):
//   [0] int 4 e^{-2 T0}            [1] -int Lap T0
//   [2] -int T0 Lap T0             [3] -1/2 int T0^2 Lap T0
//   [4] int (w0 Lap T0 + T0 Lap w0)
//   [5] int ((|x|^2 - 1)/(1+|x|^2)^3) T0^2
// (geometric sign convention Lap = -div grad).  Quadrature to radius 1e4 with
// analytic log-polynomial tails; throws QuadratureTolerance above 1e-10.
struct MomentTable {
  std::array<double, 6> values{};
  std::array<double, 6> error_estimates{};
};
MomentTable moment_integrals(double quad_rel_tol = 1e-12);

// Weighted and plain exponential masses of the bubble over the ball of
// radius rbar (canonical scaling, cut t(rbar) = sqrt(gamma)):
//   mass_weighted = (lambda p^2/2) int_B B^p exp(B^p) dx
//   mass_plain    = (lambda p^2/2) int_B (exp(B^p)) dx   [shifted, see impl]
//   product       = mass_plain^{(2-p)/p} * mass_weighted^{2(p-1)/p}
struct BubbleEnergy {
  double mass_weighted = 0.0;
  double mass_plain = 0.0;
  double product = 0.0;
};
BubbleEnergy bubble_energy(double gamma, double p, double h0 = 1.0);
// Same masses evaluated at an arbitrary height cut t_cut (for matched-grid
// cross-checks against field-based evaluations).
BubbleEnergy bubble_energy_at_cut(double gamma, double p, double h0,
                                  double t_cut);

// Least-squares fit against the basis {1, gamma^{-p}, gamma^{-2p}}.
struct ExpansionFit {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double residual = 0.0;  // max relative misfit over the sample set
  std::vector<double> gammas;
};
// samples: (gamma, value) pairs, at least 4 distinct gammas.  Throws
// SingularFit if the design matrix condition number exceeds 1e12.
ExpansionFit fit_expansion(const std::vector<std::pair<double, double>>& samples,
                           double p);

}  // namespace mtlab::radial
