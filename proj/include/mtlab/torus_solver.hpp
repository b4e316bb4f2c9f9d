#pragma once

#include "mtlab/common.hpp"

#include <string>
#include <vector>

// Spectral solver for the weighted mean-field problem on a flat torus:
//   Lap u + h u = lambda p u_+^{p-1} e^{u_+^p},
// with Lap the geometric (positive) Laplacian, discretized by FFT on an
// n x n periodic grid.  The multiplier lambda is always a functional of u,
// never a free unknown.

typedef double fftw_complex_compat[2];  // avoids leaking <fftw3.h> here
struct fftw_plan_s;

namespace mtlab::torus {

// Periodic scalar field samples plus the weight field h on the same grid.
// Row-major storage: index i*n + j for (x_i, y_j) = (i,j) * (box_length/n).
struct TorusField {
  int n = 0;
  double box_length = 0.0;
  std::vector<double> values;
  std::vector<double> h_values;

  double cell() const { return box_length / n; }
  double area_element() const { return cell() * cell(); }
  double& at(int i, int j) { return values[static_cast<size_t>(i) * n + j]; }
  double at(int i, int j) const {
    return values[static_cast<size_t>(i) * n + j];
  }
  // n a power of two, positive box, h > 0 everywhere, matching sizes.
  void validate() const;

  static TorusField constant(int n, double box_length, double value,
                             double h0);
};

// Owns the FFT plans and scratch for one grid; not shareable between threads
// (create one instance per concurrent task).
class SpectralTorus {
 public:
  SpectralTorus(int n, double box_length, std::vector<double> h_values);
  SpectralTorus(int n, double box_length, double h0);
  explicit SpectralTorus(const TorusField& tmpl);
  ~SpectralTorus();
  SpectralTorus(const SpectralTorus&) = delete;
  SpectralTorus& operator=(const SpectralTorus&) = delete;

  int n() const { return n_; }
  double box_length() const { return box_len_; }
  double cell() const { return box_len_ / n_; }
  double area_element() const { return cell() * cell(); }
  const std::vector<double>& h() const { return h_; }
  double h_max() const { return h_max_; }
  double h_min() const { return h_min_; }
  double h_mean() const { return h_mean_; }

  // Geometric Laplacian: multiplies by +|k|^2 spectrally.
  std::vector<double> lap(const std::vector<double>& u) const;
  // (Lap + h)^{-1} f: exact spectral inverse for constant h, otherwise
  // conjugate gradients preconditioned by the constant-mean-h inverse.
  std::vector<double> ainv(const std::vector<double>& f,
                           double rel_tol = 1e-12) const;
  // int |grad u|^2 + h u^2.
  double norm_h2(const std::vector<double>& u) const;
  double integral(const std::vector<double>& f) const;
  // |sum dA u^2 - spectral power sum| / (sum dA u^2): Parseval consistency.
  double parseval_defect(const std::vector<double>& u) const;

  TorusField wrap(std::vector<double> values) const;

 private:
  int n_ = 0;
  double box_len_ = 0.0;
  std::vector<double> h_;
  double h_mean_ = 0.0, h_max_ = 0.0, h_min_ = 0.0;
  bool h_const_ = false;
  std::vector<double> k2_;  // r2c half-spectrum layout, n x (n/2+1)
  fftw_plan_s* fwd_ = nullptr;
  fftw_plan_s* bwd_ = nullptr;
  double* real_buf_ = nullptr;
  fftw_complex_compat* cplx_buf_ = nullptr;

  void forward(const std::vector<double>& u) const;   // real_buf_ -> cplx_buf_
  std::vector<double> backward() const;               // cplx_buf_ -> values/n^2
};

// --- Functional, gradient, multiplier identities ---------------------------

// J_{p,beta}(u) = (2-p)/2 (p ||u||_h^2 / (2 beta))^{p/(2-p)} - ln int(e^{u_+^p}-1),
// +infinity when u_+ vanishes identically.  Requires p in (1,2).
double j_functional(const SpectralTorus& T, const std::vector<double>& u,
                    double p, double beta);

// Riesz representative of J' in the <.,.>_h inner product.
std::vector<double> j_gradient(const SpectralTorus& T,
                               const std::vector<double>& u, double p,
                               double beta);

// lambda with (lambda p^2/2)(p||u||_h^2/(2 beta))^{2(p-1)/(2-p)} int(e^{u^p}-1) = beta.
double lambda_from_u(const SpectralTorus& T, const std::vector<double>& u,
                     double p, double beta);

// beta = (lambda p^2/2) (int(e^{u^p}-1))^{(2-p)/p} (int u^p e^{u^p})^{2(p-1)/p}.
double beta_of(const SpectralTorus& T, const std::vector<double>& u, double p,
               double lambda);

// Residual field Lap u + h u - lambda p u_+^{p-1} e^{u_+^p} with
// lambda = lambda_from_u; optionally returns that lambda.
std::vector<double> el_residual(const SpectralTorus& T,
                                const std::vector<double>& u, double p,
                                double beta, double* lambda_out = nullptr);

// sqrt(int r^2): L2 size of a residual field.
double residual_l2(const SpectralTorus& T, const std::vector<double>& r);

// --- Solvers ---------------------------------------------------------------

struct SolveReport {
  double p = 0.0;
  double beta = 0.0;
  double lambda = 0.0;
  int iterations = 0;
  double residual_l2 = 0.0;
  double u_max = 0.0;
  double u_min = 0.0;
  double beta_check = 0.0;
  bool positivity = false;
  std::vector<double> u_values;
  std::vector<double> residual_history;  // one entry per outer iteration
  std::vector<double> j_history;         // descent only: J after each step
};

struct SolveOptions {
  double tol = 1e-8;           // residual L2 target
  int max_iterations = 2000;   // descent tails are linear; give them room
  double ceiling = 12.0;       // amplitude guard during damping
  double krylov_tol = 0.02;    // relative tolerance of the inner solver
  int krylov_restart = 200;
  bool validate = true;        // enforce report invariants on convergence
};

SolveOptions newton_defaults();        // tol 1e-12, 40 iterations
SolveOptions fixed_lambda_defaults();  // tol 1e-12, 60 iterations
SolveOptions p2_defaults();

// Preconditioned gradient descent with Armijo line search; beta < 4 pi.
SolveReport solve_min(const SpectralTorus& T, double p, double beta,
                      const std::vector<double>& init,
                      const SolveOptions& opt = SolveOptions{});

// Newton-Krylov on the residual map, differentiating through lambda(u).
SolveReport solve_newton(const SpectralTorus& T, double p, double beta,
                         const std::vector<double>& init,
                         const SolveOptions& opt = newton_defaults());

// Newton at fixed multiplier (symmetric Jacobian); reports beta = beta_of(u).
SolveReport solve_newton_fixed_lambda(const SpectralTorus& T, double p,
                                      double lambda,
                                      const std::vector<double>& init,
                                      const SolveOptions& opt =
                                          fixed_lambda_defaults());

// Limiting case p = 2: critical points of -ln int(e^{u^2}-1) on the manifold
// ||u||_h^2 = beta, solved by projected descent plus a bordered Newton step;
// the multiplier is lambda = beta / (2 int u_+^2 e^{u_+^2}).
SolveReport solve_p2(const SpectralTorus& T, double beta,
                     const std::vector<double>& init,
                     const SolveOptions& opt = p2_defaults());

// --- Blow-up diagnostics ---------------------------------------------------

struct PeakInfo {
  int i = 0, j = 0;               // grid indices of the local maximum
  double gamma = 0.0;             // peak height
  double mu = 0.0;                // concentration scale from the multiplier
  double mu_cells = 0.0;          // mu in units of the grid cell
  double mass_ratio = 0.0;        // local weighted mass / (4 pi gamma^{2-p})
  double profile_deviation = -1.0;  // sup_{s<=5}|z - ln(1+s^2)|, -1 unresolved
};

struct PeakTable {
  std::vector<PeakInfo> peaks;
  double beta_excess = 0.0;    // beta_of(u, lambda, p) - 4 pi * #peaks
  double kr_to_diracs = -1.0;  // KR distance of density to fitted point masses
};

// Local maxima above u_max/2 with per-peak scale, mass, and profile data.
PeakTable blow_up_diagnostics(const SpectralTorus& T,
                              const std::vector<double>& u, double lambda,
                              double p);

// --- Continuation ----------------------------------------------------------

enum class BranchStatus { Completed, BlowUpDetected, StepCollapse };
const char* branch_status_name(BranchStatus s);

struct ContinuationOptions {
  double ceiling = 8.0;          // peak-height trigger for BlowUpDetected
  double mu_floor_cells = 2.0;   // resolution trigger for BlowUpDetected
  double newton_tol = 1e-11;
  double growth = 1.3;           // step growth after an accepted step
  double growth_cap = 2.0;       // max step as multiple of the initial step
  double collapse_fraction = 0.0025;  // StepCollapse below this x initial step
  int max_attempts = 0;          // 0: derived from the step count
  bool with_diagnostics = true;
};

struct BranchRecord {
  std::vector<SolveReport> reports;        // beta strictly monotone
  std::vector<PeakTable> diagnostics;      // parallel to reports (may be empty)
  BranchStatus status = BranchStatus::Completed;
  std::string note;
};

// Natural-parameter continuation from beta_start to beta_end in about `steps`
// steps with adaptive halving; init must solve (or nearly solve) at
// beta_start.  Stops early with BlowUpDetected or StepCollapse.
BranchRecord continue_branch(const SpectralTorus& T, double p,
                             double beta_start, double beta_end, int steps,
                             const std::vector<double>& init,
                             const ContinuationOptions& opt =
                                 ContinuationOptions{});

// --- Branch seeding helpers ------------------------------------------------

// Smallest positive root of h0 b = lambda p b^{p-1} e^{b^p}: the constant
// far-field level matching the equation away from a peak.
double balance_floor(double p, double lambda, double h0);

struct TransplantResult {
  std::vector<double> values;
  double gamma = 0.0;        // shooting parameter of the connecting orbit
  double floor = 0.0;
  double stop_radius = 0.0;  // radius where the orbit meets the floor
};

// Shoots on gamma for the radial orbit of the full equation (fixed lambda,
// constant h0) that descends to the floor, then transplants it to the torus
// around the origin node using minimum-image distance.
TransplantResult radial_transplant(const SpectralTorus& T, double p,
                                   double lambda, double h0, double gamma_lo,
                                   double gamma_hi);

// Truncated model bubble gamma (1 - 2 t/(p gamma^p)) placed at the origin
// node, clipped below at `floor`.
std::vector<double> bubble_field(const SpectralTorus& T, double gamma,
                                 double p, double mu, double floor);

}  // namespace mtlab::torus
