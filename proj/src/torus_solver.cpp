#include "mtlab/torus_solver.hpp"

#include "mtlab/radial_core.hpp"
#include "mtlab/test_functions.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace mtlab::torus {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Compensated accumulator for the integral reductions feeding the functional;
// naive sums over n^2 cells carry enough noise to drown line-search decisions.
struct KahanSum {
  double s = 0.0;
  double c = 0.0;
  void add(double x) {
    const double y = x - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
};

void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

double nrm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace

// --- TorusField -------------------------------------------------------------

void TorusField::validate() const {
  if (!is_power_of_two(n) || n < 8) {
    throw std::invalid_argument("TorusField: n must be a power of two >= 8");
  }
  if (!(box_length > 0.0)) {
    throw std::invalid_argument("TorusField: box_length must be positive");
  }
  const size_t m = static_cast<size_t>(n) * n;
  if (values.size() != m || h_values.size() != m) {
    throw std::invalid_argument("TorusField: value arrays must be n*n");
  }
  for (double hv : h_values) {
    if (!(hv > 0.0)) {
      throw std::invalid_argument("TorusField: weight h must be positive");
    }
  }
}

TorusField TorusField::constant(int n, double box_length, double value,
                                double h0) {
  TorusField f;
  f.n = n;
  f.box_length = box_length;
  f.values.assign(static_cast<size_t>(n) * n, value);
  f.h_values.assign(static_cast<size_t>(n) * n, h0);
  f.validate();
  return f;
}

// --- SpectralTorus ----------------------------------------------------------

SpectralTorus::SpectralTorus(int n, double box_length,
                             std::vector<double> h_values)
    : n_(n), box_len_(box_length), h_(std::move(h_values)) {
  if (!is_power_of_two(n_) || n_ < 8) {
    throw std::invalid_argument("SpectralTorus: n must be a power of two >= 8");
  }
  if (!(box_len_ > 0.0)) {
    throw std::invalid_argument("SpectralTorus: box_length must be positive");
  }
  const size_t m = static_cast<size_t>(n_) * n_;
  if (h_.size() != m) {
    throw std::invalid_argument("SpectralTorus: h must have n*n samples");
  }
  h_max_ = h_[0];
  h_min_ = h_[0];
  double sum = 0.0;
  for (double hv : h_) {
    if (!(hv > 0.0)) {
      throw std::invalid_argument("SpectralTorus: h must be positive");
    }
    h_max_ = std::max(h_max_, hv);
    h_min_ = std::min(h_min_, hv);
    sum += hv;
  }
  h_mean_ = sum / static_cast<double>(m);
  h_const_ = (h_max_ - h_min_) < 1e-14 * std::max(1.0, std::abs(h_mean_));

  const int nc = n_ / 2 + 1;
  k2_.resize(static_cast<size_t>(n_) * nc);
  const double dk = 2.0 * kPi / box_len_;
  for (int i = 0; i < n_; ++i) {
    const double ki = dk * (i <= n_ / 2 ? i : i - n_);
    for (int j = 0; j < nc; ++j) {
      const double kj = dk * j;
      k2_[static_cast<size_t>(i) * nc + j] = ki * ki + kj * kj;
    }
  }

  real_buf_ = fftw_alloc_real(m);
  cplx_buf_ = reinterpret_cast<fftw_complex_compat*>(
      fftw_alloc_complex(static_cast<size_t>(n_) * nc));
  if (real_buf_ == nullptr || cplx_buf_ == nullptr) {
    throw std::bad_alloc();
  }
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd_ = reinterpret_cast<fftw_plan_s*>(fftw_plan_dft_r2c_2d(
        n_, n_, real_buf_, reinterpret_cast<fftw_complex*>(cplx_buf_),
        FFTW_ESTIMATE));
    bwd_ = reinterpret_cast<fftw_plan_s*>(fftw_plan_dft_c2r_2d(
        n_, n_, reinterpret_cast<fftw_complex*>(cplx_buf_), real_buf_,
        FFTW_ESTIMATE));
  }
  if (fwd_ == nullptr || bwd_ == nullptr) {
    throw std::runtime_error("SpectralTorus: FFT plan creation failed");
  }
}

SpectralTorus::SpectralTorus(int n, double box_length, double h0)
    : SpectralTorus(n, box_length,
                    std::vector<double>(static_cast<size_t>(n) * n, h0)) {}

SpectralTorus::SpectralTorus(const TorusField& tmpl)
    : SpectralTorus(tmpl.n, tmpl.box_length, tmpl.h_values) {}

SpectralTorus::~SpectralTorus() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  if (fwd_ != nullptr) fftw_destroy_plan(reinterpret_cast<fftw_plan>(fwd_));
  if (bwd_ != nullptr) fftw_destroy_plan(reinterpret_cast<fftw_plan>(bwd_));
  fftw_free(real_buf_);
  fftw_free(cplx_buf_);
}

void SpectralTorus::forward(const std::vector<double>& u) const {
  std::memcpy(real_buf_, u.data(), u.size() * sizeof(double));
  fftw_execute(reinterpret_cast<fftw_plan>(fwd_));
}

std::vector<double> SpectralTorus::backward() const {
  fftw_execute(reinterpret_cast<fftw_plan>(bwd_));
  const size_t m = static_cast<size_t>(n_) * n_;
  std::vector<double> out(m);
  std::memcpy(out.data(), real_buf_, m * sizeof(double));
  return out;
}

std::vector<double> SpectralTorus::lap(const std::vector<double>& u) const {
  if (u.size() != static_cast<size_t>(n_) * n_) {
    throw std::invalid_argument("lap: field size mismatch");
  }
  forward(u);
  const double inv = 1.0 / (static_cast<double>(n_) * n_);
  for (size_t m = 0; m < k2_.size(); ++m) {
    const double f = k2_[m] * inv;
    cplx_buf_[m][0] *= f;
    cplx_buf_[m][1] *= f;
  }
  return backward();
}

std::vector<double> SpectralTorus::ainv(const std::vector<double>& f,
                                        double rel_tol) const {
  if (f.size() != static_cast<size_t>(n_) * n_) {
    throw std::invalid_argument("ainv: field size mismatch");
  }
  auto ainv_const = [this](const std::vector<double>& g) {
    forward(g);
    const double inv = 1.0 / (static_cast<double>(n_) * n_);
    for (size_t m = 0; m < k2_.size(); ++m) {
      const double f2 = inv / (k2_[m] + h_mean_);
      cplx_buf_[m][0] *= f2;
      cplx_buf_[m][1] *= f2;
    }
    return backward();
  };
  std::vector<double> x = ainv_const(f);
  if (h_const_) return x;

  // Conjugate gradients on (Lap + h) x = f preconditioned by the
  // constant-mean-h spectral inverse.
  auto apply = [this](const std::vector<double>& v) {
    std::vector<double> av = lap(v);
    for (size_t i = 0; i < av.size(); ++i) av[i] += h_[i] * v[i];
    return av;
  };
  std::vector<double> r = apply(x);
  for (size_t i = 0; i < r.size(); ++i) r[i] = f[i] - r[i];
  std::vector<double> z = ainv_const(r);
  std::vector<double> pdir = z;
  double rz = dot(r, z);
  const double f2 = dot(f, f);
  if (f2 == 0.0) return std::vector<double>(f.size(), 0.0);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> ap = apply(pdir);
    const double denom = dot(pdir, ap);
    if (denom == 0.0) break;
    const double al = rz / denom;
    axpy(al, pdir, x);
    axpy(-al, ap, r);
    if (dot(r, r) <= rel_tol * rel_tol * f2) break;
    z = ainv_const(r);
    const double rz2 = dot(r, z);
    for (size_t i = 0; i < pdir.size(); ++i) {
      pdir[i] = z[i] + (rz2 / rz) * pdir[i];
    }
    rz = rz2;
  }
  return x;
}

double SpectralTorus::norm_h2(const std::vector<double>& u) const {
  std::vector<double> l = lap(u);
  KahanSum s;
  for (size_t i = 0; i < u.size(); ++i) {
    s.add(u[i] * l[i] + h_[i] * u[i] * u[i]);
  }
  return s.s * area_element();
}

double SpectralTorus::integral(const std::vector<double>& f) const {
  KahanSum s;
  for (double v : f) s.add(v);
  return s.s * area_element();
}

double SpectralTorus::parseval_defect(const std::vector<double>& u) const {
  const double direct = integral([&] {
    std::vector<double> sq(u.size());
    for (size_t i = 0; i < u.size(); ++i) sq[i] = u[i] * u[i];
    return sq;
  }());
  forward(u);
  const int nc = n_ / 2 + 1;
  double power = 0.0;
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < nc; ++j) {
      const size_t m = static_cast<size_t>(i) * nc + j;
      const double a2 =
          cplx_buf_[m][0] * cplx_buf_[m][0] + cplx_buf_[m][1] * cplx_buf_[m][1];
      const double w = (j == 0 || j == n_ / 2) ? 1.0 : 2.0;
      power += w * a2;
    }
  }
  const double n2 = static_cast<double>(n_) * n_;
  const double spectral = power / (n2 * n2) * box_len_ * box_len_;
  return std::abs(direct - spectral) / std::max(direct, 1e-300);
}

TorusField SpectralTorus::wrap(std::vector<double> values) const {
  TorusField f;
  f.n = n_;
  f.box_length = box_len_;
  f.values = std::move(values);
  f.h_values = h_;
  f.validate();
  return f;
}

// --- Nonlinear building blocks ---------------------------------------------

namespace {

// int (e^{u_+^p} - 1) dA.
double mass_nl(const SpectralTorus& T, const std::vector<double>& u, double p) {
  KahanSum s;
  for (double v : u) {
    if (v > 0.0) s.add(std::expm1(std::pow(v, p)));
  }
  return s.s * T.area_element();
}

// p u_+^{p-1} e^{u_+^p}.
std::vector<double> nl_term(const std::vector<double>& u, double p) {
  std::vector<double> out(u.size(), 0.0);
  for (size_t i = 0; i < u.size(); ++i) {
    if (u[i] > 0.0) {
      out[i] = p * std::pow(u[i], p - 1.0) * std::exp(std::pow(u[i], p));
    }
  }
  return out;
}

// int u_+^p e^{u_+^p} dA.
double weighted_mass(const SpectralTorus& T, const std::vector<double>& u,
                     double p) {
  KahanSum s;
  for (double v : u) {
    if (v > 0.0) {
      const double vp = std::pow(v, p);
      s.add(vp * std::exp(vp));
    }
  }
  return s.s * T.area_element();
}

void check_p_open(double p, const char* who) {
  if (!(p > 1.0 && p < 2.0)) {
    throw std::invalid_argument(std::string(who) + ": need p in (1,2)");
  }
}

}  // namespace

double j_functional(const SpectralTorus& T, const std::vector<double>& u,
                    double p, double beta) {
  check_p_open(p, "j_functional");
  if (!(beta > 0.0)) {
    throw std::invalid_argument("j_functional: need beta > 0");
  }
  const double m = mass_nl(T, u, p);
  if (m <= 0.0) return std::numeric_limits<double>::infinity();
  const double q = T.norm_h2(u);
  return 0.5 * (2.0 - p) * std::pow(p * q / (2.0 * beta), p / (2.0 - p)) -
         std::log(m);
}

std::vector<double> j_gradient(const SpectralTorus& T,
                               const std::vector<double>& u, double p,
                               double beta) {
  check_p_open(p, "j_gradient");
  const double m = mass_nl(T, u, p);
  if (m <= 0.0) {
    throw Error(ErrorCode::EmptyPositivePart,
                "j_gradient: positive part vanishes identically");
  }
  const double c = p * std::pow(p / (2.0 * beta), p / (2.0 - p));
  const double scale =
      c * std::pow(T.norm_h2(u), (2.0 * p - 2.0) / (2.0 - p));
  std::vector<double> g = T.ainv(nl_term(u, p));
  for (size_t i = 0; i < g.size(); ++i) {
    g[i] = scale * u[i] - g[i] / m;
  }
  return g;
}

double lambda_from_u(const SpectralTorus& T, const std::vector<double>& u,
                     double p, double beta) {
  check_p_open(p, "lambda_from_u");
  const double m = mass_nl(T, u, p);
  if (m <= 0.0) {
    throw Error(ErrorCode::EmptyPositivePart,
                "lambda_from_u: positive part vanishes identically");
  }
  const double q = T.norm_h2(u);
  return 2.0 * beta /
         (p * p *
          std::pow(p * q / (2.0 * beta), 2.0 * (p - 1.0) / (2.0 - p)) * m);
}

double beta_of(const SpectralTorus& T, const std::vector<double>& u, double p,
               double lambda) {
  if (!(p >= 1.0 && p <= 2.0) || !(lambda > 0.0)) {
    throw std::invalid_argument("beta_of: need p in [1,2] and lambda > 0");
  }
  const double m = mass_nl(T, u, p);
  const double w = weighted_mass(T, u, p);
  if (m <= 0.0 || w <= 0.0) return 0.0;
  return 0.5 * lambda * p * p * std::pow(m, (2.0 - p) / p) *
         std::pow(w, 2.0 * (p - 1.0) / p);
}

std::vector<double> el_residual(const SpectralTorus& T,
                                const std::vector<double>& u, double p,
                                double beta, double* lambda_out) {
  const double lam = lambda_from_u(T, u, p, beta);
  if (lambda_out != nullptr) *lambda_out = lam;
  std::vector<double> r = T.lap(u);
  const std::vector<double> nl = nl_term(u, p);
  const std::vector<double>& h = T.h();
  for (size_t i = 0; i < r.size(); ++i) {
    r[i] += h[i] * u[i] - lam * nl[i];
  }
  return r;
}

double residual_l2(const SpectralTorus& T, const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s * T.area_element());
}

// --- GMRES ------------------------------------------------------------------

namespace {

// Left-preconditioned restarted GMRES: solves op(x) = b to a relative
// tolerance measured in the preconditioned norm.  `op` and `prec` act on
// flattened fields.  The Krylov basis grows lazily, so memory tracks the
// iteration count actually used.
template <typename Op, typename Prec>
std::vector<double> gmres(const Op& op, const Prec& prec,
                          const std::vector<double>& b, double rel_tol,
                          int restart, int max_restarts) {
  const size_t dim = b.size();
  std::vector<double> x(dim, 0.0);
  const std::vector<double> mb = prec(b);
  const double bnorm = nrm2(mb);
  if (!(bnorm > 0.0)) return x;

  for (int round = 0; round < max_restarts; ++round) {
    // r = M (b - A x)
    std::vector<double> r;
    if (round == 0) {
      r = mb;
    } else {
      std::vector<double> ax = op(x);
      for (size_t i = 0; i < dim; ++i) ax[i] = b[i] - ax[i];
      r = prec(ax);
    }
    double beta0 = nrm2(r);
    if (!std::isfinite(beta0)) {
      throw Error(ErrorCode::KrylovBreakdown,
                  "non-finite residual in the inner linear solver");
    }
    if (beta0 <= rel_tol * bnorm) return x;

    std::vector<std::vector<double>> V;
    V.reserve(16);
    for (double& v : r) v /= beta0;
    V.push_back(std::move(r));
    std::vector<std::vector<double>> Hcols;
    std::vector<double> cs, sn;
    std::vector<double> g = {beta0};
    int jdone = 0;
    bool lucky = false;

    for (int j = 0; j < restart; ++j) {
      std::vector<double> w = prec(op(V[static_cast<size_t>(j)]));
      std::vector<double> hcol(static_cast<size_t>(j) + 2, 0.0);
      for (int i = 0; i <= j; ++i) {
        const double hij = dot(w, V[static_cast<size_t>(i)]);
        hcol[static_cast<size_t>(i)] = hij;
        axpy(-hij, V[static_cast<size_t>(i)], w);
      }
      const double hlast = nrm2(w);
      hcol[static_cast<size_t>(j) + 1] = hlast;
      if (!std::isfinite(hlast)) {
        throw Error(ErrorCode::KrylovBreakdown,
                    "non-finite Arnoldi coefficient");
      }
      // Apply previous Givens rotations, then create the new one.
      for (int i = 0; i < j; ++i) {
        const double t = cs[static_cast<size_t>(i)] * hcol[static_cast<size_t>(i)] +
                         sn[static_cast<size_t>(i)] * hcol[static_cast<size_t>(i) + 1];
        hcol[static_cast<size_t>(i) + 1] =
            -sn[static_cast<size_t>(i)] * hcol[static_cast<size_t>(i)] +
            cs[static_cast<size_t>(i)] * hcol[static_cast<size_t>(i) + 1];
        hcol[static_cast<size_t>(i)] = t;
      }
      const double denom = std::hypot(hcol[static_cast<size_t>(j)], hlast);
      double c = 1.0, s = 0.0;
      if (denom > 0.0) {
        c = hcol[static_cast<size_t>(j)] / denom;
        s = hlast / denom;
      }
      cs.push_back(c);
      sn.push_back(s);
      hcol[static_cast<size_t>(j)] = denom;
      hcol[static_cast<size_t>(j) + 1] = 0.0;
      g.push_back(-s * g[static_cast<size_t>(j)]);
      g[static_cast<size_t>(j)] *= c;
      Hcols.push_back(std::move(hcol));
      jdone = j + 1;

      const double res = std::abs(g[static_cast<size_t>(j) + 1]);
      if (hlast <= 1e-14 * bnorm) {
        lucky = true;
        break;
      }
      if (res <= rel_tol * bnorm) break;
      for (double& v : w) v /= hlast;
      V.push_back(std::move(w));
    }

    // Back-substitute y and update x.
    std::vector<double> y(static_cast<size_t>(jdone), 0.0);
    for (int i = jdone - 1; i >= 0; --i) {
      double s = g[static_cast<size_t>(i)];
      for (int l = i + 1; l < jdone; ++l) {
        s -= Hcols[static_cast<size_t>(l)][static_cast<size_t>(i)] *
             y[static_cast<size_t>(l)];
      }
      y[static_cast<size_t>(i)] = s / Hcols[static_cast<size_t>(i)][static_cast<size_t>(i)];
    }
    for (int i = 0; i < jdone; ++i) {
      axpy(y[static_cast<size_t>(i)], V[static_cast<size_t>(i)], x);
    }
    if (lucky || std::abs(g[static_cast<size_t>(jdone)]) <= rel_tol * bnorm) {
      return x;
    }
  }
  return x;  // best effort: outer damping copes with an inexact direction
}

}  // namespace

// --- Solvers ----------------------------------------------------------------

SolveOptions newton_defaults() {
  SolveOptions o;
  // Residuals bottom out near k_max^2 * eps * |u|, so the default target sits
  // above that floor on moderate grids; constant-weight runs can ask for less.
  o.tol = 1e-11;
  o.max_iterations = 40;
  return o;
}

SolveOptions fixed_lambda_defaults() {
  SolveOptions o;
  // The achievable residual floor scales with k_max^2 times roundoff, so the
  // target sits above the spectral noise of moderate grids.
  o.tol = 1e-11;
  o.max_iterations = 60;
  o.krylov_tol = 1e-8;
  return o;
}

SolveOptions p2_defaults() {
  SolveOptions o;
  o.tol = 1e-11;
  o.max_iterations = 400;
  o.krylov_tol = 1e-8;
  return o;
}

namespace {

SolveReport finalize_report(const SpectralTorus& T, std::vector<double> u,
                            double p, double beta, double lambda,
                            int iterations, double resid, bool enforce_beta) {
  SolveReport rep;
  rep.p = p;
  rep.beta = beta;
  rep.lambda = lambda;
  rep.iterations = iterations;
  rep.residual_l2 = resid;
  rep.u_max = *std::max_element(u.begin(), u.end());
  rep.u_min = *std::min_element(u.begin(), u.end());
  rep.positivity = rep.u_min > 0.0;
  rep.beta_check = beta_of(T, u, p, lambda);
  rep.u_values = std::move(u);
  if (!rep.positivity) {
    throw Error(ErrorCode::NonPositiveSolution,
                "converged iterate has min " + fmt(rep.u_min) +
                    " <= 0 (expected strict positivity)");
  }
  if (enforce_beta) {
    if (std::abs(rep.beta_check - beta) > 1e-10 * beta) {
      throw Error(ErrorCode::NonConvergence,
                  "multiplier identity failed: beta_check=" +
                      fmt(rep.beta_check) + " vs beta=" + fmt(beta));
    }
    if (2.0 * lambda > T.h_max() + 1e-9) {
      throw Error(ErrorCode::NonConvergence,
                  "multiplier bound violated: 2*lambda=" + fmt(2.0 * lambda) +
                      " > max h=" + fmt(T.h_max()));
    }
  }
  return rep;
}

}  // namespace

SolveReport solve_min(const SpectralTorus& T, double p, double beta,
                      const std::vector<double>& init,
                      const SolveOptions& opt) {
  check_p_open(p, "solve_min");
  if (!(beta > 0.0 && beta < 4.0 * kPi)) {
    throw std::invalid_argument("solve_min: need beta in (0, 4 pi)");
  }
  std::vector<double> u = init;
  double J = j_functional(T, u, p, beta);
  if (!std::isfinite(J)) {
    throw std::invalid_argument(
        "solve_min: initial field has no positive part");
  }
  SolveReport partial;
  partial.j_history.push_back(J);
  for (int it = 0; it < opt.max_iterations; ++it) {
    double lam = 0.0;
    std::vector<double> r = el_residual(T, u, p, beta, &lam);
    const double rn = residual_l2(T, r);
    partial.residual_history.push_back(rn);
    if (rn < opt.tol) {
      SolveReport rep = finalize_report(T, std::move(u), p, beta, lam, it, rn,
                                        /*enforce_beta=*/false);
      rep.j_history = std::move(partial.j_history);
      rep.residual_history = std::move(partial.residual_history);
      return rep;
    }
    std::vector<double> g = j_gradient(T, u, p, beta);
    const double gn2 = T.norm_h2(g);
    // Below this scale two J values compare equal up to roundoff, so the
    // objective can no longer arbitrate the line search.
    const double j_resolution =
        64.0 * std::numeric_limits<double>::epsilon() * (std::abs(J) + 1.0);
    double step = 1.0;
    std::vector<double> ut;
    double Jt = J;
    bool accepted = false;
    while (step > 1e-14) {
      ut = u;
      axpy(-step, g, ut);
      Jt = j_functional(T, ut, p, beta);
      const double margin = 1e-4 * step * gn2;
      if (margin > j_resolution) {
        if (Jt <= J - margin) {
          accepted = true;
          break;
        }
      } else if (Jt <= J + j_resolution) {
        // The Armijo margin is below what two J values can resolve, so the
        // objective can no longer arbitrate; require a strict decrease of the
        // equation residual instead, which stays accurate far below this
        // floor. The demanded fraction is kept well under the slowest
        // contraction rate seen on these grids.
        double lt = 0.0;
        std::vector<double> rt = el_residual(T, ut, p, beta, &lt);
        if (residual_l2(T, rt) < (1.0 - 1e-3 * step) * rn) {
          accepted = true;
          break;
        }
      }
      step /= 2.0;
    }
    if (!accepted) {
      throw Error(ErrorCode::LineSearchStall,
                  "descent stalled at iteration " + std::to_string(it) +
                      " (J=" + fmt(J) + ")");
    }
    u = std::move(ut);
    J = Jt;
    partial.j_history.push_back(J);
  }
  throw Error(ErrorCode::MaxIterations,
              "solve_min: residual " +
                  fmt(partial.residual_history.empty()
                          ? std::numeric_limits<double>::quiet_NaN()
                          : partial.residual_history.back()) +
                  " above tol after " + std::to_string(opt.max_iterations) +
                  " iterations");
}

namespace {

// One Newton direction for the beta-constrained residual map, with the
// multiplier differentiated through analytically.
std::vector<double> newton_direction(const SpectralTorus& T,
                                     const std::vector<double>& u, double p,
                                     double lam, const std::vector<double>& r,
                                     const SolveOptions& opt) {
  const size_t m = u.size();
  std::vector<double> V(m, 0.0), Vp(m, 0.0);
  for (size_t i = 0; i < m; ++i) {
    if (u[i] > 0.0) {
      const double up = u[i];
      const double upp = std::pow(up, p);
      const double e = std::exp(upp);
      V[i] = std::pow(up, p - 1.0) * e;
      Vp[i] = e * std::pow(up, p - 2.0) * (p - 1.0 + p * upp);
    }
  }
  const double M_nl = mass_nl(T, u, p);
  const double un2 = T.norm_h2(u);
  const std::vector<double> lapu = T.lap(u);
  const double cQ = 2.0 * (p - 1.0) / (2.0 - p);
  const std::vector<double>& h = T.h();
  const double dA = T.area_element();

  auto op = [&](const std::vector<double>& v) {
    double uv_h = 0.0, pvv = 0.0;
    for (size_t i = 0; i < m; ++i) {
      uv_h += lapu[i] * v[i] + h[i] * u[i] * v[i];
      pvv += V[i] * v[i];
    }
    uv_h *= dA;
    pvv *= p * dA;
    const double dlam = lam * (-cQ * 2.0 * uv_h / un2 - pvv / M_nl);
    std::vector<double> out = T.lap(v);
    for (size_t i = 0; i < m; ++i) {
      out[i] += h[i] * v[i] - lam * p * Vp[i] * v[i] - dlam * p * V[i];
    }
    return out;
  };
  auto prec = [&](const std::vector<double>& f) { return T.ainv(f); };
  return gmres(op, prec, r, opt.krylov_tol, opt.krylov_restart, 2);
}

}  // namespace

SolveReport solve_newton(const SpectralTorus& T, double p, double beta,
                         const std::vector<double>& init,
                         const SolveOptions& opt) {
  check_p_open(p, "solve_newton");
  if (!(beta > 0.0)) {
    throw std::invalid_argument("solve_newton: need beta > 0");
  }
  std::vector<double> u = init;
  std::vector<double> history;
  for (int it = 0; it < opt.max_iterations; ++it) {
    double lam = 0.0;
    std::vector<double> r = el_residual(T, u, p, beta, &lam);
    const double rn = residual_l2(T, r);
    history.push_back(rn);
    if (rn < opt.tol) {
      SolveReport rep = finalize_report(T, std::move(u), p, beta, lam, it, rn,
                                        /*enforce_beta=*/true);
      rep.residual_history = std::move(history);
      return rep;
    }
    std::vector<double> du = newton_direction(T, u, p, lam, r, opt);
    double step = 1.0;
    bool accepted = false;
    std::vector<double> ut;
    while (step > 1e-10) {
      ut = u;
      axpy(-step, du, ut);
      if (*std::max_element(ut.begin(), ut.end()) <= opt.ceiling) {
        std::vector<double> rt = el_residual(T, ut, p, beta);
        if (residual_l2(T, rt) < (1.0 - 0.2 * step) * rn) {
          accepted = true;
          break;
        }
      }
      step /= 2.0;
    }
    if (!accepted) {
      throw Error(ErrorCode::LineSearchStall,
                  "Newton damping stalled at residual " + fmt(rn));
    }
    u = std::move(ut);
  }
  throw Error(ErrorCode::MaxIterations,
              "solve_newton: residual " + fmt(history.back()) +
                  " above tol after " + std::to_string(opt.max_iterations) +
                  " iterations");
}

SolveReport solve_newton_fixed_lambda(const SpectralTorus& T, double p,
                                      double lambda,
                                      const std::vector<double>& init,
                                      const SolveOptions& opt) {
  if (!(p > 1.0 && p <= 2.0) || !(lambda > 0.0)) {
    throw std::invalid_argument(
        "solve_newton_fixed_lambda: need p in (1,2] and lambda > 0");
  }
  const std::vector<double>& h = T.h();
  auto resid = [&](const std::vector<double>& v) {
    std::vector<double> r = T.lap(v);
    const std::vector<double> nl = nl_term(v, p);
    for (size_t i = 0; i < r.size(); ++i) {
      r[i] += h[i] * v[i] - lambda * nl[i];
    }
    return r;
  };
  std::vector<double> u = init;
  std::vector<double> history;
  for (int it = 0; it < opt.max_iterations; ++it) {
    std::vector<double> r = resid(u);
    const double rn = residual_l2(T, r);
    history.push_back(rn);
    if (rn < opt.tol) {
      const double beta = beta_of(T, u, p, lambda);
      SolveReport rep = finalize_report(T, std::move(u), p, beta, lambda, it,
                                        rn, /*enforce_beta=*/true);
      rep.residual_history = std::move(history);
      return rep;
    }
    std::vector<double> diag(u.size(), 0.0);
    for (size_t i = 0; i < u.size(); ++i) {
      if (u[i] > 0.0) {
        const double upp = std::pow(u[i], p);
        diag[i] = lambda * p * std::exp(upp) * std::pow(u[i], p - 2.0) *
                  (p - 1.0 + p * upp);
      }
    }
    auto op = [&](const std::vector<double>& v) {
      std::vector<double> out = T.lap(v);
      for (size_t i = 0; i < out.size(); ++i) {
        out[i] += h[i] * v[i] - diag[i] * v[i];
      }
      return out;
    };
    auto prec = [&](const std::vector<double>& f) { return T.ainv(f); };
    std::vector<double> du =
        gmres(op, prec, r, opt.krylov_tol, opt.krylov_restart, 2);
    double step = 1.0;
    bool accepted = false;
    std::vector<double> ut;
    while (step > 1e-10) {
      ut = u;
      axpy(-step, du, ut);
      if (*std::max_element(ut.begin(), ut.end()) <= opt.ceiling) {
        if (residual_l2(T, resid(ut)) < (1.0 - 0.2 * step) * rn) {
          accepted = true;
          break;
        }
      }
      step /= 2.0;
    }
    if (!accepted) {
      throw Error(ErrorCode::LineSearchStall,
                  "fixed-multiplier Newton stalled at residual " + fmt(rn));
    }
    u = std::move(ut);
  }
  throw Error(ErrorCode::MaxIterations,
              "solve_newton_fixed_lambda: residual " + fmt(history.back()) +
                  " above tol after " + std::to_string(opt.max_iterations) +
                  " iterations");
}

SolveReport solve_p2(const SpectralTorus& T, double beta,
                     const std::vector<double>& init,
                     const SolveOptions& opt) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("solve_p2: need beta > 0");
  }
  const std::vector<double>& h = T.h();
  const double dA = T.area_element();

  auto w_of = [&](const std::vector<double>& u) {
    // 2 u_+ e^{u_+^2}: the nonlinear term at p = 2.
    std::vector<double> w(u.size(), 0.0);
    for (size_t i = 0; i < u.size(); ++i) {
      if (u[i] > 0.0) w[i] = 2.0 * u[i] * std::exp(u[i] * u[i]);
    }
    return w;
  };
  auto wmass = [&](const std::vector<double>& u) {
    double s = 0.0;
    for (double v : u) {
      if (v > 0.0) s += v * v * std::exp(v * v);
    }
    return s * dA;
  };
  auto project = [&](std::vector<double>& u) {
    const double q = T.norm_h2(u);
    if (!(q > 0.0)) {
      throw std::invalid_argument("solve_p2: field with nonpositive norm");
    }
    const double f = std::sqrt(beta / q);
    for (double& v : u) v *= f;
  };

  std::vector<double> u = init;
  project(u);

  // Phase 1: projected descent on -ln int(e^{u_+^2} - 1) over the norm sphere.
  std::vector<double> history;
  auto lam_of = [&](const std::vector<double>& v) {
    const double wm = wmass(v);
    if (!(wm > 0.0)) {
      throw Error(ErrorCode::EmptyPositivePart,
                  "solve_p2: positive part vanishes identically");
    }
    return beta / (2.0 * wm);
  };
  auto resid = [&](const std::vector<double>& v, double lam) {
    std::vector<double> r = T.lap(v);
    const std::vector<double> w = w_of(v);
    for (size_t i = 0; i < r.size(); ++i) {
      r[i] += h[i] * v[i] - lam * w[i];
    }
    return r;
  };
  auto fval = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) {
      if (x > 0.0) s += std::expm1(x * x);
    }
    if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
    return -std::log(s * dA);
  };

  double F = fval(u);
  if (!std::isfinite(F)) {
    throw std::invalid_argument("solve_p2: initial field has no positive part");
  }
  const int descent_budget = std::max(20, opt.max_iterations / 2);
  for (int it = 0; it < descent_budget; ++it) {
    const double lam = lam_of(u);
    std::vector<double> r = resid(u, lam);
    const double rn = residual_l2(T, r);
    history.push_back(rn);
    if (rn < 1e-6 || rn < opt.tol) break;
    // Riesz gradient of F, projected tangent to the sphere.
    double mexp = 0.0;
    for (double x : u) {
      if (x > 0.0) mexp += std::expm1(x * x);
    }
    mexp *= dA;
    std::vector<double> g = T.ainv(w_of(u));
    for (double& x : g) x = -x / mexp;
    double gu = 0.0;
    {
      std::vector<double> lu = T.lap(u);
      for (size_t i = 0; i < g.size(); ++i) {
        gu += g[i] * lu[i] + h[i] * g[i] * u[i];
      }
      gu *= dA;
    }
    for (size_t i = 0; i < g.size(); ++i) g[i] -= (gu / beta) * u[i];
    const double gn2 = T.norm_h2(g);
    double step = 1.0;
    bool accepted = false;
    std::vector<double> ut;
    double Ft = F;
    while (step > 1e-14) {
      ut = u;
      axpy(-step, g, ut);
      project(ut);
      Ft = fval(ut);
      if (Ft <= F - 1e-4 * step * gn2) {
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted) break;  // hand over to Newton
    u = std::move(ut);
    F = Ft;
  }

  // Phase 2: bordered Newton on (residual, norm constraint) in (u, lambda).
  // The linearization alone turns singular at the p = 2 criticality, so the
  // constraint row stays inside one augmented Krylov solve instead of being
  // eliminated through two ill-posed solves.
  double lam = lam_of(u);
  const size_t m = u.size();
  for (int it = 0; it < opt.max_iterations; ++it) {
    std::vector<double> r1 = resid(u, lam);
    const double r2 = T.norm_h2(u) - beta;
    const double rn = std::sqrt(residual_l2(T, r1) * residual_l2(T, r1) +
                                r2 * r2);
    history.push_back(rn);
    if (rn < opt.tol) {
      SolveReport rep = finalize_report(T, std::move(u), 2.0, beta, lam, it,
                                        rn, /*enforce_beta=*/true);
      rep.residual_history = std::move(history);
      return rep;
    }
    std::vector<double> diag(m, 0.0);
    for (size_t i = 0; i < m; ++i) {
      if (u[i] > 0.0) {
        const double u2 = u[i] * u[i];
        diag[i] = lam * 2.0 * (1.0 + 2.0 * u2) * std::exp(u2);
      }
    }
    const std::vector<double> w = w_of(u);
    const std::vector<double> lu = T.lap(u);
    // Augmented unknown z = [v; nu]: J v - nu w in the field rows and the
    // linearized constraint 2 <u, v>_h in the border row.
    auto op = [&](const std::vector<double>& z) {
      std::vector<double> v(z.begin(), z.end() - 1);
      const double nu = z.back();
      std::vector<double> out = T.lap(v);
      double uv = 0.0;
      for (size_t i = 0; i < m; ++i) {
        uv += lu[i] * v[i] + h[i] * u[i] * v[i];
        out[i] += h[i] * v[i] - diag[i] * v[i] - nu * w[i];
      }
      out.push_back(2.0 * uv * dA);
      return out;
    };
    auto prec = [&](const std::vector<double>& z) {
      std::vector<double> v(z.begin(), z.end() - 1);
      std::vector<double> out = T.ainv(v);
      out.push_back(z.back());
      return out;
    };
    std::vector<double> rhs = r1;
    rhs.push_back(r2);
    std::vector<double> z =
        gmres(op, prec, rhs, opt.krylov_tol, opt.krylov_restart, 2);
    std::vector<double> du(z.begin(), z.end() - 1);
    const double dlam = z.back();
    double step = 1.0;
    bool accepted = false;
    std::vector<double> ut;
    double lt = lam;
    while (step > 1e-10) {
      ut = u;
      axpy(-step, du, ut);
      lt = lam - step * dlam;
      if (*std::max_element(ut.begin(), ut.end()) <= opt.ceiling && lt > 0.0) {
        std::vector<double> rt1 = resid(ut, lt);
        const double rt2 = T.norm_h2(ut) - beta;
        const double rtn = std::sqrt(residual_l2(T, rt1) * residual_l2(T, rt1) +
                                     rt2 * rt2);
        if (rtn < (1.0 - 0.2 * step) * rn) {
          accepted = true;
          break;
        }
      }
      step /= 2.0;
    }
    if (!accepted) {
      throw Error(ErrorCode::LineSearchStall,
                  "solve_p2 Newton stalled at residual " + fmt(rn));
    }
    u = std::move(ut);
    lam = lt;
  }
  throw Error(ErrorCode::MaxIterations,
              "solve_p2: residual " + fmt(history.back()) +
                  " above tol after " + std::to_string(opt.max_iterations) +
                  " iterations");
}

// --- Blow-up diagnostics ----------------------------------------------------

PeakTable blow_up_diagnostics(const SpectralTorus& T,
                              const std::vector<double>& u, double lambda,
                              double p) {
  if (u.size() != static_cast<size_t>(T.n()) * T.n()) {
    throw std::invalid_argument("blow_up_diagnostics: field size mismatch");
  }
  if (!(lambda > 0.0) || !(p >= 1.0 && p <= 2.0)) {
    throw std::invalid_argument(
        "blow_up_diagnostics: need lambda > 0 and p in [1,2]");
  }
  PeakTable out;
  const int n = T.n();
  const double umax = *std::max_element(u.begin(), u.end());
  if (!(umax > 0.0)) return out;

  auto val = [&](int i, int j) {
    return u[static_cast<size_t>((i + n) % n) * n + (j + n) % n];
  };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double c = val(i, j);
      if (!(c > 0.5 * umax)) continue;
      bool strict_max = true;
      for (int di = -1; di <= 1 && strict_max; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          if (val(i + di, j + dj) >= c) {
            strict_max = false;
            break;
          }
        }
      }
      if (!strict_max) continue;
      PeakInfo pk;
      pk.i = i;
      pk.j = j;
      pk.gamma = c;
      pk.mu = radial::mu_of_log(c, p, std::log(lambda));
      pk.mu_cells = pk.mu / T.cell();
      out.peaks.push_back(pk);
    }
  }
  if (out.peaks.empty()) return out;

  const double L = T.box_length();
  const double cell = T.cell();
  const double dA = T.area_element();
  const double rad = 0.25 * L;
  for (PeakInfo& pk : out.peaks) {
    double wmass = 0.0;
    double dev = 0.0;
    bool resolved = 5.0 * pk.mu >= 3.0 * cell;
    for (int i = 0; i < n; ++i) {
      double dx = std::abs(i - pk.i) * cell;
      dx = std::min(dx, L - dx);
      for (int j = 0; j < n; ++j) {
        double dy = std::abs(j - pk.j) * cell;
        dy = std::min(dy, L - dy);
        const double r2 = dx * dx + dy * dy;
        const double uv = u[static_cast<size_t>(i) * n + j];
        if (r2 <= rad * rad && uv > 0.0) {
          const double upp = std::pow(uv, p);
          wmass += upp * std::exp(upp);
        }
        if (resolved) {
          const double s = std::sqrt(r2) / pk.mu;
          if (s <= 5.0) {
            const double z = 0.5 * p * std::pow(pk.gamma, p - 1.0) *
                             (pk.gamma - uv);
            dev = std::max(dev, std::abs(z - std::log1p(s * s)));
          }
        }
      }
    }
    wmass *= 0.5 * lambda * p * p * dA;
    pk.mass_ratio = wmass / (4.0 * kPi * std::pow(pk.gamma, 2.0 - p));
    pk.profile_deviation = resolved ? dev : -1.0;
  }

  out.beta_excess =
      beta_of(T, u, p, lambda) - 4.0 * kPi * static_cast<double>(out.peaks.size());

  // KR distance of the normalized nonlinear density to point masses at the
  // peaks, weighted by each peak's share of the density in its quarter-box.
  double shift = 0.0;
  for (double v : u) {
    if (v > 0.0) shift = std::max(shift, std::pow(v, p));
  }
  std::vector<double> dens(u.size(), 0.0);
  double total = 0.0;
  const double esh = std::exp(-shift);
  for (size_t i = 0; i < u.size(); ++i) {
    if (u[i] > 0.0) {
      dens[i] = std::exp(std::pow(u[i], p) - shift) - esh;
      total += dens[i];
    }
  }
  if (total > 0.0) {
    for (double& v : dens) v /= total * dA;
    testfn::Barycenter sigma;
    double wsum = 0.0;
    std::vector<double> shares;
    for (const PeakInfo& pk : out.peaks) {
      double share = 0.0;
      for (int i = 0; i < n; ++i) {
        double dx = std::abs(i - pk.i) * cell;
        dx = std::min(dx, L - dx);
        for (int j = 0; j < n; ++j) {
          double dy = std::abs(j - pk.j) * cell;
          dy = std::min(dy, L - dy);
          if (dx * dx + dy * dy <= rad * rad) {
            share += dens[static_cast<size_t>(i) * n + j];
          }
        }
      }
      share *= dA;
      shares.push_back(share);
      wsum += share;
      sigma.points.push_back({pk.i * cell, pk.j * cell});
    }
    if (wsum > 0.0) {
      for (double& s : shares) s /= wsum;
      sigma.weights = shares;
      out.kr_to_diracs = testfn::kr_distance(T.wrap(dens), sigma);
    }
  }
  return out;
}

// --- Continuation -----------------------------------------------------------

const char* branch_status_name(BranchStatus s) {
  switch (s) {
    case BranchStatus::Completed:
      return "Completed";
    case BranchStatus::BlowUpDetected:
      return "BlowUpDetected";
    case BranchStatus::StepCollapse:
      return "StepCollapse";
  }
  return "Unknown";
}

BranchRecord continue_branch(const SpectralTorus& T, double p,
                             double beta_start, double beta_end, int steps,
                             const std::vector<double>& init,
                             const ContinuationOptions& opt) {
  if (steps < 1) {
    throw std::invalid_argument("continue_branch: need steps >= 1");
  }
  if (beta_start == beta_end) {
    throw std::invalid_argument("continue_branch: empty beta range");
  }
  SolveOptions nopt = newton_defaults();
  nopt.tol = opt.newton_tol;

  BranchRecord rec;
  auto push = [&](SolveReport rep) -> const PeakTable& {
    rec.reports.push_back(std::move(rep));
    const SolveReport& r = rec.reports.back();
    rec.diagnostics.push_back(
        opt.with_diagnostics
            ? blow_up_diagnostics(T, r.u_values, r.lambda, r.p)
            : PeakTable{});
    return rec.diagnostics.back();
  };
  auto blown = [&](const SolveReport& r, const PeakTable& d) {
    if (r.u_max > opt.ceiling) return true;
    for (const PeakInfo& pk : d.peaks) {
      if (pk.mu_cells < opt.mu_floor_cells) return true;
    }
    return false;
  };

  // Converge the start point; failures here are the caller's problem.
  {
    const PeakTable& d0 = push(solve_newton(T, p, beta_start, init, nopt));
    if (blown(rec.reports.back(), d0)) {
      rec.status = BranchStatus::BlowUpDetected;
      rec.note = "start point already beyond the blow-up thresholds";
      return rec;
    }
  }

  const double dir = beta_end > beta_start ? 1.0 : -1.0;
  const double dstep0 = std::abs(beta_end - beta_start) / steps;
  double dstep = dstep0;
  double beta = beta_start;
  int attempts = 0;
  const int max_attempts =
      opt.max_attempts > 0 ? opt.max_attempts : steps * 10 + 50;

  while (true) {
    if (std::abs(beta - beta_end) <= 1e-12 * std::max(1.0, std::abs(beta_end))) {
      rec.status = BranchStatus::Completed;
      return rec;
    }
    if (++attempts > max_attempts) {
      rec.status = BranchStatus::StepCollapse;
      rec.note = "step budget exhausted";
      return rec;
    }
    const double remaining = std::abs(beta_end - beta);
    const double beta_try = beta + dir * std::min(dstep, remaining);
    bool ok = true;
    SolveReport rep;
    try {
      rep = solve_newton(T, p, beta_try, rec.reports.back().u_values, nopt);
      // A converged solve that collapses the peak height has left the branch
      // for a coexisting solution; treat it like a failed step and refine.
      if (rep.u_max < 0.6 * rec.reports.back().u_max) ok = false;
    } catch (const Error&) {
      ok = false;
    }
    if (!ok) {
      dstep /= 2.0;
      if (dstep < opt.collapse_fraction * dstep0) {
        rec.status = BranchStatus::StepCollapse;
        rec.note = "step collapsed at beta=" + fmt(beta);
        return rec;
      }
      continue;
    }
    beta = beta_try;
    const PeakTable& d = push(std::move(rep));
    if (blown(rec.reports.back(), d)) {
      rec.status = BranchStatus::BlowUpDetected;
      rec.note = "blow-up thresholds crossed at beta=" + fmt(beta);
      return rec;
    }
    dstep = std::min(dstep * opt.growth, opt.growth_cap * dstep0);
  }
}

// --- Branch seeding ---------------------------------------------------------

double balance_floor(double p, double lambda, double h0) {
  if (!(p >= 1.0 && p <= 2.0) || !(lambda > 0.0) || !(h0 > 0.0)) {
    throw std::invalid_argument("balance_floor: bad parameters");
  }
  auto f = [&](double b) {
    return h0 * b - lambda * p * std::pow(b, p - 1.0) * std::exp(std::pow(b, p));
  };
  const int nscan = 400;
  const double blo = 1e-6, bhi = 1.5;
  double prev_b = blo, prev_f = f(blo);
  double a = 0.0, b = 0.0;
  bool found = false;
  for (int i = 1; i <= nscan; ++i) {
    const double bb = blo + (bhi - blo) * i / nscan;
    const double fb = f(bb);
    if (prev_f < 0.0 && fb >= 0.0) {
      a = prev_b;
      b = bb;
      found = true;
      break;
    }
    prev_b = bb;
    prev_f = fb;
  }
  if (!found) {
    throw Error(ErrorCode::BracketFailure,
                "balance_floor: no ascending root of the constant balance in "
                "(0, 1.5]");
  }
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (a + b);
    if (f(mid) < 0.0) {
      a = mid;
    } else {
      b = mid;
    }
  }
  return 0.5 * (a + b);
}

namespace {

struct OrbitResult {
  OdeSolution sol;
  char cls = 'f';  // 'd' crossed the floor going down, 'u' turned up, 'f' flat
};

OrbitResult radial_orbit(double gamma, double p, double lambda, double h0,
                         double floor, double rmax) {
  const double a =
      (lambda * p * std::pow(gamma, p - 1.0) * std::exp(std::pow(gamma, p)) -
       h0 * gamma) /
      4.0;
  auto rhs = [p, h0, lambda](double r, const std::vector<double>& y,
                             std::vector<double>& dy) {
    const double B = y[0];
    const double V =
        B > 0.0 ? std::pow(B, p - 1.0) * std::exp(std::pow(B, p)) : 0.0;
    dy.resize(2);
    dy[0] = y[1];
    dy[1] = -y[1] / r + h0 * B - lambda * p * V;
  };
  OdeOptions opt;
  opt.rel_tol = 1e-12;
  opt.abs_tol = 1e-14;
  opt.initial_step = 1e-6;
  // Terminate when the orbit either descends to the floor or turns upward:
  // both "B - floor" and "-B'" start positive and the first to cross zero
  // stops the integration.
  opt.event = [floor](double, const std::vector<double>& y) {
    return std::min(y[0] - floor, -y[1]);
  };
  const double r0 = 1e-8;
  std::vector<double> y0 = {gamma - a * r0 * r0, -2.0 * a * r0};
  OrbitResult out;
  out.sol = integrate_ode(rhs, r0, rmax, std::move(y0), opt);
  if (out.sol.event_hit) {
    const std::vector<double>& ye = out.sol.ys.back();
    if (ye[0] - floor <= -ye[1]) {
      out.cls = 'd';
    } else {
      out.cls = 'u';
    }
  }
  return out;
}

}  // namespace

TransplantResult radial_transplant(const SpectralTorus& T, double p,
                                   double lambda, double h0, double gamma_lo,
                                   double gamma_hi) {
  if (!(gamma_lo > 0.0 && gamma_hi > gamma_lo)) {
    throw std::invalid_argument("radial_transplant: need 0 < gamma_lo < gamma_hi");
  }
  const double floor = balance_floor(p, lambda, h0);
  const double rmax = 0.5 * T.box_length();
  char c_lo = radial_orbit(gamma_lo, p, lambda, h0, floor, rmax).cls;
  char c_hi = radial_orbit(gamma_hi, p, lambda, h0, floor, rmax).cls;
  if (c_lo == c_hi) {
    throw Error(ErrorCode::BracketFailure,
                std::string("radial_transplant: no sign change in [gamma_lo, "
                            "gamma_hi] (both orbits classify '") +
                    c_lo + "')");
  }
  const bool down_hi = (c_hi == 'd');
  double glo = gamma_lo, ghi = gamma_hi;
  for (int it = 0; it < 60; ++it) {
    const double gm = 0.5 * (glo + ghi);
    const char c = radial_orbit(gm, p, lambda, h0, floor, rmax).cls;
    if ((c == 'd') == down_hi) {
      ghi = gm;
    } else {
      glo = gm;
    }
  }
  const double gamma = 0.5 * (glo + ghi);
  OrbitResult orb = radial_orbit(gamma, p, lambda, h0, floor, rmax);
  const double rstop = orb.sol.xs.back();

  const int n = T.n();
  const double cell = T.cell();
  const double L = T.box_length();
  std::vector<double> u(static_cast<size_t>(n) * n, floor);
  for (int i = 0; i < n; ++i) {
    double dx = i * cell;
    dx = std::min(dx, L - dx);
    for (int j = 0; j < n; ++j) {
      double dy = j * cell;
      dy = std::min(dy, L - dy);
      const double R = std::sqrt(dx * dx + dy * dy);
      if (R < rstop && R > 0.0) {
        const double B = interp_solution(orb.sol, std::max(R, 1e-8), 0);
        u[static_cast<size_t>(i) * n + j] = std::max(B, floor);
      }
    }
  }
  u[0] = gamma;

  TransplantResult out;
  out.values = std::move(u);
  out.gamma = gamma;
  out.floor = floor;
  out.stop_radius = rstop;
  return out;
}

std::vector<double> bubble_field(const SpectralTorus& T, double gamma,
                                 double p, double mu, double floor) {
  if (!(gamma > 0.0 && mu > 0.0)) {
    throw std::invalid_argument("bubble_field: need gamma > 0 and mu > 0");
  }
  const int n = T.n();
  const double cell = T.cell();
  const double L = T.box_length();
  const double gp = std::pow(gamma, p);
  std::vector<double> u(static_cast<size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    double dx = i * cell;
    dx = std::min(dx, L - dx);
    for (int j = 0; j < n; ++j) {
      double dy = j * cell;
      dy = std::min(dy, L - dy);
      const double t = std::log1p((dx * dx + dy * dy) / (mu * mu));
      const double B = gamma * (1.0 - 2.0 * t / (p * gp));
      u[static_cast<size_t>(i) * n + j] = std::max(B, floor);
    }
  }
  return u;
}

}  // namespace mtlab::torus
