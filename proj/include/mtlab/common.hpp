// Shared infrastructure: typed errors, adaptive quadrature, an embedded
// Runge-Kutta 5(4) integrator, and a small deterministic worker pool.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <queue>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mtlab {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// ---------------------------------------------------------------------------
// Typed errors
// ---------------------------------------------------------------------------

enum class ErrorCode {
  NonPositiveBubble,
  StepFailure,
  QuadratureTolerance,
  BracketFailure,
  SupportOverlap,
  UnderResolved,
  EmptyPositivePart,
  NonConvergence,
  SingularFit,
  LineSearchStall,
  KrylovBreakdown,
  NonPositiveSolution,
  StepCollapse,
  MaxIterations,
  IoFailure,
  ConfigParse,
  UnknownCommand,
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NonPositiveBubble: return "NonPositiveBubble";
    case ErrorCode::StepFailure: return "StepFailure";
    case ErrorCode::QuadratureTolerance: return "QuadratureTolerance";
    case ErrorCode::BracketFailure: return "BracketFailure";
    case ErrorCode::SupportOverlap: return "SupportOverlap";
    case ErrorCode::UnderResolved: return "UnderResolved";
    case ErrorCode::EmptyPositivePart: return "EmptyPositivePart";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularFit: return "SingularFit";
    case ErrorCode::LineSearchStall: return "LineSearchStall";
    case ErrorCode::KrylovBreakdown: return "KrylovBreakdown";
    case ErrorCode::NonPositiveSolution: return "NonPositiveSolution";
    case ErrorCode::StepCollapse: return "StepCollapse";
    case ErrorCode::MaxIterations: return "MaxIterations";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ConfigParse: return "ConfigParse";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
  }
  return "Unknown";
}

// Exception carrying a machine-readable code alongside the human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod quadrature (15-point Kronrod / 7-point Gauss)
// ---------------------------------------------------------------------------

struct QuadResult {
  double value = 0.0;
  double error = 0.0;  // estimated absolute error
};

namespace detail {

// Kronrod abscissae and weights on [-1,1] (half table; symmetric).
inline constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
QuadResult gk15(const F& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double hl = 0.5 * (b - a);
  double resk = 0.0, resg = 0.0;
  for (int i = 0; i < 7; ++i) {
    const double fsum = f(c - hl * kXgk[i]) + f(c + hl * kXgk[i]);
    resk += kWgk[i] * fsum;
    if (i % 2 == 1) resg += kWg[i / 2] * fsum;
  }
  const double fc = f(c);
  resk += kWgk[7] * fc;
  resg += kWg[3] * fc;
  QuadResult r;
  r.value = resk * hl;
  r.error = std::abs((resk - resg) * hl);
  return r;
}

struct QuadInterval {
  double a, b, value, error;
  bool operator<(const QuadInterval& o) const { return error < o.error; }
};

}  // namespace detail

// Integrates f over [a,b], bisecting the worst interval until the summed
// error estimate meets max(abs_tol, rel_tol*|I|) or the interval budget runs
// out.  The returned error field is the final estimate either way.
template <class F>
QuadResult integrate(const F& f, double a, double b, double rel_tol = 1e-12,
                     double abs_tol = 0.0, int max_intervals = 2000) {
  std::priority_queue<detail::QuadInterval> heap;
  auto first = detail::gk15(f, a, b);
  heap.push({a, b, first.value, first.error});
  double total = first.value, toterr = first.error;
  int used = 1;
  while (used < max_intervals &&
         toterr > std::max(abs_tol, rel_tol * std::abs(total))) {
    detail::QuadInterval worst = heap.top();
    heap.pop();
    const double m = 0.5 * (worst.a + worst.b);
    auto left = detail::gk15(f, worst.a, m);
    auto right = detail::gk15(f, m, worst.b);
    total += left.value + right.value - worst.value;
    toterr += left.error + right.error - worst.error;
    heap.push({worst.a, m, left.value, left.error});
    heap.push({m, worst.b, right.value, right.error});
    ++used;
  }
  return {total, toterr};
}

// Convenience wrapper that enforces the tolerance as a hard requirement.
template <class F>
double integrate_checked(const F& f, double a, double b, double rel_tol,
                         double abs_tol, const char* what) {
  auto r = integrate(f, a, b, rel_tol, abs_tol, 4000);
  if (r.error > std::max(abs_tol, rel_tol * std::abs(r.value))) {
    throw Error(ErrorCode::QuadratureTolerance,
                std::string(what) + ": estimate " + std::to_string(r.error) +
                    " exceeds budget");
  }
  return r.value;
}

// ---------------------------------------------------------------------------
// Embedded Dormand-Prince 5(4) integrator with step recording and an
// optional terminal event.
// ---------------------------------------------------------------------------

struct OdeOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-14;
  double initial_step = 1e-4;
  double min_step = 1e-14;
  long max_steps = 2000000;
  // Terminal event: integration stops where event(x, y) crosses zero from
  // positive to negative, refined by step bisection.
  std::function<double(double, const std::vector<double>&)> event;
};

struct OdeSolution {
  std::vector<double> xs;                  // accepted abscissae
  std::vector<std::vector<double>> ys;     // states at xs
  bool event_hit = false;
  double event_x = 0.0;
};

namespace detail {

using Rhs =
    std::function<void(double, const std::vector<double>&, std::vector<double>&)>;

// One Dormand-Prince step from (x, y) with size h; fills y5 (5th order) and
// err (component-wise difference against the embedded 4th-order result).
inline void dp_step(const Rhs& f, double x, const std::vector<double>& y,
                    double h, const std::vector<double>& k1,
                    std::vector<double>& y5, std::vector<double>& err,
                    std::vector<double>& k7) {
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static constexpr double e1 = 35.0 / 384 - 5179.0 / 57600,
                          e3 = 500.0 / 1113 - 7571.0 / 16695,
                          e4 = 125.0 / 192 - 393.0 / 640,
                          e5 = -2187.0 / 6784 + 92097.0 / 339200,
                          e6 = 11.0 / 84 - 187.0 / 2100, e7 = -1.0 / 40;
  const size_t n = y.size();
  std::vector<double> t(n), k2(n), k3(n), k4(n), k5(n), k6(n);
  for (size_t i = 0; i < n; ++i) t[i] = y[i] + h * a21 * k1[i];
  f(x + h / 5, t, k2);
  for (size_t i = 0; i < n; ++i) t[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
  f(x + 3 * h / 10, t, k3);
  for (size_t i = 0; i < n; ++i)
    t[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
  f(x + 4 * h / 5, t, k4);
  for (size_t i = 0; i < n; ++i)
    t[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
  f(x + 8 * h / 9, t, k5);
  for (size_t i = 0; i < n; ++i)
    t[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                       a65 * k5[i]);
  f(x + h, t, k6);
  y5.resize(n);
  for (size_t i = 0; i < n; ++i)
    y5[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] +
                        b6 * k6[i]);
  f(x + h, y5, k7);  // FSAL stage
  err.resize(n);
  for (size_t i = 0; i < n; ++i)
    err[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] +
                  e6 * k6[i] + e7 * k7[i]);
}

}  // namespace detail

// Integrates y' = f(x, y) from x0 to x1 (x1 > x0), recording every accepted
// step.  Throws StepFailure if the controller underflows its minimum step.
inline OdeSolution integrate_ode(const detail::Rhs& f, double x0, double x1,
                                 std::vector<double> y0,
                                 const OdeOptions& opt = {}) {
  OdeSolution sol;
  double x = x0;
  std::vector<double> y = std::move(y0);
  std::vector<double> k1(y.size()), y5, err, k7;
  f(x, y, k1);
  sol.xs.push_back(x);
  sol.ys.push_back(y);
  double h = opt.initial_step;
  const double ev0 = opt.event ? opt.event(x, y) : 1.0;
  double ev_prev = ev0;
  for (long step = 0; step < opt.max_steps && x < x1; ++step) {
    h = std::min(h, x1 - x);
    detail::dp_step(f, x, y, h, k1, y5, err, k7);
    double norm = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
      const double sc =
          opt.abs_tol + opt.rel_tol * std::max(std::abs(y[i]), std::abs(y5[i]));
      const double e = err[i] / sc;
      norm += e * e;
    }
    norm = std::sqrt(norm / static_cast<double>(y.size()));
    if (norm <= 1.0 || h <= opt.min_step * std::max(1.0, std::abs(x))) {
      if (norm > 1.0) {
        throw Error(ErrorCode::StepFailure,
                    "step controller underflowed at x=" + std::to_string(x));
      }
      if (opt.event) {
        const double ev = opt.event(x + h, y5);
        if (ev_prev > 0.0 && ev <= 0.0) {
          // Bisect the step fraction on re-taken partial steps.
          double lo = 0.0, hi = 1.0;
          std::vector<double> ym, errm, k7m;
          for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            detail::dp_step(f, x, y, mid * h, k1, ym, errm, k7m);
            (opt.event(x + mid * h, ym) > 0.0 ? lo : hi) = mid;
          }
          detail::dp_step(f, x, y, hi * h, k1, ym, errm, k7m);
          sol.xs.push_back(x + hi * h);
          sol.ys.push_back(ym);
          sol.event_hit = true;
          sol.event_x = x + hi * h;
          return sol;
        }
        ev_prev = ev;
      }
      x += h;
      y = y5;
      k1 = k7;
      sol.xs.push_back(x);
      sol.ys.push_back(y);
    }
    const double factor =
        (norm > 0.0) ? 0.9 * std::pow(norm, -0.2) : 5.0;
    h *= std::clamp(factor, 0.2, 5.0);
  }
  if (x < x1) {
    throw Error(ErrorCode::StepFailure, "step budget exhausted");
  }
  return sol;
}

// Linear interpolation on a recorded solution component (adequate for
// post-processing on the dense accepted-step grid).
inline double interp_solution(const OdeSolution& sol, double x, size_t comp) {
  const auto& xs = sol.xs;
  if (x <= xs.front()) return sol.ys.front()[comp];
  if (x >= xs.back()) return sol.ys.back()[comp];
  auto it = std::lower_bound(xs.begin(), xs.end(), x);
  const size_t j = static_cast<size_t>(it - xs.begin());
  const double w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
  return (1.0 - w) * sol.ys[j - 1][comp] + w * sol.ys[j][comp];
}

// ---------------------------------------------------------------------------
// Deterministic worker pool: results are indexed, so scheduling order never
// affects output.  MTLAB_THREADS caps parallelism (1 disables threading).
// ---------------------------------------------------------------------------

inline int max_threads() {
  if (const char* env = std::getenv("MTLAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

template <class F>
void parallel_for(size_t count, const F& body) {
  const int threads = std::min<size_t>(max_threads(), count);
  if (threads <= 1) {
    for (size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (size_t i = static_cast<size_t>(t); i < count;
             i += static_cast<size_t>(threads)) {
          body(i);
        }
      } catch (...) {
        errors[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace mtlab
