// Command-line front end: JSON config plumbing with flag overrides, dispatch
// of the experiment families, and deterministic CSV + JSON report output.
#include "mtlab/cli_runner.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mtlab/common.hpp"
#include "mtlab/radial_core.hpp"
#include "mtlab/test_functions.hpp"
#include "mtlab/torus_solver.hpp"

namespace mtlab::cli {
namespace {

using nlohmann::json;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// RFC 4180: quote fields containing commas, quotes, or line breaks; double
// any embedded quotes.
std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') out += '"';
  }
  out += '"';
  return out;
}

std::string sidecar_path(const std::string& csv_path) {
  if (csv_path.size() >= 4 &&
      csv_path.compare(csv_path.size() - 4, 4, ".csv") == 0) {
    return csv_path.substr(0, csv_path.size() - 4) + ".json";
  }
  return csv_path + ".json";
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error(ErrorCode::IoFailure, "cannot open '" + path + "' for writing");
  }
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  f.flush();
  if (!f) {
    throw Error(ErrorCode::IoFailure, "short write to '" + path + "'");
  }
}

// --- Config plumbing --------------------------------------------------------

void config_fail(const std::string& msg) {
  throw Error(ErrorCode::ConfigParse, msg);
}

json load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) config_fail("cannot read config file '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    config_fail("config file '" + path + "': " + e.what());
  }
  return {};
}

// Overlays `doc` onto `cfg`, refusing unknown fields and type changes so a
// typo in a config file never runs with silently dropped settings.
void merge_config(json& cfg, const json& doc, const std::string& command) {
  if (!doc.is_object()) {
    config_fail("config for '" + command + "' must be a JSON object");
  }
  for (const auto& item : doc.items()) {
    const std::string& key = item.key();
    if (!cfg.contains(key)) {
      config_fail("unknown field '" + key + "' for command '" + command + "'");
    }
    const json& cur = cfg.at(key);
    const json& val = item.value();
    if (cur.is_number() && val.is_number()) {
      cfg[key] = val.get<double>();
    } else if (cur.is_string() && val.is_string()) {
      cfg[key] = val.get<std::string>();
    } else if (cur.is_array() && val.is_array()) {
      for (const auto& e : val) {
        if (!e.is_number()) {
          config_fail("field '" + key + "': expected an array of numbers");
        }
      }
      cfg[key] = val;
    } else {
      config_fail("field '" + key + "': expected a " +
                  std::string(cur.type_name()) + " value");
    }
  }
}

std::vector<double> parse_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      size_t pos = 0;
      const double v = std::stod(tok, &pos);
      while (pos < tok.size() && std::isspace(static_cast<unsigned char>(
                                     tok[pos]))) {
        ++pos;
      }
      if (pos != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      config_fail("field '" + key + "': cannot parse '" + tok +
                  "' as a number");
    }
  }
  if (out.empty()) config_fail("field '" + key + "': empty list");
  return out;
}

double parse_number(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    config_fail("field '" + key + "': cannot parse '" + s + "' as a number");
  }
  return 0.0;
}

double num(const json& cfg, const char* key) {
  return cfg.at(key).get<double>();
}

int integer(const json& cfg, const char* key) {
  const double v = num(cfg, key);
  if (std::floor(v) != v) {
    config_fail(std::string("field '") + key + "' must be an integer");
  }
  return static_cast<int>(v);
}

std::vector<double> list(const json& cfg, const char* key) {
  return cfg.at(key).get<std::vector<double>>();
}

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

void check_positive(const json& cfg, const char* key) {
  if (!(num(cfg, key) > 0.0)) {
    config_fail(std::string("field '") + key + "' must be positive");
  }
}

void check_grid(const json& cfg) {
  const int n = integer(cfg, "n");
  if (n < 8 || !is_pow2(n)) {
    config_fail("field 'n' must be a power of two, at least 8");
  }
  check_positive(cfg, "box");
}

void check_sorted(const std::vector<double>& g, const char* key) {
  for (size_t i = 0; i + 1 < g.size(); ++i) {
    if (!(g[i] < g[i + 1])) {
      config_fail(std::string("field '") + key +
                  "' must be strictly ascending");
    }
  }
}

void apply_threads(const json& cfg) {
  const int t = integer(cfg, "threads");
  if (t > 0) {
    setenv("MTLAB_THREADS", std::to_string(t).c_str(), 1);
  }
}

// --- Shared field builders --------------------------------------------------

std::vector<double> bowl_h(int n, double h0, double amp) {
  std::vector<double> h(static_cast<size_t>(n) * n, h0);
  if (amp != 0.0) {
    for (int i = 0; i < n; ++i) {
      const double cx = std::cos(2.0 * kPi * i / n);
      for (int j = 0; j < n; ++j) {
        const double cy = std::cos(2.0 * kPi * j / n);
        h[static_cast<size_t>(i) * n + j] = h0 + amp * (2.0 - cx - cy);
      }
    }
  }
  return h;
}

std::vector<double> initial_field(const json& cfg, int n) {
  std::vector<double> u(static_cast<size_t>(n) * n, num(cfg, "init_level"));
  const double amp = num(cfg, "init_noise");
  if (amp > 0.0) {
    std::mt19937 rng(static_cast<unsigned>(integer(cfg, "seed")));
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (double& v : u) v += amp * d(rng);
  }
  return u;
}

void emit(const Table& t, const std::string& command, const json& cfg,
          const json& results, const std::string& recipe) {
  write_report(t, command, cfg.dump(), results.dump(), recipe,
               cfg.at("out").get<std::string>());
}

// Subsampling stride that keeps roughly `max_rows` rows and always retains
// the final point.
void push_subsampled(Table& t, size_t count, int max_rows,
                     const std::function<std::vector<double>(size_t)>& row) {
  const size_t stride =
      std::max<size_t>(1, count / static_cast<size_t>(std::max(1, max_rows)));
  size_t last_pushed = 0;
  for (size_t i = 0; i < count; i += stride) {
    t.rows.push_back(row(i));
    last_pushed = i;
  }
  if (count > 0 && last_pushed != count - 1) t.rows.push_back(row(count - 1));
}

// --- Commands ---------------------------------------------------------------

json bubble_defaults() {
  return {{"gamma", 8.0},   {"h0", 1.0},   {"max_rows", 240.0},
          {"out", "bubble.csv"}, {"p", 1.5}, {"s_max", 10.0},
          {"seed", 0.0},    {"threads", 0.0}};
}

void run_bubble(const json& cfg) {
  check_positive(cfg, "s_max");
  const double gamma = num(cfg, "gamma"), p = num(cfg, "p");
  const double s_max = num(cfg, "s_max");
  // Size the analysis radius to cover the requested reach (the canonical
  // radius stops near s = 4); the height cap still binds for small gamma.
  const double gp = std::pow(gamma, p);
  const double mu = std::exp(-std::log(gamma) - 0.5 * gp);
  const double t_edge =
      std::min(std::log1p(s_max * s_max) + 0.1, 0.99 * 0.5 * p * gp);
  radial::BubbleParams params = radial::BubbleParams::create(
      gamma, p, mu, num(cfg, "h0"), mu * std::sqrt(std::expm1(t_edge)));
  radial::RadialProfile prof = radial::solve_bubble(params, s_max);
  radial::WGammaResult wg = radial::w_gamma_extract(prof);

  Table t;
  t.columns = {"s", "z", "log1s2", "deviation", "b"};
  push_subsampled(t, prof.s_grid.size(), integer(cfg, "max_rows"),
                  [&](size_t i) -> std::vector<double> {
                    const double s = prof.s_grid[i];
                    const double limit = std::log1p(s * s);
                    return {s, prof.z_values[i], limit,
                            std::abs(prof.z_values[i] - limit),
                            prof.b_values[i]};
                  });
  json results = {{"gamma", gamma},
                  {"log_lambda", params.log_lambda},
                  {"mu", params.mu},
                  {"n_profile_points", prof.s_grid.size()},
                  {"p", p},
                  {"rbar", params.rbar},
                  {"remainder_sup_ratio", wg.sup_ratio}};
  emit(t, "bubble", cfg, results,
       "x: s (log scale); y: deviation; expect uniform shrink ~ gamma^-p");
}

json moments_defaults() {
  return {{"out", "moments.csv"}, {"seed", 0.0}, {"threads", 0.0},
          {"tol", 1e-12}};
}

void run_moments(const json& cfg) {
  check_positive(cfg, "tol");
  radial::MomentTable tab = radial::moment_integrals(num(cfg, "tol"));
  const double targets[6] = {4.0 * kPi,
                             4.0 * kPi,
                             4.0 * kPi,
                             4.0 * kPi,
                             8.0 * kPi + 2.0 * kPi * kPi * kPi / 3.0,
                             1.5 * kPi};
  Table t;
  t.columns = {"index", "value", "target", "rel_err", "error_estimate"};
  for (int i = 0; i < 6; ++i) {
    const double v = tab.values[static_cast<size_t>(i)];
    t.rows.push_back({static_cast<double>(i), v, targets[i],
                      std::abs(v - targets[i]) / std::abs(targets[i]),
                      tab.error_estimates[static_cast<size_t>(i)]});
  }
  emit(t, "moments", cfg, json::object(),
       "x: index; y: rel_err (log scale); expect below 1e-8");
}

json w1_defaults() {
  return {{"max_rows", 300.0}, {"out", "w1.csv"},  {"p", 1.5},
          {"probes", json::array()}, {"s_max", 2e4}, {"seed", 0.0},
          {"threads", 0.0}};
}

double flux_closed(double p) {
  return (16.0 * (p - 1.0) / (p * p * p)) *
         ((p - 1.0) * (kPi * kPi * kPi / 3.0 + 33.0 * kPi / 2.0) +
          1.5 * kPi * (p - 2.0) - 3.5 * (4.0 * p - 5.0) * kPi);
}

void run_w1(const json& cfg) {
  check_positive(cfg, "s_max");
  const double p = num(cfg, "p");
  const std::vector<double> probes = cfg.at("probes").get<std::vector<double>>();
  radial::W1Solution sol = radial::solve_w1(p, num(cfg, "s_max"), probes);

  Table t;
  t.columns = {"s", "w0", "w1"};
  push_subsampled(t, sol.s_grid.size(), integer(cfg, "max_rows"),
                  [&](size_t i) -> std::vector<double> {
                    return {sol.s_grid[i], sol.w0_values[i], sol.w1_values[i]};
                  });
  const double target = flux_closed(p);
  json results = {{"far_field_constant", sol.far_field_constant},
                  {"flux_integral", sol.flux_integral},
                  {"flux_rel_err",
                   std::abs(sol.flux_integral - target) / std::abs(target)},
                  {"flux_target", target},
                  {"p", p},
                  {"probe_s", probes},
                  {"probe_values", sol.probe_values}};
  emit(t, "w1", cfg, results,
       "x: s (log scale); y: w1; expect -c ln(1+s^2) tail, c = flux/(4 pi)");
}

json energy_expansion_defaults() {
  return {{"gammas", json::array({6.0, 8.0, 10.0, 12.0})},
          {"h0", 1.0},
          {"out", "energy_expansion.csv"},
          {"p", 1.5},
          {"seed", 0.0},
          {"threads", 0.0}};
}

void run_energy_expansion(const json& cfg) {
  const double p = num(cfg, "p"), h0 = num(cfg, "h0");
  const std::vector<double> gammas = list(cfg, "gammas");
  check_sorted(gammas, "gammas");
  if (gammas.size() < 4) {
    config_fail("field 'gammas': the expansion fit needs at least 4 heights");
  }
  std::vector<radial::BubbleEnergy> slots(gammas.size());
  parallel_for(gammas.size(), [&](size_t i) {
    slots[i] = radial::bubble_energy(gammas[i], p, h0);
  });

  Table t;
  t.columns = {"gamma", "mass_weighted", "mass_plain", "product", "excess"};
  std::vector<std::pair<double, double>> samples;
  for (size_t i = 0; i < gammas.size(); ++i) {
    t.rows.push_back({gammas[i], slots[i].mass_weighted, slots[i].mass_plain,
                      slots[i].product, slots[i].product - 4.0 * kPi});
    samples.emplace_back(gammas[i], slots[i].product);
  }
  radial::ExpansionFit fit = radial::fit_expansion(samples, p);
  const double c0_target = 4.0 * kPi;
  const double c2_target = 16.0 * kPi * (p - 1.0) / (p * p);
  json results = {{"c0", fit.c0},
                  {"c0_rel_err", std::abs(fit.c0 - c0_target) / c0_target},
                  {"c0_target", c0_target},
                  {"c1", fit.c1},
                  {"c2", fit.c2},
                  {"c2_rel_err",
                   c2_target != 0.0
                       ? std::abs(fit.c2 - c2_target) / std::abs(c2_target)
                       : std::abs(fit.c2)},
                  {"c2_target", c2_target},
                  {"fit_residual", fit.residual},
                  {"p", p}};
  emit(t, "energy-expansion", cfg, results,
       "x: gamma^-p; y: excess; expect line through origin, slope c2");
}

json testfn_defaults() {
  return {{"beta", 9.0 * kPi}, {"box", 2.0 * kPi},
          {"gammas", json::array({6.0, 8.0, 10.0})},
          {"k", 2.0},          {"n", 256.0},
          {"out", "testfn.csv"}, {"p", 1.5},
          {"seed", 0.0},       {"threads", 0.0}};
}

void run_testfn(const json& cfg) {
  check_grid(cfg);
  check_positive(cfg, "beta");
  const double p = num(cfg, "p"), beta = num(cfg, "beta");
  const double L = num(cfg, "box");
  const int n = integer(cfg, "n"), k = integer(cfg, "k");
  const std::vector<double> gammas = list(cfg, "gammas");
  check_sorted(gammas, "gammas");
  if (k != 1 && k != 2) config_fail("field 'k' must be 1 or 2");

  testfn::Barycenter sigma;
  if (k == 1) {
    sigma.points = {{0.5 * L, 0.5 * L}};
    sigma.weights = {1.0};
  } else {
    sigma.points = {{0.25 * L, 0.25 * L}, {0.75 * L, 0.75 * L}};
    sigma.weights = {0.5, 0.5};
  }
  torus::TorusField tmpl;
  tmpl.n = n;
  tmpl.box_length = L;
  tmpl.values.assign(static_cast<size_t>(n) * n, 0.0);
  tmpl.h_values.assign(static_cast<size_t>(n) * n, 1.0);

  Table t;
  t.columns = {"gamma",        "tau",          "dirichlet", "l2_disc",
               "log_mass",     "j_exact_norm", "j_grid_norm", "kr_dist"};
  for (double g : gammas) {
    const double tau = testfn::tau_solve(1.0 / k, g, p);
    const double gp = std::pow(g, p);
    torus::TorusField field = testfn::build_phi(sigma, g, p, tmpl);
    testfn::PhiEnergies e = testfn::phi_energies(field, p, beta);
    const double kr =
        testfn::kr_distance(testfn::normalized_density(field, p), sigma);
    t.rows.push_back({g, tau, testfn::dirichlet_energy(g, p, tau),
                      testfn::l2_disc(g, p, tau), testfn::log_mass(g, p),
                      testfn::j_value(g, p, k, beta) / gp, e.j / gp, kr});
  }
  json results = {{"beta", beta}, {"box", L}, {"k", k}, {"n", n}, {"p", p}};
  emit(t, "testfn", cfg, results,
       "x: gamma; y: j_exact_norm and kr_dist; expect descent and collapse");
}

json solve_defaults() {
  return {{"beta", 2.0 * kPi}, {"bowl_amp", 0.0},  {"box", 2.0 * kPi},
          {"descent_tol", 1e-8}, {"h0", 1.0},      {"init_level", 0.5},
          {"init_noise", 0.0}, {"max_iterations", 2000.0},
          {"method", "newton"}, {"n", 64.0},       {"out", "solve.csv"},
          {"p", 1.5},          {"seed", 0.0},      {"seed_tol", 1e-5},
          {"threads", 0.0},    {"tol", 1e-11}};
}

torus::SolveReport dispatch_solve(const json& cfg,
                                  const torus::SpectralTorus& T) {
  const double p = num(cfg, "p"), beta = num(cfg, "beta");
  const std::string method = cfg.at("method").get<std::string>();
  std::vector<double> u0 = initial_field(cfg, T.n());
  const int max_it = integer(cfg, "max_iterations");

  if (method == "descent") {
    torus::SolveOptions opt;
    opt.tol = num(cfg, "descent_tol");
    opt.max_iterations = max_it;
    return torus::solve_min(T, p, beta, u0, opt);
  }
  if (method == "newton") {
    torus::SolveOptions seed;
    seed.tol = num(cfg, "seed_tol");
    seed.max_iterations = max_it;
    torus::SolveReport coarse = torus::solve_min(T, p, beta, u0, seed);
    torus::SolveOptions opt = torus::newton_defaults();
    opt.tol = num(cfg, "tol");
    return torus::solve_newton(T, p, beta, coarse.u_values, opt);
  }
  if (method == "p2") {
    if (p != 2.0) config_fail("method 'p2' requires p = 2");
    torus::SolveOptions opt = torus::p2_defaults();
    opt.tol = num(cfg, "tol");
    return torus::solve_p2(T, beta, u0, opt);
  }
  config_fail("field 'method' must be one of descent, newton, p2");
  return {};
}

void run_solve(const json& cfg) {
  check_grid(cfg);
  check_positive(cfg, "tol");
  check_positive(cfg, "descent_tol");
  check_positive(cfg, "seed_tol");
  const int n = integer(cfg, "n");
  torus::SpectralTorus T(n, num(cfg, "box"),
                         bowl_h(n, num(cfg, "h0"), num(cfg, "bowl_amp")));
  torus::SolveReport rep = dispatch_solve(cfg, T);

  Table t;
  t.columns = {"p",     "beta",  "lambda",     "iterations", "residual_l2",
               "u_max", "u_min", "beta_check", "positive"};
  t.rows.push_back({rep.p, rep.beta, rep.lambda,
                    static_cast<double>(rep.iterations), rep.residual_l2,
                    rep.u_max, rep.u_min, rep.beta_check,
                    rep.positivity ? 1.0 : 0.0});
  json results = {{"h_max", T.h_max()},
                  {"h_min", T.h_min()},
                  {"method", cfg.at("method").get<std::string>()},
                  {"two_lambda_below_h_max", 2.0 * rep.lambda <= T.h_max()}};
  emit(t, "solve", cfg, results,
       "single row; check residual_l2 against tol and beta_check vs beta");
}

json continue_defaults() {
  return {{"beta_end", 3.8 * kPi}, {"beta_start", 2.0 * kPi},
          {"bowl_amp", 0.15},      {"box", 2.0 * kPi},
          {"ceiling", 8.0},        {"growth", 1.3},
          {"h0", 1.0},             {"init_level", 0.5},
          {"init_noise", 0.0},     {"mu_floor_cells", 2.0},
          {"n", 64.0},             {"newton_tol", 1e-11},
          {"out", "continue.csv"}, {"p", 1.5},
          {"seed", 0.0},           {"seed_tol", 1e-5},
          {"steps", 10.0},         {"threads", 0.0}};
}

void run_continue(const json& cfg) {
  check_grid(cfg);
  check_positive(cfg, "newton_tol");
  check_positive(cfg, "seed_tol");
  const double p = num(cfg, "p");
  const double beta_start = num(cfg, "beta_start");
  const double beta_end = num(cfg, "beta_end");
  const int steps = integer(cfg, "steps");
  if (steps < 1) config_fail("field 'steps' must be at least 1");
  const int n = integer(cfg, "n");
  torus::SpectralTorus T(n, num(cfg, "box"),
                         bowl_h(n, num(cfg, "h0"), num(cfg, "bowl_amp")));

  torus::SolveOptions seed;
  seed.tol = num(cfg, "seed_tol");
  torus::SolveReport coarse =
      torus::solve_min(T, p, beta_start, initial_field(cfg, n), seed);
  torus::SolveOptions polish = torus::newton_defaults();
  polish.tol = num(cfg, "newton_tol");
  torus::SolveReport first =
      torus::solve_newton(T, p, beta_start, coarse.u_values, polish);

  torus::ContinuationOptions copt;
  copt.ceiling = num(cfg, "ceiling");
  copt.mu_floor_cells = num(cfg, "mu_floor_cells");
  copt.newton_tol = num(cfg, "newton_tol");
  copt.growth = num(cfg, "growth");
  copt.with_diagnostics = true;
  torus::BranchRecord branch = torus::continue_branch(
      T, p, beta_start, beta_end, steps, first.u_values, copt);

  Table t;
  t.columns = {"step",        "beta",  "lambda",  "iterations",
               "residual_l2", "u_max", "n_peaks", "mu_cells_min",
               "mass_ratio_max", "beta_excess"};
  for (size_t i = 0; i < branch.reports.size(); ++i) {
    const torus::SolveReport& r = branch.reports[i];
    double mu_min = 0.0, ratio_max = 0.0, excess = 0.0;
    double peaks = 0.0;
    if (i < branch.diagnostics.size()) {
      const torus::PeakTable& pt = branch.diagnostics[i];
      peaks = static_cast<double>(pt.peaks.size());
      excess = pt.beta_excess;
      for (const torus::PeakInfo& pk : pt.peaks) {
        mu_min = (mu_min == 0.0) ? pk.mu_cells : std::min(mu_min, pk.mu_cells);
        ratio_max = std::max(ratio_max, pk.mass_ratio);
      }
    }
    t.rows.push_back({static_cast<double>(i), r.beta, r.lambda,
                      static_cast<double>(r.iterations), r.residual_l2,
                      r.u_max, peaks, mu_min, ratio_max, excess});
  }
  json results = {{"final_beta", branch.reports.back().beta},
                  {"n_reports", branch.reports.size()},
                  {"note", branch.note},
                  {"status", torus::branch_status_name(branch.status)}};
  emit(t, "continue", cfg, results,
       "x: beta; y: u_max; expect monotone growth toward the quantized level");
}

json diagnose_defaults() {
  return {{"beta", 2.5 * kPi}, {"bowl_amp", 0.15}, {"box", 2.0 * kPi},
          {"h0", 1.0},         {"init_level", 0.5}, {"init_noise", 0.0},
          {"n", 64.0},         {"out", "diagnose.csv"},
          {"p", 1.5},          {"seed", 0.0},       {"seed_tol", 1e-5},
          {"threads", 0.0},    {"tol", 1e-11}};
}

void run_diagnose(const json& cfg) {
  check_grid(cfg);
  check_positive(cfg, "tol");
  check_positive(cfg, "seed_tol");
  const double p = num(cfg, "p"), beta = num(cfg, "beta");
  const int n = integer(cfg, "n");
  torus::SpectralTorus T(n, num(cfg, "box"),
                         bowl_h(n, num(cfg, "h0"), num(cfg, "bowl_amp")));
  torus::SolveOptions seed;
  seed.tol = num(cfg, "seed_tol");
  torus::SolveReport coarse =
      torus::solve_min(T, p, beta, initial_field(cfg, n), seed);
  torus::SolveOptions polish = torus::newton_defaults();
  polish.tol = num(cfg, "tol");
  torus::SolveReport rep =
      torus::solve_newton(T, p, beta, coarse.u_values, polish);
  torus::PeakTable pt = torus::blow_up_diagnostics(T, rep.u_values,
                                                   rep.lambda, p);

  Table t;
  t.columns = {"peak", "i",        "j",          "x",
               "y",    "gamma",    "mu",         "mu_cells",
               "mass_ratio", "profile_deviation"};
  const double cell = T.cell();
  for (size_t q = 0; q < pt.peaks.size(); ++q) {
    const torus::PeakInfo& pk = pt.peaks[q];
    t.rows.push_back({static_cast<double>(q), static_cast<double>(pk.i),
                      static_cast<double>(pk.j), pk.i * cell, pk.j * cell,
                      pk.gamma, pk.mu, pk.mu_cells, pk.mass_ratio,
                      pk.profile_deviation});
  }
  json results = {{"beta", rep.beta},
                  {"beta_check", rep.beta_check},
                  {"beta_excess", pt.beta_excess},
                  {"kr_to_diracs", pt.kr_to_diracs},
                  {"lambda", rep.lambda},
                  {"residual_l2", rep.residual_l2},
                  {"u_max", rep.u_max}};
  emit(t, "diagnose", cfg, results,
       "one row per peak; mass_ratio near 1 flags a quantized concentration");
}

// --- Registry and dispatch --------------------------------------------------

struct Command {
  const char* name;
  const char* description;
  json (*defaults)();
  void (*exec)(const json&);
};

const Command kCommands[] = {
    {"bubble",
     "Integrate one concentrating radial profile and report its deviation "
     "from the limit shape",
     bubble_defaults, run_bubble},
    {"moments",
     "Evaluate the six planar moment integrals of the limit profile against "
     "closed forms",
     moments_defaults, run_moments},
    {"w1",
     "Solve the second radial correction and report its far-field flux "
     "against the closed form",
     w1_defaults, run_w1},
    {"energy-expansion",
     "Sweep bubble energies over peak heights and fit the large-height "
     "expansion",
     energy_expansion_defaults, run_energy_expansion},
    {"testfn",
     "Evaluate glued bubble configurations: exact energies, grid energies, "
     "and transport distance",
     testfn_defaults, run_testfn},
    {"solve",
     "Solve the mean-field equation on the torus at fixed (p, beta)",
     solve_defaults, run_solve},
    {"continue",
     "Follow a solution branch in beta and report blow-up diagnostics",
     continue_defaults, run_continue},
    {"diagnose",
     "Solve at one (p, beta) and report the peak decomposition",
     diagnose_defaults, run_diagnose},
};

std::string hyphenated(const std::string& key) {
  std::string out = key;
  for (char& c : out) {
    if (c == '_') c = '-';
  }
  return out;
}

}  // namespace

void write_report(const Table& table, const std::string& command,
                  const std::string& config_json,
                  const std::string& results_json,
                  const std::string& plot_recipe,
                  const std::string& csv_path) {
  json cfg, results;
  try {
    cfg = json::parse(config_json);
    results = json::parse(results_json);
  } catch (const json::parse_error& e) {
    config_fail(std::string("write_report: ") + e.what());
  }

  // Validate before opening any file: ragged rows and non-finite values are
  // refused outright so a bad report never reaches disk.
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) {
      throw Error(ErrorCode::IoFailure,
                  "report row has " + std::to_string(row.size()) +
                      " cells, expected " +
                      std::to_string(table.columns.size()));
    }
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::IoFailure,
                    "non-finite value in report for '" + command + "'");
      }
    }
  }

  std::string csv;
  for (size_t c = 0; c < table.columns.size(); ++c) {
    if (c > 0) csv += ',';
    csv += csv_escape(table.columns[c]);
  }
  csv += '\n';
  for (const auto& row : table.rows) {
    for (size_t c = 0; c < row.size(); ++c) {
      if (c > 0) csv += ',';
      csv += fmt17(row[c]);
    }
    csv += '\n';
  }

  json side;
  side["columns"] = table.columns;
  side["command"] = command;
  side["config"] = cfg;
  side["n_rows"] = table.rows.size();
  side["plot_recipe"] = plot_recipe;
  side["results"] = results;
  side["version"] = kVersion;

  write_file(csv_path, csv);
  write_file(sidecar_path(csv_path), side.dump(2) + "\n");
}

int run_args(const std::vector<std::string>& args) {
  CLI::App app{
      "Critical points of a Moser-Trudinger type functional on the flat "
      "torus: radial asymptotics, glued test functions, spectral solves"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  struct SubState {
    const Command* command = nullptr;
    CLI::App* sub = nullptr;
    std::string config_path;
    std::map<std::string, std::string> raw;
    std::map<std::string, CLI::Option*> opts;
    json cfg;
  };
  std::vector<SubState> states(std::size(kCommands));

  for (size_t c = 0; c < std::size(kCommands); ++c) {
    SubState& st = states[c];
    st.command = &kCommands[c];
    st.cfg = kCommands[c].defaults();
    st.sub = app.add_subcommand(kCommands[c].name, kCommands[c].description);
    st.sub->add_option("--config", st.config_path,
                       "JSON config file; flags override its fields");
    for (const auto& item : st.cfg.items()) {
      const std::string& key = item.key();
      std::string names = "--" + hyphenated(key);
      if (names != "--" + key) names += ",--" + key;
      std::string desc = "default: " + item.value().dump();
      st.opts[key] = st.sub->add_option(names, st.raw[key], desc);
    }
  }

  // Keep the parse/dispatch context for the structured error sidecar.
  std::string active_command;
  json active_cfg;
  bool have_context = false;

  try {
    std::vector<const char*> argv;
    argv.push_back("mtlab");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }

    for (SubState& st : states) {
      if (!st.sub->parsed()) continue;
      if (!st.config_path.empty()) {
        merge_config(st.cfg, load_config_file(st.config_path),
                     st.command->name);
      }
      for (const auto& [key, opt] : st.opts) {
        if (opt->count() == 0) continue;
        const std::string& raw = st.raw[key];
        json& slot = st.cfg[key];
        if (slot.is_array()) {
          slot = parse_list(raw, key);
        } else if (slot.is_string()) {
          slot = raw;
        } else {
          slot = parse_number(raw, key);
        }
      }
      active_command = st.command->name;
      active_cfg = st.cfg;
      have_context = true;
      apply_threads(st.cfg);
      st.command->exec(st.cfg);
      return 0;
    }
    throw Error(ErrorCode::UnknownCommand, "no subcommand dispatched");
  } catch (const Error& e) {
    std::fprintf(stderr, "mtlab: %s\n", e.what());
    if (e.code() == ErrorCode::ConfigParse ||
        e.code() == ErrorCode::UnknownCommand) {
      return 2;
    }
    // Numerical or I/O failure after a successful parse: leave a structured
    // error entry next to the intended output.
    if (have_context) {
      try {
        json doc;
        doc["command"] = active_command;
        doc["config"] = active_cfg;
        doc["error"] = {{"code", error_name(e.code())},
                        {"message", e.what()}};
        doc["version"] = kVersion;
        write_file(sidecar_path(active_cfg.at("out").get<std::string>()),
                   doc.dump(2) + "\n");
      } catch (const std::exception&) {
        // Unwritable output location: the stderr line above must suffice.
      }
    }
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "mtlab: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "mtlab: %s\n", e.what());
    return 3;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_args(args);
}

}  // namespace mtlab::cli
