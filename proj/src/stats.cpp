#include "peloton/stats.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <unordered_map>

#include <Eigen/Dense>
#include <json.hpp>

#include "peloton/errors.hpp"

namespace peloton::stats {

namespace {

constexpr double kWaldQuantile = 1.959964;  // normal 97.5% point
constexpr double kLogTwoPi = 1.8378770664093454836;
constexpr int kMaxOptimizerIterations = 500;
constexpr double kOptimizerTolerance = 1e-10;

// Per-subject sufficient statistics for the single-random-intercept model.
// With V0 = I + theta * Z Z^T, each subject block inverts in closed form:
// (I + theta J)^-1 = I - c J with c = theta / (1 + theta * n_j).
struct Design {
  int n = 0;
  int p = 0;
  int m = 0;
  std::vector<double> nj;
  std::vector<double> sum_y;
  std::vector<double> sum_yy;
  std::vector<Eigen::VectorXd> sum_x;
  std::vector<Eigen::VectorXd> sum_xy;
  std::vector<Eigen::MatrixXd> sum_xx;
};

struct ProfileEval {
  bool ok = false;
  double deviance = std::numeric_limits<double>::infinity();
  double rss = 0.0;
  Eigen::VectorXd beta;
  Eigen::MatrixXd normal_matrix;  // X^T V0^-1 X at the evaluated theta
};

Design build_design(const LmmDataset& data) {
  const int n = static_cast<int>(data.response.size());
  if (static_cast<int>(data.subject_ids.size()) != n ||
      static_cast<int>(data.covariates.size()) != n) {
    throw ValidationError("dataset columns have inconsistent lengths");
  }
  if (n == 0) throw ValidationError("empty dataset");
  const int n_cov = static_cast<int>(data.covariates.front().size());
  const int p = n_cov + 1;

  std::unordered_map<std::string, int> subject_index;
  std::vector<int> subject_of(n);
  for (int i = 0; i < n; ++i) {
    auto [it, inserted] =
        subject_index.emplace(data.subject_ids[i], static_cast<int>(subject_index.size()));
    subject_of[i] = it->second;
  }
  const int m = static_cast<int>(subject_index.size());
  if (m < 2) throw ValidationError("need at least 2 subjects for a random intercept");
  if (n < p + 1) {
    throw ValidationError("fewer observations than fixed effects + 1");
  }

  Design d;
  d.n = n;
  d.p = p;
  d.m = m;
  d.nj.assign(m, 0.0);
  d.sum_y.assign(m, 0.0);
  d.sum_yy.assign(m, 0.0);
  d.sum_x.assign(m, Eigen::VectorXd::Zero(p));
  d.sum_xy.assign(m, Eigen::VectorXd::Zero(p));
  d.sum_xx.assign(m, Eigen::MatrixXd::Zero(p, p));

  Eigen::MatrixXd x_dense(n, p);
  Eigen::VectorXd row(p);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(data.covariates[i].size()) != n_cov) {
      throw ValidationError("covariate vectors have unequal lengths");
    }
    const double y = data.response[i];
    if (!std::isfinite(y)) throw ValidationError("non-finite response value");
    row(0) = 1.0;
    for (int c = 0; c < n_cov; ++c) {
      if (!std::isfinite(data.covariates[i][c])) {
        throw ValidationError("non-finite covariate value");
      }
      row(c + 1) = data.covariates[i][c];
    }
    x_dense.row(i) = row;
    const int j = subject_of[i];
    d.nj[j] += 1.0;
    d.sum_y[j] += y;
    d.sum_yy[j] += y * y;
    d.sum_x[j] += row;
    d.sum_xy[j] += row * y;
    d.sum_xx[j] += row * row.transpose();
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x_dense);
  if (qr.rank() < p) throw ValidationError("rank-deficient design matrix");
  return d;
}

// d(deviance)/d(theta) of the profiled objective; algebraically exact, so a
// root polish on it localizes theta far below the deviance's noise floor.
double profile_derivative(const Design& d, double theta, FitMethod method) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::MatrixXd da = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d.p);
  Eigen::VectorXd db = Eigen::VectorXd::Zero(d.p);
  double q = 0.0;
  double dq = 0.0;
  double dlogdet_v0 = 0.0;
  for (int j = 0; j < d.m; ++j) {
    const double denom = 1.0 + theta * d.nj[j];
    const double c = theta / denom;
    const double dc = 1.0 / (denom * denom);
    a += d.sum_xx[j] - c * (d.sum_x[j] * d.sum_x[j].transpose());
    da -= dc * (d.sum_x[j] * d.sum_x[j].transpose());
    b += d.sum_xy[j] - c * d.sum_x[j] * d.sum_y[j];
    db -= dc * d.sum_x[j] * d.sum_y[j];
    q += d.sum_yy[j] - c * d.sum_y[j] * d.sum_y[j];
    dq -= dc * d.sum_y[j] * d.sum_y[j];
    dlogdet_v0 += d.nj[j] / denom;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::VectorXd beta = llt.solve(b);
  const double rss = q - beta.dot(b);
  if (!(rss > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double drss = dq - 2.0 * beta.dot(db) + beta.dot(da * beta);
  const double df = method == FitMethod::reml ? static_cast<double>(d.n - d.p)
                                              : static_cast<double>(d.n);
  double deriv = dlogdet_v0 + df * drss / rss;
  if (method == FitMethod::reml) {
    deriv += llt.solve(da).trace();
  }
  return deriv;
}

ProfileEval evaluate_profile(const Design& d, double theta, FitMethod method) {
  ProfileEval ev;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d.p);
  double q = 0.0;
  double logdet_v0 = 0.0;
  for (int j = 0; j < d.m; ++j) {
    const double denom = 1.0 + theta * d.nj[j];
    const double c = theta / denom;
    a += d.sum_xx[j] - c * (d.sum_x[j] * d.sum_x[j].transpose());
    b += d.sum_xy[j] - c * d.sum_x[j] * d.sum_y[j];
    q += d.sum_yy[j] - c * d.sum_y[j] * d.sum_y[j];
    logdet_v0 += std::log(denom);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) return ev;
  ev.beta = llt.solve(b);
  ev.rss = q - ev.beta.dot(b);
  if (!(ev.rss > 0.0) || !std::isfinite(ev.rss)) return ev;
  ev.normal_matrix = a;

  if (method == FitMethod::reml) {
    double logdet_a = 0.0;
    const Eigen::MatrixXd l = llt.matrixL();
    for (int i = 0; i < d.p; ++i) logdet_a += 2.0 * std::log(l(i, i));
    const double df = static_cast<double>(d.n - d.p);
    ev.deviance = df * kLogTwoPi + df * std::log(ev.rss / df) + logdet_v0 + logdet_a + df;
  } else {
    const double nn = static_cast<double>(d.n);
    ev.deviance = nn * kLogTwoPi + nn * std::log(ev.rss / nn) + logdet_v0 + nn;
  }
  ev.ok = true;
  return ev;
}

// Brent minimization (golden section with parabolic interpolation).
double brent_minimize(const std::function<double(double)>& f, double a, double b, double tol,
                      int max_iter, int& iterations) {
  const double golden = 0.3819660112501051;
  const double eps = std::numeric_limits<double>::epsilon();
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    iterations = iter + 1;
    const double mid = 0.5 * (a + b);
    const double tol1 = tol * std::abs(x) + eps;
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - mid) <= tol2 - 0.5 * (b - a)) return x;

    bool use_golden = true;
    double u = 0.0;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double qq = (x - v) * (fx - fw);
      double pp = (x - v) * qq - (x - w) * r;
      qq = 2.0 * (qq - r);
      if (qq > 0.0) pp = -pp;
      else qq = -qq;
      r = e;
      e = d;
      if (std::abs(pp) < std::abs(0.5 * qq * r) && pp > qq * (a - x) && pp < qq * (b - x)) {
        d = pp / qq;
        u = x + d;
        if (u - a < tol2 || b - u < tol2) d = x < mid ? tol1 : -tol1;
        use_golden = false;
      }
    }
    if (use_golden) {
      e = x < mid ? b - x : a - x;
      d = golden * e;
    }
    u = x + (std::abs(d) >= tol1 ? d : (d > 0 ? tol1 : -tol1));
    const double fu = f(u);
    if (fu <= fx) {
      if (u < x) b = x;
      else a = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u;
      else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  throw ConvergenceError("profile optimizer exceeded iteration budget");
}

}  // namespace

LmmFit fit_lmm(const LmmDataset& data, FitMethod method) {
  const Design design = build_design(data);

  LmmFit fit;
  fit.method = method;
  fit.n = design.n;
  fit.n_subjects = design.m;

  auto deviance_at = [&](double theta) {
    const ProfileEval ev = evaluate_profile(design, theta, method);
    return ev.ok ? ev.deviance : std::numeric_limits<double>::infinity();
  };

  const bool all_singletons =
      std::all_of(design.nj.begin(), design.nj.end(), [](double nj) { return nj == 1.0; });

  double theta_hat = 0.0;
  int iterations = 0;
  if (!all_singletons) {
    // Bracket on a log(theta) grid, then refine.
    const double u_lo = std::log(1e-8);
    const double u_hi = std::log(1e8);
    const int grid = 41;
    double best_u = u_lo;
    double best_f = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid; ++i) {
      const double u = u_lo + (u_hi - u_lo) * i / (grid - 1);
      const double f = deviance_at(std::exp(u));
      if (f < best_f) {
        best_f = f;
        best_u = u;
      }
    }
    const double step = (u_hi - u_lo) / (grid - 1);
    const double a = std::max(u_lo, best_u - step);
    const double b = std::min(u_hi, best_u + step);
    const double u_opt = brent_minimize([&](double u) { return deviance_at(std::exp(u)); }, a, b,
                                        kOptimizerTolerance, kMaxOptimizerIterations, iterations);
    double theta_opt = std::exp(u_opt);

    // Bisection on the analytic derivative: Brent alone stalls at the
    // deviance's round-off floor (about 1e-6 in theta).
    auto derivative_at = [&](double theta) { return profile_derivative(design, theta, method); };
    for (double span : {1e-5, 1e-4, 1e-3, 1e-2, 1e-1}) {
      double lo = theta_opt * (1.0 - span);
      double hi = theta_opt * (1.0 + span);
      const double glo = derivative_at(lo);
      const double ghi = derivative_at(hi);
      if (!std::isfinite(glo) || !std::isfinite(ghi) || glo >= 0.0 || ghi <= 0.0) continue;
      for (int iter = 0; iter < 80; ++iter) {
        const double mid = 0.5 * (lo + hi);
        const double gmid = derivative_at(mid);
        if (!std::isfinite(gmid)) break;
        (gmid < 0.0 ? lo : hi) = mid;
      }
      theta_opt = 0.5 * (lo + hi);
      break;
    }

    // The boundary theta = 0 wins ties: singleton-heavy designs have a flat
    // profile there and degenerate to ordinary least squares.
    theta_hat = deviance_at(theta_opt) < deviance_at(0.0) ? theta_opt : 0.0;
  }

  const ProfileEval ev = evaluate_profile(design, theta_hat, method);
  if (!ev.ok) throw ConvergenceError("profiled likelihood not evaluable at the optimum");

  const double df = method == FitMethod::reml ? static_cast<double>(design.n - design.p)
                                              : static_cast<double>(design.n);
  fit.theta = theta_hat;
  fit.sigma2_residual = ev.rss / df;
  fit.sigma2_subject = theta_hat * fit.sigma2_residual;
  fit.loglik = -0.5 * ev.deviance;
  fit.converged = true;
  fit.iterations = iterations;

  const Eigen::MatrixXd cov =
      fit.sigma2_residual * ev.normal_matrix.ldlt().solve(Eigen::MatrixXd::Identity(design.p, design.p));
  for (int i = 0; i < design.p; ++i) {
    Coefficient c;
    if (i == 0) {
      c.name = "(intercept)";
    } else if (i - 1 < static_cast<int>(data.covariate_names.size())) {
      c.name = data.covariate_names[i - 1];
    } else {
      c.name = "x" + std::to_string(i);
    }
    c.estimate = ev.beta(i);
    c.se = std::sqrt(std::max(0.0, cov(i, i)));
    c.ci_lower = c.estimate - kWaldQuantile * c.se;
    c.ci_upper = c.estimate + kWaldQuantile * c.se;
    if (c.se > 0) {
      c.p = 2.0 * (1.0 - normal_cdf(std::abs(c.estimate) / c.se));
    } else {
      c.p = c.estimate == 0.0 ? 1.0 : 0.0;
    }
    fit.coefficients.push_back(std::move(c));
  }
  return fit;
}

std::string fit_report_json(const LmmFit& fit, const std::string& model_name,
                            const std::map<std::string, std::string>& provenance) {
  nlohmann::json j;
  j["model"] = model_name;
  j["method"] = fit.method == FitMethod::reml ? "reml" : "ml";
  j["n"] = fit.n;
  j["n_subjects"] = fit.n_subjects;
  j["ci_level"] = 0.95;
  nlohmann::json coefs = nlohmann::json::array();
  for (const Coefficient& c : fit.coefficients) {
    coefs.push_back({{"name", c.name},
                     {"estimate", c.estimate},
                     {"se", c.se},
                     {"ci_lower", c.ci_lower},
                     {"ci_upper", c.ci_upper},
                     {"p", c.p}});
  }
  j["coefficients"] = std::move(coefs);
  j["sigma2_residual"] = fit.sigma2_residual;
  j["sigma2_subject"] = fit.sigma2_subject;
  j["theta"] = fit.theta;
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  if (!provenance.empty()) {
    nlohmann::json prov;
    for (const auto& [k, v] : provenance) prov[k] = v;
    j["provenance"] = std::move(prov);
  }
  return j.dump(2);
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  const int n = static_cast<int>(x.size());
  if (n < 3) throw ValidationError("pearson: need at least 3 observations");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: constant input vector");
  PearsonResult res;
  res.n = n;
  res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double one_minus_r2 = 1.0 - res.r * res.r;
  if (one_minus_r2 <= 0.0) {
    res.p = 0.0;
  } else {
    const double t = res.r * std::sqrt((n - 2) / one_minus_r2);
    res.p = 2.0 * (1.0 - student_t_cdf(std::abs(t), n - 2));
  }
  return res;
}

std::vector<double> zscores(const std::vector<double>& times) {
  const int n = static_cast<int>(times.size());
  if (n < 2) throw ValidationError("zscores: need at least 2 finishers");
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / n;
  double ss = 0.0;
  for (double t : times) ss += (t - mean) * (t - mean);
  const double sd = std::sqrt(ss / (n - 1));  // sample standard deviation
  if (sd == 0.0) throw ValidationError("zscores: zero within-race standard deviation");
  std::vector<double> z(times.size());
  for (size_t i = 0; i < times.size(); ++i) z[i] = (times[i] - mean) / sd;
  return z;
}

std::map<std::string, double> standardize_times(const std::vector<RaceTimes>& races) {
  std::map<std::string, double> best;
  for (const RaceTimes& race : races) {
    std::vector<double> times;
    times.reserve(race.finish_times.size());
    for (const auto& [id, t] : race.finish_times) times.push_back(t);
    std::vector<double> z;
    try {
      z = zscores(times);
    } catch (const ValidationError& e) {
      throw ValidationError("race " + race.race_id + ": " + e.what());
    }
    for (size_t i = 0; i < race.finish_times.size(); ++i) {
      const std::string& id = race.finish_times[i].first;
      auto it = best.find(id);
      if (it == best.end() || z[i] < it->second) best[id] = z[i];
    }
  }
  return best;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw ConvergenceError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta: a, b must be > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("incomplete beta: x must be in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = a * std::log(x) + b * std::log1p(-x) -
                          (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double x, double df) {
  if (!(df >= 1.0) || !std::isfinite(df)) throw ValidationError("invalid degrees of freedom");
  if (x == 0.0) return 0.5;
  const double w = df / (df + x * x);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, w);
  return x > 0.0 ? 1.0 - tail : tail;
}

}  // namespace peloton::stats
