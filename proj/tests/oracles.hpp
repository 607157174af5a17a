#pragma once

// Independent oracles for the test suites. Everything here recomputes
// expected values by a route separate from the library implementation:
// adaptive quadrature for distribution functions, dense-matrix likelihood
// maximization for the mixed model, closed-form ANOVA estimators for the
// balanced one-way layout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace peloton::oracles {

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double eps, int depth = 40) {
  struct Impl {
    const std::function<double(double)>& f;
    double run(double a, double b, double fa, double fm, double fb, double whole, double eps,
               int depth) {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m);
      const double rm = 0.5 * (m + b);
      const double flm = f(lm);
      const double frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps) {
        return left + right + (left + right - whole) / 15.0;
      }
      return run(a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
             run(m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
    }
  } impl{f};
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return impl.run(a, b, fa, fm, fb, whole, eps, depth);
}

inline double normal_cdf_quadrature(double x) {
  const auto density = [](double u) {
    return std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
  };
  if (x < -40.0) return 0.0;
  if (x > 40.0) return 1.0;
  if (x >= 0.0) return 0.5 + adaptive_simpson(density, 0.0, x, 1e-13);
  return 0.5 - adaptive_simpson(density, x, 0.0, 1e-13);
}

inline double student_t_cdf_quadrature(double x, double df) {
  const double log_norm = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) -
                          0.5 * std::log(df * M_PI);
  const auto density = [&](double u) {
    return std::exp(log_norm - 0.5 * (df + 1.0) * std::log1p(u * u / df));
  };
  if (x == 0.0) return 0.5;
  const double cut = std::abs(x);
  const double half = adaptive_simpson(density, 0.0, cut, 1e-13);
  return x > 0.0 ? 0.5 + half : 0.5 - half;
}

// ---------------------------------------------------------------------------
// Dense-matrix mixed-model likelihoods
// ---------------------------------------------------------------------------

struct DenseLmm {
  Eigen::MatrixXd x;        // n x p design (intercept included)
  Eigen::VectorXd y;        // n responses
  std::vector<int> subject; // n subject indices in [0, m)
  int m = 0;
};

// Exact Gaussian log-likelihood (ML) or restricted log-likelihood (REML) at
// (sigma2_subject, sigma2_residual), with beta profiled out by GLS.
inline double dense_loglik(const DenseLmm& d, double sigma2_s, double sigma2_e, bool reml) {
  const int n = static_cast<int>(d.y.size());
  const int p = static_cast<int>(d.x.cols());
  Eigen::MatrixXd v = sigma2_e * Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (d.subject[i] == d.subject[j]) v(i, j) += sigma2_s;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  double logdet_v = 0.0;
  for (int i = 0; i < n; ++i) logdet_v += 2.0 * std::log(llt.matrixL()(i, i));

  const Eigen::MatrixXd vinv_x = llt.solve(d.x);
  const Eigen::VectorXd vinv_y = llt.solve(d.y);
  const Eigen::MatrixXd xtvx = d.x.transpose() * vinv_x;
  Eigen::LLT<Eigen::MatrixXd> llt_x(xtvx);
  if (llt_x.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd beta = llt_x.solve(d.x.transpose() * vinv_y);
  const Eigen::VectorXd r = d.y - d.x * beta;
  const double quad = r.dot(llt.solve(r));

  if (!reml) {
    return -0.5 * (n * std::log(2.0 * M_PI) + logdet_v + quad);
  }
  double logdet_xtvx = 0.0;
  for (int i = 0; i < p; ++i) logdet_xtvx += 2.0 * std::log(llt_x.matrixL()(i, i));
  return -0.5 * ((n - p) * std::log(2.0 * M_PI) + logdet_v + logdet_xtvx + quad);
}

inline Eigen::VectorXd dense_gls_beta(const DenseLmm& d, double sigma2_s, double sigma2_e) {
  const int n = static_cast<int>(d.y.size());
  Eigen::MatrixXd v = sigma2_e * Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (d.subject[i] == d.subject[j]) v(i, j) += sigma2_s;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  const Eigen::MatrixXd vinv_x = llt.solve(d.x);
  return (d.x.transpose() * vinv_x).ldlt().solve(d.x.transpose() * llt.solve(d.y));
}

// Brute-force direct maximization over (log sigma2_s, log sigma2_e): coarse
// grid followed by Nelder-Mead refinement.
struct BruteForceFit {
  double sigma2_s = 0.0;
  double sigma2_e = 0.0;
  Eigen::VectorXd beta;
  double loglik = 0.0;
};

inline BruteForceFit brute_force_lmm(const DenseLmm& d, bool reml) {
  const double var_y =
      (d.y.array() - d.y.mean()).square().sum() / std::max<int>(1, d.y.size() - 1);
  const double lo_e = std::log(var_y * 1e-6);
  const double hi_e = std::log(var_y * 4.0);
  const double lo_s = std::log(var_y * 1e-9);
  const double hi_s = std::log(var_y * 4.0);

  auto objective = [&](double us, double ue) {
    return -dense_loglik(d, std::exp(us), std::exp(ue), reml);
  };

  double best_us = lo_s, best_ue = lo_e;
  double best = std::numeric_limits<double>::infinity();
  const int grid = 48;
  for (int i = 0; i < grid; ++i) {
    const double us = lo_s + (hi_s - lo_s) * i / (grid - 1);
    for (int j = 0; j < grid; ++j) {
      const double ue = lo_e + (hi_e - lo_e) * j / (grid - 1);
      const double f = objective(us, ue);
      if (f < best) {
        best = f;
        best_us = us;
        best_ue = ue;
      }
    }
  }

  // Nelder-Mead on the log scale.
  struct Point {
    double us, ue, f;
  };
  auto eval = [&](double us, double ue) { return Point{us, ue, objective(us, ue)}; };
  std::vector<Point> simplex{eval(best_us, best_ue), eval(best_us + 0.5, best_ue),
                             eval(best_us, best_ue + 0.5)};
  for (int iter = 0; iter < 400; ++iter) {
    std::sort(simplex.begin(), simplex.end(),
              [](const Point& a, const Point& b) { return a.f < b.f; });
    if (std::abs(simplex[2].f - simplex[0].f) < 1e-13) break;
    const double cus = 0.5 * (simplex[0].us + simplex[1].us);
    const double cue = 0.5 * (simplex[0].ue + simplex[1].ue);
    const Point refl = eval(cus + (cus - simplex[2].us), cue + (cue - simplex[2].ue));
    if (refl.f < simplex[0].f) {
      const Point exp_pt =
          eval(cus + 2.0 * (cus - simplex[2].us), cue + 2.0 * (cue - simplex[2].ue));
      simplex[2] = exp_pt.f < refl.f ? exp_pt : refl;
    } else if (refl.f < simplex[1].f) {
      simplex[2] = refl;
    } else {
      const Point contr =
          eval(cus + 0.5 * (simplex[2].us - cus), cue + 0.5 * (simplex[2].ue - cue));
      if (contr.f < simplex[2].f) {
        simplex[2] = contr;
      } else {
        for (int k = 1; k < 3; ++k) {
          simplex[k] = eval(0.5 * (simplex[k].us + simplex[0].us),
                            0.5 * (simplex[k].ue + simplex[0].ue));
        }
      }
    }
  }
  std::sort(simplex.begin(), simplex.end(),
            [](const Point& a, const Point& b) { return a.f < b.f; });

  BruteForceFit fit;
  fit.sigma2_s = std::exp(simplex[0].us);
  fit.sigma2_e = std::exp(simplex[0].ue);
  fit.beta = dense_gls_beta(d, fit.sigma2_s, fit.sigma2_e);
  fit.loglik = -simplex[0].f;
  return fit;
}

// Closed-form REML estimators for the balanced one-way random-effects layout
// (m subjects, k replicates): sigma_e^2 = MSW, sigma_s^2 = (MSB - MSW) / k
// truncated at zero.
struct OneWayEstimates {
  double sigma2_s = 0.0;
  double sigma2_e = 0.0;
};

inline OneWayEstimates one_way_reml(const std::vector<std::vector<double>>& groups) {
  const int m = static_cast<int>(groups.size());
  const int k = static_cast<int>(groups.front().size());
  double grand = 0.0;
  std::vector<double> means(m, 0.0);
  for (int j = 0; j < m; ++j) {
    for (double y : groups[j]) means[j] += y;
    means[j] /= k;
    grand += means[j];
  }
  grand /= m;
  double ssb = 0.0, ssw = 0.0;
  for (int j = 0; j < m; ++j) {
    ssb += (means[j] - grand) * (means[j] - grand);
    for (double y : groups[j]) ssw += (y - means[j]) * (y - means[j]);
  }
  const double msb = k * ssb / (m - 1);
  const double msw = ssw / (m * (k - 1.0));
  return {std::max(0.0, (msb - msw) / k), msw};
}

// ---------------------------------------------------------------------------
// Random chicken matrices
// ---------------------------------------------------------------------------

struct ChickenSampler {
  std::uint64_t state;
  double uniform() {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
  }
  // Four distinct uniforms sorted descending map onto T > R > S > P.
  std::array<double, 4> next_chicken() {
    std::array<double, 4> v{};
    while (true) {
      for (double& x : v) x = uniform() * 10.0 - 3.0;
      std::sort(v.begin(), v.end(), std::greater<>());
      if (v[0] > v[1] && v[1] > v[2] && v[2] > v[3]) return v;
    }
  }
};

}  // namespace peloton::oracles
