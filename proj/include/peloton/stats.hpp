#pragma once

#include <map>
#include <string>
#include <vector>

namespace peloton::stats {

enum class FitMethod { reml, ml };

// Rows of (grouping subject, response, covariates). An intercept column is
// always prepended to the covariates when fitting.
struct LmmDataset {
  std::vector<std::string> subject_ids;
  std::vector<double> response;
  std::vector<std::vector<double>> covariates;
  std::vector<std::string> covariate_names;  // optional; defaults to x1, x2, ...
};

struct Coefficient {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double p = 1.0;
};

struct LmmFit {
  std::vector<Coefficient> coefficients;
  double sigma2_residual = 0.0;
  double sigma2_subject = 0.0;
  double theta = 0.0;  // sigma2_subject / sigma2_residual
  double loglik = 0.0;
  int n = 0;
  int n_subjects = 0;
  FitMethod method = FitMethod::reml;
  bool converged = false;
  int iterations = 0;
};

// Fits y = X beta + Z s + eps with one normal random intercept per subject.
// The variance ratio theta = sigma_s^2 / sigma^2 is profiled out and
// maximized over log(theta) by Brent refinement of a bracketing grid
// (relative width 1e-10, at most 500 evaluations); beta is then generalized
// least squares at the optimum. Wald 95% intervals use the normal quantile
// 1.959964; p-values are two-sided Wald.
LmmFit fit_lmm(const LmmDataset& data, FitMethod method = FitMethod::reml);

// Serialized fit report (JSON object as a string); extra key/value pairs are
// embedded under "provenance".
std::string fit_report_json(const LmmFit& fit, const std::string& model_name,
                            const std::map<std::string, std::string>& provenance = {});

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;
  int n = 0;
};

// Sample Pearson correlation with a two-sided p-value from
// t = r sqrt((n-2)/(1-r^2)) against Student t with n-2 degrees of freedom.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

struct RaceTimes {
  std::string race_id;
  std::vector<std::pair<std::string, double>> finish_times;  // (skater_id, seconds)
};

struct TimeTrialRecord {
  std::string skater_id;
  double best_time = 0.0;
  double standardized_best = 0.0;
};

// Z-scores within one race, sample (n-1) standard deviation.
std::vector<double> zscores(const std::vector<double>& times);

// Per-skater standardized best: the lowest within-race Z-score across all
// races the skater appears in.
std::map<std::string, double> standardize_times(const std::vector<RaceTimes>& races);

double normal_cdf(double x);
double student_t_cdf(double x, double df);
double regularized_incomplete_beta(double a, double b, double x);

}  // namespace peloton::stats
