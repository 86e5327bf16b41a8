#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "jointlong/core.hpp"

namespace jointlong {

struct FitResult;

struct PointwiseRecord {
  std::string subject_id;
  Process process = Process::Cov;
  double time = 0.0;
  double lpd = 0.0;       // log mean likelihood over draws
  double p_waic = 0.0;    // variance of the log likelihood over draws
  double dic = 0.0;       // 2 mean(deviance) - deviance at posterior mean
  double mean_deviance = 0.0;
  double deviance_at_mean = 0.0;
};

struct FitDiagnostics {
  double log_marginal_likelihood = 0.0;
  double dic_overall = 0.0;
  double dic_outcome = 0.0;
  double waic_overall = 0.0;
  double waic_outcome = 0.0;
  double p_dic_overall = 0.0;
  double p_waic_overall = 0.0;
  int draws = 0;
  std::string dic_plugin = "posterior-mean";
  std::vector<PointwiseRecord> pointwise;

  bool has_information_criteria() const { return draws > 0; }
};

// Reduction of per-draw pointwise log likelihoods. `loglik` is draws x
// observations; `loglik_at_mean` is evaluated at the posterior mean.
// Observation metadata is copied from `meta` (lpd etc. are overwritten).
FitDiagnostics summarize_pointwise(const Eigen::MatrixXd& loglik, const Eigen::VectorXd& loglik_at_mean,
                                   std::vector<PointwiseRecord> meta);

// Recomputes the overall/outcome totals from the pointwise records with
// compensated summation.
void total_pointwise(FitDiagnostics& diag);

// Draws hyperparameters from the Gaussian approximation, then the latent
// field from its conditional Gaussian, and reduces pointwise likelihoods to
// DIC and WAIC. The marginal likelihood integrates the hyperparameters by
// Laplace around the mode.
FitDiagnostics compute_diagnostics(const FitResult& fit, const ModelSpec& spec, const LongDataset& data,
                                   int n_posterior_draws, std::uint64_t seed);

double log_marginal_likelihood(const FitResult& fit);

// Neumaier compensated sum.
double compensated_sum(const std::vector<double>& values);

}  // namespace jointlong
