#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "jointlong/association.hpp"
#include "jointlong/core.hpp"
#include "jointlong/estimation.hpp"

namespace jointlong {

struct SimConfig {
  ModelKind generator = ModelKind::JSM;
  OutcomeFamily outcome_family = OutcomeFamily::Beta;
  int n_subjects = 200;
  int max_visits = 12;
  double time_lo = 3.0;
  double time_hi = 27.0;
  Eigen::VectorXd beta_v;
  Eigen::VectorXd beta_y;
  Eigen::MatrixXd D;  // full 4x4; the JSM generator uses its diagonal blocks
  double sigma2_eps = 0.22;
  double phi = 32.77;
  // Residual variance of a Gaussian outcome.
  double out_sigma2 = 1.0;
  double gamma = 2.57;
  // JSM outcome predictor uses gamma * (m - X^v beta^v) instead of gamma * m.
  bool center_copy = true;
  double miss_outcome = 0.28;
  double miss_cov = 0.45;
  int replications = 1;
  std::uint64_t seed = 1;
  // Returns the mean instead of drawing the outcome.
  bool noiseless = false;

  static SimConfig paper(ModelKind generator, int n_subjects = 200);

  void validate() const;
  std::vector<double> visit_times() const;
  // Random-effects covariance actually used by the generator.
  Eigen::MatrixXd generator_D() const;
  // Model specification matching the generator (intercept + time designs).
  ModelSpec model_spec(ModelKind kind) const;
  // Generating parameters in the uncentered form used by the fitted models.
  PopulationParams truth() const;
};

// Rows are subjects, columns (b^v, b^y).
Eigen::MatrixXd draw_random_effects(const SimConfig& config, int n, RngStream& rng);

LongDataset generate(const SimConfig& config, int replication_index);

// Large-sample Monte Carlo of the true beta_joint on the diagonal s = t.
std::vector<double> truth_curve(const SimConfig& config, const std::vector<double>& ages, double a,
                                int mc_samples, std::uint64_t seed);

struct StudyConfig {
  SimConfig sim;
  std::vector<ModelKind> fit_models{ModelKind::JSM};
  FitControl fit;
  bool informative_priors = true;
  std::vector<double> ages{5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25};
  double a = 9.0;
  int mc_samples = 2000;
  int truth_mc_samples = 200000;
  int diagnostic_draws = 0;
  int jobs = 1;
  int first_replication = 0;
};

struct StudyRow {
  int replication = 0;
  ModelKind model = ModelKind::JSM;
  int n_subjects = 0;
  bool failed = false;
  bool converged = false;
  std::string error;
  std::vector<NamedValue> hyper_modes;
  std::vector<double> beta_joint;  // per age
  double log_marginal_likelihood = 0.0;
  double waic_overall = 0.0;
  double waic_outcome = 0.0;
  double dic_overall = 0.0;
  double dic_outcome = 0.0;
  int outer_iterations = 0;
};

struct StudyAggregate {
  ModelKind model = ModelKind::JSM;
  double age = 0.0;
  double truth = 0.0;
  double mean = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  int count = 0;
};

struct StudyReport {
  std::vector<double> ages;
  double a = 9.0;
  std::vector<double> truth;
  std::vector<StudyRow> rows;  // sorted by replication, then model order
  std::vector<StudyAggregate> aggregates;
  int failures = 0;
  std::vector<NamedValue> true_hyper;
};

// Single generate -> fit -> association pipeline for one replication.
StudyRow run_replication(const StudyConfig& config, int replication_index, ModelKind model,
                         const LongDataset& data);

StudyReport run_study(const StudyConfig& config);

// Per-model aggregates over the rows of a report.
std::vector<StudyAggregate> aggregate_rows(const std::vector<StudyRow>& rows, const std::vector<ModelKind>& models,
                                           const std::vector<double>& ages, const std::vector<double>& truth);

}  // namespace jointlong
