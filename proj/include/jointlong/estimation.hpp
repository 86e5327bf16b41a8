#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jointlong/core.hpp"
#include "jointlong/diagnostics.hpp"
#include "jointlong/gaussian.hpp"

namespace jointlong {

// Symmetric matrix over the latent field with the arrowhead sparsity of the
// joint models: a dense fixed-effects block, one fixed/random cross block
// per subject and one random-effects block per subject. Subjects never
// couple directly.
struct ArrowMatrix {
  Eigen::MatrixXd fixed;
  std::vector<Eigen::MatrixXd> cross;
  std::vector<Eigen::MatrixXd> blocks;

  static ArrowMatrix zeros(const LatentLayout& layout);
  Eigen::MatrixXd dense() const;
  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
};

// Block Cholesky of an ArrowMatrix through the Schur complement on the fixed
// effects: S = A - sum_i B_i C_i^{-1} B_i^T.
class ArrowCholesky {
 public:
  explicit ArrowCholesky(const ArrowMatrix& q);

  bool ok() const { return ok_; }
  double log_det() const { return log_det_; }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  Eigen::VectorXd marginal_variances() const;
  // Covariance of the fixed effects, S^{-1}.
  Eigen::MatrixXd fixed_covariance() const;
  // One draw from N(mean, Q^{-1}).
  Eigen::VectorXd sample(const Eigen::VectorXd& mean, RngStream& rng) const;

 private:
  std::size_t nf_ = 0;
  std::size_t p_ = 0;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> block_llt_;
  std::vector<Eigen::MatrixXd> cinv_bt_;  // C_i^{-1} B_i^T
  Eigen::LLT<Eigen::MatrixXd> schur_llt_;
  bool ok_ = false;
  double log_det_ = 0.0;
};

// Per-subject design matrices over the local latent vector [beta; b_i].
struct SubjectDesign {
  Eigen::MatrixXd cov_design;  // rows at covariate times
  Eigen::MatrixXd cov_gram;
  Eigen::VectorXd v;
  Eigen::MatrixXd out_base;    // outcome fixed/random part at outcome times
  Eigen::MatrixXd out_copy;    // covariate predictor at outcome times (JSM)
  Eigen::VectorXd y;
  Eigen::VectorXd log_y;
  Eigen::VectorXd log1m_y;
};

class ModelData {
 public:
  ModelData(const ModelSpec& spec, const LongDataset& data);

  const ModelSpec& spec() const { return spec_; }
  const LongDataset& data() const { return *data_; }
  const LatentLayout& layout() const { return layout_; }
  const std::vector<SubjectDesign>& subjects() const { return designs_; }

 private:
  ModelSpec spec_;
  const LongDataset* data_;
  LatentLayout layout_;
  std::vector<SubjectDesign> designs_;
};

// Quantities derived once per hyperparameter value.
struct HyperState {
  HyperState(const ModelSpec& spec, const HyperVector& hyper);

  HyperVector hyper;
  Eigen::MatrixXd d_inv;
  double log_det_d = 0.0;
  double eps_precision = 0.0;
  double out_precision = 0.0;
  double gamma = 0.0;
  double log_prior = 0.0;
};

enum class Curvature { Observed, Fisher };

struct LaplaceControl {
  double tol = 1e-6;  // latent gradient max-norm
  int max_iter = 100;
  // Extra precision added to the prior of every latent coordinate.
  double prior_jitter = 0.0;
};

struct LatentEval {
  double value = 0.0;
  Eigen::VectorXd gradient;
  ArrowMatrix neg_hessian;
  bool finite = true;
};

double joint_log_posterior(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x,
                           double prior_jitter = 0.0);
double joint_log_posterior(const ModelSpec& spec, const LongDataset& data, const LatentField& field,
                           const HyperVector& hyper);

LatentEval latent_derivatives(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x,
                              Curvature curvature, double prior_jitter = 0.0);

// Pointwise observation log densities in dataset order: all covariate
// observations of a subject, then its outcome observations.
Eigen::VectorXd pointwise_loglik(const ModelData& md, const HyperState& hs, const Eigen::VectorXd& x);

struct InnerResult {
  LatentField mode;
  ArrowMatrix precision;
  double log_det_precision = 0.0;
  double log_posterior = 0.0;
  bool converged = false;
  bool fisher_curvature = false;
  int iterations = 0;
};

InnerResult inner_mode(const ModelData& md, const HyperVector& hyper, const LaplaceControl& control = {},
                       const Eigen::VectorXd* start = nullptr);
InnerResult inner_mode(const ModelSpec& spec, const LongDataset& data, const HyperVector& hyper);

// Laplace approximation of log p(theta, data). Returns -inf when the inner
// problem fails.
double log_marginal_hyper(const ModelData& md, const HyperVector& hyper, const LaplaceControl& control = {},
                          const Eigen::VectorXd* start = nullptr, InnerResult* inner = nullptr);
double log_marginal_hyper(const ModelSpec& spec, const LongDataset& data, const HyperVector& hyper);

// Maximum-likelihood linear mixed model for one process, fixed effects
// profiled out by generalized least squares. Beta outcomes are fitted on the
// logit scale as a Gaussian working model.
struct StageOneResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd D;
  double sigma2 = 0.0;
  double loglik = 0.0;
  bool converged = false;
};

StageOneResult stage_one_lmm(const LongDataset& data, Process process, const DesignRecipe& fixed,
                             const DesignRecipe& random, bool logit_transform);

// Copy of `spec` with the Wishart scale filled from stage-one standard
// deviations when priors.informative is set and no scale was given.
ModelSpec resolve_priors(const ModelSpec& spec, const LongDataset& data);

// Starting hyperparameters from the stage-one fits.
HyperVector initial_hyper(const ModelSpec& spec, const LongDataset& data);

struct NamedValue {
  std::string name;
  double value = 0.0;
};

// sigma_j, rho_jk, sigma2_eps, phi (or out_precision) and gamma.
std::vector<NamedValue> natural_hyper(const ModelSpec& spec, const HyperVector& hyper);

struct ParamSummary {
  std::string name;
  double mode = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

struct FitControl {
  std::uint64_t seed = 1;
  double grad_tol = 1e-4;
  int max_iter = 200;
  double fd_step = 1e-4;
  double hessian_step = 1e-3;
  int summary_draws = 4096;
  LaplaceControl inner;
  // 0 fills only the marginal likelihood.
  int diagnostic_draws = 0;
  std::optional<HyperVector> start;
};

struct FitResult {
  ModelSpec spec;  // priors resolved
  std::vector<std::string> subject_ids;

  std::vector<ParamSummary> latent_summaries;
  std::vector<ParamSummary> hyper_summaries;
  HyperVector hyper_mode;
  Eigen::MatrixXd hyper_cov;
  LatentField latent_mode;
  ArrowMatrix latent_precision;
  double log_marginal_hyper_at_mode = 0.0;
  FitDiagnostics diagnostics;

  std::uint64_t seed = 0;
  int outer_iterations = 0;
  int function_evaluations = 0;
  int inner_iterations = 0;
  double grad_max_norm = 0.0;
  bool converged = false;
  bool inner_converged = false;
  bool hyper_cov_adjusted = false;
  std::string message;

  bool reliable() const { return converged && inner_converged; }
  const ParamSummary* find_hyper(const std::string& name) const;
};

FitResult fit(const ModelSpec& spec, const LongDataset& data, const FitControl& control = {});

// Percentile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double prob);

}  // namespace jointlong
