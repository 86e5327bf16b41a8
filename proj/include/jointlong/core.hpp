#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jointlong/errors.hpp"

namespace jointlong {

enum class ModelKind { JMM, JSM };
enum class OutcomeFamily { Gaussian, Beta };
enum class Link { Identity, Logit };
enum class Process { Cov, Out };

std::string to_string(ModelKind kind);
std::string to_string(OutcomeFamily family);
std::string to_string(Link link);
std::string to_string(Process process);
ModelKind parse_model_kind(std::string_view text);
OutcomeFamily parse_outcome_family(std::string_view text);
Link parse_link(std::string_view text);

inline constexpr double kLog2Pi = 1.8378770664093454836;

// One column of a fixed or random design: constant, time, or a named
// time-fixed exogenous covariate looked up on the subject record.
struct DesignColumn {
  enum class Kind { Constant, Time, Exogenous };
  Kind kind = Kind::Constant;
  std::string name;

  bool operator==(const DesignColumn&) const = default;
};

struct DesignRecipe {
  std::vector<DesignColumn> columns;

  static DesignRecipe intercept();
  static DesignRecipe intercept_time();
  // Parses "1 + time + sex". Whitespace is ignored.
  static DesignRecipe parse(std::string_view text);

  std::size_t size() const { return columns.size(); }
  std::string describe() const;

  Eigen::RowVectorXd row(double time, const std::map<std::string, double>& covariates) const;
  Eigen::MatrixXd matrix(std::span<const double> times,
                         const std::map<std::string, double>& covariates) const;

  bool operator==(const DesignRecipe&) const = default;
};

struct SubjectRecord {
  std::string id;
  std::vector<double> cov_times;
  std::vector<double> cov_values;
  std::vector<double> out_times;
  std::vector<double> out_values;
  // Time-fixed exogenous covariates referenced by design recipes.
  std::map<std::string, double> covariates;

  std::size_t n_cov() const { return cov_times.size(); }
  std::size_t n_out() const { return out_times.size(); }

  bool operator==(const SubjectRecord&) const = default;
};

struct LongDataset {
  std::vector<SubjectRecord> subjects;

  std::size_t n_subjects() const { return subjects.size(); }
  std::size_t n_cov_observations() const;
  std::size_t n_out_observations() const;

  // Throws DataError when an invariant is violated. Beta outcomes must lie
  // strictly inside (0, 1).
  void validate(OutcomeFamily family) const;

  bool operator==(const LongDataset&) const = default;
};

// Declared range of a bounded raw outcome, mapped to (0, 1) and clamped to
// [eps, 1 - eps].
struct OutcomeRange {
  double lo = 0.0;
  double hi = 1.0;
  double eps = 1e-6;

  double to_unit(double raw) const;
  double scale() const { return hi - lo; }
};

void apply_outcome_range(LongDataset& data, const OutcomeRange& range);

struct PriorConfig {
  double beta_precision = 0.001;
  double gamma_mean = 0.0;
  double gamma_precision = 0.0001;
  double eps_precision_shape = 1.0;
  double eps_precision_rate = 0.00005;
  // Residual precision of a Gaussian outcome.
  double out_precision_shape = 1.0;
  double out_precision_rate = 0.00005;
  // Gamma prior on the Beta precision phi (log-Gamma on log phi).
  double phi_shape = 1.0;
  double phi_rate = 0.01;
  // Wishart degrees of freedom; unset means p(p+1)/2 + 1 per block.
  std::optional<double> wishart_df;
  // Diagonal of R (length p). Empty means identity.
  std::vector<double> wishart_scale_diag;
  // Fill wishart_scale_diag from stage-one ML standard deviations.
  bool informative = false;

  bool operator==(const PriorConfig&) const = default;
};

struct ModelSpec {
  ModelKind kind = ModelKind::JMM;
  OutcomeFamily outcome_family = OutcomeFamily::Beta;
  Link link = Link::Logit;
  DesignRecipe cov_fixed = DesignRecipe::intercept_time();
  DesignRecipe cov_random = DesignRecipe::intercept_time();
  DesignRecipe out_fixed = DesignRecipe::intercept_time();
  DesignRecipe out_random = DesignRecipe::intercept_time();
  PriorConfig priors;

  std::size_t kv() const { return cov_fixed.size(); }
  std::size_t ky() const { return out_fixed.size(); }
  std::size_t n_fixed() const { return kv() + ky(); }
  std::size_t qv() const { return cov_random.size(); }
  std::size_t qy() const { return out_random.size(); }
  std::size_t p() const { return qv() + qy(); }

  double default_wishart_df(std::size_t block_dim) const;
  // Throws ConfigError on invalid combinations.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

struct LatentLayout {
  std::size_t kv = 0;
  std::size_t ky = 0;
  std::size_t qv = 0;
  std::size_t qy = 0;
  std::size_t n_subjects = 0;

  static LatentLayout from(const ModelSpec& spec, std::size_t n_subjects);

  std::size_t n_fixed() const { return kv + ky; }
  std::size_t p() const { return qv + qy; }
  std::size_t size() const { return n_fixed() + n_subjects * p(); }
  std::size_t b_offset(std::size_t subject) const { return n_fixed() + subject * p(); }

  bool operator==(const LatentLayout&) const = default;
};

// Stacked (beta_v, beta_y, b_1, ..., b_N), each b_i = (b^v_i, b^y_i).
struct LatentField {
  LatentLayout layout;
  Eigen::VectorXd values;

  LatentField() = default;
  explicit LatentField(const LatentLayout& l) : layout(l), values(Eigen::VectorXd::Zero(l.size())) {}
  LatentField(const LatentLayout& l, Eigen::VectorXd v);

  auto beta_v() { return values.segment(0, layout.kv); }
  auto beta_v() const { return values.segment(0, layout.kv); }
  auto beta_y() { return values.segment(layout.kv, layout.ky); }
  auto beta_y() const { return values.segment(layout.kv, layout.ky); }
  auto fixed() const { return values.head(layout.n_fixed()); }
  auto b(std::size_t i) { return values.segment(layout.b_offset(i), layout.p()); }
  auto b(std::size_t i) const { return values.segment(layout.b_offset(i), layout.p()); }
  auto b_v(std::size_t i) const { return values.segment(layout.b_offset(i), layout.qv); }
  auto b_y(std::size_t i) const { return values.segment(layout.b_offset(i) + layout.qv, layout.qy); }
};

// Unconstrained hyperparameters. D = L L^T with L lower triangular,
// log-diagonal and free off-diagonal entries. Under JSM only entries inside
// the covariate and outcome diagonal blocks are free, so D is block-diagonal.
struct HyperVector {
  Eigen::VectorXd d_chol_log_diag;
  Eigen::VectorXd d_chol_offdiag;
  double log_eps_precision = 0.0;
  // log phi for Beta outcomes, log residual precision for Gaussian outcomes.
  double log_out_precision = 0.0;
  double gamma = 0.0;  // JSM only

  static std::size_t flat_size(const ModelSpec& spec);
  static HyperVector from_flat(const ModelSpec& spec, const Eigen::VectorXd& flat);
  static HyperVector from_natural(const ModelSpec& spec, const Eigen::MatrixXd& D, double sigma2_eps,
                                  double out_precision, double gamma);
  Eigen::VectorXd flat(const ModelSpec& spec) const;

  Eigen::MatrixXd cholesky_factor(const ModelSpec& spec) const;
  Eigen::MatrixXd covariance(const ModelSpec& spec) const;
  double eps_precision() const;
  double sigma2_eps() const { return 1.0 / eps_precision(); }
  double out_precision() const;
};

// Names of the flat unconstrained coordinates, for reports.
std::vector<std::string> hyper_flat_names(const ModelSpec& spec);
// Positions (row, col) of free off-diagonal Cholesky entries, in flat order.
std::vector<std::pair<std::size_t, std::size_t>> chol_offdiag_positions(const ModelSpec& spec);

double inverse_link(Link link, double eta);

// Per-observation outcome log density with first and second derivatives in
// the linear predictor. `fisher` is the expected negative second derivative.
struct OutcomeKernel {
  double logf = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double fisher = 0.0;
  bool ok = true;
};

OutcomeKernel outcome_kernel(OutcomeFamily family, double y, double log_y, double log1m_y, double eta,
                             double precision, bool with_derivatives);

double gaussian_logpdf(double x, double mean, double variance);
// Mean-precision Beta: a = mu * phi, b = (1 - mu) * phi. Throws
// NumericalError when mu is not strictly inside (0, 1).
double beta_logpdf(double y, double mu, double phi);
double gamma_logpdf(double x, double shape, double rate);

// Linear predictor at `times` for subject `subject_index`. For the outcome
// under JSM the copied covariate predictor gamma * m(t) is added.
Eigen::VectorXd linear_predictor(const ModelSpec& spec, const LatentField& field, std::size_t subject_index,
                                 const SubjectRecord& subject, Process process, std::span<const double> times,
                                 double gamma = 0.0);

// Sum of covariate and outcome log densities of one subject.
double obs_loglik(const ModelSpec& spec, const LatentField& field, const HyperVector& hyper,
                  std::size_t subject_index, const SubjectRecord& subject);

// Log prior of the hyperparameters on the unconstrained scale, including the
// Jacobians of the log / Cholesky transforms.
double hyper_log_prior(const ModelSpec& spec, const HyperVector& hyper);

}  // namespace jointlong
