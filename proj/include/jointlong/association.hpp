#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jointlong/core.hpp"
#include "jointlong/estimation.hpp"

namespace jointlong {

// Population-level parameters of a fitted or generating model.
struct PopulationParams {
  ModelSpec spec;
  Eigen::VectorXd beta_v;
  Eigen::VectorXd beta_y;
  Eigen::MatrixXd D;
  double sigma2_eps = 0.0;
  double gamma = 0.0;

  static PopulationParams from(const ModelSpec& spec, const HyperVector& hyper, const LatentField& field);
  static PopulationParams from_fit(const FitResult& fit);
};

struct AssocQuery {
  double a = 0.0;
  double delta = 1.0;
  double s = 0.0;  // covariate time
  double t = 0.0;  // outcome time
  int mc_samples = 5000;
  int resamples = 200;
  std::uint64_t seed = 1;
  // Measurement noise in var(v(s)); false conditions on the latent m(s).
  bool include_noise = true;
  double ci_level = 0.95;
  // Multiplier for reporting on a raw outcome scale (hi - lo).
  double output_scale = 1.0;
  // Exogenous covariates of the generic subject; missing names read as 0.
  std::map<std::string, double> covariates;

  void validate() const;
};

struct AssocResult {
  double s = 0.0;
  double t = 0.0;
  double a = 0.0;
  double beta_joint = 0.0;
  double e_y_at_a = 0.0;
  double e_y_at_a_plus_delta = 0.0;
  double mc_standard_error = 0.0;
  // Over hyperparameter resamples; NaN when none were drawn.
  double variance = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double resample_median = 0.0;
  int resamples = 0;
  double output_scale = 1.0;

  double beta_joint_rescaled() const { return beta_joint * output_scale; }
};

// Conditional distribution of b for the generic subject given v(s) = a.
MvnDist conditional_random_effects(const PopulationParams& pop, double s, double a, bool include_noise,
                                   const std::map<std::string, double>& covariates = {});

// E[y(t) | v(s) = a] by Monte Carlo with standard-normal draws `z` (rows are
// draws, p columns).
double marginal_mean(const PopulationParams& pop, const AssocQuery& query, double a, const Eigen::MatrixXd& z);
double marginal_mean(const FitResult& fit, const AssocQuery& query);

// Point estimate and Monte Carlo error under common random numbers, no
// resampling.
AssocResult beta_joint_point(const PopulationParams& pop, const AssocQuery& query, const Eigen::MatrixXd& z);

// Standard-normal matrix shared by every cell of a query.
Eigen::MatrixXd common_normals(const AssocQuery& query, std::size_t p);

// Hyperparameter resamples with the fixed effects re-derived by one inner
// solve per draw on `data`. Without data the fixed effects stay at the mode.
std::vector<PopulationParams> resample_population(const FitResult& fit, const LongDataset* data, int count,
                                                  std::uint64_t seed);

AssocResult beta_joint(const FitResult& fit, const AssocQuery& query, const LongDataset* data = nullptr);

struct AssocSurface {
  std::vector<double> grid_s;
  std::vector<double> grid_t;
  std::vector<AssocResult> cells;     // s outer, t inner
  std::vector<AssocResult> diagonal;  // cells with s == t, in grid_s order
  AssocResult time_average;           // mean over the diagonal

  const AssocResult& at(std::size_t i, std::size_t j) const { return cells[i * grid_t.size() + j]; }
};

// `query.s` and `query.t` are ignored; every (s, t) pair of the grids is
// evaluated with the same common random numbers.
AssocSurface assoc_surface(const FitResult& fit, const std::vector<double>& grid_s, const std::vector<double>& grid_t,
                           const AssocQuery& query, const LongDataset* data = nullptr);
AssocSurface assoc_surface(const PopulationParams& pop, const std::vector<PopulationParams>& resampled,
                           const std::vector<double>& grid_s, const std::vector<double>& grid_t,
                           const AssocQuery& query);

}  // namespace jointlong
