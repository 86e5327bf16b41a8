#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "jointlong/core.hpp"

namespace jointlong {

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Child seed for stream `index` under `root`. Streams for workers,
// replications and grid cells are all derived this way.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

// Counter-based generator: output k is mix64(key + (k + 1) * golden). Two
// streams with different keys never share state, and the stream for
// (root, index) is reproducible without touching any other stream.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  explicit CounterEngine(std::uint64_t key = 0) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(mix64(seed)) {}
  static RngStream derive(std::uint64_t root, std::uint64_t index) {
    return RngStream(derive_seed(root, index));
  }

  double normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  Eigen::VectorXd normal_vector(Eigen::Index n);
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  CounterEngine& engine() { return engine_; }

 private:
  CounterEngine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

struct MvnDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  Eigen::Index dim() const { return mean.size(); }
};

// Cholesky with the jitter policy: on failure add 1e-10 * trace / p to the
// diagonal, retrying up to three times with 10x escalation. Returns the
// lower factor; throws NumericalError if every attempt fails.
Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& a, double* jitter_used = nullptr);

// Symmetric square-root-like factor F with F F^T = a for positive
// semi-definite a (negative eigenvalues from round-off are clamped).
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& a);

double mvn_logpdf(const Eigen::VectorXd& x, const MvnDist& dist);

// Gaussian conditional of the coordinates not in `observed_idx` given the
// observed ones. Throws NumericalError if the observed block stays singular
// after jitter.
MvnDist condition(const MvnDist& joint, const std::vector<Eigen::Index>& observed_idx,
                  const Eigen::VectorXd& observed_values);

// Z D_v Z^T with sigma^2 added on rows flagged in include_noise.
Eigen::MatrixXd build_cov_v(const Eigen::MatrixXd& z_v, const Eigen::MatrixXd& d_v, double sigma2,
                            const std::vector<bool>& include_noise);
Eigen::MatrixXd build_cov_v(const ModelSpec& spec, const HyperVector& hyper, const Eigen::MatrixXd& z_v,
                            const std::vector<bool>& include_noise);

// n draws as rows. Semi-definite covariances are allowed.
Eigen::MatrixXd sample_mvn(const MvnDist& dist, Eigen::Index n, RngStream& rng);

// log Gamma_p(x), the multivariate gamma function.
double log_multivariate_gamma(double x, int p);

// Wishart_p(df, scale) log density at `precision`, with E[W] = df * scale.
double wishart_logpdf(const Eigen::MatrixXd& precision, double df, const Eigen::MatrixXd& scale);

}  // namespace jointlong
