#include "jointlong/gaussian.hpp"

#include <cmath>

namespace jointlong {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return mix64(mix64(root) ^ mix64(index + 0xD1B54A32D192ED03ULL));
}

CounterEngine::result_type CounterEngine::operator()() {
  ++counter_;
  return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

Eigen::VectorXd RngStream::normal_vector(Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

Eigen::MatrixXd RngStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
  return m;
}

Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& a, double* jitter_used) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    if (jitter_used) *jitter_used = 0.0;
    return llt.matrixL();
  }
  const double p = static_cast<double>(a.rows());
  double jitter = 1e-10 * a.trace() / p;
  if (!(jitter > 0.0)) throw NumericalError("Cholesky factorization failed: matrix has no positive diagonal mass");
  for (int attempt = 0; attempt < 3; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += jitter;
    llt.compute(b);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      return llt.matrixL();
    }
  }
  throw NumericalError("Cholesky factorization failed after jitter");
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& a) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  Eigen::VectorXd sq = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * sq.asDiagonal();
}

double mvn_logpdf(const Eigen::VectorXd& x, const MvnDist& dist) {
  Eigen::MatrixXd L = jittered_cholesky(dist.cov);
  Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(x - dist.mean);
  const double n = static_cast<double>(x.size());
  return -0.5 * (n * kLog2Pi + z.squaredNorm()) - L.diagonal().array().log().sum();
}

MvnDist condition(const MvnDist& joint, const std::vector<Eigen::Index>& observed_idx,
                  const Eigen::VectorXd& observed_values) {
  const Eigen::Index n = joint.dim();
  if (static_cast<Eigen::Index>(observed_idx.size()) != observed_values.size())
    throw ConfigError("observed index and value counts differ");
  std::vector<bool> observed(static_cast<std::size_t>(n), false);
  for (auto i : observed_idx) {
    if (i < 0 || i >= n || observed[i]) throw ConfigError("invalid observed index set");
    observed[i] = true;
  }
  std::vector<Eigen::Index> free_idx;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!observed[i]) free_idx.push_back(i);
  const auto nf = static_cast<Eigen::Index>(free_idx.size());
  const auto no = static_cast<Eigen::Index>(observed_idx.size());

  Eigen::MatrixXd s_oo(no, no), s_fo(nf, no), s_ff(nf, nf);
  Eigen::VectorXd mu_o(no), mu_f(nf);
  for (Eigen::Index a = 0; a < no; ++a) {
    mu_o(a) = joint.mean(observed_idx[a]);
    for (Eigen::Index b = 0; b < no; ++b) s_oo(a, b) = joint.cov(observed_idx[a], observed_idx[b]);
  }
  for (Eigen::Index a = 0; a < nf; ++a) {
    mu_f(a) = joint.mean(free_idx[a]);
    for (Eigen::Index b = 0; b < no; ++b) s_fo(a, b) = joint.cov(free_idx[a], observed_idx[b]);
    for (Eigen::Index b = 0; b < nf; ++b) s_ff(a, b) = joint.cov(free_idx[a], free_idx[b]);
  }
  Eigen::MatrixXd L;
  try {
    L = jittered_cholesky(s_oo);
  } catch (const NumericalError&) {
    throw NumericalError("degenerate conditioning: observed covariance block is singular");
  }
  // W = L^{-1} S_of, so S_fo S_oo^{-1} S_of = W^T W.
  Eigen::MatrixXd w = L.triangularView<Eigen::Lower>().solve(s_fo.transpose());
  Eigen::VectorXd z = L.triangularView<Eigen::Lower>().solve(observed_values - mu_o);
  MvnDist out;
  out.mean = mu_f + w.transpose() * z;
  out.cov = s_ff - w.transpose() * w;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Eigen::MatrixXd build_cov_v(const Eigen::MatrixXd& z_v, const Eigen::MatrixXd& d_v, double sigma2,
                            const std::vector<bool>& include_noise) {
  if (z_v.cols() != d_v.rows() || d_v.rows() != d_v.cols())
    throw ConfigError("build_cov_v: design and covariance dimensions differ");
  if (static_cast<Eigen::Index>(include_noise.size()) != z_v.rows())
    throw ConfigError("build_cov_v: one noise flag per row required");
  Eigen::MatrixXd v = z_v * d_v * z_v.transpose();
  for (Eigen::Index i = 0; i < z_v.rows(); ++i)
    if (include_noise[i]) v(i, i) += sigma2;
  return v;
}

Eigen::MatrixXd build_cov_v(const ModelSpec& spec, const HyperVector& hyper, const Eigen::MatrixXd& z_v,
                            const std::vector<bool>& include_noise) {
  const auto qv = static_cast<Eigen::Index>(spec.qv());
  Eigen::MatrixXd d = hyper.covariance(spec);
  return build_cov_v(z_v, d.topLeftCorner(qv, qv), hyper.sigma2_eps(), include_noise);
}

Eigen::MatrixXd sample_mvn(const MvnDist& dist, Eigen::Index n, RngStream& rng) {
  if (n < 1) throw ConfigError("sample_mvn requires n >= 1");
  Eigen::MatrixXd f = psd_factor(dist.cov);
  Eigen::MatrixXd z = rng.normal_matrix(n, dist.dim());
  Eigen::MatrixXd draws = z * f.transpose();
  draws.rowwise() += dist.mean.transpose();
  return draws;
}

double log_multivariate_gamma(double x, int p) {
  double value = 0.25 * p * (p - 1) * std::log(M_PI);
  for (int j = 1; j <= p; ++j) value += std::lgamma(x + 0.5 * (1 - j));
  return value;
}

double wishart_logpdf(const Eigen::MatrixXd& precision, double df, const Eigen::MatrixXd& scale) {
  const auto p = precision.rows();
  if (!(df > static_cast<double>(p) - 1.0)) throw ConfigError("Wishart df must exceed p - 1");
  Eigen::LLT<Eigen::MatrixXd> llt_w(precision);
  if (llt_w.info() != Eigen::Success) throw NumericalError("Wishart argument is not positive definite");
  Eigen::LLT<Eigen::MatrixXd> llt_s(scale);
  if (llt_s.info() != Eigen::Success) throw NumericalError("Wishart scale is not positive definite");
  const double log_det_w = 2.0 * Eigen::MatrixXd(llt_w.matrixL()).diagonal().array().log().sum();
  const double log_det_s = 2.0 * Eigen::MatrixXd(llt_s.matrixL()).diagonal().array().log().sum();
  const double trace = llt_s.solve(precision).trace();
  const double pd = static_cast<double>(p);
  return 0.5 * (df - pd - 1.0) * log_det_w - 0.5 * trace - 0.5 * df * pd * std::log(2.0) - 0.5 * df * log_det_s -
         log_multivariate_gamma(0.5 * df, static_cast<int>(p));
}

}  // namespace jointlong
