#include "jointlong/diagnostics.hpp"

#include <cmath>

#include "jointlong/estimation.hpp"

namespace jointlong {

double compensated_sum(const std::vector<double>& values) {
  double sum = 0.0, comp = 0.0;
  for (double v : values) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v))
      comp += (sum - t) + v;
    else
      comp += (v - t) + sum;
    sum = t;
  }
  return sum + comp;
}

void total_pointwise(FitDiagnostics& diag) {
  std::vector<double> lpd_all, pw_all, dic_all, pd_all, lpd_out, pw_out, dic_out;
  for (const auto& r : diag.pointwise) {
    lpd_all.push_back(r.lpd);
    pw_all.push_back(r.p_waic);
    dic_all.push_back(r.dic);
    pd_all.push_back(r.mean_deviance - r.deviance_at_mean);
    if (r.process == Process::Out) {
      lpd_out.push_back(r.lpd);
      pw_out.push_back(r.p_waic);
      dic_out.push_back(r.dic);
    }
  }
  diag.waic_overall = -2.0 * (compensated_sum(lpd_all) - compensated_sum(pw_all));
  diag.waic_outcome = -2.0 * (compensated_sum(lpd_out) - compensated_sum(pw_out));
  diag.dic_overall = compensated_sum(dic_all);
  diag.dic_outcome = compensated_sum(dic_out);
  diag.p_waic_overall = compensated_sum(pw_all);
  diag.p_dic_overall = compensated_sum(pd_all);
}

FitDiagnostics summarize_pointwise(const Eigen::MatrixXd& loglik, const Eigen::VectorXd& loglik_at_mean,
                                   std::vector<PointwiseRecord> meta) {
  const auto s = loglik.rows();
  const auto n = loglik.cols();
  if (s < 2) throw ConfigError("pointwise summary needs at least two draws");
  if (loglik_at_mean.size() != n || static_cast<Eigen::Index>(meta.size()) != n)
    throw ConfigError("pointwise summary: observation counts differ");
  FitDiagnostics diag;
  diag.draws = static_cast<int>(s);
  const double ds = static_cast<double>(s);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto col = loglik.col(j);
    const double mx = col.maxCoeff();
    const double lpd = mx + std::log((col.array() - mx).exp().sum() / ds);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / (ds - 1.0);
    auto& r = meta[static_cast<std::size_t>(j)];
    r.lpd = lpd;
    r.p_waic = var;
    r.mean_deviance = -2.0 * mean;
    r.deviance_at_mean = -2.0 * loglik_at_mean(j);
    r.dic = 2.0 * r.mean_deviance - r.deviance_at_mean;
  }
  diag.pointwise = std::move(meta);
  total_pointwise(diag);
  return diag;
}

double log_marginal_likelihood(const FitResult& fit) {
  const auto d = fit.hyper_cov.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(fit.hyper_cov);
  double log_det = 0.0;
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd l = llt.matrixL();
    log_det = 2.0 * l.diagonal().array().log().sum();
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.hyper_cov);
    log_det = eig.eigenvalues().cwiseMax(1e-300).array().log().sum();
  }
  return fit.log_marginal_hyper_at_mode + 0.5 * static_cast<double>(d) * kLog2Pi + 0.5 * log_det;
}

FitDiagnostics compute_diagnostics(const FitResult& fit, const ModelSpec& spec, const LongDataset& data,
                                   int n_posterior_draws, std::uint64_t seed) {
  if (n_posterior_draws < 10) throw ConfigError("diagnostics require at least 10 posterior draws");
  if (spec.kind != fit.spec.kind || spec.outcome_family != fit.spec.outcome_family || spec.link != fit.spec.link)
    throw ConfigError("fit was produced by a different model specification");
  const ModelData md(spec, data);
  if (!(md.layout() == fit.latent_mode.layout)) throw ConfigError("fit does not match the dataset layout");

  std::vector<PointwiseRecord> meta;
  for (const auto& s : data.subjects) {
    for (double t : s.cov_times) meta.push_back({s.id, Process::Cov, t});
    for (double t : s.out_times) meta.push_back({s.id, Process::Out, t});
  }
  const auto n_obs = static_cast<Eigen::Index>(meta.size());
  const Eigen::VectorXd theta_mode = fit.hyper_mode.flat(spec);
  const Eigen::MatrixXd chol = psd_factor(fit.hyper_cov);

  RngStream rng = RngStream::derive(seed, 0x4449414755ULL);
  Eigen::MatrixXd loglik(n_posterior_draws, n_obs);
  Eigen::VectorXd theta_sum = Eigen::VectorXd::Zero(theta_mode.size());
  Eigen::VectorXd latent_sum = Eigen::VectorXd::Zero(fit.latent_mode.values.size());
  int kept = 0;
  int attempts = 0;
  while (kept < n_posterior_draws) {
    if (++attempts > 4 * n_posterior_draws + 100)
      throw NumericalError("diagnostics: too many failed posterior draws");
    Eigen::VectorXd theta = theta_mode + chol * rng.normal_vector(theta_mode.size());
    const HyperVector h = HyperVector::from_flat(spec, theta);
    InnerResult inner = inner_mode(md, h, {}, &fit.latent_mode.values);
    if (!std::isfinite(inner.log_posterior)) continue;
    ArrowCholesky q(inner.precision);
    if (!q.ok()) continue;
    Eigen::VectorXd x = q.sample(inner.mode.values, rng);
    Eigen::VectorXd ll = pointwise_loglik(md, HyperState(spec, h), x);
    if (!ll.allFinite()) continue;
    loglik.row(kept) = ll.transpose();
    theta_sum += theta;
    latent_sum += x;
    ++kept;
  }
  const Eigen::VectorXd theta_mean = theta_sum / static_cast<double>(kept);
  const Eigen::VectorXd latent_mean = latent_sum / static_cast<double>(kept);
  Eigen::VectorXd at_mean = pointwise_loglik(md, HyperState(spec, HyperVector::from_flat(spec, theta_mean)), latent_mean);
  FitDiagnostics diag = summarize_pointwise(loglik, at_mean, std::move(meta));
  diag.log_marginal_likelihood = log_marginal_likelihood(fit);
  return diag;
}

}  // namespace jointlong
