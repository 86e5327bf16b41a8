#include "jointlong/association.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace jointlong {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CellGeometry {
  double c0 = 0.0;       // eta at b = 0
  Eigen::VectorXd w;     // d eta / d b
  MvnDist cond_a;
  MvnDist cond_ad;
};

CellGeometry geometry(const PopulationParams& pop, const AssocQuery& q, double s, double t) {
  const auto& spec = pop.spec;
  const auto qv = static_cast<Eigen::Index>(spec.qv());
  const auto qy = static_cast<Eigen::Index>(spec.qy());
  CellGeometry g;
  const Eigen::RowVectorXd xv_t = spec.cov_fixed.row(t, q.covariates);
  const Eigen::RowVectorXd zv_t = spec.cov_random.row(t, q.covariates);
  const Eigen::RowVectorXd xy_t = spec.out_fixed.row(t, q.covariates);
  const Eigen::RowVectorXd zy_t = spec.out_random.row(t, q.covariates);
  g.c0 = xy_t.dot(pop.beta_y) + pop.gamma * xv_t.dot(pop.beta_v);
  g.w.resize(qv + qy);
  g.w.head(qv) = pop.gamma * zv_t.transpose();
  g.w.tail(qy) = zy_t.transpose();
  g.cond_a = conditional_random_effects(pop, s, q.a, q.include_noise, q.covariates);
  g.cond_ad = conditional_random_effects(pop, s, q.a + q.delta, q.include_noise, q.covariates);
  return g;
}

Eigen::VectorXd mean_draws(const PopulationParams& pop, const CellGeometry& g, const MvnDist& cond,
                           const Eigen::VectorXd& u) {
  const double shift = g.c0 + g.w.dot(cond.mean);
  const Link link = pop.spec.link;
  Eigen::VectorXd mu(u.size());
  for (Eigen::Index k = 0; k < u.size(); ++k) mu(k) = inverse_link(link, shift + u(k));
  return mu;
}

AssocResult evaluate_cell(const PopulationParams& pop, const AssocQuery& q, double s, double t,
                          const Eigen::MatrixXd& z, Eigen::VectorXd* diff_out = nullptr) {
  const CellGeometry g = geometry(pop, q, s, t);
  // Both conditionals share one covariance, so one factor serves a and a + delta.
  const Eigen::MatrixXd f = psd_factor(g.cond_a.cov);
  const Eigen::VectorXd u = z * (f.transpose() * g.w);
  const Eigen::VectorXd mu_a = mean_draws(pop, g, g.cond_a, u);
  const Eigen::VectorXd mu_ad = mean_draws(pop, g, g.cond_ad, u);
  const Eigen::VectorXd diff = mu_ad - mu_a;
  const double m = static_cast<double>(z.rows());
  AssocResult r;
  r.s = s;
  r.t = t;
  r.a = q.a;
  r.e_y_at_a = mu_a.mean();
  r.e_y_at_a_plus_delta = mu_ad.mean();
  r.beta_joint = diff.mean();
  const double var = m > 1 ? (diff.array() - diff.mean()).square().sum() / (m - 1.0) : 0.0;
  r.mc_standard_error = std::sqrt(var / m);
  r.variance = r.ci_low = r.ci_high = r.resample_median = kNaN;
  r.output_scale = q.output_scale;
  if (diff_out) *diff_out = diff;
  return r;
}

void attach_resamples(AssocResult& r, std::vector<double> values, double level) {
  r.resamples = static_cast<int>(values.size());
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  r.variance = values.size() > 1 ? ss / (n - 1.0) : 0.0;
  r.ci_low = quantile(values, 0.5 * (1.0 - level));
  r.ci_high = quantile(values, 0.5 * (1.0 + level));
  r.resample_median = quantile(std::move(values), 0.5);
}

}  // namespace

PopulationParams PopulationParams::from(const ModelSpec& spec, const HyperVector& hyper, const LatentField& field) {
  PopulationParams p;
  p.spec = spec;
  p.beta_v = field.beta_v();
  p.beta_y = field.beta_y();
  p.D = hyper.covariance(spec);
  p.sigma2_eps = hyper.sigma2_eps();
  p.gamma = spec.kind == ModelKind::JSM ? hyper.gamma : 0.0;
  return p;
}

PopulationParams PopulationParams::from_fit(const FitResult& fit) {
  return from(fit.spec, fit.hyper_mode, fit.latent_mode);
}

void AssocQuery::validate() const {
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  if (resamples < 0) throw ConfigError("resamples must be non-negative");
  if (!(delta != 0.0) || !std::isfinite(delta)) throw ConfigError("delta must be finite and non-zero");
  if (!std::isfinite(a) || !std::isfinite(s) || !std::isfinite(t)) throw ConfigError("a, s and t must be finite");
  if (!(ci_level > 0.0 && ci_level < 1.0)) throw ConfigError("ci_level must lie in (0, 1)");
}

MvnDist conditional_random_effects(const PopulationParams& pop, double s, double a, bool include_noise,
                                   const std::map<std::string, double>& covariates) {
  const auto& spec = pop.spec;
  const auto p = static_cast<Eigen::Index>(spec.p());
  const auto qv = static_cast<Eigen::Index>(spec.qv());
  const Eigen::RowVectorXd xv = spec.cov_fixed.row(s, covariates);
  const Eigen::MatrixXd zv = spec.cov_random.row(s, covariates);
  MvnDist joint;
  joint.mean = Eigen::VectorXd::Zero(p + 1);
  joint.mean(p) = xv.dot(pop.beta_v);
  joint.cov = Eigen::MatrixXd::Zero(p + 1, p + 1);
  joint.cov.topLeftCorner(p, p) = pop.D;
  const Eigen::VectorXd cross = pop.D.leftCols(qv) * zv.transpose();
  joint.cov.block(0, p, p, 1) = cross;
  joint.cov.block(p, 0, 1, p) = cross.transpose();
  joint.cov(p, p) = build_cov_v(zv, pop.D.topLeftCorner(qv, qv), pop.sigma2_eps, {include_noise})(0, 0);
  try {
    return condition(joint, {p}, Eigen::VectorXd::Constant(1, a));
  } catch (const NumericalError&) {
    throw NumericalError("degenerate association query: var(v(s)) is singular");
  }
}

Eigen::MatrixXd common_normals(const AssocQuery& query, std::size_t p) {
  RngStream rng = RngStream::derive(query.seed, 0x41535343ULL);
  return rng.normal_matrix(query.mc_samples, static_cast<Eigen::Index>(p));
}

double marginal_mean(const PopulationParams& pop, const AssocQuery& query, double a, const Eigen::MatrixXd& z) {
  AssocQuery q = query;
  q.a = a;
  const CellGeometry g = geometry(pop, q, q.s, q.t);
  const Eigen::MatrixXd f = psd_factor(g.cond_a.cov);
  const Eigen::VectorXd u = z * (f.transpose() * g.w);
  return mean_draws(pop, g, g.cond_a, u).mean();
}

double marginal_mean(const FitResult& fit, const AssocQuery& query) {
  query.validate();
  const auto pop = PopulationParams::from_fit(fit);
  return marginal_mean(pop, query, query.a, common_normals(query, pop.spec.p()));
}

AssocResult beta_joint_point(const PopulationParams& pop, const AssocQuery& query, const Eigen::MatrixXd& z) {
  return evaluate_cell(pop, query, query.s, query.t, z);
}

std::vector<PopulationParams> resample_population(const FitResult& fit, const LongDataset* data, int count,
                                                  std::uint64_t seed) {
  std::vector<PopulationParams> out;
  if (count <= 0) return out;
  const ModelSpec& spec = fit.spec;
  const Eigen::VectorXd mode = fit.hyper_mode.flat(spec);
  const Eigen::MatrixXd chol = psd_factor(fit.hyper_cov);
  std::optional<ModelData> md;
  if (data) {
    md.emplace(spec, *data);
    if (!(md->layout() == fit.latent_mode.layout)) throw DataError("dataset does not match the fitted layout");
  }
  RngStream rng = RngStream::derive(seed, 0x5245534dULL);
  out.reserve(static_cast<std::size_t>(count));
  for (int r = 0; r < count; ++r) {
    const HyperVector h = HyperVector::from_flat(spec, mode + chol * rng.normal_vector(mode.size()));
    if (md) {
      InnerResult inner = inner_mode(*md, h, {}, &fit.latent_mode.values);
      if (!std::isfinite(inner.log_posterior)) continue;
      out.push_back(PopulationParams::from(spec, h, inner.mode));
    } else {
      out.push_back(PopulationParams::from(spec, h, fit.latent_mode));
    }
  }
  return out;
}

AssocResult beta_joint(const FitResult& fit, const AssocQuery& query, const LongDataset* data) {
  auto surface = assoc_surface(fit, {query.s}, {query.t}, query, data);
  return surface.cells.front();
}

AssocSurface assoc_surface(const PopulationParams& pop, const std::vector<PopulationParams>& resampled,
                           const std::vector<double>& grid_s, const std::vector<double>& grid_t,
                           const AssocQuery& query) {
  query.validate();
  if (grid_s.empty() || grid_t.empty()) throw ConfigError("association grids must be non-empty");
  for (double v : grid_s)
    if (!std::isfinite(v)) throw ConfigError("association grid values must be finite");
  for (double v : grid_t)
    if (!std::isfinite(v)) throw ConfigError("association grid values must be finite");
  const Eigen::MatrixXd z = common_normals(query, pop.spec.p());

  AssocSurface out;
  out.grid_s = grid_s;
  out.grid_t = grid_t;
  std::vector<std::vector<double>> draws(grid_s.size() * grid_t.size());
  Eigen::VectorXd diag_diff = Eigen::VectorXd::Zero(z.rows());
  Eigen::VectorXd diff;
  std::size_t n_diag = 0;
  for (std::size_t i = 0; i < grid_s.size(); ++i)
    for (std::size_t j = 0; j < grid_t.size(); ++j) {
      out.cells.push_back(evaluate_cell(pop, query, grid_s[i], grid_t[j], z, &diff));
      if (grid_s[i] == grid_t[j]) {
        diag_diff += diff;
        ++n_diag;
      }
    }
  for (const auto& rp : resampled)
    for (std::size_t i = 0; i < grid_s.size(); ++i)
      for (std::size_t j = 0; j < grid_t.size(); ++j)
        draws[i * grid_t.size() + j].push_back(evaluate_cell(rp, query, grid_s[i], grid_t[j], z).beta_joint);
  for (std::size_t c = 0; c < out.cells.size(); ++c) attach_resamples(out.cells[c], draws[c], query.ci_level);

  // Time average over the diagonal, resample by resample.
  std::vector<std::size_t> diag_idx;
  for (std::size_t i = 0; i < grid_s.size(); ++i)
    for (std::size_t j = 0; j < grid_t.size(); ++j)
      if (grid_s[i] == grid_t[j]) diag_idx.push_back(i * grid_t.size() + j);
  for (auto c : diag_idx) out.diagonal.push_back(out.cells[c]);
  AssocResult& avg = out.time_average;
  avg.a = query.a;
  avg.output_scale = query.output_scale;
  avg.variance = avg.ci_low = avg.ci_high = avg.resample_median = kNaN;
  avg.s = avg.t = kNaN;
  if (!diag_idx.empty()) {
    const double n = static_cast<double>(diag_idx.size());
    avg.beta_joint = avg.e_y_at_a = avg.e_y_at_a_plus_delta = 0.0;
    for (auto c : diag_idx) {
      avg.beta_joint += out.cells[c].beta_joint / n;
      avg.e_y_at_a += out.cells[c].e_y_at_a / n;
      avg.e_y_at_a_plus_delta += out.cells[c].e_y_at_a_plus_delta / n;
    }
    const Eigen::VectorXd per_draw = diag_diff / static_cast<double>(n_diag);
    const double m = static_cast<double>(per_draw.size());
    const double var = m > 1 ? (per_draw.array() - per_draw.mean()).square().sum() / (m - 1.0) : 0.0;
    avg.mc_standard_error = std::sqrt(var / m);
    std::vector<double> avg_draws(resampled.size(), 0.0);
    for (std::size_t r = 0; r < resampled.size(); ++r)
      for (auto c : diag_idx) avg_draws[r] += draws[c][r] / n;
    attach_resamples(avg, std::move(avg_draws), query.ci_level);
  } else {
    avg.beta_joint = avg.e_y_at_a = avg.e_y_at_a_plus_delta = avg.mc_standard_error = kNaN;
  }
  return out;
}

AssocSurface assoc_surface(const FitResult& fit, const std::vector<double>& grid_s, const std::vector<double>& grid_t,
                           const AssocQuery& query, const LongDataset* data) {
  query.validate();
  const auto pop = PopulationParams::from_fit(fit);
  const auto resampled = resample_population(fit, data, query.resamples, query.seed);
  return assoc_surface(pop, resampled, grid_s, grid_t, query);
}

}  // namespace jointlong
