#include "jointlong/simgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

namespace jointlong {

SimConfig SimConfig::paper(ModelKind generator, int n_subjects) {
  SimConfig c;
  c.generator = generator;
  c.n_subjects = n_subjects;
  c.beta_v = Eigen::Vector2d(12.108, -0.166);
  c.beta_y = Eigen::Vector2d(4.666, -0.278);
  c.D.resize(4, 4);
  c.D << 0.243, -0.019, 0.654, -0.056,
         -0.019, 0.004, -0.032, 0.005,
         0.654, -0.032, 6.004, -0.38,
         -0.056, 0.005, -0.38, 0.042;
  return c;
}

void SimConfig::validate() const {
  if (n_subjects < 1) throw ConfigError("simulation needs at least one subject");
  if (max_visits < 1) throw ConfigError("max_visits must be at least 1");
  if (!(time_hi >= time_lo)) throw ConfigError("time range is empty");
  if (beta_v.size() != 2 || beta_y.size() != 2) throw ConfigError("beta_v and beta_y must have two entries");
  if (D.rows() != 4 || D.cols() != 4) throw ConfigError("D must be 4x4");
  if (!(miss_outcome >= 0.0 && miss_outcome < 1.0) || !(miss_cov >= 0.0 && miss_cov < 1.0))
    throw ConfigError("missingness rates must lie in [0, 1)");
  if (!(sigma2_eps >= 0.0)) throw ConfigError("sigma2_eps must be non-negative");
  if (outcome_family == OutcomeFamily::Beta && !(phi > 0.0)) throw ConfigError("phi must be positive");
  if (replications < 1) throw ConfigError("replications must be at least 1");
  Eigen::MatrixXd d = generator_D();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(d);
  if (eig.eigenvalues().minCoeff() < -1e-12) throw ConfigError("random-effects covariance is not positive semi-definite");
}

std::vector<double> SimConfig::visit_times() const {
  std::vector<double> t(static_cast<std::size_t>(max_visits));
  for (int k = 0; k < max_visits; ++k)
    t[k] = max_visits == 1 ? time_lo : time_lo + (time_hi - time_lo) * k / static_cast<double>(max_visits - 1);
  return t;
}

Eigen::MatrixXd SimConfig::generator_D() const {
  Eigen::MatrixXd d = D;
  if (generator == ModelKind::JSM) {
    d.topRightCorner(2, 2).setZero();
    d.bottomLeftCorner(2, 2).setZero();
  }
  return d;
}

ModelSpec SimConfig::model_spec(ModelKind kind) const {
  ModelSpec spec;
  spec.kind = kind;
  spec.outcome_family = outcome_family;
  spec.link = outcome_family == OutcomeFamily::Beta ? Link::Logit : Link::Identity;
  return spec;
}

PopulationParams SimConfig::truth() const {
  PopulationParams p;
  p.spec = model_spec(generator);
  p.beta_v = beta_v;
  p.beta_y = beta_y;
  p.D = generator_D();
  p.sigma2_eps = sigma2_eps;
  p.gamma = generator == ModelKind::JSM ? gamma : 0.0;
  if (generator == ModelKind::JSM && center_copy) p.beta_y -= gamma * beta_v;
  return p;
}

Eigen::MatrixXd draw_random_effects(const SimConfig& config, int n, RngStream& rng) {
  const Eigen::MatrixXd f = psd_factor(config.generator_D());
  Eigen::MatrixXd z = rng.normal_matrix(n, 4);
  return z * f.transpose();
}

LongDataset generate(const SimConfig& config, int replication_index) {
  config.validate();
  RngStream rng = RngStream::derive(config.seed, static_cast<std::uint64_t>(replication_index));
  const auto times = config.visit_times();
  const Eigen::MatrixXd b = draw_random_effects(config, config.n_subjects, rng);
  const double sd_eps = std::sqrt(config.sigma2_eps);
  const double sd_out = std::sqrt(config.out_sigma2);
  const bool jsm = config.generator == ModelKind::JSM;
  LongDataset data;
  for (int i = 0; i < config.n_subjects; ++i) {
    SubjectRecord s;
    char id[16];
    std::snprintf(id, sizeof id, "S%05d", i + 1);
    s.id = id;
    for (double t : times) {
      const double fixed_v = config.beta_v(0) + config.beta_v(1) * t;
      const double m = fixed_v + b(i, 0) + b(i, 1) * t;
      const double v = m + sd_eps * rng.normal();
      double eta = config.beta_y(0) + config.beta_y(1) * t + b(i, 2) + b(i, 3) * t;
      if (jsm) eta += config.gamma * (config.center_copy ? m - fixed_v : m);
      double y;
      if (config.outcome_family == OutcomeFamily::Beta) {
        const double mu = inverse_link(Link::Logit, eta);
        if (config.noiseless) {
          y = mu;
        } else {
          const double g1 = rng.gamma(mu * config.phi);
          const double g2 = rng.gamma((1.0 - mu) * config.phi);
          y = g1 / (g1 + g2);
        }
        y = std::clamp(y, 1e-12, 1.0 - 1e-12);
      } else {
        y = config.noiseless ? eta : eta + sd_out * rng.normal();
      }
      const bool keep_v = !rng.bernoulli(config.miss_cov);
      const bool keep_y = !rng.bernoulli(config.miss_outcome);
      if (keep_v) {
        s.cov_times.push_back(t);
        s.cov_values.push_back(v);
      }
      if (keep_y) {
        s.out_times.push_back(t);
        s.out_values.push_back(y);
      }
    }
    if (s.n_cov() + s.n_out() > 0) data.subjects.push_back(std::move(s));
  }
  return data;
}

std::vector<double> truth_curve(const SimConfig& config, const std::vector<double>& ages, double a,
                                int mc_samples, std::uint64_t seed) {
  const PopulationParams pop = config.truth();
  AssocQuery q;
  q.a = a;
  q.mc_samples = mc_samples;
  q.resamples = 0;
  q.seed = seed;
  auto surface = assoc_surface(pop, {}, ages, ages, q);
  std::vector<double> out;
  for (const auto& c : surface.diagonal) out.push_back(c.beta_joint);
  return out;
}

StudyRow run_replication(const StudyConfig& config, int replication_index, ModelKind model,
                         const LongDataset& data) {
  StudyRow row;
  row.replication = replication_index;
  row.model = model;
  row.n_subjects = static_cast<int>(data.n_subjects());
  try {
    ModelSpec spec = config.sim.model_spec(model);
    spec.priors.informative = config.informative_priors;
    FitControl control = config.fit;
    control.seed = derive_seed(config.sim.seed, static_cast<std::uint64_t>(replication_index));
    control.diagnostic_draws = config.diagnostic_draws;
    FitResult f = fit(spec, data, control);
    row.converged = f.reliable();
    row.outer_iterations = f.outer_iterations;
    row.hyper_modes = natural_hyper(f.spec, f.hyper_mode);
    row.log_marginal_likelihood = f.diagnostics.log_marginal_likelihood;
    if (f.diagnostics.has_information_criteria()) {
      row.waic_overall = f.diagnostics.waic_overall;
      row.waic_outcome = f.diagnostics.waic_outcome;
      row.dic_overall = f.diagnostics.dic_overall;
      row.dic_outcome = f.diagnostics.dic_outcome;
    }
    AssocQuery q;
    q.a = config.a;
    q.mc_samples = config.mc_samples;
    q.resamples = 0;
    q.seed = control.seed;
    auto surface = assoc_surface(PopulationParams::from_fit(f), {}, config.ages, config.ages, q);
    for (const auto& c : surface.diagonal) row.beta_joint.push_back(c.beta_joint);
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  return row;
}

std::vector<StudyAggregate> aggregate_rows(const std::vector<StudyRow>& rows, const std::vector<ModelKind>& models,
                                           const std::vector<double>& ages, const std::vector<double>& truth) {
  std::vector<StudyAggregate> out;
  for (ModelKind m : models) {
    for (std::size_t k = 0; k < ages.size(); ++k) {
      std::vector<double> vals;
      for (const auto& r : rows)
        if (r.model == m && !r.failed && k < r.beta_joint.size()) vals.push_back(r.beta_joint[k]);
      StudyAggregate agg;
      agg.model = m;
      agg.age = ages[k];
      agg.truth = k < truth.size() ? truth[k] : std::nan("");
      agg.count = static_cast<int>(vals.size());
      if (!vals.empty()) {
        double sum = 0.0;
        for (double v : vals) sum += v;
        agg.mean = sum / static_cast<double>(vals.size());
        agg.q05 = quantile(vals, 0.05);
        agg.q95 = quantile(vals, 0.95);
      } else {
        agg.mean = agg.q05 = agg.q95 = std::nan("");
      }
      out.push_back(agg);
    }
  }
  return out;
}

StudyReport run_study(const StudyConfig& config) {
  config.sim.validate();
  if (config.fit_models.empty()) throw ConfigError("study needs at least one model to fit");
  if (config.jobs < 1) throw ConfigError("jobs must be at least 1");
  StudyReport report;
  report.ages = config.ages;
  report.a = config.a;
  report.truth = truth_curve(config.sim, config.ages, config.a, config.truth_mc_samples,
                             derive_seed(config.sim.seed, 0x5452555448ULL));
  {
    const auto truth = config.sim.truth();
    const ModelSpec spec = config.sim.model_spec(config.sim.generator);
    report.true_hyper = natural_hyper(spec, HyperVector::from_natural(spec, truth.D, truth.sigma2_eps,
                                                                      config.sim.outcome_family == OutcomeFamily::Beta
                                                                          ? config.sim.phi
                                                                          : 1.0 / config.sim.out_sigma2,
                                                                      truth.gamma));
  }

  const int n_rep = config.sim.replications;
  const std::size_t n_models = config.fit_models.size();
  std::vector<StudyRow> rows(static_cast<std::size_t>(n_rep) * n_models);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int r = next++; r < n_rep; r = next++) {
      const int index = config.first_replication + r;
      LongDataset data = generate(config.sim, index);
      for (std::size_t m = 0; m < n_models; ++m)
        rows[static_cast<std::size_t>(r) * n_models + m] = run_replication(config, index, config.fit_models[m], data);
    }
  };
  const int jobs = std::min(config.jobs, n_rep);
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& r : rows)
    if (r.failed) ++report.failures;
  report.aggregates = aggregate_rows(rows, config.fit_models, config.ages, report.truth);
  report.rows = std::move(rows);
  return report;
}

}  // namespace jointlong
