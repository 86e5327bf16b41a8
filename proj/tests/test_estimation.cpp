#include "doctest.h"

#include <boost/math/distributions/normal.hpp>

#include <random>

#include "jointlong/estimation.hpp"
#include "jointlong/optim.hpp"
#include "jointlong/simgen.hpp"
#include "test_support.hpp"

using namespace jointlong;
using namespace testsupport;

namespace {

ArrowMatrix random_arrow(std::size_t nf, std::size_t p, std::size_t n, std::mt19937_64& gen) {
  LatentLayout layout;
  layout.kv = nf;
  layout.qv = p;
  layout.n_subjects = n;
  ArrowMatrix a = ArrowMatrix::zeros(layout);
  const auto m = static_cast<int>(nf + p);
  a.fixed = 0.1 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(nf), static_cast<Eigen::Index>(nf));
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::MatrixXd local = random_spd(m, gen, 0.3);
    a.fixed += local.topLeftCorner(nf, nf);
    a.cross[i] = local.topRightCorner(nf, p);
    a.blocks[i] = local.bottomRightCorner(p, p);
  }
  return a;
}

LongDataset small_dataset(const SimConfig& sim) { return generate(sim, 0); }

HyperVector near_truth(const ModelSpec& spec, const SimConfig& sim, double out_precision) {
  return HyperVector::from_natural(spec, sim.generator_D(), sim.sigma2_eps, out_precision, sim.gamma);
}

}  // namespace

TEST_CASE("arrowhead Cholesky agrees with a dense factorization") {
  std::mt19937_64 gen(3);
  const ArrowMatrix a = random_arrow(3, 2, 5, gen);
  const Eigen::MatrixXd dense = a.dense();
  ArrowCholesky chol(a);
  REQUIRE(chol.ok());
  Eigen::LDLT<Eigen::MatrixXd> ldlt(dense);
  CHECK(chol.log_det() == doctest::Approx(ldlt.vectorD().array().log().sum()).epsilon(1e-12));
  Eigen::VectorXd rhs = Eigen::VectorXd::LinSpaced(dense.rows(), -1.0, 2.0);
  CHECK((chol.solve(rhs) - ldlt.solve(rhs)).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((a.multiply(rhs) - dense * rhs).lpNorm<Eigen::Infinity>() < 1e-12);
  const Eigen::MatrixXd inv = dense.inverse();
  CHECK((chol.marginal_variances() - inv.diagonal()).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((chol.fixed_covariance() - inv.topLeftCorner(3, 3)).lpNorm<Eigen::Infinity>() < 1e-10);

  RngStream rng(5);
  const Eigen::VectorXd mean = Eigen::VectorXd::Zero(dense.rows());
  const int n = 40000;
  Eigen::MatrixXd draws(n, dense.rows());
  for (int i = 0; i < n; ++i) draws.row(i) = chol.sample(mean, rng).transpose();
  Eigen::MatrixXd emp = draws.transpose() * draws / n;
  CHECK((emp - inv).lpNorm<Eigen::Infinity>() < 0.05 * inv.diagonal().maxCoeff());
}

TEST_CASE("joint log posterior of an empty dataset is the prior") {
  for (auto kind : {ModelKind::JMM, ModelKind::JSM}) {
    ModelSpec spec = gaussian_spec(kind);
    LongDataset empty;
    ModelData md(spec, empty);
    HyperVector h = HyperVector::from_natural(spec, Eigen::Vector4d(0.5, 0.1, 2.0, 0.3).asDiagonal(), 0.2, 3.0, 1.1);
    HyperState hs(spec, h);
    Eigen::VectorXd x(4);
    x << 1.0, -0.5, 3.0, 0.25;
    boost::math::normal_distribution<double> bp(0.0, std::sqrt(1.0 / 0.001));
    double want = hyper_log_prior(spec, h);
    for (double b : x) want += std::log(boost::math::pdf(bp, b));
    CHECK(joint_log_posterior(md, hs, x) == doctest::Approx(want).epsilon(1e-13));
  }
}

TEST_CASE("one covariate observation composes by hand") {
  ModelSpec spec = gaussian_spec(ModelKind::JMM);
  LongDataset d;
  SubjectRecord s;
  s.id = "A";
  s.cov_times = {4.0};
  s.cov_values = {11.2};
  d.subjects.push_back(s);
  Eigen::Matrix4d D = Eigen::Vector4d(0.5, 0.1, 2.0, 0.3).asDiagonal();
  HyperVector h = HyperVector::from_natural(spec, D, 0.2, 3.0, 0.0);
  LatentField f(LatentLayout::from(spec, 1));
  f.beta_v() << 12.0, -0.1;
  f.beta_y() << 4.0, -0.3;
  boost::math::normal_distribution<double> bp(0.0, std::sqrt(1000.0));
  double want = hyper_log_prior(spec, h);
  for (double b : f.fixed()) want += std::log(boost::math::pdf(bp, b));
  want += -0.5 * (4 * kLog2Pi + std::log(D.determinant()));
  boost::math::normal_distribution<double> obs(12.0 - 0.4, std::sqrt(0.2));
  want += std::log(boost::math::pdf(obs, 11.2));
  CHECK(joint_log_posterior(spec, d, f, h) == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("joint log posterior is invariant to subject order") {
  SimConfig sim = SimConfig::paper(ModelKind::JSM, 8);
  const LongDataset d = small_dataset(sim);
  ModelSpec spec = beta_spec(ModelKind::JSM);
  std::mt19937_64 gen(8);
  const auto n = d.n_subjects();
  LatentField f(LatentLayout::from(spec, n), random_latent_point(sim, spec, n, gen));
  HyperVector h = near_truth(spec, sim, 30.0);

  LongDataset rev = d;
  std::reverse(rev.subjects.begin(), rev.subjects.end());
  LatentField g = f;
  for (std::size_t i = 0; i < n; ++i) g.b(i) = f.b(n - 1 - i);
  CHECK(joint_log_posterior(spec, rev, g, h) == doctest::Approx(joint_log_posterior(spec, d, f, h)).epsilon(1e-13));
  CHECK(log_marginal_hyper(spec, rev, h) == doctest::Approx(log_marginal_hyper(spec, d, h)).epsilon(1e-10));
}

TEST_CASE("latent gradient and Hessian match finite differences") {
  std::mt19937_64 gen(2718);
  for (auto fam : {OutcomeFamily::Gaussian, OutcomeFamily::Beta}) {
    for (auto kind : {ModelKind::JMM, ModelKind::JSM}) {
      SimConfig sim = fam == OutcomeFamily::Beta ? SimConfig::paper(kind, 6) : gaussian_sim(kind, 6, 4);
      sim.generator = kind;
      const LongDataset d = small_dataset(sim);
      ModelSpec spec = fam == OutcomeFamily::Beta ? beta_spec(kind) : gaussian_spec(kind);
      ModelData md(spec, d);
      HyperState hs(spec, near_truth(spec, sim, fam == OutcomeFamily::Beta ? 32.77 : 2.0));
      for (int point = 0; point < 5; ++point) {
        const Eigen::VectorXd x = random_latent_point(sim, spec, d.n_subjects(), gen);
        CHECK(latent_gradient_error(md, hs, x) < 1e-5);
        if (point == 0) {
          const LatentEval ev = latent_derivatives(md, hs, x, Curvature::Observed);
          const Eigen::MatrixXd H = ev.neg_hessian.dense();
          double worst = 0.0;
          for (Eigen::Index k = 0; k < x.size(); ++k) {
            const double h = 1e-3 * std::max(1.0, std::abs(x(k)));
            auto grad_at = [&](double step) {
              Eigen::VectorXd y = x;
              y(k) += step;
              return latent_derivatives(md, hs, y, Curvature::Observed).gradient;
            };
            const Eigen::VectorXd col =
                -(-grad_at(2 * h) + 8 * grad_at(h) - 8 * grad_at(-h) + grad_at(-2 * h)) / (12 * h);
            worst = std::max(worst, (col - H.col(k)).lpNorm<Eigen::Infinity>() / std::max(1.0, col.lpNorm<Eigen::Infinity>()));
          }
          CHECK(worst < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("Gaussian inner mode equals the stacked linear solve") {
  for (auto kind : {ModelKind::JMM, ModelKind::JSM}) {
    SimConfig sim = gaussian_sim(kind, 7, 11);
    const LongDataset d = small_dataset(sim);
    ModelSpec spec = gaussian_spec(kind);
    HyperVector h = near_truth(spec, sim, 2.0);
    const auto layout = LatentLayout::from(spec, d.n_subjects());
    const auto K = static_cast<Eigen::Index>(layout.size()), nf = static_cast<Eigen::Index>(layout.n_fixed());
    const auto p = static_cast<Eigen::Index>(layout.p());
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(K, K);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(K);
    P.topLeftCorner(nf, nf).diagonal().setConstant(spec.priors.beta_precision);
    const Eigen::MatrixXd Dinv = h.covariance(spec).inverse();
    for (std::size_t i = 0; i < d.n_subjects(); ++i) {
      const DenseSubject ds = dense_subject(spec, d.subjects[i], h.sigma2_eps(), 1.0 / h.out_precision(), h.gamma);
      Eigen::MatrixXd G = Eigen::MatrixXd::Zero(ds.obs.size(), K);
      G.leftCols(nf) = ds.X;
      G.middleCols(static_cast<Eigen::Index>(layout.b_offset(i)), p) = ds.W;
      const Eigen::VectorXd w = ds.noise.cwiseInverse();
      P += G.transpose() * w.asDiagonal() * G;
      rhs += G.transpose() * w.asDiagonal() * ds.obs;
      const auto off = static_cast<Eigen::Index>(layout.b_offset(i));
      P.block(off, off, p, p) += Dinv;
    }
    const Eigen::VectorXd want = P.fullPivLu().solve(rhs);
    InnerResult r = inner_mode(spec, d, h);
    CHECK(r.converged);
    CHECK((r.mode.values - want).lpNorm<Eigen::Infinity>() < 1e-8 * (1.0 + want.lpNorm<Eigen::Infinity>()));
    CHECK((r.precision.dense() - P).lpNorm<Eigen::Infinity>() < 1e-8 * P.lpNorm<Eigen::Infinity>());
  }
}

TEST_CASE("a subject without observations keeps a zero random-effect mode") {
  SimConfig sim = SimConfig::paper(ModelKind::JMM, 4);
  LongDataset d = small_dataset(sim);
  SubjectRecord blank;
  blank.id = "EMPTY";
  d.subjects.insert(d.subjects.begin() + 2, blank);
  ModelSpec spec = beta_spec(ModelKind::JMM);
  ModelData md(spec, d);
  InnerResult r = inner_mode(md, near_truth(spec, sim, 32.77));
  CHECK(r.converged);
  CHECK(r.mode.b(2).isZero(0.0));
  CHECK(!r.mode.b(1).isZero(0.0));
}

TEST_CASE("Laplace approximation is exact in the Gaussian case") {
  std::mt19937_64 gen(21);
  std::normal_distribution<double> nd;
  for (auto kind : {ModelKind::JMM, ModelKind::JSM}) {
    SimConfig sim = gaussian_sim(kind, 12, 19);
    const LongDataset d = small_dataset(sim);
    ModelSpec spec = gaussian_spec(kind);
    const Eigen::VectorXd base = near_truth(spec, sim, 2.0).flat(spec);
    for (int rep = 0; rep < 4; ++rep) {
      Eigen::VectorXd flat = base;
      for (auto& v : flat) v += 0.2 * nd(gen);
      const HyperVector h = HyperVector::from_flat(spec, flat);
      const double want = exact_gaussian_loglik(spec, d, h) + hyper_log_prior(spec, h);
      CHECK(log_marginal_hyper(spec, d, h) == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("log marginal is continuous in a vanishing prior jitter") {
  SimConfig sim = SimConfig::paper(ModelKind::JSM, 10);
  const LongDataset d = small_dataset(sim);
  ModelSpec spec = beta_spec(ModelKind::JSM);
  ModelData md(spec, d);
  const HyperVector h = near_truth(spec, sim, 32.77);
  LaplaceControl plain, jit;
  jit.prior_jitter = 1e-12;
  CHECK(std::abs(log_marginal_hyper(md, h, plain) - log_marginal_hyper(md, h, jit)) < 1e-6);
}

TEST_CASE("duplicating every subject doubles the data-dependent part") {
  // With the fixed effects pinned at zero by their prior, subjects are
  // independent and the log marginal minus the hyper prior is additive.
  SimConfig sim = gaussian_sim(ModelKind::JMM, 10, 5);
  sim.beta_v.setZero();
  sim.beta_y.setZero();
  const LongDataset d = small_dataset(sim);
  LongDataset dup = d;
  for (auto s : d.subjects) {
    s.id += "_copy";
    dup.subjects.push_back(s);
  }
  ModelSpec spec = gaussian_spec(ModelKind::JMM);
  spec.priors.beta_precision = 1e10;
  const HyperVector h = near_truth(spec, sim, 2.0);
  const double prior = hyper_log_prior(spec, h);
  const double one = log_marginal_hyper(spec, d, h) - prior;
  const double two = log_marginal_hyper(spec, dup, h) - prior;
  CHECK(two == doctest::Approx(2.0 * one).epsilon(1e-6));
}

TEST_CASE("fit agrees with direct MAP on the exact Gaussian marginal") {
  SimConfig sim = gaussian_sim(ModelKind::JMM, 50, 2025);
  sim.generator = ModelKind::JMM;
  const LongDataset d = small_dataset(sim);
  ModelSpec spec = gaussian_spec(ModelKind::JMM);
  const FitResult fr = fit(spec, d);
  CHECK(fr.converged);
  auto objective = [&](const Eigen::VectorXd& flat) {
    const HyperVector h = HyperVector::from_flat(spec, flat);
    const double v = exact_gaussian_loglik(spec, d, h) + hyper_log_prior(spec, h);
    return std::isfinite(v) ? -v : 1e300;
  };
  const Eigen::VectorXd start = near_truth(spec, sim, 2.0).flat(spec);
  const Eigen::VectorXd map = nelder_mead(objective, start, 0.3, 200000, 1e-14);
  const auto got = natural_hyper(spec, fr.hyper_mode);
  const auto want = natural_hyper(spec, HyperVector::from_flat(spec, map));
  REQUIRE(got.size() == want.size());
  for (std::size_t k = 0; k < got.size(); ++k) {
    INFO(got[k].name, " ", got[k].value, " vs ", want[k].value);
    CHECK(std::abs(got[k].value - want[k].value) / std::abs(want[k].value) < 1e-3);
  }
}

TEST_CASE("fit contract on a small JSM Beta dataset") {
  SimConfig sim = SimConfig::paper(ModelKind::JSM, 40);
  sim.seed = 77;
  const LongDataset d = small_dataset(sim);
  ModelSpec spec = beta_spec(ModelKind::JSM);
  FitControl control;
  control.seed = 9;
  const FitResult a = fit(spec, d, control);
  const FitResult b = fit(spec, d, control);

  SUBCASE("determinism") {
    CHECK(a.hyper_mode.flat(spec) == b.hyper_mode.flat(spec));
    CHECK(a.hyper_cov == b.hyper_cov);
    CHECK(a.latent_mode.values == b.latent_mode.values);
    REQUIRE(a.hyper_summaries.size() == b.hyper_summaries.size());
    for (std::size_t k = 0; k < a.hyper_summaries.size(); ++k) {
      CHECK(a.hyper_summaries[k].q025 == b.hyper_summaries[k].q025);
      CHECK(a.hyper_summaries[k].q975 == b.hyper_summaries[k].q975);
    }
  }
  SUBCASE("block-diagonal covariance and summary names") {
    const Eigen::MatrixXd D = a.hyper_mode.covariance(spec);
    CHECK(D.topRightCorner(2, 2).norm() == 0.0);
    CHECK(D.bottomLeftCorner(2, 2).norm() == 0.0);
    for (const char* absent : {"rho_13", "rho_14", "rho_23", "rho_24"}) CHECK(a.find_hyper(absent) == nullptr);
    for (const char* present : {"sigma_1", "sigma_2", "sigma_3", "sigma_4", "rho_12", "rho_34", "sigma2_eps", "phi", "gamma"})
      CHECK(a.find_hyper(present) != nullptr);
  }
  SUBCASE("summaries are transform images of the mode") {
    for (const auto& nv : natural_hyper(spec, a.hyper_mode)) {
      const ParamSummary* s = a.find_hyper(nv.name);
      REQUIRE(s != nullptr);
      CHECK(s->mode == nv.value);
      CHECK(s->q025 <= s->q50);
      CHECK(s->q50 <= s->q975);
    }
    for (const auto& s : a.latent_summaries) {
      CHECK(s.q025 <= s.q50);
      CHECK(s.q50 <= s.q975);
      CHECK(s.sd > 0.0);
    }
  }
  SUBCASE("hyper covariance is positive definite") {
    Eigen::LLT<Eigen::MatrixXd> llt(a.hyper_cov);
    CHECK(llt.info() == Eigen::Success);
  }
  SUBCASE("gradient at the reported mode") {
    REQUIRE(a.converged);
    ModelData md(a.spec, d);
    const Eigen::VectorXd mode = a.hyper_mode.flat(spec);
    auto f = [&](const Eigen::VectorXd& th) { return -log_marginal_hyper(md, HyperVector::from_flat(spec, th)); };
    const Eigen::VectorXd g = central_gradient(f, mode, 1e-4);
    CHECK(g.lpNorm<Eigen::Infinity>() < 10 * control.grad_tol);
  }
  SUBCASE("marginal likelihood is populated") {
    CHECK(std::isfinite(a.diagnostics.log_marginal_likelihood));
    CHECK(!a.diagnostics.has_information_criteria());
  }
}

TEST_CASE("constant Gaussian outcome gives a null slope") {
  SimConfig sim = gaussian_sim(ModelKind::JMM, 30, 3);
  LongDataset d = small_dataset(sim);
  for (auto& s : d.subjects)
    for (auto& y : s.out_values) y = 2.5;
  ModelSpec spec = gaussian_spec(ModelKind::JMM);
  const FitResult fr = fit(spec, d);
  const ParamSummary* slope = nullptr;
  for (const auto& s : fr.latent_summaries)
    if (s.name == "beta_y.time") slope = &s;
  REQUIRE(slope != nullptr);
  CHECK(std::abs(slope->mode) < 2 * slope->sd);
}

TEST_CASE("stage-one mixed model recovers a large-sample covariance") {
  SimConfig sim = gaussian_sim(ModelKind::JMM, 600, 6);
  sim.miss_cov = 0.0;
  const LongDataset d = small_dataset(sim);
  const StageOneResult r = stage_one_lmm(d, Process::Cov, DesignRecipe::intercept_time(), DesignRecipe::intercept_time(), false);
  CHECK(r.converged);
  CHECK(r.beta(0) == doctest::Approx(12.108).epsilon(0.01));
  CHECK(r.sigma2 == doctest::Approx(0.22).epsilon(0.05));
  CHECK(r.D(0, 0) == doctest::Approx(0.243).epsilon(0.2));
  CHECK(r.D(1, 1) == doctest::Approx(0.004).epsilon(0.2));
}

TEST_CASE("informative priors take the Wishart scale from stage one") {
  SimConfig sim = SimConfig::paper(ModelKind::JSM, 60);
  const LongDataset d = small_dataset(sim);
  ModelSpec spec = beta_spec(ModelKind::JSM);
  CHECK(resolve_priors(spec, d).priors.wishart_scale_diag.empty());
  spec.priors.informative = true;
  const ModelSpec r = resolve_priors(spec, d);
  REQUIRE(r.priors.wishart_scale_diag.size() == 4);
  for (double v : r.priors.wishart_scale_diag) CHECK(v > 0.0);
  spec.priors.wishart_scale_diag = {1, 2, 3, 4};
  CHECK(resolve_priors(spec, d).priors.wishart_scale_diag == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("quantile interpolation") {
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0}, 0.25) == doctest::Approx(1.25));
  CHECK(quantile({5.0}, 0.975) == 5.0);
  CHECK(quantile({0.0, 10.0}, 0.0) == 0.0);
  CHECK(quantile({0.0, 10.0}, 1.0) == 10.0);
}
