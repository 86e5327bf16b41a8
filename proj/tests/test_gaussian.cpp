#include "doctest.h"

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <numeric>
#include <random>

#include "jointlong/gaussian.hpp"
#include "test_support.hpp"

using namespace jointlong;

TEST_CASE("conditioning with zero cross-covariance keeps the free marginal") {
  MvnDist d{Eigen::Vector3d(1.0, -2.0, 0.5), Eigen::Vector3d(2.0, 0.5, 3.0).asDiagonal()};
  MvnDist c = condition(d, {1}, Eigen::VectorXd::Constant(1, 4.0));
  CHECK(c.mean(0) == 1.0);
  CHECK(c.mean(1) == 0.5);
  CHECK(c.cov(0, 0) == 2.0);
  CHECK(c.cov(1, 1) == 3.0);
  CHECK(c.cov(0, 1) == 0.0);
}

TEST_CASE("bivariate conditioning") {
  for (double rho : {-0.9, -0.3, 0.0, 0.6, 0.95}) {
    MvnDist d{Eigen::Vector2d::Zero(), Eigen::Matrix2d{{1.0, rho}, {rho, 1.0}}};
    MvnDist c = condition(d, {1}, Eigen::VectorXd::Constant(1, 1.7));
    CHECK(c.mean(0) == doctest::Approx(rho * 1.7).epsilon(1e-14));
    CHECK(c.cov(0, 0) == doctest::Approx(1 - rho * rho).epsilon(1e-13));
  }
}

TEST_CASE("conditioning matches the joint density on a grid of the free slice") {
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 3 + rep % 4;
    MvnDist joint{Eigen::VectorXd::Zero(n), testsupport::random_spd(n, gen, 0.2)};
    for (auto& m : joint.mean) m = 2.0 * nd(gen);
    const int k = 1 + rep % (n - 1);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), gen);
    std::vector<Eigen::Index> obs(idx.begin(), idx.begin() + k);
    Eigen::VectorXd vals(k);
    for (auto& v : vals) v = nd(gen);
    worst = std::max(worst, testsupport::grid_slice_error(joint, obs, vals));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("conditioning is projection-consistent") {
  std::mt19937_64 gen(99);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 10; ++rep) {
    MvnDist joint{Eigen::VectorXd::Zero(6), testsupport::random_spd(6, gen)};
    for (auto& m : joint.mean) m = nd(gen);
    // Condition on {1, 4}, then on original coordinate 2 (index 1 of the
    // remaining {0, 2, 3, 5}), versus on {1, 2, 4} at once.
    MvnDist step1 = condition(joint, {1, 4}, Eigen::Vector2d(0.3, -1.1));
    MvnDist step2 = condition(step1, {1}, Eigen::VectorXd::Constant(1, 0.8));
    MvnDist once = condition(joint, {1, 2, 4}, Eigen::Vector3d(0.3, 0.8, -1.1));
    CHECK((step2.mean - once.mean).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((step2.cov - once.cov).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("conditioning on a singular block is a numerical error") {
  MvnDist d{Eigen::Vector2d::Zero(), Eigen::Matrix2d{{1.0, 0.0}, {0.0, 0.0}}};
  CHECK_THROWS_AS(condition(d, {1}, Eigen::VectorXd::Constant(1, 1.0)), NumericalError);
}

TEST_CASE("covariate variance construction") {
  Eigen::MatrixXd z(1, 2);
  z << 1.0, 7.0;
  Eigen::Matrix2d dv = Eigen::Vector2d(0.4, 0.02).asDiagonal();
  CHECK(build_cov_v(z, dv, 0.3, {true})(0, 0) == doctest::Approx(0.4 + 49 * 0.02 + 0.3).epsilon(1e-15));
  CHECK(build_cov_v(z, dv, 0.3, {false})(0, 0) == doctest::Approx(0.4 + 49 * 0.02).epsilon(1e-15));
  CHECK(build_cov_v(z, dv, 0.0, {true})(0, 0) == build_cov_v(z, dv, 0.3, {false})(0, 0));

  // Generating covariate block at t = 10:
  // 0.243 + 2 * 10 * (-0.019) + 100 * 0.004 + 0.22 = 0.483
  z << 1.0, 10.0;
  Eigen::Matrix2d paper{{0.243, -0.019}, {-0.019, 0.004}};
  CHECK(build_cov_v(z, paper, 0.22, {true})(0, 0) == doctest::Approx(0.483).epsilon(1e-14));

  // Positive definite whenever a noise flag is set.
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> ut(3.0, 27.0);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::MatrixXd zz(2, 2);
    zz << 1, ut(gen), 1, ut(gen);
    std::vector<bool> flags{rep % 2 == 0, rep % 2 == 1};
    Eigen::LLT<Eigen::MatrixXd> llt(build_cov_v(zz, testsupport::random_spd(2, gen, 1e-3), 0.05, flags));
    CHECK(llt.info() == Eigen::Success);
  }
  Eigen::MatrixXd one(1, 2);
  one << 1.0, 12.0;
  Eigen::LLT<Eigen::MatrixXd> llt1(build_cov_v(one, Eigen::Matrix2d::Zero(), 0.05, {true}));
  CHECK(llt1.info() == Eigen::Success);
}

TEST_CASE("multivariate normal sampling") {
  SUBCASE("degenerate covariance returns the mean") {
    RngStream rng(3);
    MvnDist d{Eigen::Vector2d(1.5, -4.0), Eigen::Matrix2d::Zero()};
    Eigen::MatrixXd x = sample_mvn(d, 50, rng);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      CHECK(x(i, 0) == 1.5);
      CHECK(x(i, 1) == -4.0);
    }
  }
  SUBCASE("law of large numbers") {
    RngStream rng(17);
    MvnDist d{Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity()};
    Eigen::MatrixXd x = sample_mvn(d, 200000, rng);
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    CHECK((cov - Eigen::Matrix2d::Identity()).lpNorm<Eigen::Infinity>() < 0.02);
  }
  SUBCASE("correlated covariance") {
    RngStream rng(4);
    Eigen::Matrix2d s{{2.0, -0.9}, {-0.9, 0.7}};
    MvnDist d{Eigen::Vector2d(3.0, 1.0), s};
    Eigen::MatrixXd x = sample_mvn(d, 200000, rng);
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    CHECK((cov - s).lpNorm<Eigen::Infinity>() < 0.03);
    CHECK((x.colwise().mean().transpose() - d.mean).lpNorm<Eigen::Infinity>() < 0.02);
  }
  SUBCASE("same seed gives identical draws") {
    std::mt19937_64 gen(1);
    MvnDist d{Eigen::Vector3d(0.1, 0.2, 0.3), testsupport::random_spd(3, gen)};
    RngStream a(123), b(123), c(124);
    Eigen::MatrixXd xa = sample_mvn(d, 100, a), xb = sample_mvn(d, 100, b), xc = sample_mvn(d, 100, c);
    CHECK(xa == xb);
    CHECK(xa != xc);
  }
  SUBCASE("marginal skewness") {
    RngStream rng(8);
    MvnDist d{Eigen::Vector2d::Zero(), Eigen::Matrix2d{{1.0, 0.5}, {0.5, 2.0}}};
    Eigen::MatrixXd x = sample_mvn(d, 1000000, rng);
    for (Eigen::Index j = 0; j < 2; ++j) {
      Eigen::ArrayXd c = x.col(j).array() - x.col(j).mean();
      const double m2 = c.square().mean(), m3 = c.cube().mean();
      CHECK(std::abs(m3 / std::pow(m2, 1.5)) < 0.05);
    }
  }
}

TEST_CASE("Wishart log density") {
  SUBCASE("one dimension reduces to a Gamma density") {
    for (double r : {1.5, 4.0, 11.0})
      for (double s : {0.2, 1.0, 3.0}) {
        Eigen::MatrixXd w = Eigen::MatrixXd::Constant(1, 1, 0.9);
        boost::math::gamma_distribution<double> g(r / 2, 2 * s);
        CHECK(wishart_logpdf(w, r, Eigen::MatrixXd::Constant(1, 1, s)) ==
              doctest::Approx(std::log(boost::math::pdf(g, 0.9))).epsilon(1e-12));
      }
  }
  SUBCASE("identity argument, p = 2, r = 4") {
    // log Gamma_2(2) = (1/2) log pi + log Gamma(2) + log Gamma(3/2)
    const double lmg = 0.5 * std::log(M_PI) + std::log(boost::math::tgamma(2.0)) + std::log(boost::math::tgamma(1.5));
    const double want = -0.5 * 2.0 - 4.0 * std::log(2.0) - lmg;
    CHECK(wishart_logpdf(Eigen::Matrix2d::Identity(), 4.0, Eigen::Matrix2d::Identity()) ==
          doctest::Approx(want).epsilon(1e-14));
    CHECK(log_multivariate_gamma(2.0, 2) == doctest::Approx(lmg).epsilon(1e-14));
  }
  SUBCASE("log density ratio equals the kernel ratio") {
    std::mt19937_64 gen(31);
    for (int rep = 0; rep < 5; ++rep) {
      const int p = 2 + rep % 3;
      const double r = p + 2.5;
      Eigen::MatrixXd s = testsupport::random_spd(p, gen), w1 = testsupport::random_spd(p, gen),
                      w2 = testsupport::random_spd(p, gen);
      auto kernel = [&](const Eigen::MatrixXd& w) {
        return 0.5 * (r - p - 1) * std::log(w.determinant()) - 0.5 * (s.fullPivLu().inverse() * w).trace();
      };
      CHECK(wishart_logpdf(w1, r, s) - wishart_logpdf(w2, r, s) ==
            doctest::Approx(kernel(w1) - kernel(w2)).epsilon(1e-10));
    }
  }
  SUBCASE("domain errors") {
    CHECK_THROWS_AS(wishart_logpdf(Eigen::Matrix2d{{1.0, 2.0}, {2.0, 1.0}}, 4.0, Eigen::Matrix2d::Identity()),
                    NumericalError);
    CHECK_THROWS(wishart_logpdf(Eigen::Matrix2d::Identity(), 0.5, Eigen::Matrix2d::Identity()));
  }
}

TEST_CASE("jittered Cholesky") {
  Eigen::Matrix2d singular{{1.0, 1.0}, {1.0, 1.0}};
  double jitter = 0.0;
  Eigen::MatrixXd l = jittered_cholesky(singular, &jitter);
  CHECK(jitter > 0.0);
  CHECK(jitter <= 1e-7 * singular.trace() / 2);
  CHECK((l * l.transpose() - singular).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK_THROWS_AS(jittered_cholesky(Eigen::Matrix2d{{1.0, 0.0}, {0.0, -1.0}}), NumericalError);
  Eigen::Matrix2d spd{{2.0, 0.3}, {0.3, 1.0}};
  jitter = -1.0;
  l = jittered_cholesky(spd, &jitter);
  CHECK(jitter == 0.0);
}

TEST_CASE("derived random streams") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  RngStream a = RngStream::derive(5, 3), b = RngStream::derive(5, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  // Uniform moments.
  RngStream u(77);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) sum += u.uniform();
  CHECK(std::abs(sum / 100000 - 0.5) < 0.005);
}
