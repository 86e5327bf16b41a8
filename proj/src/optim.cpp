#include "jointlong/optim.hpp"

#include <cmath>
#include <limits>

namespace jointlong {

Eigen::VectorXd central_gradient(const ScalarFunction& f, const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + step;
    const double up = f(xp);
    xp(i) = x(i) - step;
    const double down = f(xp);
    xp(i) = x(i);
    g(i) = (up - down) / (2.0 * step);
  }
  return g;
}

Eigen::MatrixXd central_hessian(const ScalarFunction& f, const Eigen::VectorXd& x, double step, double fx) {
  const auto n = x.size();
  Eigen::MatrixXd h(n, n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp(i) = x(i) + step;
    const double up = f(xp);
    xp(i) = x(i) - step;
    const double down = f(xp);
    xp(i) = x(i);
    h(i, i) = (up - 2.0 * fx + down) / (step * step);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (int si : {1, -1})
        for (int sj : {1, -1}) {
          xp(i) = x(i) + si * step;
          xp(j) = x(j) + sj * step;
          acc += si * sj * f(xp);
        }
      xp(i) = x(i);
      xp(j) = x(j);
      h(i, j) = h(j, i) = acc / (4.0 * step * step);
    }
  return h;
}

BfgsResult bfgs_minimize(const ScalarFunction& f, const Eigen::VectorXd& x0, const BfgsOptions& options,
                         const std::function<void(const Eigen::VectorXd&)>& on_accept) {
  const auto n = x0.size();
  BfgsResult res;
  int evals = 0;
  auto counted = [&](const Eigen::VectorXd& x) {
    ++evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  Eigen::VectorXd x = x0;
  double fx = counted(x);
  if (!std::isfinite(fx)) {
    res.x = x;
    res.value = fx;
    res.gradient = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
    res.message = "objective not finite at the starting point";
    res.evaluations = evals;
    return res;
  }
  if (on_accept) on_accept(x);
  Eigen::VectorXd g = central_gradient(counted, x, options.fd_step);
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;

  int it = 0;
  for (; it < options.max_iter; ++it) {
    if (g.lpNorm<Eigen::Infinity>() < options.grad_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    Eigen::VectorXd dir = -h_inv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      // Lost descent; restart from steepest descent.
      h_inv.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double t = 1.0;
    const double dir_norm = dir.lpNorm<Eigen::Infinity>();
    if (dir_norm > options.max_step) t = options.max_step / dir_norm;

    Eigen::VectorXd x_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int k = 0; k < options.max_halvings; ++k, t *= 0.5) {
      x_new = x + t * dir;
      f_new = counted(x_new);
      if (f_new <= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.message = "line search failed";
      break;
    }
    if (on_accept) on_accept(x_new);
    Eigen::VectorXd g_new = central_gradient(counted, x_new, options.fd_step);
    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h_inv *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      h_inv = (I - rho * s * y.transpose()) * h_inv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    x = x_new;
    fx = f_new;
    g = g_new;
  }
  if (it == options.max_iter && !res.converged) res.message = "iteration limit reached";
  if (!res.converged && g.lpNorm<Eigen::Infinity>() < options.grad_tol) res.converged = true;
  res.x = x;
  res.value = fx;
  res.gradient = g;
  res.iterations = it;
  res.evaluations = evals;
  return res;
}

}  // namespace jointlong
