#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace jointlong {

using ScalarFunction = std::function<double(const Eigen::VectorXd&)>;

Eigen::VectorXd central_gradient(const ScalarFunction& f, const Eigen::VectorXd& x, double step);

// Second differences of function values; `fx` is f(x).
Eigen::MatrixXd central_hessian(const ScalarFunction& f, const Eigen::VectorXd& x, double step, double fx);

struct BfgsOptions {
  double grad_tol = 1e-4;  // max-norm
  int max_iter = 200;
  double fd_step = 1e-4;
  double max_step = 1.0;   // max-norm cap on a trial step
  int max_halvings = 40;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

// Minimizes f with BFGS on central finite-difference gradients and a
// backtracking Armijo line search. `on_accept` is called with every accepted
// iterate (including x0) before its gradient is evaluated.
BfgsResult bfgs_minimize(const ScalarFunction& f, const Eigen::VectorXd& x0, const BfgsOptions& options,
                         const std::function<void(const Eigen::VectorXd&)>& on_accept = {});

}  // namespace jointlong
