#pragma once

#include <Eigen/Core>

namespace fedprog {

/// Adam with bias correction; deterministic given the gradient sequence.
struct AdamState {
  Eigen::VectorXd m, v;
  int t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(Eigen::Index n) {
    m = Eigen::VectorXd::Zero(n);
    v = Eigen::VectorXd::Zero(n);
    t = 0;
  }

  Eigen::VectorXd step(double lr, const Eigen::VectorXd& grad) {
    if (m.size() != grad.size()) init(grad.size());
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad).eval();
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    return (lr / bc1) * m.cwiseQuotient(
        ((v / bc2).cwiseSqrt().array() + eps).matrix());
  }
};

}  // namespace fedprog
