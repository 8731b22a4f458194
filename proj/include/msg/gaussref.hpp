#pragma once

// Closed-form diagonal Gaussians: the reference the composition strategies
// are checked against. Covariances stay diagonal; rotating one keeps only the
// diagonal of R diag(v) R^T.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "msg/manifold.hpp"
#include "msg/random.hpp"
#include "msg/state_space.hpp"

namespace msg {

// Euclidean: mean and variance have the same size (<= 3 when transformed).
// Pose: mean has 7 coordinates, variance 6 tangent entries.
struct DiagGaussian {
  VectorXd mean;
  VectorXd variance;

  bool is_pose() const { return mean.size() == 7 && variance.size() == 6; }
  StateSpace space() const;
  void validate() const;
};

// Precision-weighted product. Euclidean only.
DiagGaussian product(std::span<const DiagGaussian> gs);

DiagGaussian transform(const DiagGaussian& g, const Frame& f);

// Zero variance yields the mean exactly.
std::vector<VectorXd> sample(const DiagGaussian& g, Rng& rng, int n);

}  // namespace msg
