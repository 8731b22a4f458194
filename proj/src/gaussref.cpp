#include "msg/gaussref.hpp"

#include <stdexcept>

namespace msg {

StateSpace DiagGaussian::space() const {
  if (is_pose()) return StateSpace::pose();
  return StateSpace::euclidean(static_cast<int>(mean.size()));
}

void DiagGaussian::validate() const {
  if (!is_pose() && mean.size() != variance.size()) throw std::invalid_argument("mean/variance size mismatch");
  if ((variance.array() < 0.0).any() || !variance.allFinite()) throw std::invalid_argument("invalid variance");
}

DiagGaussian product(std::span<const DiagGaussian> gs) {
  if (gs.empty()) throw std::invalid_argument("product of zero Gaussians");
  const Eigen::Index d = gs.front().mean.size();
  VectorXd precision = VectorXd::Zero(d);
  VectorXd weighted = VectorXd::Zero(d);
  for (const auto& g : gs) {
    g.validate();
    if (g.is_pose() || g.mean.size() != d) throw std::invalid_argument("product needs euclidean Gaussians of equal dimension");
    const VectorXd p = g.variance.cwiseInverse();
    precision += p;
    weighted += p.cwiseProduct(g.mean);
  }
  DiagGaussian out;
  out.variance = precision.cwiseInverse();
  out.mean = out.variance.cwiseProduct(weighted);
  return out;
}

DiagGaussian transform(const DiagGaussian& g, const Frame& f) {
  g.validate();
  const StateSpace s = g.space();
  return {s.to_global(g.mean, f), s.variance_to_global(g.variance, f)};
}

std::vector<VectorXd> sample(const DiagGaussian& g, Rng& rng, int n) {
  g.validate();
  const StateSpace s = g.space();
  const VectorXd sd = g.variance.cwiseSqrt();
  std::vector<VectorXd> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const VectorXd step = sd.cwiseProduct(standard_normal(static_cast<int>(sd.size()), rng));
    out.push_back(s.retract(g.mean, step, 1.0));
  }
  return out;
}

}  // namespace msg
