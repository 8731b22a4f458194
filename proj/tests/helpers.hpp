#pragma once

#include <cmath>

#include <Eigen/Geometry>

#include "msg/flowmatch.hpp"
#include "msg/manifold.hpp"
#include "msg/random.hpp"

namespace msg::test {

inline Quat random_quat(Rng& rng) {
  Quat q(standard_normal(4, rng).data());
  return canonical(q);
}

inline Pose random_pose(Rng& rng, double scale = 1.0) {
  Pose p;
  p.position = scale * standard_normal(3, rng);
  p.orientation = random_quat(rng);
  return p;
}

inline Quat axis_angle(double angle, const Vec3& axis) {
  return canonical(Quat(Eigen::AngleAxisd(angle, axis.normalized())));
}

// Quaternion distance that ignores the double cover.
inline double quat_distance(const Quat& a, const Quat& b) {
  return std::min((a.coeffs() - b.coeffs()).norm(), (a.coeffs() + b.coeffs()).norm());
}

inline double pose_distance(const Pose& a, const Pose& b) {
  return (a.position - b.position).norm() + quat_distance(a.orientation, b.orientation);
}

// A flow whose prediction is its output bias: every hidden weight is zero.
inline FlowModel constant_model(const StateSpace& space, const VectorXd& velocity, const VectorXd& logvar = {},
                                double progress_logit = 0.0, const Prior& prior = Prior::pose_centric(0.0, 0.0)) {
  TrainConfig c;
  c.hidden = {8, 8};
  FlowModel m = make_model(space, true, static_cast<int>(logvar.size()), prior, c);
  for (double& p : m.net.params()) p = 0.0;
  const auto& out = m.net.layers().back();
  const std::size_t d = static_cast<std::size_t>(velocity.size());
  for (std::size_t i = 0; i < d; ++i) m.net.params()[out.bias_offset + i] = velocity[i];
  m.net.params()[out.bias_offset + d] = progress_logit;
  for (std::size_t i = 0; i < static_cast<std::size_t>(logvar.size()); ++i) {
    m.net.params()[out.bias_offset + d + 1 + i] = logvar[i];
  }
  return m;
}

}  // namespace msg::test
