#include "msg/state_space.hpp"

#include <cmath>
#include <vector>

namespace msg {

StateSpace StateSpace::euclidean(int dim) {
  if (dim < 1 || dim > 3) throw std::invalid_argument("euclidean state dimension must be 1..3");
  return StateSpace(SpaceKind::kEuclidean, dim);
}

StateSpace StateSpace::pose() { return StateSpace(SpaceKind::kPose, 7); }

std::string StateSpace::name() const {
  return is_pose() ? "pose" : "euclidean" + std::to_string(dim_);
}

StateSpace StateSpace::from_name(const std::string& name) {
  if (name == "pose") return pose();
  if (name.rfind("euclidean", 0) == 0 && name.size() == 10) return euclidean(name[9] - '0');
  throw std::invalid_argument("unknown state space '" + name + "'");
}

VectorXd StateSpace::origin() const {
  return is_pose() ? from_pose(Pose::identity()) : VectorXd::Zero(dim_);
}

Pose StateSpace::as_pose(const VectorXd& s) {
  Pose p;
  p.position = s.head<3>();
  p.orientation = canonical(Quat(s[3], s[4], s[5], s[6]));
  return p;
}

VectorXd StateSpace::from_pose(const Pose& p) {
  VectorXd s(7);
  s << p.position, p.orientation.w(), p.orientation.x(), p.orientation.y(), p.orientation.z();
  return s;
}

Vec3 StateSpace::embed(const VectorXd& v) const {
  Vec3 out = Vec3::Zero();
  out.head(dim_) = v.head(dim_);
  return out;
}

VectorXd StateSpace::project(const Vec3& v) const { return v.head(dim_); }

void StateSpace::check(const VectorXd& s) const {
  if (s.size() != coord_dim()) throw std::invalid_argument("state has wrong dimension");
  if (!s.allFinite()) throw std::runtime_error("non-finite state");
}

void StateSpace::features(const VectorXd& s, double* out) const {
  if (!is_pose()) {
    for (int i = 0; i < dim_; ++i) out[i] = s[i];
    return;
  }
  const Mat3 r = Quat(s[3], s[4], s[5], s[6]).normalized().toRotationMatrix();
  for (int i = 0; i < 3; ++i) out[i] = s[i];
  for (int i = 0; i < 3; ++i) out[3 + i] = r(i, 0);
  for (int i = 0; i < 3; ++i) out[6 + i] = r(i, 1);
}

VectorXd StateSpace::retract(const VectorXd& s, const VectorXd& v, double dt) const {
  if (!is_pose()) return s + dt * v;
  return from_pose(msg::retract(as_pose(s), Tangent::from_stacked(v), dt));
}

VectorXd StateSpace::displacement(const VectorXd& from, const VectorXd& to) const {
  if (!is_pose()) return to - from;
  const Pose a = as_pose(from);
  const Pose b = as_pose(to);
  Vec6 v;
  v << b.position - a.position, spatial_log(a.orientation, b.orientation);
  return v;
}

VectorXd StateSpace::interpolate(const VectorXd& from, const VectorXd& to, double t) const {
  if (!is_pose()) {
    if (t == 0.0) return from;
    if (t == 1.0) return to;
    return (1.0 - t) * from + t * to;
  }
  return from_pose(geodesic_interpolate(as_pose(from), as_pose(to), t));
}

VectorXd StateSpace::to_local(const VectorXd& s, const Frame& f) const {
  if (is_pose()) return from_pose(msg::to_local(as_pose(s), f));
  return project(f.pose.orientation.conjugate() * (embed(s) - f.pose.position));
}

VectorXd StateSpace::to_global(const VectorXd& s, const Frame& f) const {
  if (is_pose()) return from_pose(msg::to_global(as_pose(s), f));
  return project(f.pose.position + f.pose.orientation * embed(s));
}

VectorXd StateSpace::tangent_to_global(const VectorXd& v, const Frame& f) const {
  if (is_pose()) return transform_tangent(Tangent::from_stacked(v), f).stacked();
  return project(f.pose.orientation * embed(v));
}

VectorXd StateSpace::tangent_to_local(const VectorXd& v, const Frame& f) const {
  if (is_pose()) return inverse_transform_tangent(Tangent::from_stacked(v), f).stacked();
  return project(f.pose.orientation.conjugate() * embed(v));
}

VectorXd StateSpace::variance_to_global(const VectorXd& var, const Frame& f) const {
  const Mat3 r = f.pose.orientation.toRotationMatrix();
  const Mat3 r2 = r.cwiseAbs2();
  if (is_pose()) {
    VectorXd out(6);
    out.head<3>() = r2 * var.head<3>();
    out.tail<3>() = r2 * var.tail<3>();
    return out;
  }
  return project(r2 * embed(var));
}

VectorXd StateSpace::weighted_mean(std::span<const VectorXd> states, std::span<const VectorXd> weights) const {
  if (states.empty() || states.size() != weights.size()) {
    throw std::invalid_argument("weighted mean needs one weight vector per state");
  }
  if (is_pose()) {
    std::vector<Pose> poses;
    std::vector<Vec6> w;
    poses.reserve(states.size());
    w.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
      poses.push_back(as_pose(states[i]));
      w.push_back(weights[i]);
    }
    return from_pose(weighted_geodesic_mean(poses, w));
  }
  VectorXd total = VectorXd::Zero(dim_);
  for (const VectorXd& w : weights) total += w;
  if ((total.array() <= 0.0).any()) throw GeometryError("degenerate weights");
  VectorXd out = VectorXd::Zero(dim_);
  for (std::size_t i = 0; i < states.size(); ++i) {
    out += weights[i].cwiseQuotient(total).cwiseProduct(states[i]);
  }
  return out;
}

VectorXd StateSpace::sample_around(const VectorXd& center, double sigma_linear, double sigma_angular,
                                   Rng& rng) const {
  VectorXd n = standard_normal(tangent_dim(), rng);
  if (!is_pose()) return center + sigma_linear * n;
  // Perturbation in the center's own frame, so a draw about a transformed
  // center is the transformed draw.
  const Pose eps{sigma_linear * n.head<3>(), rotation_exp(sigma_angular * n.tail<3>())};
  return from_pose(compose(as_pose(center), eps));
}

double StateSpace::position_error(const VectorXd& a, const VectorXd& b) const {
  if (!is_pose()) return (a - b).norm();
  return (a.head<3>() - b.head<3>()).norm();
}

double StateSpace::rotation_error(const VectorXd& a, const VectorXd& b) const {
  if (!is_pose()) return 0.0;
  return rotation_distance(as_pose(a).orientation, as_pose(b).orientation);
}

}  // namespace msg
