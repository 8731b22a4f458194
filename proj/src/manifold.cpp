#include "msg/manifold.hpp"

#include <cmath>
#include <limits>

namespace msg {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
// |w| of the relative quaternion below which a rotation counts as a half turn.
constexpr double kHalfTurnTolerance = 1e-12;

}  // namespace

Pose Pose::from_array(std::span<const double, 7> v) {
  Pose p;
  p.position = Vec3(v[0], v[1], v[2]);
  p.orientation = canonical(Quat(v[3], v[4], v[5], v[6]));
  return p;
}

std::array<double, 7> Pose::to_array() const {
  return {position.x(),      position.y(),      position.z(),     orientation.w(),
          orientation.x(), orientation.y(), orientation.z()};
}

Vec6 Tangent::stacked() const {
  Vec6 v;
  v << linear, angular;
  return v;
}

Tangent Tangent::from_stacked(const Vec6& v) {
  return {v.head<3>(), v.tail<3>()};
}

Quat canonical(const Quat& q) {
  const double n2 = q.squaredNorm();
  if (!(n2 > 0.0) || !std::isfinite(n2)) {
    throw GeometryError("invalid quaternion");
  }
  Quat r = q;
  if (std::abs(n2 - 1.0) > 4.0 * kEps) {
    r.coeffs() /= std::sqrt(n2);
  }
  bool flip = r.w() < 0.0;
  if (r.w() == 0.0) {
    // Tie-break on the first non-zero vector component.
    for (int i = 0; i < 3; ++i) {
      if (r.vec()[i] != 0.0) {
        flip = r.vec()[i] < 0.0;
        break;
      }
    }
  }
  if (flip) r.coeffs() = -r.coeffs();
  return r;
}

double rotation_distance(const Quat& a, const Quat& b) {
  const Quat rel = a.conjugate() * b;
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()));
}

Vec3 rotation_log(const Quat& q_in) {
  const Quat q = canonical(q_in);
  const double n = q.vec().norm();
  if (n == 0.0) return Vec3::Zero();
  return (2.0 * std::atan2(n, q.w()) / n) * q.vec();
}

Quat rotation_exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta == 0.0) return Quat::Identity();
  const double half = 0.5 * theta;
  const Vec3 v = (std::sin(half) / theta) * w;
  return canonical(Quat(std::cos(half), v.x(), v.y(), v.z()));
}

namespace {

Vec3 checked_log(const Quat& rel_in) {
  const Quat rel = canonical(rel_in);
  if (rel.w() <= kHalfTurnTolerance) {
    throw GeometryError("geodesic undefined: relative rotation is a half turn");
  }
  return rotation_log(rel);
}

}  // namespace

Vec3 log_map(const Quat& from, const Quat& to) {
  return checked_log(from.conjugate() * to);
}

Quat exp_map(const Quat& q, const Vec3& w) { return canonical(q * rotation_exp(w)); }

Vec3 spatial_log(const Quat& from, const Quat& to) {
  return checked_log(to * from.conjugate());
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.position = a.position + a.orientation * b.position;
  out.orientation = canonical(a.orientation * b.orientation);
  return out;
}

Pose inverse(const Pose& p) {
  Pose out;
  out.orientation = canonical(p.orientation.conjugate());
  out.position = -(out.orientation * p.position);
  return out;
}

Pose to_local(const Pose& ee, const Frame& f) {
  const Quat q_inv = f.pose.orientation.conjugate();
  Pose out;
  out.position = q_inv * (ee.position - f.pose.position);
  out.orientation = canonical(q_inv * ee.orientation);
  return out;
}

Pose to_global(const Pose& local, const Frame& f) { return compose(f.pose, local); }

Tangent transform_tangent(const Tangent& v, const Frame& f) {
  return {f.pose.orientation * v.linear, f.pose.orientation * v.angular};
}

Tangent inverse_transform_tangent(const Tangent& v, const Frame& f) {
  const Quat q_inv = f.pose.orientation.conjugate();
  return {q_inv * v.linear, q_inv * v.angular};
}

Pose geodesic_interpolate(const Pose& a, const Pose& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw GeometryError("interpolation parameter outside [0, 1]");
  }
  if (t == 0.0) return {a.position, canonical(a.orientation)};
  if (t == 1.0) return {b.position, canonical(b.orientation)};
  Pose out;
  out.position = (1.0 - t) * a.position + t * b.position;
  const Vec3 w = spatial_log(a.orientation, b.orientation);
  out.orientation = canonical(rotation_exp(t * w) * a.orientation);
  return out;
}

Pose retract(const Pose& p, const Tangent& v, double dt) {
  Pose out;
  out.position = p.position + dt * v.linear;
  out.orientation = canonical(rotation_exp(dt * v.angular) * p.orientation);
  return out;
}

Pose weighted_geodesic_mean(std::span<const Pose> poses, std::span<const Vec6> weights) {
  if (poses.empty()) throw GeometryError("weighted mean of zero poses");
  if (poses.size() != weights.size()) throw GeometryError("pose/weight count mismatch");

  Vec6 total = Vec6::Zero();
  for (const Vec6& w : weights) {
    if ((w.array() < 0.0).any() || !w.allFinite()) throw GeometryError("negative or non-finite weights");
    total += w;
  }
  if ((total.array() <= 0.0).any()) throw GeometryError("degenerate weights");

  Pose out;
  out.position.setZero();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out.position += (weights[i].head<3>().cwiseQuotient(total.head<3>())).cwiseProduct(poses[i].position);
  }

  // Orientation: quaternion sum using each pose's mean orientation weight,
  // sign-aligned to the most heavily weighted orientation.
  std::size_t ref = 0;
  bool uniform_dims = true;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Vec3 wr = weights[i].tail<3>();
    if (wr.sum() > weights[ref].tail<3>().sum()) ref = i;
    if (wr.maxCoeff() != wr.minCoeff()) uniform_dims = false;
  }
  const Quat& q_ref = poses[ref].orientation;
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const double w = weights[i].tail<3>().mean();
    Eigen::Vector4d c = poses[i].orientation.coeffs();
    if (c.dot(q_ref.coeffs()) < 0.0) c = -c;
    acc += w * c;
  }
  if (!(acc.norm() > 1e-300)) throw GeometryError("degenerate weights");
  Quat mean;
  mean.coeffs() = acc;
  mean = canonical(mean);

  if (!uniform_dims) {
    Vec3 delta = Vec3::Zero();
    for (std::size_t i = 0; i < poses.size(); ++i) {
      const Vec3 frac = weights[i].tail<3>().cwiseQuotient(total.tail<3>());
      delta += frac.cwiseProduct(spatial_log(mean, poses[i].orientation));
    }
    mean = canonical(rotation_exp(delta) * mean);
  }
  out.orientation = mean;
  return out;
}

Pose planar_pose(double x, double y, double yaw, double z) {
  Pose p;
  p.position = Vec3(x, y, z);
  p.orientation = canonical(Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ())));
  return p;
}

double yaw_of(const Quat& q) {
  return std::atan2(2.0 * (q.w() * q.z() + q.x() * q.y()), 1.0 - 2.0 * (q.y() * q.y() + q.z() * q.z()));
}

}  // namespace msg
