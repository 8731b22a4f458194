#pragma once

// Geometry of the pose manifold R^3 x S^3.
//
// Conventions:
//  * Quaternions are stored as Eigen::Quaterniond and serialized (w, x, y, z).
//    Every producing operation returns a unit quaternion with w >= 0.
//  * Tangent vectors carry a linear part and an angular part. The angular part
//    is a rotation vector expressed in the axes of the frame the pose lives in
//    (q <- Exp(w dt) * q), so changing frames rotates both parts by the frame
//    orientation.

#include <array>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace msg {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Pose {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();

  static Pose identity() { return {}; }
  // [x, y, z, w, qx, qy, qz]
  static Pose from_array(std::span<const double, 7> v);
  std::array<double, 7> to_array() const;
};

struct Tangent {
  Vec3 linear = Vec3::Zero();
  Vec3 angular = Vec3::Zero();

  Vec6 stacked() const;
  static Tangent from_stacked(const Vec6& v);
};

struct Frame {
  Pose pose;
  std::string id;
};

// Normalizes and resolves the double cover (w >= 0). Quaternions already unit
// to within rounding are returned bit-for-bit.
Quat canonical(const Quat& q);

// Rotation angle between two orientations, in [0, pi].
double rotation_distance(const Quat& a, const Quat& b);

// Rotation vector <-> unit quaternion.
Vec3 rotation_log(const Quat& q);
Quat rotation_exp(const Vec3& w);

// Body-frame logarithm Log(from^-1 * to). Throws when the relative rotation
// is a half turn (no unique geodesic).
Vec3 log_map(const Quat& from, const Quat& to);
// q * Exp(w)
Quat exp_map(const Quat& q, const Vec3& w);

// Rotation vector taking `from` to `to` in the parent axes: to = Exp(w) from.
Vec3 spatial_log(const Quat& from, const Quat& to);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);

// [q_f^-1 (x - x_f) q_f, q_f^-1 q]
Pose to_local(const Pose& ee, const Frame& f);
Pose to_global(const Pose& local, const Frame& f);

Tangent transform_tangent(const Tangent& v, const Frame& f);
Tangent inverse_transform_tangent(const Tangent& v, const Frame& f);

// Linear in position, shorter-arc slerp in orientation.
Pose geodesic_interpolate(const Pose& a, const Pose& b, double t);

// Euler step along a tangent vector: x + v dt, Exp(w dt) q.
Pose retract(const Pose& p, const Tangent& v, double dt);

// One-shot weighted mean. Positions are combined per dimension. When a pose's
// three orientation weights agree the orientations are combined as a
// sign-aligned weighted quaternion sum; otherwise each orientation dimension
// is averaged in the tangent space at that quaternion mean. Weights are
// normalized per dimension; a dimension whose weights sum to zero throws.
Pose weighted_geodesic_mean(std::span<const Pose> poses, std::span<const Vec6> weights);

// Planar helper: rotation about z by `yaw` at (x, y, z).
Pose planar_pose(double x, double y, double yaw, double z = 0.0);
double yaw_of(const Quat& q);

}  // namespace msg
