#pragma once

// Flow states and tangent vectors as flat vectors, so the flow and
// composition code is shared between the pose manifold and the planar toys.
//
//   pose:       coords [x y z w qx qy qz], tangent [vx vy vz wx wy wz]
//   euclidean:  coords = tangent = R^d (d <= 3)
//
// Euclidean states are mapped between frames by embedding them in R^3; frames
// used with euclidean spaces are expected to rotate about z only.

#include <span>
#include <string>

#include <Eigen/Core>

#include "msg/manifold.hpp"
#include "msg/random.hpp"

namespace msg {

using Eigen::VectorXd;

enum class SpaceKind { kEuclidean, kPose };

class StateSpace {
 public:
  static StateSpace euclidean(int dim);
  static StateSpace pose();

  SpaceKind kind() const { return kind_; }
  bool is_pose() const { return kind_ == SpaceKind::kPose; }
  int coord_dim() const { return is_pose() ? 7 : dim_; }
  int tangent_dim() const { return is_pose() ? 6 : dim_; }
  // Network features: position plus the first two rotation-matrix columns.
  int feature_dim() const { return is_pose() ? 9 : dim_; }
  // Weight groups: position / orientation for poses, one group otherwise.
  int group_count() const { return is_pose() ? 2 : 1; }
  int group_of(int tangent_index) const { return is_pose() && tangent_index >= 3 ? 1 : 0; }
  std::string name() const;
  static StateSpace from_name(const std::string& name);

  VectorXd origin() const;
  void features(const VectorXd& state, double* out) const;
  void check(const VectorXd& state) const;

  VectorXd retract(const VectorXd& state, const VectorXd& velocity, double dt) const;
  // Constant velocity carrying `from` to `to` in unit time.
  VectorXd displacement(const VectorXd& from, const VectorXd& to) const;
  VectorXd interpolate(const VectorXd& from, const VectorXd& to, double t) const;

  VectorXd to_local(const VectorXd& state, const Frame& f) const;
  VectorXd to_global(const VectorXd& state, const Frame& f) const;
  VectorXd tangent_to_global(const VectorXd& v, const Frame& f) const;
  VectorXd tangent_to_local(const VectorXd& v, const Frame& f) const;
  // Diagonal of R diag(var) R^T, blockwise for poses.
  VectorXd variance_to_global(const VectorXd& variance, const Frame& f) const;

  VectorXd weighted_mean(std::span<const VectorXd> states, std::span<const VectorXd> weights) const;

  // Isotropic Gaussian in the tangent space at `center` (pose: expressed in
  // the center's frame).
  VectorXd sample_around(const VectorXd& center, double sigma_linear, double sigma_angular, Rng& rng) const;

  double position_error(const VectorXd& a, const VectorXd& b) const;
  double rotation_error(const VectorXd& a, const VectorXd& b) const;

  static Pose as_pose(const VectorXd& state);
  static VectorXd from_pose(const Pose& p);

  bool operator==(const StateSpace& o) const { return kind_ == o.kind_ && dim_ == o.dim_; }

 private:
  StateSpace(SpaceKind kind, int dim) : kind_(kind), dim_(dim) {}
  Vec3 embed(const VectorXd& v) const;
  VectorXd project(const Vec3& v) const;

  SpaceKind kind_;
  int dim_;
};

}  // namespace msg
