#pragma once

// Demonstrations, their per-frame local datasets, progress labels and the
// binned Gaussian trajectory model used to supervise log-variance heads.

#include <map>
#include <span>
#include <string>
#include <vector>

#include "msg/manifold.hpp"

namespace msg {

struct DemoStep {
  Pose ee;
  double gripper = 0.0;
};

struct Demonstration {
  std::vector<DemoStep> steps;
  std::map<std::string, Pose> frames;  // constant over the episode
  std::vector<int> skill_splits;       // first step index of skills 2..K

  // Throws std::invalid_argument on fewer than 2 steps or bad splits.
  void validate() const;
  int skill_count() const { return static_cast<int>(skill_splits.size()) + 1; }
  int skill_of(int step) const;
  // [begin, end) step range of skill k.
  std::pair<int, int> skill_range(int k) const;
  Frame frame(const std::string& id) const;
};

struct LocalRecord {
  Pose local_ee;         // target: pose at `step`, in the frame
  Pose local_condition;  // conditioning pose: pose at `step - 1`, in the frame
  double progress = 0.0;
  int skill = 0;
  int demo = 0;
  int step = 0;
};

struct LocalDataset {
  std::string frame_id;
  std::vector<LocalRecord> records;

  std::vector<LocalRecord> skill_records(int skill) const;
};

// Every step except the first becomes a record.
LocalDataset to_local_dataset(std::span<const Demonstration> demos, const std::string& frame_id);

// Step i of a skill with S steps (0-based index j within the skill) gets (j + 1) / S.
std::vector<double> annotate_progress(const Demonstration& demo);

// Indices where the gripper signal crosses `threshold` in either direction.
std::vector<int> segment_by_gripper(const Demonstration& demo, double threshold = 0.5);

inline constexpr double kVarianceFloor = 1e-6;

struct TrajectoryBin {
  Pose mean;
  Vec6 variance;  // position, then orientation log coordinates about the mean
};

struct GaussianTrajectoryModel {
  std::string frame_id;
  std::vector<std::vector<TrajectoryBin>> skills;  // [skill][bin]

  int bins() const { return skills.empty() ? 0 : static_cast<int>(skills.front().size()); }
  const TrajectoryBin& at(int skill, double progress) const;
};

int progress_bin(double progress, int bins);

// Per-bin mean and biased diagonal variance of the local target poses.
GaussianTrajectoryModel fit_gaussian_trajectory(const LocalDataset& ds, int bins);

// Same origin, x-axis towards the ee; world z projected out for the z-axis
// (world y when x is vertical). Throws GeometryError("degenerate orientation").
Frame orient_frame(const Frame& f, const Pose& ee);

}  // namespace msg
