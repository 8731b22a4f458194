#include "msg/streams.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msg {

void Demonstration::validate() const {
  if (steps.size() < 2) throw std::invalid_argument("demonstration needs at least 2 steps");
  int prev = 0;
  for (int s : skill_splits) {
    if (s <= prev || s >= static_cast<int>(steps.size())) {
      throw std::invalid_argument("skill splits must be strictly increasing and inside the demonstration");
    }
    prev = s;
  }
}

int Demonstration::skill_of(int step) const {
  return static_cast<int>(std::upper_bound(skill_splits.begin(), skill_splits.end(), step) - skill_splits.begin());
}

std::pair<int, int> Demonstration::skill_range(int k) const {
  if (k < 0 || k >= skill_count()) throw std::out_of_range("skill index out of range");
  const int begin = k == 0 ? 0 : skill_splits[k - 1];
  const int end = k + 1 < skill_count() ? skill_splits[k] : static_cast<int>(steps.size());
  return {begin, end};
}

Frame Demonstration::frame(const std::string& id) const {
  auto it = frames.find(id);
  if (it == frames.end()) throw std::invalid_argument("demonstration has no frame '" + id + "'");
  return {it->second, id};
}

std::vector<LocalRecord> LocalDataset::skill_records(int skill) const {
  std::vector<LocalRecord> out;
  for (const auto& r : records) {
    if (r.skill == skill) out.push_back(r);
  }
  return out;
}

std::vector<double> annotate_progress(const Demonstration& demo) {
  demo.validate();
  std::vector<double> p(demo.steps.size());
  for (int k = 0; k < demo.skill_count(); ++k) {
    const auto [begin, end] = demo.skill_range(k);
    const double len = end - begin;
    for (int i = begin; i < end; ++i) p[i] = (i - begin + 1) / len;
  }
  return p;
}

LocalDataset to_local_dataset(std::span<const Demonstration> demos, const std::string& frame_id) {
  LocalDataset ds;
  ds.frame_id = frame_id;
  for (std::size_t d = 0; d < demos.size(); ++d) {
    const Demonstration& demo = demos[d];
    const Frame f = demo.frame(frame_id);
    const std::vector<double> progress = annotate_progress(demo);
    for (int s = 1; s < static_cast<int>(demo.steps.size()); ++s) {
      LocalRecord r;
      r.local_ee = to_local(demo.steps[s].ee, f);
      r.local_condition = to_local(demo.steps[s - 1].ee, f);
      r.progress = progress[s];
      r.skill = demo.skill_of(s);
      r.demo = static_cast<int>(d);
      r.step = s;
      ds.records.push_back(r);
    }
  }
  return ds;
}

std::vector<int> segment_by_gripper(const Demonstration& demo, double threshold) {
  std::vector<int> splits;
  for (std::size_t s = 1; s < demo.steps.size(); ++s) {
    const bool before = demo.steps[s - 1].gripper >= threshold;
    const bool now = demo.steps[s].gripper >= threshold;
    if (before != now) splits.push_back(static_cast<int>(s));
  }
  return splits;
}

int progress_bin(double progress, int bins) {
  // Tolerance keeps labels like 3/10 in bin 2 despite rounding.
  const int b = static_cast<int>(std::ceil(progress * bins - 1e-9)) - 1;
  return std::clamp(b, 0, bins - 1);
}

const TrajectoryBin& GaussianTrajectoryModel::at(int skill, double progress) const {
  if (skill < 0 || skill >= static_cast<int>(skills.size())) throw std::out_of_range("skill index out of range");
  return skills[skill][progress_bin(progress, bins())];
}

namespace {

TrajectoryBin fit_bin(std::span<const Pose> poses) {
  const double n = static_cast<double>(poses.size());
  TrajectoryBin bin;
  std::vector<Vec6> w(poses.size(), Vec6::Ones());
  bin.mean = weighted_geodesic_mean(poses, w);
  // Karcher refinement of the orientation so log coordinates are centred.
  for (int it = 0; it < 4; ++it) {
    Vec3 delta = Vec3::Zero();
    for (const Pose& p : poses) delta += spatial_log(bin.mean.orientation, p.orientation);
    bin.mean.orientation = canonical(rotation_exp(delta / n) * bin.mean.orientation);
  }
  Vec6 var = Vec6::Zero();
  for (const Pose& p : poses) {
    var.head<3>() += (p.position - bin.mean.position).cwiseAbs2();
    var.tail<3>() += spatial_log(bin.mean.orientation, p.orientation).cwiseAbs2();
  }
  bin.variance = (var / n).cwiseMax(kVarianceFloor);
  return bin;
}

}  // namespace

GaussianTrajectoryModel fit_gaussian_trajectory(const LocalDataset& ds, int bins) {
  if (bins < 2) throw std::invalid_argument("Gaussian trajectory model needs at least 2 bins");
  if (ds.records.empty()) throw std::invalid_argument("empty dataset");
  int skills = 0;
  for (const auto& r : ds.records) skills = std::max(skills, r.skill + 1);

  GaussianTrajectoryModel model;
  model.frame_id = ds.frame_id;
  model.skills.resize(skills);
  for (int k = 0; k < skills; ++k) {
    std::vector<std::vector<Pose>> grouped(bins);
    for (const auto& r : ds.records) {
      if (r.skill == k) grouped[progress_bin(r.progress, bins)].push_back(r.local_ee);
    }
    std::vector<int> filled;
    for (int b = 0; b < bins; ++b) {
      if (!grouped[b].empty()) filled.push_back(b);
    }
    if (filled.empty()) throw std::invalid_argument("skill " + std::to_string(k) + " has no records");
    auto& out = model.skills[k];
    out.resize(bins);
    for (int b : filled) out[b] = fit_bin(grouped[b]);
    for (int b = 0; b < bins; ++b) {
      if (!grouped[b].empty()) continue;
      // Nearest filled bin; ties go to the earlier bin.
      int best = filled.front();
      for (int c : filled) {
        if (std::abs(c - b) < std::abs(best - b)) best = c;
      }
      out[b] = out[best];
    }
  }
  return model;
}

Frame orient_frame(const Frame& f, const Pose& ee) {
  const Vec3 d = ee.position - f.pose.position;
  const double len = d.norm();
  if (!(len > 1e-12)) throw GeometryError("degenerate orientation");
  const Vec3 x = d / len;
  Vec3 up = Vec3::UnitZ();
  Vec3 z = up - up.dot(x) * x;
  if (z.norm() < 1e-9) {
    up = Vec3::UnitY();
    z = up - up.dot(x) * x;
  }
  z.normalize();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  Frame out = f;
  out.pose.orientation = canonical(Quat(r));
  return out;
}

}  // namespace msg
