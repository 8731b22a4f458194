#include <numbers>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "msg/streams.hpp"

using namespace msg;
using namespace msg::test;

namespace {

// Straight line along x with a fixed yaw; one step per 0.1.
Demonstration line_demo(int steps, double y_offset = 0.0, double yaw = 0.3) {
  Demonstration d;
  for (int i = 0; i < steps; ++i) {
    DemoStep s;
    s.ee = planar_pose(0.1 * i, y_offset, yaw, 0.2);
    d.steps.push_back(s);
  }
  d.frames["world"] = Pose::identity();
  d.frames["goal"] = d.steps.back().ee;
  return d;
}

}  // namespace

TEST_SUITE("streams") {
  TEST_CASE("demonstration validation") {
    Demonstration d = line_demo(1);
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d = line_demo(6);
    d.skill_splits = {3, 3};
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d.skill_splits = {6};
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d.skill_splits = {2, 4};
    CHECK_NOTHROW(d.validate());
    CHECK(d.skill_count() == 3);
    CHECK(d.skill_of(0) == 0);
    CHECK(d.skill_of(2) == 1);
    CHECK(d.skill_of(5) == 2);
  }

  TEST_CASE("to_local_dataset in the identity frame keeps global poses") {
    const std::vector<Demonstration> demos = {line_demo(5)};
    const LocalDataset ds = to_local_dataset(demos, "world");
    REQUIRE(ds.records.size() == 4);
    for (const auto& r : ds.records) {
      CHECK(pose_distance(r.local_ee, demos[0].steps[r.step].ee) < 1e-15);
      CHECK(pose_distance(r.local_condition, demos[0].steps[r.step - 1].ee) < 1e-15);
    }
  }

  TEST_CASE("to_local_dataset is lossless") {
    Rng rng(1);
    Demonstration d = line_demo(8);
    d.frames["f"] = random_pose(rng);
    const std::vector<Demonstration> demos = {d};
    const LocalDataset ds = to_local_dataset(demos, "f");
    for (const auto& r : ds.records) {
      CHECK(pose_distance(to_global(r.local_ee, d.frame("f")), d.steps[r.step].ee) < 1e-9);
    }
  }

  TEST_CASE("frame at the demo goal maps the final pose to identity") {
    const std::vector<Demonstration> demos = {line_demo(7)};
    const LocalDataset ds = to_local_dataset(demos, "goal");
    CHECK(pose_distance(ds.records.back().local_ee, Pose::identity()) < 1e-12);
  }

  TEST_CASE("missing frame throws") {
    const std::vector<Demonstration> demos = {line_demo(3)};
    CHECK_THROWS_AS(to_local_dataset(demos, "nowhere"), std::invalid_argument);
  }

  TEST_CASE("progress labels") {
    Demonstration d = line_demo(4);
    auto p = annotate_progress(d);
    CHECK(p[1] == 0.5);
    CHECK(p[0] == 0.25);
    CHECK(p[3] == 1.0);
    d = line_demo(9);
    d.skill_splits = {4};
    p = annotate_progress(d);
    CHECK(p[3] == 1.0);
    CHECK(p[4] == doctest::Approx(0.2));
    CHECK(p[8] == 1.0);
  }

  TEST_CASE("progress labels do not depend on the frame") {
    Rng rng(2);
    Demonstration d = line_demo(6);
    d.skill_splits = {3};
    d.frames["f"] = random_pose(rng);
    const std::vector<Demonstration> demos = {d};
    const LocalDataset a = to_local_dataset(demos, "world");
    const LocalDataset b = to_local_dataset(demos, "f");
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      CHECK(a.records[i].progress == b.records[i].progress);
      CHECK(a.records[i].skill == b.records[i].skill);
    }
  }

  TEST_CASE("segment_by_gripper") {
    Demonstration d = line_demo(10);
    CHECK(segment_by_gripper(d).empty());
    for (int i = 4; i < 10; ++i) d.steps[i].gripper = 1.0;
    CHECK(segment_by_gripper(d) == std::vector<int>{4});
    for (int i = 7; i < 10; ++i) d.steps[i].gripper = 0.0;
    CHECK(segment_by_gripper(d) == std::vector<int>{4, 7});
  }

  TEST_CASE("identical demos give floor variances") {
    const std::vector<Demonstration> demos = {line_demo(10), line_demo(10)};
    const auto gtm = fit_gaussian_trajectory(to_local_dataset(demos, "world"), 10);
    CHECK(gtm.bins() == 10);
    for (const auto& bin : gtm.skills[0]) {
      for (int k = 0; k < 6; ++k) CHECK(bin.variance[k] == kVarianceFloor);
    }
  }

  TEST_CASE("demos offset in one axis give the sample variance in that axis") {
    const double d = 0.05;
    const std::vector<Demonstration> demos = {line_demo(10, d), line_demo(10, -d)};
    const auto gtm = fit_gaussian_trajectory(to_local_dataset(demos, "world"), 10);
    for (const auto& bin : gtm.skills[0]) {
      CHECK(bin.variance[1] == doctest::Approx(d * d).epsilon(1e-9));
      CHECK(bin.variance[0] == kVarianceFloor);
      for (int k = 2; k < 6; ++k) CHECK(bin.variance[k] == kVarianceFloor);
    }
  }

  TEST_CASE("single-demo bin means reproduce the binned poses") {
    const std::vector<Demonstration> demos = {line_demo(10)};
    const LocalDataset ds = to_local_dataset(demos, "world");
    const auto gtm = fit_gaussian_trajectory(ds, 10);
    for (const auto& r : ds.records) {
      CHECK(pose_distance(gtm.at(0, r.progress).mean, r.local_ee) < 1e-9);
    }
  }

  TEST_CASE("variances are translation invariant") {
    std::vector<Demonstration> demos = {line_demo(11, 0.02, 0.2), line_demo(11, -0.03, 0.4), line_demo(11, 0.0, 0.1)};
    for (auto& d : demos) d.frames["shifted"] = planar_pose(1.5, -2.0, 0.0, 0.7);
    const auto a = fit_gaussian_trajectory(to_local_dataset(demos, "world"), 4);
    const auto b = fit_gaussian_trajectory(to_local_dataset(demos, "shifted"), 4);
    for (int i = 0; i < 4; ++i) CHECK((a.skills[0][i].variance - b.skills[0][i].variance).norm() < 1e-12);
  }

  TEST_CASE("empty bins copy the nearest filled bin") {
    const std::vector<Demonstration> demos = {line_demo(3)};
    const auto gtm = fit_gaussian_trajectory(to_local_dataset(demos, "world"), 8);
    for (const auto& bin : gtm.skills[0]) CHECK(bin.variance.allFinite());
    CHECK_THROWS(fit_gaussian_trajectory(to_local_dataset(demos, "world"), 1));
  }

  TEST_CASE("orient_frame") {
    const Frame origin{Pose::identity(), "f"};
    Pose ee;
    ee.position = Vec3(2, 0, 0);
    Frame out = orient_frame(origin, ee);
    CHECK(quat_distance(out.pose.orientation, Quat::Identity()) < 1e-12);

    ee.position = Vec3(0, 1, 0);
    out = orient_frame(origin, ee);
    const Mat3 r = out.pose.orientation.toRotationMatrix();
    CHECK((r.col(0) - Vec3(0, 1, 0)).norm() < 1e-12);
    CHECK((out.pose.position - origin.pose.position).norm() == 0.0);

    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const Frame f{random_pose(rng), "f"};
      const Pose e = random_pose(rng);
      const Mat3 m = orient_frame(f, e).pose.orientation.toRotationMatrix();
      CHECK((m.transpose() * m - Mat3::Identity()).norm() < 1e-9);
      CHECK((m.col(0) - (e.position - f.pose.position).normalized()).norm() < 1e-9);
    }
    ee.position = Vec3(0, 0, 3);
    CHECK_NOTHROW(orient_frame(origin, ee));
    CHECK_THROWS_WITH_AS(orient_frame(origin, Pose::identity()), "degenerate orientation", GeometryError);
  }
}
