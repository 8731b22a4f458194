#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "msg/flowmatch.hpp"
#include "msg/tasks.hpp"

using namespace msg;
using namespace msg::test;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 0) {
  TrainConfig c;
  c.epochs = 5;
  c.steps_per_epoch = 4;
  c.batch_size = 16;
  c.hidden = {8, 8};
  c.seed = seed;
  return c;
}

FlowDataset single_point(const StateSpace& space, const VectorXd& target, const VectorXd& condition,
                         const VectorXd& logvar = {}) {
  FlowDataset d;
  d.space = space;
  d.examples.push_back({target, condition, 1.0, logvar, {}});
  return d;
}

}  // namespace

TEST_SUITE("flowmatch") {
  TEST_CASE("prior validation") {
    CHECK_NOTHROW(Prior::pose_centric(0.0, 0.0).validate());
    CHECK_THROWS(Prior::pose_centric(-1.0, 0.3).validate());
    Prior bad = Prior::mixture({VectorXd::Zero(2)});
    bad.weights = {0.5};
    CHECK_THROWS(bad.validate());
    CHECK_THROWS(Prior::mixture({}).validate());
  }

  TEST_CASE("degenerate pose-centric prior returns the conditioning pose") {
    Rng rng(1);
    const StateSpace space = StateSpace::pose();
    const VectorXd anchor = StateSpace::from_pose(random_pose(rng));
    const VectorXd z = sample_prior(Prior::pose_centric(0.0, 0.0), space, &anchor, rng);
    CHECK((z - anchor).norm() < 1e-15);
    CHECK_THROWS(sample_prior(Prior::pose_centric(), space, nullptr, rng));
  }

  TEST_CASE("standard prior has zero mean") {
    Rng rng(2);
    const StateSpace space = StateSpace::euclidean(2);
    VectorXd mean = VectorXd::Zero(2);
    const int n = 100000;
    for (int i = 0; i < n; ++i) mean += sample_prior(Prior::standard(), space, nullptr, rng);
    CHECK((mean / n).norm() < 0.02);

    const StateSpace pose = StateSpace::pose();
    Vec3 pmean = Vec3::Zero();
    for (int i = 0; i < n; ++i) pmean += sample_prior(Prior::standard(), pose, nullptr, rng).head<3>();
    CHECK((pmean / n).norm() < 0.02);
  }

  TEST_CASE("single identity component mixture matches the standard prior") {
    const StateSpace space = StateSpace::euclidean(2);
    const Prior mix = Prior::mixture({VectorXd::Zero(2)}, 1.0);
    Rng a(3);
    Rng b(4);
    const int n = 100000;
    VectorXd ma = VectorXd::Zero(2), mb = VectorXd::Zero(2), va = VectorXd::Zero(2), vb = VectorXd::Zero(2);
    for (int i = 0; i < n; ++i) {
      const VectorXd x = sample_prior(Prior::standard(), space, nullptr, a);
      const VectorXd y = sample_prior(mix, space, nullptr, b);
      ma += x;
      mb += y;
      va += x.cwiseAbs2();
      vb += y.cwiseAbs2();
    }
    CHECK(((ma - mb) / n).norm() < 0.02);
    CHECK(((va - vb) / n).cwiseAbs().maxCoeff() < 0.03);
  }

  TEST_CASE("interpolant endpoints and midpoint") {
    const StateSpace e2 = StateSpace::euclidean(2);
    const VectorXd z0 = VectorXd::Zero(2);
    const VectorXd z1 = (VectorXd(2) << 2.0, 0.0).finished();
    CHECK((interpolant(e2, z0, z1, 0.0) - z0).norm() == 0.0);
    CHECK((interpolant(e2, z0, z1, 1.0) - z1).norm() == 0.0);
    CHECK((interpolant(e2, z0, z1, 0.5) - (VectorXd(2) << 1.0, 0.0).finished()).norm() < 1e-15);
    CHECK_THROWS(interpolant(e2, z0, z1, -0.1));

    Rng rng(5);
    const StateSpace pose = StateSpace::pose();
    const VectorXd a = StateSpace::from_pose(random_pose(rng));
    const VectorXd b = StateSpace::from_pose(random_pose(rng));
    CHECK(pose_distance(StateSpace::as_pose(interpolant(pose, a, b, 0.0)), StateSpace::as_pose(a)) < 1e-12);
    CHECK(pose_distance(StateSpace::as_pose(interpolant(pose, a, b, 1.0)), StateSpace::as_pose(b)) < 1e-12);
  }

  TEST_CASE("oracle predictors zero the velocity and logvar terms") {
    const StateSpace space = StateSpace::euclidean(2);
    const VectorXd target = (VectorXd(2) << 1.0, -0.5).finished();
    const VectorXd cond = (VectorXd(2) << 0.2, 0.1).finished();
    const VectorXd logvar = (VectorXd(2) << -1.0, 0.5).finished();
    const FlowModel m = constant_model(space, target - cond, logvar);
    const FlowDataset data = single_point(space, target, cond, logvar);
    Rng rng(6);
    const auto draws = draw_batch(m, data, 32, rng);
    std::vector<double> grad(m.net.size());
    const LossTerms t = cfm_loss(m, data, draws, grad);
    CHECK(t.velocity < 1e-24);
    CHECK(t.logvar < 1e-24);
  }

  TEST_CASE("cfm_loss gradient matches finite differences") {
    Rng rng(7);
    const Toy toy = make_toy("gaussian-2d");
    FlowDataset data = toy_dataset(toy, 0, 64, 8);
    FlowModel m = make_model(data.space, true, 2, Prior::standard(), tiny_config());
    for (auto& e : data.examples) e.logvar = standard_normal(2, rng);
    for (double& p : m.net.params()) p += 0.1 * standard_normal(1, rng)[0];
    const auto draws = draw_batch(m, data, 16, rng);
    std::vector<double> grad(m.net.size());
    cfm_loss(m, data, draws, grad);
    std::vector<double> scratch(m.net.size());
    double err = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < m.net.size(); ++i) {
      const double keep = m.net.params()[i];
      m.net.params()[i] = keep + 1e-5;
      const double up = cfm_loss(m, data, draws, scratch).total;
      m.net.params()[i] = keep - 1e-5;
      const double down = cfm_loss(m, data, draws, scratch).total;
      m.net.params()[i] = keep;
      const double fd = (up - down) / 2e-5;
      err += (fd - grad[i]) * (fd - grad[i]);
      norm += fd * fd;
    }
    CHECK(std::sqrt(err / norm) < 1e-4);
  }

  TEST_CASE("non-finite loss throws and training reports the epoch") {
    const StateSpace space = StateSpace::euclidean(2);
    FlowModel m = make_model(space, true, 0, Prior::standard(), tiny_config());
    m.net.params()[0] = std::nan("");
    const FlowDataset data = single_point(space, VectorXd::Ones(2), VectorXd::Zero(2));
    Rng rng(9);
    const auto draws = draw_batch(m, data, 4, rng);
    std::vector<double> grad(m.net.size());
    CHECK_THROWS_AS(cfm_loss(m, data, draws, grad), std::runtime_error);
    CHECK_THROWS_WITH_AS(train(m, data, tiny_config()), doctest::Contains("epoch 0"), nn::DivergedError);
  }

  TEST_CASE("training is deterministic under a fixed seed") {
    const Toy toy = make_toy("gaussian-2d");
    const FlowDataset data = toy_dataset(toy, 0, 128, 3);
    const FlowModel m = make_model(data.space, false, 0, Prior::standard(), tiny_config(11));
    const TrainResult a = train(m, data, tiny_config(11));
    const TrainResult b = train(m, data, tiny_config(11));
    const auto pa = a.model.net.params();
    const auto pb = b.model.net.params();
    CHECK(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end()));
    CHECK(a.curve.size() == 5);
    CHECK_THROWS(train(m, FlowDataset{StateSpace::euclidean(2), {}}, tiny_config()));
  }

  TEST_CASE("single datapoint with a degenerate prior is reproduced") {
    Rng rng(12);
    const StateSpace space = StateSpace::pose();
    const VectorXd cond = StateSpace::from_pose(planar_pose(0.1, 0.2, 0.3, 0.1));
    const VectorXd target = StateSpace::from_pose(planar_pose(0.15, 0.22, 0.35, 0.12));
    const FlowDataset data = single_point(space, target, cond);
    TrainConfig c = tiny_config(13);
    c.epochs = 400;
    c.steps_per_epoch = 1;
    c.batch_size = 32;
    c.learning_rate = 3e-3;
    c.hidden = {32, 32};
    const FlowModel m0 = make_model(space, true, 0, Prior::pose_centric(0.0, 0.0), c);
    const TrainResult tr = train(m0, data, c);
    const VectorXd z0 = sample_prior(tr.model.prior, space, &cond, rng);
    const IntegrateResult r = integrate(tr.model, z0, cond, 10);
    CHECK(space.position_error(r.state, target) < 1e-2);
    CHECK(space.rotation_error(r.state, target) < 1e-2);
  }

  TEST_CASE("Gaussian target training loss decreases") {
    const Toy toy = make_toy("gaussian-2d");
    TrainConfig c = toy_train_config();
    c.seed = 14;
    const FlowDataset data = toy_dataset(toy, 0, 2048, c.seed);
    FlowModel m = make_model(data.space, false, 0, Prior::standard(), c);
    const TrainResult tr = train(m, data, c);
    // Block means of the per-epoch loss.
    std::vector<double> blocks;
    const int width = 40;
    for (std::size_t b = 0; b + width <= tr.curve.size(); b += width) {
      double s = 0.0;
      for (int i = 0; i < width; ++i) s += tr.curve[b + i].terms.total;
      blocks.push_back(s / width);
    }
    REQUIRE(blocks.size() >= 4);
    for (std::size_t i = 1; i < blocks.size(); ++i) CHECK(blocks[i] <= blocks[i - 1] * 1.02);
    CHECK(blocks.back() < blocks.front());
  }

  TEST_CASE("integrate on fixed fields") {
    const StateSpace pose = StateSpace::pose();
    Rng rng(15);
    const VectorXd z0 = StateSpace::from_pose(random_pose(rng));
    const FlowModel zero = constant_model(pose, VectorXd::Zero(6));
    CHECK((integrate(zero, z0, z0, 10).state - z0).norm() == 0.0);

    VectorXd unit_x = VectorXd::Zero(6);
    unit_x[0] = 1.0;
    const FlowModel shift = constant_model(pose, unit_x);
    const VectorXd origin = pose.origin();
    for (int steps : {1, 10, 37}) {
      const VectorXd z1 = integrate(shift, origin, origin, steps).state;
      CHECK((z1.head<3>() - Vec3(1, 0, 0)).norm() < 1e-12);
    }
    VectorXd spin = VectorXd::Zero(6);
    spin.tail<3>() = Vec3(0.3, -2.0, 1.1);
    const FlowModel spinning = constant_model(pose, spin);
    const VectorXd z = integrate(spinning, z0, z0, 100).state;
    CHECK(std::abs(z.segment<4>(3).norm() - 1.0) < 1e-9);
    CHECK_THROWS(integrate(zero, z0, z0, 0));
  }

  TEST_CASE("checkpoint keeps the prior and state space") {
    const Prior prior = Prior::mixture({VectorXd::Zero(2), VectorXd::Ones(2)}, 0.5, {0.25, 0.75});
    const FlowModel m = make_model(StateSpace::euclidean(2), false, 2, prior, tiny_config(16));
    const auto path = std::filesystem::temp_directory_path() / "msg_test_flow.ckpt";
    save_model(m, path, {{"frame", "a"}});
    nlohmann::json extra;
    const FlowModel back = load_model(path, &extra);
    CHECK(extra.at("frame") == "a");
    CHECK(back.space == m.space);
    CHECK(back.conditioned == m.conditioned);
    CHECK(back.prior.kind == PriorKind::kMixture);
    CHECK(back.prior.weights == prior.weights);
    CHECK(back.prior.sigma == prior.sigma);
    CHECK((back.prior.components[1] - prior.components[1]).norm() == 0.0);
    std::filesystem::remove(path);
  }

  TEST_CASE("loss curve CSV has the documented columns") {
    std::vector<EpochLoss> curve = {{0, {1.5, 1.0, 0.25, 0.25}}};
    CHECK(loss_curve_csv(curve) == "epoch,loss,velocity,progress,logvar\n0,1.5,1,0.25,0.25\n");
  }

  TEST_CASE("predicted log variance tracks the trajectory model") {
    const TaskSpec spec = task_spec("reach");
    const auto demos = generate_demos(spec, 10, 17);
    const LocalDataset ds = to_local_dataset(demos, "goal");
    const int bins = 10;
    const GaussianTrajectoryModel gtm = fit_gaussian_trajectory(ds, bins);
    const FlowDataset data = make_flow_dataset(ds, 0, &gtm, 6);
    TrainConfig c = desk_train_config();
    c.seed = 17;
    const TrainResult tr = train(make_model(StateSpace::pose(), true, 6, Prior::pose_centric(), c), data, c);

    std::vector<VectorXd> sum(bins, VectorXd::Zero(6));
    std::vector<int> count(bins, 0);
    Rng rng(18);
    for (const auto& e : data.examples) {
      const VectorXd z0 = sample_prior(tr.model.prior, data.space, &e.condition, rng);
      const IntegrateResult r = integrate(tr.model, z0, e.condition, 10);
      const int b = progress_bin(e.progress, bins);
      sum[b] += r.logvar;
      ++count[b];
    }
    int good = 0;
    int total = 0;
    for (int b = 0; b < bins; ++b) {
      if (count[b] == 0) continue;
      ++total;
      const VectorXd predicted = sum[b] / count[b];
      const VectorXd reference = gtm.skills[0][b].variance.array().log().matrix();
      if ((predicted - reference).cwiseAbs().maxCoeff() <= std::log(3.0)) ++good;
    }
    MESSAGE("bins within a factor of 3: " << good << " of " << total);
    CHECK(good >= 0.8 * total);
  }
}
