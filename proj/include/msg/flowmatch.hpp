#pragma once

// Single-stream conditional flow matching on a StateSpace.
//
// Interpolant: z(0) is the prior draw, z(1) the data point. The regression
// target for the velocity is the constant displacement carrying z0 to z1
// (geodesic for poses), so the ideal field transports the prior onto the data
// in unit time.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "msg/kernels.hpp"
#include "msg/nn.hpp"
#include "msg/random.hpp"
#include "msg/state_space.hpp"
#include "msg/streams.hpp"

namespace msg {

enum class PriorKind { kStandard, kPoseCentric, kMixture };

std::string to_string(PriorKind k);
PriorKind prior_kind_from_string(const std::string& s);

struct Prior {
  PriorKind kind = PriorKind::kStandard;
  // Pose-centric: tangent Gaussian about the conditioning state.
  double sigma_position = 0.3;
  double sigma_rotation = 0.3;
  // Mixture: tangent Gaussians of scale `sigma` about each component.
  std::vector<VectorXd> components;
  std::vector<double> weights;
  double sigma = 1.0;

  static Prior standard() { return {}; }
  static Prior pose_centric(double sigma_position = 0.3, double sigma_rotation = 0.3);
  // Uniform weights when `weights` is empty.
  static Prior mixture(std::vector<VectorXd> components, double sigma = 1.0, std::vector<double> weights = {});

  void validate() const;
  nlohmann::json to_json() const;
  static Prior from_json(const nlohmann::json& j);
};

// `anchor` is the conditioning state; required for pose-centric priors.
VectorXd sample_prior(const Prior& prior, const StateSpace& space, const VectorXd* anchor, Rng& rng);

VectorXd interpolant(const StateSpace& space, const VectorXd& z0, const VectorXd& z1, double t);

struct FlowExample {
  VectorXd target;
  VectorXd condition;  // conditioning state; also the pose-centric prior anchor
  double progress = 1.0;
  VectorXd logvar;   // empty when there is no logvar supervision
  VectorXd context;  // extra raw conditioning features (global-frame baseline)
};

struct FlowDataset {
  StateSpace space = StateSpace::pose();
  std::vector<FlowExample> examples;
};

// Records of one skill. logvar_dim 6 uses the per-dimension bin variance,
// 2 the mean over position and orientation groups, 0 none.
FlowDataset make_flow_dataset(const LocalDataset& ds, int skill, const GaussianTrajectoryModel* gtm,
                              int logvar_dim);

struct FlowModel {
  nn::Network net;
  Prior prior;
  StateSpace space = StateSpace::pose();
  bool conditioned = true;
  int context_dim = 0;

  int logvar_dim() const { return net.arch().logvar_dim; }
  nn::Prediction predict(const VectorXd& z, const VectorXd& condition, double t,
                         const VectorXd& context = {}) const;
  // Writes one network input column: [state | condition | context | time].
  void input_column(const VectorXd& z, const VectorXd& condition, double t, const VectorXd& context,
                    double* out) const;
};

struct TrainConfig {
  int epochs = 300;
  int batch_size = 256;
  int steps_per_epoch = 0;  // 0: ceil(dataset size / batch size)
  double learning_rate = 1e-3;
  double final_lr_scale = 1.0;  // cosine decay target as a fraction of learning_rate
  // Std of a fresh tangent perturbation of the conditioning state per draw;
  // the prior anchor moves with it.
  double condition_noise = 0.0;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {128, 128, 128};
  nn::Activation activation = nn::Activation::kSilu;
  LossWeights loss_weights;
  Execution execution = Execution::kParallel;

  void validate() const;
  nlohmann::json to_json() const;
  // Fields absent from `j` keep their value in `base`.
  static TrainConfig from_json(const nlohmann::json& j, TrainConfig base);
};

FlowModel make_model(const StateSpace& space, bool conditioned, int logvar_dim, const Prior& prior,
                     const TrainConfig& config, int context_dim = 0);

// One training draw: example index, conditioning state, prior sample and flow time.
struct FlowDraw {
  std::size_t index = 0;
  VectorXd condition;  // empty: the example's own condition
  VectorXd z0;
  double t = 0.0;
};

std::vector<FlowDraw> draw_batch(const FlowModel& model, const FlowDataset& data, int batch_size, Rng& rng,
                                 double condition_noise = 0.0);
TrainBatch build_batch(const FlowModel& model, const FlowDataset& data, std::span<const FlowDraw> draws);

// Batch-mean loss; overwrites `grad`. Throws std::runtime_error on a non-finite loss.
LossTerms cfm_loss(const FlowModel& model, const FlowDataset& data, std::span<const FlowDraw> draws,
                   std::span<double> grad, const LossWeights& weights = {}, Execution exec = Execution::kParallel);

struct EpochLoss {
  int epoch = 0;
  LossTerms terms;
};

struct TrainResult {
  FlowModel model;
  std::vector<EpochLoss> curve;
};

// Throws nn::DivergedError naming the epoch on divergence.
TrainResult train(FlowModel model, const FlowDataset& data, const TrainConfig& config);

std::string loss_curve_csv(std::span<const EpochLoss> curve);

struct IntegrateResult {
  VectorXd state;
  double progress = 0.0;
  VectorXd logvar;  // head outputs from the last velocity evaluation
};

// Explicit Euler with `steps` uniform steps from t = 0 to 1.
IntegrateResult integrate(const FlowModel& model, const VectorXd& z0, const VectorXd& condition, int steps,
                          const VectorXd& context = {});

void save_model(const FlowModel& model, const std::filesystem::path& path, const nlohmann::json& extra = {});
FlowModel load_model(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace msg
