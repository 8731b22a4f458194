#pragma once

// Small fully connected network with three heads sharing one trunk:
//   velocity  (linear)
//   progress  (logistic, in [0, 1])
//   logvar    (linear; clamp at use sites)
// Inputs are [state features | condition features | time embedding].
// Batched evaluation works on column-major matrices, one column per example.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace msg::nn {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

enum class Activation { kTanh, kSilu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct Architecture {
  int state_features = 0;
  int condition_features = 0;
  int time_features = 8;
  int velocity_dim = 0;
  int logvar_dim = 0;  // 0, 2 or 6 for poses; 0 or the state dim for toys
  std::vector<int> hidden = {128, 128, 128};
  Activation activation = Activation::kSilu;

  int input_dim() const { return state_features + condition_features + time_features; }
  int output_dim() const { return velocity_dim + 1 + logvar_dim; }
  std::size_t parameter_count() const;
  void validate() const;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  bool operator==(const Architecture&) const = default;
};

class Network {
 public:
  Network() = default;
  // Glorot-uniform weights, zero biases; the output layer is scaled down so
  // an untrained model starts close to the zero field.
  Network(Architecture arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_output_layer();

  // Offsets of layer l's weight matrix (rows x cols, column-major) and bias.
  struct LayerView {
    std::size_t weight_offset;
    std::size_t bias_offset;
    int rows;
    int cols;
  };
  const std::vector<LayerView>& layers() const { return layers_; }

 private:
  void build_layout();

  Architecture arch_;
  std::vector<double> params_;
  std::vector<LayerView> layers_;
};

VectorXd time_embedding(double t, int features);

struct Outputs {
  MatrixXd velocity;     // velocity_dim x batch
  RowVectorXd progress;  // 1 x batch, in [0, 1]
  MatrixXd logvar;       // logvar_dim x batch
};

struct ForwardCache {
  std::vector<MatrixXd> activations;  // input and every hidden post-activation
  std::vector<MatrixXd> preactivations;
  RowVectorXd progress;
};

// inputs: input_dim x batch. Throws std::invalid_argument on a row mismatch.
Outputs forward(const Network& net, const MatrixXd& inputs, ForwardCache* cache = nullptr);

struct Prediction {
  VectorXd velocity;
  double progress = 0.0;
  VectorXd logvar;
};

// Single example; state/condition are feature vectors.
Prediction forward(const Network& net, const VectorXd& state_features, const VectorXd& condition_features,
                   double t);

// d(loss)/d(outputs), with the progress adjoint taken w.r.t. the squashed value.
struct OutputAdjoint {
  MatrixXd velocity;
  RowVectorXd progress;
  MatrixXd logvar;
};

// Accumulates d(loss)/d(params) into `grad` (size = parameter count).
void gradient(const Network& net, const ForwardCache& cache, const OutputAdjoint& adjoint, std::span<double> grad);

class DivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double lr) : m(n, 0.0), v(n, 0.0), learning_rate(lr) {}
};

// Throws DivergedError("diverged") on a non-finite gradient.
void optimizer_step(AdamState& state, std::span<double> params, std::span<const double> grads);

// Checkpoint: magic, version, JSON header (architecture + caller metadata),
// parameter count, little-endian float64 parameters.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save(const Network& net, const std::filesystem::path& path, const nlohmann::json& metadata = {});
Network load(const std::filesystem::path& path, nlohmann::json* metadata = nullptr);

}  // namespace msg::nn
