#pragma once

// Batched loss/gradient kernels for flow-matching training.
//
// Both variants compute the same quantity: the batch mean of
//   w_v |v - v*|^2 + w_p (p - p*)^2 + w_l |l - l*|^2
// and its parameter gradient. The serial variant is the reference; the
// parallel variant splits the batch into fixed blocks and reduces the block
// gradients in block order, so its result does not depend on thread count.

#include <span>

#include <Eigen/Core>

#include "msg/nn.hpp"

namespace msg {

enum class Execution { kSerial, kParallel };

struct LossWeights {
  double velocity = 1.0;
  double progress = 0.1;
  double logvar = 0.1;
};

// Column j holds example j.
struct TrainBatch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd velocity;
  Eigen::RowVectorXd progress;
  Eigen::MatrixXd logvar;  // empty when the network has no logvar head
};

struct LossTerms {
  double total = 0.0;
  double velocity = 0.0;
  double progress = 0.0;
  double logvar = 0.0;
};

inline constexpr int kKernelBlock = 64;

// Overwrites `grad` with the gradient of the batch-mean loss.
LossTerms loss_and_gradient(const nn::Network& net, const TrainBatch& batch, const LossWeights& weights,
                            std::span<double> grad, Execution exec);

LossTerms loss_and_gradient_serial(const nn::Network& net, const TrainBatch& batch, const LossWeights& weights,
                                   std::span<double> grad);
LossTerms loss_and_gradient_parallel(const nn::Network& net, const TrainBatch& batch, const LossWeights& weights,
                                     std::span<double> grad);

}  // namespace msg
