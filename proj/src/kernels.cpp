#include "msg/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace msg {

namespace {

void check_batch(const nn::Network& net, const TrainBatch& b) {
  const auto& a = net.arch();
  const Eigen::Index n = b.inputs.cols();
  if (n == 0) throw std::invalid_argument("empty training batch");
  if (b.inputs.rows() != a.input_dim() || b.velocity.rows() != a.velocity_dim || b.velocity.cols() != n ||
      b.progress.cols() != n || (a.logvar_dim > 0 && (b.logvar.rows() != a.logvar_dim || b.logvar.cols() != n))) {
    throw std::invalid_argument("training batch does not match the network");
  }
}

// Loss and gradient (not divided by the batch size) for columns [begin, end).
LossTerms block_terms(const nn::Network& net, const TrainBatch& b, const LossWeights& w, Eigen::Index begin,
                      Eigen::Index end, std::span<double> grad) {
  const Eigen::Index n = end - begin;
  const int lv = net.arch().logvar_dim;
  nn::ForwardCache cache;
  const nn::Outputs out = nn::forward(net, b.inputs.middleCols(begin, n), &cache);

  nn::OutputAdjoint adj;
  adj.velocity = out.velocity - b.velocity.middleCols(begin, n);
  adj.progress = out.progress - b.progress.middleCols(begin, n);
  if (lv > 0) adj.logvar = out.logvar - b.logvar.middleCols(begin, n);
  else adj.logvar.resize(0, n);

  LossTerms t;
  t.velocity = adj.velocity.squaredNorm();
  t.progress = adj.progress.squaredNorm();
  t.logvar = lv > 0 ? adj.logvar.squaredNorm() : 0.0;
  t.total = w.velocity * t.velocity + w.progress * t.progress + w.logvar * t.logvar;

  adj.velocity *= 2.0 * w.velocity;
  adj.progress *= 2.0 * w.progress;
  adj.logvar *= 2.0 * w.logvar;
  nn::gradient(net, cache, adj, grad);
  return t;
}

void add(LossTerms& acc, const LossTerms& t) {
  acc.total += t.total;
  acc.velocity += t.velocity;
  acc.progress += t.progress;
  acc.logvar += t.logvar;
}

LossTerms finish(LossTerms t, std::span<double> grad, Eigen::Index n) {
  const double inv = 1.0 / static_cast<double>(n);
  for (double& g : grad) g *= inv;
  t.total *= inv;
  t.velocity *= inv;
  t.progress *= inv;
  t.logvar *= inv;
  return t;
}

}  // namespace

LossTerms loss_and_gradient_serial(const nn::Network& net, const TrainBatch& batch, const LossWeights& weights,
                                   std::span<double> grad) {
  check_batch(net, batch);
  if (grad.size() != net.size()) throw std::invalid_argument("gradient buffer has wrong size");
  std::fill(grad.begin(), grad.end(), 0.0);
  LossTerms acc;
  for (Eigen::Index j = 0; j < batch.inputs.cols(); ++j) add(acc, block_terms(net, batch, weights, j, j + 1, grad));
  return finish(acc, grad, batch.inputs.cols());
}

LossTerms loss_and_gradient_parallel(const nn::Network& net, const TrainBatch& batch, const LossWeights& weights,
                                     std::span<double> grad) {
  check_batch(net, batch);
  if (grad.size() != net.size()) throw std::invalid_argument("gradient buffer has wrong size");
  const Eigen::Index n = batch.inputs.cols();
  const int blocks = static_cast<int>((n + kKernelBlock - 1) / kKernelBlock);
  const std::size_t p = net.size();
  std::vector<double> block_grad(static_cast<std::size_t>(blocks) * p, 0.0);
  std::vector<LossTerms> block_loss(static_cast<std::size_t>(blocks));

#pragma omp parallel for schedule(static)
  for (int k = 0; k < blocks; ++k) {
    const Eigen::Index begin = static_cast<Eigen::Index>(k) * kKernelBlock;
    const Eigen::Index end = std::min<Eigen::Index>(n, begin + kKernelBlock);
    block_loss[k] = block_terms(net, batch, weights, begin, end,
                                std::span<double>(block_grad.data() + static_cast<std::size_t>(k) * p, p));
  }

  std::fill(grad.begin(), grad.end(), 0.0);
  LossTerms acc;
  for (int k = 0; k < blocks; ++k) {
    add(acc, block_loss[k]);
    const double* g = block_grad.data() + static_cast<std::size_t>(k) * p;
    for (std::size_t i = 0; i < p; ++i) grad[i] += g[i];
  }
  return finish(acc, grad, n);
}

LossTerms loss_and_gradient(const nn::Network& net, const TrainBatch& batch, const LossWeights& weights,
                            std::span<double> grad, Execution exec) {
  return exec == Execution::kSerial ? loss_and_gradient_serial(net, batch, weights, grad)
                                    : loss_and_gradient_parallel(net, batch, weights, grad);
}

}  // namespace msg
