#include "msg/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "msg/io_util.hpp"

namespace msg::nn {

namespace {

constexpr char kMagic[8] = {'M', 'S', 'G', 'N', 'E', 'T', '\0', '\0'};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void apply_activation(Activation act, const MatrixXd& pre, MatrixXd& out) {
  if (act == Activation::kTanh) {
    out = pre.array().tanh().matrix();
  } else {
    out = (pre.array() / (1.0 + (-pre.array()).exp())).matrix();
  }
}

// d act / d pre, multiplied into `delta`.
void scale_by_derivative(Activation act, const MatrixXd& pre, MatrixXd& delta) {
  if (act == Activation::kTanh) {
    delta.array() *= 1.0 - pre.array().tanh().square();
  } else {
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
    delta.array() *= s * (1.0 + pre.array() * (1.0 - s));
  }
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "silu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "silu") return Activation::kSilu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::size_t Architecture::parameter_count() const {
  std::size_t n = 0;
  int in = input_dim();
  for (int h : hidden) {
    n += static_cast<std::size_t>(h) * in + h;
    in = h;
  }
  n += static_cast<std::size_t>(output_dim()) * in + output_dim();
  return n;
}

void Architecture::validate() const {
  if (state_features <= 0 || velocity_dim <= 0 || condition_features < 0 || time_features < 0 ||
      logvar_dim < 0) {
    throw std::invalid_argument("invalid network dimensions");
  }
  if (time_features % 2 != 0) throw std::invalid_argument("time embedding needs an even feature count");
  for (int h : hidden) {
    if (h <= 0) throw std::invalid_argument("hidden widths must be positive");
  }
}

nlohmann::json Architecture::to_json() const {
  return {{"state_features", state_features}, {"condition_features", condition_features},
          {"time_features", time_features},   {"velocity_dim", velocity_dim},
          {"logvar_dim", logvar_dim},         {"hidden", hidden},
          {"activation", to_string(activation)}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  Architecture a;
  a.state_features = j.at("state_features").get<int>();
  a.condition_features = j.at("condition_features").get<int>();
  a.time_features = j.at("time_features").get<int>();
  a.velocity_dim = j.at("velocity_dim").get<int>();
  a.logvar_dim = j.at("logvar_dim").get<int>();
  a.hidden = j.at("hidden").get<std::vector<int>>();
  a.activation = activation_from_string(j.at("activation").get<std::string>());
  a.validate();
  return a;
}

Network::Network(Architecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  build_layout();
  params_.assign(arch_.parameter_count(), 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerView& layer = layers_[l];
    double limit = std::sqrt(6.0 / (layer.rows + layer.cols));
    if (l + 1 == layers_.size()) limit *= 0.1;
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (int i = 0; i < layer.rows * layer.cols; ++i) params_[layer.weight_offset + i] = dist(rng);
  }
}

void Network::build_layout() {
  layers_.clear();
  std::size_t offset = 0;
  int in = arch_.input_dim();
  auto add = [&](int out) {
    LayerView v{offset, offset + static_cast<std::size_t>(out) * in, out, in};
    layers_.push_back(v);
    offset = v.bias_offset + out;
    in = out;
  };
  for (int h : arch_.hidden) add(h);
  add(arch_.output_dim());
}

void Network::zero_output_layer() {
  const LayerView& last = layers_.back();
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(last.weight_offset),
            params_.begin() + static_cast<std::ptrdiff_t>(last.bias_offset + last.rows), 0.0);
}

VectorXd time_embedding(double t, int features) {
  VectorXd e(features);
  for (int i = 0; i < features / 2; ++i) {
    const double w = std::numbers::pi * static_cast<double>(1 << i);
    e[2 * i] = std::sin(w * t);
    e[2 * i + 1] = std::cos(w * t);
  }
  return e;
}

Outputs forward(const Network& net, const MatrixXd& inputs, ForwardCache* cache) {
  const Architecture& arch = net.arch();
  if (inputs.rows() != arch.input_dim()) {
    throw std::invalid_argument("network input has " + std::to_string(inputs.rows()) + " rows, expected " +
                                std::to_string(arch.input_dim()));
  }
  const auto& layers = net.layers();
  const double* p = net.params().data();
  if (cache) {
    cache->activations.resize(layers.size());
    cache->preactivations.resize(layers.size() - 1);
  }

  MatrixXd a = inputs;
  MatrixXd pre;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    Eigen::Map<const MatrixXd> w(p + layer.weight_offset, layer.rows, layer.cols);
    Eigen::Map<const VectorXd> b(p + layer.bias_offset, layer.rows);
    pre.noalias() = w * a;
    pre.colwise() += b;
    if (cache) cache->activations[l] = a;
    if (l + 1 == layers.size()) break;
    if (cache) cache->preactivations[l] = pre;
    apply_activation(arch.activation, pre, a);
  }

  Outputs out;
  out.velocity = pre.topRows(arch.velocity_dim);
  out.progress = pre.row(arch.velocity_dim).unaryExpr([](double x) { return logistic(x); });
  out.logvar = pre.bottomRows(arch.logvar_dim);
  if (cache) cache->progress = out.progress;
  return out;
}

Prediction forward(const Network& net, const VectorXd& state_features, const VectorXd& condition_features,
                   double t) {
  const Architecture& arch = net.arch();
  if (state_features.size() != arch.state_features || condition_features.size() != arch.condition_features) {
    throw std::invalid_argument("state/condition feature size does not match the network");
  }
  MatrixXd in(arch.input_dim(), 1);
  in.col(0) << state_features, condition_features, time_embedding(t, arch.time_features);
  Outputs o = forward(net, in);
  return {o.velocity.col(0), o.progress[0], o.logvar.col(0)};
}

void gradient(const Network& net, const ForwardCache& cache, const OutputAdjoint& adjoint, std::span<double> grad) {
  const Architecture& arch = net.arch();
  if (grad.size() != net.size()) throw std::invalid_argument("gradient buffer has wrong size");
  const auto& layers = net.layers();
  const Eigen::Index batch = cache.activations.front().cols();
  const double* p = net.params().data();

  MatrixXd delta(arch.output_dim(), batch);
  delta.topRows(arch.velocity_dim) = adjoint.velocity;
  delta.row(arch.velocity_dim) =
      adjoint.progress.array() * cache.progress.array() * (1.0 - cache.progress.array());
  delta.bottomRows(arch.logvar_dim) = adjoint.logvar;

  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    Eigen::Map<MatrixXd> gw(grad.data() + layer.weight_offset, layer.rows, layer.cols);
    Eigen::Map<VectorXd> gb(grad.data() + layer.bias_offset, layer.rows);
    gw.noalias() += delta * cache.activations[l].transpose();
    gb += delta.rowwise().sum();
    if (l == 0) break;
    Eigen::Map<const MatrixXd> w(p + layer.weight_offset, layer.rows, layer.cols);
    MatrixXd next = w.transpose() * delta;
    scale_by_derivative(arch.activation, cache.preactivations[l - 1], next);
    delta = std::move(next);
  }
}

void optimizer_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match parameters");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw DivergedError("diverged");
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    const double m_hat = s.m[i] / c1;
    const double v_hat = s.v[i] / c2;
    params[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
  }
}

namespace {

template <typename T>
void append_le(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void save(const Network& net, const std::filesystem::path& path, const nlohmann::json& metadata) {
  const nlohmann::json header = {{"architecture", net.arch().to_json()}, {"metadata", metadata}};
  const std::string header_text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  append_le<std::uint32_t>(out, kCheckpointVersion);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  append_le<std::uint64_t>(out, net.size());
  for (double v : net.params()) append_le<double>(out, v);
  write_file_atomic(path, out);
}

Network load(const std::filesystem::path& path, nlohmann::json* metadata) {
  const std::string in = read_file(path);
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a network checkpoint: " + path.string());
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = read_le<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = read_le<std::uint32_t>(in, pos);
  if (pos + header_len > in.size()) throw std::runtime_error("checkpoint truncated");
  const nlohmann::json header = nlohmann::json::parse(in.substr(pos, header_len));
  pos += header_len;

  Network net(Architecture::from_json(header.at("architecture")), 0);
  const auto count = read_le<std::uint64_t>(in, pos);
  if (count != net.size()) throw std::runtime_error("checkpoint parameter count does not match its architecture");
  for (double& v : net.params()) v = read_le<double>(in, pos);
  if (pos != in.size()) throw std::runtime_error("trailing bytes in checkpoint");
  if (metadata) *metadata = header.value("metadata", nlohmann::json::object());
  return net;
}

}  // namespace msg::nn
