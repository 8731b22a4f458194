#include "msg/flowmatch.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "msg/io_util.hpp"

namespace msg {

std::string to_string(PriorKind k) {
  switch (k) {
    case PriorKind::kStandard: return "standard";
    case PriorKind::kPoseCentric: return "pose-centric";
    case PriorKind::kMixture: return "mixture";
  }
  return "standard";
}

PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "standard") return PriorKind::kStandard;
  if (s == "pose-centric") return PriorKind::kPoseCentric;
  if (s == "mixture") return PriorKind::kMixture;
  throw std::invalid_argument("unknown prior '" + s + "' (expected standard, pose-centric or mixture)");
}

Prior Prior::pose_centric(double sigma_position, double sigma_rotation) {
  Prior p;
  p.kind = PriorKind::kPoseCentric;
  p.sigma_position = sigma_position;
  p.sigma_rotation = sigma_rotation;
  p.validate();
  return p;
}

Prior Prior::mixture(std::vector<VectorXd> components, double sigma, std::vector<double> weights) {
  Prior p;
  p.kind = PriorKind::kMixture;
  p.sigma = sigma;
  if (weights.empty()) weights.assign(components.size(), components.empty() ? 0.0 : 1.0 / components.size());
  p.components = std::move(components);
  p.weights = std::move(weights);
  p.validate();
  return p;
}

void Prior::validate() const {
  if (kind == PriorKind::kPoseCentric && !(sigma_position >= 0.0 && sigma_rotation >= 0.0)) {
    throw std::invalid_argument("pose-centric prior needs non-negative sigmas");
  }
  if (kind == PriorKind::kMixture) {
    if (components.empty() || components.size() != weights.size()) {
      throw std::invalid_argument("mixture prior needs at least one component and one weight per component");
    }
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("mixture weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("mixture sigma must be positive");
  }
}

nlohmann::json Prior::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}};
  if (kind == PriorKind::kPoseCentric) {
    j["sigma_position"] = sigma_position;
    j["sigma_rotation"] = sigma_rotation;
  } else if (kind == PriorKind::kMixture) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : components) comps.push_back(std::vector<double>(c.data(), c.data() + c.size()));
    j["components"] = comps;
    j["weights"] = weights;
    j["sigma"] = sigma;
  }
  return j;
}

Prior Prior::from_json(const nlohmann::json& j) {
  Prior p;
  p.kind = prior_kind_from_string(j.at("kind").get<std::string>());
  p.sigma_position = j.value("sigma_position", 0.3);
  p.sigma_rotation = j.value("sigma_rotation", 0.3);
  p.sigma = j.value("sigma", 1.0);
  if (j.contains("components")) {
    for (const auto& c : j.at("components")) {
      const auto v = c.get<std::vector<double>>();
      p.components.push_back(Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    p.weights = j.at("weights").get<std::vector<double>>();
  }
  p.validate();
  return p;
}

VectorXd sample_prior(const Prior& prior, const StateSpace& space, const VectorXd* anchor, Rng& rng) {
  switch (prior.kind) {
    case PriorKind::kStandard:
      return space.sample_around(space.origin(), 1.0, 1.0, rng);
    case PriorKind::kPoseCentric:
      if (anchor == nullptr) throw std::invalid_argument("pose-centric prior needs a conditioning state");
      return space.sample_around(*anchor, prior.sigma_position, prior.sigma_rotation, rng);
    case PriorKind::kMixture: {
      const double u = uniform(rng, 0.0, 1.0);
      std::size_t c = 0;
      double acc = prior.weights[0];
      while (u >= acc && c + 1 < prior.components.size()) acc += prior.weights[++c];
      return space.sample_around(prior.components[c], prior.sigma, prior.sigma, rng);
    }
  }
  throw std::logic_error("unreachable");
}

VectorXd interpolant(const StateSpace& space, const VectorXd& z0, const VectorXd& z1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("flow time outside [0, 1]");
  return space.interpolate(z0, z1, t);
}

FlowDataset make_flow_dataset(const LocalDataset& ds, int skill, const GaussianTrajectoryModel* gtm,
                              int logvar_dim) {
  if (logvar_dim != 0 && logvar_dim != 2 && logvar_dim != 6) throw std::invalid_argument("logvar dim must be 0, 2 or 6");
  if (logvar_dim > 0 && gtm == nullptr) throw std::invalid_argument("logvar supervision needs a trajectory model");
  FlowDataset out;
  out.space = StateSpace::pose();
  for (const auto& r : ds.records) {
    if (r.skill != skill) continue;
    FlowExample e;
    e.target = StateSpace::from_pose(r.local_ee);
    e.condition = StateSpace::from_pose(r.local_condition);
    e.progress = r.progress;
    if (logvar_dim > 0) {
      const Vec6 var = gtm->at(skill, r.progress).variance;
      if (logvar_dim == 6) {
        e.logvar = var.array().log().matrix();
      } else {
        e.logvar.resize(2);
        e.logvar << std::log(var.head<3>().mean()), std::log(var.tail<3>().mean());
      }
    }
    out.examples.push_back(std::move(e));
  }
  if (out.examples.empty()) throw std::invalid_argument("no records for skill " + std::to_string(skill));
  return out;
}

void FlowModel::input_column(const VectorXd& z, const VectorXd& condition, double t, const VectorXd& context,
                             double* out) const {
  const int fd = space.feature_dim();
  space.features(z, out);
  int offset = fd;
  if (conditioned) {
    space.features(condition, out + offset);
    offset += fd;
  }
  if (context.size() != context_dim) {
    throw std::invalid_argument("context has " + std::to_string(context.size()) + " entries, expected " +
                                std::to_string(context_dim));
  }
  for (int i = 0; i < context_dim; ++i) out[offset + i] = context[i];
  offset += context_dim;
  const VectorXd te = nn::time_embedding(t, net.arch().time_features);
  for (Eigen::Index i = 0; i < te.size(); ++i) out[offset + i] = te[i];
}

nn::Prediction FlowModel::predict(const VectorXd& z, const VectorXd& condition, double t,
                                 const VectorXd& context) const {
  Eigen::MatrixXd in(net.arch().input_dim(), 1);
  input_column(z, condition, t, context, in.data());
  const nn::Outputs o = nn::forward(net, in);
  return {o.velocity.col(0), o.progress[0], o.logvar.col(0)};
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || steps_per_epoch < 0) throw std::invalid_argument("training counts must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(condition_noise >= 0.0)) throw std::invalid_argument("condition_noise must be >= 0");
  if (!(final_lr_scale > 0.0 && final_lr_scale <= 1.0)) throw std::invalid_argument("final_lr_scale must be in (0, 1]");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"steps_per_epoch", steps_per_epoch},
          {"learning_rate", learning_rate},
          {"final_lr_scale", final_lr_scale},
          {"condition_noise", condition_noise},
          {"seed", seed},
          {"hidden", hidden},
          {"activation", nn::to_string(activation)},
          {"loss_weights", {{"velocity", loss_weights.velocity},
                            {"progress", loss_weights.progress},
                            {"logvar", loss_weights.logvar}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.final_lr_scale = j.value("final_lr_scale", c.final_lr_scale);
  c.condition_noise = j.value("condition_noise", c.condition_noise);
  c.seed = j.value("seed", c.seed);
  c.hidden = j.value("hidden", c.hidden);
  if (j.contains("activation")) c.activation = nn::activation_from_string(j.at("activation").get<std::string>());
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.loss_weights.velocity = w.value("velocity", c.loss_weights.velocity);
    c.loss_weights.progress = w.value("progress", c.loss_weights.progress);
    c.loss_weights.logvar = w.value("logvar", c.loss_weights.logvar);
  }
  c.validate();
  return c;
}

FlowModel make_model(const StateSpace& space, bool conditioned, int logvar_dim, const Prior& prior,
                     const TrainConfig& config, int context_dim) {
  prior.validate();
  nn::Architecture arch;
  arch.state_features = space.feature_dim();
  arch.condition_features = (conditioned ? space.feature_dim() : 0) + context_dim;
  arch.velocity_dim = space.tangent_dim();
  arch.logvar_dim = logvar_dim;
  arch.hidden = config.hidden;
  arch.activation = config.activation;
  FlowModel m;
  m.net = nn::Network(arch, derive_seed(config.seed, 1));
  m.prior = prior;
  m.space = space;
  m.conditioned = conditioned;
  m.context_dim = context_dim;
  return m;
}

std::vector<FlowDraw> draw_batch(const FlowModel& model, const FlowDataset& data, int batch_size, Rng& rng,
                                 double condition_noise) {
  if (data.examples.empty()) throw std::invalid_argument("empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, data.examples.size() - 1);
  std::vector<FlowDraw> draws(static_cast<std::size_t>(batch_size));
  for (auto& d : draws) {
    d.index = pick(rng);
    const FlowExample& e = data.examples[d.index];
    d.condition = e.condition;
    if (condition_noise > 0.0 && model.conditioned) {
      d.condition = data.space.sample_around(e.condition, condition_noise, condition_noise, rng);
    }
    // A prior draw exactly a half turn from the target has no unique geodesic; redraw.
    for (;;) {
      d.z0 = sample_prior(model.prior, data.space, &d.condition, rng);
      try {
        data.space.displacement(d.z0, e.target);
        break;
      } catch (const GeometryError&) {
      }
    }
    d.t = uniform(rng, 0.0, 1.0);
  }
  return draws;
}

TrainBatch build_batch(const FlowModel& model, const FlowDataset& data, std::span<const FlowDraw> draws) {
  const auto& arch = model.net.arch();
  const auto n = static_cast<Eigen::Index>(draws.size());
  TrainBatch b;
  b.inputs.resize(arch.input_dim(), n);
  b.velocity.resize(arch.velocity_dim, n);
  b.progress.resize(n);
  b.logvar.resize(arch.logvar_dim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const FlowDraw& d = draws[j];
    const FlowExample& e = data.examples.at(d.index);
    const VectorXd zt = interpolant(data.space, d.z0, e.target, d.t);
    model.input_column(zt, d.condition.size() ? d.condition : e.condition, d.t, e.context, b.inputs.col(j).data());
    b.velocity.col(j) = data.space.displacement(d.z0, e.target);
    b.progress[j] = e.progress;
    if (arch.logvar_dim > 0) {
      if (e.logvar.size() != arch.logvar_dim) throw std::invalid_argument("example lacks logvar supervision");
      b.logvar.col(j) = e.logvar;
    }
  }
  return b;
}

LossTerms cfm_loss(const FlowModel& model, const FlowDataset& data, std::span<const FlowDraw> draws,
                   std::span<double> grad, const LossWeights& weights, Execution exec) {
  const TrainBatch b = build_batch(model, data, draws);
  const LossTerms t = loss_and_gradient(model.net, b, weights, grad, exec);
  if (!std::isfinite(t.total)) throw std::runtime_error("non-finite loss");
  return t;
}

TrainResult train(FlowModel model, const FlowDataset& data, const TrainConfig& config) {
  config.validate();
  if (data.examples.empty()) throw std::invalid_argument("empty dataset");
  if (!(data.space == model.space)) throw std::invalid_argument("dataset and model state spaces differ");
  const int n = static_cast<int>(data.examples.size());
  const int steps = config.steps_per_epoch > 0 ? config.steps_per_epoch
                                               : (n + config.batch_size - 1) / config.batch_size;
  Rng rng(derive_seed(config.seed, 2));
  nn::AdamState adam(model.net.size(), config.learning_rate);
  std::vector<double> grad(model.net.size());

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    LossTerms acc;
    try {
      for (int s = 0; s < steps; ++s) {
        // Cosine decay from the base rate to final_lr_scale times it.
        const double u = static_cast<double>(epoch * steps + s) / (static_cast<double>(config.epochs) * steps);
        adam.learning_rate = config.learning_rate *
                             (config.final_lr_scale + (1.0 - config.final_lr_scale) * 0.5 * (1.0 + std::cos(std::numbers::pi * u)));
        const auto draws = draw_batch(model, data, config.batch_size, rng, config.condition_noise);
        const LossTerms t = cfm_loss(model, data, draws, grad, config.loss_weights, config.execution);
        nn::optimizer_step(adam, model.net.params(), grad);
        acc.total += t.total / steps;
        acc.velocity += t.velocity / steps;
        acc.progress += t.progress / steps;
        acc.logvar += t.logvar / steps;
      }
    } catch (const std::runtime_error& e) {
      throw nn::DivergedError("diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.curve.push_back({epoch, acc});
  }
  result.model = std::move(model);
  return result;
}

std::string loss_curve_csv(std::span<const EpochLoss> curve) {
  std::ostringstream out;
  out << "epoch,loss,velocity,progress,logvar\n";
  for (const auto& e : curve) {
    out << e.epoch << ',' << format_double(e.terms.total) << ',' << format_double(e.terms.velocity) << ','
        << format_double(e.terms.progress) << ',' << format_double(e.terms.logvar) << '\n';
  }
  return out.str();
}

IntegrateResult integrate(const FlowModel& model, const VectorXd& z0, const VectorXd& condition, int steps,
                          const VectorXd& context) {
  if (steps < 1) throw std::invalid_argument("integration needs at least one step");
  model.space.check(z0);
  IntegrateResult r;
  r.state = z0;
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const nn::Prediction p = model.predict(r.state, condition, k * dt, context);
    r.state = model.space.retract(r.state, p.velocity, dt);
    if (!r.state.allFinite()) throw std::runtime_error("non-finite state during integration");
    r.progress = p.progress;
    r.logvar = p.logvar;
  }
  return r;
}

void save_model(const FlowModel& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  nn::save(model.net, path,
           {{"prior", model.prior.to_json()},
            {"state_space", model.space.name()},
            {"conditioned", model.conditioned},
            {"context_dim", model.context_dim},
            {"extra", extra}});
}

FlowModel load_model(const std::filesystem::path& path, nlohmann::json* extra) {
  nlohmann::json meta;
  FlowModel m;
  m.net = nn::load(path, &meta);
  try {
    m.prior = Prior::from_json(meta.at("prior"));
    m.space = StateSpace::from_name(meta.at("state_space").get<std::string>());
    m.conditioned = meta.at("conditioned").get<bool>();
    m.context_dim = meta.value("context_dim", 0);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": checkpoint lacks flow metadata (" + e.what() + ")");
  }
  if (m.net.arch().velocity_dim != m.space.tangent_dim()) {
    throw std::runtime_error(path.string() + ": velocity head does not match the state space");
  }
  if (extra) *extra = meta.value("extra", nlohmann::json::object());
  return m;
}

}  // namespace msg
