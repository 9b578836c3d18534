#include "growbrain/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "growbrain/surgery.hpp"

namespace growbrain {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::NewOnly: return "NewOnly";
    case Scenario::FromTopMinus1: return "FromTopMinus1";
    case Scenario::FromTopMinus2: return "FromTopMinus2";
    case Scenario::All: return "All";
  }
  return "?";
}

Scenario scenario_from_string(std::string_view s) {
  for (auto v : {Scenario::NewOnly, Scenario::FromTopMinus1, Scenario::FromTopMinus2,
                 Scenario::All}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(step_factor > 1.0)) throw ConfigError("step_factor must be > 1");
  if (step_epochs == 0) throw ConfigError("step_epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  const auto drops = static_cast<double>(epoch / cfg.step_epochs);
  return cfg.base_lr / std::pow(cfg.step_factor, drops);
}

void sgd_update(std::string_view tensor, std::span<double> param, std::span<const double> grad,
                std::span<double> velocity, double lr, double momentum, double weight_decay,
                bool apply_decay) {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw ShapeError("sgd_update: tensor '" + std::string(tensor) + "' has " +
                     std::to_string(param.size()) + " values, " + std::to_string(grad.size()) +
                     " gradients and " + std::to_string(velocity.size()) + " velocities");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      std::ostringstream os;
      os << "non-finite gradient " << grad[i] << " in tensor '" << tensor << "' at element " << i;
      throw NonFiniteError(os.str());
    }
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = apply_decay ? grad[i] + weight_decay * param[i] : grad[i];
    velocity[i] = momentum * velocity[i] - lr * g;
    param[i] += velocity[i];
  }
}

void sgd_step(NetworkGraph& net, const Gradients& grads, OptimState& state, double lr_epoch,
              const TrainConfig& cfg) {
  for (auto& n : net.mutable_nodes()) {
    if (std::holds_alternative<std::monostate>(n.params)) continue;
    const auto& group = net.group(n.group);
    if (group.frozen) continue;
    auto git = grads.params.find(n.name);
    if (git == grads.params.end())
      throw InternalError("no gradient entry for trainable node '" + n.name + "'");
    const double lr = lr_epoch * group.lr_multiplier;
    std::span<double> param;
    std::span<const double> grad;
    bool decay = group.decay_enabled;
    if (n.kind == LayerKind::Dense) {
      param = n.dense_params().weights.values();
      grad = git->second.d_weights.values();
    } else {
      param = n.norm_params().gamma;
      grad = git->second.d_gamma;
      decay = false;
    }
    auto& v = state.velocity[n.name];
    if (v.size() != param.size()) v.assign(param.size(), 0.0);
    sgd_update(n.name, param, grad, v, lr, cfg.momentum, cfg.weight_decay, decay);
  }
}

void apply_scenario(NetworkGraph& net, Scenario scenario) {
  std::vector<std::string> pre_existing;
  for (const auto& name : hidden_dense_layers(net))
    if (net.node(name).group != kNewGroup) pre_existing.push_back(name);

  std::size_t open_top = 0;
  switch (scenario) {
    case Scenario::NewOnly: open_top = 0; break;
    case Scenario::FromTopMinus1: open_top = 1; break;
    case Scenario::FromTopMinus2: open_top = 2; break;
    case Scenario::All: open_top = pre_existing.size(); break;
  }
  if (open_top > pre_existing.size())
    throw ConfigError("scenario " + std::string(to_string(scenario)) + " needs " +
                      std::to_string(open_top) + " pre-existing hidden Dense layers, network has " +
                      std::to_string(pre_existing.size()));

  for (auto& [name, g] : net.groups()) g.frozen = name != kNewGroup && scenario != Scenario::All;
  for (std::size_t i = pre_existing.size() - open_top; i < pre_existing.size(); ++i)
    net.group(net.node(pre_existing[i]).group).frozen = false;
}

std::vector<Label> predict(const NetworkGraph& net, const Matrix& features) {
  const auto& loss = net.node(net.output());
  const Matrix logits = node_activations(net, features, loss.inputs.front());
  std::vector<Label> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    // max_element returns the first maximum, i.e. the lowest index on ties.
    out[b] = static_cast<Label>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return out;
}

EvalResult score_predictions(std::span<const Label> predicted, std::span<const Label> labels,
                             std::size_t class_count) {
  if (labels.empty()) throw ConfigError("cannot evaluate on an empty dataset");
  if (predicted.size() != labels.size())
    throw ShapeError("score_predictions: prediction/label count mismatch");
  std::vector<std::size_t> total(class_count, 0), correct(class_count, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= class_count)
      throw DomainError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(class_count) + ")");
    ++total[static_cast<std::size_t>(y)];
    if (predicted[i] == y) {
      ++correct[static_cast<std::size_t>(y)];
      ++hits;
    }
  }
  EvalResult r;
  r.per_class.assign(class_count, 0.0);
  std::size_t present = 0;
  double sum = 0.0;
  for (std::size_t c = 0; c < class_count; ++c) {
    if (total[c] == 0) continue;
    r.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    sum += r.per_class[c];
    ++present;
  }
  r.macro_accuracy = sum / static_cast<double>(present);
  r.micro_accuracy = static_cast<double>(hits) / static_cast<double>(labels.size());
  return r;
}

EvalResult evaluate_detailed(const NetworkGraph& net, const Dataset& data) {
  if (data.size() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  const auto pred = predict(net, data.features);
  return score_predictions(pred, data.labels, data.class_count);
}

double evaluate(const NetworkGraph& net, const Dataset& data) {
  return evaluate_detailed(net, data).macro_accuracy;
}

RunResult train(NetworkGraph& net, const Dataset& train_set, const Dataset& val_set,
                const TrainConfig& cfg, const EpochHook& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0) throw ConfigError("training set is empty");
  const std::size_t classes = net.node(kClassifierNode).dense_params().n_out();
  if (train_set.class_count > classes)
    throw ConfigError("training set has " + std::to_string(train_set.class_count) +
                      " classes but the classifier has " + std::to_string(classes) + " outputs");

  const auto start = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  OptimState state;
  RunResult result;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const NetworkGraph last_good = net;
    const double lr = lr_at_epoch(cfg, epoch);
    shuffle(std::span<std::size_t>(order), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Matrix x = gather_rows(train_set.features, idx);
      std::vector<Label> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = train_set.labels[idx[i]];
      auto fwd = forward(net, x, std::span<const Label>(y));
      if (!std::isfinite(*fwd.loss)) {
        net = last_good;
        throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch),
                              last_good, epoch);
      }
      loss_sum += *fwd.loss * static_cast<double>(idx.size());
      const auto grads = backward(net, fwd.cache, y);
      try {
        sgd_step(net, grads, state, lr, cfg);
      } catch (const NonFiniteError& e) {
        net = last_good;
        throw DivergenceError(e.what(), last_good, epoch);
      }
    }
    result.train_loss.push_back(loss_sum / static_cast<double>(train_set.size()));
    if (val_set.size() > 0) {
      const auto ev = evaluate_detailed(net, val_set);
      result.val_accuracy.push_back(ev.macro_accuracy);
      result.val_micro_accuracy.push_back(ev.micro_accuracy);
    } else {
      result.val_accuracy.push_back(0.0);
      result.val_micro_accuracy.push_back(0.0);
    }
    if (on_epoch) on_epoch(epoch, net);
  }
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double relearn_source_classifier(const NetworkGraph& net, const Dataset& source_train,
                                 const Dataset& source_eval, TrainConfig cfg) {
  NetworkGraph probe = net;
  Rng rng(cfg.seed ^ 0x5eedc1a551f1e5ULL);
  replace_classifier(probe, source_train.class_count, rng);
  apply_scenario(probe, Scenario::NewOnly);
  cfg.scenario = Scenario::NewOnly;
  train(probe, source_train, Dataset{}, cfg);
  return evaluate(probe, source_eval);
}

}  // namespace growbrain
