#include "growbrain/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "growbrain/train.hpp"

namespace growbrain {

std::vector<UnitActivation> max_activating(const NetworkGraph& net, std::string_view node,
                                           std::size_t unit, const Dataset& data, std::size_t k) {
  if (node != kInputNode && !net.contains(node))
    throw ConfigError("max_activating: no node named '" + std::string(node) + "'");
  const std::size_t width = net.width_of(node);
  if (unit >= width)
    throw ConfigError("max_activating: unit " + std::to_string(unit) + " outside node '" +
                      std::string(node) + "' of width " + std::to_string(width));
  if (data.size() == 0) throw ConfigError("max_activating: empty dataset");
  const Matrix act = node_activations(net, data.features, node);
  std::vector<UnitActivation> all(act.rows());
  for (std::size_t i = 0; i < act.rows(); ++i) all[i] = {i, act(i, unit)};
  std::stable_sort(all.begin(), all.end(), [](const UnitActivation& a, const UnitActivation& b) {
    return a.value > b.value;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

namespace {

struct Standardizer {
  std::vector<double> mean, inv_std;

  explicit Standardizer(const Matrix& x) : mean(x.cols(), 0.0), inv_std(x.cols(), 1.0) {
    const double n = static_cast<double>(x.rows());
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) s += x(i, j);
      mean[j] = n > 0 ? s / n : 0.0;
      double q = 0.0;
      for (std::size_t i = 0; i < x.rows(); ++i) q += (x(i, j) - mean[j]) * (x(i, j) - mean[j]);
      const double sd = n > 0 ? std::sqrt(q / n) : 0.0;
      inv_std[j] = sd > 1e-12 ? 1.0 / sd : 0.0;
    }
  }

  Matrix apply(const Matrix& x) const {
    Matrix out = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean[j]) * inv_std[j];
    return out;
  }
};

}  // namespace

double linear_probe_accuracy(const Matrix& train_x, std::span<const Label> train_y,
                             const Matrix& eval_x, std::span<const Label> eval_y,
                             std::size_t classes, const ProbeConfig& probe) {
  if (train_x.cols() != eval_x.cols()) throw ShapeError("probe: train/eval feature widths differ");
  const Standardizer st(train_x);
  const Matrix xt = st.apply(train_x);
  const Matrix xe = st.apply(eval_x);
  DenseParams w{Matrix(classes, train_x.cols() + 1)};
  for (std::size_t step = 0; step < probe.steps; ++step) {
    const auto loss = softmax_xent(dense_forward(w, xt), train_y);
    const auto g = dense_backward(w, xt, loss.d_logits);
    auto wv = w.weights.values();
    auto gv = g.d_weights.values();
    for (std::size_t i = 0; i < wv.size(); ++i) wv[i] -= probe.lr * gv[i];
  }
  const Matrix logits = dense_forward(w, xe);
  std::vector<Label> pred(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    pred[b] = static_cast<Label>(std::max_element(z.begin(), z.end()) - z.begin());
  }
  return score_predictions(pred, eval_y, classes).macro_accuracy;
}

WidthBlocks width_blocks(const NetworkGraph& net, std::string_view concat) {
  const std::string name = concat.empty() ? net.feature_output() : std::string(concat);
  if (!net.contains(name)) throw ConfigError("no node named '" + name + "'");
  const auto& n = net.node(name);
  if (n.kind != LayerKind::Concat || n.inputs.size() != 2)
    throw ConfigError("node '" + name + "' is not a width-augmentation concat of two blocks");
  return {name, n.inputs[0], n.inputs[1]};
}

BlockCurves block_learning_curves(std::span<const NetworkGraph> snapshots,
                                  const Dataset& probe_train, const Dataset& val,
                                  const ProbeConfig& probe) {
  BlockCurves curves;
  const std::size_t classes = std::max(probe_train.class_count, val.class_count);
  for (const auto& net : snapshots) {
    const auto blocks = width_blocks(net);
    const auto tr = forward(net, probe_train.features).cache;
    const auto ev = forward(net, val.features).cache;
    auto fit = [&](const std::string& node) {
      return linear_probe_accuracy(tr.at(node), probe_train.labels, ev.at(node), val.labels,
                                   classes, probe);
    };
    curves.old_block.push_back(fit(blocks.old_block));
    curves.new_block.push_back(fit(blocks.new_block));
    curves.combined.push_back(fit(blocks.concat));
  }
  return curves;
}

double block_norm_ratio(const NetworkGraph& net, const Dataset& data, std::string_view concat) {
  const auto blocks = width_blocks(net, concat);
  const auto cache = forward(net, data.features).cache;
  auto mean_norm = [&](const std::string& node) {
    const Matrix& m = cache.at(node);
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double q = 0.0;
      for (double v : m.row(r)) q += v * v;
      s += std::sqrt(q);
    }
    return s / static_cast<double>(m.rows());
  };
  const double old_norm = mean_norm(blocks.old_block);
  const double new_norm = mean_norm(blocks.new_block);
  if (old_norm == 0.0) throw DomainError("block_norm_ratio: old block is identically zero");
  return new_norm / old_norm;
}

}  // namespace growbrain
