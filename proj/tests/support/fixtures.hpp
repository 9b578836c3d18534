#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "growbrain/dataset.hpp"
#include "growbrain/experiment.hpp"
#include "growbrain/network.hpp"
#include "growbrain/rng.hpp"
#include "growbrain/surgery.hpp"

namespace growbrain::testing {

inline const std::vector<std::size_t> kSmallWidths{6, 8, 7, 4};

inline NetworkGraph small_mlp(Rng& rng, const std::vector<std::size_t>& widths = kSmallWidths) {
  return build_mlp(widths, rng);
}

inline constexpr GrowthKind kAllKinds[] = {GrowthKind::ReplaceClassifier, GrowthKind::Deepen,
                                           GrowthKind::Widen, GrowthKind::DeepenAndWiden,
                                           GrowthKind::WidenTwice};

// Small plan of each kind with a 5-way target classifier.
inline GrowthPlan small_plan(GrowthKind kind, double init_stddev = 0.2) {
  GrowthPlan p;
  p.kind = kind;
  p.init_stddev = init_stddev;
  p.classes = 5;
  switch (kind) {
    case GrowthKind::ReplaceClassifier: p.sizes = {5}; break;
    case GrowthKind::Deepen: p.sizes = {5}; break;
    case GrowthKind::Widen: p.sizes = {4}; break;
    case GrowthKind::DeepenAndWiden: p.sizes = {4}; break;
    case GrowthKind::WidenTwice: p.sizes = {3, 4}; break;
  }
  return p;
}

inline NetworkGraph grown_mlp(Rng& rng, GrowthKind kind, double init_stddev = 0.2) {
  NetworkGraph net = small_mlp(rng);
  apply_growth(net, small_plan(kind, init_stddev), rng);
  return net;
}

// Uniformly random choice among ready nodes at every step (Kahn's algorithm).
inline std::vector<std::string> random_topological_order(const NetworkGraph& net, Rng& rng) {
  std::set<std::string, std::less<>> done{std::string(kInputNode)};
  std::vector<std::string> order;
  std::vector<const LayerNode*> pending;
  for (const auto& n : net.nodes()) pending.push_back(&n);
  while (!pending.empty()) {
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < pending.size(); ++i)
      if (std::all_of(pending[i]->inputs.begin(), pending[i]->inputs.end(),
                      [&](const std::string& in) { return done.count(in) > 0; }))
        ready.push_back(i);
    const std::size_t pick = ready[rng.below(ready.size())];
    order.push_back(pending[pick]->name);
    done.insert(pending[pick]->name);
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return order;
}

// Isotropic Gaussian blobs; class c is centred at `separation` on axis c.
// Rows are grouped by class.
inline Dataset blobs(Rng& rng, std::size_t classes, std::size_t per_class, std::size_t dim,
                     double separation, double noise = 1.0) {
  Dataset d;
  d.class_count = classes;
  d.features = Matrix(classes * per_class, dim);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t r = c * per_class + i;
      for (std::size_t j = 0; j < dim; ++j)
        d.features(r, j) = rng.normal(j == c % dim ? separation : 0.0, noise);
      d.labels.push_back(static_cast<Label>(c));
    }
  return d;
}

// A grid small enough to run in well under a second per seed.
inline ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  auto& s = cfg.task.synth;
  s.source_classes = 4;
  s.target_classes = 4;
  s.dim = 12;
  s.latent_dim = 4;
  s.modes_per_class = 2;
  s.source_samples_per_class = 40;
  s.target_samples_per_class = 40;
  cfg.task.target_train_per_class = 8;
  cfg.hidden = {16, 16};
  cfg.pretrain.epochs = 10;
  cfg.pretrain.step_epochs = 5;
  cfg.finetune.epochs = 6;
  cfg.finetune.step_epochs = 3;
  cfg.finetune.base_lr = 0.005;
  cfg.source_regrow = cfg.finetune;
  cfg.probe.steps = 40;
  MethodConfig baseline;
  baseline.name = "Baseline-FT";
  baseline.plan.kind = GrowthKind::ReplaceClassifier;
  MethodConfig wa;
  wa.name = "WA";
  wa.plan.kind = GrowthKind::Widen;
  cfg.methods = {baseline, wa};
  cfg.seeds = {1, 2, 3};
  return cfg;
}

}  // namespace growbrain::testing
