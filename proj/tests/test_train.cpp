#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "growbrain/checkpoint.hpp"
#include "growbrain/dataset.hpp"
#include "growbrain/surgery.hpp"
#include "growbrain/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace growbrain;
namespace gt = growbrain::testing;

namespace {

TrainConfig quick_config(std::size_t epochs = 5, double lr = 0.05) {
  TrainConfig cfg;
  cfg.base_lr = lr;
  cfg.epochs = epochs;
  cfg.step_epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 7;
  return cfg;
}

// Pre-trained 6-8-7-4 net grown to a 5-way WA net, with a blob target task.
struct GrownSetup {
  NetworkGraph net;
  Dataset train_set;
  Dataset val_set;
};

GrownSetup grown_setup(std::uint64_t seed, GrowthKind kind = GrowthKind::Widen) {
  Rng rng(seed);
  GrownSetup s{gt::grown_mlp(rng, kind, 0.1), gt::blobs(rng, 5, 12, 6, 3.0),
               gt::blobs(rng, 5, 4, 6, 3.0)};
  return s;
}

std::vector<double> tensor_values(const LayerNode& n) {
  if (n.kind == LayerKind::Dense) return gt::flat(n.dense_params().weights);
  return n.norm_params().gamma;
}

Gradients zero_gradients(const NetworkGraph& net) {
  Gradients g;
  for (const auto& n : net.nodes()) {
    if (n.kind == LayerKind::Dense) {
      const auto& w = n.dense_params().weights;
      g.params[n.name].d_weights = Matrix(w.rows(), w.cols());
    } else if (n.kind == LayerKind::NormScale) {
      g.params[n.name].d_gamma.assign(n.norm_params().gamma.size(), 0.0);
    }
  }
  return g;
}

// Two classes split by the sign of the first coordinate with margin 1.
Dataset separable_two_class(Rng& rng, std::size_t per_class) {
  Dataset d;
  d.class_count = 2;
  d.features = Matrix(2 * per_class, 3);
  for (std::size_t r = 0; r < 2 * per_class; ++r) {
    const bool pos = r < per_class;
    d.features(r, 0) = (pos ? 1.0 : -1.0) * (1.0 + std::abs(rng.normal()));
    d.features(r, 1) = rng.normal();
    d.features(r, 2) = rng.normal();
    d.labels.push_back(pos ? 1 : 0);
  }
  return d;
}

}  // namespace

TEST(SgdUpdate, MomentumArithmetic) {
  std::vector<double> w{1.0};
  std::vector<double> v{0.0};
  const std::vector<double> g{0.5};
  sgd_update("w", w, g, v, 0.1, 0.9, 0.0, true);
  EXPECT_DOUBLE_EQ(v[0], -0.05);
  EXPECT_DOUBLE_EQ(w[0], 0.95);
  sgd_update("w", w, g, v, 0.1, 0.9, 0.0, true);
  EXPECT_DOUBLE_EQ(v[0], -0.095);
  EXPECT_DOUBLE_EQ(w[0], 0.855);
}

TEST(SgdUpdate, WeightDecayArithmetic) {
  std::vector<double> w{1.0};
  std::vector<double> v{0.0};
  const std::vector<double> g{0.5};
  sgd_update("w", w, g, v, 0.1, 0.9, 0.0005, true);
  EXPECT_DOUBLE_EQ(v[0], -0.05005);
  EXPECT_DOUBLE_EQ(w[0], 0.94995);
  std::vector<double> w2{1.0};
  std::vector<double> v2{0.0};
  sgd_update("w", w2, g, v2, 0.1, 0.9, 0.0005, false);
  EXPECT_DOUBLE_EQ(w2[0], 0.95);
}

TEST(SgdUpdate, NonFiniteGradientNamesTensorAndLeavesIt) {
  std::vector<double> w{1.0, 2.0};
  std::vector<double> v{0.0, 0.0};
  const std::vector<double> g{0.5, std::numeric_limits<double>::quiet_NaN()};
  try {
    sgd_update("fc7_plus", w, g, v, 0.1, 0.9, 0.0, true);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("fc7_plus"), std::string::npos);
  }
  EXPECT_EQ(w, (std::vector<double>{1.0, 2.0}));
}

TEST(SgdStep, LrMultiplierIsLinearOnFirstStep) {
  Rng rng(1);
  const auto base = gt::grown_mlp(rng, GrowthKind::Widen);
  const Matrix x = gt::uniform_matrix(rng, 6, 6);
  const auto y = gt::random_labels(rng, 6, 5);
  const auto grads = backward(base, forward(base, x, y).cache, y);
  TrainConfig cfg = quick_config();
  cfg.weight_decay = 0.0;
  auto delta = [&](double multiplier) {
    auto net = base;
    net.group("new").lr_multiplier = multiplier;
    OptimState st;
    sgd_step(net, grads, st, 0.01, cfg);
    const auto before = base.node("fc2_plus").dense_params().weights.values();
    const auto after = net.node("fc2_plus").dense_params().weights.values();
    std::vector<double> d(before.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = after[i] - before[i];
    return d;
  };
  const auto one = delta(1.0);
  const auto ten = delta(10.0);
  double mag = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_NEAR(ten[i], 10.0 * one[i], 1e-15 + 1e-9 * std::abs(ten[i]));
    mag += std::abs(one[i]);
  }
  EXPECT_GT(mag, 0.0);
}

TEST(SgdStep, GammaIsNeverDecayedButWeightsAre) {
  Rng rng(2);
  auto net = gt::grown_mlp(rng, GrowthKind::Widen);
  const auto before = net;
  TrainConfig cfg = quick_config();
  cfg.weight_decay = 0.5;
  OptimState st;
  sgd_step(net, zero_gradients(net), st, 0.1, cfg);
  EXPECT_EQ(net.node("norm2").norm_params().gamma, before.node("norm2").norm_params().gamma);
  EXPECT_FALSE(net.node("fc2_plus").dense_params().weights ==
               before.node("fc2_plus").dense_params().weights);
}

TEST(SgdStep, FrozenGroupsSkipped) {
  Rng rng(3);
  auto net = gt::grown_mlp(rng, GrowthKind::Widen);
  for (auto& [name, g] : net.groups()) g.frozen = true;
  const auto before = net;
  OptimState st;
  const Matrix x = gt::uniform_matrix(rng, 4, 6);
  const auto y = gt::random_labels(rng, 4, 5);
  sgd_step(net, backward(net, forward(net, x, y).cache, y), st, 1.0, quick_config());
  EXPECT_TRUE(net == before);
}

TEST(LrSchedule, PaperSteps) {
  TrainConfig cfg;
  cfg.base_lr = 0.001;
  cfg.step_epochs = 25;
  cfg.step_factor = 10.0;
  EXPECT_EQ(lr_at_epoch(cfg, 0), 0.001);
  EXPECT_EQ(lr_at_epoch(cfg, 24), 0.001);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 25), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 30), 0.0001);
  EXPECT_DOUBLE_EQ(lr_at_epoch(cfg, 50), 0.00001);
}

TEST(LrSchedule, PiecewiseConstantExactDrops) {
  TrainConfig cfg;
  cfg.base_lr = 0.3;
  cfg.step_epochs = 7;
  cfg.step_factor = 4.0;
  for (std::size_t e = 1; e < 60; ++e) {
    const double prev = lr_at_epoch(cfg, e - 1);
    const double cur = lr_at_epoch(cfg, e);
    if (e % 7 == 0)
      EXPECT_DOUBLE_EQ(prev / cur, 4.0) << e;
    else
      EXPECT_EQ(prev, cur) << e;
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig ok;
  EXPECT_NO_THROW(ok.validate());
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.base_lr = -1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.momentum = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.step_factor = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.batch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& c) { c.step_epochs = 0; }).validate(), ConfigError);
}

TEST(Scenario, GroupsOpened) {
  Rng rng(4);
  const auto base = gt::grown_mlp(rng, GrowthKind::Widen);
  auto frozen_of = [&](Scenario s) {
    auto net = base;
    apply_scenario(net, s);
    std::map<std::string, bool> out;
    for (const auto& [name, g] : net.groups()) out[name] = g.frozen;
    return out;
  };
  EXPECT_EQ(frozen_of(Scenario::NewOnly),
            (std::map<std::string, bool>{{"fc1", true}, {"fc2", true}, {"classifier", true},
                                         {"new", false}}));
  EXPECT_EQ(frozen_of(Scenario::FromTopMinus1),
            (std::map<std::string, bool>{{"fc1", true}, {"fc2", false}, {"classifier", true},
                                         {"new", false}}));
  EXPECT_EQ(frozen_of(Scenario::FromTopMinus2),
            (std::map<std::string, bool>{{"fc1", false}, {"fc2", false}, {"classifier", true},
                                         {"new", false}}));
  for (const auto& [name, frozen] : frozen_of(Scenario::All)) EXPECT_FALSE(frozen) << name;
}

TEST(Scenario, NamesAndErrors) {
  for (auto s : {Scenario::NewOnly, Scenario::FromTopMinus1, Scenario::FromTopMinus2, Scenario::All})
    EXPECT_EQ(scenario_from_string(to_string(s)), s);
  EXPECT_THROW(scenario_from_string("Everything"), ConfigError);
  Rng rng(5);
  auto shallow = build_mlp(std::vector<std::size_t>{4, 6, 3}, rng);
  replace_classifier(shallow, 3, rng);
  EXPECT_THROW(apply_scenario(shallow, Scenario::FromTopMinus2), ConfigError);
}

TEST(Train, FreezeInvarianceForEveryScenario) {
  for (auto s : {Scenario::NewOnly, Scenario::FromTopMinus1, Scenario::FromTopMinus2, Scenario::All}) {
    auto setup = grown_setup(6);
    apply_scenario(setup.net, s);
    const auto before = setup.net;
    auto cfg = quick_config();
    cfg.scenario = s;
    train(setup.net, setup.train_set, setup.val_set, cfg);
    for (const auto& n : before.nodes()) {
      if (std::holds_alternative<std::monostate>(n.params)) continue;
      const bool frozen = before.group(n.group).frozen;
      const bool same = tensor_values(n) == tensor_values(setup.net.node(n.name));
      EXPECT_EQ(same, frozen) << to_string(s) << " " << n.name;
    }
  }
}

TEST(Train, ZeroLearningRateIsFixpoint) {
  auto setup = grown_setup(7);
  const auto before = setup.net;
  const auto run = train(setup.net, setup.train_set, setup.val_set, quick_config(4, 0.0));
  EXPECT_TRUE(setup.net == before);
  ASSERT_EQ(run.train_loss.size(), 4u);
  // Same per-sample losses each epoch, summed in a different shuffled order.
  for (double l : run.train_loss) EXPECT_NEAR(l, run.train_loss.front(), 1e-12 * l);
}

TEST(Train, DeterministicBytes) {
  auto a = grown_setup(8, GrowthKind::WidenTwice);
  auto b = grown_setup(8, GrowthKind::WidenTwice);
  const auto ra = train(a.net, a.train_set, a.val_set, quick_config());
  const auto rb = train(b.net, b.train_set, b.val_set, quick_config());
  EXPECT_EQ(serialize_checkpoint(a.net), serialize_checkpoint(b.net));
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  EXPECT_EQ(ra.val_accuracy, rb.val_accuracy);
  auto c = grown_setup(8, GrowthKind::WidenTwice);
  auto other = quick_config();
  other.seed = 8;
  train(c.net, c.train_set, c.val_set, other);
  EXPECT_NE(serialize_checkpoint(a.net), serialize_checkpoint(c.net));
}

TEST(Train, CurvesHaveOneEntryPerEpochInRange) {
  auto setup = grown_setup(9);
  const auto run = train(setup.net, setup.train_set, setup.val_set, quick_config(6));
  ASSERT_EQ(run.train_loss.size(), 6u);
  ASSERT_EQ(run.val_accuracy.size(), 6u);
  ASSERT_EQ(run.val_micro_accuracy.size(), 6u);
  for (double a : run.val_accuracy) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_LT(run.train_loss.back(), run.train_loss.front());
}

TEST(Train, EpochHookSeesEveryEpoch) {
  auto setup = grown_setup(10);
  std::vector<std::size_t> seen;
  train(setup.net, setup.train_set, setup.val_set, quick_config(3),
        [&](std::size_t e, const NetworkGraph&) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Train, SeparableBlobsReachPerfectTrainAccuracy) {
  Rng rng(11);
  const Dataset d = separable_two_class(rng, 40);
  auto net = build_mlp(std::vector<std::size_t>{3, 8, 2}, rng);
  TrainConfig cfg;
  cfg.base_lr = 0.05;
  cfg.epochs = 50;
  cfg.step_epochs = 50;
  cfg.batch_size = 8;
  cfg.seed = 3;
  train(net, d, Dataset{}, cfg);
  EXPECT_EQ(evaluate(net, d), 1.0);
}

TEST(Train, EmptyOrMismatchedDataThrows) {
  auto setup = grown_setup(12);
  EXPECT_THROW(train(setup.net, Dataset{}, setup.val_set, quick_config()), ConfigError);
  Rng rng(12);
  const auto wide = gt::blobs(rng, 7, 3, 6, 3.0);
  EXPECT_THROW(train(setup.net, wide, setup.val_set, quick_config()), ConfigError);
}

TEST(Train, DivergenceRollsBack) {
  auto setup = grown_setup(13);
  setup.train_set.features(3, 2) = std::numeric_limits<double>::quiet_NaN();
  const auto before = setup.net;
  try {
    train(setup.net, setup.train_set, setup.val_set, quick_config());
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 0u);
    EXPECT_TRUE(e.last_good() == before);
    EXPECT_TRUE(setup.net == before);
  }
}

TEST(Train, HugeLearningRateDiverges) {
  auto setup = grown_setup(14);
  EXPECT_THROW(train(setup.net, setup.train_set, setup.val_set, quick_config(50, 1e200)),
               DivergenceError);
  EXPECT_TRUE(setup.net.nodes().front().dense_params().weights.all_finite());
}

TEST(Evaluate, PerfectAndEmpty) {
  auto setup = grown_setup(15);
  Dataset relabelled = setup.val_set;
  relabelled.labels = predict(setup.net, relabelled.features);
  EXPECT_EQ(evaluate(setup.net, relabelled), 1.0);
  EXPECT_THROW(evaluate(setup.net, Dataset{}), ConfigError);
}

TEST(Evaluate, MacroDiffersFromMicroOnImbalance) {
  std::vector<Label> labels(10, 0);
  labels[8] = labels[9] = 1;
  std::vector<Label> predicted(10, 0);
  const auto r = score_predictions(predicted, labels, 2);
  EXPECT_DOUBLE_EQ(r.micro_accuracy, 0.8);
  EXPECT_DOUBLE_EQ(r.macro_accuracy, 0.5);
  EXPECT_EQ(r.per_class, (std::vector<double>{1.0, 0.0}));
}

TEST(Evaluate, RandomClassifierNearChance) {
  Rng rng(16);
  const std::size_t n = 20000, classes = 5;
  std::vector<Label> labels(n), predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<Label>(i % classes);
    predicted[i] = static_cast<Label>(rng.below(classes));
  }
  const double p = 1.0 / classes;
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(n));
  EXPECT_NEAR(score_predictions(predicted, labels, classes).macro_accuracy, p, 3 * sigma);
}

TEST(Evaluate, TiesGoToLowestClass) {
  Rng rng(17);
  auto net = build_mlp(std::vector<std::size_t>{3, 4, 3}, rng,
                       WeightInit{WeightInit::Scheme::Gaussian, 0.0});
  const auto pred = predict(net, gt::uniform_matrix(rng, 5, 3));
  for (auto p : pred) EXPECT_EQ(p, 0);
}

TEST(Relearn, UntouchedNetworkRecoversSourceAccuracy) {
  TransferTaskSpec spec;
  spec.source_samples_per_class = 120;
  auto [source, target] = synth_transfer_tasks(21, spec);
  const auto parts = split(source, kDefaultSplit, 21);
  Rng rng(21);
  auto net = build_mlp(std::vector<std::size_t>{spec.dim, 32, 32, spec.source_classes}, rng);
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.epochs = 30;
  cfg.seed = 21;
  train(net, parts.train, parts.val, cfg);
  const double original = evaluate(net, parts.test);
  TrainConfig probe = cfg;
  probe.seed = 22;
  const double recovered = relearn_source_classifier(net, parts.train, parts.test, probe);
  EXPECT_NEAR(recovered, original, 0.02);
  EXPECT_GT(original, 1.5 / static_cast<double>(spec.source_classes));
}
