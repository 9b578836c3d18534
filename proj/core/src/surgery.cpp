#include "growbrain/surgery.hpp"

#include <sstream>

#include "growbrain/error.hpp"

namespace growbrain {

std::string_view to_string(GrowthKind kind) {
  switch (kind) {
    case GrowthKind::ReplaceClassifier: return "ReplaceClassifier";
    case GrowthKind::Deepen: return "Deepen";
    case GrowthKind::Widen: return "Widen";
    case GrowthKind::DeepenAndWiden: return "DeepenAndWiden";
    case GrowthKind::WidenTwice: return "WidenTwice";
  }
  return "?";
}

GrowthKind growth_kind_from_string(std::string_view s) {
  for (auto k : {GrowthKind::ReplaceClassifier, GrowthKind::Deepen, GrowthKind::Widen,
                 GrowthKind::DeepenAndWiden, GrowthKind::WidenTwice}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown growth kind '" + std::string(s) + "'");
}

std::string_view to_string(InitPolicy policy) {
  return policy == InitPolicy::Random ? "Random" : "CopyPlusNoise";
}

InitPolicy init_policy_from_string(std::string_view s) {
  if (s == "Random") return InitPolicy::Random;
  if (s == "CopyPlusNoise") return InitPolicy::CopyPlusNoise;
  throw ConfigError("unknown init policy '" + std::string(s) + "'");
}

void ensure_new_group(NetworkGraph& net) {
  if (!net.groups().count(kNewGroup))
    net.add_group(ParamGroup{std::string(kNewGroup), kNewLayerLrMultiplier, false, true});
}

std::vector<std::string> hidden_dense_layers(const NetworkGraph& net) {
  std::vector<std::string> out;
  for (const auto& n : net.nodes())
    if (n.kind == LayerKind::Dense && n.name != kClassifierNode) out.push_back(n.name);
  return out;
}

namespace {

std::int64_t as_signed(std::size_t v) { return static_cast<std::int64_t>(v); }

void check_plan_basics(const GrowthPlan& plan, GrowthKind expected, std::size_t min_sizes,
                       std::size_t max_sizes) {
  if (plan.kind != expected)
    throw ConfigError("plan kind " + std::string(to_string(plan.kind)) + " passed to " +
                      std::string(to_string(expected)) + " surgery");
  if (plan.sizes.size() < min_sizes || plan.sizes.size() > max_sizes)
    throw ConfigError(std::string(to_string(expected)) + " plan needs " +
                      std::to_string(min_sizes) +
                      (min_sizes == max_sizes ? "" : "-" + std::to_string(max_sizes)) +
                      " sizes, got " + std::to_string(plan.sizes.size()));
  for (auto s : plan.sizes)
    if (s == 0) throw ConfigError("growth sizes must be positive");
  if (plan.init_stddev < 0.0) throw ConfigError("init_stddev must be non-negative");
  if (plan.insert_normscale && !(plan.gamma_init > 0.0))
    throw ConfigError("gamma_init must be positive");
  if (plan.classes && *plan.classes < 2) throw ConfigError("classifier needs at least 2 classes");
}

const LayerNode& require_dense(const NetworkGraph& net, const std::string& name) {
  if (!net.contains(name)) throw ConfigError("target layer '" + name + "' does not exist");
  const auto& n = net.node(name);
  if (n.kind != LayerKind::Dense || n.name == kClassifierNode)
    throw ConfigError("target layer '" + name + "' is not a hidden Dense layer");
  return n;
}

/// Hidden Dense directly behind feature_output. A concatenation is followed
/// through its first (original) block.
std::string top_dense(const NetworkGraph& net) {
  std::string cur = net.feature_output();
  while (cur != kInputNode) {
    const auto& n = net.node(cur);
    if (n.kind == LayerKind::Dense) return n.name;
    cur = n.inputs.front();
  }
  throw ConfigError("network has no hidden Dense layer");
}

std::string relu_of(const NetworkGraph& net, const std::string& dense) {
  for (const auto& c : net.consumers(dense))
    if (net.node(c).kind == LayerKind::ReLU) return c;
  throw ConfigError("layer '" + dense + "' is not followed by a ReLU");
}

std::string layer_suffix(const std::string& dense) {
  if (dense.rfind("fc", 0) == 0 && dense.size() > 2) return dense.substr(2);
  return "_" + dense;
}

void require_free(const NetworkGraph& net, const std::string& name) {
  if (net.contains(name))
    throw ConfigError("node '" + name + "' already exists; layer was grown before");
}

/// Re-initialises the classifier to read feature_output; updates the report.
void reinit_classifier(NetworkGraph& net, std::optional<std::size_t> classes, Rng& rng,
                       double stddev, SurgeryReport& report) {
  ensure_new_group(net);
  auto& cls = net.node(kClassifierNode);
  const std::size_t n_out = classes.value_or(cls.dense_params().n_out());
  const std::size_t n_in = net.width_of(net.feature_output());
  const auto before = cls.parameter_count();
  cls.params = DenseParams{init_dense_weights(rng, n_out, n_in, stddev)};
  cls.inputs = {net.feature_output()};
  cls.group = std::string(kNewGroup);
  report.parameter_delta += as_signed(cls.parameter_count()) - as_signed(before);
  report.rewired.push_back(cls.name);
}

void add_node(NetworkGraph& net, std::string_view after, LayerNode n, SurgeryReport& report) {
  report.parameter_delta += as_signed(n.parameter_count());
  report.added.push_back(n.name);
  net.insert_after(after, std::move(n));
}

Matrix lateral_weights(const LayerNode& fc, std::size_t size, std::size_t src_width,
                       const GrowthPlan& plan, Rng& rng) {
  const std::size_t n_k = fc.dense_params().n_out();
  if (plan.init != InitPolicy::CopyPlusNoise)
    return init_dense_weights(rng, size, src_width, plan.init_stddev);
  if (size != n_k)
    throw ConfigError("CopyPlusNoise needs the new block to match '" + fc.name + "' (" +
                      std::to_string(n_k) + " units), got " + std::to_string(size));
  if (src_width != fc.dense_params().n_in())
    throw ConfigError("CopyPlusNoise needs the lateral input to match the input of '" + fc.name +
                      "'");
  Matrix weights = fc.dense_params().weights;
  for (std::size_t o = 0; o < weights.rows(); ++o)
    for (std::size_t i = 0; i + 1 < weights.cols(); ++i)
      weights(o, i) += rng.normal(0.0, plan.init_stddev);
  return weights;
}

std::string widen_provenance(const std::string& target, std::size_t size, const std::string& src,
                             const GrowthPlan& plan) {
  std::ostringstream prov;
  prov << "widen target=" << target << " size=" << size << " lateral_from=" << src
       << " init=" << to_string(plan.init) << " stddev=" << plan.init_stddev
       << " normscale=" << (plan.insert_normscale ? 1 : 0) << " gamma=" << plan.gamma_init;
  return prov.str();
}

/// Appends another lateral block to a layer that was widened before:
/// fcK_plusN -> reluK_plusN (-> normK_plusN) joins the existing concatK.
std::string widen_again(NetworkGraph& net, const std::string& target, std::size_t size,
                        const GrowthPlan& plan, Rng& rng, SurgeryReport& report) {
  const auto& fc = require_dense(net, target);
  const std::string sfx = layer_suffix(target);
  const std::string cat = "concat" + sfx;
  if (!net.contains(cat) || net.node(cat).kind != LayerKind::Concat)
    throw ConfigError("layer '" + target + "' has lateral blocks but no '" + cat + "' node");
  std::size_t block = 2;
  while (net.contains(target + "_plus" + std::to_string(block))) ++block;
  const std::string tag = "_plus" + std::to_string(block);
  const std::string fc_plus = target + tag;
  const std::string relu_plus = "relu" + sfx + tag;
  const std::string norm_plus = "norm" + sfx + tag;
  for (const auto& n : {relu_plus, norm_plus}) require_free(net, n);

  const std::string src = fc.inputs.front();
  Matrix weights = lateral_weights(fc, size, net.width_of(src), plan, rng);

  ensure_new_group(net);
  const std::string g(kNewGroup);
  const auto cat_index = *net.index_of(cat);
  const std::string anchor = net.nodes()[cat_index - 1].name;
  add_node(net, anchor, LayerNode::dense(fc_plus, src, std::move(weights), g), report);
  add_node(net, fc_plus, LayerNode::relu(relu_plus, fc_plus, g), report);
  std::string block_out = relu_plus;
  if (plan.insert_normscale) {
    add_node(net, relu_plus,
             LayerNode::normscale(norm_plus, relu_plus,
                                  NormScaleParams::uniform(size, plan.gamma_init), g),
             report);
    block_out = norm_plus;
  }
  net.node(cat).inputs.push_back(block_out);
  report.rewired.push_back(cat);

  const auto prov = widen_provenance(target, size, src, plan);
  report.provenance.push_back(prov);
  net.add_provenance(prov);
  return cat;
}

/// Adds the lateral block beside `target`. Returns the name of the new concat.
std::string widen_at(NetworkGraph& net, const std::string& target, std::size_t size,
                     const std::optional<std::string>& lateral_source, const GrowthPlan& plan,
                     Rng& rng, SurgeryReport& report) {
  const auto& fc = require_dense(net, target);
  const std::string relu = relu_of(net, target);
  const std::string sfx = layer_suffix(target);
  const std::string fc_plus = target + "_plus";
  const std::string relu_plus = "relu" + sfx + "_plus";
  const std::string norm = "norm" + sfx;
  const std::string norm_plus = "norm" + sfx + "_plus";
  const std::string cat = "concat" + sfx;
  if (net.contains(fc_plus) && !lateral_source)
    return widen_again(net, target, size, plan, rng, report);
  for (const auto& n : {fc_plus, relu_plus, norm, norm_plus, cat}) require_free(net, n);

  const std::string src = lateral_source.value_or(fc.inputs.front());
  const std::size_t n_k = fc.dense_params().n_out();
  Matrix weights = lateral_weights(fc, size, net.width_of(src), plan, rng);

  ensure_new_group(net);
  const std::string g(kNewGroup);
  std::string anchor = relu;
  add_node(net, anchor, LayerNode::dense(fc_plus, src, std::move(weights), g), report);
  anchor = fc_plus;
  add_node(net, anchor, LayerNode::relu(relu_plus, fc_plus, g), report);
  anchor = relu_plus;
  std::string old_block = relu;
  std::string new_block = relu_plus;
  if (plan.insert_normscale) {
    add_node(net, anchor,
             LayerNode::normscale(norm, relu, NormScaleParams::uniform(n_k, plan.gamma_init), g),
             report);
    anchor = norm;
    add_node(net, anchor,
             LayerNode::normscale(norm_plus, relu_plus,
                                  NormScaleParams::uniform(size, plan.gamma_init), g),
             report);
    anchor = norm_plus;
    old_block = norm;
    new_block = norm_plus;
  }
  add_node(net, anchor, LayerNode::concat(cat, {old_block, new_block}, g), report);

  if (net.feature_output() == relu) net.set_feature_output(cat);

  const auto prov = widen_provenance(target, size, src, plan);
  report.provenance.push_back(prov);
  net.add_provenance(prov);
  return cat;
}

void deepen_at_top(NetworkGraph& net, std::size_t size, const GrowthPlan& plan, Rng& rng,
                   SurgeryReport& report) {
  for (const char* n : {"fca", "relua", "norma"}) require_free(net, n);
  const std::string src = net.feature_output();
  const std::size_t in_width = net.width_of(src);
  ensure_new_group(net);
  const std::string g(kNewGroup);
  // Insert directly ahead of the classifier so the block sits after its input.
  const auto cls_index = *net.index_of(kClassifierNode);
  const std::string anchor =
      cls_index == 0 ? std::string(kInputNode) : net.nodes()[cls_index - 1].name;
  add_node(net, anchor,
           LayerNode::dense("fca", src, init_dense_weights(rng, size, in_width, plan.init_stddev),
                            g),
           report);
  add_node(net, "fca", LayerNode::relu("relua", "fca", g), report);
  std::string feature = "relua";
  if (plan.insert_normscale) {
    add_node(net, "relua",
             LayerNode::normscale("norma", "relua",
                                  NormScaleParams::uniform(size, plan.gamma_init), g),
             report);
    feature = "norma";
  }
  net.set_feature_output(feature);

  std::ostringstream prov;
  prov << "deepen size=" << size << " input=" << src << " stddev=" << plan.init_stddev
       << " normscale=" << (plan.insert_normscale ? 1 : 0) << " gamma=" << plan.gamma_init;
  report.provenance.push_back(prov.str());
  net.add_provenance(prov.str());
}

}  // namespace

SurgeryReport replace_classifier(NetworkGraph& net, std::size_t n_classes, Rng& rng,
                                 double init_stddev) {
  if (n_classes < 2) throw ConfigError("replace_classifier: need at least 2 classes");
  if (!net.contains(kClassifierNode) ||
      net.node(kClassifierNode).kind != LayerKind::Dense)
    throw ConfigError("replace_classifier: network has no Dense classifier");
  SurgeryReport report;
  reinit_classifier(net, n_classes, rng, init_stddev, report);
  std::ostringstream prov;
  prov << "replace_classifier classes=" << n_classes << " stddev=" << init_stddev;
  report.provenance.push_back(prov.str());
  net.add_provenance(prov.str());
  net.validate();
  return report;
}

SurgeryReport grow_deeper(NetworkGraph& net, const GrowthPlan& plan, Rng& rng) {
  check_plan_basics(plan, GrowthKind::Deepen, 1, 1);
  if (!plan.targets.empty())
    throw ConfigError("Deepen plans grow on top of feature_output and take no targets");
  SurgeryReport report;
  deepen_at_top(net, plan.sizes[0], plan, rng, report);
  reinit_classifier(net, plan.classes, rng, plan.init_stddev, report);
  net.validate();
  return report;
}

SurgeryReport grow_wider(NetworkGraph& net, const GrowthPlan& plan, Rng& rng) {
  check_plan_basics(plan, GrowthKind::Widen, 1, 1);
  if (plan.targets.size() > 1) throw ConfigError("Widen plans take at most one target");
  const std::string target = plan.targets.empty() ? top_dense(net) : plan.targets.front();
  require_dense(net, target);
  const bool regrow = net.feature_output() == "concat" + layer_suffix(target);
  if (net.feature_output() != relu_of(net, target) && !regrow)
    throw ConfigError("Widen target '" + target + "' must be the layer feeding the classifier");
  SurgeryReport report;
  widen_at(net, target, plan.sizes[0], std::nullopt, plan, rng, report);
  reinit_classifier(net, plan.classes, rng, plan.init_stddev, report);
  net.validate();
  return report;
}

SurgeryReport grow_dwa(NetworkGraph& net, const GrowthPlan& plan, Rng& rng) {
  check_plan_basics(plan, GrowthKind::DeepenAndWiden, 1, 2);
  if (plan.targets.size() > 1) throw ConfigError("DeepenAndWiden plans take at most one target");
  const std::string target = plan.targets.empty() ? top_dense(net) : plan.targets.front();
  require_dense(net, target);
  if (net.feature_output() != relu_of(net, target))
    throw ConfigError("DeepenAndWiden target '" + target +
                      "' must be the layer feeding the classifier");
  const std::size_t widen_size = plan.sizes[0];
  const std::size_t deepen_size = plan.sizes.size() == 2 ? plan.sizes[1] : plan.sizes[0];
  SurgeryReport report;
  widen_at(net, target, widen_size, std::nullopt, plan, rng, report);
  deepen_at_top(net, deepen_size, plan, rng, report);
  reinit_classifier(net, plan.classes, rng, plan.init_stddev, report);
  net.validate();
  return report;
}

SurgeryReport grow_wwa(NetworkGraph& net, const GrowthPlan& plan, Rng& rng) {
  check_plan_basics(plan, GrowthKind::WidenTwice, 2, 2);
  std::string lower, upper;
  if (plan.targets.empty()) {
    upper = top_dense(net);
    const auto& up = net.node(upper);
    const auto& below = net.node(up.inputs.front());
    if (below.kind != LayerKind::ReLU)
      throw ConfigError("WidenTwice needs a hidden layer below '" + upper + "'");
    lower = below.inputs.front();
  } else if (plan.targets.size() == 2) {
    lower = plan.targets[0];
    upper = plan.targets[1];
  } else {
    throw ConfigError("WidenTwice plans take zero or two targets");
  }
  require_dense(net, lower);
  require_dense(net, upper);
  if (net.node(upper).inputs.front() != relu_of(net, lower))
    throw ConfigError("WidenTwice targets '" + lower + "' and '" + upper + "' are not adjacent");
  if (net.feature_output() != relu_of(net, upper))
    throw ConfigError("WidenTwice upper target '" + upper +
                      "' must be the layer feeding the classifier");
  SurgeryReport report;
  const std::string lower_cat = widen_at(net, lower, plan.sizes[0], std::nullopt, plan, rng, report);
  widen_at(net, upper, plan.sizes[1], lower_cat, plan, rng, report);
  reinit_classifier(net, plan.classes, rng, plan.init_stddev, report);
  net.validate();
  return report;
}

void promote_new_layers(NetworkGraph& net) {
  for (auto& n : net.mutable_nodes()) {
    if (n.group != kNewGroup) continue;
    n.group = n.name;
    net.add_group(ParamGroup{n.name});
  }
  net.groups().erase(std::string(kNewGroup));
}

SurgeryReport apply_growth(NetworkGraph& net, const GrowthPlan& plan, Rng& rng) {
  switch (plan.kind) {
    case GrowthKind::ReplaceClassifier: {
      if (plan.sizes.size() > 1) throw ConfigError("ReplaceClassifier takes at most one size");
      std::size_t classes = plan.classes.value_or(plan.sizes.empty() ? 0 : plan.sizes[0]);
      if (classes == 0) classes = net.node(kClassifierNode).dense_params().n_out();
      return replace_classifier(net, classes, rng, plan.init_stddev);
    }
    case GrowthKind::Deepen: return grow_deeper(net, plan, rng);
    case GrowthKind::Widen: return grow_wider(net, plan, rng);
    case GrowthKind::DeepenAndWiden: return grow_dwa(net, plan, rng);
    case GrowthKind::WidenTwice: return grow_wwa(net, plan, rng);
  }
  throw ConfigError("unknown growth kind");
}

}  // namespace growbrain
