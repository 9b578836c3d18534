#include "growbrain/network.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "growbrain/error.hpp"

namespace growbrain {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::NormScale: return "NormScale";
    case LayerKind::Concat: return "Concat";
    case LayerKind::SoftmaxXent: return "SoftmaxXent";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view s) {
  for (auto k : {LayerKind::Dense, LayerKind::ReLU, LayerKind::NormScale, LayerKind::Concat,
                 LayerKind::SoftmaxXent}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

LayerNode LayerNode::dense(std::string name, std::string input, Matrix weights,
                           std::string group) {
  return LayerNode{std::move(name), LayerKind::Dense, {std::move(input)},
                   DenseParams{std::move(weights)}, std::move(group)};
}

LayerNode LayerNode::relu(std::string name, std::string input, std::string group) {
  return LayerNode{std::move(name), LayerKind::ReLU, {std::move(input)}, {}, std::move(group)};
}

LayerNode LayerNode::normscale(std::string name, std::string input, NormScaleParams p,
                               std::string group) {
  return LayerNode{std::move(name), LayerKind::NormScale, {std::move(input)}, std::move(p),
                   std::move(group)};
}

LayerNode LayerNode::concat(std::string name, std::vector<std::string> inputs,
                            std::string group) {
  return LayerNode{std::move(name), LayerKind::Concat, std::move(inputs), {}, std::move(group)};
}

LayerNode LayerNode::softmax_xent(std::string name, std::string input, std::string group) {
  return LayerNode{std::move(name), LayerKind::SoftmaxXent, {std::move(input)}, {},
                   std::move(group)};
}

DenseParams& LayerNode::dense_params() {
  if (auto* p = std::get_if<DenseParams>(&params)) return *p;
  throw InternalError("node '" + name + "' has no dense parameters");
}

const DenseParams& LayerNode::dense_params() const {
  if (const auto* p = std::get_if<DenseParams>(&params)) return *p;
  throw InternalError("node '" + name + "' has no dense parameters");
}

NormScaleParams& LayerNode::norm_params() {
  if (auto* p = std::get_if<NormScaleParams>(&params)) return *p;
  throw InternalError("node '" + name + "' has no normscale parameters");
}

const NormScaleParams& LayerNode::norm_params() const {
  if (const auto* p = std::get_if<NormScaleParams>(&params)) return *p;
  throw InternalError("node '" + name + "' has no normscale parameters");
}

std::size_t LayerNode::parameter_count() const {
  if (const auto* d = std::get_if<DenseParams>(&params)) return d->weights.size();
  if (const auto* n = std::get_if<NormScaleParams>(&params)) return n->gamma.size();
  return 0;
}

namespace {

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return Matrix(1, a.size(), a) == Matrix(1, b.size(), b);
}

}  // namespace

bool same_node(const LayerNode& a, const LayerNode& b) {
  if (a.name != b.name || a.kind != b.kind || a.inputs != b.inputs || a.group != b.group ||
      a.params.index() != b.params.index())
    return false;
  if (const auto* d = std::get_if<DenseParams>(&a.params))
    return d->weights == std::get<DenseParams>(b.params).weights;
  if (const auto* n = std::get_if<NormScaleParams>(&a.params)) {
    const auto& m = std::get<NormScaleParams>(b.params);
    return bitwise_equal(n->gamma, m.gamma) && bitwise_equal({n->epsilon}, {m.epsilon});
  }
  return true;
}

bool NetworkGraph::contains(std::string_view name) const { return index_of(name).has_value(); }

std::optional<std::size_t> NetworkGraph::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].name == name) return i;
  return std::nullopt;
}

LayerNode& NetworkGraph::node(std::string_view name) {
  if (auto i = index_of(name)) return nodes_[*i];
  throw ConfigError("no node named '" + std::string(name) + "'");
}

const LayerNode& NetworkGraph::node(std::string_view name) const {
  if (auto i = index_of(name)) return nodes_[*i];
  throw ConfigError("no node named '" + std::string(name) + "'");
}

void NetworkGraph::append(LayerNode n) {
  if (n.name == kInputNode || contains(n.name))
    throw ConfigError("duplicate node name '" + n.name + "'");
  nodes_.push_back(std::move(n));
}

void NetworkGraph::insert_after(std::string_view anchor, LayerNode n) {
  if (n.name == kInputNode || contains(n.name))
    throw ConfigError("duplicate node name '" + n.name + "'");
  std::size_t pos = 0;
  if (anchor != kInputNode) {
    auto i = index_of(anchor);
    if (!i) throw ConfigError("no node named '" + std::string(anchor) + "'");
    pos = *i + 1;
  }
  nodes_.insert(nodes_.begin() + static_cast<std::ptrdiff_t>(pos), std::move(n));
}

void NetworkGraph::insert_before(std::string_view anchor, LayerNode n) {
  if (n.name == kInputNode || contains(n.name))
    throw ConfigError("duplicate node name '" + n.name + "'");
  auto i = index_of(anchor);
  if (!i) throw ConfigError("no node named '" + std::string(anchor) + "'");
  nodes_.insert(nodes_.begin() + static_cast<std::ptrdiff_t>(*i), std::move(n));
}

std::vector<std::string> NetworkGraph::consumers(std::string_view name) const {
  std::vector<std::string> out;
  for (const auto& n : nodes_)
    if (std::find(n.inputs.begin(), n.inputs.end(), name) != n.inputs.end()) out.push_back(n.name);
  return out;
}

void NetworkGraph::reorder(std::span<const std::string> order) {
  if (order.size() != nodes_.size())
    throw ConfigError("reorder: order lists " + std::to_string(order.size()) + " nodes, graph has " +
                      std::to_string(nodes_.size()));
  std::vector<LayerNode> next;
  next.reserve(nodes_.size());
  std::set<std::string, std::less<>> seen{std::string(kInputNode)};
  for (const auto& name : order) {
    const auto& n = node(name);
    if (seen.count(name)) throw ConfigError("reorder: node '" + name + "' listed twice");
    for (const auto& in : n.inputs)
      if (!seen.count(in))
        throw ConfigError("reorder: '" + name + "' placed before its input '" + in + "'");
    seen.insert(name);
    next.push_back(n);
  }
  nodes_ = std::move(next);
}

ParamGroup& NetworkGraph::group(std::string_view name) {
  auto it = groups_.find(name);
  if (it == groups_.end()) throw ConfigError("no parameter group '" + std::string(name) + "'");
  return it->second;
}

const ParamGroup& NetworkGraph::group(std::string_view name) const {
  auto it = groups_.find(name);
  if (it == groups_.end()) throw ConfigError("no parameter group '" + std::string(name) + "'");
  return it->second;
}

void NetworkGraph::add_group(ParamGroup g) {
  auto name = g.name;
  groups_.insert_or_assign(std::move(name), std::move(g));
}

std::map<std::string, std::size_t, std::less<>> NetworkGraph::widths() const {
  return widths_until({});
}

std::map<std::string, std::size_t, std::less<>> NetworkGraph::widths_until(
    std::string_view stop) const {
  std::map<std::string, std::size_t, std::less<>> w;
  w.emplace(std::string(kInputNode), input_width_);
  for (const auto& n : nodes_) {
    if (n.inputs.empty()) throw ConfigError("node '" + n.name + "' has no inputs");
    std::vector<std::size_t> in;
    for (const auto& name : n.inputs) {
      auto it = w.find(name);
      if (it == w.end())
        throw ConfigError("node '" + n.name + "' reads '" + name +
                          "', which is not an earlier node");
      in.push_back(it->second);
    }
    if (n.kind != LayerKind::Concat && in.size() != 1)
      throw ConfigError("node '" + n.name + "' of kind " + std::string(to_string(n.kind)) +
                        " must have exactly one input");
    std::size_t out = in.front();
    switch (n.kind) {
      case LayerKind::Dense: {
        const auto& p = n.dense_params();
        if (p.n_in() != in.front())
          throw ShapeError("node '" + n.name + "': weights " + p.weights.shape_string() +
                           " do not accept input width " + std::to_string(in.front()));
        out = p.n_out();
        break;
      }
      case LayerKind::NormScale:
        if (n.norm_params().gamma.size() != in.front())
          throw ShapeError("node '" + n.name + "': " +
                           std::to_string(n.norm_params().gamma.size()) +
                           " scales for input width " + std::to_string(in.front()));
        if (!(n.norm_params().epsilon > 0.0))
          throw ConfigError("node '" + n.name + "': epsilon must be positive");
        break;
      case LayerKind::Concat:
        out = 0;
        for (auto v : in) out += v;
        break;
      case LayerKind::ReLU:
      case LayerKind::SoftmaxXent:
        break;
    }
    w.emplace(n.name, out);
    if (n.name == stop) break;
  }
  return w;
}

std::size_t NetworkGraph::width_of(std::string_view name) const {
  auto w = widths_until(name);
  auto it = w.find(name);
  if (it == w.end()) throw ConfigError("no node named '" + std::string(name) + "'");
  return it->second;
}

std::size_t NetworkGraph::parameter_count() const {
  std::size_t total = 0;
  for (const auto& n : nodes_) total += n.parameter_count();
  return total;
}

void NetworkGraph::validate() const {
  auto w = widths();
  std::size_t losses = 0;
  for (const auto& n : nodes_) {
    if (n.kind == LayerKind::SoftmaxXent) ++losses;
    if (!groups_.count(n.group))
      throw ConfigError("node '" + n.name + "' references unknown group '" + n.group + "'");
  }
  if (losses != 1)
    throw ConfigError("network must have exactly one SoftmaxXent node, found " +
                      std::to_string(losses));
  const auto& loss = node(output_);
  if (loss.kind != LayerKind::SoftmaxXent)
    throw ConfigError("output node '" + output_ + "' is not a SoftmaxXent node");
  const auto& cls = node(loss.inputs.front());
  if (cls.kind != LayerKind::Dense)
    throw ConfigError("loss node must be fed by a Dense classifier, got '" + cls.name + "'");
  if (cls.inputs.front() != feature_output_)
    throw ConfigError("classifier reads '" + cls.inputs.front() + "' but feature_output is '" +
                      feature_output_ + "'");
  if (w.at(feature_output_) != cls.dense_params().n_in())
    throw ShapeError("feature_output width does not match classifier input width");
}

bool operator==(const NetworkGraph& a, const NetworkGraph& b) {
  if (a.input_width_ != b.input_width_ || a.nodes_.size() != b.nodes_.size() ||
      a.groups_ != b.groups_ || a.output_ != b.output_ ||
      a.feature_output_ != b.feature_output_ || a.provenance_ != b.provenance_)
    return false;
  for (std::size_t i = 0; i < a.nodes_.size(); ++i)
    if (!same_node(a.nodes_[i], b.nodes_[i])) return false;
  return true;
}

Matrix init_dense_weights(Rng& rng, std::size_t n_out, std::size_t n_in, double stddev) {
  Matrix w(n_out, n_in + 1);
  for (std::size_t o = 0; o < n_out; ++o)
    for (std::size_t i = 0; i < n_in; ++i) w(o, i) = rng.normal(0.0, stddev);
  return w;
}

NetworkGraph build_mlp(std::span<const std::size_t> widths, Rng& rng, WeightInit init) {
  if (widths.size() < 3)
    throw ConfigError("build_mlp needs input, at least one hidden layer and a class count");
  for (auto v : widths)
    if (v == 0) throw ConfigError("build_mlp: layer widths must be positive");
  if (widths.back() < 2) throw ConfigError("build_mlp: need at least 2 classes");

  auto stddev_for = [&](std::size_t fan_in) {
    return init.scheme == WeightInit::Scheme::He ? std::sqrt(2.0 / static_cast<double>(fan_in))
                                                 : init.stddev;
  };

  NetworkGraph net(widths.front());
  std::string prev(kInputNode);
  for (std::size_t k = 1; k + 1 < widths.size(); ++k) {
    const auto idx = std::to_string(k);
    const std::string fc = "fc" + idx;
    const std::string relu = "relu" + idx;
    net.add_group(ParamGroup{fc});
    net.append(LayerNode::dense(fc, prev,
                                init_dense_weights(rng, widths[k], widths[k - 1],
                                                   stddev_for(widths[k - 1])),
                                fc));
    net.append(LayerNode::relu(relu, fc, fc));
    prev = relu;
  }
  const std::size_t feat = widths[widths.size() - 2];
  net.add_group(ParamGroup{std::string(kClassifierNode)});
  net.append(LayerNode::dense(std::string(kClassifierNode), prev,
                              init_dense_weights(rng, widths.back(), feat, stddev_for(feat)),
                              std::string(kClassifierNode)));
  net.append(LayerNode::softmax_xent(std::string(kLossNode), std::string(kClassifierNode),
                                     std::string(kClassifierNode)));
  net.set_output(std::string(kLossNode));
  net.set_feature_output(prev);
  net.validate();
  return net;
}

namespace {

const Matrix& cached(const ForwardCache& cache, const std::string& name) {
  auto it = cache.find(name);
  if (it == cache.end()) throw InternalError("forward cache has no entry for '" + name + "'");
  return it->second;
}

Matrix eval_node(const LayerNode& n, const ForwardCache& cache) {
  try {
    switch (n.kind) {
      case LayerKind::Dense: return dense_forward(n.dense_params(), cached(cache, n.inputs[0]));
      case LayerKind::ReLU: return relu_apply(cached(cache, n.inputs[0]));
      case LayerKind::NormScale:
        return normscale_forward(n.norm_params(), cached(cache, n.inputs[0]));
      case LayerKind::Concat: {
        std::vector<const Matrix*> blocks;
        for (const auto& in : n.inputs) blocks.push_back(&cached(cache, in));
        return concat_forward(blocks);
      }
      case LayerKind::SoftmaxXent: return softmax(cached(cache, n.inputs[0]));
    }
  } catch (const ShapeError& e) {
    throw ShapeError("node '" + n.name + "': " + e.what());
  }
  throw InternalError("unhandled layer kind");
}

void accumulate(std::map<std::string, Matrix, std::less<>>& grads, const std::string& name,
                Matrix g) {
  auto it = grads.find(name);
  if (it == grads.end()) {
    grads.emplace(name, std::move(g));
    return;
  }
  auto dst = it->second.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

ForwardResult forward(const NetworkGraph& net, const Matrix& batch,
                      std::optional<std::span<const Label>> labels) {
  if (batch.cols() != net.input_width())
    throw ShapeError("input batch " + batch.shape_string() + " does not match input width " +
                     std::to_string(net.input_width()));
  ForwardResult r;
  r.cache.emplace(std::string(kInputNode), batch);
  for (const auto& n : net.nodes()) r.cache.insert_or_assign(n.name, eval_node(n, r.cache));
  if (labels) {
    const auto& loss = net.node(net.output());
    r.loss = softmax_xent(cached(r.cache, loss.inputs[0]), *labels).loss;
  }
  return r;
}

Matrix node_activations(const NetworkGraph& net, const Matrix& batch, std::string_view node) {
  if (node == kInputNode) return batch;
  if (!net.contains(node)) throw ConfigError("no node named '" + std::string(node) + "'");
  if (batch.cols() != net.input_width())
    throw ShapeError("input batch " + batch.shape_string() + " does not match input width " +
                     std::to_string(net.input_width()));
  ForwardCache cache;
  cache.emplace(std::string(kInputNode), batch);
  for (const auto& n : net.nodes()) {
    auto out = eval_node(n, cache);
    if (n.name == node) return out;
    cache.insert_or_assign(n.name, std::move(out));
  }
  throw InternalError("node_activations: node not reached");
}

Gradients backward(const NetworkGraph& net, const ForwardCache& cache,
                   std::span<const Label> labels) {
  Gradients g;
  auto& act = g.activations;
  const auto& nodes = net.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const LayerNode& n = *it;
    const Matrix& in0 = cached(cache, n.inputs[0]);
    if (n.kind == LayerKind::SoftmaxXent) {
      accumulate(act, n.inputs[0], softmax_xent(in0, labels).d_logits);
      continue;
    }
    auto upstream = act.find(n.name);
    const bool reached = upstream != act.end();
    switch (n.kind) {
      case LayerKind::Dense: {
        const auto& p = n.dense_params();
        if (!reached) {
          g.params[n.name].d_weights = Matrix(p.weights.rows(), p.weights.cols());
          break;
        }
        auto d = dense_backward(p, in0, upstream->second);
        g.params[n.name].d_weights = std::move(d.d_weights);
        accumulate(act, n.inputs[0], std::move(d.d_input));
        break;
      }
      case LayerKind::NormScale: {
        const auto& p = n.norm_params();
        if (!reached) {
          g.params[n.name].d_gamma.assign(p.gamma.size(), 0.0);
          break;
        }
        auto d = normscale_backward(p, in0, upstream->second);
        g.params[n.name].d_gamma = std::move(d.d_gamma);
        accumulate(act, n.inputs[0], std::move(d.d_input));
        break;
      }
      case LayerKind::ReLU:
        if (reached) accumulate(act, n.inputs[0], relu_backward(in0, upstream->second));
        break;
      case LayerKind::Concat: {
        if (!reached) break;
        std::vector<std::size_t> widths;
        for (const auto& in : n.inputs) widths.push_back(cached(cache, in).cols());
        auto parts = concat_backward(upstream->second, widths);
        for (std::size_t i = 0; i < parts.size(); ++i)
          accumulate(act, n.inputs[i], std::move(parts[i]));
        break;
      }
      case LayerKind::SoftmaxXent: break;
    }
  }
  return g;
}

}  // namespace growbrain
