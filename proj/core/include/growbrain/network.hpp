#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "growbrain/layers.hpp"
#include "growbrain/matrix.hpp"
#include "growbrain/rng.hpp"

namespace growbrain {

enum class LayerKind { Dense, ReLU, NormScale, Concat, SoftmaxXent };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view s);

/// Reserved node name for the network input batch.
inline constexpr std::string_view kInputNode = "input";
/// Group holding every layer created for the target task (classifier, growth).
inline constexpr std::string_view kNewGroup = "new";
inline constexpr std::string_view kClassifierNode = "classifier";
inline constexpr std::string_view kLossNode = "loss";

/// Shared optimizer policy for a set of tensors.
struct ParamGroup {
  std::string name;
  double lr_multiplier = 1.0;
  bool frozen = false;
  bool decay_enabled = true;

  friend bool operator==(const ParamGroup&, const ParamGroup&) = default;
};

using LayerParams = std::variant<std::monostate, DenseParams, NormScaleParams>;

struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::ReLU;
  std::vector<std::string> inputs;
  LayerParams params;
  std::string group;

  static LayerNode dense(std::string name, std::string input, Matrix weights, std::string group);
  static LayerNode relu(std::string name, std::string input, std::string group);
  static LayerNode normscale(std::string name, std::string input, NormScaleParams p,
                             std::string group);
  static LayerNode concat(std::string name, std::vector<std::string> inputs, std::string group);
  static LayerNode softmax_xent(std::string name, std::string input, std::string group);

  DenseParams& dense_params();
  const DenseParams& dense_params() const;
  NormScaleParams& norm_params();
  const NormScaleParams& norm_params() const;

  std::size_t parameter_count() const;
};

/// Bitwise equality of wiring, groups and every parameter value.
bool same_node(const LayerNode& a, const LayerNode& b);

/// Acyclic layer graph kept in a topological order. Holds the feature
/// module (everything up to `feature_output`) and the classifier head.
class NetworkGraph {
 public:
  explicit NetworkGraph(std::size_t input_width = 0) : input_width_(input_width) {}

  std::size_t input_width() const noexcept { return input_width_; }

  const std::vector<LayerNode>& nodes() const noexcept { return nodes_; }
  std::vector<LayerNode>& mutable_nodes() noexcept { return nodes_; }

  bool contains(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  LayerNode& node(std::string_view name);
  const LayerNode& node(std::string_view name) const;

  void append(LayerNode n);
  /// Inserts `n` immediately after `anchor` in evaluation order.
  void insert_after(std::string_view anchor, LayerNode n);
  void insert_before(std::string_view anchor, LayerNode n);
  /// Names of nodes listing `name` among their inputs.
  std::vector<std::string> consumers(std::string_view name) const;

  /// Replaces the evaluation order; must be a permutation that keeps every
  /// input ahead of its consumer.
  void reorder(std::span<const std::string> order);

  std::map<std::string, ParamGroup, std::less<>>& groups() noexcept { return groups_; }
  const std::map<std::string, ParamGroup, std::less<>>& groups() const noexcept { return groups_; }
  ParamGroup& group(std::string_view name);
  const ParamGroup& group(std::string_view name) const;
  void add_group(ParamGroup g);

  const std::string& output() const noexcept { return output_; }
  void set_output(std::string name) { output_ = std::move(name); }
  const std::string& feature_output() const noexcept { return feature_output_; }
  void set_feature_output(std::string name) { feature_output_ = std::move(name); }

  const std::vector<std::string>& provenance() const noexcept { return provenance_; }
  void add_provenance(std::string entry) { provenance_.push_back(std::move(entry)); }

  /// Output width of every node, including kInputNode. Throws ShapeError
  /// when the wiring is inconsistent.
  std::map<std::string, std::size_t, std::less<>> widths() const;
  /// Checks only the nodes up to and including `name`.
  std::size_t width_of(std::string_view name) const;

  std::size_t parameter_count() const;

  /// Checks acyclicity, the single-input rule for non-Concat nodes, the
  /// classifier/loss contract and every shape. Throws ConfigError or ShapeError.
  void validate() const;

  friend bool operator==(const NetworkGraph& a, const NetworkGraph& b);

 private:
  std::map<std::string, std::size_t, std::less<>> widths_until(std::string_view stop) const;

  std::size_t input_width_ = 0;
  std::vector<LayerNode> nodes_;
  std::map<std::string, ParamGroup, std::less<>> groups_;
  std::string output_;
  std::string feature_output_;
  std::vector<std::string> provenance_;
};

struct WeightInit {
  enum class Scheme { Gaussian, He };
  Scheme scheme = Scheme::He;
  /// Used by Scheme::Gaussian.
  double stddev = 0.01;
};

/// widths = {input, hidden..., classes}. Builds fcK -> reluK per hidden layer,
/// a "classifier" Dense and a "loss" node. Every Dense gets its own group
/// (named after the layer) with multiplier 1. Biases start at 0.
NetworkGraph build_mlp(std::span<const std::size_t> widths, Rng& rng, WeightInit init = {});

/// Weights for a fresh n_out x (n_in + 1) Dense: N(0, stddev) with a zero bias column.
Matrix init_dense_weights(Rng& rng, std::size_t n_out, std::size_t n_in, double stddev);

/// Output of every evaluated node for one batch, keyed by node name, plus
/// the batch itself under kInputNode. The loss node stores softmax probabilities.
using ForwardCache = std::map<std::string, Matrix, std::less<>>;

struct ForwardResult {
  ForwardCache cache;
  std::optional<double> loss;
};

ForwardResult forward(const NetworkGraph& net, const Matrix& batch,
                      std::optional<std::span<const Label>> labels = std::nullopt);

/// Gradients of the mean loss. `params` has an entry for every parameterised
/// node, frozen or not; `activations` holds dLoss/d(node output) for every
/// node on a path to the loss, including kInputNode.
struct ParamGrad {
  Matrix d_weights;
  std::vector<double> d_gamma;
};

struct Gradients {
  std::map<std::string, ParamGrad, std::less<>> params;
  std::map<std::string, Matrix, std::less<>> activations;
};

Gradients backward(const NetworkGraph& net, const ForwardCache& cache,
                   std::span<const Label> labels);

/// Output of one node for `batch` (runs the full forward pass).
Matrix node_activations(const NetworkGraph& net, const Matrix& batch, std::string_view node);

}  // namespace growbrain
