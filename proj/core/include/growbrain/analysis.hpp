#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "growbrain/dataset.hpp"
#include "growbrain/network.hpp"

namespace growbrain {

struct UnitActivation {
  std::size_t index = 0;
  double value = 0.0;
};

/// Top-k samples by activation of `unit` at `node`, descending; ties by
/// ascending sample index.
std::vector<UnitActivation> max_activating(const NetworkGraph& net, std::string_view node,
                                           std::size_t unit, const Dataset& data, std::size_t k);

/// Full-batch softmax-regression probe with zero initial weights. Features are
/// divided by the root-mean-square row norm of the training features first so
/// that a fixed step size behaves the same for every block.
struct ProbeConfig {
  std::size_t steps = 200;
  double lr = 0.1;
};

double linear_probe_accuracy(const Matrix& train_x, std::span<const Label> train_y,
                             const Matrix& eval_x, std::span<const Label> eval_y,
                             std::size_t classes, const ProbeConfig& probe = {});

/// The two blocks joined by a width-augmentation concat.
struct WidthBlocks {
  std::string concat;
  std::string old_block;
  std::string new_block;
};

/// Blocks of `concat`, or of feature_output when `concat` is empty. Throws
/// ConfigError if that node is not a two-block Concat.
WidthBlocks width_blocks(const NetworkGraph& net, std::string_view concat = {});

struct BlockCurves {
  std::vector<double> old_block;
  std::vector<double> new_block;
  std::vector<double> combined;
};

/// Linear-probe accuracy per snapshot on the old block, the new block and
/// their concatenation: probes fit on `probe_train`, scored on `val`.
BlockCurves block_learning_curves(std::span<const NetworkGraph> snapshots,
                                  const Dataset& probe_train, const Dataset& val,
                                  const ProbeConfig& probe = {});

/// Mean L2 row norm of the new block divided by that of the old block, measured
/// at the concat inputs over `data`.
double block_norm_ratio(const NetworkGraph& net, const Dataset& data,
                        std::string_view concat = {});

}  // namespace growbrain
