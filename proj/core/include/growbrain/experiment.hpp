#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "growbrain/analysis.hpp"
#include "growbrain/dataset.hpp"
#include "growbrain/network.hpp"
#include "growbrain/surgery.hpp"
#include "growbrain/train.hpp"

namespace growbrain {

/// Where the source/target pair comes from.
struct TaskConfig {
  enum class Kind { Synthetic, Idx };
  Kind kind = Kind::Synthetic;
  TransferTaskSpec synth;
  std::string idx_images;
  std::string idx_labels;
  std::vector<Label> source_labels{0, 1, 2, 3, 4};
  std::vector<Label> target_labels{5, 6, 7, 8, 9};
  /// Training samples kept per target class after splitting; 0 keeps all.
  std::size_t target_train_per_class = 10;
  std::array<double, 3> fractions = kDefaultSplit;
  /// Overlaps between consecutive tasks of a continual sequence (synthetic only).
  std::vector<double> sequence_overlaps{0.25, 0.875};
};

/// One row of the method axis. `name` is one of Baseline-FT, DA, WA, DWA, WWA.
/// Sizes left empty in `plan` default to half the host layer (WWA: the
/// upper block gets half the host, the lower block half of that).
struct MethodConfig {
  std::string name;
  std::string variant;
  GrowthPlan plan;
};

struct ExperimentConfig {
  TaskConfig task;
  std::vector<std::size_t> hidden{64, 64};
  std::vector<MethodConfig> methods;
  std::vector<Scenario> scenarios{Scenario::All};
  /// Source training from scratch, base rate 0.01.
  TrainConfig pretrain{.base_lr = 0.01};
  TrainConfig finetune;
  /// Training recipe for source-task runs on a grown network (progressive arm).
  TrainConfig source_regrow;
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir;
  ProbeConfig probe;

  /// Throws ConfigError on an unusable configuration.
  void validate() const;
};

/// Growth plan for a method, sizes filled in for the given network.
GrowthPlan resolve_plan(const MethodConfig& m, const NetworkGraph& net, std::size_t target_classes);

std::string_view method_growth_name(GrowthKind kind);
GrowthKind method_growth_kind(std::string_view method);

struct ResultRow {
  std::string method;
  std::string variant;
  std::string scenario;
  std::uint64_t seed = 0;
  std::string split;
  double accuracy = 0.0;
  bool failed = false;
  std::string reason;
  /// Parameter count of the evaluated network (0 when failed).
  std::size_t parameters = 0;
};

struct CellAggregate {
  std::string method;
  std::string variant;
  std::string scenario;
  std::string split;
  std::size_t count = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  double stddev = 0.0;
};

class ResultsTable {
 public:
  void add(ResultRow row) { rows_.push_back(std::move(row)); }
  void append(const ResultsTable& other);
  const std::vector<ResultRow>& rows() const noexcept { return rows_; }

  /// Mean and sample stddev per (method, variant, scenario, split), failures excluded.
  std::vector<CellAggregate> aggregate() const;

  /// Successful accuracies of one cell in row order (i.e. seed order).
  std::vector<double> values(std::string_view method, std::string_view variant,
                             std::string_view scenario, std::string_view split) const;
  double mean(std::string_view method, std::string_view variant, std::string_view scenario,
              std::string_view split) const;

  /// header: method,variant,scenario,seed,split,accuracy
  std::string to_csv() const;

 private:
  std::vector<ResultRow> rows_;
};

inline constexpr std::string_view kTargetTestSplit = "target_test";
inline constexpr std::string_view kSourceTestSplit = "source_test";

/// Source and target splits for one seed.
struct PreparedTasks {
  SplitSets source;
  SplitSets target;
};

PreparedTasks prepare_tasks(const TaskConfig& task, std::uint64_t seed);

/// Independent stream derived from a seed and a purpose label.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose);

/// Builds {dim, hidden..., source classes} and trains it on the source task.
NetworkGraph pretrain_source(const ExperimentConfig& cfg, const PreparedTasks& tasks,
                             std::uint64_t seed, RunResult* run = nullptr);

struct CellOutcome {
  NetworkGraph net;
  RunResult run;
  double accuracy = 0.0;
};

/// Clone of `pretrained` grown per `method`, opened per `scenario`, fine-tuned
/// on the target task and scored on target test. Depends only on its
/// arguments, so a cell can be rerun in isolation from its checkpoint.
CellOutcome run_cell(const ExperimentConfig& cfg, const NetworkGraph& pretrained,
                     const PreparedTasks& tasks, const MethodConfig& method, Scenario scenario,
                     std::uint64_t seed, const EpochHook& on_epoch = {});

struct CellCurves {
  CellOutcome cell;
  BlockCurves blocks;
};

/// run_cell for a width-augmented method, probing the old block, the new
/// block and their concatenation at the start of every fine-tuning epoch
/// (probes fit on target train, scored on target val).
CellCurves run_cell_with_block_curves(const ExperimentConfig& cfg, const NetworkGraph& pretrained,
                                      const PreparedTasks& tasks, const MethodConfig& method,
                                      Scenario scenario, std::uint64_t seed);

/// Method x scenario x seed grid. Writes results.csv, results.json,
/// config.json, checkpoints and per-run curves.csv under output_dir when set.
ResultsTable run_experiment(const ExperimentConfig& cfg);

/// Arms at matched capacity: CNN-FT, WA-ori (wide net trained from scratch on
/// source, then fine-tuned) and WA-grow (standard net pre-trained, widened,
/// fine-tuned), on target test; plus source-test rows CNN, WA-scratch and
/// WA-grow (standard net pre-trained, widened, trained further on source).
/// Uses the first WA method of the config (or a default half-width plan).
ResultsTable progressive_vs_fixed(const ExperimentConfig& cfg);

/// Task chain A -> B -> ... -> Z (task.sequence_overlaps, >= 2 links):
/// "two-hop" grows at every task, "one-hop" goes A -> widen -> Z directly.
/// Only the final task is subsampled to target_train_per_class.
/// With a single link this reduces to the WA cell of run_experiment.
ResultsTable continual_transfer(const ExperimentConfig& cfg);

/// Per-epoch training log: epoch,train_loss,val_accuracy,val_micro_accuracy
std::string run_curves_csv(const RunResult& run);

}  // namespace growbrain
