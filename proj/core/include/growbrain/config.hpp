#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "growbrain/experiment.hpp"

namespace growbrain {

/// JSON experiment configuration. Every key is optional; missing keys take the
/// defaults of ExperimentConfig. Unknown keys raise ConfigError so typos are
/// not silently ignored.
///
///   {
///     "task": {"kind": "synthetic", "synthetic": {...}, "idx": {"images": p, "labels": p},
///              "source_labels": [...], "target_labels": [...],
///              "target_train_per_class": 30, "fractions": [0.5, 0.1, 0.4],
///              "sequence_overlaps": [0.5, 0.75]},
///     "hidden": [64, 64],
///     "methods": [{"name": "WA", "variant": "half",
///                  "plan": {"sizes": [32], "targets": [], "init": "Random",
///                           "init_stddev": 0.01, "gamma_init": 10,
///                           "insert_normscale": true}}],
///     "scenarios": ["All"],
///     "pretrain": {train}, "finetune": {train}, "source_regrow": {train},
///     "seeds": [1, 2, 3], "output_dir": "out", "probe": {"steps": 200, "lr": 0.1}
///   }
///
/// {train} keys: base_lr, momentum, weight_decay, epochs, step_epochs,
/// step_factor, batch_size.
ExperimentConfig parse_experiment_config(std::string_view json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Fully resolved configuration, every key present.
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// {"config": ..., "rows": [...], "aggregates": [...]}
std::string results_to_json(const ResultsTable& table, const ExperimentConfig& cfg);

}  // namespace growbrain
