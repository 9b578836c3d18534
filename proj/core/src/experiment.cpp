#include "growbrain/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "growbrain/checkpoint.hpp"
#include "growbrain/config.hpp"

namespace growbrain {

namespace {

constexpr std::string_view kBaseline = "Baseline-FT";

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

std::string cell_dir_name(const MethodConfig& m, Scenario s) {
  std::string name = m.name + "_" + (m.variant.empty() ? "default" : m.variant) + "_" +
                     std::string(to_string(s));
  for (char& c : name)
    if (c == '/' || c == ' ') c = '_';
  return name;
}

std::string variant_label(const MethodConfig& m) { return m.variant.empty() ? "default" : m.variant; }

ResultRow make_row(std::string method, std::string variant, std::string scenario,
                   std::uint64_t seed, std::string_view split, double accuracy) {
  ResultRow r;
  r.method = std::move(method);
  r.variant = std::move(variant);
  r.scenario = std::move(scenario);
  r.seed = seed;
  r.split = std::string(split);
  r.accuracy = accuracy;
  return r;
}

}  // namespace

std::string_view method_growth_name(GrowthKind kind) {
  switch (kind) {
    case GrowthKind::ReplaceClassifier: return kBaseline;
    case GrowthKind::Deepen: return "DA";
    case GrowthKind::Widen: return "WA";
    case GrowthKind::DeepenAndWiden: return "DWA";
    case GrowthKind::WidenTwice: return "WWA";
  }
  return "?";
}

GrowthKind method_growth_kind(std::string_view method) {
  for (auto k : {GrowthKind::ReplaceClassifier, GrowthKind::Deepen, GrowthKind::Widen,
                 GrowthKind::DeepenAndWiden, GrowthKind::WidenTwice}) {
    if (method_growth_name(k) == method) return k;
  }
  throw ConfigError("unknown method '" + std::string(method) +
                    "' (expected Baseline-FT, DA, WA, DWA or WWA)");
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("experiment needs at least one method");
  if (scenarios.empty()) throw ConfigError("experiment needs at least one scenario");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (hidden.empty()) throw ConfigError("experiment needs at least one hidden layer");
  for (auto h : hidden)
    if (h == 0) throw ConfigError("hidden widths must be positive");
  for (const auto& m : methods) {
    if (method_growth_kind(m.name) != m.plan.kind)
      throw ConfigError("method '" + m.name + "' has a plan of kind " +
                        std::string(to_string(m.plan.kind)));
  }
  pretrain.validate();
  finetune.validate();
  source_regrow.validate();
  if (task.kind == TaskConfig::Kind::Synthetic) {
    task.synth.validate();
  } else if (task.idx_images.empty() || task.idx_labels.empty()) {
    throw ConfigError("idx task needs image and label paths");
  }
  if (task.source_labels.size() < 2 || task.target_labels.size() < 2)
    throw ConfigError("idx tasks need at least 2 classes each");
  auto seeds_sorted = seeds;
  std::sort(seeds_sorted.begin(), seeds_sorted.end());
  if (std::adjacent_find(seeds_sorted.begin(), seeds_sorted.end()) != seeds_sorted.end())
    throw ConfigError("seeds must be distinct");
}

GrowthPlan resolve_plan(const MethodConfig& m, const NetworkGraph& net, std::size_t target_classes) {
  GrowthPlan plan = m.plan;
  plan.kind = method_growth_kind(m.name);
  plan.classes = target_classes;
  if (plan.kind == GrowthKind::ReplaceClassifier) {
    plan.sizes = {target_classes};
    return plan;
  }
  if (plan.sizes.empty()) {
    const auto hidden = hidden_dense_layers(net);
    if (hidden.empty()) throw ConfigError("network has no hidden layer to grow");
    const std::string host = plan.targets.empty() ? hidden.back() : plan.targets.back();
    const std::size_t n_k = net.node(host).dense_params().n_out();
    const std::size_t half = std::max<std::size_t>(1, n_k / 2);
    if (plan.kind == GrowthKind::WidenTwice)
      plan.sizes = {std::max<std::size_t>(1, half / 2), half};
    else
      plan.sizes = {half};
  }
  return plan;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed ^ h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ResultsTable::append(const ResultsTable& other) {
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

std::vector<CellAggregate> ResultsTable::aggregate() const {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<double>> ok;
  std::map<Key, std::size_t> failures;
  for (const auto& r : rows_) {
    Key k{r.method, r.variant, r.scenario, r.split};
    if (!ok.count(k) && !failures.count(k)) order.push_back(k);
    if (r.failed)
      ++failures[k];
    else
      ok[k].push_back(r.accuracy);
  }
  std::vector<CellAggregate> out;
  for (const auto& k : order) {
    CellAggregate a{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k)};
    const auto& v = ok[k];
    a.count = v.size();
    a.failures = failures.count(k) ? failures.at(k) : 0;
    if (!v.empty()) {
      for (double x : v) a.mean += x;
      a.mean /= static_cast<double>(v.size());
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
      }
    } else {
      a.mean = std::nan("");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<double> ResultsTable::values(std::string_view method, std::string_view variant,
                                         std::string_view scenario, std::string_view split) const {
  std::vector<double> v;
  for (const auto& r : rows_)
    if (!r.failed && r.method == method && r.variant == variant && r.scenario == scenario &&
        r.split == split)
      v.push_back(r.accuracy);
  return v;
}

double ResultsTable::mean(std::string_view method, std::string_view variant,
                          std::string_view scenario, std::string_view split) const {
  const auto v = values(method, variant, scenario, split);
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string ResultsTable::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "method,variant,scenario,seed,split,accuracy\n";
  for (const auto& r : rows_) {
    os << r.method << ',' << r.variant << ',' << r.scenario << ',' << r.seed << ',' << r.split
       << ',';
    if (r.failed)
      os << "failed";
    else
      os << r.accuracy;
    os << '\n';
  }
  return os.str();
}

std::string run_curves_csv(const RunResult& run) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_accuracy,val_micro_accuracy\n";
  for (std::size_t e = 0; e < run.train_loss.size(); ++e)
    os << e << ',' << run.train_loss[e] << ',' << run.val_accuracy[e] << ','
       << run.val_micro_accuracy[e] << '\n';
  return os.str();
}

PreparedTasks prepare_tasks(const TaskConfig& task, std::uint64_t seed) {
  Dataset source, target;
  if (task.kind == TaskConfig::Kind::Synthetic) {
    std::tie(source, target) = synth_transfer_tasks(seed, task.synth);
  } else {
    const auto all = load_idx(task.idx_images, task.idx_labels);
    source = select_classes(all, task.source_labels, "idx-source");
    target = select_classes(all, task.target_labels, "idx-target");
  }
  PreparedTasks p{split(source, task.fractions, derive_seed(seed, "split-source")),
                  split(target, task.fractions, derive_seed(seed, "split-target"))};
  if (task.target_train_per_class > 0)
    p.target.train = limit_per_class(p.target.train, task.target_train_per_class,
                                     derive_seed(seed, "scarcity"));
  return p;
}

NetworkGraph pretrain_source(const ExperimentConfig& cfg, const PreparedTasks& tasks,
                             std::uint64_t seed, RunResult* run) {
  std::vector<std::size_t> widths{tasks.source.train.dim()};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(tasks.source.train.class_count);
  Rng rng(derive_seed(seed, "init"));
  NetworkGraph net = build_mlp(widths, rng);
  TrainConfig pt = cfg.pretrain;
  pt.seed = derive_seed(seed, "pretrain");
  pt.scenario = Scenario::All;
  auto r = train(net, tasks.source.train, tasks.source.val, pt);
  if (run) *run = std::move(r);
  return net;
}

CellOutcome run_cell(const ExperimentConfig& cfg, const NetworkGraph& pretrained,
                     const PreparedTasks& tasks, const MethodConfig& method, Scenario scenario,
                     std::uint64_t seed, const EpochHook& on_epoch) {
  CellOutcome out{pretrained, {}, 0.0};
  const std::size_t classes = tasks.target.train.class_count;
  Rng rng(derive_seed(seed, "surgery"));
  apply_growth(out.net, resolve_plan(method, out.net, classes), rng);
  apply_scenario(out.net, scenario);
  TrainConfig ft = cfg.finetune;
  ft.seed = derive_seed(seed, "finetune");
  ft.scenario = scenario;
  out.run = train(out.net, tasks.target.train, tasks.target.val, ft, on_epoch);
  out.accuracy = evaluate(out.net, tasks.target.test);
  out.run.test_accuracy = out.accuracy;
  return out;
}

CellCurves run_cell_with_block_curves(const ExperimentConfig& cfg, const NetworkGraph& pretrained,
                                      const PreparedTasks& tasks, const MethodConfig& method,
                                      Scenario scenario, std::uint64_t seed) {
  std::vector<NetworkGraph> snapshots;
  const std::size_t epochs = cfg.finetune.epochs;
  auto hook = [&](std::size_t epoch, const NetworkGraph& net) {
    if (epoch + 1 < epochs) snapshots.push_back(net);
  };
  // The initial snapshot is the grown network before any update.
  {
    NetworkGraph start = pretrained;
    Rng rng(derive_seed(seed, "surgery"));
    apply_growth(start, resolve_plan(method, start, tasks.target.train.class_count), rng);
    width_blocks(start);
    snapshots.push_back(std::move(start));
  }
  CellCurves out{run_cell(cfg, pretrained, tasks, method, scenario, seed, hook), {}};
  out.blocks = block_learning_curves(snapshots, tasks.target.train, tasks.target.val, cfg.probe);
  return out;
}

ResultsTable run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const bool persist = !cfg.output_dir.empty();
  const std::filesystem::path root(cfg.output_dir);
  if (persist) {
    std::filesystem::create_directories(root);
    write_text(root / "config.json", experiment_config_to_json(cfg));
  }
  ResultsTable table;
  for (auto seed : cfg.seeds) {
    const auto tasks = prepare_tasks(cfg.task, seed);
    RunResult pre_run;
    const NetworkGraph base = pretrain_source(cfg, tasks, seed, &pre_run);
    const std::filesystem::path seed_dir = root / ("seed_" + std::to_string(seed));
    if (persist) {
      std::filesystem::create_directories(seed_dir);
      save_checkpoint(base, seed_dir / "pretrained.ckpt");
      write_text(seed_dir / "pretrain_curves.csv", run_curves_csv(pre_run));
    }
    for (const auto& m : cfg.methods) {
      for (auto scenario : cfg.scenarios) {
        ResultRow row = make_row(m.name, variant_label(m), std::string(to_string(scenario)),
                                 seed, kTargetTestSplit, 0.0);
        try {
          auto cell = run_cell(cfg, base, tasks, m, scenario, seed);
          row.accuracy = cell.accuracy;
          row.parameters = cell.net.parameter_count();
          if (persist) {
            const auto dir = seed_dir / cell_dir_name(m, scenario);
            std::filesystem::create_directories(dir);
            save_checkpoint(cell.net, dir / "final.ckpt");
            write_text(dir / "curves.csv", run_curves_csv(cell.run));
          }
        } catch (const Error& e) {
          row.failed = true;
          row.reason = e.what();
        }
        table.add(std::move(row));
      }
    }
  }
  if (persist) {
    write_text(root / "results.csv", table.to_csv());
    write_text(root / "results.json", results_to_json(table, cfg));
  }
  return table;
}

namespace {

MethodConfig make_method(std::string name, GrowthKind kind) {
  MethodConfig m;
  m.name = std::move(name);
  m.variant = "default";
  m.plan.kind = kind;
  return m;
}

MethodConfig wa_method(const ExperimentConfig& cfg) {
  for (const auto& m : cfg.methods)
    if (m.name == "WA") return m;
  return make_method("WA", GrowthKind::Widen);
}

MethodConfig baseline_method() {
  return make_method(std::string(kBaseline), GrowthKind::ReplaceClassifier);
}

void add_row(ResultsTable& t, std::string method, std::string variant, std::string scenario,
             std::uint64_t seed, std::string_view split, double acc, const NetworkGraph& net) {
  ResultRow r = make_row(std::move(method), std::move(variant), std::move(scenario), seed, split, acc);
  r.parameters = net.parameter_count();
  t.add(std::move(r));
}

void add_cell(ResultsTable& t, std::string method, std::string variant, std::string scenario,
              std::uint64_t seed, const CellOutcome& cell) {
  add_row(t, std::move(method), std::move(variant), std::move(scenario), seed, kTargetTestSplit,
          cell.accuracy, cell.net);
}

void add_failed(ResultsTable& t, std::string method, std::string variant, std::string scenario,
                std::uint64_t seed, std::string_view split, const std::string& reason) {
  ResultRow r = make_row(std::move(method), std::move(variant), std::move(scenario), seed, split, 0.0);
  r.failed = true;
  r.reason = reason;
  t.add(std::move(r));
}

void persist_table(const ExperimentConfig& cfg, const ResultsTable& table) {
  if (cfg.output_dir.empty()) return;
  const std::filesystem::path root(cfg.output_dir);
  std::filesystem::create_directories(root);
  write_text(root / "config.json", experiment_config_to_json(cfg));
  write_text(root / "results.csv", table.to_csv());
  write_text(root / "results.json", results_to_json(table, cfg));
}

}  // namespace

ResultsTable progressive_vs_fixed(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto wa = wa_method(cfg);
  const auto base_ft = baseline_method();
  ResultsTable table;
  for (auto seed : cfg.seeds) {
    const auto tasks = prepare_tasks(cfg.task, seed);
    const std::size_t source_classes = tasks.source.train.class_count;
    const NetworkGraph base = pretrain_source(cfg, tasks, seed);
    add_row(table, "CNN", "default", "-", seed, kSourceTestSplit, evaluate(base, tasks.source.test),
            base);

    // Wide topology trained from scratch on the source task.
    NetworkGraph wide;
    try {
      std::vector<std::size_t> widths{tasks.source.train.dim()};
      widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
      widths.push_back(source_classes);
      Rng init_rng(derive_seed(seed, "init"));
      wide = build_mlp(widths, init_rng);
      GrowthPlan plan = resolve_plan(wa, wide, source_classes);
      const auto host = hidden_dense_layers(wide).back();
      plan.init_stddev = std::sqrt(2.0 / static_cast<double>(wide.node(host).dense_params().n_in()));
      Rng grow_rng(derive_seed(seed, "wide-init"));
      apply_growth(wide, plan, grow_rng);
      promote_new_layers(wide);
      TrainConfig pt = cfg.pretrain;
      pt.seed = derive_seed(seed, "pretrain");
      pt.scenario = Scenario::All;
      train(wide, tasks.source.train, tasks.source.val, pt);
      add_row(table, "WA-scratch", variant_label(wa), "-", seed, kSourceTestSplit,
              evaluate(wide, tasks.source.test), wide);
    } catch (const Error& e) {
      add_failed(table, "WA-scratch", variant_label(wa), "-", seed, kSourceTestSplit, e.what());
    }

    // Standard net grown and trained further on the source task itself.
    try {
      NetworkGraph grown = base;
      Rng rng(derive_seed(seed, "surgery"));
      apply_growth(grown, resolve_plan(wa, grown, source_classes), rng);
      apply_scenario(grown, Scenario::All);
      TrainConfig rg = cfg.source_regrow;
      rg.seed = derive_seed(seed, "source-regrow");
      rg.scenario = Scenario::All;
      train(grown, tasks.source.train, tasks.source.val, rg);
      add_row(table, "WA-grow", variant_label(wa), "-", seed, kSourceTestSplit,
              evaluate(grown, tasks.source.test), grown);
    } catch (const Error& e) {
      add_failed(table, "WA-grow", variant_label(wa), "-", seed, kSourceTestSplit, e.what());
    }

    for (auto scenario : cfg.scenarios) {
      const std::string sc(to_string(scenario));
      try {
        add_cell(table, "CNN-FT", "default", sc, seed,
                 run_cell(cfg, base, tasks, base_ft, scenario, seed));
      } catch (const Error& e) {
        add_failed(table, "CNN-FT", "default", sc, seed, kTargetTestSplit, e.what());
      }
      try {
        if (wide.nodes().empty()) throw ConfigError("wide source network unavailable");
        add_cell(table, "WA-ori", variant_label(wa), sc, seed,
                 run_cell(cfg, wide, tasks, base_ft, scenario, seed));
      } catch (const Error& e) {
        add_failed(table, "WA-ori", variant_label(wa), sc, seed, kTargetTestSplit, e.what());
      }
      try {
        add_cell(table, "WA-grow", variant_label(wa), sc, seed,
                 run_cell(cfg, base, tasks, wa, scenario, seed));
      } catch (const Error& e) {
        add_failed(table, "WA-grow", variant_label(wa), sc, seed, kTargetTestSplit, e.what());
      }
    }
  }
  persist_table(cfg, table);
  return table;
}

ResultsTable continual_transfer(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.task.kind != TaskConfig::Kind::Synthetic)
    throw ConfigError("continual transfer needs a synthetic task sequence");
  const auto& overlaps = cfg.task.sequence_overlaps;
  if (overlaps.empty()) throw ConfigError("continual transfer needs at least 2 tasks");
  const auto wa = wa_method(cfg);
  ResultsTable table;
  for (auto seed : cfg.seeds) {
    auto raw = synth_task_sequence(seed, cfg.task.synth, overlaps);
    std::vector<SplitSets> splits;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const char* purpose = i == 0 ? "split-source" : "split-target";
      auto s = split(raw[i], cfg.task.fractions,
                     derive_seed(seed, i <= 1 ? purpose : "split-task" + std::to_string(i)));
      if (i + 1 == raw.size() && cfg.task.target_train_per_class > 0)
        s.train = limit_per_class(s.train, cfg.task.target_train_per_class,
                                  derive_seed(seed, "scarcity"));
      splits.push_back(std::move(s));
    }
    const PreparedTasks direct{splits.front(), splits.back()};
    const NetworkGraph base = pretrain_source(cfg, direct, seed);

    for (auto scenario : cfg.scenarios) {
      const std::string sc(to_string(scenario));
      if (overlaps.size() == 1) {
        try {
          add_cell(table, "WA", variant_label(wa), sc, seed,
                   run_cell(cfg, base, direct, wa, scenario, seed));
        } catch (const Error& e) {
          add_failed(table, "WA", variant_label(wa), sc, seed, kTargetTestSplit, e.what());
        }
        continue;
      }
      try {
        add_cell(table, "one-hop", variant_label(wa), sc, seed,
                 run_cell(cfg, base, direct, wa, scenario, seed));
      } catch (const Error& e) {
        add_failed(table, "one-hop", variant_label(wa), sc, seed, kTargetTestSplit, e.what());
      }
      try {
        NetworkGraph net = base;
        for (std::size_t hop = 1; hop < splits.size(); ++hop) {
          if (hop > 1) promote_new_layers(net);
          const auto& task = splits[hop];
          Rng rng(derive_seed(seed, "surgery-hop" + std::to_string(hop)));
          apply_growth(net, resolve_plan(wa, net, task.train.class_count), rng);
          apply_scenario(net, scenario);
          TrainConfig ft = cfg.finetune;
          ft.seed = derive_seed(seed, "finetune-hop" + std::to_string(hop));
          ft.scenario = scenario;
          train(net, task.train, task.val, ft);
        }
        add_row(table, "two-hop", variant_label(wa), sc, seed, kTargetTestSplit,
                evaluate(net, splits.back().test), net);
      } catch (const Error& e) {
        add_failed(table, "two-hop", variant_label(wa), sc, seed, kTargetTestSplit, e.what());
      }
    }
  }
  persist_table(cfg, table);
  return table;
}

}  // namespace growbrain
