#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "growbrain/analysis.hpp"
#include "growbrain/checkpoint.hpp"
#include "growbrain/config.hpp"
#include "growbrain/experiment.hpp"

namespace fs = std::filesystem;
using namespace growbrain;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", c.seed, "seed (default: first seed of the config)");
  cmd->add_option("--out", c.out, "output directory (default: config output_dir)");
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
}

struct Resolved {
  ExperimentConfig cfg;
  std::uint64_t seed = 0;
  fs::path out;
};

// Loads the config, applies --seed / --out and copies the result into the output directory.
Resolved resolve(const Common& c, bool single_seed) {
  Resolved r;
  r.cfg = load_experiment_config(c.config);
  if (c.seed) r.cfg.seeds = {*c.seed};
  if (!c.out.empty()) r.cfg.output_dir = c.out;
  if (r.cfg.output_dir.empty()) r.cfg.output_dir = "out";
  if (single_seed) r.cfg.seeds.resize(1);
  r.cfg.validate();
  r.seed = r.cfg.seeds.front();
  r.out = r.cfg.output_dir;
  fs::create_directories(r.out);
  write_text(r.out / "config.json", experiment_config_to_json(r.cfg));
  return r;
}

void write_results(const Resolved& r, const ResultsTable& table) {
  write_text(r.out / "results.csv", table.to_csv());
  write_text(r.out / "results.json", results_to_json(table, r.cfg));
}

MethodConfig find_method(const ExperimentConfig& cfg, const std::string& name,
                         const std::string& variant) {
  for (const auto& m : cfg.methods)
    if (m.name == name && (variant.empty() || m.variant == variant)) return m;
  if (!variant.empty())
    throw ConfigError("config has no method " + name + " with variant '" + variant + "'");
  MethodConfig m;
  m.name = name;
  m.variant = "default";
  m.plan.kind = method_growth_kind(name);
  return m;
}

const Dataset& pick_split(const PreparedTasks& t, const std::string& split) {
  if (split == "source_train") return t.source.train;
  if (split == "source_val") return t.source.val;
  if (split == "source_test") return t.source.test;
  if (split == "target_train") return t.target.train;
  if (split == "target_val") return t.target.val;
  if (split == "target_test") return t.target.test;
  throw ConfigError("unknown split '" + split +
                    "' (expected {source,target}_{train,val,test})");
}

ResultRow single_row(std::string method, std::string variant, std::string scenario,
                     std::uint64_t seed, std::string split, double acc, const NetworkGraph& net) {
  ResultRow row;
  row.method = std::move(method);
  row.variant = std::move(variant);
  row.scenario = std::move(scenario);
  row.seed = seed;
  row.split = std::move(split);
  row.accuracy = acc;
  row.parameters = net.parameter_count();
  return row;
}

void print_table(const ResultsTable& table) {
  std::cout << "method,variant,scenario,split,count,failures,mean,stddev\n";
  for (const auto& a : table.aggregate())
    std::cout << a.method << ',' << a.variant << ',' << a.scenario << ',' << a.split << ','
              << a.count << ',' << a.failures << ',' << a.mean << ',' << a.stddev << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"growbrain: developmental transfer learning on CPU"};
  app.require_subcommand(1);

  Common c;
  std::string checkpoint, method = "WA", variant, scenario = "All", split = "target_test",
                           node, mode = "grid";
  std::size_t unit = 0, k = 5;

  auto* pretrain = app.add_subcommand("pretrain", "train the base network on the source task");
  add_common(pretrain, c);

  auto* grow = app.add_subcommand("grow", "apply a method's surgery to a checkpoint");
  add_common(grow, c);
  grow->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
  grow->add_option("--method", method, "Baseline-FT, DA, WA, DWA or WWA");
  grow->add_option("--variant", variant, "method variant from the config");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a checkpoint on the target task");
  add_common(finetune, c);
  finetune->add_option("--checkpoint", checkpoint, "input checkpoint")->required();
  finetune->add_option("--scenario", scenario, "NewOnly, FromTopMinus1, FromTopMinus2 or All");
  finetune->add_option("--method", method, "method label for the results row");
  finetune->add_option("--variant", variant, "variant label for the results row");

  auto* eval = app.add_subcommand("eval", "macro accuracy of a checkpoint on one split");
  add_common(eval, c);
  eval->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  eval->add_option("--split", split, "{source,target}_{train,val,test}");

  auto* experiment = app.add_subcommand("experiment", "run the method x scenario x seed grid");
  add_common(experiment, c);
  experiment->add_option("--mode", mode, "grid or progressive")
      ->check(CLI::IsMember({"grid", "progressive"}));

  auto* curves = app.add_subcommand("curves", "per-block learning curves of a WA fine-tune");
  add_common(curves, c);
  curves->add_option("--checkpoint", checkpoint, "pre-trained checkpoint (default: pretrain now)");
  curves->add_option("--method", method, "width-augmenting method");
  curves->add_option("--variant", variant, "method variant from the config");
  curves->add_option("--scenario", scenario, "fine-tuning scenario");

  auto* maxact = app.add_subcommand("maxact", "top-k samples activating a unit");
  add_common(maxact, c);
  maxact->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  maxact->add_option("--node", node, "node name")->required();
  maxact->add_option("--unit", unit, "unit index")->required();
  maxact->add_option("--k", k, "number of samples");
  maxact->add_option("--split", split, "{source,target}_{train,val,test}");

  auto* continual = app.add_subcommand("continual", "grow through a task sequence");
  add_common(continual, c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) {
      const auto r = resolve(c, true);
      const auto tasks = prepare_tasks(r.cfg.task, r.seed);
      RunResult run;
      const auto net = pretrain_source(r.cfg, tasks, r.seed, &run);
      save_checkpoint(net, r.out / "pretrained.ckpt");
      write_text(r.out / "curves.csv", run_curves_csv(run));
      ResultsTable table;
      table.add(single_row("pretrain", "default", "All", r.seed, std::string(kSourceTestSplit),
                           evaluate(net, tasks.source.test), net));
      write_results(r, table);
      std::cout << "source_test accuracy " << table.rows().front().accuracy << '\n';
    } else if (grow->parsed()) {
      const auto r = resolve(c, true);
      const auto tasks = prepare_tasks(r.cfg.task, r.seed);
      auto net = load_checkpoint(checkpoint);
      const auto m = find_method(r.cfg, method, variant);
      Rng rng(derive_seed(r.seed, "surgery"));
      const auto report = apply_growth(net, resolve_plan(m, net, tasks.target.train.class_count), rng);
      save_checkpoint(net, r.out / "grown.ckpt");
      std::cout << "added";
      for (const auto& a : report.added) std::cout << ' ' << a;
      std::cout << "\nparameter_delta " << report.parameter_delta << '\n';
    } else if (finetune->parsed()) {
      const auto r = resolve(c, true);
      const auto tasks = prepare_tasks(r.cfg.task, r.seed);
      auto net = load_checkpoint(checkpoint);
      const Scenario sc = scenario_from_string(scenario);
      apply_scenario(net, sc);
      TrainConfig ft = r.cfg.finetune;
      ft.seed = derive_seed(r.seed, "finetune");
      ft.scenario = sc;
      const auto run = train(net, tasks.target.train, tasks.target.val, ft);
      save_checkpoint(net, r.out / "final.ckpt");
      write_text(r.out / "curves.csv", run_curves_csv(run));
      ResultsTable table;
      table.add(single_row(method, variant.empty() ? "default" : variant, scenario, r.seed,
                           std::string(kTargetTestSplit), evaluate(net, tasks.target.test), net));
      write_results(r, table);
      std::cout << "target_test accuracy " << table.rows().front().accuracy << '\n';
    } else if (eval->parsed()) {
      const auto r = resolve(c, true);
      const auto tasks = prepare_tasks(r.cfg.task, r.seed);
      const auto net = load_checkpoint(checkpoint);
      ResultsTable table;
      table.add(single_row("eval", fs::path(checkpoint).stem().string(), "-", r.seed, split,
                           evaluate(net, pick_split(tasks, split)), net));
      write_results(r, table);
      std::cout << split << " accuracy " << table.rows().front().accuracy << '\n';
    } else if (experiment->parsed()) {
      const auto r = resolve(c, false);
      const auto table = mode == "grid" ? run_experiment(r.cfg) : progressive_vs_fixed(r.cfg);
      print_table(table);
    } else if (curves->parsed()) {
      const auto r = resolve(c, true);
      const auto tasks = prepare_tasks(r.cfg.task, r.seed);
      const auto base =
          checkpoint.empty() ? pretrain_source(r.cfg, tasks, r.seed) : load_checkpoint(checkpoint);
      const auto m = find_method(r.cfg, method, variant);
      const auto out = run_cell_with_block_curves(r.cfg, base, tasks, m,
                                                  scenario_from_string(scenario), r.seed);
      std::ostringstream os;
      os.precision(17);
      os << "epoch,old_block,new_block,combined\n";
      for (std::size_t e = 0; e < out.blocks.combined.size(); ++e)
        os << e << ',' << out.blocks.old_block[e] << ',' << out.blocks.new_block[e] << ','
           << out.blocks.combined[e] << '\n';
      write_text(r.out / "block_curves.csv", os.str());
      write_text(r.out / "curves.csv", run_curves_csv(out.cell.run));
      save_checkpoint(out.cell.net, r.out / "final.ckpt");
      ResultsTable table;
      table.add(single_row(m.name, m.variant.empty() ? "default" : m.variant, scenario, r.seed,
                           std::string(kTargetTestSplit), out.cell.accuracy, out.cell.net));
      write_results(r, table);
      std::cout << os.str();
    } else if (maxact->parsed()) {
      const auto r = resolve(c, true);
      const auto tasks = prepare_tasks(r.cfg.task, r.seed);
      const auto net = load_checkpoint(checkpoint);
      const auto& data = pick_split(tasks, split);
      const auto top = max_activating(net, node, unit, data, k);
      std::ostringstream os;
      os.precision(17);
      os << "rank,index,label,value\n";
      for (std::size_t i = 0; i < top.size(); ++i)
        os << i << ',' << top[i].index << ',' << data.labels[top[i].index] << ',' << top[i].value
           << '\n';
      write_text(r.out / "maxact.csv", os.str());
      std::cout << os.str();
    } else if (continual->parsed()) {
      const auto r = resolve(c, false);
      print_table(continual_transfer(r.cfg));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
