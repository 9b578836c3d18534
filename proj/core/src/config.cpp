#include "growbrain/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace growbrain {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  const std::set<std::string_view> allowed(keys);
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + std::string(where));
}

template <typename T>
void read(const json& j, std::string_view key, T& out, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + std::string(key) + ": " + e.what());
  }
}

void read_train(const json& j, TrainConfig& t, std::string_view where) {
  check_keys(j, where,
             {"base_lr", "momentum", "weight_decay", "epochs", "step_epochs", "step_factor",
              "batch_size"});
  read(j, "base_lr", t.base_lr, where);
  read(j, "momentum", t.momentum, where);
  read(j, "weight_decay", t.weight_decay, where);
  read(j, "epochs", t.epochs, where);
  read(j, "step_epochs", t.step_epochs, where);
  read(j, "step_factor", t.step_factor, where);
  read(j, "batch_size", t.batch_size, where);
}

json train_json(const TrainConfig& t) {
  return {{"base_lr", t.base_lr},         {"momentum", t.momentum},
          {"weight_decay", t.weight_decay}, {"epochs", t.epochs},
          {"step_epochs", t.step_epochs}, {"step_factor", t.step_factor},
          {"batch_size", t.batch_size}};
}

void read_synth(const json& j, TransferTaskSpec& s) {
  constexpr std::string_view w = "task.synthetic";
  check_keys(j, w,
             {"source_classes", "target_classes", "dim", "latent_dim", "modes_per_class",
              "source_samples_per_class", "target_samples_per_class", "overlap", "center_scale",
              "mode_noise", "ambient_noise"});
  read(j, "source_classes", s.source_classes, w);
  read(j, "target_classes", s.target_classes, w);
  read(j, "dim", s.dim, w);
  read(j, "latent_dim", s.latent_dim, w);
  read(j, "modes_per_class", s.modes_per_class, w);
  read(j, "source_samples_per_class", s.source_samples_per_class, w);
  read(j, "target_samples_per_class", s.target_samples_per_class, w);
  read(j, "overlap", s.overlap, w);
  read(j, "center_scale", s.center_scale, w);
  read(j, "mode_noise", s.mode_noise, w);
  read(j, "ambient_noise", s.ambient_noise, w);
}

json synth_json(const TransferTaskSpec& s) {
  return {{"source_classes", s.source_classes},
          {"target_classes", s.target_classes},
          {"dim", s.dim},
          {"latent_dim", s.latent_dim},
          {"modes_per_class", s.modes_per_class},
          {"source_samples_per_class", s.source_samples_per_class},
          {"target_samples_per_class", s.target_samples_per_class},
          {"overlap", s.overlap},
          {"center_scale", s.center_scale},
          {"mode_noise", s.mode_noise},
          {"ambient_noise", s.ambient_noise}};
}

void read_task(const json& j, TaskConfig& t) {
  constexpr std::string_view w = "task";
  check_keys(j, w,
             {"kind", "synthetic", "idx", "source_labels", "target_labels",
              "target_train_per_class", "fractions", "sequence_overlaps"});
  std::string kind = t.kind == TaskConfig::Kind::Synthetic ? "synthetic" : "idx";
  read(j, "kind", kind, w);
  if (kind == "synthetic")
    t.kind = TaskConfig::Kind::Synthetic;
  else if (kind == "idx")
    t.kind = TaskConfig::Kind::Idx;
  else
    throw ConfigError("task.kind must be \"synthetic\" or \"idx\", got \"" + kind + "\"");
  if (auto it = j.find("synthetic"); it != j.end()) read_synth(*it, t.synth);
  if (auto it = j.find("idx"); it != j.end()) {
    check_keys(*it, "task.idx", {"images", "labels"});
    read(*it, "images", t.idx_images, "task.idx");
    read(*it, "labels", t.idx_labels, "task.idx");
  }
  read(j, "source_labels", t.source_labels, w);
  read(j, "target_labels", t.target_labels, w);
  read(j, "target_train_per_class", t.target_train_per_class, w);
  read(j, "fractions", t.fractions, w);
  read(j, "sequence_overlaps", t.sequence_overlaps, w);
}

MethodConfig read_method(const json& j) {
  constexpr std::string_view w = "methods[]";
  check_keys(j, w, {"name", "variant", "plan"});
  MethodConfig m;
  read(j, "name", m.name, w);
  if (m.name.empty()) throw ConfigError("methods[] entry needs a name");
  read(j, "variant", m.variant, w);
  m.plan.kind = method_growth_kind(m.name);
  if (auto it = j.find("plan"); it != j.end()) {
    constexpr std::string_view p = "methods[].plan";
    check_keys(*it, p,
               {"sizes", "targets", "init", "init_stddev", "gamma_init", "insert_normscale"});
    read(*it, "sizes", m.plan.sizes, p);
    read(*it, "targets", m.plan.targets, p);
    std::string init(to_string(m.plan.init));
    read(*it, "init", init, p);
    m.plan.init = init_policy_from_string(init);
    read(*it, "init_stddev", m.plan.init_stddev, p);
    read(*it, "gamma_init", m.plan.gamma_init, p);
    read(*it, "insert_normscale", m.plan.insert_normscale, p);
  }
  return m;
}

json method_json(const MethodConfig& m) {
  return {{"name", m.name},
          {"variant", m.variant},
          {"plan",
           {{"sizes", m.plan.sizes},
            {"targets", m.plan.targets},
            {"init", std::string(to_string(m.plan.init))},
            {"init_stddev", m.plan.init_stddev},
            {"gamma_init", m.plan.gamma_init},
            {"insert_normscale", m.plan.insert_normscale}}}};
}

json config_json(const ExperimentConfig& cfg) {
  json scenarios = json::array();
  for (auto s : cfg.scenarios) scenarios.push_back(std::string(to_string(s)));
  json methods = json::array();
  for (const auto& m : cfg.methods) methods.push_back(method_json(m));
  const auto& t = cfg.task;
  return {{"task",
           {{"kind", t.kind == TaskConfig::Kind::Synthetic ? "synthetic" : "idx"},
            {"synthetic", synth_json(t.synth)},
            {"idx", {{"images", t.idx_images}, {"labels", t.idx_labels}}},
            {"source_labels", t.source_labels},
            {"target_labels", t.target_labels},
            {"target_train_per_class", t.target_train_per_class},
            {"fractions", t.fractions},
            {"sequence_overlaps", t.sequence_overlaps}}},
          {"hidden", cfg.hidden},
          {"methods", methods},
          {"scenarios", scenarios},
          {"pretrain", train_json(cfg.pretrain)},
          {"finetune", train_json(cfg.finetune)},
          {"source_regrow", train_json(cfg.source_regrow)},
          {"seeds", cfg.seeds},
          {"output_dir", cfg.output_dir},
          {"probe", {{"steps", cfg.probe.steps}, {"lr", cfg.probe.lr}}}};
}

}  // namespace

ExperimentConfig parse_experiment_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"task", "hidden", "methods", "scenarios", "pretrain", "finetune", "source_regrow",
              "seeds", "output_dir", "probe"});
  ExperimentConfig cfg;
  if (auto it = j.find("task"); it != j.end()) read_task(*it, cfg.task);
  read(j, "hidden", cfg.hidden, "config");
  if (auto it = j.find("methods"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("methods must be an array");
    for (const auto& m : *it) cfg.methods.push_back(read_method(m));
  }
  if (auto it = j.find("scenarios"); it != j.end()) {
    std::vector<std::string> names;
    read(j, "scenarios", names, "config");
    cfg.scenarios.clear();
    for (const auto& n : names) cfg.scenarios.push_back(scenario_from_string(n));
  }
  if (auto it = j.find("pretrain"); it != j.end()) read_train(*it, cfg.pretrain, "pretrain");
  if (auto it = j.find("finetune"); it != j.end()) read_train(*it, cfg.finetune, "finetune");
  if (auto it = j.find("source_regrow"); it != j.end())
    read_train(*it, cfg.source_regrow, "source_regrow");
  read(j, "seeds", cfg.seeds, "config");
  read(j, "output_dir", cfg.output_dir, "config");
  if (auto it = j.find("probe"); it != j.end()) {
    check_keys(*it, "probe", {"steps", "lr"});
    read(*it, "steps", cfg.probe.steps, "probe");
    read(*it, "lr", cfg.probe.lr, "probe");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  return config_json(cfg).dump(2) + "\n";
}

std::string results_to_json(const ResultsTable& table, const ExperimentConfig& cfg) {
  json rows = json::array();
  for (const auto& r : table.rows()) {
    json row = {{"method", r.method}, {"variant", r.variant}, {"scenario", r.scenario},
                {"seed", r.seed},     {"split", r.split}};
    if (r.failed) {
      row["accuracy"] = nullptr;
      row["failed"] = true;
      row["reason"] = r.reason;
    } else {
      row["accuracy"] = r.accuracy;
      row["parameters"] = r.parameters;
    }
    rows.push_back(std::move(row));
  }
  json aggs = json::array();
  for (const auto& a : table.aggregate()) {
    json agg = {{"method", a.method}, {"variant", a.variant}, {"scenario", a.scenario},
                {"split", a.split},   {"count", a.count},     {"failures", a.failures}};
    if (a.count > 0) {
      agg["mean"] = a.mean;
      agg["stddev"] = a.stddev;
    } else {
      agg["mean"] = nullptr;
      agg["stddev"] = nullptr;
    }
    aggs.push_back(std::move(agg));
  }
  return json{{"config", config_json(cfg)}, {"rows", rows}, {"aggregates", aggs}}.dump(2) + "\n";
}

}  // namespace growbrain
