#include "clpoison/errors.hpp"
#include "clpoison/eval_analysis.hpp"
#include "clpoison/experiment.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace clpoison;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitRuntime = 3;
constexpr const char* kVersion = "clpoison 0.1.0";

struct Flags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> scale;
  std::string out, preset, attack, framework, victim, defense, poison, axis, values, checkpoint, results;
};

// A run directory with a manifest that says "incomplete" until the command finishes.
class Run {
 public:
  Run(const std::string& command, const ExperimentConfig& config)
      : dir_(config.out), file_(command + ".manifest.json") {
    manifest_["command"] = command;
    manifest_["status"] = "incomplete";
    manifest_["version"] = kVersion;
    manifest_["seed"] = config.seed;
    manifest_["scale"] = config.scale;
    manifest_["config"] = to_ini(config);
    manifest_["artifacts"] = nlohmann::json::array();
    fs::create_directories(dir_);
    write();
  }

  fs::path path(const std::string& name) const { return dir_ / name; }
  void artifact(const fs::path& p) {
    manifest_["artifacts"].push_back(p.string());
    write();
  }
  nlohmann::ordered_json& manifest() { return manifest_; }
  void finish() {
    manifest_["status"] = "complete";
    write();
  }
  void fail(const std::string& error) {
    manifest_["error"] = error;
    write();
  }

 private:
  void write() const {
    std::ofstream os(dir_ / file_);
    os << manifest_.dump(2) << "\n";
  }

  fs::path dir_;
  std::string file_;
  nlohmann::ordered_json manifest_;
};

std::vector<std::string> overrides(const Flags& f) {
  std::vector<std::string> o = f.sets;
  auto add = [&o](const char* key, const std::string& v) {
    if (!v.empty()) o.push_back(std::string(key) + "=" + v);
  };
  add("run.preset", f.preset);
  if (f.seed) o.push_back("run.seed=" + std::to_string(*f.seed));
  if (f.scale) {
    std::ostringstream os;
    os << std::setprecision(17) << *f.scale;
    o.push_back("run.scale=" + os.str());
  }
  add("run.out", f.out);
  add("attack.type", f.attack);
  add("attack.framework", f.framework);
  add("victim.framework", f.victim);
  add("defense.kind", f.defense);
  add("attack.poison_file", f.poison);
  add("run.sweep_axis", f.axis);
  add("run.sweep_values", f.values);
  add("run.checkpoint", f.checkpoint);
  add("run.results", f.results);
  return o;
}

void save_json_lines(std::ofstream& os, const nlohmann::ordered_json& j) { os << j.dump() << "\n" << std::flush; }

AttackOptions trace_options(const ExperimentConfig& c, std::ofstream& trace) {
  AttackOptions o;
  o.seed = c.seed;
  o.on_progress = [&trace](const AttackProgress& p) {
    nlohmann::ordered_json j;
    j["iteration"] = p.iteration;
    j["loss"] = p.loss;
    j["wall_ms"] = p.wall_ms;
    if (!p.note.empty()) j["note"] = p.note;
    save_json_lines(trace, j);
  };
  return o;
}

TrainOptions epoch_log(const ExperimentConfig& c, std::ofstream& log) {
  TrainOptions o;
  o.seed = c.seed;
  o.transform = c.defense.view_transform(ImageShape{3, c.dataset.height, c.dataset.width});
  o.on_epoch = [&log](const EpochLog& e) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["lr"] = e.lr;
    j["wall_ms"] = e.wall_ms;
    save_json_lines(log, j);
  };
  return o;
}

PerturbationSet make_poison(const ExperimentConfig& c, const LabeledImageDataset& train, Run& run) {
  if (c.attack.poison_file) return read_perturbation_file(*c.attack.poison_file);
  const fs::path trace_path = run.path("attack_trace.jsonl");
  std::ofstream trace(trace_path);
  const AttackOptions o = trace_options(c, trace);
  PerturbationSet ps;
  if (c.attack.type == AttackType::ApCl && !c.pretrained.empty()) {
    EncoderState state = load_checkpoint(c.pretrained);
    ps = attack_ap_cl(train, state, c.attack.pgd, c.attack.schedule.branch_mode, o);
  } else {
    ps = generate_poison(train, c.attack, c.seed, o);
  }
  AttackManifest m;
  m.attack = to_string(c.attack.type);
  m.framework = c.attack.attacker_name();
  m.branch_mode = c.attack.schedule.branch_mode;
  m.epsilon = c.attack.pgd.epsilon;
  m.alpha = c.attack.pgd.alpha;
  m.pgd_steps = c.attack.pgd.steps;
  m.schedule = c.attack.schedule;
  m.seed = c.seed;
  m.loss_trace_path = trace_path.string();
  run.manifest()["attack"] = nlohmann::ordered_json::parse(manifest_to_json(m));
  run.artifact(trace_path);
  return ps;
}

void cmd_pretrain(const ExperimentConfig& c, Run& run) {
  const LabeledImageDataset train = load_train_set(c);
  std::ofstream log(run.path("epochs.jsonl"));
  TrainOptions o = epoch_log(c, log);
  o.transform = {};
  EncoderState s = train_encoder(train, c.attack.framework, o);
  const fs::path ckpt = run.path("pretrained.ckpt");
  save_checkpoint(ckpt.string(), s);
  run.artifact(run.path("epochs.jsonl"));
  run.artifact(ckpt);
  std::cout << ckpt.string() << "\n";
}

void cmd_poison(const ExperimentConfig& c, Run& run) {
  if (c.attack.type == AttackType::None) throw ConfigError({"poison: attack.type must name an attack"});
  const LabeledImageDataset train = load_train_set(c);
  const PerturbationSet ps = make_poison(c, train, run);
  const fs::path out = run.path("poison.bin");
  write_perturbation_file(out, ps);
  run.artifact(out);
  std::cout << out.string() << "\n";
}

void cmd_train(const ExperimentConfig& c, Run& run) {
  const LabeledImageDataset train = load_train_set(c);
  LabeledImageDataset data = train;
  if (c.attack.type != AttackType::None || c.attack.poison_file) {
    const PerturbationSet ps = make_poison(c, train, run);
    auto [poisoned, applied] = apply_perturbations(train, ps, c.poison_fraction, c.seed);
    data = std::move(poisoned);
    run.manifest()["poisoned_count"] = applied.poisoned_indices.size();
  }
  std::ofstream log(run.path("epochs.jsonl"));
  EncoderState s = train_encoder(data, c.victim, epoch_log(c, log));
  const fs::path ckpt = run.path("victim.ckpt");
  save_checkpoint(ckpt.string(), s);
  run.artifact(run.path("epochs.jsonl"));
  run.artifact(ckpt);
  std::cout << ckpt.string() << "\n";
}

void cmd_probe(const ExperimentConfig& c, Run& run) {
  const fs::path ckpt = c.checkpoint.empty() ? fs::path(c.out) / "victim.ckpt" : fs::path(c.checkpoint);
  if (!fs::exists(ckpt)) throw ConfigError({"probe: checkpoint " + ckpt.string() + " does not exist"});
  EncoderState s = load_checkpoint(ckpt.string());
  ProbeOptions po = c.probe;
  po.seed = c.seed;
  const double acc = linear_probe(s, load_eval_set(c), po);
  nlohmann::ordered_json j;
  j["checkpoint"] = ckpt.string();
  j["accuracy"] = acc;
  const fs::path out = run.path("probe.json");
  std::ofstream(out) << j.dump(2) << "\n";
  run.artifact(out);
  run.manifest()["accuracy"] = acc;
  std::cout << acc << "\n";
}

fs::path results_path(const ExperimentConfig& c) {
  return c.results.empty() ? fs::path(c.out) / "results.jsonl" : fs::path(c.results);
}

void cmd_sweep(const ExperimentConfig& c, Run& run) {
  if (c.sweep_axis.empty() || c.sweep_values.empty()) {
    throw ConfigError({"sweep: run.sweep_axis and run.sweep_values are required"});
  }
  const SweepAxis axis = parse_sweep_axis(c.sweep_axis);
  const fs::path results = results_path(c);
  const auto rows = sweep(load_train_set(c), load_eval_set(c), axis, c.sweep_values, c.cell(),
                          [&results](const ExperimentResult& r) {
                            append_result(results, r);
                            std::cout << result_to_json(r) << "\n" << std::flush;
                          });
  const fs::path report = run.path("report.csv");
  std::ofstream(report) << axis_report_csv(rows, axis);
  run.artifact(results);
  run.artifact(report);
}

void cmd_report(const ExperimentConfig& c, Run& run) {
  const fs::path results = results_path(c);
  if (!fs::exists(results)) throw ConfigError({"report: results file " + results.string() + " does not exist"});
  const auto rows = read_results(results);
  const std::string csv = c.sweep_axis.empty() ? transfer_matrix_csv(rows) : axis_report_csv(rows, parse_sweep_axis(c.sweep_axis));
  const fs::path report = run.path("report.csv");
  std::ofstream(report) << csv;
  run.artifact(report);
  std::cout << csv;
}

void cmd_visualize(const ExperimentConfig& c, Run& run) {
  if (!c.attack.poison_file) throw ConfigError({"visualize: attack.poison_file is required"});
  const PerturbationSet ps = read_perturbation_file(*c.attack.poison_file);
  std::vector<int> labels;
  if (ps.mode == NoiseMode::SampleWise) {
    const LabeledImageDataset train = load_train_set(c);
    if (train.size() == ps.count()) labels = train.labels();
  }
  GridOptions go;
  go.seed = c.seed;
  const fs::path out = run.path("noise_grid.png");
  write_png(out, render_noise_grid(ps, labels, go));
  run.artifact(out);
  std::cout << out.string() << "\n";
}

void print_violations(const ConfigError& e) {
  std::cerr << "invalid configuration:\n";
  for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Indiscriminate poisoning of contrastive learning: attacks, victims, defenses and reports"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "run seed");
  app.add_option("--scale", f.scale, "multiplies epochs, iterations and dataset size, in (0, 1]");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--set", f.sets, "override a config key, section.key=value (repeatable)");
  app.add_option("--preset", f.preset, "full or desk defaults");
  app.set_version_flag("--version", kVersion);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"pretrain", "train the attacker's encoder on clean data"},
      {"poison", "generate a poison file"},
      {"train", "train the victim encoder on the (poisoned) training set"},
      {"probe", "linear-probe a victim checkpoint"},
      {"defend-train", "train the victim with a defense applied to every view"},
      {"sweep", "run one cell per value of a sweep axis and append the results"},
      {"report", "aggregate a results file into CSV"},
      {"visualize", "render a poison file as a PNG grid"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    if (name == "pretrain" || name == "poison" || name == "train" || name == "defend-train" || name == "sweep") {
      sub->add_option("--attack", f.attack, "none, ap-cl, emp-cl-s, emp-cl-c, ap, emp-s, emp-c");
      sub->add_option("--framework", f.framework, "attacker framework: simclr, moco_v2, byol");
      sub->add_option("--poison", f.poison, "existing poison file");
    }
    if (name == "train" || name == "defend-train" || name == "sweep") sub->add_option("--victim", f.victim, "victim framework");
    if (name == "defend-train" || name == "sweep") sub->add_option("--defense", f.defense, "defense name");
    if (name == "sweep") {
      sub->add_option("--axis", f.axis, "poison_fraction, branch_mode, defense, victim_framework");
      sub->add_option("--values", f.values, "comma-separated axis values");
    }
    if (name == "sweep" || name == "report") sub->add_option("--results", f.results, "results JSON-lines file");
    if (name == "report") sub->add_option("--axis", f.axis, "aggregate by this axis instead of attacker x victim");
    if (name == "probe") sub->add_option("--checkpoint", f.checkpoint, "victim checkpoint");
    if (name == "visualize") sub->add_option("--poison", f.poison, "poison file")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  try {
    config = f.config.empty() ? parse_experiment_config("", overrides(f))
                              : load_experiment_config(f.config, overrides(f));
    config.validate();
    if (command == "defend-train" && config.defense.kind == DefenseKind::None) {
      throw ConfigError({"defend-train: defense.kind must name a defense"});
    }
  } catch (const ConfigError& e) {
    print_violations(e);
    return kExitInvalid;
  }

  const ExperimentConfig run_config = config.scaled();
  std::optional<Run> run;
  try {
    run.emplace(command, config);
    if (command == "pretrain") cmd_pretrain(run_config, *run);
    if (command == "poison") cmd_poison(run_config, *run);
    if (command == "train" || command == "defend-train") cmd_train(run_config, *run);
    if (command == "probe") cmd_probe(run_config, *run);
    if (command == "sweep") cmd_sweep(run_config, *run);
    if (command == "report") cmd_report(run_config, *run);
    if (command == "visualize") cmd_visualize(run_config, *run);
    run->finish();
  } catch (const ConfigError& e) {
    print_violations(e);
    if (run) run->fail(e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << command << " failed: " << e.what() << "\n";
    if (run) run->fail(e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
