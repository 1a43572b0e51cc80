#pragma once

#include "clpoison/eval_analysis.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace clpoison {

struct DatasetSpec {
  std::string name = "synthetic";  // "synthetic" or "cifar10"
  int classes = 10;
  int per_class = 5000;       // synthetic training images per class
  int eval_per_class = 1000;  // synthetic probe images per class
  int height = 32;
  int width = 32;
  std::uint64_t seed = 1;     // synthetic sample seed; the probe set uses seed + 1
  std::string path = "cifar-10-batches-bin";  // relative to CLPOISON_DATA_DIR unless absolute
};

/// A full experiment, as read from an INI file. Every field starts at its
/// full-scale default; `scale` shrinks epochs, attack iterations and dataset
/// size when the experiment is run (see scaled()).
struct ExperimentConfig {
  std::string preset = "full";  // "full" or "desk"
  DatasetSpec dataset;
  FrameworkConfig victim = FrameworkConfig::defaults(Framework::SimClr);
  AttackSpec attack;
  DefenseTransform defense;
  double poison_fraction = 1.0;
  ProbeOptions probe;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::string out = "clpoison_out";
  std::string checkpoint;  // victim checkpoint for `probe`; default <out>/victim.ckpt
  std::string pretrained;  // surrogate checkpoint for AP-CL; trained on the fly when empty
  std::string results;     // results file for `sweep` and `report`; default <out>/results.jsonl
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  bool deterministic = false;  // drop wall times from result rows

  /// Every problem, including missing files (dataset, poison, checkpoints).
  std::vector<std::string> violations() const;
  void validate() const;  // throws ConfigError

  /// Copy with epochs, iterations and per-class counts multiplied by `scale`
  /// (rounded, at least 1 unless the value was 0) and scale reset to 1.
  ExperimentConfig scaled() const;

  CellSpec cell() const;
  std::filesystem::path data_root() const;
};

/// Full-scale attack defaults: T = 200 for AP-CL and the supervised AP, T = 5
/// with 200 iterations for sample-wise EMP, T = 1 with 600 iterations on 20% of
/// the data for class-wise EMP.
void apply_attack_defaults(AttackSpec& spec);
/// Desk-scale attack schedule: 20 EMP iterations, 20 PGD steps for AP attacks.
void apply_desk_attack_defaults(AttackSpec& spec);

/// Parses INI text (sections run, dataset, victim, attack, defense, probe).
/// `overrides` are "section.key=value" strings applied after the file. Unknown
/// sections or keys, malformed values and the violations() of the result are
/// all collected into one ConfigError.
ExperimentConfig parse_experiment_config(const std::string& ini_text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Every key with its value; parse_experiment_config(to_ini(c)) reproduces c.
std::string to_ini(const ExperimentConfig& config);

/// Training and probe sets (not scaled; call on scaled() configs).
LabeledImageDataset load_train_set(const ExperimentConfig& config);
LabeledImageDataset load_eval_set(const ExperimentConfig& config);

}  // namespace clpoison
