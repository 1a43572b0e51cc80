#pragma once

#include "clpoison/datasets.hpp"
#include "clpoison/defenses.hpp"
#include "clpoison/frameworks.hpp"
#include "clpoison/poison.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace clpoison {

enum class AttackType {
  None,
  ApCl,
  EmpClSample,
  EmpClClass,
  ApSupervised,
  EmpSupervisedSample,
  EmpSupervisedClass,
};

/// "none", "ap-cl", "emp-cl-s", "emp-cl-c", "ap", "emp-s", "emp-c".
std::string to_string(AttackType type);
AttackType parse_attack_type(const std::string& name);
bool is_contrastive(AttackType type);

struct AttackSpec {
  AttackType type = AttackType::None;
  FrameworkConfig framework = FrameworkConfig::desk(Framework::SimClr);  // contrastive attacks
  ClassifierConfig classifier;                                         // supervised baselines
  PgdConfig pgd;
  AttackSchedule schedule;
  /// Use a saved poison instead of running the attack.
  std::optional<std::filesystem::path> poison_file;

  /// "simclr", "moco_v2", "byol", "supervised" or "none".
  std::string attacker_name() const;
  std::vector<std::string> violations() const;
};

/// Runs the attack described by `spec` on the clean training set.
PerturbationSet generate_poison(const LabeledImageDataset& clean, const AttackSpec& spec, std::uint64_t seed,
                                const AttackOptions& options = {});

struct CellSpec {
  AttackSpec attack;
  FrameworkConfig victim = FrameworkConfig::desk(Framework::SimClr);
  DefenseTransform defense;
  double poison_fraction = 1.0;
  ProbeOptions probe;
  std::uint64_t seed = 0;
  /// Off for the deterministic execution configuration: wall_ms is then 0 so
  /// repeated runs give identical rows.
  bool record_wall_time = true;
};

struct ExperimentResult {
  std::string attacker;    // algorithm that produced the poison
  std::string victim;      // framework trained on the poisoned set
  std::string attack;      // attack type
  std::string defense;     // defense label
  double poison_fraction = 0.0;
  std::string branch_mode;
  double accuracy = 0.0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
  std::string status = "ok";  // "ok" or "error"
  std::string error;

  bool ok() const { return status == "ok"; }
  std::vector<std::string> violations() const;
  bool operator==(const ExperimentResult&) const = default;
};

std::string result_to_json(const ExperimentResult& r);
ExperimentResult result_from_json(const std::string& line);

/// Appends one JSON line; safe to call from several threads.
void append_result(const std::filesystem::path& path, const ExperimentResult& r);
/// Reads every non-blank line; throws FormatError naming the bad line.
std::vector<ExperimentResult> read_results(const std::filesystem::path& path);

/// poison -> train the victim on the poisoned set -> linear probe on `eval`.
/// A precomputed poison skips the attack. Any failure becomes a row with
/// status "error" instead of an exception.
ExperimentResult run_cell(const LabeledImageDataset& train, const LabeledImageDataset& eval, const CellSpec& spec,
                          const PerturbationSet* poison = nullptr);

/// Held-out accuracy of a multinomial linear classifier on the flattened deltas
/// (80/20 split). Sample-wise sets need one label per delta. Class-wise sets
/// with per-sample labels are expanded to one delta per sample; with no labels
/// the classifier is trained and scored on the class vectors themselves.
/// Throws ArgumentError for fewer than 2 classes.
double noise_separability(const PerturbationSet& ps, const std::vector<int>& labels, std::uint64_t seed = 0,
                          const ProbeOptions& probe = {});

/// 8-bit RGB or greyscale image, rows top to bottom.
struct GridImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int tiles = 0;
  std::vector<std::uint8_t> pixels;
};

struct GridOptions {
  int columns = 10;
  int padding = 2;       // white border between tiles
  int max_tiles = 100;
  std::uint64_t seed = 0;
};

/// One tile per class: the class vector for class-wise sets, a random sample of
/// the class for sample-wise ones (labels required). Without labels a sample-wise
/// set shows its first deltas. Each tile is min-max normalized; constant maps are 0.5.
GridImage render_noise_grid(const PerturbationSet& ps, const std::vector<int>& labels, const GridOptions& options = {});
void write_png(const std::filesystem::path& path, const GridImage& image);

enum class SweepAxis { PoisonFraction, BranchMode, Defense, VictimFramework };

std::string to_string(SweepAxis axis);
/// "poison_fraction", "branch_mode", "defense", "victim_framework".
SweepAxis parse_sweep_axis(const std::string& name);

/// Value of `axis` recorded in a result row.
std::string axis_value(const ExperimentResult& r, SweepAxis axis);

/// One cell per value, in order, all with the base seed. Values are fractions,
/// branch modes, defense names or framework names. The poison is computed once
/// and shared unless the axis changes the attack. Cell errors are recorded and
/// the sweep continues; `on_result` sees every row as it is produced.
std::vector<ExperimentResult> sweep(const LabeledImageDataset& train, const LabeledImageDataset& eval,
                                    SweepAxis axis, const std::vector<std::string>& values, const CellSpec& base,
                                    const std::function<void(const ExperimentResult&)>& on_result = {});

/// "value,mean,min,max,n,errors" rows in first-seen order of the axis value.
std::string axis_report_csv(const std::vector<ExperimentResult>& rows, SweepAxis axis);
/// Mean accuracy matrix: one row per (attack, attacker), one column per victim.
std::string transfer_matrix_csv(const std::vector<ExperimentResult>& rows);

}  // namespace clpoison
