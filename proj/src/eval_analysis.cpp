#include "clpoison/eval_analysis.hpp"

#include "clpoison/errors.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace clpoison {

namespace {

std::string normalize_name(std::string s) {
  for (char& c : s) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

constexpr AttackType kAttackTypes[] = {AttackType::None,         AttackType::ApCl,
                                       AttackType::EmpClSample,  AttackType::EmpClClass,
                                       AttackType::ApSupervised, AttackType::EmpSupervisedSample,
                                       AttackType::EmpSupervisedClass};

std::mutex& results_mutex() {
  static std::mutex m;
  return m;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string to_string(AttackType type) {
  switch (type) {
    case AttackType::None: return "none";
    case AttackType::ApCl: return "ap-cl";
    case AttackType::EmpClSample: return "emp-cl-s";
    case AttackType::EmpClClass: return "emp-cl-c";
    case AttackType::ApSupervised: return "ap";
    case AttackType::EmpSupervisedSample: return "emp-s";
    case AttackType::EmpSupervisedClass: return "emp-c";
  }
  return "unknown";
}

AttackType parse_attack_type(const std::string& name) {
  const std::string n = normalize_name(name);
  for (AttackType t : kAttackTypes) {
    if (n == to_string(t)) return t;
  }
  throw ArgumentError("unknown attack '" + name + "'");
}

bool is_contrastive(AttackType type) {
  return type == AttackType::ApCl || type == AttackType::EmpClSample || type == AttackType::EmpClClass;
}

std::string AttackSpec::attacker_name() const {
  if (type == AttackType::None) return "none";
  return is_contrastive(type) ? to_string(framework.framework) : "supervised";
}

std::vector<std::string> AttackSpec::violations() const {
  std::vector<std::string> v;
  if (type == AttackType::None) return v;
  auto add = [&v](const std::vector<std::string>& more) { v.insert(v.end(), more.begin(), more.end()); };
  if (!poison_file) {
    add(pgd.violations());
    if (type != AttackType::ApCl && type != AttackType::ApSupervised) add(schedule.violations());
    if (is_contrastive(type)) {
      add(framework.violations());
    } else {
      add(classifier.violations());
    }
  }
  return v;
}

PerturbationSet generate_poison(const LabeledImageDataset& clean, const AttackSpec& spec, std::uint64_t seed,
                                const AttackOptions& options) {
  if (spec.poison_file) return read_perturbation_file(*spec.poison_file);
  AttackOptions o = options;
  o.seed = seed;
  switch (spec.type) {
    case AttackType::None:
      return PerturbationSet::zeros_like(clean, NoiseMode::SampleWise, spec.pgd.epsilon);
    case AttackType::ApCl:
      return attack_ap_cl(clean, spec.framework, spec.pgd, spec.schedule.branch_mode, o);
    case AttackType::EmpClSample:
      return attack_emp_cl_sample(clean, spec.framework, spec.pgd, spec.schedule, o);
    case AttackType::EmpClClass:
      return attack_emp_cl_class(clean, spec.framework, spec.pgd, spec.schedule, o);
    case AttackType::ApSupervised:
      return attack_ap_supervised(clean, spec.classifier, spec.pgd, o);
    case AttackType::EmpSupervisedSample:
      return attack_emp_supervised(NoiseMode::SampleWise, clean, spec.classifier, spec.pgd, spec.schedule, o);
    case AttackType::EmpSupervisedClass:
      return attack_emp_supervised(NoiseMode::ClassWise, clean, spec.classifier, spec.pgd, spec.schedule, o);
  }
  throw ArgumentError("unknown attack type");
}

// ---------------------------------------------------------------------------

std::vector<std::string> ExperimentResult::violations() const {
  std::vector<std::string> v;
  for (const auto& [name, value] : {std::pair{"attacker", &attacker}, {"victim", &victim}, {"attack", &attack},
                                    {"defense", &defense}, {"branch_mode", &branch_mode}, {"status", &status}}) {
    if (value->empty()) v.push_back(std::string(name) + " must be non-empty");
  }
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) v.push_back("accuracy must lie in [0, 1]");
  if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) v.push_back("poison_fraction must lie in [0, 1]");
  if (status != "ok" && status != "error") v.push_back("status must be ok or error");
  return v;
}

std::string result_to_json(const ExperimentResult& r) {
  nlohmann::ordered_json j;
  j["attacker"] = r.attacker;
  j["victim"] = r.victim;
  j["attack"] = r.attack;
  j["defense"] = r.defense;
  j["poison_fraction"] = r.poison_fraction;
  j["branch_mode"] = r.branch_mode;
  j["accuracy"] = r.accuracy;
  j["seed"] = r.seed;
  j["wall_ms"] = r.wall_ms;
  j["status"] = r.status;
  if (!r.error.empty()) j["error"] = r.error;
  return j.dump();
}

ExperimentResult result_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("result line is not JSON: ") + e.what());
  }
  try {
    ExperimentResult r;
    r.attacker = j.at("attacker").get<std::string>();
    r.victim = j.at("victim").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.defense = j.at("defense").get<std::string>();
    r.poison_fraction = j.at("poison_fraction").get<double>();
    r.branch_mode = j.at("branch_mode").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.wall_ms = j.value("wall_ms", 0.0);
    r.status = j.value("status", std::string("ok"));
    r.error = j.value("error", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("result line is missing a field: ") + e.what());
  }
}

void append_result(const std::filesystem::path& path, const ExperimentResult& r) {
  const std::string line = result_to_json(r) + "\n";
  std::lock_guard<std::mutex> lock(results_mutex());
  std::ofstream os(path, std::ios::app | std::ios::binary);
  if (!os) throw std::runtime_error("cannot open results file " + path.string());
  os << line;
  os.flush();
  if (!os) throw std::runtime_error("write failed on results file " + path.string());
}

std::vector<ExperimentResult> read_results(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open results file " + path.string());
  std::vector<ExperimentResult> rows;
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(result_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------

ExperimentResult run_cell(const LabeledImageDataset& train, const LabeledImageDataset& eval, const CellSpec& spec,
                          const PerturbationSet* poison) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult r;
  r.attacker = spec.attack.attacker_name();
  r.victim = to_string(spec.victim.framework);
  r.attack = to_string(spec.attack.type);
  r.defense = spec.defense.label();
  r.poison_fraction = spec.poison_fraction;
  r.branch_mode = is_contrastive(spec.attack.type) ? to_string(spec.attack.schedule.branch_mode) : "n/a";
  r.seed = spec.seed;
  try {
    std::vector<std::string> v = spec.attack.violations();
    for (auto& s : spec.victim.violations()) v.push_back(std::move(s));
    for (auto& s : spec.defense.violations()) v.push_back(std::move(s));
    if (!(spec.poison_fraction >= 0.0 && spec.poison_fraction <= 1.0)) v.push_back("poison fraction must lie in [0, 1]");
    if (!v.empty()) throw ConfigError(std::move(v));

    LabeledImageDataset victim_data = train;
    if (spec.attack.type != AttackType::None && spec.poison_fraction > 0.0) {
      const PerturbationSet ps = poison ? *poison : generate_poison(train, spec.attack, spec.seed);
      victim_data = apply_perturbations(train, ps, spec.poison_fraction, spec.seed).first;
    }
    TrainOptions to;
    to.seed = spec.seed;
    to.transform = spec.defense.view_transform(train.shape());
    EncoderState victim = train_encoder(victim_data, spec.victim, to);
    ProbeOptions po = spec.probe;
    po.seed = spec.seed;
    r.accuracy = linear_probe(victim, eval, po);
  } catch (const std::exception& e) {
    r.status = "error";
    r.error = e.what();
    r.accuracy = 0.0;
  }
  if (spec.record_wall_time) {
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return r;
}

// ---------------------------------------------------------------------------

double noise_separability(const PerturbationSet& ps, const std::vector<int>& labels, std::uint64_t seed,
                          const ProbeOptions& probe) {
  ps.validate();
  if (ps.class_count < 2) throw ArgumentError("noise separability needs at least 2 classes");
  const Matrix deltas = ps.to_matrix();
  Matrix x;
  std::vector<int> y;
  if (ps.mode == NoiseMode::ClassWise && labels.empty()) {
    // Five copies of each class vector, so every held-out vector was also trained on.
    constexpr int kCopies = 5;
    x.resize(deltas.rows() * kCopies, deltas.cols());
    for (int k = 0; k < kCopies; ++k) {
      x.middleRows(k * deltas.rows(), deltas.rows()) = deltas;
      for (int c = 0; c < deltas.rows(); ++c) y.push_back(c);
    }
  } else if (ps.mode == NoiseMode::ClassWise) {
    x.resize(static_cast<Eigen::Index>(labels.size()), deltas.cols());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= ps.class_count) throw ArgumentError("noise separability: label out of range");
      x.row(static_cast<Eigen::Index>(i)) = deltas.row(labels[i]);
    }
    y = labels;
  } else {
    if (labels.size() != static_cast<std::size_t>(ps.count())) {
      throw ArgumentError("noise separability: sample-wise sets need one label per delta");
    }
    x = deltas;
    y = labels;
  }
  if (std::set<int>(y.begin(), y.end()).size() < 2) throw ArgumentError("noise separability needs at least 2 classes");
  ProbeOptions o = probe;
  o.seed = seed;
  return fit_linear_probe(x, y, ps.class_count, o).second;
}

// ---------------------------------------------------------------------------

GridImage render_noise_grid(const PerturbationSet& ps, const std::vector<int>& labels, const GridOptions& options) {
  if (options.columns < 1 || options.padding < 0 || options.max_tiles < 1) throw ArgumentError("noise grid: invalid options");
  if (ps.count() == 0) throw ArgumentError("noise grid: empty perturbation set");
  std::vector<int> picks;
  if (ps.mode == NoiseMode::ClassWise) {
    for (int c = 0; c < ps.count(); ++c) picks.push_back(c);
  } else if (labels.empty()) {
    for (int i = 0; i < ps.count(); ++i) picks.push_back(i);
  } else {
    if (labels.size() != static_cast<std::size_t>(ps.count())) throw ArgumentError("noise grid: one label per delta required");
    Rng rng(options.seed);
    std::map<int, std::vector<int>> members;
    for (int i = 0; i < ps.count(); ++i) members[labels[static_cast<std::size_t>(i)]].push_back(i);
    for (const auto& [label, idx] : members) picks.push_back(idx[rng.below(idx.size())]);
  }
  if (static_cast<int>(picks.size()) > options.max_tiles) picks.resize(static_cast<std::size_t>(options.max_tiles));

  const ImageShape s = ps.shape;
  const int tiles = static_cast<int>(picks.size());
  const int cols = std::min(options.columns, tiles);
  const int rows = (tiles + cols - 1) / cols;
  const int pad = options.padding;
  GridImage img;
  img.channels = s.channels == 3 ? 3 : 1;
  img.width = cols * s.width + (cols + 1) * pad;
  img.height = rows * s.height + (rows + 1) * pad;
  img.tiles = tiles;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * img.channels, 255);

  for (int t = 0; t < tiles; ++t) {
    const auto d = ps.delta(picks[static_cast<std::size_t>(t)]);
    const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
    const double lo = *lo_it, hi = *hi_it;
    const int ox = pad + (t % cols) * (s.width + pad);
    const int oy = pad + (t / cols) * (s.height + pad);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        for (int c = 0; c < img.channels; ++c) {
          const double v = d[static_cast<std::size_t>(c * s.plane() + y * s.width + x)];
          const double u = hi > lo ? (v - lo) / (hi - lo) : 0.5;
          img.pixels[(static_cast<std::size_t>(oy + y) * img.width + (ox + x)) * img.channels + c] =
              static_cast<std::uint8_t>(std::lround(u * 255.0));
        }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const GridImage& image) {
  if (image.width <= 0 || image.height <= 0 || (image.channels != 1 && image.channels != 3) ||
      image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels) {
    throw ArgumentError("write_png: inconsistent image");
  }
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, image.pixels.data() + static_cast<std::size_t>(y) * stride);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fclose(fp) != 0) throw std::runtime_error("cannot close " + path.string());
}

// ---------------------------------------------------------------------------

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::PoisonFraction: return "poison_fraction";
    case SweepAxis::BranchMode: return "branch_mode";
    case SweepAxis::Defense: return "defense";
    case SweepAxis::VictimFramework: return "victim_framework";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(const std::string& name) {
  std::string n = normalize_name(name);
  std::replace(n.begin(), n.end(), '-', '_');
  for (SweepAxis a : {SweepAxis::PoisonFraction, SweepAxis::BranchMode, SweepAxis::Defense, SweepAxis::VictimFramework}) {
    if (n == to_string(a)) return a;
  }
  throw ArgumentError("unknown sweep axis '" + name + "'");
}

std::string axis_value(const ExperimentResult& r, SweepAxis axis) {
  switch (axis) {
    case SweepAxis::PoisonFraction: {
      std::ostringstream os;
      os << r.poison_fraction;
      return os.str();
    }
    case SweepAxis::BranchMode: return r.branch_mode;
    case SweepAxis::Defense: return r.defense;
    case SweepAxis::VictimFramework: return r.victim;
  }
  return "";
}

namespace {

double parse_fraction(const std::string& s) {
  std::size_t used = 0;
  double p = 0.0;
  try {
    p = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size()) throw ArgumentError("poison fraction '" + s + "' is not a number");
  return p;
}

}  // namespace

std::vector<ExperimentResult> sweep(const LabeledImageDataset& train, const LabeledImageDataset& eval,
                                    SweepAxis axis, const std::vector<std::string>& values, const CellSpec& base,
                                    const std::function<void(const ExperimentResult&)>& on_result) {
  if (values.empty()) throw ArgumentError("sweep needs at least one value");
  std::map<std::string, PerturbationSet> poisons;  // keyed by branch mode
  std::vector<ExperimentResult> rows;
  for (const std::string& value : values) {
    CellSpec cell = base;
    ExperimentResult r;
    try {
      switch (axis) {
        case SweepAxis::PoisonFraction: cell.poison_fraction = parse_fraction(value); break;
        case SweepAxis::BranchMode: cell.attack.schedule.branch_mode = parse_branch_mode(value); break;
        case SweepAxis::Defense: cell.defense.kind = parse_defense_kind(value); break;
        case SweepAxis::VictimFramework: {
          const FrameworkConfig d = FrameworkConfig::desk(parse_framework(value));
          cell.victim.framework = d.framework;
          cell.victim.temperature = d.temperature;
          cell.victim.momentum = d.momentum;
          break;
        }
      }
      const PerturbationSet* poison = nullptr;
      if (cell.attack.type != AttackType::None && cell.poison_fraction > 0.0 && cell.attack.violations().empty()) {
        const std::string key = to_string(cell.attack.schedule.branch_mode);
        auto it = poisons.find(key);
        if (it == poisons.end()) it = poisons.emplace(key, generate_poison(train, cell.attack, cell.seed)).first;
        poison = &it->second;
      }
      r = run_cell(train, eval, cell, poison);
    } catch (const std::exception& e) {
      r = ExperimentResult{};
      r.attacker = base.attack.attacker_name();
      r.victim = to_string(cell.victim.framework);
      r.attack = to_string(base.attack.type);
      r.defense = cell.defense.label();
      r.poison_fraction = cell.poison_fraction;
      r.branch_mode = is_contrastive(cell.attack.type) ? to_string(cell.attack.schedule.branch_mode) : "n/a";
      r.seed = cell.seed;
      r.status = "error";
      r.error = value + ": " + e.what();
    }
    if (on_result) on_result(r);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string axis_report_csv(const std::vector<ExperimentResult>& rows, SweepAxis axis) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> acc;
  std::map<std::string, int> errors;
  for (const auto& r : rows) {
    const std::string v = axis_value(r, axis);
    if (!acc.count(v) && !errors.count(v)) order.push_back(v);
    if (r.ok()) {
      acc[v].push_back(r.accuracy);
    } else {
      ++errors[v];
    }
  }
  std::ostringstream os;
  os << to_string(axis) << ",mean,min,max,n,errors\n";
  for (const auto& v : order) {
    const auto& a = acc[v];
    os << v << ",";
    if (a.empty()) {
      os << ",,,0,";
    } else {
      double sum = 0.0;
      for (double x : a) sum += x;
      os << fmt(sum / static_cast<double>(a.size())) << "," << fmt(*std::min_element(a.begin(), a.end())) << ","
         << fmt(*std::max_element(a.begin(), a.end())) << "," << a.size() << ",";
    }
    os << errors[v] << "\n";
  }
  return os.str();
}

std::string transfer_matrix_csv(const std::vector<ExperimentResult>& rows) {
  std::vector<std::pair<std::string, std::string>> row_keys;
  std::vector<std::string> victims;
  std::map<std::pair<std::pair<std::string, std::string>, std::string>, std::pair<double, int>> cells;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.attack, r.attacker);
    if (std::find(row_keys.begin(), row_keys.end(), key) == row_keys.end()) row_keys.push_back(key);
    if (std::find(victims.begin(), victims.end(), r.victim) == victims.end()) victims.push_back(r.victim);
    if (!r.ok()) continue;
    auto& c = cells[{key, r.victim}];
    c.first += r.accuracy;
    ++c.second;
  }
  std::ostringstream os;
  os << "attack,attacker";
  for (const auto& v : victims) os << "," << v;
  os << "\n";
  for (const auto& key : row_keys) {
    os << key.first << "," << key.second;
    for (const auto& v : victims) {
      os << ",";
      auto it = cells.find({key, v});
      if (it != cells.end() && it->second.second > 0) os << fmt(it->second.first / it->second.second);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace clpoison
