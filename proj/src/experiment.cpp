#include "clpoison/experiment.hpp"

#include "clpoison/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace clpoison {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Plain decimal or a ratio such as "8/255".
double to_double(const std::string& text) {
  const std::string s = trim(text);
  auto one = [&s](const std::string& part) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (part.empty() || used != part.size()) throw ArgumentError("'" + s + "' is not a number");
    return v;
  };
  const auto slash = s.find('/');
  if (slash == std::string::npos) return one(s);
  const double den = one(trim(s.substr(slash + 1)));
  if (den == 0.0) throw ArgumentError("'" + s + "' divides by zero");
  return one(trim(s.substr(0, slash))) / den;
}

long long to_integer(const std::string& text) {
  const std::string s = trim(text);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ArgumentError("'" + s + "' is not an integer");
  return v;
}

int to_int(const std::string& s) {
  const long long v = to_integer(s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ArgumentError("'" + s + "' is out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t to_seed(const std::string& s) {
  const long long v = to_integer(s);
  if (v < 0) throw ArgumentError("seeds must be non-negative");
  return static_cast<std::uint64_t>(v);
}

bool to_bool(const std::string& text) {
  std::string s = trim(text);
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ArgumentError("'" + text + "' is not a boolean");
}

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (const auto& i : items) s += (s.empty() ? "" : ",") + i;
  return s;
}

std::string join_ints(const std::vector<int>& items) {
  std::string s;
  for (int i : items) s += (s.empty() ? "" : ",") + std::to_string(i);
  return s;
}

UsvtThreshold parse_threshold(const std::string& s) {
  if (s == "rank") return UsvtThreshold::Rank;
  if (s == "absolute") return UsvtThreshold::Absolute;
  throw ArgumentError("threshold must be rank or absolute, got '" + s + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

// Keys resolved before the rest, because other defaults depend on them.
const std::vector<std::string> kLeadKeys = {"run.preset", "victim.framework", "attack.type", "attack.framework"};

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    // run
    t["run.preset"] = [](ExperimentConfig&, const std::string&) {};
    t["run.seed"] = [](ExperimentConfig& c, const std::string& v) { c.seed = to_seed(v); };
    t["run.scale"] = [](ExperimentConfig& c, const std::string& v) { c.scale = to_double(v); };
    t["run.out"] = [](ExperimentConfig& c, const std::string& v) { c.out = v; };
    t["run.poison_fraction"] = [](ExperimentConfig& c, const std::string& v) { c.poison_fraction = to_double(v); };
    t["run.checkpoint"] = [](ExperimentConfig& c, const std::string& v) { c.checkpoint = v; };
    t["run.pretrained"] = [](ExperimentConfig& c, const std::string& v) { c.pretrained = v; };
    t["run.results"] = [](ExperimentConfig& c, const std::string& v) { c.results = v; };
    t["run.sweep_axis"] = [](ExperimentConfig& c, const std::string& v) { c.sweep_axis = v; };
    t["run.sweep_values"] = [](ExperimentConfig& c, const std::string& v) { c.sweep_values = split_list(v); };
    t["run.deterministic"] = [](ExperimentConfig& c, const std::string& v) { c.deterministic = to_bool(v); };
    // dataset
    t["dataset.name"] = [](ExperimentConfig& c, const std::string& v) {
      if (v != "synthetic" && v != "cifar10") throw ArgumentError("must be synthetic or cifar10, got '" + v + "'");
      c.dataset.name = v;
    };
    t["dataset.classes"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.classes = to_int(v); };
    t["dataset.per_class"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.per_class = to_int(v); };
    t["dataset.eval_per_class"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.eval_per_class = to_int(v); };
    t["dataset.height"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.height = to_int(v); };
    t["dataset.width"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.width = to_int(v); };
    t["dataset.seed"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.seed = to_seed(v); };
    t["dataset.path"] = [](ExperimentConfig& c, const std::string& v) { c.dataset.path = v; };
    // victim and attacker frameworks share their key names
    using Getter = FrameworkConfig& (*)(ExperimentConfig&);
    auto framework_keys = [&t](const std::string& section, Getter get) {
      t[section + ".framework"] = [](ExperimentConfig&, const std::string&) {};
      t[section + ".epochs"] = [get](ExperimentConfig& c, const std::string& v) { get(c).epochs = to_int(v); };
      t[section + ".batch_size"] = [get](ExperimentConfig& c, const std::string& v) { get(c).batch_size = to_int(v); };
      t[section + ".learning_rate"] = [get](ExperimentConfig& c, const std::string& v) { get(c).learning_rate = to_double(v); };
      t[section + ".weight_decay"] = [get](ExperimentConfig& c, const std::string& v) { get(c).weight_decay = to_double(v); };
      t[section + ".sgd_momentum"] = [get](ExperimentConfig& c, const std::string& v) { get(c).sgd_momentum = to_double(v); };
      t[section + ".temperature"] = [get](ExperimentConfig& c, const std::string& v) { get(c).temperature = to_double(v); };
      t[section + ".momentum"] = [get](ExperimentConfig& c, const std::string& v) { get(c).momentum = to_double(v); };
      t[section + ".queue_size"] = [get](ExperimentConfig& c, const std::string& v) { get(c).queue_size = to_int(v); };
      t[section + ".crop_scale_min"] = [get](ExperimentConfig& c, const std::string& v) { get(c).views.crop_scale_min = to_double(v); };
      t[section + ".flip_prob"] = [get](ExperimentConfig& c, const std::string& v) { get(c).views.flip_prob = to_double(v); };
      t[section + ".jitter_prob"] = [get](ExperimentConfig& c, const std::string& v) { get(c).views.jitter_prob = to_double(v); };
      t[section + ".grayscale_prob"] = [get](ExperimentConfig& c, const std::string& v) { get(c).views.grayscale_prob = to_double(v); };
      t[section + ".conv_channels"] = [get](ExperimentConfig& c, const std::string& v) {
        std::vector<int> ch;
        for (const auto& s : split_list(v)) ch.push_back(to_int(s));
        get(c).arch.conv_channels = ch;
      };
      t[section + ".batch_norm"] = [get](ExperimentConfig& c, const std::string& v) { get(c).arch.batch_norm = to_bool(v); };
    };
    framework_keys("victim", [](ExperimentConfig& c) -> FrameworkConfig& { return c.victim; });
    framework_keys("attack", [](ExperimentConfig& c) -> FrameworkConfig& { return c.attack.framework; });
    // attack
    t["attack.type"] = [](ExperimentConfig&, const std::string&) {};
    t["attack.epsilon"] = [](ExperimentConfig& c, const std::string& v) { c.attack.pgd.epsilon = to_double(v); };
    t["attack.alpha"] = [](ExperimentConfig& c, const std::string& v) { c.attack.pgd.alpha = to_double(v); };
    t["attack.pgd_steps"] = [](ExperimentConfig& c, const std::string& v) {
      c.attack.pgd.steps = to_int(v);
      c.attack.schedule.pgd_steps = c.attack.pgd.steps;
    };
    t["attack.random_init"] = [](ExperimentConfig& c, const std::string& v) { c.attack.pgd.random_init = to_bool(v); };
    t["attack.iterations"] = [](ExperimentConfig& c, const std::string& v) { c.attack.schedule.iterations = to_int(v); };
    t["attack.model_epochs"] = [](ExperimentConfig& c, const std::string& v) { c.attack.schedule.model_epochs = to_int(v); };
    t["attack.data_fraction"] = [](ExperimentConfig& c, const std::string& v) { c.attack.schedule.data_fraction = to_double(v); };
    t["attack.branch_mode"] = [](ExperimentConfig& c, const std::string& v) { c.attack.schedule.branch_mode = parse_branch_mode(v); };
    t["attack.poison_file"] = [](ExperimentConfig& c, const std::string& v) {
      if (v.empty()) {
        c.attack.poison_file.reset();
      } else {
        c.attack.poison_file = v;
      }
    };
    t["attack.classifier_epochs"] = [](ExperimentConfig& c, const std::string& v) { c.attack.classifier.epochs = to_int(v); };
    t["attack.classifier_learning_rate"] = [](ExperimentConfig& c, const std::string& v) { c.attack.classifier.learning_rate = to_double(v); };
    // defense
    t["defense.kind"] = [](ExperimentConfig& c, const std::string& v) { c.defense.kind = parse_defense_kind(v); };
    t["defense.sigma"] = [](ExperimentConfig& c, const std::string& v) { c.defense.sigma = to_double(v); };
    t["defense.kernel"] = [](ExperimentConfig& c, const std::string& v) { c.defense.kernel = to_int(v); };
    t["defense.hole"] = [](ExperimentConfig& c, const std::string& v) { c.defense.hole = to_int(v); };
    t["defense.drop_prob"] = [](ExperimentConfig& c, const std::string& v) { c.defense.drop_prob = to_double(v); };
    t["defense.clip_fraction"] = [](ExperimentConfig& c, const std::string& v) { c.defense.clip_fraction = to_double(v); };
    t["defense.threshold"] = [](ExperimentConfig& c, const std::string& v) { c.defense.threshold = parse_threshold(v); };
    // probe
    t["probe.epochs"] = [](ExperimentConfig& c, const std::string& v) { c.probe.epochs = to_int(v); };
    t["probe.batch_size"] = [](ExperimentConfig& c, const std::string& v) { c.probe.batch_size = to_int(v); };
    t["probe.learning_rate"] = [](ExperimentConfig& c, const std::string& v) { c.probe.learning_rate = to_double(v); };
    t["probe.train_fraction"] = [](ExperimentConfig& c, const std::string& v) { c.probe.train_fraction = to_double(v); };
    return t;
  }();
  return table;
}

int scale_count(int v, double scale) {
  if (v <= 0) return v;
  return std::max(1, static_cast<int>(std::lround(v * scale)));
}

}  // namespace

void apply_attack_defaults(AttackSpec& spec) {
  spec.pgd = PgdConfig{};
  switch (spec.type) {
    case AttackType::EmpClClass:
    case AttackType::EmpSupervisedClass:
      spec.schedule = AttackSchedule::class_wise();
      spec.pgd.steps = spec.schedule.pgd_steps;
      break;
    case AttackType::EmpClSample:
    case AttackType::EmpSupervisedSample:
      spec.schedule = AttackSchedule::sample_wise();
      spec.pgd.steps = spec.schedule.pgd_steps;
      break;
    default:
      spec.schedule = AttackSchedule::sample_wise();
      spec.pgd.steps = 200;
      break;
  }
  spec.pgd.direction = spec.type == AttackType::ApCl || spec.type == AttackType::ApSupervised ? Direction::Maximize
                                                                                              : Direction::Minimize;
}

void apply_desk_attack_defaults(AttackSpec& spec) {
  apply_attack_defaults(spec);
  spec.schedule.iterations = 20;
  if (spec.type == AttackType::ApCl || spec.type == AttackType::ApSupervised) spec.pgd.steps = 20;
}

ExperimentConfig parse_experiment_config(const std::string& ini_text, const std::vector<std::string>& overrides) {
  std::vector<std::string> errors;
  std::vector<std::pair<std::string, std::string>> entries;

  boost::property_tree::ptree tree;
  try {
    std::istringstream is(ini_text);
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({std::string("config: ") + e.what()});
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      errors.push_back("config: key '" + section + "' is outside any section");
      continue;
    }
    for (const auto& [key, value] : body) entries.emplace_back(section + "." + key, trim(value.data()));
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      errors.push_back("override '" + o + "' must look like section.key=value");
      continue;
    }
    entries.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }

  const auto& table = setters();
  std::map<std::string, std::string> lead;
  for (const auto& [key, value] : entries) {
    if (!table.count(key)) {
      errors.push_back("unknown config key '" + key + "'");
      continue;
    }
    for (const auto& k : kLeadKeys) {
      if (key == k) lead[k] = value;
    }
  }

  ExperimentConfig c;
  try {
    if (lead.count("run.preset")) {
      const std::string p = lead["run.preset"];
      if (p != "full" && p != "desk") throw ArgumentError("must be full or desk, got '" + p + "'");
      c.preset = p;
    }
  } catch (const std::exception& e) {
    errors.push_back("run.preset: " + std::string(e.what()));
  }
  const bool desk = c.preset == "desk";
  auto framework_of = [&](const std::string& key) {
    try {
      if (lead.count(key)) return parse_framework(lead[key]);
    } catch (const std::exception& e) {
      errors.push_back(key + ": " + e.what());
    }
    return Framework::SimClr;
  };
  const Framework vf = framework_of("victim.framework"), af = framework_of("attack.framework");
  c.victim = desk ? FrameworkConfig::desk(vf) : FrameworkConfig::defaults(vf);
  c.attack.framework = desk ? FrameworkConfig::desk(af) : FrameworkConfig::defaults(af);
  try {
    if (lead.count("attack.type")) c.attack.type = parse_attack_type(lead["attack.type"]);
  } catch (const std::exception& e) {
    errors.push_back(std::string("attack.type: ") + e.what());
  }
  if (desk) {
    apply_desk_attack_defaults(c.attack);
    c.dataset.classes = 2;
    c.dataset.per_class = 256;
    c.dataset.eval_per_class = 256;
  } else {
    apply_attack_defaults(c.attack);
  }

  for (const auto& [key, value] : entries) {
    auto it = table.find(key);
    if (it == table.end()) continue;
    try {
      it->second(c, value);
    } catch (const std::exception& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  const ImageShape shape{3, c.dataset.height, c.dataset.width};
  c.victim.arch.input = shape;
  c.attack.framework.arch.input = shape;
  c.attack.classifier.arch.input = shape;
  for (auto& v : c.violations()) errors.push_back(std::move(v));
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"cannot read config file " + path.string()});
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_experiment_config(ss.str(), overrides);
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[run]\n"
     << "preset = " << c.preset << "\n"
     << "seed = " << c.seed << "\n"
     << "scale = " << num(c.scale) << "\n"
     << "out = " << c.out << "\n"
     << "poison_fraction = " << num(c.poison_fraction) << "\n"
     << "checkpoint = " << c.checkpoint << "\n"
     << "pretrained = " << c.pretrained << "\n"
     << "results = " << c.results << "\n"
     << "sweep_axis = " << c.sweep_axis << "\n"
     << "sweep_values = " << join(c.sweep_values) << "\n"
     << "deterministic = " << (c.deterministic ? "true" : "false") << "\n\n";
  os << "[dataset]\n"
     << "name = " << c.dataset.name << "\n"
     << "classes = " << c.dataset.classes << "\n"
     << "per_class = " << c.dataset.per_class << "\n"
     << "eval_per_class = " << c.dataset.eval_per_class << "\n"
     << "height = " << c.dataset.height << "\n"
     << "width = " << c.dataset.width << "\n"
     << "seed = " << c.dataset.seed << "\n"
     << "path = " << c.dataset.path << "\n\n";
  auto framework = [&os](const FrameworkConfig& f) {
    os << "framework = " << to_string(f.framework) << "\n"
       << "epochs = " << f.epochs << "\n"
       << "batch_size = " << f.batch_size << "\n"
       << "learning_rate = " << num(f.learning_rate) << "\n"
       << "weight_decay = " << num(f.weight_decay) << "\n"
       << "sgd_momentum = " << num(f.sgd_momentum) << "\n"
       << "temperature = " << num(f.temperature) << "\n"
       << "momentum = " << num(f.momentum) << "\n"
       << "queue_size = " << f.queue_size << "\n"
       << "crop_scale_min = " << num(f.views.crop_scale_min) << "\n"
       << "flip_prob = " << num(f.views.flip_prob) << "\n"
       << "jitter_prob = " << num(f.views.jitter_prob) << "\n"
       << "grayscale_prob = " << num(f.views.grayscale_prob) << "\n"
       << "conv_channels = " << join_ints(f.arch.conv_channels) << "\n"
       << "batch_norm = " << (f.arch.batch_norm ? "true" : "false") << "\n";
  };
  os << "[victim]\n";
  framework(c.victim);
  os << "\n[attack]\n"
     << "type = " << to_string(c.attack.type) << "\n";
  framework(c.attack.framework);
  os << "epsilon = " << num(c.attack.pgd.epsilon) << "\n"
     << "alpha = " << num(c.attack.pgd.alpha) << "\n"
     << "pgd_steps = " << c.attack.pgd.steps << "\n"
     << "random_init = " << (c.attack.pgd.random_init ? "true" : "false") << "\n"
     << "iterations = " << c.attack.schedule.iterations << "\n"
     << "model_epochs = " << c.attack.schedule.model_epochs << "\n"
     << "data_fraction = " << num(c.attack.schedule.data_fraction) << "\n"
     << "branch_mode = " << to_string(c.attack.schedule.branch_mode) << "\n"
     << "poison_file = " << (c.attack.poison_file ? c.attack.poison_file->string() : "") << "\n"
     << "classifier_epochs = " << c.attack.classifier.epochs << "\n"
     << "classifier_learning_rate = " << num(c.attack.classifier.learning_rate) << "\n\n";
  os << "[defense]\n"
     << "kind = " << to_string(c.defense.kind) << "\n"
     << "sigma = " << num(c.defense.sigma) << "\n"
     << "kernel = " << c.defense.kernel << "\n"
     << "hole = " << c.defense.hole << "\n"
     << "drop_prob = " << num(c.defense.drop_prob) << "\n"
     << "clip_fraction = " << num(c.defense.clip_fraction) << "\n"
     << "threshold = " << (c.defense.threshold == UsvtThreshold::Rank ? "rank" : "absolute") << "\n\n";
  os << "[probe]\n"
     << "epochs = " << c.probe.epochs << "\n"
     << "batch_size = " << c.probe.batch_size << "\n"
     << "learning_rate = " << num(c.probe.learning_rate) << "\n"
     << "train_fraction = " << num(c.probe.train_fraction) << "\n";
  return os.str();
}

std::filesystem::path ExperimentConfig::data_root() const {
  const char* env = std::getenv("CLPOISON_DATA_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path(".");
}

namespace {

std::filesystem::path cifar_dir(const ExperimentConfig& c) {
  std::filesystem::path p(c.dataset.path);
  return p.is_absolute() ? p : c.data_root() / p;
}

std::vector<std::filesystem::path> cifar_train_files(const ExperimentConfig& c) {
  std::vector<std::filesystem::path> files;
  for (int i = 1; i <= 5; ++i) files.push_back(cifar_dir(c) / ("data_batch_" + std::to_string(i) + ".bin"));
  return files;
}

}  // namespace

std::vector<std::string> ExperimentConfig::violations() const {
  std::vector<std::string> v;
  auto add = [&v](const std::string& prefix, const std::vector<std::string>& more) {
    for (const auto& m : more) v.push_back(prefix + m);
  };
  if (!(scale > 0.0 && scale <= 1.0)) v.push_back("run.scale must lie in (0, 1]");
  if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) v.push_back("run.poison_fraction must lie in [0, 1]");
  if (out.empty()) v.push_back("run.out must be non-empty");
  if (dataset.classes < 2) v.push_back("dataset.classes must be >= 2");
  if (dataset.per_class < 1 || dataset.eval_per_class < 1) v.push_back("dataset per-class counts must be >= 1");
  if (dataset.height < 1 || dataset.width < 1) v.push_back("dataset height and width must be >= 1");
  if (dataset.name == "cifar10") {
    if (dataset.classes != 10) v.push_back("dataset.classes must be 10 for cifar10");
    if (dataset.height != 32 || dataset.width != 32) v.push_back("dataset size must be 32x32 for cifar10");
    auto files = cifar_train_files(*this);
    files.push_back(cifar_dir(*this) / "test_batch.bin");
    for (const auto& f : files) {
      if (!std::filesystem::exists(f)) v.push_back("dataset file " + f.string() + " does not exist");
    }
  }
  add("victim: ", victim.violations());
  add("attack: ", attack.violations());
  if (attack.poison_file && !std::filesystem::exists(*attack.poison_file)) {
    v.push_back("attack.poison_file " + attack.poison_file->string() + " does not exist");
  }
  if (!pretrained.empty() && !std::filesystem::exists(pretrained)) v.push_back("run.pretrained " + pretrained + " does not exist");
  if (!checkpoint.empty() && !std::filesystem::exists(checkpoint)) v.push_back("run.checkpoint " + checkpoint + " does not exist");
  add("", defense.violations());
  if (probe.epochs < 0 || probe.batch_size < 1) v.push_back("probe: epochs must be >= 0 and batch_size >= 1");
  if (!(probe.train_fraction > 0.0 && probe.train_fraction < 1.0)) v.push_back("probe.train_fraction must lie in (0, 1)");
  if (!sweep_axis.empty()) {
    try {
      parse_sweep_axis(sweep_axis);
    } catch (const std::exception& e) {
      v.push_back(std::string("run.sweep_axis: ") + e.what());
    }
  }
  return v;
}

void ExperimentConfig::validate() const {
  auto v = violations();
  if (!v.empty()) throw ConfigError(std::move(v));
}

ExperimentConfig ExperimentConfig::scaled() const {
  ExperimentConfig c = *this;
  c.victim.epochs = scale_count(victim.epochs, scale);
  c.attack.framework.epochs = scale_count(attack.framework.epochs, scale);
  c.attack.classifier.epochs = scale_count(attack.classifier.epochs, scale);
  c.attack.schedule.iterations = scale_count(attack.schedule.iterations, scale);
  c.dataset.per_class = scale_count(dataset.per_class, scale);
  c.dataset.eval_per_class = scale_count(dataset.eval_per_class, scale);
  c.scale = 1.0;
  return c;
}

CellSpec ExperimentConfig::cell() const {
  CellSpec s;
  s.attack = attack;
  s.victim = victim;
  s.defense = defense;
  s.poison_fraction = poison_fraction;
  s.probe = probe;
  s.seed = seed;
  s.record_wall_time = !deterministic;
  return s;
}

namespace {

LabeledImageDataset cifar_subset(const LabeledImageDataset& full, int per_class) {
  std::vector<int> taken(static_cast<std::size_t>(full.class_count()), 0);
  std::vector<int> idx;
  for (int i = 0; i < full.size(); ++i) {
    int& t = taken[static_cast<std::size_t>(full.labels()[static_cast<std::size_t>(i)])];
    if (t < per_class) {
      ++t;
      idx.push_back(i);
    }
  }
  return full.subset(idx);
}

}  // namespace

LabeledImageDataset load_train_set(const ExperimentConfig& c) {
  if (c.dataset.name == "cifar10") return cifar_subset(load_cifar_batches(cifar_train_files(c)), c.dataset.per_class);
  return make_synthetic(c.dataset.classes, c.dataset.per_class, c.dataset.height, c.dataset.width, c.dataset.seed);
}

LabeledImageDataset load_eval_set(const ExperimentConfig& c) {
  if (c.dataset.name == "cifar10") {
    return cifar_subset(load_cifar_batches({cifar_dir(c) / "test_batch.bin"}), c.dataset.eval_per_class);
  }
  return make_synthetic(c.dataset.classes, c.dataset.eval_per_class, c.dataset.height, c.dataset.width,
                        c.dataset.seed + 1);
}

}  // namespace clpoison
