#include "anynet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace anynet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(int line, const std::string& what) {
  throw ConfigError(detail::cat("config line ", line, ": ", what));
}

long long to_int(const std::string& v, int line) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    bad(line, detail::cat("expected an integer, got '", v, "'"));
  }
  if (used != v.size()) bad(line, detail::cat("expected an integer, got '", v, "'"));
  return out;
}

std::uint64_t to_u64(const std::string& v, int line) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    bad(line, detail::cat("expected a non-negative integer, got '", v, "'"));
  }
  if (used != v.size() || v.front() == '-')
    bad(line, detail::cat("expected a non-negative integer, got '", v, "'"));
  return out;
}

double to_double(const std::string& v, int line) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    bad(line, detail::cat("expected a number, got '", v, "'"));
  }
  if (used != v.size()) bad(line, detail::cat("expected a number, got '", v, "'"));
  return out;
}

bool to_bool(const std::string& v, int line) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad(line, detail::cat("expected true or false, got '", v, "'"));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> to_int_list(const std::string& v, int line) {
  std::vector<int> out;
  for (const std::string& item : split_list(v))
    out.push_back(static_cast<int>(to_int(item, line)));
  return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  std::set<std::string> seen;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') bad(line, detail::cat("unterminated section '", s, "'"));
      section = s.substr(1, s.size() - 2);
      if (section != "arch" && section != "train" && section != "data")
        bad(line, detail::cat("unknown section [", section, "]"));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) bad(line, detail::cat("expected key = value, got '", s, "'"));
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) bad(line, "empty key");
    const std::string qualified = section.empty() ? key : section + "." + key;
    if (!seen.insert(qualified).second) bad(line, detail::cat("duplicate key '", qualified, "'"));

    if (section.empty()) {
      if (key == "name")
        cfg.name = value;
      else
        bad(line, detail::cat("unknown top-level key '", key, "' (only 'name' may precede "
                              "the sections)"));
    } else if (section == "arch") {
      ArchConfig& a = cfg.arch;
      if (key == "family")
        a.family = family_from_string(value);
      else if (key == "blocks")
        a.blocks = static_cast<int>(to_int(value, line));
      else if (key == "width")
        a.width = static_cast<int>(to_int(value, line));
      else if (key == "bottleneck")
        a.bottleneck = static_cast<int>(to_int(value, line));
      else if (key == "subnetworks")
        a.subnetworks = static_cast<int>(to_int(value, line));
      else if (key == "cardinality")
        a.cardinality = static_cast<int>(to_int(value, line));
      else if (key == "scales")
        a.scales = static_cast<int>(to_int(value, line));
      else if (key == "classes")
        a.classes = static_cast<int>(to_int(value, line));
      else if (key == "level_classes")
        a.level_classes = to_int_list(value, line);
      else if (key == "shared_bn")
        a.shared_bn = to_bool(value, line);
      else
        bad(line, detail::cat("unknown [arch] key '", key, "'"));
    } else if (section == "train") {
      TrainConfig& t = cfg.train;
      if (key == "epochs")
        t.epochs = static_cast<int>(to_int(value, line));
      else if (key == "batch_size")
        t.batch_size = static_cast<int>(to_int(value, line));
      else if (key == "base_lr")
        t.base_lr = to_double(value, line);
      else if (key == "momentum")
        t.momentum = to_double(value, line);
      else if (key == "weight_decay")
        t.weight_decay = to_double(value, line);
      else if (key == "seed")
        t.seed = to_u64(value, line);
      else if (key == "augment")
        t.augment = to_bool(value, line);
      else if (key == "divergence_cap")
        t.divergence_cap = to_double(value, line);
      else
        bad(line, detail::cat("unknown [train] key '", key, "'"));
    } else {  // data
      DataConfig& d = cfg.data;
      if (key == "kind")
        d.kind = value;
      else if (key == "paths")
        d.paths = split_list(value);
      else if (key == "taxonomy")
        d.taxonomy = value;
      else if (key == "image_size")
        d.image_size = static_cast<int>(to_int(value, line));
      else if (key == "classes")
        d.classes = static_cast<int>(to_int(value, line));
      else if (key == "samples")
        d.samples = static_cast<int>(to_int(value, line));
      else if (key == "noise")
        d.noise = to_double(value, line);
      else if (key == "coarse_groups")
        d.coarse_groups = static_cast<int>(to_int(value, line));
      else if (key == "seed")
        d.seed = to_u64(value, line);
      else if (key == "held_out")
        d.held_out = static_cast<int>(to_int(value, line));
      else
        bad(line, detail::cat("unknown [data] key '", key, "'"));
    }
  }

  cfg.arch.validate();
  cfg.train.validate();
  if (cfg.data.kind != "synthetic" && cfg.data.kind != "cifar10" && cfg.data.kind != "cifar100")
    throw ConfigError(detail::cat("unknown data kind '", cfg.data.kind,
                                  "' (synthetic, cifar10, cifar100)"));
  if (cfg.data.kind != "synthetic" && cfg.data.paths.empty())
    throw ConfigError(detail::cat("data kind '", cfg.data.kind, "' needs at least one path"));
  if (cfg.data.held_out < 0)
    throw ConfigError(detail::cat("held_out must be >= 0, got ", cfg.data.held_out));
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError(detail::cat("cannot open config '", path, "'"));
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(detail::cat("'", path, "': ", e.what()));
  }
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << std::setprecision(17);
  if (!cfg.name.empty()) out << "name = " << cfg.name << "\n\n";

  const ArchConfig& a = cfg.arch;
  out << "[arch]\n";
  out << "family = " << family_to_string(a.family) << "\n";
  out << "blocks = " << a.blocks << "\n";
  out << "width = " << a.width << "\n";
  out << "bottleneck = " << a.bottleneck << "\n";
  out << "subnetworks = " << a.subnetworks << "\n";
  if (a.cardinality) out << "cardinality = " << *a.cardinality << "\n";
  out << "scales = " << a.scales << "\n";
  out << "classes = " << a.classes << "\n";
  if (!a.level_classes.empty()) {
    out << "level_classes = ";
    for (std::size_t i = 0; i < a.level_classes.size(); ++i)
      out << (i ? "," : "") << a.level_classes[i];
    out << "\n";
  }
  out << "shared_bn = " << (a.shared_bn ? "true" : "false") << "\n\n";

  const TrainConfig& t = cfg.train;
  out << "[train]\n";
  out << "epochs = " << t.epochs << "\n";
  out << "batch_size = " << t.batch_size << "\n";
  out << "base_lr = " << t.base_lr << "\n";
  out << "momentum = " << t.momentum << "\n";
  out << "weight_decay = " << t.weight_decay << "\n";
  out << "seed = " << t.seed << "\n";
  out << "augment = " << (t.augment ? "true" : "false") << "\n";
  out << "divergence_cap = " << t.divergence_cap << "\n\n";

  const DataConfig& d = cfg.data;
  out << "[data]\n";
  out << "kind = " << d.kind << "\n";
  if (!d.paths.empty()) {
    out << "paths = ";
    for (std::size_t i = 0; i < d.paths.size(); ++i) out << (i ? "," : "") << d.paths[i];
    out << "\n";
  }
  if (!d.taxonomy.empty()) out << "taxonomy = " << d.taxonomy << "\n";
  out << "image_size = " << d.image_size << "\n";
  out << "classes = " << d.classes << "\n";
  out << "samples = " << d.samples << "\n";
  out << "noise = " << d.noise << "\n";
  out << "coarse_groups = " << d.coarse_groups << "\n";
  out << "seed = " << d.seed << "\n";
  out << "held_out = " << d.held_out << "\n";
  return out.str();
}

LoadedData load_dataset(const DataConfig& cfg) {
  LoadedData out;
  if (cfg.kind == "synthetic") {
    out.dataset = synth_dataset(cfg.seed, cfg.samples, cfg.classes, cfg.image_size, cfg.noise,
                                cfg.coarse_groups);
  } else if (cfg.kind == "cifar10") {
    out.dataset = load_cifar_binary(cfg.paths, 10);
  } else if (cfg.kind == "cifar100") {
    out.dataset = load_cifar_binary(cfg.paths, 100);
  } else {
    throw ConfigError(detail::cat("unknown data kind '", cfg.kind, "'"));
  }
  if (!cfg.taxonomy.empty()) attach_hierarchy(out.dataset, load_taxonomy(cfg.taxonomy));
  auto [kept, held] = split_indices(out.dataset.size(), cfg.held_out, cfg.seed);
  out.train_idx = std::move(kept);
  out.val_idx = std::move(held);
  return out;
}

}  // namespace anynet
