// Command-line surface: build / train / flops / eval / infer / gradcheck /
// ablate-bn. Exit codes: 0 success, 1 internal error or failed check,
// 2 infeasible or invalid request.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "anynet/checkpoint.hpp"
#include "anynet/config.hpp"
#include "anynet/gradcheck.hpp"
#include "anynet/runner.hpp"

namespace {

using namespace anynet;

std::string default_out() {
  const char* env = std::getenv("ANYNET_OUT");
  return env && *env ? env : ".";
}

std::string experiment_name(const ExperimentConfig& cfg) {
  return cfg.name.empty() ? "experiment" : cfg.name;
}

std::string artifact(const std::string& out_dir, const std::string& name,
                     const std::string& suffix) {
  std::filesystem::create_directories(out_dir);
  return (std::filesystem::path(out_dir) / (name + suffix)).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out.good()) throw UsageError(detail::cat("cannot write '", path, "'"));
  out << text;
}

// ---------------------------------------------------------------- build ----

struct BuildArgs {
  std::string config_path;
  std::string out_dir = default_out();
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_build(const BuildArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  const std::uint64_t seed = args.seed_set ? args.seed : cfg.train.seed;
  AnytimeNetwork<double> net = build_network<double>(cfg.arch, seed);
  const int image = cfg.data.kind == "synthetic" ? cfg.data.image_size : 0;
  FlopsReport report = audit_network(cfg.arch, image);

  std::cout << "experiment      " << experiment_name(cfg) << "\n";
  std::cout << "family          " << family_to_string(cfg.arch.family) << "\n";
  std::cout << "depth           " << cfg.arch.depth() << " weighted layers\n";
  std::cout << "cardinality     " << net.C << "\n";
  std::cout << "image size      " << report.image_size << "\n";
  std::cout << "parameters      " << net.parameter_count() << "\n\n";
  std::cout << report.table();

  const std::string ckpt = artifact(args.out_dir, experiment_name(cfg), ".ckpt");
  save_checkpoint(net, serialize_config(cfg), ckpt);
  std::cout << "\nwrote " << ckpt << "\n";
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
  std::string config_path;
  std::string out_dir = default_out();
  std::string resume;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int epochs = -1;  // <0 means keep the config's value
  bool quiet = false;
};

int cmd_train(const TrainArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (args.seed_set) cfg.train.seed = args.seed;
  if (args.epochs >= 0) cfg.train.epochs = args.epochs;
  LoadedData data = load_dataset(cfg.data);
  AnytimeNetwork<double> net = build_network<double>(cfg.arch, cfg.train.seed);
  if (!args.resume.empty()) {
    load_checkpoint(net, args.resume);
    std::cout << "resumed from " << args.resume << "\n";
  }

  const std::string name = experiment_name(cfg);
  const std::string ckpt = artifact(args.out_dir, name, ".ckpt");
  const std::string log_path = artifact(args.out_dir, name, "_train_log.csv");
  const std::string config_text = serialize_config(cfg);

  auto on_epoch = [&](int epoch, const TrainLog& log) {
    save_checkpoint(net, config_text, ckpt);  // periodic checkpoint
    write_text(log_path, log.csv());
    if (args.quiet) return;
    std::ostringstream line;
    line << "epoch " << std::setw(3) << epoch << "  lr "
         << log.rows.back().lr << "  train err";
    for (int k = 1; k <= cfg.arch.subnetworks; ++k)
      line << ' ' << std::fixed << std::setprecision(3) << log.last(k, 1, "train").error;
    if (!data.val_idx.empty()) {
      line << "  val err";
      for (int k = 1; k <= cfg.arch.subnetworks; ++k)
        line << ' ' << std::fixed << std::setprecision(3) << log.last(k, 1, "val").error;
    }
    std::cout << line.str() << "\n";
  };

  TrainLog log = train_joint(net, data.dataset, data.train_idx, data.val_idx, cfg.train,
                             on_epoch);
  // Epoch 0 runs write nothing in the loop; always leave both artifacts.
  save_checkpoint(net, config_text, ckpt);
  write_text(log_path, log.csv());
  std::cout << "wrote " << ckpt << "\nwrote " << log_path << "\n";
  return 0;
}

// ---------------------------------------------------------------- flops ----

struct FlopsArgs {
  std::string config_path;
  std::string fixture;
  int image_size = 0;
  int layer_detail = 0;  // print per-layer rows for this sub-network
  bool csv = false;
};

int cmd_flops(const FlopsArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  FlopsReport report = audit_network(cfg.arch, args.image_size);
  if (args.csv)
    std::cout << report.csv();
  else
    std::cout << report.table();
  if (args.layer_detail > 0) std::cout << "\n" << report.layer_table(args.layer_detail);

  if (args.fixture.empty()) return 0;

  std::ifstream in(args.fixture);
  if (!in.good()) throw UsageError(detail::cat("cannot open fixture '", args.fixture, "'"));
  std::string line;
  std::getline(in, line);  // header: name,k,flops
  const std::string name = experiment_name(cfg);
  int rows = 0;
  double worst = 0.0;
  std::cout << "\nfixture comparison (" << name << ")\n";
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string rec_name, k_str, flops_str;
    if (!std::getline(row, rec_name, ',') || !std::getline(row, k_str, ',') ||
        !std::getline(row, flops_str, ','))
      throw FormatError(detail::cat("fixture row '", line, "' is not name,k,flops"));
    if (rec_name != name) continue;
    const int k = std::stoi(k_str);
    const double expected = std::stod(flops_str);
    const double got = static_cast<double>(report.at(k).total);
    const double rel = std::abs(got - expected) / expected;
    worst = std::max(worst, rel);
    ++rows;
    std::cout << "  k=" << k << "  counted " << std::fixed << std::setprecision(0) << got
              << "  fixture " << expected << "  rel " << std::setprecision(4)
              << rel * 100.0 << "%\n";
  }
  if (rows == 0)
    throw ConfigError(detail::cat("fixture '", args.fixture, "' has no rows named '", name,
                                  "'"));
  std::cout << (worst <= 0.05 ? "PASS" : "FAIL") << ": worst relative error "
            << std::setprecision(4) << worst * 100.0 << "% (tolerance 5%)\n";
  return worst <= 0.05 ? 0 : 1;
}

// ----------------------------------------------------------------- eval ----

struct EvalArgs {
  std::string ckpt;
  std::string data_path;  // optional config whose [data] section replaces the embedded one
  std::string out_dir = default_out();
  std::string split = "auto";  // auto | train | val | all
};

int cmd_eval(const EvalArgs& args) {
  ExperimentConfig cfg = parse_config(checkpoint_config_text(args.ckpt));
  if (!args.data_path.empty()) cfg.data = load_config(args.data_path).data;
  AnytimeNetwork<double> net = build_network<double>(cfg.arch, cfg.train.seed);
  load_checkpoint(net, args.ckpt);
  LoadedData data = load_dataset(cfg.data);

  std::vector<int> indices;
  std::string split = args.split;
  if (split == "auto") split = data.val_idx.empty() ? "all" : "val";
  if (split == "train") {
    indices = data.train_idx;
  } else if (split == "val") {
    if (data.val_idx.empty()) throw UsageError("no held-out samples in this config");
    indices = data.val_idx;
  } else if (split == "all") {
    indices.resize(static_cast<std::size_t>(data.dataset.size()));
    for (int i = 0; i < data.dataset.size(); ++i) indices[static_cast<std::size_t>(i)] = i;
  } else {
    throw UsageError(detail::cat("unknown split '", split, "' (train, val, all)"));
  }

  EvalResult res = evaluate(net, data.dataset, indices, cfg.train.batch_size);
  FlopsReport report = audit_network(cfg.arch, data.dataset.image_size);
  std::cout << "split " << split << " (" << indices.size() << " samples)\n";
  std::cout << "subnetwork  level  flops        top1-error\n";
  for (int k = 1; k <= cfg.arch.subnetworks; ++k)
    for (int d = 1; d <= cfg.arch.levels(); ++d)
      std::cout << std::setw(10) << k << std::setw(7) << d << std::setw(13)
                << report.at(k).total << "  " << std::fixed << std::setprecision(4)
                << res.error[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(d - 1)]
                << "\n";

  const std::string curve = artifact(args.out_dir, experiment_name(cfg), "_curve.csv");
  write_text(curve, anytime_curve_csv(report, res.error));
  std::cout << "wrote " << curve << "\n";
  return 0;
}

// ---------------------------------------------------------------- infer ----

struct InferArgs {
  std::string ckpt;
  std::string input;
  std::uint64_t budget = 0;
  bool budget_set = false;
  int subnetwork = 0;
  std::string policy;  // "k:level,k:level"
  bool stream = false;
  int limit = 8;
  std::uint64_t seed = 0;
};

std::map<int, int> parse_policy(const std::string& text, const ArchConfig& arch) {
  std::map<int, int> policy;
  if (text.empty()) return policy;
  std::istringstream in(text);
  std::string pair;
  while (std::getline(in, pair, ',')) {
    const auto colon = pair.find(':');
    if (colon == std::string::npos)
      throw UsageError(detail::cat("policy entry '", pair, "' is not k:level"));
    const int k = std::stoi(pair.substr(0, colon));
    const int level = std::stoi(pair.substr(colon + 1));
    if (k < 1 || k > arch.subnetworks)
      throw UsageError(detail::cat("policy sub-network ", k, " out of range [1, ",
                                   arch.subnetworks, "]"));
    if (level < 1 || level > arch.levels())
      throw UsageError(detail::cat("policy level ", level, " out of range [1, ",
                                   arch.levels(), "]"));
    policy[k] = level;
  }
  return policy;
}

int cmd_infer(const InferArgs& args) {
  ExperimentConfig cfg = parse_config(checkpoint_config_text(args.ckpt));
  AnytimeNetwork<double> net = build_network<double>(cfg.arch, cfg.train.seed);
  load_checkpoint(net, args.ckpt);
  LoadedData data = load_dataset(cfg.data);  // source of samples and statistics

  Dataset* source = &data.dataset;
  Dataset external;
  if (!args.input.empty()) {
    if (cfg.data.kind == "synthetic")
      throw UsageError("--input expects the config's record format; synthetic configs "
                       "draw samples internally, omit --input");
    external = load_cifar_binary(args.input, cfg.data.kind == "cifar100" ? 100 : 10);
    source = &external;
  }

  std::vector<int> order =
      args.input.empty() && !data.val_idx.empty() ? data.val_idx : std::vector<int>{};
  if (order.empty()) {
    order.resize(static_cast<std::size_t>(source->size()));
    for (int i = 0; i < source->size(); ++i) order[static_cast<std::size_t>(i)] = i;
  }
  if (args.limit > 0 && static_cast<int>(order.size()) > args.limit)
    order.resize(static_cast<std::size_t>(args.limit));

  const std::map<int, int> policy = parse_policy(args.policy, cfg.arch);
  auto level_of = [&](int k) {
    auto it = policy.find(k);
    return it == policy.end() ? 1 : it->second;
  };

  int target_k = cfg.arch.subnetworks;
  if (args.budget_set) {
    FlopsReport report = audit_network(cfg.arch, source->image_size);
    target_k = restrict_to_budget(report, args.budget);
    std::cout << "budget " << args.budget << " units -> sub-network " << target_k << " ("
              << report.at(target_k).total << " units)\n";
  } else if (args.subnetwork > 0) {
    target_k = args.subnetwork;
  }

  Rng rng(args.seed);
  for (int idx : order) {
    Tensor<double> x = make_batch<double>(*source, {idx}, false, rng, data.dataset.stats);
    const Sample& s = source->samples[static_cast<std::size_t>(idx)];
    if (args.stream) {
      InterruptibleStream<double> stream(net, x);
      std::cout << "sample " << idx << " (label " << s.label << ")\n";
      while (!stream.done() && stream.completed() < target_k) {
        auto step = stream.advance();
        const int level = level_of(step.k);
        const int pred = argmax_rows(step.logits[static_cast<std::size_t>(level - 1)])[0];
        std::cout << "  step k=" << step.k << " level=" << level << " units="
                  << step.total_units << " prediction=" << pred << "\n";
      }
    } else {
      const int level = level_of(target_k);
      const int pred = classify(net, x, target_k, level)[0];
      std::cout << "sample " << idx << " k=" << target_k << " level=" << level
                << " prediction=" << pred << " label=" << s.label << "\n";
    }
  }
  return 0;
}

// ------------------------------------------------------------- gradcheck ---

int cmd_gradcheck(std::uint64_t seed) {
  const auto checks = gradient_battery(seed);
  double worst = 0.0;
  for (const auto& c : checks) {
    std::cout << std::left << std::setw(26) << c.name << " max rel "
              << std::scientific << std::setprecision(3) << c.result.max_rel_error
              << "  (" << c.result.coords_checked << " coordinates)\n";
    worst = std::max(worst, c.result.max_rel_error);
  }
  const bool ok = worst < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << ": worst " << std::scientific << worst
            << " (tolerance 1e-4)\n";
  return ok ? 0 : 1;
}

// ------------------------------------------------------------- ablate-bn ---

struct AblateArgs {
  std::string config_path;
  std::string out_dir = default_out();
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

int cmd_ablate_bn(const AblateArgs& args) {
  ExperimentConfig cfg = load_config(args.config_path);
  if (cfg.arch.family != Family::Inclusive)
    throw ConfigError("ablate-bn compares normalization banks of the width-nested "
                      "(inclusive) family; set family = inclusive");
  LoadedData data = load_dataset(cfg.data);

  std::ostringstream csv;
  csv << "seed,variant,k,split,error\n";
  std::cout << "seed  variant      k=1 train err  k=1 val err\n";
  double banked_sum = 0.0, shared_sum = 0.0;
  for (std::uint64_t seed : args.seeds) {
    for (const bool shared : {false, true}) {
      ExperimentConfig variant = cfg;
      variant.arch.shared_bn = shared;
      variant.train.seed = seed;
      AnytimeNetwork<double> net = build_network<double>(variant.arch, seed);
      TrainLog log = train_joint(net, data.dataset, data.train_idx, data.val_idx,
                                 variant.train);
      const std::string tag = shared ? "shared" : "independent";
      const double train_err = log.last(1, 1, "train").error;
      (shared ? shared_sum : banked_sum) += train_err;
      double val_err = -1.0;
      if (!data.val_idx.empty()) val_err = log.last(1, 1, "val").error;
      std::cout << std::setw(4) << seed << "  " << std::left << std::setw(12) << tag
                << std::right << std::fixed << std::setprecision(4) << std::setw(13)
                << train_err << std::setw(13) << val_err << "\n";
      for (int k = 1; k <= variant.arch.subnetworks; ++k) {
        csv << seed << ',' << tag << ',' << k << ",train," << log.last(k, 1, "train").error
            << "\n";
        if (!data.val_idx.empty())
          csv << seed << ',' << tag << ',' << k << ",val," << log.last(k, 1, "val").error
              << "\n";
      }
    }
  }
  const double n = static_cast<double>(args.seeds.size());
  std::cout << "mean k=1 train error: independent " << std::fixed << std::setprecision(4)
            << banked_sum / n << ", shared " << shared_sum / n << "\n";

  const std::string path = artifact(args.out_dir, experiment_name(cfg), "_bn_ablation.csv");
  write_text(path, csv.str());
  std::cout << "wrote " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inclusive thin sub-networks: build, train, audit, and run "
               "anytime image classifiers"};
  app.require_subcommand(1);

  BuildArgs build_args;
  auto* build = app.add_subcommand("build", "materialize and checkpoint an untrained network");
  build->add_option("--config", build_args.config_path, "experiment config file")
      ->required();
  build->add_option("--out", build_args.out_dir, "output directory");
  build->add_option("--seed", build_args.seed, "initialization seed")
      ->each([&](const std::string&) { build_args.seed_set = true; });

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "run joint anytime training");
  train->add_option("--config", train_args.config_path, "experiment config file")
      ->required();
  train->add_option("--out", train_args.out_dir, "output directory");
  train->add_option("--resume", train_args.resume, "checkpoint to continue from");
  train->add_option("--seed", train_args.seed, "override the training seed")
      ->each([&](const std::string&) { train_args.seed_set = true; });
  train->add_option("--epochs", train_args.epochs, "override the config's epoch count");
  train->add_flag("--quiet", train_args.quiet, "suppress per-epoch lines");

  FlopsArgs flops_args;
  auto* flops = app.add_subcommand("flops", "audit per-sub-network cost");
  flops->add_option("--config", flops_args.config_path, "experiment config file")
      ->required();
  flops->add_option("--image-size", flops_args.image_size, "override input resolution");
  flops->add_option("--layers", flops_args.layer_detail, "print layer rows for sub-network K");
  flops->add_flag("--csv", flops_args.csv, "machine-readable output");
  flops->add_option("--against-paper-fixture", flops_args.fixture,
                    "compare against stored coordinates (name,k,flops)");
  std::uint64_t ignored_seed = 0;  // the audit is a pure function of the config
  flops->add_option("--seed", ignored_seed, "accepted for uniformity; audit is deterministic");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "measure per-(sub-network, level) errors");
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_args.data_path,
                   "config file whose [data] section replaces the embedded one");
  eval->add_option("--out", eval_args.out_dir, "output directory");
  eval->add_option("--split", eval_args.split, "train, val, or all");
  eval->add_option("--seed", ignored_seed, "accepted for uniformity; eval is deterministic");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "budget-restricted prediction");
  infer->add_option("--ckpt", infer_args.ckpt, "checkpoint file")->required();
  infer->add_option("--input", infer_args.input, "record file to classify");
  infer->add_option("--budget", infer_args.budget, "budget in multiply-add units")
      ->each([&](const std::string&) { infer_args.budget_set = true; });
  infer->add_option("--subnetwork", infer_args.subnetwork, "fixed sub-network (no budget)");
  infer->add_option("--policy", infer_args.policy,
                    "k:level pairs, e.g. 1:2,2:1 (default level 1)");
  infer->add_flag("--stream", infer_args.stream, "line per sub-network as each completes");
  infer->add_option("--limit", infer_args.limit, "max samples to classify (0 = all)");
  infer->add_option("--seed", infer_args.seed, "sample-assembly seed");

  std::uint64_t gradcheck_seed = 1;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--seed", gradcheck_seed, "battery seed");

  AblateArgs ablate_args;
  auto* ablate = app.add_subcommand("ablate-bn",
                                    "independent vs shared normalization comparison");
  ablate->add_option("--config", ablate_args.config_path, "experiment config file")
      ->required();
  ablate->add_option("--out", ablate_args.out_dir, "output directory");
  ablate->add_option("--seeds", ablate_args.seeds, "seeds for paired runs");
  ablate->add_option("--seed", ablate_args.seeds,
                     "single-seed shortcut (same as --seeds with one value)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version succeed; bad usage is 2
  }

  try {
    if (build->parsed()) return cmd_build(build_args);
    if (train->parsed()) return cmd_train(train_args);
    if (flops->parsed()) return cmd_flops(flops_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (infer->parsed()) return cmd_infer(infer_args);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
    if (ablate->parsed()) return cmd_ablate_bn(ablate_args);
  } catch (const BudgetError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
