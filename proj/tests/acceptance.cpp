// Release gate. Each release-blocking property prints exactly one
// [PASS]/[FAIL] line; the process exit status is the number of failures.
// Run from the repository root (fixture paths are relative).
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "anynet/checkpoint.hpp"
#include "anynet/flops.hpp"
#include "anynet/gradcheck.hpp"
#include "anynet/runner.hpp"
#include "anynet/train.hpp"

namespace {

using namespace anynet;

int failures = 0;

class Timer {
 public:
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

void report(const std::string& id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << std::left << std::setw(4) << id << " "
            << detail << "\n"
            << std::flush;
}

// Runs one block of checks; if it throws, every line it would have printed
// becomes a failure.
void run_block(const std::vector<std::string>& ids, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    for (const auto& id : ids) report(id, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream out;
  out << std::setprecision(prec) << v;
  return out.str();
}

Tensor<double> randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> vals(static_cast<std::size_t>(n));
  for (auto& v : vals) v = dist(rng);
  return Tensor<double>::from_data(shape, std::move(vals));
}

// max |a - b| scaled by the oracle's largest magnitude.
double rel_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double denom = 1e-12, worst = 0.0;
  for (double v : b) denom = std::max(denom, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst / denom;
}

double worst_grad_gap(AnytimeNetwork<double>& got, AnytimeNetwork<double>& oracle) {
  double worst = 0.0;
  auto gp = got.named_parameters();
  auto op = oracle.named_parameters();
  for (std::size_t i = 0; i < gp.size(); ++i)
    worst = std::max(worst, rel_gap(gp[i].second.grad(), op[i].second.grad()));
  return worst;
}

// Gradient comparisons need live classifiers (they start at zero, which
// blocks gradients from reaching the trunk) and explicit grad recording.
// Twin networks get identical deterministic head weights.
void arm_for_backward(AnytimeNetwork<double>& net) {
  for (auto& h : net.heads) {
    auto& w = h.fc_w.values();
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = 0.01 * (static_cast<double>(i % 7) - 3.0);
  }
  for (auto& [name, p] : net.named_parameters()) p.set_requires_grad(true);
}

double worst_value_gap(AnytimeNetwork<double>& got, AnytimeNetwork<double>& oracle) {
  double worst = 0.0;
  auto gp = got.named_parameters();
  auto op = oracle.named_parameters();
  for (std::size_t i = 0; i < gp.size(); ++i)
    worst = std::max(worst, rel_gap(gp[i].second.values(), op[i].second.values()));
  return worst;
}

// ---- 1: cost audit vs the published anytime-curve coordinates ---------------

void criterion_1() {
  Timer t;
  ArchConfig is10;
  is10.family = Family::InclusiveSparse;
  is10.blocks = 15;
  is10.width = 96;
  is10.bottleneck = 4;
  is10.cardinality = 18;
  is10.subnetworks = 6;
  is10.scales = 3;
  is10.classes = 10;
  const std::uint64_t is_targets[6] = {13873802, 30696714, 50468746,
                                       73189898, 98860170, 127479562};

  ArchConfig i10;
  i10.family = Family::Inclusive;
  i10.blocks = 21;
  i10.width = 64;
  i10.bottleneck = 4;  // cardinality derives to 8
  i10.subnetworks = 8;
  i10.scales = 3;
  i10.classes = 10;
  const std::uint64_t i_targets[8] = {18635274, 32942602,  47249930,  61557258,
                                      75864586, 90171914, 104479242, 118786570};

  double worst = 0.0;
  for (int k = 1; k <= 6; ++k) {
    const double got = static_cast<double>(count_flops(is10, k));
    worst = std::max(worst, std::abs(got - static_cast<double>(is_targets[k - 1])) /
                                static_cast<double>(is_targets[k - 1]));
  }
  for (int k = 1; k <= 8; ++k) {
    const double got = static_cast<double>(count_flops(i10, k));
    worst = std::max(worst, std::abs(got - static_cast<double>(i_targets[k - 1])) /
                                static_cast<double>(i_targets[k - 1]));
  }
  const double secs = t.secs();
  report("1", worst <= 0.05 && secs < 1.0,
         "cost audit matches all 14 published curve points: worst rel " + fmt(worst, 3) +
             " (tol 0.05), " + fmt(secs, 2) + " s (limit 1)");
}

// ---- 2: exact head-cost delta between 100-way and 10-way variants -----------

void criterion_2() {
  ArchConfig is10;
  is10.family = Family::InclusiveSparse;
  is10.blocks = 15;
  is10.width = 96;
  is10.bottleneck = 4;
  is10.cardinality = 18;
  is10.subnetworks = 6;
  is10.scales = 3;
  is10.classes = 10;
  ArchConfig is100 = is10;
  is100.classes = 100;
  const std::uint64_t delta = count_flops(is100, 1) - count_flops(is10, 1);
  report("2", delta == 5850,
         "100-way minus 10-way cheapest sub-network cost = " + std::to_string(delta) +
             " (expect exactly 5850 = 90 extra outputs * 65)");
}

// ---- 3: widest nested sub-network costs the same as the plain network -------

void criterion_3() {
  ArchConfig i10;
  i10.family = Family::Inclusive;
  i10.blocks = 21;
  i10.width = 64;
  i10.bottleneck = 4;
  i10.subnetworks = 8;
  i10.scales = 3;
  i10.classes = 10;
  ArchConfig plain = i10;
  plain.family = Family::Plain;
  plain.subnetworks = 1;
  plain.cardinality = 8;

  const std::uint64_t full = count_flops(i10, 8);
  const std::uint64_t plain_units = count_flops(plain, 1);
  const double vs_plot = std::abs(static_cast<double>(full) - 1.18787e8) / 1.18787e8;
  report("3", full == plain_units && vs_plot <= 0.05,
         "widest nested count " + std::to_string(full) + " == plain count " +
             std::to_string(plain_units) + "; vs published 1.18787e8 rel " + fmt(vs_plot, 3));
}

// ---- 4: channel-split nesting invariant on random configs/inputs ------------

void criterion_4() {
  Timer t;
  std::mt19937_64 meta(404);
  const int ks[6] = {2, 3, 6, 2, 3, 6};
  double worst = 0.0;
  int inputs = 0;
  std::size_t violations = 0;

  for (int c = 0; c < 6; ++c) {
    ArchConfig cfg;
    cfg.family = Family::InclusiveSparse;
    cfg.subnetworks = ks[c];
    cfg.blocks = 2 + static_cast<int>(meta() % 3);
    cfg.scales = (cfg.blocks % 2 == 0 && meta() % 2 == 0) ? 2 : 1;
    cfg.width = cfg.subnetworks * (2 << (meta() % 2));
    cfg.bottleneck = 1;
    cfg.cardinality = cfg.subnetworks * (1 + static_cast<int>(meta() % 2));
    cfg.classes = 3 + static_cast<int>(meta() % 6);
    AnytimeNetwork<double> net = build_network<double>(cfg, 1000 + c);

    // Move the normalization statistics off their initial values so the
    // eval-mode comparison exercises real running stats.
    Tensor<double> warm = randn({8, 3, 12, 12}, meta);
    forward_all(net, warm, Mode::Train);

    const int n = 20;
    Tensor<double> x = randn({n, 3, 12, 12}, meta);
    inputs += n;
    Tensor<double> full_feat = features(net, x, cfg.subnetworks, Mode::Eval);
    const int fw = net.group_width(net.final_scale());
    for (int k = 1; k <= cfg.subnetworks; ++k) {
      Tensor<double> excised = forward(net, x, k, Mode::Eval);
      Tensor<double> via_slice =
          head_logits(net, k, 1, slice_axis(full_feat, 1, 0, k * fw), Mode::Eval);
      worst = std::max(worst, rel_gap(excised.values(), via_slice.values()));
    }
    violations += verify_sparsity(net).size();
  }
  const double secs = t.secs();
  report("4", worst < 1e-6 && violations == 0 && inputs >= 100 && secs < 60.0,
         "excised-cone forward == full-forward slice on " + std::to_string(inputs) +
             " inputs x 6 random configs: worst rel " + fmt(worst, 3) + " (tol 1e-6), " +
             std::to_string(violations) + " sparsity violations, " + fmt(secs, 2) +
             " s (limit 60)");
}

// ---- 5: finite-difference gradient battery ----------------------------------

void criterion_5() {
  Timer t;
  auto checks = gradient_battery(1);
  double worst = 0.0;
  std::string worst_name = "-";
  for (const auto& c : checks)
    if (c.result.max_rel_error > worst) {
      worst = c.result.max_rel_error;
      worst_name = c.name;
    }
  const double secs = t.secs();
  report("5", worst < 1e-4 && secs < 300.0,
         "finite differences over " + std::to_string(checks.size()) +
             " operator checks incl. end-to-end loss: worst rel " + fmt(worst, 3) + " (" +
             worst_name + ", tol 1e-4), " + fmt(secs, 2) + " s (limit 300)");
}

// ---- 6: training-scheme gradient equivalences --------------------------------

void criterion_6() {
  std::mt19937_64 rng(606);
  Tensor<double> x = randn({4, 3, 8, 8}, rng);
  std::vector<int> labels(4);
  for (auto& l : labels) l = static_cast<int>(rng() % 3);

  // Single-pass channel-split joint gradient vs a per-head multi-pass oracle.
  ArchConfig is;
  is.family = Family::InclusiveSparse;
  is.blocks = 2;
  is.width = 8;
  is.bottleneck = 1;
  is.subnetworks = 2;
  is.scales = 1;
  is.classes = 3;
  AnytimeNetwork<double> a = build_network<double>(is, 21);
  AnytimeNetwork<double> b = build_network<double>(is, 21);
  arm_for_backward(a);
  arm_for_backward(b);
  {
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    Tensor<double> loss = joint_loss(a, x, {labels}, Mode::Train);
    tape.backward(loss);
  }
  for (int k = 1; k <= 2; ++k) {
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    Tensor<double> loss =
        scale(softmax_cross_entropy(forward(b, x, k, Mode::Train), labels), 0.5);
    tape.backward(loss);  // leaf gradients accumulate across tapes
  }
  const double is_gap = worst_grad_gap(a, b);

  // Width-nested family: one-tape summed loss vs per-sub-network accumulation,
  // compared after an identical optimizer step.
  ArchConfig in;
  in.family = Family::Inclusive;
  in.blocks = 2;
  in.width = 8;
  in.bottleneck = 2;
  in.subnetworks = 2;
  in.scales = 1;
  in.classes = 3;
  AnytimeNetwork<double> c = build_network<double>(in, 22);
  AnytimeNetwork<double> d = build_network<double>(in, 22);
  arm_for_backward(c);
  arm_for_backward(d);
  {
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    Tensor<double> loss = joint_loss(c, x, {labels}, Mode::Train);
    tape.backward(loss);
  }
  for (int k = 1; k <= 2; ++k) {
    GradTape<double> tape;
    GradTape<double>::Scope scope(tape);
    Tensor<double> loss =
        scale(softmax_cross_entropy(forward(d, x, k, Mode::Train), labels), 0.5);
    tape.backward(loss);
  }
  auto cp = c.parameters();
  auto dp = d.parameters();
  SgdState<double> opt_c(cp), opt_d(dp);
  opt_c.step(cp, 0.1, 0.9, 1e-4);
  opt_d.step(dp, 0.1, 0.9, 1e-4);
  const double i_gap = worst_value_gap(c, d);

  report("6", is_gap < 1e-6 && i_gap < 1e-6,
         "single-pass channel-split grads vs per-head oracle rel " + fmt(is_gap, 3) +
             "; width-nested summed-loss vs accumulated update rel " + fmt(i_gap, 3) +
             " (tol 1e-6)");
}

// ---- 7a/7b: desk-scale training on the synthetic task ------------------------

void criterion_7ab(const Dataset& ds, const std::vector<int>& tr, const std::vector<int>& va) {
  Timer t;
  ArchConfig cfg;
  cfg.family = Family::InclusiveSparse;
  cfg.blocks = 3;
  cfg.width = 24;
  cfg.bottleneck = 4;
  cfg.cardinality = 6;  // 0.75*W/B is non-integral here; six branches, two per group
  cfg.subnetworks = 3;
  cfg.scales = 1;
  cfg.classes = 4;

  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 32;
  tc.base_lr = 0.1;
  tc.seed = 7;
  tc.augment = false;

  AnytimeNetwork<double> net = build_network<double>(cfg, 7);
  TrainLog log = train_joint(net, ds, tr, va, tc);

  int reached_epoch = 0;
  for (int e = 1; e <= tc.epochs && reached_epoch == 0; ++e) {
    bool all = true;
    for (int k = 1; k <= 3; ++k) {
      double err = 1.0;
      for (const auto& row : log.rows)
        if (row.epoch == e && row.k == k && row.level == 1 && row.split == "train")
          err = row.error;
      all = all && err <= 0.10;
    }
    if (all) reached_epoch = e;
  }
  const double secs = t.secs();
  std::vector<double> final_val(3);
  for (int k = 1; k <= 3; ++k) final_val[k - 1] = log.last(k, 1, "val").error;

  report("7a", reached_epoch > 0 && secs < 600.0,
         reached_epoch > 0
             ? "all 3 sub-networks at >=90% train accuracy from epoch " +
                   std::to_string(reached_epoch) + " of 20, " + fmt(secs, 2) + " s (limit 600)"
             : "some sub-network stayed above 10% train error for all 20 epochs (" +
                   fmt(secs, 2) + " s)");

  bool monotone = true;
  for (int k = 1; k < 3; ++k)
    monotone = monotone && final_val[k] <= final_val[k - 1] + 0.02;
  report("7b", monotone,
         "final validation errors by sub-network: " + fmt(final_val[0], 3) + ", " +
             fmt(final_val[1], 3) + ", " + fmt(final_val[2], 3) +
             " (each step may rise at most 0.02)");
}

// ---- 7c: independent normalization banks beat a shared state ------------------

void criterion_7c() {
  Dataset ds = synth_dataset(9, 800, 4, 16, 0.1, 0);
  auto [tr, va] = split_indices(800, 160, 9);

  ArchConfig base;
  base.family = Family::Inclusive;
  base.blocks = 2;
  base.width = 16;
  base.bottleneck = 2;  // cardinality derives to 4
  base.subnetworks = 4;
  base.scales = 1;
  base.classes = 4;

  double banked_sum = 0.0, shared_sum = 0.0;
  std::string per_seed;
  std::string branch_info;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (bool shared : {false, true}) {
      ArchConfig cfg = base;
      cfg.shared_bn = shared;
      TrainConfig tc;
      tc.epochs = 8;
      tc.batch_size = 32;
      tc.base_lr = 0.1;
      tc.seed = seed;
      tc.augment = false;
      AnytimeNetwork<double> net = build_network<double>(cfg, seed);
      TrainLog log = train_joint(net, ds, tr, va, tc);
      const double err = log.last(1, 1, "train").error;
      (shared ? shared_sum : banked_sum) += err;
      if (!shared) per_seed += (per_seed.empty() ? "" : " ") + fmt(err, 3);
      if (!shared && seed == 1) {
        // Informational only: l1 mass of each branch's expand-layer slice,
        // averaged over blocks (later branches serve fewer sub-networks).
        std::vector<double> l1(static_cast<std::size_t>(net.C), 0.0);
        for (int blk = 1; blk <= cfg.blocks; ++blk)
          for (int br = 1; br <= net.C; ++br)
            l1[static_cast<std::size_t>(br - 1)] +=
                branch_weight_l1(net, blk, 3, br) / cfg.blocks;
        for (double v : l1) branch_info += (branch_info.empty() ? "" : " ") + fmt(v, 3);
      }
    }
  }
  const double banked = banked_sum / 3.0, sharedm = shared_sum / 3.0;
  report("7c", banked <= sharedm,
         "thinnest sub-network mean train error over 3 seeds: independent norm " +
             fmt(banked, 3) + " <= shared norm " + fmt(sharedm, 3) +
             "  [info: per-branch expand l1 (seed 1): " + branch_info + "]");
}

// ---- 7d: coarse heads are easier than fine heads at every width ---------------

void criterion_7d() {
  Dataset ds = synth_dataset(11, 1000, 4, 16, 0.1, 2);  // two-level hierarchy {4, 2}
  auto [tr, va] = split_indices(1000, 200, 11);

  ArchConfig cfg;
  cfg.family = Family::InclusiveSparse;
  cfg.blocks = 3;
  cfg.width = 24;
  cfg.bottleneck = 4;
  cfg.cardinality = 6;
  cfg.subnetworks = 3;
  cfg.scales = 1;
  cfg.classes = 4;
  cfg.level_classes = {4, 2};

  TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 32;
  tc.base_lr = 0.1;
  tc.seed = 11;
  tc.augment = false;

  AnytimeNetwork<double> net = build_network<double>(cfg, 11);
  TrainLog log = train_joint(net, ds, tr, va, tc);

  bool ok = true;
  std::string detail;
  for (int k = 1; k <= 3; ++k) {
    const double fine = log.last(k, 1, "val").error;
    const double coarse = log.last(k, 2, "val").error;
    ok = ok && coarse <= fine;
    detail += (k > 1 ? "  " : "") + std::string("k=") + std::to_string(k) + " coarse " +
              fmt(coarse, 3) + " vs fine " + fmt(fine, 3);
  }
  report("7d", ok, "two-level heads, validation: " + detail);
}

// ---- 8: shallow-exits-vs-thin-sub-networks harness ----------------------------

void criterion_8(const Dataset& ds, const std::vector<int>& tr, const std::vector<int>& va) {
  ArchConfig trunk;
  trunk.family = Family::Plain;
  trunk.blocks = 3;
  trunk.width = 16;
  trunk.bottleneck = 2;
  trunk.cardinality = 4;
  trunk.subnetworks = 1;
  trunk.scales = 1;
  trunk.classes = 4;

  ArchConfig thin_cfg = trunk;
  thin_cfg.family = Family::Inclusive;
  thin_cfg.subnetworks = 2;

  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 32;
  tc.base_lr = 0.1;
  tc.seed = 31;
  tc.augment = false;

  AnytimeNetwork<double> shallow = build_shallow_exit_variant<double>(trunk, 31);
  AnytimeNetwork<double> thin = build_network<double>(thin_cfg, 31);
  TrainLog log_shallow = train_joint(shallow, ds, tr, va, tc);
  TrainLog log_thin = train_joint(thin, ds, tr, va, tc);

  std::ostringstream csv;
  csv << "family,k,flops,val_error\n";
  for (int k = 1; k <= 2; ++k)
    csv << "thin," << k << ',' << count_flops(thin_cfg, k, ds.image_size) << ','
        << log_thin.last(k, 1, "val").error << "\n";
  for (int k = 1; k <= 2; ++k)
    csv << "shallow," << k << ',' << count_flops(shallow.cfg, k, ds.image_size) << ','
        << log_shallow.last(k, 1, "val").error << "\n";

  const auto dir = std::filesystem::temp_directory_path() / "anynet_acceptance";
  std::filesystem::create_directories(dir);
  const auto path = dir / "shallow_vs_thin.csv";
  std::ofstream out(path);
  out << csv.str();
  out.close();

  std::ifstream back(path);
  int data_rows = -1;  // discount the header
  for (std::string line; std::getline(back, line);) ++data_rows;

  report("8", data_rows == 4,
         "same loop trained both variants; comparison csv (" + path.string() +
             "): thin val " + fmt(log_thin.last(1, 1, "val").error, 3) + "/" +
             fmt(log_thin.last(2, 1, "val").error, 3) + ", shallow val " +
             fmt(log_shallow.last(1, 1, "val").error, 3) + "/" +
             fmt(log_shallow.last(2, 1, "val").error, 3) + " (no gap asserted)");
}

// ---- 9: storage fidelity ------------------------------------------------------

void criterion_9() {
  const auto dir = std::filesystem::temp_directory_path() / "anynet_acceptance";
  std::filesystem::create_directories(dir);
  const std::string src = (dir / "roundtrip_src.bin").string();
  const std::string dst = (dir / "roundtrip_dst.bin").string();

  std::mt19937_64 rng(99);
  {
    std::ofstream out(src, std::ios::binary);
    for (int i = 0; i < 40; ++i) {
      out.put(static_cast<char>(rng() % 10));
      for (int b = 0; b < 3072; ++b) out.put(static_cast<char>(rng() % 256));
    }
  }
  Dataset ds = load_cifar_binary(src, 10);
  write_cifar_binary(ds, dst);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
  };
  const bool roundtrip = slurp(src) == slurp(dst) && ds.size() == 40;

  LabelHierarchy tax = load_taxonomy("fixtures/bird_taxonomy.tsv");
  const std::vector<int> expect{200, 183, 149, 80};
  const bool counts = tax.level_classes == expect;

  std::string got;
  for (int v : tax.level_classes) got += (got.empty() ? "" : ",") + std::to_string(v);
  report("9", roundtrip && counts,
         std::string("record round-trip ") + (roundtrip ? "bit-exact" : "DIFFERS") +
             "; taxonomy level counts (" + got + ") vs (200,183,149,80)");
}

}  // namespace

int main() {
  Timer total;
  std::cout << "anytime-network acceptance suite\n";

  run_block({"1"}, criterion_1);
  run_block({"2"}, criterion_2);
  run_block({"3"}, criterion_3);
  run_block({"4"}, criterion_4);
  run_block({"5"}, criterion_5);
  run_block({"6"}, criterion_6);

  // The shared 2,000-sample synthetic 4-class task (1,600 train / 400 val).
  Dataset toy = synth_dataset(7, 2000, 4, 16, 0.1, 0);
  auto [toy_tr, toy_va] = split_indices(2000, 400, 7);
  run_block({"7a", "7b"}, [&] { criterion_7ab(toy, toy_tr, toy_va); });
  run_block({"7c"}, criterion_7c);
  run_block({"7d"}, criterion_7d);
  run_block({"8"}, [&] { criterion_8(toy, toy_tr, toy_va); });
  run_block({"9"}, criterion_9);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
            << " in " << std::fixed << std::setprecision(1) << total.secs() << " s\n";
  return failures;
}
