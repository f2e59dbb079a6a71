#pragma once

#include <optional>
#include <string>
#include <utility>

#include "anynet/nn.hpp"

namespace anynet {

// Network families.
//
//   Plain           one output, C independent bottleneck branches per block
//   Inclusive       K nested sub-networks sharing branch weights; sub-network
//                   k keeps the first k*C/K branches and has its own batch
//                   norm parameters per site (bank entry k); K passes to train
//   InclusiveSparse K nested sub-networks carved out of one pass: features
//                   split into K channel groups, branch group g reads groups
//                   1..g, output group k is produced by branch group k only;
//                   batch norm is shared; single pass trains all heads and
//                   inference can be interrupted between groups
//   ShallowExit     plain trunk with a classifier head after each block from
//                   the second on; sub-network k is the depth-(k+1) prefix
enum class Family { Plain, Inclusive, InclusiveSparse, ShallowExit };

Family family_from_string(const std::string& name);
std::string family_to_string(Family family);

// Derived branch count: C = ratio * width / bottleneck with ratio 1/2 for
// Inclusive and 3/4 for InclusiveSparse. Non-integral results and other
// families are configuration errors (pass cardinality explicitly instead).
int derive_cardinality(Family family, int width, int bottleneck);

// Branches kept by sub-network k of K: C_k = k*C/K.
int subnetwork_cardinality(int C, int K, int k);

// Index of the most recent feature group branch i may read: ceil(i*K/C).
int is_branch_input_span(int i, int C, int K);

// Branches feeding output group k: [(k-1)*C/K + 1, k*C/K], 1-based inclusive.
std::pair<int, int> is_output_group(int k, int C, int K);

struct ArchConfig {
  Family family = Family::Plain;
  int blocks = 3;        // L, equally divided across scales
  int width = 64;        // W at the first scale; doubles per scale
  int bottleneck = 4;    // B at the first scale; doubles per scale
  int subnetworks = 1;   // K
  std::optional<int> cardinality;  // C; derived for inclusive families if absent
  int scales = 3;        // 3 => 32x32 stem, 4+ => 224x224 stem
  int classes = 10;      // fine label count
  // Class count per hierarchy level, finest first; empty means one level.
  // When present, level_classes[0] must equal classes.
  std::vector<int> level_classes;
  // Ablation switch (Inclusive only): one shared batch norm state per site
  // instead of a bank entry per sub-network.
  bool shared_bn = false;

  void validate() const;  // throws ConfigError naming the failed constraint
  int resolved_cardinality() const;
  int levels() const { return level_classes.empty() ? 1 : static_cast<int>(level_classes.size()); }
  int classes_at_level(int level) const;  // 1-based, level 1 = finest
  int depth() const { return 3 * blocks + 2; }  // weighted layers on one path
  bool big_stem() const { return scales >= 4; }
  int default_image_size() const { return big_stem() ? 224 : 32; }

  bool operator==(const ArchConfig&) const = default;
};

template <typename S>
struct ConvLayer {
  Tensor<S> weight;  // (out, in/groups, k, k)
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// Batch norm states for one normalization site. Banked sites hold one state
// per sub-network (independent parameters u_{.,k}); unbanked sites hold a
// single state shared by every sub-network.
template <typename S>
struct BnBank {
  std::vector<BatchNormState<S>> states;
  bool banked = false;

  BatchNormState<S>& at(int k) { return banked ? states[k - 1] : states[0]; }
  const BatchNormState<S>& at(int k) const { return banked ? states[k - 1] : states[0]; }
};

// Pre-activation grouped-branch residual block (Plain, Inclusive, ShallowExit):
//   y = x + expand(relu(bn_out(spatial(relu(bn_mid(reduce(relu(bn_in(x)))))))))
// reduce 1x1 widens to C*B channels, spatial is 3x3 with groups=C, expand 1x1
// returns to block width. Sub-network k uses the first C_k*B rows/columns.
template <typename S>
struct ResnextBlock {
  ConvLayer<S> reduce, spatial, expand;
  BnBank<S> bn_in, bn_mid, bn_out;
  int scale = 0;
};

// Inclusive-sparse block. Features carry K groups of group_width channels;
// reduce[g] (0-based) maps normalized groups 1..g+1 to branch group g+1
// ((C/K)*B channels); spatial is 3x3 with groups=C; expand is 1x1 with
// groups=K so output group k sees branch group k only; the residual add is
// per channel. Batch norm is shared (single state per site).
template <typename S>
struct SparseBlock {
  std::vector<ConvLayer<S>> reduce;
  ConvLayer<S> spatial, expand;
  BatchNormState<S> bn_in, bn_mid, bn_out;
  int scale = 0;
};

// Classifier head g_{k,level}: bn -> relu -> global avg pool -> fc.
template <typename S>
struct Head {
  int k = 1;
  int level = 1;
  int exit_block = 0;   // 1-based trunk block whose output the head reads
  int in_channels = 0;
  BatchNormState<S> bn;
  Tensor<S> fc_w, fc_b;
};

template <typename S>
struct AnytimeNetwork {
  ArchConfig cfg;
  int C = 1;
  ConvLayer<S> stem;
  bool stem_pool = false;
  std::vector<ResnextBlock<S>> rblocks;  // all families except InclusiveSparse
  std::vector<SparseBlock<S>> sblocks;   // InclusiveSparse
  std::vector<Head<S>> heads;            // k-major, then level

  int blocks_per_scale() const { return cfg.blocks / cfg.scales; }
  int scale_of_block(int b) const { return b / blocks_per_scale(); }  // 0-based b
  int width_at(int s) const { return cfg.width << s; }
  int bneck_at(int s) const { return cfg.bottleneck << s; }
  int group_width(int s) const { return width_at(s) / cfg.subnetworks; }
  int final_scale() const { return cfg.scales - 1; }
  int exit_block_of(int k) const {
    return cfg.family == Family::ShallowExit ? k + 1 : cfg.blocks;
  }

  Head<S>& head(int k, int level);
  const Head<S>& head(int k, int level) const;

  // Learnable tensors in a fixed, documented order (optimizer order).
  std::vector<Tensor<S>> parameters();
  std::vector<std::pair<std::string, Tensor<S>>> named_parameters();
  std::int64_t parameter_count();  // all learnables in the container
  int num_weighted_layers() const { return 3 * cfg.blocks + 2; }
};

template <typename S>
AnytimeNetwork<S> build_network(const ArchConfig& cfg, std::uint64_t seed);

// Same trunk as `base` but as a ShallowExit network: K becomes L-1 and heads
// sit after blocks 2..L. `base` must carry an explicit cardinality.
template <typename S>
AnytimeNetwork<S> build_shallow_exit_variant(const ArchConfig& base, std::uint64_t seed);

// Logits of sub-network k at `level`. For InclusiveSparse this computes only
// the dependency cone of output group k (the excised thin network).
template <typename S>
Tensor<S> forward(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, Mode mode,
                  int level = 1);

// Trunk features of sub-network k at its head tap point (before any head).
template <typename S>
Tensor<S> features(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, Mode mode);

// All levels of sub-network k, sharing one trunk pass.
template <typename S>
std::vector<Tensor<S>> forward_levels(AnytimeNetwork<S>& net, const Tensor<S>& x, int k,
                                      Mode mode);

// Logits of every head, indexed [k-1][level-1]. Single trunk pass for
// InclusiveSparse and ShallowExit; one pass per k otherwise.
template <typename S>
std::vector<std::vector<Tensor<S>>> forward_all(AnytimeNetwork<S>& net, const Tensor<S>& x,
                                                Mode mode);

// Pieces of the forward pass, exposed so incremental evaluation can reuse
// partial trunk work. stem_forward restricts the stem to sub-network k's
// output rows where the family calls for it; run_blocks advances a trunk
// state through blocks [from, to) (0-based, including any scale transition
// entering each block) under sub-network k's restriction; head_logits applies
// one classifier head to trunk features.
template <typename S>
Tensor<S> stem_forward(AnytimeNetwork<S>& net, const Tensor<S>& x, int k);

template <typename S>
Tensor<S> run_blocks(AnytimeNetwork<S>& net, Tensor<S> h, int from_block, int to_block,
                     int k, Mode mode);

template <typename S>
Tensor<S> head_logits(AnytimeNetwork<S>& net, int k, int level, const Tensor<S>& feat,
                      Mode mode);

// One named piece of network state. Learnable entries point at a parameter
// tensor's storage; the rest are batch-norm running statistics. Pointers stay
// valid while the network is alive.
template <typename S>
struct StateEntry {
  std::string name;
  Shape shape;
  std::vector<S>* values = nullptr;
  bool learnable = false;
};

// Every parameter and running statistic, deterministically ordered with
// unique names (what checkpoints persist).
template <typename S>
std::vector<StateEntry<S>> named_state(AnytimeNetwork<S>& net);

// l1 norm of the weight slice owned by `branch` (1-based) inside `layer`
// (1 = reduce, 2 = spatial, 3 = expand) of `block` (1-based).
template <typename S>
S branch_weight_l1(const AnytimeNetwork<S>& net, int block, int layer, int branch);

// Counts, per sub-network k of the inclusive blocks, how many bank states
// branch i owns at the post-reduce site: K - ceil(i*K/C) + 1 when banked.
template <typename S>
int branch_state_count(const AnytimeNetwork<S>& net, int branch);

}  // namespace anynet
