#include "anynet/arch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "anynet/common.hpp"
#include "anynet/ops.hpp"

namespace anynet {

Family family_from_string(const std::string& name) {
  if (name == "plain") return Family::Plain;
  if (name == "inclusive") return Family::Inclusive;
  if (name == "inclusive-sparse") return Family::InclusiveSparse;
  if (name == "shallow-exit") return Family::ShallowExit;
  throw ConfigError(detail::cat("unknown family '", name,
                                "' (expected plain, inclusive, inclusive-sparse, "
                                "or shallow-exit)"));
}

std::string family_to_string(Family family) {
  switch (family) {
    case Family::Plain: return "plain";
    case Family::Inclusive: return "inclusive";
    case Family::InclusiveSparse: return "inclusive-sparse";
    case Family::ShallowExit: return "shallow-exit";
  }
  throw ConfigError("unknown family value");
}

int derive_cardinality(Family family, int width, int bottleneck) {
  if (width < 1 || bottleneck < 1)
    throw ConfigError(detail::cat("cannot derive cardinality from width=", width,
                                  " bottleneck=", bottleneck));
  int num = 0, den = 0;
  if (family == Family::Inclusive) {
    num = width;
    den = 2 * bottleneck;
  } else if (family == Family::InclusiveSparse) {
    num = 3 * width;
    den = 4 * bottleneck;
  } else {
    throw ConfigError(detail::cat("family ", family_to_string(family),
                                  " has no derived cardinality; set it explicitly"));
  }
  if (num % den != 0)
    throw ConfigError(detail::cat("derived cardinality ", num, "/", den,
                                  " is not an integer for family ",
                                  family_to_string(family), " with width=", width,
                                  " bottleneck=", bottleneck,
                                  "; set cardinality explicitly"));
  int c = num / den;
  if (c < 1)
    throw ConfigError(detail::cat("derived cardinality ", c, " is below 1"));
  return c;
}

int subnetwork_cardinality(int C, int K, int k) {
  if (K < 1 || C < K || C % K != 0)
    throw ConfigError(detail::cat("cardinality ", C, " must be a positive multiple of "
                                  "subnetworks ", K));
  if (k < 1 || k > K)
    throw UsageError(detail::cat("sub-network index ", k, " out of range [1, ", K, "]"));
  return k * (C / K);
}

int is_branch_input_span(int i, int C, int K) {
  if (i < 1 || i > C)
    throw UsageError(detail::cat("branch index ", i, " out of range [1, ", C, "]"));
  return (i * K + C - 1) / C;
}

std::pair<int, int> is_output_group(int k, int C, int K) {
  if (K < 1 || C % K != 0)
    throw ConfigError(detail::cat("cardinality ", C, " must be a multiple of subnetworks ",
                                  K));
  if (k < 1 || k > K)
    throw UsageError(detail::cat("group index ", k, " out of range [1, ", K, "]"));
  int per = C / K;
  return {(k - 1) * per + 1, k * per};
}

void ArchConfig::validate() const {
  if (blocks < 1) throw ConfigError(detail::cat("blocks must be >= 1, got ", blocks));
  if (scales < 1) throw ConfigError(detail::cat("scales must be >= 1, got ", scales));
  if (blocks % scales != 0)
    throw ConfigError(detail::cat("blocks (", blocks, ") must divide evenly across scales (",
                                  scales, ")"));
  if (width < 1) throw ConfigError(detail::cat("width must be >= 1, got ", width));
  if (bottleneck < 1)
    throw ConfigError(detail::cat("bottleneck must be >= 1, got ", bottleneck));
  if (subnetworks < 1)
    throw ConfigError(detail::cat("subnetworks must be >= 1, got ", subnetworks));
  if (classes < 2) throw ConfigError(detail::cat("classes must be >= 2, got ", classes));
  if (cardinality && *cardinality < 1)
    throw ConfigError(detail::cat("cardinality must be >= 1, got ", *cardinality));

  if (family == Family::Plain) {
    if (subnetworks != 1)
      throw ConfigError(detail::cat("plain family has a single output; subnetworks must be "
                                    "1, got ", subnetworks));
    if (!cardinality)
      throw ConfigError("plain family requires an explicit cardinality");
  }
  if (family == Family::ShallowExit) {
    if (!cardinality)
      throw ConfigError("shallow-exit family requires an explicit cardinality");
    if (blocks < 2)
      throw ConfigError(detail::cat("shallow-exit family needs at least 2 blocks, got ",
                                    blocks));
    if (subnetworks != blocks - 1)
      throw ConfigError(detail::cat("shallow-exit family requires subnetworks == blocks-1 ",
                                    "(one head per block from the second on); got ",
                                    subnetworks, " with blocks=", blocks));
  }
  if (family == Family::Inclusive || family == Family::InclusiveSparse) {
    int C = resolved_cardinality();
    if (C % subnetworks != 0 || C < subnetworks)
      throw ConfigError(detail::cat("cardinality (", C, ") must be a positive multiple of "
                                    "subnetworks (", subnetworks, ")"));
  }
  if (family == Family::InclusiveSparse && width % subnetworks != 0)
    throw ConfigError(detail::cat("inclusive-sparse features split into subnetworks groups; "
                                  "width (", width, ") must be divisible by subnetworks (",
                                  subnetworks, ")"));
  if (shared_bn && family != Family::Inclusive)
    throw ConfigError("shared_bn is an ablation of the inclusive family only");
  if (!level_classes.empty()) {
    if (level_classes.front() != classes)
      throw ConfigError(detail::cat("level_classes[0] (", level_classes.front(),
                                    ") must equal classes (", classes,
                                    "); levels are listed finest first"));
    for (std::size_t d = 0; d < level_classes.size(); ++d)
      if (level_classes[d] < 2)
        throw ConfigError(detail::cat("level ", d + 1, " has ", level_classes[d],
                                      " classes; every level needs at least 2"));
  }
}

int ArchConfig::resolved_cardinality() const {
  if (cardinality) return *cardinality;
  return derive_cardinality(family, width, bottleneck);
}

int ArchConfig::classes_at_level(int level) const {
  if (level < 1 || level > levels())
    throw UsageError(detail::cat("level ", level, " out of range [1, ", levels(), "]"));
  return level_classes.empty() ? classes : level_classes[level - 1];
}

namespace {

template <typename S>
ConvLayer<S> make_conv(int out, int in_per_group, int k, int stride, int padding, int groups,
                       Rng& rng) {
  ConvLayer<S> c;
  c.weight = Tensor<S>::zeros({out, in_per_group, k, k});
  msra_fill(c.weight, rng);
  c.stride = stride;
  c.padding = padding;
  c.groups = groups;
  return c;
}

}  // namespace

template <typename S>
Head<S>& AnytimeNetwork<S>::head(int k, int level) {
  const int D = cfg.levels();
  if (k < 1 || k > cfg.subnetworks)
    throw UsageError(detail::cat("sub-network index ", k, " out of range [1, ",
                                 cfg.subnetworks, "]"));
  if (level < 1 || level > D)
    throw UsageError(detail::cat("level ", level, " out of range [1, ", D, "]"));
  return heads[static_cast<std::size_t>(k - 1) * D + (level - 1)];
}

template <typename S>
const Head<S>& AnytimeNetwork<S>::head(int k, int level) const {
  return const_cast<AnytimeNetwork<S>*>(this)->head(k, level);
}

template <typename S>
AnytimeNetwork<S> build_network(const ArchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AnytimeNetwork<S> net;
  net.cfg = cfg;
  net.C = cfg.resolved_cardinality();
  const int K = cfg.subnetworks;
  const int C = net.C;
  Rng rng(seed);

  if (cfg.big_stem()) {
    net.stem = make_conv<S>(cfg.width, 3, 7, 2, 3, 1, rng);
    net.stem_pool = true;
  } else {
    net.stem = make_conv<S>(cfg.width, 3, 3, 1, 1, 1, rng);
  }

  const bool banked = cfg.family == Family::Inclusive && !cfg.shared_bn;
  for (int b = 0; b < cfg.blocks; ++b) {
    const int s = net.scale_of_block(b);
    const int Ws = net.width_at(s);
    const int Bs = net.bneck_at(s);
    if (cfg.family == Family::InclusiveSparse) {
      SparseBlock<S> blk;
      blk.scale = s;
      const int w = Ws / K;
      const int cb = (C / K) * Bs;  // channels per branch group
      for (int g = 1; g <= K; ++g)
        blk.reduce.push_back(make_conv<S>(cb, g * w, 1, 1, 0, 1, rng));
      blk.spatial = make_conv<S>(C * Bs, Bs, 3, 1, 1, C, rng);
      blk.expand = make_conv<S>(Ws, cb, 1, 1, 0, K, rng);
      blk.bn_in = BatchNormState<S>::init(Ws);
      blk.bn_mid = BatchNormState<S>::init(C * Bs);
      blk.bn_out = BatchNormState<S>::init(C * Bs);
      net.sblocks.push_back(std::move(blk));
    } else {
      ResnextBlock<S> blk;
      blk.scale = s;
      blk.reduce = make_conv<S>(C * Bs, Ws, 1, 1, 0, 1, rng);
      blk.spatial = make_conv<S>(C * Bs, Bs, 3, 1, 1, C, rng);
      blk.expand = make_conv<S>(Ws, C * Bs, 1, 1, 0, 1, rng);
      auto make_bank = [&](auto channels_of) {
        BnBank<S> bank;
        bank.banked = banked;
        if (banked)
          for (int k = 1; k <= K; ++k)
            bank.states.push_back(BatchNormState<S>::init(channels_of(k)));
        else
          bank.states.push_back(BatchNormState<S>::init(channels_of(K)));
        return bank;
      };
      blk.bn_in = make_bank([&](int) { return Ws; });
      // k == K is the full block width; only banked entries for thinner
      // sub-networks need the per-k branch count (and its divisibility).
      auto mid_channels = [&](int k) {
        return (k == K ? C : subnetwork_cardinality(C, K, k)) * Bs;
      };
      blk.bn_mid = make_bank(mid_channels);
      blk.bn_out = make_bank(mid_channels);
      net.rblocks.push_back(std::move(blk));
    }
  }

  const int D = cfg.levels();
  for (int k = 1; k <= K; ++k) {
    for (int d = 1; d <= D; ++d) {
      Head<S> h;
      h.k = k;
      h.level = d;
      h.exit_block = net.exit_block_of(k);
      const int fs = net.scale_of_block(h.exit_block - 1);
      const int Wf = net.width_at(fs);
      h.in_channels =
          cfg.family == Family::InclusiveSparse ? k * (Wf / K) : Wf;
      h.bn = BatchNormState<S>::init(h.in_channels);
      const int cls = cfg.classes_at_level(d);
      // Classifier weights start at zero: the softmax begins uniform and the
      // gradient builds the readout before the head's private BN moves. The
      // thinnest heads see only a 1/K share of the joint loss, and a random
      // readout over channels that later die is a trap they cannot escape.
      h.fc_w = Tensor<S>::zeros({cls, h.in_channels});
      h.fc_b = Tensor<S>::zeros({cls});
      net.heads.push_back(std::move(h));
    }
  }
  return net;
}

template <typename S>
AnytimeNetwork<S> build_shallow_exit_variant(const ArchConfig& base, std::uint64_t seed) {
  ArchConfig cfg = base;
  cfg.cardinality = base.resolved_cardinality();
  cfg.family = Family::ShallowExit;
  cfg.subnetworks = cfg.blocks - 1;
  cfg.shared_bn = false;
  return build_network<S>(cfg, seed);
}

namespace {

// One grouped-branch residual block restricted to its first `branches`
// branches (of C_total), normalizing with bank entry `bank_k`.
template <typename S>
Tensor<S> rblock_forward(ResnextBlock<S>& blk, const Tensor<S>& x, int branches, int bank_k,
                         int C_total, Mode mode) {
  const int Bs = blk.spatial.weight.shape()[1];
  const int cb = branches * Bs;
  const bool thin = branches < C_total;

  Tensor<S> u = relu(batch_norm(x, blk.bn_in.at(bank_k), mode));
  Tensor<S> rw = thin ? slice_axis(blk.reduce.weight, 0, 0, cb) : blk.reduce.weight;
  Tensor<S> a = conv2d(u, rw, 1, 0, 1);
  Tensor<S> m = relu(batch_norm(a, blk.bn_mid.at(bank_k), mode));
  Tensor<S> sw = thin ? slice_axis(blk.spatial.weight, 0, 0, cb) : blk.spatial.weight;
  Tensor<S> sp = conv2d(m, sw, 1, 1, branches);
  Tensor<S> o = relu(batch_norm(sp, blk.bn_out.at(bank_k), mode));
  Tensor<S> ew = thin ? slice_axis(blk.expand.weight, 1, 0, cb) : blk.expand.weight;
  Tensor<S> y = conv2d(o, ew, 1, 0, 1);
  return add(x, y);
}

// One inclusive-sparse block restricted to its first `kg` feature groups.
template <typename S>
Tensor<S> sblock_forward(SparseBlock<S>& blk, const Tensor<S>& x, int kg, int K, Mode mode) {
  const int Bs = blk.spatial.weight.shape()[1];
  const int per_group = blk.reduce[0].weight.shape()[0];  // (C/K)*Bs
  const int w = blk.bn_in.channels / K;
  const int cb = kg * per_group;

  Tensor<S> u = relu(batch_norm(x, blk.bn_in, mode));
  std::vector<Tensor<S>> parts;
  parts.reserve(static_cast<std::size_t>(kg));
  for (int g = 1; g <= kg; ++g) {
    Tensor<S> src = (g == kg) ? u : channel_slice(u, 0, g * w);
    parts.push_back(conv2d(src, blk.reduce[g - 1].weight, 1, 0, 1));
  }
  Tensor<S> a = kg == 1 ? parts[0] : channel_concat(parts);
  Tensor<S> m = relu(batch_norm(a, blk.bn_mid, mode));
  Tensor<S> sw =
      kg < K ? slice_axis(blk.spatial.weight, 0, 0, cb) : blk.spatial.weight;
  Tensor<S> sp = conv2d(m, sw, 1, 1, cb / Bs);
  Tensor<S> o = relu(batch_norm(sp, blk.bn_out, mode));
  Tensor<S> ew =
      kg < K ? slice_axis(blk.expand.weight, 0, 0, kg * w) : blk.expand.weight;
  Tensor<S> y = conv2d(o, ew, 1, 0, kg);
  return add(x, y);
}

// Trunk features of sub-network k after `upto_block` blocks (1-based count).
// When `taps` is given, the feature after block b is stored in (*taps)[b-1].
template <typename S>
Tensor<S> trunk_features(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, Mode mode,
                         int upto_block, std::vector<Tensor<S>>* taps = nullptr) {
  const ArchConfig& cfg = net.cfg;
  const int K = cfg.subnetworks;
  const bool sparse = cfg.family == Family::InclusiveSparse;

  Tensor<S> h;
  if (sparse && k < K) {
    Tensor<S> sw = slice_axis(net.stem.weight, 0, 0, k * net.group_width(0));
    h = conv2d(x, sw, net.stem.stride, net.stem.padding, 1);
  } else {
    h = conv2d(x, net.stem.weight, net.stem.stride, net.stem.padding, 1);
  }
  if (net.stem_pool) h = max_pool2d(h, 2, 2);

  int branches = net.C;
  int bank_k = 1;
  if (cfg.family == Family::Inclusive) {
    branches = subnetwork_cardinality(net.C, K, k);
    bank_k = k;
  }

  int prev_scale = 0;
  for (int b = 0; b < upto_block; ++b) {
    const int s = net.scale_of_block(b);
    if (s != prev_scale) {
      if (sparse)
        h = downsample_shortcut(h, k * net.group_width(s), k);
      else
        h = downsample_shortcut(h, net.width_at(s), 1);
      prev_scale = s;
    }
    if (sparse)
      h = sblock_forward(net.sblocks[static_cast<std::size_t>(b)], h, k, K, mode);
    else
      h = rblock_forward(net.rblocks[static_cast<std::size_t>(b)], h, branches, bank_k,
                         net.C, mode);
    if (taps) (*taps)[static_cast<std::size_t>(b)] = h;
  }
  return h;
}

template <typename S>
Tensor<S> head_forward(Head<S>& head, const Tensor<S>& feat, Mode mode) {
  Tensor<S> h = feat;
  if (head.in_channels < feat.shape()[1]) h = channel_slice(feat, 0, head.in_channels);
  h = relu(batch_norm(h, head.bn, mode));
  Tensor<S> p = global_avg_pool(h);
  return linear(p, head.fc_w, head.fc_b);
}

template <typename S>
void check_subnetwork_index(const AnytimeNetwork<S>& net, int k) {
  if (k < 1 || k > net.cfg.subnetworks)
    throw UsageError(detail::cat("sub-network index ", k, " out of range [1, ",
                                 net.cfg.subnetworks, "]"));
}

}  // namespace

template <typename S>
Tensor<S> forward(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, Mode mode, int level) {
  check_subnetwork_index(net, k);
  Tensor<S> feat = trunk_features(net, x, k, mode, net.exit_block_of(k));
  return head_forward(net.head(k, level), feat, mode);
}

template <typename S>
Tensor<S> features(AnytimeNetwork<S>& net, const Tensor<S>& x, int k, Mode mode) {
  check_subnetwork_index(net, k);
  return trunk_features(net, x, k, mode, net.exit_block_of(k));
}

template <typename S>
std::vector<Tensor<S>> forward_levels(AnytimeNetwork<S>& net, const Tensor<S>& x, int k,
                                      Mode mode) {
  check_subnetwork_index(net, k);
  Tensor<S> feat = trunk_features(net, x, k, mode, net.exit_block_of(k));
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<std::size_t>(net.cfg.levels()));
  for (int d = 1; d <= net.cfg.levels(); ++d)
    out.push_back(head_forward(net.head(k, d), feat, mode));
  return out;
}

template <typename S>
std::vector<std::vector<Tensor<S>>> forward_all(AnytimeNetwork<S>& net, const Tensor<S>& x,
                                                Mode mode) {
  const int K = net.cfg.subnetworks;
  const int D = net.cfg.levels();
  std::vector<std::vector<Tensor<S>>> out(static_cast<std::size_t>(K));

  if (net.cfg.family == Family::InclusiveSparse) {
    Tensor<S> feat = trunk_features(net, x, K, mode, net.cfg.blocks);
    for (int k = 1; k <= K; ++k)
      for (int d = 1; d <= D; ++d)
        out[k - 1].push_back(head_forward(net.head(k, d), feat, mode));
  } else if (net.cfg.family == Family::ShallowExit) {
    std::vector<Tensor<S>> taps(static_cast<std::size_t>(net.cfg.blocks));
    trunk_features(net, x, K, mode, net.cfg.blocks, &taps);
    for (int k = 1; k <= K; ++k)
      for (int d = 1; d <= D; ++d)
        out[k - 1].push_back(
            head_forward(net.head(k, d), taps[net.exit_block_of(k) - 1], mode));
  } else {
    for (int k = 1; k <= K; ++k) out[k - 1] = forward_levels(net, x, k, mode);
  }
  return out;
}

template <typename S>
Tensor<S> stem_forward(AnytimeNetwork<S>& net, const Tensor<S>& x, int k) {
  check_subnetwork_index(net, k);
  Tensor<S> h;
  if (net.cfg.family == Family::InclusiveSparse && k < net.cfg.subnetworks) {
    Tensor<S> sw = slice_axis(net.stem.weight, 0, 0, k * net.group_width(0));
    h = conv2d(x, sw, net.stem.stride, net.stem.padding, 1);
  } else {
    h = conv2d(x, net.stem.weight, net.stem.stride, net.stem.padding, 1);
  }
  if (net.stem_pool) h = max_pool2d(h, 2, 2);
  return h;
}

template <typename S>
Tensor<S> run_blocks(AnytimeNetwork<S>& net, Tensor<S> h, int from_block, int to_block,
                     int k, Mode mode) {
  check_subnetwork_index(net, k);
  if (from_block < 0 || to_block < from_block || to_block > net.cfg.blocks)
    throw UsageError(detail::cat("block range [", from_block, ", ", to_block,
                                 ") outside [0, ", net.cfg.blocks, ")"));
  const ArchConfig& cfg = net.cfg;
  const bool sparse = cfg.family == Family::InclusiveSparse;
  int branches = net.C;
  int bank_k = 1;
  if (cfg.family == Family::Inclusive) {
    branches = subnetwork_cardinality(net.C, cfg.subnetworks, k);
    bank_k = k;
  }
  int prev_scale = from_block > 0 ? net.scale_of_block(from_block - 1) : 0;
  for (int b = from_block; b < to_block; ++b) {
    const int s = net.scale_of_block(b);
    if (s != prev_scale) {
      if (sparse)
        h = downsample_shortcut(h, k * net.group_width(s), k);
      else
        h = downsample_shortcut(h, net.width_at(s), 1);
      prev_scale = s;
    }
    if (sparse)
      h = sblock_forward(net.sblocks[static_cast<std::size_t>(b)], h, k,
                         cfg.subnetworks, mode);
    else
      h = rblock_forward(net.rblocks[static_cast<std::size_t>(b)], h, branches, bank_k,
                         net.C, mode);
  }
  return h;
}

template <typename S>
Tensor<S> head_logits(AnytimeNetwork<S>& net, int k, int level, const Tensor<S>& feat,
                      Mode mode) {
  check_subnetwork_index(net, k);
  return head_forward(net.head(k, level), feat, mode);
}

namespace {

template <typename S>
S l1_of_rows(const Tensor<S>& w, int row_begin, int row_count) {
  const Shape& sh = w.shape();
  std::int64_t per_row = 1;
  for (std::size_t d = 1; d < sh.size(); ++d) per_row *= sh[d];
  const auto& v = w.values();
  S acc = 0;
  for (std::int64_t i = row_begin * per_row; i < (row_begin + row_count) * per_row; ++i)
    acc += std::abs(v[static_cast<std::size_t>(i)]);
  return acc;
}

template <typename S>
S l1_of_cols(const Tensor<S>& w, int row_begin, int row_count, int col_begin,
             int col_count) {
  const Shape& sh = w.shape();
  std::int64_t per_row = 1;
  for (std::size_t d = 1; d < sh.size(); ++d) per_row *= sh[d];
  std::int64_t tail = per_row / sh[1];  // elements per input channel (k*k)
  const auto& v = w.values();
  S acc = 0;
  for (int r = row_begin; r < row_begin + row_count; ++r)
    for (std::int64_t i = col_begin * tail; i < (col_begin + col_count) * tail; ++i)
      acc += std::abs(v[static_cast<std::size_t>(r * per_row + i)]);
  return acc;
}

}  // namespace

template <typename S>
S branch_weight_l1(const AnytimeNetwork<S>& net, int block, int layer, int branch) {
  if (block < 1 || block > net.cfg.blocks)
    throw UsageError(detail::cat("block ", block, " out of range [1, ", net.cfg.blocks, "]"));
  if (layer < 1 || layer > 3)
    throw UsageError(detail::cat("layer ", layer, " out of range [1, 3] "
                                 "(1=reduce, 2=spatial, 3=expand)"));
  if (branch < 1 || branch > net.C)
    throw UsageError(detail::cat("branch ", branch, " out of range [1, ", net.C, "]"));

  const int K = net.cfg.subnetworks;
  if (net.cfg.family == Family::InclusiveSparse) {
    const SparseBlock<S>& blk = net.sblocks[static_cast<std::size_t>(block - 1)];
    const int Bs = blk.spatial.weight.shape()[1];
    const int per = net.C / K;                      // branches per group
    const int g = is_branch_input_span(branch, net.C, K);
    const int loc = branch - (g - 1) * per - 1;     // 0-based index within group
    switch (layer) {
      case 1: return l1_of_rows(blk.reduce[static_cast<std::size_t>(g - 1)].weight,
                                loc * Bs, Bs);
      case 2: return l1_of_rows(blk.spatial.weight, (branch - 1) * Bs, Bs);
      default: {
        const int w = blk.bn_in.channels / K;
        return l1_of_cols(blk.expand.weight, (g - 1) * w, w, loc * Bs, Bs);
      }
    }
  }
  const ResnextBlock<S>& blk = net.rblocks[static_cast<std::size_t>(block - 1)];
  const int Bs = blk.spatial.weight.shape()[1];
  switch (layer) {
    case 1: return l1_of_rows(blk.reduce.weight, (branch - 1) * Bs, Bs);
    case 2: return l1_of_rows(blk.spatial.weight, (branch - 1) * Bs, Bs);
    default:
      return l1_of_cols(blk.expand.weight, 0, blk.expand.weight.shape()[0],
                        (branch - 1) * Bs, Bs);
  }
}

template <typename S>
int branch_state_count(const AnytimeNetwork<S>& net, int branch) {
  if (branch < 1 || branch > net.C)
    throw UsageError(detail::cat("branch ", branch, " out of range [1, ", net.C, "]"));
  if (net.cfg.family != Family::Inclusive || net.cfg.shared_bn) return 1;
  const ResnextBlock<S>& blk = net.rblocks.front();
  const int Bs = blk.spatial.weight.shape()[1];
  int count = 0;
  for (const auto& st : blk.bn_mid.states)
    if (st.channels >= branch * Bs) ++count;
  return count;
}

namespace {

// Single walk over every learnable tensor, shared by parameters(),
// named_parameters(), and the checkpoint enumeration so orders never drift.
template <typename S, typename Fn>
void visit_parameters(AnytimeNetwork<S>& net, Fn&& fn) {
  fn("stem.weight", net.stem.weight);
  auto visit_bn = [&](const std::string& prefix, BatchNormState<S>& st) {
    fn(prefix + ".gamma", st.gamma);
    fn(prefix + ".beta", st.beta);
  };
  auto visit_bank = [&](const std::string& prefix, BnBank<S>& bank) {
    if (bank.banked)
      for (std::size_t i = 0; i < bank.states.size(); ++i)
        visit_bn(detail::cat(prefix, ".k", i + 1), bank.states[i]);
    else
      visit_bn(prefix, bank.states[0]);
  };
  for (std::size_t b = 0; b < net.rblocks.size(); ++b) {
    auto& blk = net.rblocks[b];
    std::string p = detail::cat("block", b + 1);
    fn(p + ".reduce.weight", blk.reduce.weight);
    fn(p + ".spatial.weight", blk.spatial.weight);
    fn(p + ".expand.weight", blk.expand.weight);
    visit_bank(p + ".bn_in", blk.bn_in);
    visit_bank(p + ".bn_mid", blk.bn_mid);
    visit_bank(p + ".bn_out", blk.bn_out);
  }
  for (std::size_t b = 0; b < net.sblocks.size(); ++b) {
    auto& blk = net.sblocks[b];
    std::string p = detail::cat("block", b + 1);
    for (std::size_t g = 0; g < blk.reduce.size(); ++g)
      fn(detail::cat(p, ".reduce", g + 1, ".weight"), blk.reduce[g].weight);
    fn(p + ".spatial.weight", blk.spatial.weight);
    fn(p + ".expand.weight", blk.expand.weight);
    visit_bn(p + ".bn_in", blk.bn_in);
    visit_bn(p + ".bn_mid", blk.bn_mid);
    visit_bn(p + ".bn_out", blk.bn_out);
  }
  for (auto& h : net.heads) {
    std::string p = detail::cat("head.k", h.k, ".d", h.level);
    visit_bn(p + ".bn", h.bn);
    fn(p + ".fc.weight", h.fc_w);
    fn(p + ".fc.bias", h.fc_b);
  }
}

// Batch-norm sites in the same order visit_parameters walks them.
template <typename S, typename Fn>
void visit_bn_sites(AnytimeNetwork<S>& net, Fn&& fn) {
  auto visit_bank = [&](const std::string& prefix, BnBank<S>& bank) {
    if (bank.banked)
      for (std::size_t i = 0; i < bank.states.size(); ++i)
        fn(detail::cat(prefix, ".k", i + 1), bank.states[i]);
    else
      fn(prefix, bank.states[0]);
  };
  for (std::size_t b = 0; b < net.rblocks.size(); ++b) {
    auto& blk = net.rblocks[b];
    std::string p = detail::cat("block", b + 1);
    visit_bank(p + ".bn_in", blk.bn_in);
    visit_bank(p + ".bn_mid", blk.bn_mid);
    visit_bank(p + ".bn_out", blk.bn_out);
  }
  for (std::size_t b = 0; b < net.sblocks.size(); ++b) {
    auto& blk = net.sblocks[b];
    std::string p = detail::cat("block", b + 1);
    fn(p + ".bn_in", blk.bn_in);
    fn(p + ".bn_mid", blk.bn_mid);
    fn(p + ".bn_out", blk.bn_out);
  }
  for (auto& h : net.heads)
    fn(detail::cat("head.k", h.k, ".d", h.level, ".bn"), h.bn);
}

}  // namespace

template <typename S>
std::vector<StateEntry<S>> named_state(AnytimeNetwork<S>& net) {
  std::vector<StateEntry<S>> out;
  visit_parameters(net, [&](const std::string& n, Tensor<S>& t) {
    out.push_back({n, t.shape(), &t.values(), true});
  });
  visit_bn_sites(net, [&](const std::string& p, BatchNormState<S>& st) {
    out.push_back({p + ".running_mean", {st.channels}, &st.running_mean, false});
    out.push_back({p + ".running_var", {st.channels}, &st.running_var, false});
  });
  return out;
}

template <typename S>
std::vector<Tensor<S>> AnytimeNetwork<S>::parameters() {
  std::vector<Tensor<S>> out;
  visit_parameters(*this, [&](const std::string&, Tensor<S>& t) { out.push_back(t); });
  return out;
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> AnytimeNetwork<S>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  visit_parameters(*this,
                   [&](const std::string& n, Tensor<S>& t) { out.emplace_back(n, t); });
  return out;
}

template <typename S>
std::int64_t AnytimeNetwork<S>::parameter_count() {
  std::int64_t n = 0;
  visit_parameters(*this, [&](const std::string&, Tensor<S>& t) { n += t.numel(); });
  return n;
}

#define ANYNET_INSTANTIATE_ARCH(S)                                                        \
  template struct AnytimeNetwork<S>;                                                      \
  template AnytimeNetwork<S> build_network<S>(const ArchConfig&, std::uint64_t);          \
  template AnytimeNetwork<S> build_shallow_exit_variant<S>(const ArchConfig&,             \
                                                           std::uint64_t);                \
  template Tensor<S> forward<S>(AnytimeNetwork<S>&, const Tensor<S>&, int, Mode, int);    \
  template Tensor<S> features<S>(AnytimeNetwork<S>&, const Tensor<S>&, int, Mode);        \
  template std::vector<Tensor<S>> forward_levels<S>(AnytimeNetwork<S>&, const Tensor<S>&, \
                                                    int, Mode);                           \
  template std::vector<std::vector<Tensor<S>>> forward_all<S>(AnytimeNetwork<S>&,         \
                                                              const Tensor<S>&, Mode);    \
  template Tensor<S> stem_forward<S>(AnytimeNetwork<S>&, const Tensor<S>&, int);          \
  template Tensor<S> run_blocks<S>(AnytimeNetwork<S>&, Tensor<S>, int, int, int, Mode);   \
  template Tensor<S> head_logits<S>(AnytimeNetwork<S>&, int, int, const Tensor<S>&,       \
                                    Mode);                                                \
  template S branch_weight_l1<S>(const AnytimeNetwork<S>&, int, int, int);                \
  template int branch_state_count<S>(const AnytimeNetwork<S>&, int);                      \
  template std::vector<StateEntry<S>> named_state<S>(AnytimeNetwork<S>&);

ANYNET_INSTANTIATE_ARCH(float)
ANYNET_INSTANTIATE_ARCH(double)

#undef ANYNET_INSTANTIATE_ARCH

}  // namespace anynet
