#include "anynet/flops.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "anynet/common.hpp"

namespace anynet {

namespace {

std::uint64_t u(std::int64_t v) { return static_cast<std::uint64_t>(v); }

int conv_out_dim(int in, int kernel, int stride, int pad) {
  const int o = (in + 2 * pad - kernel) / stride + 1;
  if (o < 1)
    throw ConfigError(detail::cat("spatial size ", in, " is too small for a ", kernel, "x",
                                  kernel, " window with stride ", stride, ", padding ",
                                  pad));
  return o;
}

SubnetworkAudit audit_subnetwork(const ArchConfig& cfg, int C, int k, int image) {
  SubnetworkAudit a;
  a.k = k;
  const int K = cfg.subnetworks;
  const bool sparse = cfg.family == Family::InclusiveSparse;
  const int branches =
      cfg.family == Family::Inclusive ? subnetwork_cardinality(C, K, k) : C;

  auto row = [&](std::string name, OpKind kind, std::uint64_t units) {
    a.kind_totals[static_cast<std::size_t>(kind)] += units;
    a.total += units;
    a.rows.push_back({std::move(name), kind, units});
  };

  int H = image;
  int ch = sparse ? k * (cfg.width / K) : cfg.width;
  if (cfg.big_stem()) {
    H = conv_out_dim(H, 7, 2, 3);
    row("stem", OpKind::Conv, u(H) * u(H) * u(ch) * u(3 * 49));
    H = conv_out_dim(H, 2, 2, 0);
    row("stem.pool", OpKind::MaxPool, 0);
  } else {
    H = conv_out_dim(H, 3, 1, 1);
    row("stem", OpKind::Conv, u(H) * u(H) * u(ch) * u(3 * 9));
  }

  const int bps = cfg.blocks / cfg.scales;
  const int upto = cfg.family == Family::ShallowExit ? k + 1 : cfg.blocks;
  int prev_scale = 0;
  for (int b = 0; b < upto; ++b) {
    const int s = b / bps;
    const int Ws = cfg.width << s;
    const int Bs = cfg.bottleneck << s;
    const std::string p = detail::cat("block", b + 1);
    if (s != prev_scale) {
      const int Hn = conv_out_dim(H, 2, 2, 0);
      row(detail::cat("downsample", s), OpKind::AvgPool, u(ch) * u(Hn) * u(Hn) * 4);
      H = Hn;
      ch = sparse ? k * (Ws / K) : Ws;
      prev_scale = s;
    }
    const std::uint64_t hw = u(H) * u(H);
    if (sparse) {
      const int w = Ws / K;
      const int cpk = (C / K) * Bs;  // channels per branch group
      row(p + ".bn_in", OpKind::BatchNorm, u(k * w) * hw);
      row(p + ".relu_in", OpKind::Relu, u(k * w) * hw);
      for (int g = 1; g <= k; ++g)
        row(detail::cat(p, ".reduce", g), OpKind::Conv, hw * u(cpk) * u(g * w));
      row(p + ".bn_mid", OpKind::BatchNorm, u(k * cpk) * hw);
      row(p + ".relu_mid", OpKind::Relu, u(k * cpk) * hw);
      row(p + ".spatial", OpKind::Conv, hw * u(k * cpk) * u(Bs) * 9);
      row(p + ".bn_out", OpKind::BatchNorm, u(k * cpk) * hw);
      row(p + ".relu_out", OpKind::Relu, u(k * cpk) * hw);
      row(p + ".expand", OpKind::Conv, hw * u(k * w) * u(cpk));
      row(p + ".add", OpKind::ResidualAdd, u(k * w) * hw);
    } else {
      const int cb = branches * Bs;
      row(p + ".bn_in", OpKind::BatchNorm, u(Ws) * hw);
      row(p + ".relu_in", OpKind::Relu, u(Ws) * hw);
      row(p + ".reduce", OpKind::Conv, hw * u(cb) * u(Ws));
      row(p + ".bn_mid", OpKind::BatchNorm, u(cb) * hw);
      row(p + ".relu_mid", OpKind::Relu, u(cb) * hw);
      row(p + ".spatial", OpKind::Conv, hw * u(cb) * u(Bs) * 9);
      row(p + ".bn_out", OpKind::BatchNorm, u(cb) * hw);
      row(p + ".relu_out", OpKind::Relu, u(cb) * hw);
      row(p + ".expand", OpKind::Conv, hw * u(Ws) * u(cb));
      row(p + ".add", OpKind::ResidualAdd, u(Ws) * hw);
    }
  }

  const std::uint64_t before_head = a.total;
  const std::string hp = detail::cat("head.k", k);
  const std::uint64_t hw = u(H) * u(H);
  row(hp + ".bn", OpKind::BatchNorm, u(ch) * hw);
  row(hp + ".relu", OpKind::Relu, u(ch) * hw);
  row(hp + ".gap", OpKind::GlobalAvgPool, u(ch) * hw);
  const int cls = cfg.classes_at_level(1);
  row(hp + ".fc", OpKind::Linear, u(cls) * u(ch) + u(cls));
  a.head_units = a.total - before_head;
  a.params = count_params(cfg, k);
  return a;
}

}  // namespace

std::int64_t count_params(const ArchConfig& cfg, int k) {
  cfg.validate();
  const int C = cfg.resolved_cardinality();
  const int K = cfg.subnetworks;
  if (k < 1 || k > K)
    throw UsageError(detail::cat("sub-network index ", k, " out of range [1, ", K, "]"));
  const bool sparse = cfg.family == Family::InclusiveSparse;
  const int branches =
      cfg.family == Family::Inclusive ? subnetwork_cardinality(C, K, k) : C;
  std::int64_t p = 0;

  const int stem_k = cfg.big_stem() ? 7 : 3;
  const int stem_ch = sparse ? k * (cfg.width / K) : cfg.width;
  p += static_cast<std::int64_t>(stem_ch) * 3 * stem_k * stem_k;

  const int bps = cfg.blocks / cfg.scales;
  const int upto = cfg.family == Family::ShallowExit ? k + 1 : cfg.blocks;
  int ch = stem_ch;
  for (int b = 0; b < upto; ++b) {
    const int s = b / bps;
    const int Ws = cfg.width << s;
    const int Bs = cfg.bottleneck << s;
    if (sparse) {
      const int w = Ws / K;
      const int cpk = (C / K) * Bs;
      for (int g = 1; g <= k; ++g) p += static_cast<std::int64_t>(cpk) * g * w;
      p += static_cast<std::int64_t>(k) * cpk * Bs * 9;  // spatial, groups = kC/K
      p += static_cast<std::int64_t>(k) * w * cpk;       // expand, groups = k
      p += 2LL * k * w + 4LL * k * cpk;                  // bn_in + bn_mid + bn_out
      ch = k * w;
    } else {
      const int cb = branches * Bs;
      p += static_cast<std::int64_t>(cb) * Ws;      // reduce
      p += static_cast<std::int64_t>(cb) * Bs * 9;  // spatial
      p += static_cast<std::int64_t>(Ws) * cb;      // expand
      p += 2LL * Ws + 4LL * cb;                     // one bank entry per site
      ch = Ws;
    }
  }

  const int cls = cfg.classes_at_level(1);
  p += 2LL * ch + static_cast<std::int64_t>(cls) * ch + cls;
  return p;
}

std::uint64_t count_flops(const ArchConfig& cfg, int k, int image_size) {
  cfg.validate();
  if (k < 1 || k > cfg.subnetworks)
    throw UsageError(detail::cat("sub-network index ", k, " out of range [1, ",
                                 cfg.subnetworks, "]"));
  const int image = image_size > 0 ? image_size : cfg.default_image_size();
  return audit_subnetwork(cfg, cfg.resolved_cardinality(), k, image).total;
}

FlopsReport audit_network(const ArchConfig& cfg, int image_size) {
  cfg.validate();
  FlopsReport report;
  report.family = family_to_string(cfg.family);
  report.image_size = image_size > 0 ? image_size : cfg.default_image_size();
  const int C = cfg.resolved_cardinality();
  for (int k = 1; k <= cfg.subnetworks; ++k)
    report.subnetworks.push_back(audit_subnetwork(cfg, C, k, report.image_size));
  return report;
}

const SubnetworkAudit& FlopsReport::at(int k) const {
  if (k < 1 || k > static_cast<int>(subnetworks.size()))
    throw UsageError(detail::cat("sub-network index ", k, " out of range [1, ",
                                 subnetworks.size(), "]"));
  return subnetworks[static_cast<std::size_t>(k - 1)];
}

std::string FlopsReport::csv() const {
  std::ostringstream os;
  os << "subnetwork,flops,params\n";
  for (const auto& s : subnetworks)
    os << s.k << ',' << s.total << ',' << s.params << '\n';
  return os.str();
}

std::string FlopsReport::table() const {
  std::ostringstream os;
  os << family << " network, " << image_size << "x" << image_size << " input\n";
  os << std::setw(4) << "k" << std::setw(16) << "flops" << std::setw(14) << "head"
     << std::setw(14) << "params" << '\n';
  for (const auto& s : subnetworks)
    os << std::setw(4) << s.k << std::setw(16) << s.total << std::setw(14) << s.head_units
       << std::setw(14) << s.params << '\n';
  return os.str();
}

std::string FlopsReport::layer_table(int k) const {
  const SubnetworkAudit& s = at(k);
  std::ostringstream os;
  os << "sub-network " << k << ", per-sample units\n";
  for (const auto& r : s.rows)
    os << "  " << std::left << std::setw(24) << r.layer << std::right << std::setw(15)
       << op_kind_name(r.kind) << std::setw(16) << r.units << '\n';
  os << "  " << std::left << std::setw(24) << "total" << std::right << std::setw(31)
     << s.total << '\n';
  return os.str();
}

namespace {

struct BranchFacts {
  int read_span = 1;     // highest feature group a branch's reduce weights read
  int allowed_span = 1;  // ceil(i*groups/C)
};

}  // namespace

template <typename S>
std::vector<SparsityViolation> sparsity_violations(const AnytimeNetwork<S>& net,
                                                   int groups) {
  if (groups < 1) throw UsageError(detail::cat("groups must be >= 1, got ", groups));
  const int C = net.C;
  if (C % groups != 0)
    throw ConfigError(detail::cat("cannot partition ", C, " branches into ", groups,
                                  " equal groups"));
  std::vector<SparsityViolation> out;

  auto analyze = [&](int block_index, int in_channels, int Bs,
                     const std::vector<std::pair<int, int>>& branch_reads,  // (branch, in_read)
                     int spatial_groups, int expand_out, int expand_in_per_group,
                     int expand_groups) {
    if (in_channels % groups != 0)
      throw ConfigError(detail::cat("block ", block_index, " input width ", in_channels,
                                    " is not divisible into ", groups, " groups"));
    const int w = in_channels / groups;
    std::vector<BranchFacts> facts(static_cast<std::size_t>(C));
    for (const auto& [i, in_read] : branch_reads) {
      BranchFacts f;
      f.allowed_span = (i * groups + C - 1) / C;
      f.read_span = std::min(groups, (in_read + w - 1) / w);
      facts[static_cast<std::size_t>(i - 1)] = f;
      for (int r = f.allowed_span + 1; r <= f.read_span; ++r)
        out.push_back({block_index,
                       detail::cat("branch ", i, " reads feature group ", r,
                                   " (allowed up to ", f.allowed_span, ")")});
    }
    // Spatial mixing: branches sharing a spatial group inherit each other's
    // reads.
    if (spatial_groups < C && spatial_groups >= 1) {
      const int per = C / spatial_groups;
      for (int sg = 0; sg < spatial_groups; ++sg) {
        int span = 1;
        for (int i = sg * per + 1; i <= (sg + 1) * per; ++i)
          span = std::max(span, facts[static_cast<std::size_t>(i - 1)].read_span);
        for (int i = sg * per + 1; i <= (sg + 1) * per; ++i) {
          const auto& f = facts[static_cast<std::size_t>(i - 1)];
          for (int r = std::max(f.allowed_span, f.read_span) + 1; r <= span; ++r)
            out.push_back({block_index,
                           detail::cat("branch ", i, " mixes with feature group ", r,
                                       " through its 3x3 group (allowed up to ",
                                       f.allowed_span, ")")});
        }
      }
    }
    // Output wiring: which branches feed output group k. Expand group e
    // covers output rows [(e)*out/g, ...) and branch channels
    // [(e)*in_per_group, ...).
    const int out_per_group = expand_out / expand_groups;
    for (int kk = 1; kk <= groups; ++kk) {
      const int allowed = kk * (C / groups);
      const int lo = (kk - 1) * (expand_out / groups);
      const int hi = kk * (expand_out / groups);  // output channel range of group kk
      for (int e = 0; e < expand_groups; ++e) {
        const int r0 = e * out_per_group, r1 = (e + 1) * out_per_group;
        if (r1 <= lo || r0 >= hi) continue;  // expand group e does not hit group kk
        const int b0 = e * expand_in_per_group / Bs;           // first branch, 0-based
        const int b1 = (e + 1) * expand_in_per_group / Bs;     // one past last
        for (int j = b0 + 1; j <= b1; ++j)
          if (j > allowed)
            out.push_back({block_index,
                           detail::cat("output group ", kk, " mixes branch ", j,
                                       " (allowed up to ", allowed, ")")});
      }
    }
  };

  for (std::size_t b = 0; b < net.sblocks.size(); ++b) {
    const auto& blk = net.sblocks[b];
    const int Bs = blk.spatial.weight.shape()[1];
    const int per = C / static_cast<int>(blk.reduce.size());
    std::vector<std::pair<int, int>> reads;
    for (int i = 1; i <= C; ++i) {
      const int g = (i - 1) / per;  // 0-based reduce conv
      reads.emplace_back(i, blk.reduce[static_cast<std::size_t>(g)].weight.shape()[1]);
    }
    analyze(static_cast<int>(b) + 1, blk.bn_in.channels, Bs, reads,
            blk.spatial.groups, blk.expand.weight.shape()[0],
            blk.expand.weight.shape()[1], blk.expand.groups);
  }
  for (std::size_t b = 0; b < net.rblocks.size(); ++b) {
    const auto& blk = net.rblocks[b];
    const int Bs = blk.spatial.weight.shape()[1];
    std::vector<std::pair<int, int>> reads;
    for (int i = 1; i <= C; ++i) reads.emplace_back(i, blk.reduce.weight.shape()[1]);
    analyze(static_cast<int>(b) + 1, blk.reduce.weight.shape()[1], Bs, reads,
            blk.spatial.groups, blk.expand.weight.shape()[0],
            blk.expand.weight.shape()[1], blk.expand.groups);
  }
  return out;
}

template <typename S>
std::vector<SparsityViolation> verify_sparsity(const AnytimeNetwork<S>& net) {
  if (net.cfg.family != Family::InclusiveSparse)
    throw UsageError("sparsity verification applies to inclusive-sparse networks; use "
                     "sparsity_violations(net, groups) to analyze other families");
  return sparsity_violations(net, net.cfg.subnetworks);
}

template std::vector<SparsityViolation> sparsity_violations<float>(
    const AnytimeNetwork<float>&, int);
template std::vector<SparsityViolation> sparsity_violations<double>(
    const AnytimeNetwork<double>&, int);
template std::vector<SparsityViolation> verify_sparsity<float>(const AnytimeNetwork<float>&);
template std::vector<SparsityViolation> verify_sparsity<double>(
    const AnytimeNetwork<double>&);

}  // namespace anynet
