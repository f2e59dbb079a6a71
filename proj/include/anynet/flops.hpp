#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "anynet/arch.hpp"
#include "anynet/cost.hpp"

namespace anynet {

// Analytic per-sub-network cost audit. Units are multiply-add operations for
// convolutions and fully connected layers and element visits for
// normalization, activations, residual adds, and pooling, per input sample:
//
//   conv            out_elems * (in_channels/groups) * kh * kw
//   linear          in * out + out
//   batch norm      element count of its input
//   relu            element count
//   residual add    element count
//   avg pool        out_elems * k*k (counted on the pre-zero-fill channels)
//   global avg pool element count of its input
//   max pool, concat, slice, zero-fill, softmax   free
//
// The analytic walk below mirrors forward() layer for layer, so its per-kind
// totals match the instrumented counters exactly (a tested invariant).

struct FlopsRow {
  std::string layer;
  OpKind kind = OpKind::Conv;
  std::uint64_t units = 0;
};

struct SubnetworkAudit {
  int k = 1;
  std::vector<FlopsRow> rows;
  std::uint64_t total = 0;       // tau(f_k), including its level-1 head
  std::uint64_t head_units = 0;  // portion spent in the level-1 head
  std::int64_t params = 0;       // learnable scalars of the standalone thin net
  std::array<std::uint64_t, kOpKindCount> kind_totals{};
};

struct FlopsReport {
  std::string family;
  int image_size = 0;
  std::vector<SubnetworkAudit> subnetworks;  // k = 1..K

  const SubnetworkAudit& at(int k) const;
  std::string csv() const;    // columns: subnetwork,flops,params
  std::string table() const;  // aligned text summary
  std::string layer_table(int k) const;
};

// tau(f_k) for sub-network k. image_size 0 means the config's default
// (224 for big-stem networks, 32 otherwise). Hierarchical networks are
// costed with their finest head; coarser heads are interchangeable
// alternatives whose delta shows up in stream accounting instead.
std::uint64_t count_flops(const ArchConfig& cfg, int k, int image_size = 0);

// Learnable parameter count of sub-network k as a standalone network (the
// weight slices it actually uses plus its own normalization and head).
std::int64_t count_params(const ArchConfig& cfg, int k);

// Full per-layer audit for every sub-network.
FlopsReport audit_network(const ArchConfig& cfg, int image_size = 0);

template <typename S>
std::uint64_t count_flops(const AnytimeNetwork<S>& net, int k, int image_size = 0) {
  return count_flops(net.cfg, k, image_size);
}

// Structural sparsity audit. Partitions each block's input features and
// outputs into `groups` equal channel groups and, reading the actual
// convolution weight shapes, reports every dependency that breaks the
// nesting rule: branch i may read feature groups 1..ceil(i*groups/C) and
// output group k may mix branches 1..k*C/groups only.
struct SparsityViolation {
  int block = 0;  // 1-based
  std::string message;
};

template <typename S>
std::vector<SparsityViolation> sparsity_violations(const AnytimeNetwork<S>& net,
                                                   int groups);

// The inclusive-sparse invariant check: zero violations at groups = K.
// Usage error on other families (their blocks are not channel-partitioned).
template <typename S>
std::vector<SparsityViolation> verify_sparsity(const AnytimeNetwork<S>& net);

}  // namespace anynet
