#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "anynet/common.hpp"
#include "anynet/tensor.hpp"

namespace anynet {

// One image with its labels. `image` holds 3*size*size values in [0, 1],
// channel-planar (all red rows, then green, then blue), row-major within a
// channel — the in-memory mirror of the CIFAR binary pixel layout.
// `level_labels`, when present, lists the label at every hierarchy level,
// finest first; level_labels[0] always equals `label`.
struct Sample {
  std::vector<float> image;
  int label = 0;
  std::vector<int> level_labels;
};

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

// Fine-to-coarse label maps, finest level first. level_map[0] is the
// identity; level_map[d][fine] is the fine class's id at level d+1. Every
// fine class has exactly one ancestor per level by construction.
struct LabelHierarchy {
  int levels = 1;
  std::vector<int> level_classes;               // size == levels
  std::vector<std::vector<int>> level_map;      // size == levels
  std::vector<std::vector<std::string>> names;  // per level, may be empty

  std::vector<int> project(int fine) const;
  void validate() const;
};

struct Dataset {
  int image_size = 32;
  int classes = 10;
  std::vector<Sample> samples;
  ChannelStats stats;         // per-channel statistics of this split
  LabelHierarchy hierarchy;   // levels == 1 unless attached/loaded

  int size() const { return static_cast<int>(samples.size()); }
};

// ---- CIFAR binary ingestion ------------------------------------------------
// Record layout: CIFAR-10 = 1 label byte + 3072 pixel bytes; CIFAR-100 =
// coarse byte, fine byte, 3072 pixel bytes. Pixels are scaled to [0,1] on
// load and the write-back reproduces the input bytes exactly. Loading the
// 100-class variant populates a two-level hierarchy from the observed
// (fine, coarse) pairs and rejects inconsistent pairs.
Dataset load_cifar_binary(const std::vector<std::string>& paths, int variant);
Dataset load_cifar_binary(const std::string& path, int variant);
void write_cifar_binary(const Dataset& ds, const std::string& path);

// ---- Channel statistics ----------------------------------------------------
ChannelStats compute_channel_stats(const Dataset& ds);
void write_stats_sidecar(const ChannelStats& stats, const std::string& path);
ChannelStats read_stats_sidecar(const std::string& path);

// ---- Augmentation ----------------------------------------------------------
// Training-time policy: horizontal flip with probability 1/2, zero-pad by
// `pad` then crop back to the original size at a uniform offset, then
// per-channel normalization. The randomness is drawn once into AugmentDraw
// (flip first, then dx, then dy) so tests can force outcomes.
struct AugmentDraw {
  bool flip = false;
  int dx = 0;  // horizontal crop offset in [0, 2*pad]
  int dy = 0;  // vertical crop offset in [0, 2*pad]
};

AugmentDraw draw_augment(Rng& rng, int pad = 4);
Sample augment(const Sample& s, int image_size, const AugmentDraw& draw,
               const ChannelStats& stats, int pad = 4);
// Evaluation-time path: normalization only.
Sample normalize_only(const Sample& s, const ChannelStats& stats);

// ---- Synthetic data --------------------------------------------------------
// Deterministic toy task: every class has a fixed pattern (a bright blob
// whose position and color identify the class) plus per-sample noise of
// the given amplitude; classes are assigned round-robin. When coarse_groups
// > 0 (must divide classes), classes in the same group share a background
// tint and a two-level hierarchy is attached (coarse = class / group size),
// making the coarse distinction easier than the fine one.
Dataset synth_dataset(std::uint64_t seed, int n, int classes, int image_size,
                      double noise = 0.1, int coarse_groups = 0);

// ---- Taxonomy --------------------------------------------------------------
// Text format: one line per fine class, tab-separated names from fine to
// coarsest; names are interned per level in order of first appearance.
// Errors: ragged rows or duplicate fine names.
LabelHierarchy load_taxonomy(const std::string& path);
// Sets ds.hierarchy and fills every sample's level_labels via project().
void attach_hierarchy(Dataset& ds, const LabelHierarchy& hierarchy);

// ---- Batch assembly --------------------------------------------------------
// Stacks the indexed samples into an (N, 3, S, S) tensor. With augment_flag
// the training policy above is applied (consuming rng); otherwise samples
// are normalized only.
template <typename S>
Tensor<S> make_batch(const Dataset& ds, const std::vector<int>& indices,
                     bool augment_flag, Rng& rng, const ChannelStats& stats);
// Labels of the indexed samples at a hierarchy level (1 = fine).
std::vector<int> batch_labels(const Dataset& ds, const std::vector<int>& indices,
                              int level = 1);

// Seeded shuffle split: returns (kept, held_out) index lists.
std::pair<std::vector<int>, std::vector<int>> split_indices(int n, int held_out,
                                                            std::uint64_t seed);

}  // namespace anynet
