// Experiment configuration: a plain-text sectioned key=value format covering
// the architecture, the training recipe, and the dataset, parsed strictly and
// serialized losslessly (parse(serialize(c)) == c).
#pragma once

#include <string>
#include <vector>

#include "anynet/arch.hpp"
#include "anynet/data.hpp"
#include "anynet/train.hpp"

namespace anynet {

// [data] section. `kind` selects the source:
//   synthetic      class-blob images generated in memory
//   cifar10        binary records: 1 label byte + 3072 pixel bytes
//   cifar100       binary records: coarse + fine label bytes + 3072 pixels
struct DataConfig {
  std::string kind = "synthetic";
  std::vector<std::string> paths;  // record files (cifar kinds)
  std::string taxonomy;            // optional label-tree TSV to attach
  int image_size = 16;             // synthetic
  int classes = 4;                 // synthetic
  int samples = 512;               // synthetic
  double noise = 0.1;              // synthetic
  int coarse_groups = 0;           // synthetic two-level labels when > 0
  std::uint64_t seed = 1;          // synthesis seed
  int held_out = 0;                // validation samples split off the tail

  bool operator==(const DataConfig&) const = default;
};

struct ExperimentConfig {
  std::string name;  // identifies the experiment, e.g. in fixture lookups
  ArchConfig arch;
  TrainConfig train;
  DataConfig data;

  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Materializes the [data] section: loads or synthesizes the dataset and
// splits off `held_out` validation indices (deterministic in the data seed).
struct LoadedData {
  Dataset dataset;
  std::vector<int> train_idx;
  std::vector<int> val_idx;
};
LoadedData load_dataset(const DataConfig& cfg);

}  // namespace anynet
