// Checkpoint container: every named parameter and running statistic of a
// network, plus the experiment config text that built it, in one binary file.
//
// Layout (little-endian):
//   8 bytes   magic "ANYNETC1"
//   u64       config text length, then that many bytes
//   u64       entry count
//   per entry:
//     u64     name length, then that many bytes
//     u8      learnable flag
//     u32     rank, then rank * u32 dims
//     f64[n]  values (doubles regardless of the network's scalar type, so a
//             float network round-trips bit-exactly and a double network
//             loses nothing)
#pragma once

#include <string>

#include "anynet/arch.hpp"

namespace anynet {

template <typename S>
void save_checkpoint(AnytimeNetwork<S>& net, const std::string& config_text,
                     const std::string& path);

// The config text embedded at save time (no tensors are read).
std::string checkpoint_config_text(const std::string& path);

// Loads values into an already-built network. Entry names, order, flags and
// shapes must match the network exactly; a mismatch means the checkpoint was
// written for a different configuration.
template <typename S>
void load_checkpoint(AnytimeNetwork<S>& net, const std::string& path);

}  // namespace anynet
