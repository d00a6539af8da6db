#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ctcloud/layers.hpp"
#include "ctcloud/tensor.hpp"

namespace ctcloud {

inline constexpr const char* kCheckpointMagic = "CTCLOUD-CKPT-1";

/// Text checkpoint: a magic header line, `meta <key> <value>` lines, and
/// `tensor <name> <rank> <dims...>` lines each followed by one line of
/// row-major values printed with 17 significant digits.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameters and buffers of `params` into `ckpt` under their names.
void store_parameters(const ParameterSet& params, Checkpoint& ckpt);
/// Overwrites parameter and buffer values in place. Every entry of `params`
/// must be present with a matching shape.
void restore_parameters(ParameterSet& params, const Checkpoint& ckpt);

}  // namespace ctcloud
