#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "adrlab/nn.hpp"

namespace adrlab::nn {

/// Flat key -> tensor dump. Text format, one entry per line:
///
///     adrlab-checkpoint 1
///     <key> <rank> <dim>... <value>...
///
/// Values are written as C99 hex floats, so a load reproduces every bit.
using Checkpoint = std::map<std::string, Tensor>;

/// Adds `net`'s parameters and batchnorm state under `prefix`
/// (`<prefix>.param.<name>`, `<prefix>.bn.<layer>.{running_mean,running_var,momentum,eps}`).
void add_to_checkpoint(Checkpoint& ckpt, const std::string& prefix, const Mlp& net);
/// Restores parameters and batchnorm state for a network of the given spec.
Mlp mlp_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix, const MlpSpec& spec);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace adrlab::nn
