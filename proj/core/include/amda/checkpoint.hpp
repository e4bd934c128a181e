#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amda/configfile.hpp"
#include "amda/tensor.hpp"

namespace amda {

/// Contents of one checkpoint file: the run configuration echo, training
/// progress, and every named tensor (parameters and optimizer moments).
/// Values are stored at 32-bit precision; a save -> load -> save cycle is
/// byte-identical.
struct CheckpointData {
  ConfigFile config;
  std::uint64_t epoch = 0;
  std::uint64_t opt_step = 0;
  std::uint64_t rng_seed = 0;
  std::vector<std::pair<std::string, Tensor>> blobs;

  const Tensor& blob(const std::string& name) const;
  bool has_blob(const std::string& name) const;
};

/// File layout: magic "AMCK", little-endian u32 version, then named blobs.
/// Each blob is a u32 name length, the name bytes, and a record in the
/// corpus blob format (16-byte header + little-endian f32 payload). The
/// progress counters and the config text ride along as reserved blobs
/// ("__state", "__config") whose payloads are bytes widened to f32.
void save_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

} // namespace amda
