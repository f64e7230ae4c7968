#pragma once

#include <cstdint>
#include <string>

#include "changeseg/config.hpp"
#include "changeseg/nn.hpp"

namespace changeseg {

constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-file binary container: config snapshot, iteration counter, named
/// parameter tensors (raw doubles), and optionally the optimizer moments.
/// Round-trips parameters bit-exactly.
void save_checkpoint(const std::string& path, const NamedParams& params, const AdamW* opt,
                     std::int64_t iteration, const FullConfig& cfg);

struct CheckpointMeta {
  std::int64_t iteration = 0;
  FullConfig config;
  bool has_optimizer = false;
};

/// Loads values into `params` in place (names and shapes must match the
/// stored layout exactly) and into `opt` when both sides carry state.
CheckpointMeta load_checkpoint(const std::string& path, const NamedParams& params, AdamW* opt);

/// Reads only the header (version, iteration, config, optimizer presence).
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace changeseg
