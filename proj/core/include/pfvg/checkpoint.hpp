#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pfvg/model.hpp"
#include "pfvg/optimizer.hpp"

namespace pfvg {

constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to restore a model and continue training exactly.
///
/// Layout (little-endian): "PFVG", u32 version, stage tag, config key/value
/// block, tensor table (name, u32 rank, u64 dims, f64 data), optimizer step
/// and moments, rng state text, progress key/value block.
struct Checkpoint {
  std::string stage_tag;
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, Moments> moments;
  std::string rng_state;
  std::map<std::string, std::string> progress;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
/// Throws VersionError on bad magic or an unknown version, FormatError on
/// truncated or inconsistent content.
Checkpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of the model (and optionally optimizer and rng). The config
/// block holds the model configuration.
Checkpoint capture_checkpoint(const FlowTransformer& model, const std::string& stage_tag,
                              const AdamW* optimizer = nullptr,
                              const std::mt19937_64* rng = nullptr,
                              std::map<std::string, std::string> progress = {});

/// Model built from the config block with all parameter values restored.
std::unique_ptr<FlowTransformer> model_from_checkpoint(const Checkpoint& ckpt);

/// Copies values of every tensor in the table into `model` (names and shapes
/// must match one to one).
void restore_parameters(FlowTransformer& model, const Checkpoint& ckpt);

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& state);

} // namespace pfvg
