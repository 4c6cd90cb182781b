#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "pfvg/model_config.hpp"
#include "pfvg/synthetic.hpp"
#include "pfvg/trainer.hpp"

namespace pfvg {

/// Everything a command needs, read from a key=value file. Blank lines and
/// lines starting with '#' are ignored. Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;

  double learning_rate = 1e-5;
  std::size_t accumulation_window = 0;
  std::uint64_t stage1_steps = 2000;
  std::uint64_t stage2_steps = 1000;
  ForcingMode stage2_mode = ForcingMode::direct();
  bool curriculum = true;
  int stages = 2;
  std::uint64_t checkpoint_every = 0;
  std::string resume_from;
  bool log_wall_time = false;
  std::uint64_t seed = 0;

  std::string corpus_dir;  // empty: synthesize from the corpus_* keys
  std::size_t corpus_videos = 50;
  std::string corpus_histogram = "1:10,2:10,4:20,8:10";
  std::uint64_t corpus_seed = 0;

  std::size_t sampling_steps = 10;
  std::string output_dir = "out";

  /// Key -> value for every known key (the resolved config).
  std::map<std::string, std::string> to_map() const;
  /// Throws ConfigError(key) on unknown keys or unparsable values.
  static RunConfig from_map(const std::map<std::string, std::string>& kv);

  TwoStageConfig two_stage() const;
  FrameGeometry geometry() const;
};

std::map<std::string, std::string> parse_key_values(const std::string& text);
std::string format_key_values(const std::map<std::string, std::string>& kv);

/// Throws ConfigError with key "config" when the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

} // namespace pfvg
