#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pfvg/config.hpp"
#include "pfvg/synthetic.hpp"

namespace pfvg {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitVersion = 4,
};

/// Flags common to the subcommands; each command reads the ones it needs.
struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::uint64_t> seeds;
  std::optional<std::filesystem::path> out;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::string> variants;
  std::vector<std::string> modes;
  std::optional<std::size_t> segments;
  std::optional<std::string> prompt;     // scene description, see parse_scene_spec
  std::optional<std::uint64_t> video;    // corpus video to take prompt and image from
  std::vector<std::size_t> lengths;      // bench history lengths
  std::size_t repeats = 3;               // bench timing repeats (minimum is kept)
};

/// Config file (or defaults) with command-line overrides applied.
RunConfig resolve_config(const CommandOptions& opts);

/// Corpus from `corpus_dir` when set, otherwise synthesized.
std::vector<ClipSequence> load_or_make_corpus(const RunConfig& cfg);

/// "shape=disc,object=0.9,background=0.1,vx=1,vy=-1,x=8,y=8,occluder=4:10,radius=2".
/// Unspecified fields keep SceneSpec defaults.
SceneSpec parse_scene_spec(const std::string& text);

void cmd_train(const CommandOptions& opts, std::ostream& log);
void cmd_generate(const CommandOptions& opts, std::ostream& log);
void cmd_eval(const CommandOptions& opts, std::ostream& log);
void cmd_bench(const CommandOptions& opts, std::ostream& log);
void cmd_make_corpus(const CommandOptions& opts, std::ostream& log);

/// Runs a subcommand by name and maps failures to exit codes, printing a
/// one-line diagnostic to `err`.
int run_command(const std::string& name, const CommandOptions& opts, std::ostream& log,
                std::ostream& err);

struct BenchRow {
  std::size_t n_segments = 0;
  std::string variant;
  double seconds_per_update = 0.0;
  double total_seconds = 0.0;
  std::size_t state_tokens = 0;
  double baseline_seconds = 0.0;
};

/// Times `n` sequential update_memory calls for each length, and one
/// full-history attention pass over n segments of tokens.
std::vector<BenchRow> bench_memory(const ModelConfig& model, const std::vector<std::size_t>& lengths,
                                   std::size_t repeats, std::uint64_t seed);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);

} // namespace pfvg
