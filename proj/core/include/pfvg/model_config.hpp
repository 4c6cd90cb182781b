#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace pfvg {

/// Wiring of the Squeeze cross-attention that folds a segment into memory.
///   A: query = memorized segment, key/value = memory
///   B: query = memory, key/value = memorized segment
///   C: like B, query enriched with the segment's first-window tokens
enum class SqueezeVariant { A, B, C };

SqueezeVariant parse_variant(const std::string& s);
std::string to_string(SqueezeVariant v);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t patch_size = 4;
  std::size_t frames_per_segment = 4;
  std::size_t frame_height = 16;
  std::size_t frame_width = 16;
  std::size_t channels = 1;
  std::size_t prompt_vocab = 32;
  std::size_t prompt_len = 8;
  std::size_t memory_tokens = 16;
  std::size_t memorize_window = 16;
  std::size_t mlp_ratio = 4;
  SqueezeVariant variant = SqueezeVariant::A;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t grid_h() const { return frame_height / patch_size; }
  std::size_t grid_w() const { return frame_width / patch_size; }
  std::size_t tokens_per_frame() const { return grid_h() * grid_w(); }
  std::size_t tokens_per_segment() const { return frames_per_segment * tokens_per_frame(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  /// Reads the keys of `to_map()`; unknown keys are ignored here (the run
  /// config layer rejects them).
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

} // namespace pfvg
