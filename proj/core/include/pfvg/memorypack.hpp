#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "pfvg/layers.hpp"
#include "pfvg/model_config.hpp"
#include "pfvg/tensor.hpp"

namespace pfvg {

/// Visual tokens with their global frame indices (one per row).
struct TokenSequence {
  Tensor tokens;
  std::vector<std::int64_t> positions;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
};

/// Long-term memory: a fixed K x d_model token block plus the number of
/// segments folded into it.
struct MemoryState {
  Tensor psi;
  std::size_t n_segments_absorbed = 0;
};

/// Recency-ranked pooling factors for short-term context. factors[r] applies
/// to the segment r steps back from the newest; segments beyond the schedule
/// are dropped from short-term context.
struct FramePackSchedule {
  std::vector<std::size_t> factors{1, 4, 16};
  std::size_t token_budget = 84;

  std::size_t depth() const { return factors.size(); }
  /// Tokens produced for `depth()` full segments of the given grid.
  std::size_t compressed_tokens(std::size_t frames, std::size_t grid_h, std::size_t grid_w) const;
  /// Throws ConfigError unless factors are non-decreasing powers of 4 that
  /// tile the grid and the compressed total fits the budget.
  void validate(std::size_t frames, std::size_t grid_h, std::size_t grid_w) const;
};

/// Compresses recent history (oldest -> newest) into a constant-size token
/// sequence. Pooling is spatial within each frame; each pooled token takes
/// the mean frame index of its sources.
TokenSequence framepack_compress(const std::vector<TokenSequence>& history,
                                 const FramePackSchedule& schedule, std::size_t frames,
                                 std::size_t grid_h, std::size_t grid_w);

/// Learned parts of the long-term memory: Memorize (windowed self-attention
/// and pooling to K tokens), Squeeze (cross-attention fold into psi) and the
/// psi_0 projection of prompt + image features.
class SemanticPack {
 public:
  SemanticPack(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

  /// [L x d] -> [K x d]. Attention never crosses window boundaries.
  Tensor memorize(const TokenSequence& segment_tokens) const;
  Tensor memorize(const TokenSequence& segment_tokens, std::size_t window_size) const;

  /// psi_0 from prompt [P x d] and image [I x d] embeddings.
  MemoryState init_memory(const Tensor& prompt_emb, const Tensor& image_emb) const;

  MemoryState squeeze(const MemoryState& state, const Tensor& mem_tokens,
                      SqueezeVariant variant) const;
  MemoryState squeeze(const MemoryState& state, const Tensor& mem_tokens) const {
    return squeeze(state, mem_tokens, cfg_.variant);
  }

  /// squeeze(state, memorize(new_segment)); cost independent of history.
  MemoryState update_memory(const MemoryState& state, const TokenSequence& new_segment) const;

  const ModelConfig& config() const { return cfg_; }

  // Exposed for tests that zero or inspect individual weights.
  struct AttentionWeights {
    Linear q, k, v, o;
  };
  const AttentionWeights& memorize_attention() const { return mem_attn_; }
  const AttentionWeights& squeeze_attention() const { return sq_attn_; }

 private:
  ModelConfig cfg_;
  AttentionWeights mem_attn_;
  Linear mem_proj_;
  AttentionWeights sq_attn_;
  Tensor sq_query_mix_;  // [K x (K + first-window tokens)], variant C only
  Tensor init_mix_;      // [K x (prompt_len + tokens_per_frame)]
  Tensor init_bias_;     // [K x d]
};

/// Benchmark baseline: one attention layer over the full token history, the
/// quadratic alternative to the fixed-size memory.
Tensor full_history_attention(const Tensor& history_tokens, const Tensor& wq, const Tensor& wk,
                              const Tensor& wv, std::size_t n_heads);

} // namespace pfvg
