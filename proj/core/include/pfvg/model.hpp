#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pfvg/flow.hpp"
#include "pfvg/layers.hpp"
#include "pfvg/memorypack.hpp"
#include "pfvg/model_config.hpp"
#include "pfvg/tensor.hpp"

namespace pfvg {

/// Everything a segment prediction conditions on besides x_t and t.
struct ConditioningBundle {
  TokenSequence short_ctx;  // FramePack output; empty for the first segment
  MemoryState memory;
  Tensor prompt_emb;        // [prompt_len x d]
  Tensor image_emb;         // [tokens_per_frame x d], global frame index 0
  std::int64_t segment_start = 0;  // global index of the target's first frame
  std::int64_t image_position = 0; // the reference image anchors the video at 0
};

/// Streaming MemoryPack context over the segments generated (or supplied as
/// conditioning) so far.
struct ContextStream {
  std::vector<TokenSequence> recent;  // oldest -> newest, at most schedule depth
  MemoryState memory;
  Tensor prompt_emb;
  Tensor image_emb;
  std::size_t segments = 0;

  /// Cuts gradient history so later losses do not backpropagate into it.
  void detach();
};

/// Desk-scale MM-DiT velocity model over patchified segments.
class FlowTransformer {
 public:
  FlowTransformer(const ModelConfig& cfg, std::uint64_t seed);

  FlowTransformer(const FlowTransformer&) = delete;
  FlowTransformer& operator=(const FlowTransformer&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const SemanticPack& semantic_pack() const { return *pack_; }
  const FramePackSchedule& framepack_schedule() const { return schedule_; }

  /// Segment [F x H x W x C] -> F*(H/p)*(W/p) tokens, frame-major then
  /// row-major patches; token positions are `start_frame + frame`.
  TokenSequence patchify(const Tensor& segment, std::int64_t start_frame) const;
  /// Raw patch vectors [L x p*p*C] of a segment, before projection.
  Tensor extract_patches(const Tensor& segment) const;
  /// Inverse of extract_patches: [L x p*p*C] -> [F x H x W x C].
  Tensor unpatchify(const Tensor& patches) const;

  Tensor embed_prompt(std::span<const std::size_t> ids) const;
  /// Reference image [H x W x C] as one frame of tokens at index 0.
  Tensor embed_image(const Tensor& image) const;
  Tensor timestep_embedding(double t) const;

  /// One DiT block: RoPE self-attention of x over [image | short_ctx | x],
  /// cross-attention from x to [memory | prompt | image], then an MLP. Norms
  /// are modulated by the timestep embedding.
  TokenSequence attention_block(std::size_t layer, const TokenSequence& x,
                                const ConditioningBundle& cond, const Tensor& temb) const;

  /// v_theta(x_t, t | cond) with the shape of x_t.
  Tensor predict_velocity(const Tensor& x_t, double t, const ConditioningBundle& cond) const;

  VelocityField field(const ConditioningBundle& cond) const;

  ContextStream open_stream(std::span<const std::size_t> prompt_ids,
                            const Tensor& reference_image) const;
  /// Appends a segment to short-term history and folds it into memory.
  void absorb(ContextStream& stream, const Tensor& segment) const;
  ConditioningBundle conditioning(const ContextStream& stream) const;

  /// Names of the parameters trained in the head-only stage.
  static bool is_head_parameter(const std::string& name);

  Shape segment_shape() const;

 private:
  struct Block {
    Linear modulation;  // temb -> shift/scale for the three norms
    Linear self_q, self_k, self_v, self_o;
    Linear cross_q, cross_k, cross_v, cross_o;
    Linear mlp_in, mlp_out;
  };

  Tensor modulate(const Tensor& x, const Tensor& mod, std::size_t slot) const;

  ModelConfig cfg_;
  ParameterStore store_;
  FramePackSchedule schedule_;
  Linear patch_embed_;
  Tensor spatial_embed_;
  Tensor prompt_table_;
  Linear time_in_, time_out_;
  std::vector<Block> blocks_;
  NormParams final_norm_;
  Linear head_;
  std::optional<SemanticPack> pack_;
};

/// Throws ShapeError unless `segment` is [F x H x W x C] for `cfg`.
void validate_segment(const ModelConfig& cfg, const Tensor& segment);

} // namespace pfvg
