#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pfvg/tensor.hpp"

namespace pfvg {

enum class ShapeKind : std::uint32_t { Square = 0, Cross = 1, Disc = 2 };

/// Frame geometry shared by every clip of a corpus.
struct FrameGeometry {
  std::size_t frames_per_clip = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
};

/// One moving object over a flat background. Intensities are in [0, 1] and
/// rendered to [-1, 1]. The object centre moves by an integer velocity per
/// frame with reflection at the borders; during [occluder_start,
/// occluder_end) the object is hidden.
struct SceneSpec {
  ShapeKind shape = ShapeKind::Square;
  double object_intensity = 0.9;
  double background_intensity = 0.1;
  std::int32_t velocity_x = 1;
  std::int32_t velocity_y = 0;
  std::int64_t start_x = 8;
  std::int64_t start_y = 8;
  std::int64_t occluder_start = -1;  // -1: no occluder
  std::int64_t occluder_end = -1;
  std::uint32_t radius = 2;
  std::size_t n_clips = 1;
  std::uint64_t seed = 0;

  bool has_occluder() const { return occluder_start >= 0; }
  /// Throws ConfigError on the first violated invariant.
  void validate(const FrameGeometry& geom) const;
};

/// One training video: consecutive clips of one continuous trajectory.
struct ClipSequence {
  std::vector<Tensor> clips;  // each [F x H x W x C], values in [-1, 1]
  std::vector<std::size_t> prompt_ids;
  Tensor reference_image;     // [H x W x C], equal to frame 0
  std::uint64_t video_id = 0;
  SceneSpec spec;

  std::size_t n_clips() const { return clips.size(); }
};

constexpr std::size_t kPromptLength = 8;
constexpr std::size_t kPromptVocab = 32;

/// Fixed lookup of scene attributes to prompt token ids.
std::vector<std::size_t> prompt_ids_for(const SceneSpec& spec, std::size_t frames_per_clip = 4);

/// Object centre at absolute frame index `frame`.
std::pair<std::int64_t, std::int64_t> object_center(const SceneSpec& spec,
                                                    const FrameGeometry& geom,
                                                    std::int64_t frame);
/// Pixel mask of the object footprint centred at (cx, cy), ignoring
/// occlusion. Row-major [H x W].
std::vector<bool> object_mask(const SceneSpec& spec, const FrameGeometry& geom, std::int64_t cx,
                              std::int64_t cy);

/// Renders absolute frames [first, first + count) as [count x H x W x C].
Tensor render_frames(const SceneSpec& spec, const FrameGeometry& geom, std::int64_t first,
                     std::size_t count);

ClipSequence render_video(const SceneSpec& spec, const FrameGeometry& geom,
                          std::uint64_t video_id = 0);

/// A random valid scene for the given clip count, a pure function of `seed`.
SceneSpec random_scene(std::uint64_t seed, std::size_t n_clips, const FrameGeometry& geom);

/// Clip count -> number of videos.
using ClipHistogram = std::map<std::size_t, std::size_t>;

ClipHistogram parse_histogram(const std::string& text);
std::string format_histogram(const ClipHistogram& h);

/// Corpus of `n_videos` seeded scenes. When the histogram totals `n_videos`
/// its counts are used exactly; otherwise they are treated as proportions.
std::vector<ClipSequence> make_corpus(std::size_t n_videos, const ClipHistogram& histogram,
                                      std::uint64_t seed, const FrameGeometry& geom = {});

/// Frames of a clip as separate [H x W x C] tensors.
std::vector<Tensor> split_frames(const Tensor& clip);
/// All frames of a list of clips, in order.
std::vector<Tensor> concat_frames(const std::vector<Tensor>& clips);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

} // namespace pfvg
