#pragma once

#include <filesystem>
#include <vector>

#include "pfvg/synthetic.hpp"
#include "pfvg/tensor.hpp"

namespace pfvg {

/// Per-video binary file: "PFVV", u32 version, u64 video id, u32 clip count,
/// u32 F/H/W/C, the scene spec fields, the prompt ids, then the reference
/// image and all clips as row-major little-endian float32.
constexpr std::uint32_t kVideoFormatVersion = 1;

void write_video(const std::filesystem::path& path, const ClipSequence& video);
ClipSequence read_video(const std::filesystem::path& path);

/// One file per video, named video_<id>.pfv.
void write_corpus(const std::filesystem::path& dir, const std::vector<ClipSequence>& corpus);
/// Reads every *.pfv in `dir`, ordered by video id.
std::vector<ClipSequence> read_corpus(const std::filesystem::path& dir);

/// Frames [H x W x 1] side by side as a binary PGM, [-1, 1] -> [0, 255].
void write_pgm_strip(const std::filesystem::path& path, const std::vector<Tensor>& frames);

} // namespace pfvg
