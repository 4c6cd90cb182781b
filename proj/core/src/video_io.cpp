#include "pfvg/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "pfvg/errors.hpp"

namespace pfvg {

namespace {

constexpr char kMagic[5] = "PFVV";

void put_floats(std::ostream& os, const Tensor& t) {
  for (double v : t.data()) {
    binary::put<float>(os, static_cast<float>(v));
  }
}

Tensor get_floats(std::istream& is, Shape dims) {
  std::vector<double> data(shape_numel(dims));
  for (auto& v : data) {
    v = static_cast<double>(binary::get<float>(is));
  }
  return Tensor(std::move(dims), std::move(data));
}

std::size_t checked_dim(std::uint32_t v, const char* what) {
  if (v == 0 || v > 4096) {
    throw FormatError(std::string("video file: implausible ") + what + " " + std::to_string(v));
  }
  return v;
}

} // namespace

void write_video(const std::filesystem::path& path, const ClipSequence& video) {
  if (video.clips.empty() && !video.reference_image.defined()) {
    throw ShapeError("write_video: nothing to write");
  }
  const Shape& frame = video.reference_image.dims();
  if (frame.size() != 3) {
    throw ShapeError("write_video: reference image must be [H x W x C]");
  }
  const std::size_t frames = video.clips.empty() ? 1 : video.clips[0].dim(0);
  for (const auto& c : video.clips) {
    if (c.dims() != Shape{frames, frame[0], frame[1], frame[2]}) {
      throw ShapeError("write_video: clip shape " + shape_string(c.dims()) +
                       " does not match reference image " + shape_string(frame));
    }
  }
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  binary::put_magic(os, kMagic);
  binary::put<std::uint32_t>(os, kVideoFormatVersion);
  binary::put<std::uint64_t>(os, video.video_id);
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(video.clips.size()));
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(frames));
  for (auto d : frame) {
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  const SceneSpec& s = video.spec;
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.shape));
  binary::put<double>(os, s.object_intensity);
  binary::put<double>(os, s.background_intensity);
  binary::put<std::int32_t>(os, s.velocity_x);
  binary::put<std::int32_t>(os, s.velocity_y);
  binary::put<std::int64_t>(os, s.start_x);
  binary::put<std::int64_t>(os, s.start_y);
  binary::put<std::int64_t>(os, s.occluder_start);
  binary::put<std::int64_t>(os, s.occluder_end);
  binary::put<std::uint32_t>(os, s.radius);
  binary::put<std::uint64_t>(os, s.n_clips);
  binary::put<std::uint64_t>(os, s.seed);
  binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(video.prompt_ids.size()));
  for (auto id : video.prompt_ids) {
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(id));
  }
  put_floats(os, video.reference_image);
  for (const auto& c : video.clips) {
    put_floats(os, c);
  }
  if (!os) {
    throw FormatError("write failed: " + path.string());
  }
}

ClipSequence read_video(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw FormatError("cannot open video " + path.string());
  }
  if (!binary::check_magic(is, kMagic)) {
    throw VersionError(path.string() + " is not a video file (bad magic)");
  }
  const auto version = binary::get<std::uint32_t>(is);
  if (version != kVideoFormatVersion) {
    throw VersionError("unsupported video format version " + std::to_string(version));
  }
  ClipSequence v;
  v.video_id = binary::get<std::uint64_t>(is);
  const auto n_clips = binary::get<std::uint32_t>(is);
  const std::size_t frames = checked_dim(binary::get<std::uint32_t>(is), "frame count");
  const std::size_t h = checked_dim(binary::get<std::uint32_t>(is), "height");
  const std::size_t w = checked_dim(binary::get<std::uint32_t>(is), "width");
  const std::size_t c = checked_dim(binary::get<std::uint32_t>(is), "channels");
  SceneSpec& s = v.spec;
  const auto shape = binary::get<std::uint32_t>(is);
  if (shape > 2) {
    throw FormatError("video file: unknown shape id " + std::to_string(shape));
  }
  s.shape = static_cast<ShapeKind>(shape);
  s.object_intensity = binary::get<double>(is);
  s.background_intensity = binary::get<double>(is);
  s.velocity_x = binary::get<std::int32_t>(is);
  s.velocity_y = binary::get<std::int32_t>(is);
  s.start_x = binary::get<std::int64_t>(is);
  s.start_y = binary::get<std::int64_t>(is);
  s.occluder_start = binary::get<std::int64_t>(is);
  s.occluder_end = binary::get<std::int64_t>(is);
  s.radius = binary::get<std::uint32_t>(is);
  s.n_clips = binary::get<std::uint64_t>(is);
  s.seed = binary::get<std::uint64_t>(is);
  const auto n_ids = binary::get<std::uint32_t>(is);
  if (n_ids > 4096) {
    throw FormatError("video file: implausible prompt length");
  }
  for (std::uint32_t i = 0; i < n_ids; ++i) {
    v.prompt_ids.push_back(binary::get<std::uint32_t>(is));
  }
  v.reference_image = get_floats(is, {h, w, c});
  for (std::uint32_t i = 0; i < n_clips; ++i) {
    v.clips.push_back(get_floats(is, {frames, h, w, c}));
  }
  return v;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<ClipSequence>& corpus) {
  std::filesystem::create_directories(dir);
  for (const auto& v : corpus) {
    write_video(dir / ("video_" + std::to_string(v.video_id) + ".pfv"), v);
  }
}

std::vector<ClipSequence> read_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("corpus directory " + dir.string() + " does not exist", "corpus_dir");
  }
  std::vector<ClipSequence> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pfv") {
      out.push_back(read_video(entry.path()));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const ClipSequence& a, const ClipSequence& b) { return a.video_id < b.video_id; });
  return out;
}

void write_pgm_strip(const std::filesystem::path& path, const std::vector<Tensor>& frames) {
  if (frames.empty()) {
    throw ShapeError("write_pgm_strip: no frames");
  }
  const std::size_t h = frames[0].dim(0), w = frames[0].dim(1), c = frames[0].dim(2);
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  const std::size_t total_w = w * frames.size();
  os << "P5\n" << total_w << ' ' << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (const auto& f : frames) {
      const auto& d = f.data();
      for (std::size_t x = 0; x < w; ++x) {
        double v = d[(y * w + x) * c];  // first channel
        if (!std::isfinite(v)) {
          v = -1.0;
        }
        const double scaled = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
      }
    }
  }
}

} // namespace pfvg
