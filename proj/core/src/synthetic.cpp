#include "pfvg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "pfvg/errors.hpp"
#include "pfvg/parallel.hpp"

namespace pfvg {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::int64_t reflect(std::int64_t start, std::int64_t velocity, std::int64_t frame,
                     std::int64_t lo, std::int64_t hi) {
  const std::int64_t span = hi - lo;
  if (span <= 0) {
    return lo;
  }
  const std::int64_t period = 2 * span;
  std::int64_t u = (start - lo + velocity * frame) % period;
  if (u < 0) {
    u += period;
  }
  return lo + (u <= span ? u : period - u);
}

std::size_t bucket4(double v) {
  return static_cast<std::size_t>(std::min(3.0, std::floor(v * 4.0)));
}

// Rendered pixel values are float-representable so corpus files round-trip.
double render_value(double intensity) {
  return static_cast<double>(static_cast<float>(2.0 * intensity - 1.0));
}

} // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ b);
}

void SceneSpec::validate(const FrameGeometry& geom) const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("scene spec: " + key + " " + why, key);
  };
  if (!(object_intensity >= 0.0 && object_intensity <= 1.0)) {
    fail("object_intensity", "must lie in [0, 1]");
  }
  if (!(background_intensity >= 0.0 && background_intensity <= 1.0)) {
    fail("background_intensity", "must lie in [0, 1]");
  }
  if (static_cast<std::uint32_t>(shape) > 2) {
    fail("shape", "must be square, cross or disc");
  }
  if (std::abs(velocity_x) > 2 || std::abs(velocity_y) > 2) {
    fail("velocity", "components must lie in [-2, 2]");
  }
  const auto r = static_cast<std::int64_t>(radius);
  const auto w = static_cast<std::int64_t>(geom.width);
  const auto h = static_cast<std::int64_t>(geom.height);
  if (2 * r + 1 > w || 2 * r + 1 > h) {
    fail("radius", "object does not fit in the frame");
  }
  if (start_x < r || start_x > w - 1 - r || start_y < r || start_y > h - 1 - r) {
    fail("start", "object must start fully inside the frame");
  }
  if (n_clips == 0) {
    fail("n_clips", "must be >= 1");
  }
  const auto total = static_cast<std::int64_t>(n_clips * geom.frames_per_clip);
  if (has_occluder()) {
    if (occluder_end <= occluder_start || occluder_end > total) {
      fail("occluder", "interval must be non-empty and within the video");
    }
  } else if (occluder_end != -1) {
    fail("occluder", "end set without a start");
  }
}

std::vector<std::size_t> prompt_ids_for(const SceneSpec& spec, std::size_t frames_per_clip) {
  const std::size_t total_frames_hint = std::max<std::size_t>(1, spec.n_clips * frames_per_clip);
  std::size_t occ_bucket = 0;
  if (spec.has_occluder()) {
    occ_bucket = bucket4(static_cast<double>(spec.occluder_start) /
                         static_cast<double>(total_frames_hint));
  }
  std::size_t len_bucket = 0;
  for (std::size_t n = spec.n_clips; n > 1 && len_bucket < 4; n /= 2) {
    ++len_bucket;
  }
  return {
      static_cast<std::size_t>(spec.shape),
      3 + bucket4(spec.object_intensity),
      7 + bucket4(spec.background_intensity),
      static_cast<std::size_t>(11 + spec.velocity_x + 2),
      static_cast<std::size_t>(16 + spec.velocity_y + 2),
      21 + (spec.has_occluder() ? 1u : 0u),
      23 + occ_bucket,
      27 + len_bucket,
  };
}

std::pair<std::int64_t, std::int64_t> object_center(const SceneSpec& spec,
                                                    const FrameGeometry& geom,
                                                    std::int64_t frame) {
  const auto r = static_cast<std::int64_t>(spec.radius);
  const auto w = static_cast<std::int64_t>(geom.width);
  const auto h = static_cast<std::int64_t>(geom.height);
  return {reflect(spec.start_x, spec.velocity_x, frame, r, w - 1 - r),
          reflect(spec.start_y, spec.velocity_y, frame, r, h - 1 - r)};
}

std::vector<bool> object_mask(const SceneSpec& spec, const FrameGeometry& geom, std::int64_t cx,
                              std::int64_t cy) {
  const auto r = static_cast<std::int64_t>(spec.radius);
  std::vector<bool> mask(geom.height * geom.width, false);
  for (std::int64_t y = 0; y < static_cast<std::int64_t>(geom.height); ++y) {
    for (std::int64_t x = 0; x < static_cast<std::int64_t>(geom.width); ++x) {
      const auto dx = x - cx, dy = y - cy;
      if (std::abs(dx) > r || std::abs(dy) > r) {
        continue;
      }
      bool inside = false;
      switch (spec.shape) {
        case ShapeKind::Square:
          inside = true;
          break;
        case ShapeKind::Cross:
          inside = dx == 0 || dy == 0;
          break;
        case ShapeKind::Disc:
          inside = dx * dx + dy * dy <= r * r + 1;
          break;
      }
      mask[static_cast<std::size_t>(y) * geom.width + static_cast<std::size_t>(x)] = inside;
    }
  }
  return mask;
}

Tensor render_frames(const SceneSpec& spec, const FrameGeometry& geom, std::int64_t first,
                     std::size_t count) {
  const std::size_t plane = geom.height * geom.width;
  const double bg = render_value(spec.background_intensity);
  const double fg = render_value(spec.object_intensity);
  std::vector<double> data(count * plane * geom.channels, bg);
  for (std::size_t i = 0; i < count; ++i) {
    const std::int64_t frame = first + static_cast<std::int64_t>(i);
    if (spec.has_occluder() && frame >= spec.occluder_start && frame < spec.occluder_end) {
      continue;
    }
    const auto [cx, cy] = object_center(spec, geom, frame);
    const auto mask = object_mask(spec, geom, cx, cy);
    for (std::size_t p = 0; p < plane; ++p) {
      if (mask[p]) {
        for (std::size_t c = 0; c < geom.channels; ++c) {
          data[(i * plane + p) * geom.channels + c] = fg;
        }
      }
    }
  }
  return Tensor({count, geom.height, geom.width, geom.channels}, std::move(data));
}

ClipSequence render_video(const SceneSpec& spec, const FrameGeometry& geom,
                          std::uint64_t video_id) {
  spec.validate(geom);
  ClipSequence video;
  video.video_id = video_id;
  video.spec = spec;
  video.prompt_ids = prompt_ids_for(spec, geom.frames_per_clip);
  for (std::size_t c = 0; c < spec.n_clips; ++c) {
    video.clips.push_back(render_frames(
        spec, geom, static_cast<std::int64_t>(c * geom.frames_per_clip), geom.frames_per_clip));
  }
  Tensor first = render_frames(spec, geom, 0, 1);
  video.reference_image =
      Tensor({geom.height, geom.width, geom.channels},
             std::vector<double>(first.data().begin(), first.data().end()));
  return video;
}

SceneSpec random_scene(std::uint64_t seed, std::size_t n_clips, const FrameGeometry& geom) {
  std::mt19937_64 rng(seed);
  auto uniform_int = [&](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  auto uniform = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  SceneSpec s;
  s.seed = seed;
  s.n_clips = n_clips;
  s.shape = static_cast<ShapeKind>(uniform_int(0, 2));
  const double bright = uniform(0.7, 1.0);
  const double dark = uniform(0.0, 0.3);
  if (uniform_int(0, 1) == 0) {
    s.object_intensity = bright;
    s.background_intensity = dark;
  } else {
    s.object_intensity = dark;
    s.background_intensity = bright;
  }
  s.velocity_x = static_cast<std::int32_t>(uniform_int(-2, 2));
  s.velocity_y = static_cast<std::int32_t>(uniform_int(-2, 2));
  const auto r = static_cast<std::int64_t>(s.radius);
  s.start_x = uniform_int(r, static_cast<std::int64_t>(geom.width) - 1 - r);
  s.start_y = uniform_int(r, static_cast<std::int64_t>(geom.height) - 1 - r);
  const auto total = static_cast<std::int64_t>(n_clips * geom.frames_per_clip);
  const bool occlude = uniform(0.0, 1.0) < 0.35;
  if (occlude && total >= 8) {
    const auto len = uniform_int(2, std::min<std::int64_t>(8, total / 2));
    s.occluder_start = uniform_int(1, total - len);
    s.occluder_end = s.occluder_start + len;
  }
  return s;
}

ClipHistogram parse_histogram(const std::string& text) {
  ClipHistogram h;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("histogram entry '" + item + "' is not clips:count", "corpus_histogram");
    }
    try {
      const auto clips = std::stoull(item.substr(0, colon));
      const auto count = std::stoull(item.substr(colon + 1));
      if (clips == 0) {
        throw ConfigError("histogram clip count must be >= 1", "corpus_histogram");
      }
      h[clips] += count;
    } catch (const std::invalid_argument&) {
      throw ConfigError("histogram entry '" + item + "' is not numeric", "corpus_histogram");
    }
  }
  if (h.empty()) {
    throw ConfigError("histogram is empty", "corpus_histogram");
  }
  return h;
}

std::string format_histogram(const ClipHistogram& h) {
  std::string out;
  for (const auto& [clips, count] : h) {
    out += (out.empty() ? "" : ",") + std::to_string(clips) + ":" + std::to_string(count);
  }
  return out;
}

std::vector<ClipSequence> make_corpus(std::size_t n_videos, const ClipHistogram& histogram,
                                      std::uint64_t seed, const FrameGeometry& geom) {
  if (n_videos == 0) {
    throw ConfigError("corpus needs at least one video", "corpus_videos");
  }
  std::size_t total = 0;
  for (const auto& [clips, count] : histogram) {
    total += count;
  }
  if (total == 0) {
    throw ConfigError("histogram has no videos", "corpus_histogram");
  }
  std::vector<std::size_t> lengths;
  if (total == n_videos) {
    for (const auto& [clips, count] : histogram) {
      lengths.insert(lengths.end(), count, clips);
    }
  } else {
    // Largest-remainder apportionment.
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (const auto& [clips, count] : histogram) {
      const double exact = static_cast<double>(n_videos) * static_cast<double>(count) /
                           static_cast<double>(total);
      const auto whole = static_cast<std::size_t>(std::floor(exact));
      lengths.insert(lengths.end(), whole, clips);
      assigned += whole;
      remainders.emplace_back(exact - static_cast<double>(whole), clips);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < n_videos; ++i, ++assigned) {
      lengths.push_back(remainders[i % remainders.size()].second);
    }
  }
  std::mt19937_64 rng(seed);
  std::shuffle(lengths.begin(), lengths.end(), rng);

  std::vector<ClipSequence> corpus(lengths.size());
  parallel_for(lengths.size(), [&](std::size_t i) {
    const auto video_seed = splitmix64(seed + i);
    corpus[i] = render_video(random_scene(video_seed, lengths[i], geom), geom, i);
  });
  return corpus;
}

std::vector<Tensor> split_frames(const Tensor& clip) {
  if (clip.rank() != 4) {
    throw ShapeError("split_frames: expected [F x H x W x C], got " + shape_string(clip.dims()));
  }
  const Shape frame{clip.dim(1), clip.dim(2), clip.dim(3)};
  const std::size_t n = shape_numel(frame);
  std::vector<Tensor> out;
  const auto& d = clip.data();
  for (std::size_t f = 0; f < clip.dim(0); ++f) {
    out.emplace_back(frame, std::vector<double>(d.begin() + f * n, d.begin() + (f + 1) * n));
  }
  return out;
}

std::vector<Tensor> concat_frames(const std::vector<Tensor>& clips) {
  std::vector<Tensor> out;
  for (const auto& c : clips) {
    auto f = split_frames(c);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

} // namespace pfvg
