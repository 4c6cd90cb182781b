#include "pfvg/drift.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "pfvg/errors.hpp"
#include "pfvg/flow.hpp"
#include "pfvg/parallel.hpp"

namespace pfvg {

namespace {

// Foreground threshold on |pixel - frame median|, in [-1, 1] pixel units.
constexpr double kForegroundThreshold = 0.25;

struct Gray {
  std::size_t h = 0, w = 0;
  std::vector<double> px;
  double at(std::size_t y, std::size_t x) const { return px[y * w + x]; }
};

Gray to_gray(const Tensor& frame) {
  if (frame.rank() != 3) {
    throw ShapeError("metric frames must be [H x W x C], got " + shape_string(frame.dims()));
  }
  Gray g;
  g.h = frame.dim(0);
  g.w = frame.dim(1);
  const std::size_t c = frame.dim(2);
  g.px.resize(g.h * g.w);
  const auto& d = frame.data();
  for (std::size_t i = 0; i < g.px.size(); ++i) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      s += d[i * c + ch];
    }
    g.px[i] = s / static_cast<double>(c);
  }
  return g;
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) {
    return hi;
  }
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

std::vector<bool> foreground(const Gray& g, double med) {
  std::vector<bool> fg(g.px.size());
  for (std::size_t i = 0; i < g.px.size(); ++i) {
    fg[i] = std::abs(g.px[i] - med) > kForegroundThreshold;
  }
  return fg;
}

// Patch of side 2r+3 around the foreground centroid, padded with the median;
// empty when the frame has no foreground.
std::vector<double> object_patch(const Gray& g, std::uint32_t radius) {
  const double med = median(g.px);
  const auto fg = foreground(g, med);
  double sx = 0.0, sy = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t x = 0; x < g.w; ++x) {
      if (fg[y * g.w + x]) {
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
        ++count;
      }
    }
  }
  if (count == 0) {
    return {};
  }
  const auto cx = static_cast<std::int64_t>(std::lround(sx / static_cast<double>(count)));
  const auto cy = static_cast<std::int64_t>(std::lround(sy / static_cast<double>(count)));
  const std::int64_t half = static_cast<std::int64_t>(radius) + 1;
  std::vector<double> patch;
  patch.reserve(static_cast<std::size_t>((2 * half + 1) * (2 * half + 1)));
  for (std::int64_t dy = -half; dy <= half; ++dy) {
    for (std::int64_t dx = -half; dx <= half; ++dx) {
      const std::int64_t y = cy + dy, x = cx + dx;
      const bool inside = y >= 0 && x >= 0 && y < static_cast<std::int64_t>(g.h) &&
                          x < static_cast<std::int64_t>(g.w);
      patch.push_back(inside ? g.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x))
                             : med);
    }
  }
  return patch;
}

// Normalized cross-correlation; constant patches correlate only with
// constant patches.
double ncc(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  constexpr double tiny = 1e-18;
  if (saa <= tiny && sbb <= tiny) {
    return 1.0;
  }
  if (saa <= tiny || sbb <= tiny) {
    return 0.0;
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double sharpness_value(const std::vector<Tensor>& frames, const MetricContext& ctx) {
  double s = 0.0;
  for (const auto& f : frames) {
    s += raw_sharpness(f);
  }
  const double mean = s / static_cast<double>(frames.size());
  return std::clamp(mean / ctx.sharpness_scale, 0.0, 1.0);
}

double subject_value(const std::vector<Tensor>& frames, const MetricContext& ctx) {
  if (!ctx.reference_frame.defined()) {
    throw ConfigError("subject consistency needs a reference frame");
  }
  const auto ref = object_patch(to_gray(ctx.reference_frame), ctx.object_radius);
  double s = 0.0;
  for (const auto& f : frames) {
    const auto patch = object_patch(to_gray(f), ctx.object_radius);
    if (patch.empty() || ref.empty()) {
      continue;  // nothing to track scores 0
    }
    s += std::max(0.0, ncc(patch, ref));
  }
  return s / static_cast<double>(frames.size());
}

double background_value(const std::vector<Tensor>& frames) {
  if (frames.size() < 2) {
    return 1.0;
  }
  double total = 0.0;
  std::size_t pairs = 0;
  Gray prev = to_gray(frames[0]);
  auto prev_fg = foreground(prev, median(prev.px));
  for (std::size_t k = 1; k < frames.size(); ++k) {
    Gray cur = to_gray(frames[k]);
    auto cur_fg = foreground(cur, median(cur.px));
    double diff = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < cur.px.size(); ++i) {
      if (!prev_fg[i] && !cur_fg[i]) {
        diff += std::abs(cur.px[i] - prev.px[i]);
        ++n;
      }
    }
    if (n > 0) {
      total += diff / static_cast<double>(n) / 2.0;
      ++pairs;
    }
    prev = std::move(cur);
    prev_fg = std::move(cur_fg);
  }
  if (pairs == 0) {
    return 1.0;
  }
  return std::clamp(1.0 - total / static_cast<double>(pairs), 0.0, 1.0);
}

double drift_with_window(QualityMetric metric, const std::vector<Tensor>& frames,
                         std::size_t window, const MetricContext& ctx) {
  std::vector<Tensor> head(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(window));
  std::vector<Tensor> tail(frames.end() - static_cast<std::ptrdiff_t>(window), frames.end());
  return std::abs(metric_value(metric, head, ctx) - metric_value(metric, tail, ctx));
}

} // namespace

WindowSplit window_split(std::size_t n_frames) {
  if (n_frames < 7) {
    throw RangeError("drift windows need at least 7 frames, got " + std::to_string(n_frames));
  }
  // ceil(0.15 N) in integer arithmetic
  return WindowSplit{(15 * n_frames + 99) / 100, n_frames};
}

std::string to_string(QualityMetric m) {
  switch (m) {
    case QualityMetric::Sharpness:
      return "sharpness";
    case QualityMetric::SubjectConsistency:
      return "subject_consistency";
    case QualityMetric::BackgroundConsistency:
      return "background_consistency";
  }
  return "?";
}

QualityMetric parse_metric(const std::string& s) {
  for (auto m : kAllMetrics) {
    if (to_string(m) == s) {
      return m;
    }
  }
  throw ConfigError("unknown metric '" + s + "'");
}

double raw_sharpness(const Tensor& frame) {
  const Gray g = to_gray(frame);
  if (g.h < 2 || g.w < 2) {
    return 0.0;
  }
  std::vector<double> mag;
  mag.reserve((g.h - 1) * (g.w - 1));
  for (std::size_t y = 0; y + 1 < g.h; ++y) {
    for (std::size_t x = 0; x + 1 < g.w; ++x) {
      const double gx = g.at(y, x + 1) - g.at(y, x);
      const double gy = g.at(y + 1, x) - g.at(y, x);
      mag.push_back(std::sqrt(gx * gx + gy * gy));
    }
  }
  double m = 0.0;
  for (double v : mag) {
    m += v;
  }
  m /= static_cast<double>(mag.size());
  double var = 0.0;
  for (double v : mag) {
    var += (v - m) * (v - m);
  }
  return var / static_cast<double>(mag.size());
}

double corpus_sharpness_scale(const std::vector<ClipSequence>& corpus) {
  double best = 1e-12;
  for (const auto& v : corpus) {
    for (const auto& f : concat_frames(v.clips)) {
      best = std::max(best, raw_sharpness(f));
    }
  }
  return best;
}

double metric_value(QualityMetric metric, const std::vector<Tensor>& frames,
                    const MetricContext& ctx) {
  if (frames.empty()) {
    throw RangeError("metric over an empty window");
  }
  switch (metric) {
    case QualityMetric::Sharpness:
      return sharpness_value(frames, ctx);
    case QualityMetric::SubjectConsistency:
      return subject_value(frames, ctx);
    case QualityMetric::BackgroundConsistency:
      return background_value(frames);
  }
  return 0.0;
}

double drift(QualityMetric metric, const std::vector<Tensor>& frames, const MetricContext& ctx) {
  return drift_with_window(metric, frames, window_split(frames.size()).window, ctx);
}

Tensor ModelSampler::sample(const ConditioningBundle& cond, std::size_t segment_index,
                            std::uint64_t seed) const {
  return euler_sample(model_->field(cond), model_->segment_shape(), steps_,
                      segment_seed(seed, segment_index));
}

std::uint64_t segment_seed(std::uint64_t seed, std::size_t segment_index) {
  return mix_seed(seed, static_cast<std::uint64_t>(segment_index));
}

std::vector<Tensor> rollout(const FlowTransformer& model, const SegmentSampler& sampler,
                            std::span<const std::size_t> prompt_ids, const Tensor& reference_image,
                            std::size_t n_segments, std::uint64_t seed) {
  NoGradGuard no_grad;
  ContextStream stream = model.open_stream(prompt_ids, reference_image);
  std::vector<Tensor> out;
  out.reserve(n_segments);
  for (std::size_t i = 0; i < n_segments; ++i) {
    Tensor seg = sampler.sample(model.conditioning(stream), i, seed);
    out.push_back(seg);
    if (i + 1 < n_segments) {
      model.absorb(stream, seg);
    }
  }
  return out;
}

DriftReport rollout_eval(const FlowTransformer& model, const SegmentSampler& sampler,
                         const std::vector<ClipSequence>& corpus, const RolloutOptions& opts) {
  if (opts.n_segments == 0) {
    throw RangeError("rollout_eval needs at least one segment");
  }
  const std::size_t n_metrics = std::size(kAllMetrics);
  const std::size_t jobs = corpus.size() * opts.seeds.size();
  std::vector<DriftRow> rows(jobs * n_metrics);
  std::vector<char> flagged(jobs, 0);
  parallel_for(jobs, [&](std::size_t job) {
    const auto& video = corpus[job / opts.seeds.size()];
    const std::uint64_t seed = opts.seeds[job % opts.seeds.size()];
    const auto frames = concat_frames(
        rollout(model, sampler, video.prompt_ids, video.reference_image, opts.n_segments, seed));
    bool finite = true;
    for (const auto& f : frames) {
      finite = finite && f.all_finite();
    }
    MetricContext ctx;
    ctx.reference_frame = video.reference_image;
    ctx.sharpness_scale = opts.sharpness_scale;
    ctx.object_radius = video.spec.radius;
    // Rollouts too short for 15% windows compare single frames.
    const std::size_t window = frames.size() >= 7 ? window_split(frames.size()).window : 1;
    for (std::size_t m = 0; m < n_metrics; ++m) {
      DriftRow& row = rows[job * n_metrics + m];
      row.video_id = video.video_id;
      row.seed = seed;
      row.mode = opts.mode_label;
      row.n_segments = opts.n_segments;
      row.metric = kAllMetrics[m];
      if (finite) {
        row.value = metric_value(kAllMetrics[m], frames, ctx);
        row.drift = drift_with_window(kAllMetrics[m], frames, window, ctx);
      } else {
        row.value = row.drift = std::numeric_limits<double>::quiet_NaN();
        row.flagged = true;
      }
    }
    flagged[job] = finite ? 0 : 1;
  });
  DriftReport report;
  report.rows = std::move(rows);
  for (char f : flagged) {
    report.flagged_rollouts += static_cast<std::size_t>(f);
  }
  return report;
}

std::string drift_csv_header() { return "video_id,seed,mode,n_segments,metric,value,drift"; }

std::string drift_csv_row(const DriftRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%llu,%s,%zu,%s,%.17g,%.17g",
                static_cast<unsigned long long>(r.video_id),
                static_cast<unsigned long long>(r.seed), r.mode.c_str(), r.n_segments,
                to_string(r.metric).c_str(), r.value, r.drift);
  return buf;
}

void write_drift_csv(const std::filesystem::path& path, const std::vector<DriftRow>& rows) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  os << drift_csv_header() << '\n';
  for (const auto& r : rows) {
    os << drift_csv_row(r) << '\n';
  }
}

} // namespace pfvg
