#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pfvg/model.hpp"
#include "pfvg/synthetic.hpp"
#include "pfvg/tensor.hpp"

namespace pfvg {

/// Leading and trailing windows of a frame list: ceil(0.15 N) frames each.
struct WindowSplit {
  std::size_t window = 0;
  std::size_t n_frames = 0;
  std::size_t end_begin() const { return n_frames - window; }
};

/// Throws RangeError for fewer than 7 frames.
WindowSplit window_split(std::size_t n_frames);

enum class QualityMetric { Sharpness, SubjectConsistency, BackgroundConsistency };

std::string to_string(QualityMetric m);
QualityMetric parse_metric(const std::string& s);
inline constexpr QualityMetric kAllMetrics[] = {QualityMetric::Sharpness,
                                                QualityMetric::SubjectConsistency,
                                                QualityMetric::BackgroundConsistency};

/// Per-video facts the proxies need.
struct MetricContext {
  Tensor reference_frame;           // [H x W x C]; anchor for subject consistency
  double sharpness_scale = 1.0;     // corpus maximum of the raw sharpness statistic
  std::uint32_t object_radius = 2;  // half-size of the tracked patch
};

/// Raw (unnormalized) sharpness of one frame: variance of the forward
/// difference gradient magnitude.
double raw_sharpness(const Tensor& frame);
/// Largest raw_sharpness over every frame of a corpus (at least 1e-12).
double corpus_sharpness_scale(const std::vector<ClipSequence>& corpus);

/// Value in [0, 1] of a metric over a window of [H x W x C] frames.
double metric_value(QualityMetric metric, const std::vector<Tensor>& frames,
                    const MetricContext& ctx);

/// |M(first window) - M(last window)|.
double drift(QualityMetric metric, const std::vector<Tensor>& frames, const MetricContext& ctx);

/// Produces the next segment given the current conditioning.
class SegmentSampler {
 public:
  virtual ~SegmentSampler() = default;
  virtual Tensor sample(const ConditioningBundle& cond, std::size_t segment_index,
                        std::uint64_t seed) const = 0;
};

/// Euler sampling of a trained model.
class ModelSampler : public SegmentSampler {
 public:
  ModelSampler(const FlowTransformer& model, std::size_t steps) : model_(&model), steps_(steps) {}
  Tensor sample(const ConditioningBundle& cond, std::size_t segment_index,
                std::uint64_t seed) const override;

 private:
  const FlowTransformer* model_;
  std::size_t steps_;
};

/// Seed of segment `segment_index` within a rollout seeded with `seed`.
std::uint64_t segment_seed(std::uint64_t seed, std::size_t segment_index);

/// Autoregressive generation: each segment is sampled from the context of
/// the segments generated before it. Returns the segments in order.
std::vector<Tensor> rollout(const FlowTransformer& model, const SegmentSampler& sampler,
                            std::span<const std::size_t> prompt_ids, const Tensor& reference_image,
                            std::size_t n_segments, std::uint64_t seed);

struct DriftRow {
  std::uint64_t video_id = 0;
  std::uint64_t seed = 0;
  std::string mode;
  std::size_t n_segments = 0;
  QualityMetric metric = QualityMetric::Sharpness;
  double value = 0.0;  // metric over the whole rollout
  double drift = 0.0;
  bool flagged = false;  // rollout produced non-finite frames
};

struct DriftReport {
  std::vector<DriftRow> rows;  // video-major, then seed, then metric
  std::size_t flagged_rollouts = 0;
};

struct RolloutOptions {
  std::string mode_label;
  std::size_t n_segments = 16;
  std::vector<std::uint64_t> seeds{0};
  double sharpness_scale = 1.0;
};

/// Rolls out every (video, seed) pair and scores drift on each metric.
/// Independent rollouts run through parallel_for. Rollouts with NaN frames
/// produce flagged rows (value and drift NaN) and are counted.
DriftReport rollout_eval(const FlowTransformer& model, const SegmentSampler& sampler,
                         const std::vector<ClipSequence>& corpus, const RolloutOptions& opts);

/// video_id,seed,mode,n_segments,metric,value,drift
std::string drift_csv_header();
std::string drift_csv_row(const DriftRow& row);
void write_drift_csv(const std::filesystem::path& path, const std::vector<DriftRow>& rows);

} // namespace pfvg
