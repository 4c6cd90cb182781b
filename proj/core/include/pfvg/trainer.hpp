#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pfvg/checkpoint.hpp"
#include "pfvg/model.hpp"
#include "pfvg/optimizer.hpp"
#include "pfvg/synthetic.hpp"

namespace pfvg {

/// How the previous clip is supplied as conditioning during training.
struct ForcingMode {
  enum class Kind { Teacher, Student, Direct };
  Kind kind = Kind::Teacher;
  std::size_t student_steps = 5;

  static ForcingMode teacher() { return {Kind::Teacher, 5}; }
  static ForcingMode student(std::size_t steps);
  static ForcingMode direct() { return {Kind::Direct, 5}; }

  bool operator==(const ForcingMode&) const = default;
};

/// "teacher", "direct" or "student:N" (bare "student" means N = 5).
ForcingMode parse_forcing_mode(const std::string& text);
std::string to_string(const ForcingMode& mode);

enum class TrainStage { Stage1Full, Stage2HeadOnly };

struct TrainConfig {
  double learning_rate = 1e-5;
  /// Clips per optimizer update; 0 means all clips of the video.
  std::size_t accumulation_window = 0;
  TrainStage stage = TrainStage::Stage1Full;
  bool curriculum = false;
  std::uint64_t seed = 0;
};

/// The conditioning segment a mode substitutes for ground-truth clip
/// `gt`, given the bundle that was used to generate that clip.
///
/// Direct: x_t from `gt` and `eps` at `t`, then the detached one-step jump.
Tensor direct_conditioning_segment(const FlowTransformer& model, const Tensor& gt,
                                   const ConditioningBundle& cond, double t, const Tensor& eps);
/// Student: Euler integration of the model from `x0` in `steps` steps.
Tensor student_conditioning_segment(const FlowTransformer& model, const ConditioningBundle& cond,
                                    std::size_t steps, const Tensor& x0);

/// Streams the conditioning of one video clip by clip under a forcing mode.
/// Graph recording follows the caller's grad mode, so memory and embedding
/// parameters receive gradients from later clip losses.
class Conditioner {
 public:
  Conditioner(const FlowTransformer& model, const ClipSequence& video, ForcingMode mode);

  /// Conditioning for clip `next_clip()`.
  ConditioningBundle current() const { return model_->conditioning(stream_); }
  std::size_t next_clip() const { return next_; }

  /// Folds the mode's stand-in for clip `next_clip()` into the context.
  /// Direct draws t then noise from `rng`; Student draws its start noise.
  void advance(std::mt19937_64& rng);

  void detach() { stream_.detach(); }

 private:
  const FlowTransformer* model_;
  const ClipSequence* video_;
  ForcingMode mode_;
  ContextStream stream_;
  std::size_t next_ = 0;
};

/// Conditioning for clip `clip_index`, replayed from the start of the video.
ConditioningBundle build_conditioning(const FlowTransformer& model, const ClipSequence& video,
                                      std::size_t clip_index, const ForcingMode& mode,
                                      std::mt19937_64& rng);

/// Timestep in [0, 1) then noise, in that order.
std::pair<double, Tensor> draw_flow_noise(std::mt19937_64& rng, const Shape& dims);

struct LossRecord {
  std::uint64_t step = 0;  // optimizer updates completed before this clip's update
  int stage = 1;
  std::string mode;
  std::uint64_t video_id = 0;
  std::size_t clip_index = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // accumulated gradient norm after this clip's backward
  double wall_ms = 0.0;
};

struct VideoReport {
  std::vector<double> clip_losses;
  std::size_t updates = 0;
  double mean_loss() const;
};

/// Position inside a stage, enough to resume at a video boundary.
struct StageProgress {
  int stage = 1;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;  // epoch index, or curriculum phase
  std::uint64_t cursor = 0;
  bool finished = false;
};

struct StageConfig {
  int stage = 1;
  ForcingMode mode;
  std::uint64_t steps = 0;
  bool head_only = false;
  bool curriculum = false;
};

/// Returning false stops training after the current video.
using LossObserver = std::function<bool(const LossRecord&)>;

/// Indices of `corpus` sorted by clip count, ties by video id.
std::vector<std::size_t> curriculum_order(const std::vector<ClipSequence>& corpus);

/// Phase p holds the curriculum-ordered videos with at most 2^p clips, up to
/// the longest video. Empty phases are omitted.
std::vector<std::vector<std::size_t>> curriculum_phases(const std::vector<ClipSequence>& corpus);

/// Clip-sequential trainer with gradient accumulation over clips.
class Trainer {
 public:
  Trainer(FlowTransformer& model, TrainConfig cfg);

  /// Trains on one video: per clip, draw (t, eps), FM loss, backward; apply
  /// once per accumulation window and at the end of the video. Stops after
  /// `max_updates` updates. Throws NumericError naming the clip on a
  /// non-finite loss.
  VideoReport train_video(const ClipSequence& video, const ForcingMode& mode,
                          std::uint64_t max_updates = std::numeric_limits<std::uint64_t>::max());

  /// Runs (or continues) a stage until `steps` updates; each finished video
  /// calls `on_video_end` (for periodic checkpoints).
  void run_stage(const std::vector<ClipSequence>& corpus, const StageConfig& stage,
                 const LossObserver& observer = {},
                 const std::function<void()>& on_video_end = {});

  /// Freezes everything but the final norm and output head, or unfreezes.
  void set_head_only(bool on);

  FlowTransformer& model() { return *model_; }
  AdamW& optimizer() { return opt_; }
  std::mt19937_64& rng() { return rng_; }
  StageProgress& progress() { return progress_; }
  const TrainConfig& config() const { return cfg_; }

  void set_log_wall_time(bool on) { log_wall_time_ = on; }
  /// Sink for per-clip records (in addition to a stage observer).
  void set_log_sink(std::function<void(const LossRecord&)> sink) { sink_ = std::move(sink); }

  std::map<std::string, std::string> progress_map() const;
  /// Restores optimizer, rng and progress from a checkpoint of this run.
  void resume(const Checkpoint& ckpt);

 private:
  FlowTransformer* model_;
  TrainConfig cfg_;
  AdamW opt_;
  std::mt19937_64 rng_;
  StageProgress progress_;
  bool log_wall_time_ = false;
  std::function<void(const LossRecord&)> sink_;
  LossObserver observer_;
  bool stop_requested_ = false;
};

struct TwoStageConfig {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 0;
  std::uint64_t stage1_steps = 2000;
  std::uint64_t stage2_steps = 1000;
  ForcingMode stage2_mode = ForcingMode::direct();
  /// 1: stage 1 only; 2: both stages.
  int stages = 2;
  std::uint64_t checkpoint_every = 0;  // updates between periodic checkpoints; 0 = off
  bool log_wall_time = false;
  std::filesystem::path output_dir;    // empty: nothing written
  std::optional<std::filesystem::path> resume_from;
};

struct TwoStageResult {
  std::optional<Checkpoint> stage1;
  std::optional<Checkpoint> stage2;
  std::vector<LossRecord> log;
};

/// Stage 1: teacher forcing, all parameters. Stage 2: `stage2_mode`, head
/// only, curriculum per `train.curriculum`. Writes stage1.ckpt, stage2.ckpt,
/// periodic step_<n>.ckpt and losses.csv into `output_dir` when set.
TwoStageResult run_two_stage(const std::vector<ClipSequence>& corpus, const TwoStageConfig& cfg);

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);
std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& r);

} // namespace pfvg
