#include "pfvg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pfvg/errors.hpp"
#include "pfvg/flow.hpp"

namespace pfvg {

ForcingMode ForcingMode::student(std::size_t steps) {
  if (steps == 0) {
    throw ConfigError("student forcing needs at least one sampling step", "mode");
  }
  return {Kind::Student, steps};
}

ForcingMode parse_forcing_mode(const std::string& text) {
  if (text == "teacher") {
    return ForcingMode::teacher();
  }
  if (text == "direct") {
    return ForcingMode::direct();
  }
  if (text == "student") {
    return ForcingMode::student(5);
  }
  if (text.rfind("student:", 0) == 0) {
    const auto digits = text.substr(8);
    if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit) &&
        digits.size() < 10) {
      return ForcingMode::student(std::stoul(digits));
    }
  }
  throw ConfigError("unknown forcing mode '" + text + "' (teacher, direct, student:N)", "mode");
}

std::string to_string(const ForcingMode& mode) {
  switch (mode.kind) {
    case ForcingMode::Kind::Teacher:
      return "teacher";
    case ForcingMode::Kind::Direct:
      return "direct";
    case ForcingMode::Kind::Student:
      return "student:" + std::to_string(mode.student_steps);
  }
  return "?";
}

Tensor direct_conditioning_segment(const FlowTransformer& model, const Tensor& gt,
                                   const ConditioningBundle& cond, double t, const Tensor& eps) {
  const FlowSample s = interpolate(gt.detach(), eps, t);
  return one_step_approx(model.field(cond), s.x_t, t).x1;
}

Tensor student_conditioning_segment(const FlowTransformer& model, const ConditioningBundle& cond,
                                    std::size_t steps, const Tensor& x0) {
  return euler_integrate(model.field(cond), x0, steps);
}

std::pair<double, Tensor> draw_flow_noise(std::mt19937_64& rng, const Shape& dims) {
  const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return {t, standard_normal(dims, rng)};
}

Conditioner::Conditioner(const FlowTransformer& model, const ClipSequence& video, ForcingMode mode)
    : model_(&model), video_(&video), mode_(mode) {
  if (video.clips.empty()) {
    throw RangeError("video " + std::to_string(video.video_id) + " has no clips");
  }
  stream_ = model.open_stream(video.prompt_ids, video.reference_image);
}

void Conditioner::advance(std::mt19937_64& rng) {
  if (next_ >= video_->clips.size()) {
    throw RangeError("conditioner: no clip " + std::to_string(next_) + " in video " +
                     std::to_string(video_->video_id));
  }
  const Tensor& gt = video_->clips[next_];
  Tensor segment;
  switch (mode_.kind) {
    case ForcingMode::Kind::Teacher:
      segment = gt;
      break;
    case ForcingMode::Kind::Direct: {
      auto [t, eps] = draw_flow_noise(rng, gt.dims());
      segment = direct_conditioning_segment(*model_, gt, current(), t, eps);
      break;
    }
    case ForcingMode::Kind::Student: {
      Tensor x0 = standard_normal(gt.dims(), rng);
      segment = student_conditioning_segment(*model_, current(), mode_.student_steps, x0);
      break;
    }
  }
  model_->absorb(stream_, segment);
  ++next_;
}

ConditioningBundle build_conditioning(const FlowTransformer& model, const ClipSequence& video,
                                      std::size_t clip_index, const ForcingMode& mode,
                                      std::mt19937_64& rng) {
  if (clip_index >= video.clips.size()) {
    throw RangeError("clip index " + std::to_string(clip_index) + " out of range for video " +
                     std::to_string(video.video_id) + " with " +
                     std::to_string(video.clips.size()) + " clips");
  }
  Conditioner c(model, video, mode);
  while (c.next_clip() < clip_index) {
    c.advance(rng);
  }
  return c.current();
}

double VideoReport::mean_loss() const {
  if (clip_losses.empty()) {
    return 0.0;
  }
  return std::accumulate(clip_losses.begin(), clip_losses.end(), 0.0) /
         static_cast<double>(clip_losses.size());
}

std::vector<std::size_t> curriculum_order(const std::vector<ClipSequence>& corpus) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& va = corpus[a];
    const auto& vb = corpus[b];
    if (va.n_clips() != vb.n_clips()) {
      return va.n_clips() < vb.n_clips();
    }
    return va.video_id < vb.video_id;
  });
  return order;
}

std::vector<std::vector<std::size_t>> curriculum_phases(const std::vector<ClipSequence>& corpus) {
  std::vector<std::vector<std::size_t>> phases;
  if (corpus.empty()) {
    return phases;
  }
  const auto order = curriculum_order(corpus);
  const std::size_t longest = corpus[order.back()].n_clips();
  std::size_t limit = 1;
  std::size_t taken = 0;
  for (;;) {
    while (taken < order.size() && corpus[order[taken]].n_clips() <= limit) {
      ++taken;
    }
    const bool grew = phases.empty() ? taken > 0 : taken > phases.back().size();
    if (grew) {
      phases.emplace_back(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(taken));
    }
    if (limit >= longest) {
      break;
    }
    limit *= 2;
  }
  return phases;
}

Trainer::Trainer(FlowTransformer& model, TrainConfig cfg)
    : model_(&model), cfg_(cfg), opt_(AdamWConfig{.learning_rate = cfg.learning_rate}),
      rng_(cfg.seed) {}

void Trainer::set_head_only(bool on) {
  if (on) {
    model_->parameters().set_trainable(FlowTransformer::is_head_parameter);
  } else {
    model_->parameters().set_trainable([](const std::string&) { return true; });
  }
}

VideoReport Trainer::train_video(const ClipSequence& video, const ForcingMode& mode,
                                 std::uint64_t max_updates) {
  auto& params = model_->parameters();
  const std::size_t n = video.n_clips();
  const std::size_t window = cfg_.accumulation_window == 0 ? n : cfg_.accumulation_window;
  const std::string mode_name = to_string(mode);
  VideoReport report;
  if (max_updates == 0) {
    return report;
  }
  Conditioner conditioner(*model_, video, mode);
  params.zero_grad();
  std::size_t in_window = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto started = std::chrono::steady_clock::now();
    const Tensor& clip = video.clips[i];
    const ConditioningBundle cond = conditioner.current();
    auto [t, eps] = draw_flow_noise(rng_, clip.dims());
    const FlowSample s = interpolate(clip, eps, t);
    Tensor loss = fm_loss(model_->predict_velocity(s.x_t, t, cond), velocity_target(clip, eps));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at clip " + std::to_string(i) + " of video " +
                         std::to_string(video.video_id));
    }
    backward(loss);
    ++in_window;

    LossRecord rec;
    rec.step = progress_.step;
    rec.stage = progress_.stage;
    rec.mode = mode_name;
    rec.video_id = video.video_id;
    rec.clip_index = i;
    rec.loss = value;
    rec.grad_norm = gradient_norm(params);

    bool stop = false;
    if (in_window == window || i + 1 == n) {
      opt_.apply(params);
      params.zero_grad();
      conditioner.detach();
      in_window = 0;
      ++report.updates;
      ++progress_.step;
      stop = report.updates >= max_updates;
    }
    if (!stop && i + 1 < n) {
      conditioner.advance(rng_);
    }
    if (log_wall_time_) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              started)
                        .count();
    }
    report.clip_losses.push_back(value);
    if (sink_) {
      sink_(rec);
    }
    if (observer_ && !observer_(rec)) {
      stop_requested_ = true;
    }
    if (stop) {
      break;
    }
  }
  return report;
}

namespace {

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, int stage,
                                           std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(stage)), epoch));
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

} // namespace

void Trainer::run_stage(const std::vector<ClipSequence>& corpus, const StageConfig& stage,
                        const LossObserver& observer, const std::function<void()>& on_video_end) {
  if (corpus.empty()) {
    throw ConfigError("training corpus is empty", "corpus_dir");
  }
  if (progress_.stage != stage.stage) {
    progress_ = StageProgress{};
    progress_.stage = stage.stage;
  }
  set_head_only(stage.head_only);
  observer_ = observer;
  stop_requested_ = false;
  const auto phases = stage.curriculum ? curriculum_phases(corpus)
                                       : std::vector<std::vector<std::size_t>>{};

  while (progress_.step < stage.steps && !stop_requested_) {
    std::size_t index = 0;
    if (stage.curriculum) {
      const std::uint64_t n_phases = phases.size();
      const std::uint64_t phase =
          std::min<std::uint64_t>(n_phases - 1, progress_.step * n_phases / stage.steps);
      if (phase != progress_.epoch) {
        progress_.epoch = phase;
        progress_.cursor = 0;
      }
      const auto& members = phases[phase];
      index = members[progress_.cursor % members.size()];
      ++progress_.cursor;
    } else {
      const auto perm = epoch_permutation(corpus.size(), cfg_.seed, stage.stage, progress_.epoch);
      index = perm[progress_.cursor];
      if (++progress_.cursor == corpus.size()) {
        ++progress_.epoch;
        progress_.cursor = 0;
      }
    }
    train_video(corpus[index], stage.mode, stage.steps - progress_.step);
    if (progress_.step >= stage.steps) {
      progress_.finished = true;
    }
    if (on_video_end) {
      on_video_end();
    }
  }
  observer_ = {};
}

std::map<std::string, std::string> Trainer::progress_map() const {
  return {
      {"stage", std::to_string(progress_.stage)},
      {"step", std::to_string(progress_.step)},
      {"epoch", std::to_string(progress_.epoch)},
      {"cursor", std::to_string(progress_.cursor)},
      {"finished", progress_.finished ? "1" : "0"},
  };
}

void Trainer::resume(const Checkpoint& ckpt) {
  auto field = [&](const char* key) -> std::uint64_t {
    auto it = ckpt.progress.find(key);
    if (it == ckpt.progress.end()) {
      throw FormatError(std::string("checkpoint has no training progress field '") + key + "'");
    }
    return std::stoull(it->second);
  };
  progress_.stage = static_cast<int>(field("stage"));
  progress_.step = field("step");
  progress_.epoch = field("epoch");
  progress_.cursor = field("cursor");
  progress_.finished = field("finished") != 0;
  if (ckpt.rng_state.empty()) {
    throw FormatError("checkpoint has no rng state; cannot resume training");
  }
  rng_ = rng_from_string(ckpt.rng_state);
  opt_.restore(ckpt.optimizer_step, ckpt.moments);
}

std::string loss_csv_header() {
  return "step,stage,mode,video_id,clip_index,loss,grad_norm,wall_ms";
}

std::string loss_csv_row(const LossRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%d,%s,%llu,%zu,%.17g,%.17g,%.3f",
                static_cast<unsigned long long>(r.step), r.stage, r.mode.c_str(),
                static_cast<unsigned long long>(r.video_id), r.clip_index, r.loss, r.grad_norm,
                r.wall_ms);
  return buf;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  os << loss_csv_header() << '\n';
  for (const auto& r : log) {
    os << loss_csv_row(r) << '\n';
  }
}

TwoStageResult run_two_stage(const std::vector<ClipSequence>& corpus, const TwoStageConfig& cfg) {
  if (cfg.stages != 1 && cfg.stages != 2) {
    throw ConfigError("stages must be 1 or 2", "stages");
  }
  FlowTransformer model(cfg.model, cfg.model_seed);
  Trainer trainer(model, cfg.train);
  trainer.set_log_wall_time(cfg.log_wall_time);
  TwoStageResult result;
  trainer.set_log_sink([&](const LossRecord& r) { result.log.push_back(r); });

  const bool writing = !cfg.output_dir.empty();
  auto save = [&](const std::string& file, const Checkpoint& c) {
    if (writing) {
      save_checkpoint(cfg.output_dir / file, c);
    }
  };

  if (cfg.resume_from) {
    Checkpoint ckpt = load_checkpoint(*cfg.resume_from);
    if (ModelConfig::from_map(ckpt.config).to_map() != model.config().to_map()) {
      throw ConfigError("resume checkpoint was trained with a different model config",
                        "resume_from");
    }
    restore_parameters(model, ckpt);
    trainer.resume(ckpt);
  }

  std::uint64_t last_saved = trainer.progress().step;
  auto periodic = [&] {
    const auto step = trainer.progress().step;
    if (cfg.checkpoint_every == 0 || step - last_saved < cfg.checkpoint_every) {
      return;
    }
    last_saved = step;
    auto c = capture_checkpoint(model, "periodic", &trainer.optimizer(), &trainer.rng(),
                                trainer.progress_map());
    save("stage" + std::to_string(trainer.progress().stage) + "_step" + std::to_string(step) +
             ".ckpt",
         c);
  };

  if (trainer.progress().stage == 1) {
    if (!trainer.progress().finished) {
      StageConfig s1{1, ForcingMode::teacher(), cfg.stage1_steps, false, false};
      trainer.run_stage(corpus, s1, {}, periodic);
    }
    trainer.progress().finished = true;
    result.stage1 = capture_checkpoint(model, "stage1", &trainer.optimizer(), &trainer.rng(),
                                       trainer.progress_map());
    save("stage1.ckpt", *result.stage1);
    if (cfg.stages == 1) {
      if (writing) {
        write_loss_csv(cfg.output_dir / "losses.csv", result.log);
      }
      return result;
    }
    // Stage 2 starts with fresh optimizer moments.
    trainer.optimizer().restore(0, {});
    trainer.progress() = StageProgress{};
    trainer.progress().stage = 2;
    last_saved = 0;
  }

  if (!trainer.progress().finished) {
    StageConfig s2{2, cfg.stage2_mode, cfg.stage2_steps, true, cfg.train.curriculum};
    trainer.run_stage(corpus, s2, {}, periodic);
  }
  trainer.progress().finished = true;
  result.stage2 = capture_checkpoint(model, "stage2", &trainer.optimizer(), &trainer.rng(),
                                     trainer.progress_map());
  save("stage2.ckpt", *result.stage2);
  if (writing) {
    write_loss_csv(cfg.output_dir / "losses.csv", result.log);
  }
  return result;
}

} // namespace pfvg
