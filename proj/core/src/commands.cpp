#include "pfvg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "pfvg/checkpoint.hpp"
#include "pfvg/drift.hpp"
#include "pfvg/errors.hpp"
#include "pfvg/flow.hpp"
#include "pfvg/ops.hpp"
#include "pfvg/trainer.hpp"
#include "pfvg/video_io.hpp"

namespace pfvg {

namespace {

std::filesystem::path output_dir(const RunConfig& cfg) { return cfg.output_dir; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) {
    throw FormatError("cannot open " + path.string() + " for writing");
  }
  os << text;
}

double parse_double_field(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) {
      return d;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("prompt field " + key + " is not a number: '" + v + "'", "prompt");
}

std::int64_t parse_int_field(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto i = std::stoll(v, &used);
    if (used == v.size()) {
      return i;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("prompt field " + key + " is not an integer: '" + v + "'", "prompt");
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg = opts.config ? load_run_config(*opts.config) : RunConfig{};
  if (!opts.seeds.empty()) {
    cfg.seed = opts.seeds.front();
  }
  if (opts.out) {
    cfg.output_dir = opts.out->string();
  }
  if (opts.variants.size() == 1) {
    cfg.model.variant = parse_variant(opts.variants.front());
  }
  return cfg;
}

std::vector<ClipSequence> load_or_make_corpus(const RunConfig& cfg) {
  if (!cfg.corpus_dir.empty()) {
    auto corpus = read_corpus(cfg.corpus_dir);
    if (corpus.empty()) {
      throw ConfigError("corpus directory " + cfg.corpus_dir + " holds no videos", "corpus_dir");
    }
    return corpus;
  }
  return make_corpus(cfg.corpus_videos, parse_histogram(cfg.corpus_histogram), cfg.corpus_seed,
                     cfg.geometry());
}

SceneSpec parse_scene_spec(const std::string& text) {
  SceneSpec s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) {
      continue;
    }
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("prompt entry '" + item + "' is not key=value", "prompt");
    }
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    if (key == "shape") {
      if (val == "square") {
        s.shape = ShapeKind::Square;
      } else if (val == "cross") {
        s.shape = ShapeKind::Cross;
      } else if (val == "disc") {
        s.shape = ShapeKind::Disc;
      } else {
        throw ConfigError("unknown shape '" + val + "'", "prompt");
      }
    } else if (key == "object") {
      s.object_intensity = parse_double_field(key, val);
    } else if (key == "background") {
      s.background_intensity = parse_double_field(key, val);
    } else if (key == "vx") {
      s.velocity_x = static_cast<std::int32_t>(parse_int_field(key, val));
    } else if (key == "vy") {
      s.velocity_y = static_cast<std::int32_t>(parse_int_field(key, val));
    } else if (key == "x") {
      s.start_x = parse_int_field(key, val);
    } else if (key == "y") {
      s.start_y = parse_int_field(key, val);
    } else if (key == "radius") {
      s.radius = static_cast<std::uint32_t>(parse_int_field(key, val));
    } else if (key == "occluder") {
      const auto colon = val.find(':');
      if (colon == std::string::npos) {
        throw ConfigError("occluder must be start:end", "prompt");
      }
      s.occluder_start = parse_int_field(key, val.substr(0, colon));
      s.occluder_end = parse_int_field(key, val.substr(colon + 1));
    } else {
      throw ConfigError("unknown prompt field '" + key + "'", "prompt");
    }
  }
  return s;
}

void cmd_train(const CommandOptions& opts, std::ostream& log) {
  if (opts.modes.size() > 1) {
    throw ConfigError("train takes a single --mode (the stage-2 forcing mode)", "mode");
  }
  RunConfig cfg = resolve_config(opts);
  if (!opts.modes.empty()) {
    cfg.stage2_mode = parse_forcing_mode(opts.modes.front());
  }
  const auto corpus = load_or_make_corpus(cfg);
  save_run_config(output_dir(cfg) / "resolved.cfg", cfg);
  log << "training on " << corpus.size() << " videos, output in " << cfg.output_dir << "\n";
  const auto result = run_two_stage(corpus, cfg.two_stage());
  if (!result.log.empty()) {
    log << "final loss " << result.log.back().loss << " after " << result.log.size()
        << " clip steps\n";
  }
}

void cmd_generate(const CommandOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  if (opts.checkpoints.size() != 1) {
    throw ConfigError("generate needs exactly one --checkpoint", "checkpoint");
  }
  auto model = model_from_checkpoint(load_checkpoint(opts.checkpoints.front()));
  const std::size_t n_segments = opts.segments.value_or(16);
  const std::uint64_t seed = opts.seeds.empty() ? cfg.seed : opts.seeds.front();
  const auto& mc = model->config();
  const FrameGeometry geom{mc.frames_per_segment, mc.frame_height, mc.frame_width, mc.channels};

  ClipSequence video;
  if (opts.video) {
    const auto corpus = load_or_make_corpus(cfg);
    auto it = std::find_if(corpus.begin(), corpus.end(),
                           [&](const ClipSequence& v) { return v.video_id == *opts.video; });
    if (it == corpus.end()) {
      throw ConfigError("no video " + std::to_string(*opts.video) + " in corpus", "video");
    }
    video.spec = it->spec;
    video.prompt_ids = it->prompt_ids;
    video.reference_image = it->reference_image;
    video.video_id = it->video_id;
  } else {
    SceneSpec spec = opts.prompt ? parse_scene_spec(*opts.prompt)
                                 : random_scene(seed, std::max<std::size_t>(1, n_segments), geom);
    spec.n_clips = std::max<std::size_t>(1, n_segments);
    spec.validate(geom);
    video.spec = spec;
    video.prompt_ids = prompt_ids_for(spec, geom.frames_per_clip);
    video.reference_image = reshape(render_frames(spec, geom, 0, 1),
                                    {geom.height, geom.width, geom.channels})
                                .detach();
  }

  ModelSampler sampler(*model, cfg.sampling_steps);
  const auto t0 = Clock::now();
  video.clips = rollout(*model, sampler, video.prompt_ids, video.reference_image, n_segments, seed);
  const double secs = seconds_since(t0);

  const auto out = output_dir(cfg);
  save_run_config(out / "resolved.cfg", cfg);
  write_video(out / "generated.pfv", video);
  write_pgm_strip(out / "reference.pgm", {video.reference_image});
  for (std::size_t i = 0; i < video.clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "segment_%03zu.pgm", i);
    write_pgm_strip(out / name, split_frames(video.clips[i]));
  }
  log << "generated " << n_segments << " segments in " << std::fixed << std::setprecision(2)
      << secs << " s -> " << (out / "generated.pfv").string() << "\n";
}

void cmd_eval(const CommandOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  if (opts.modes.empty()) {
    throw ConfigError("eval needs at least one --mode", "mode");
  }
  if (opts.checkpoints.empty()) {
    throw ConfigError("eval needs at least one --checkpoint", "checkpoint");
  }
  if (opts.checkpoints.size() != 1 && opts.checkpoints.size() != opts.modes.size()) {
    throw ConfigError("give one checkpoint per mode, or a single checkpoint for all modes",
                      "checkpoint");
  }
  for (const auto& m : opts.modes) {
    parse_forcing_mode(m);
  }
  auto corpus = load_or_make_corpus(cfg);
  const double scale = corpus_sharpness_scale(corpus);
  if (opts.video) {
    std::erase_if(corpus, [&](const ClipSequence& v) { return v.video_id != *opts.video; });
    if (corpus.empty()) {
      throw ConfigError("no video " + std::to_string(*opts.video) + " in corpus", "video");
    }
  }
  RolloutOptions ro;
  ro.n_segments = opts.segments.value_or(16);
  ro.seeds = opts.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : opts.seeds;
  ro.sharpness_scale = scale;

  std::vector<DriftRow> rows;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < opts.modes.size(); ++i) {
    const auto& path = opts.checkpoints.size() == 1 ? opts.checkpoints[0] : opts.checkpoints[i];
    auto model = model_from_checkpoint(load_checkpoint(path));
    ModelSampler sampler(*model, cfg.sampling_steps);
    ro.mode_label = opts.modes[i];
    auto report = rollout_eval(*model, sampler, corpus, ro);
    flagged += report.flagged_rollouts;
    rows.insert(rows.end(), report.rows.begin(), report.rows.end());
  }
  const auto out = output_dir(cfg);
  save_run_config(out / "resolved.cfg", cfg);
  write_drift_csv(out / "drift.csv", rows);
  log << "wrote " << rows.size() << " drift rows to " << (out / "drift.csv").string();
  if (flagged > 0) {
    log << " (" << flagged << " rollouts flagged for non-finite frames)";
  }
  log << "\n";
}

std::vector<BenchRow> bench_memory(const ModelConfig& model_cfg,
                                   const std::vector<std::size_t>& lengths, std::size_t repeats,
                                   std::uint64_t seed) {
  if (lengths.empty() || !std::is_sorted(lengths.begin(), lengths.end()) ||
      std::adjacent_find(lengths.begin(), lengths.end()) != lengths.end() || lengths[0] == 0) {
    throw ConfigError("bench lengths must be positive and strictly ascending", "lengths");
  }
  repeats = std::max<std::size_t>(1, repeats);
  NoGradGuard no_grad;
  FlowTransformer model(model_cfg, seed);
  const auto& pack = model.semantic_pack();
  const std::size_t longest = lengths.back();
  const std::size_t d = model_cfg.d_model;

  std::mt19937_64 rng(mix_seed(seed, 0xbe4c));
  std::vector<TokenSequence> segments;
  segments.reserve(longest);
  for (std::size_t i = 0; i < longest; ++i) {
    Tensor seg = Tensor::uniform(model.segment_shape(), rng, -1.0, 1.0);
    segments.push_back(
        model.patchify(seg, static_cast<std::int64_t>(i * model_cfg.frames_per_segment)));
  }
  const Tensor prompt = Tensor::randn({model_cfg.prompt_len, d}, rng, 1.0);
  const Tensor image = Tensor::randn({model_cfg.tokens_per_frame(), d}, rng, 1.0);
  const double init_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor wq = Tensor::randn({d, d}, rng, init_scale);
  const Tensor wk = Tensor::randn({d, d}, rng, init_scale);
  const Tensor wv = Tensor::randn({d, d}, rng, init_scale);

  std::vector<BenchRow> rows;
  for (std::size_t n : lengths) {
    BenchRow row;
    row.n_segments = n;
    row.variant = to_string(model_cfg.variant);
    row.total_seconds = std::numeric_limits<double>::infinity();
    row.baseline_seconds = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < repeats; ++r) {
      MemoryState state = pack.init_memory(prompt, image);
      const auto t0 = Clock::now();
      for (std::size_t i = 0; i < n; ++i) {
        state = pack.update_memory(state, segments[i]);
      }
      row.total_seconds = std::min(row.total_seconds, seconds_since(t0));
      row.state_tokens = state.psi.dim(0);
    }
    std::vector<Tensor> history;
    for (std::size_t i = 0; i < n; ++i) {
      history.push_back(segments[i].tokens);
    }
    const Tensor all = concat_rows(history);
    for (std::size_t r = 0; r < repeats; ++r) {
      const auto t0 = Clock::now();
      Tensor out = full_history_attention(all, wq, wk, wv, model_cfg.n_heads);
      row.baseline_seconds = std::min(row.baseline_seconds, seconds_since(t0));
    }
    row.seconds_per_update = row.total_seconds / static_cast<double>(n);
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv_header() {
  return "n_segments,variant,seconds_per_update,total_seconds,state_tokens,baseline_seconds";
}

std::string bench_csv_row(const BenchRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g,%zu,%.9g", r.n_segments, r.variant.c_str(),
                r.seconds_per_update, r.total_seconds, r.state_tokens, r.baseline_seconds);
  return buf;
}

void cmd_bench(const CommandOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  const std::vector<std::size_t> lengths =
      opts.lengths.empty() ? std::vector<std::size_t>{8, 16, 32, 64} : opts.lengths;
  std::vector<std::string> variants = opts.variants;
  if (variants.empty()) {
    variants.push_back(to_string(cfg.model.variant));
  }
  std::string csv = bench_csv_header() + "\n";
  for (const auto& v : variants) {
    ModelConfig mc = cfg.model;
    mc.variant = parse_variant(v);
    for (const auto& row : bench_memory(mc, lengths, opts.repeats, cfg.seed)) {
      csv += bench_csv_row(row) + "\n";
    }
  }
  const auto out = output_dir(cfg);
  save_run_config(out / "resolved.cfg", cfg);
  write_text(out / "bench.csv", csv);
  log << csv;
}

void cmd_make_corpus(const CommandOptions& opts, std::ostream& log) {
  RunConfig cfg = resolve_config(opts);
  cfg.corpus_dir.clear();
  if (!opts.seeds.empty()) {
    cfg.corpus_seed = opts.seeds.front();
  }
  const auto corpus = load_or_make_corpus(cfg);
  const auto out = output_dir(cfg);
  write_corpus(out, corpus);
  save_run_config(out / "resolved.cfg", cfg);
  log << "wrote " << corpus.size() << " videos to " << out.string() << "\n";
}

int run_command(const std::string& name, const CommandOptions& opts, std::ostream& log,
                std::ostream& err) {
  try {
    if (name == "train") {
      cmd_train(opts, log);
    } else if (name == "generate") {
      cmd_generate(opts, log);
    } else if (name == "eval") {
      cmd_eval(opts, log);
    } else if (name == "bench") {
      cmd_bench(opts, log);
    } else if (name == "make-corpus") {
      cmd_make_corpus(opts, log);
    } else {
      err << "error: unknown command '" << name << "'\n";
      return kExitConfig;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error";
    if (!e.key().empty()) {
      err << " [" << e.key() << "]";
    }
    err << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const VersionError& e) {
    err << "version error: " << e.what() << "\n";
    return kExitVersion;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

} // namespace pfvg
