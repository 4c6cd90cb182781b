#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pfvg/checkpoint.hpp"
#include "pfvg/config.hpp"
#include "pfvg/errors.hpp"
#include "pfvg/optimizer.hpp"
#include "pfvg/video_io.hpp"

using namespace pfvg;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.patch_size = 2;
  c.frames_per_segment = 2;
  c.frame_height = 8;
  c.frame_width = 8;
  c.memory_tokens = 4;
  c.memorize_window = 8;
  c.mlp_ratio = 2;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pfvg_persist_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    return false;
  }
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::memcmp(&a.data()[i], &b.data()[i], sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

// A model that has taken one optimizer step, so moments are non-trivial.
struct TrainedSnapshot {
  FlowTransformer model{small_config(), 11};
  AdamW opt{AdamWConfig{1e-3}};
  std::mt19937_64 rng{5};

  TrainedSnapshot() {
    auto& params = model.parameters();
    for (auto& [name, p] : params) {
      auto g = p.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = std::sin(double(i) + double(name.size()));
      }
    }
    opt.apply(params);
    params.zero_grad();
    rng.discard(17);
  }

  Checkpoint capture() const {
    return capture_checkpoint(model, "stage1", &opt, &rng, {{"step", "1"}, {"video", "3"}});
  }
};

std::string serialized(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, c);
  return os.str();
}

} // namespace

TEST(CheckpointTest, RoundTripIsBitExact) {
  TrainedSnapshot snap;
  const Checkpoint a = snap.capture();
  std::istringstream is(serialized(a), std::ios::binary);
  const Checkpoint b = read_checkpoint(is);
  EXPECT_EQ(b.stage_tag, "stage1");
  EXPECT_EQ(b.config, a.config);
  EXPECT_EQ(b.optimizer_step, 1u);
  EXPECT_EQ(b.rng_state, a.rng_state);
  EXPECT_EQ(b.progress, a.progress);
  ASSERT_EQ(b.tensors.size(), a.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(b.tensors[i].first, a.tensors[i].first);
    EXPECT_TRUE(bits_equal(b.tensors[i].second, a.tensors[i].second)) << a.tensors[i].first;
  }
  ASSERT_EQ(b.moments.size(), a.moments.size());
  for (const auto& [name, m] : a.moments) {
    EXPECT_EQ(b.moments.at(name).m, m.m);
    EXPECT_EQ(b.moments.at(name).v, m.v);
    EXPECT_EQ(b.moments.at(name).dims, m.dims);
  }
}

TEST(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const fs::path dir = scratch_dir("ckpt");
  TrainedSnapshot snap;
  save_checkpoint(dir / "a.ckpt", snap.capture());
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  EXPECT_EQ(file_bytes(dir / "a.ckpt"), file_bytes(dir / "b.ckpt"));
  EXPECT_EQ(file_bytes(dir / "a.ckpt").substr(0, 4), "PFVG");
}

TEST(CheckpointTest, BadMagicAndVersionRejected) {
  TrainedSnapshot snap;
  std::string bytes = serialized(snap.capture());
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  std::istringstream a(wrong_magic, std::ios::binary);
  EXPECT_THROW(read_checkpoint(a), VersionError);

  std::string wrong_version = bytes;
  wrong_version[4] = static_cast<char>(kCheckpointVersion + 1);
  std::istringstream b(wrong_version, std::ios::binary);
  EXPECT_THROW(read_checkpoint(b), VersionError);
}

TEST(CheckpointTest, TruncationIsFormatError) {
  TrainedSnapshot snap;
  const std::string bytes = serialized(snap.capture());
  for (std::size_t cut : {std::size_t{8}, bytes.size() / 2, bytes.size() - 1}) {
    std::istringstream is(bytes.substr(0, cut), std::ios::binary);
    EXPECT_THROW(read_checkpoint(is), FormatError) << "cut at " << cut;
  }
}

TEST(CheckpointTest, MissingFileIsFormatError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.ckpt"), FormatError);
}

TEST(CheckpointTest, RebuiltModelPredictsIdentically) {
  TrainedSnapshot snap;
  const auto rebuilt = model_from_checkpoint(snap.capture());
  EXPECT_EQ(rebuilt->config().to_map(), small_config().to_map());

  const auto video = render_video(random_scene(4, 2, {2, 8, 8, 1}), {2, 8, 8, 1});
  auto run = [&](const FlowTransformer& m) {
    NoGradGuard guard;
    ContextStream s = m.open_stream(video.prompt_ids, video.reference_image);
    m.absorb(s, video.clips[0]);
    return m.predict_velocity(video.clips[1], 0.4, m.conditioning(s));
  };
  EXPECT_TRUE(bits_equal(run(snap.model), run(*rebuilt)));
}

TEST(CheckpointTest, RestoreRejectsMismatchedModels) {
  TrainedSnapshot snap;
  const Checkpoint ckpt = snap.capture();
  ModelConfig wider = small_config();
  wider.d_model = 32;
  FlowTransformer other(wider, 1);
  EXPECT_THROW(restore_parameters(other, ckpt), FormatError);

  Checkpoint short_table = ckpt;
  short_table.tensors.pop_back();
  FlowTransformer same(small_config(), 2);
  EXPECT_THROW(restore_parameters(same, short_table), FormatError);

  FlowTransformer fresh(small_config(), 99);
  restore_parameters(fresh, ckpt);
  auto it = ckpt.tensors.begin();
  for (const auto& [name, p] : fresh.parameters()) {
    EXPECT_TRUE(bits_equal(p, it->second)) << name;
    ++it;
  }
}

TEST(CheckpointTest, RngStateRoundTrips) {
  std::mt19937_64 rng(123);
  rng.discard(1000);
  auto copy = rng_from_string(rng_to_string(rng));
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(copy(), rng());
  }
  EXPECT_THROW(rng_from_string("not a state"), FormatError);
}

TEST(VideoIoTest, RoundTripKeepsEverything) {
  const fs::path dir = scratch_dir("video");
  SceneSpec spec = random_scene(8, 3, FrameGeometry{});
  const ClipSequence v = render_video(spec, FrameGeometry{}, 42);
  write_video(dir / "v.pfv", v);
  const ClipSequence r = read_video(dir / "v.pfv");
  EXPECT_EQ(r.video_id, 42u);
  EXPECT_EQ(r.prompt_ids, v.prompt_ids);
  EXPECT_EQ(r.spec.seed, spec.seed);
  EXPECT_EQ(r.spec.shape, spec.shape);
  EXPECT_EQ(r.spec.velocity_x, spec.velocity_x);
  EXPECT_EQ(r.spec.occluder_start, spec.occluder_start);
  EXPECT_EQ(r.spec.n_clips, 3u);
  ASSERT_EQ(r.n_clips(), 3u);
  EXPECT_TRUE(bits_equal(r.reference_image, v.reference_image));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_TRUE(bits_equal(r.clips[c], v.clips[c])) << c;
  }
}

TEST(VideoIoTest, ValuesStoredAsFloat32) {
  const fs::path dir = scratch_dir("float");
  ClipSequence v;
  v.reference_image = Tensor::full({2, 2, 1}, 0.1);
  v.clips.push_back(Tensor::full({1, 2, 2, 1}, 1.0 / 3.0));
  write_video(dir / "v.pfv", v);
  const ClipSequence r = read_video(dir / "v.pfv");
  EXPECT_EQ(r.reference_image[0], static_cast<double>(0.1f));
  EXPECT_EQ(r.clips[0][3], static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST(VideoIoTest, ReferenceOnlyVideo) {
  const fs::path dir = scratch_dir("ref_only");
  ClipSequence v;
  v.reference_image = Tensor::full({4, 4, 1}, -0.5);
  write_video(dir / "v.pfv", v);
  const ClipSequence r = read_video(dir / "v.pfv");
  EXPECT_EQ(r.n_clips(), 0u);
  EXPECT_TRUE(bits_equal(r.reference_image, v.reference_image));
  EXPECT_THROW(write_video(dir / "w.pfv", ClipSequence{}), ShapeError);
}

TEST(VideoIoTest, BadMagicAndVersion) {
  const fs::path dir = scratch_dir("video_bad");
  write_video(dir / "v.pfv", render_video(SceneSpec{}, FrameGeometry{}));
  std::string bytes = file_bytes(dir / "v.pfv");
  bytes[4] = static_cast<char>(kVideoFormatVersion + 7);
  std::ofstream(dir / "version.pfv", std::ios::binary) << bytes;
  EXPECT_THROW(read_video(dir / "version.pfv"), VersionError);
  bytes[0] = 'Q';
  std::ofstream(dir / "magic.pfv", std::ios::binary) << bytes;
  EXPECT_THROW(read_video(dir / "magic.pfv"), VersionError);
  const std::string good = file_bytes(dir / "v.pfv");
  std::ofstream(dir / "short.pfv", std::ios::binary) << good.substr(0, good.size() - 5);
  EXPECT_THROW(read_video(dir / "short.pfv"), FormatError);
}

TEST(VideoIoTest, CorpusReadSortedById) {
  const fs::path dir = scratch_dir("corpus");
  auto corpus = make_corpus(12, {{1, 1}, {2, 1}}, 4);
  write_corpus(dir, corpus);
  const auto back = read_corpus(dir);
  ASSERT_EQ(back.size(), 12u);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].video_id, i);
    EXPECT_EQ(back[i].n_clips(), corpus[i].n_clips());
  }
  EXPECT_TRUE(fs::exists(dir / "video_0.pfv"));
  EXPECT_THROW(read_corpus(dir / "missing"), ConfigError);
}

TEST(VideoIoTest, PgmStripHeaderAndPixels) {
  const fs::path dir = scratch_dir("pgm");
  write_pgm_strip(dir / "s.pgm", {Tensor::full({3, 2, 1}, -1.0), Tensor::full({3, 2, 1}, 1.0)});
  const std::string bytes = file_bytes(dir / "s.pgm");
  const std::string header = "P5\n4 3\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 12);
  EXPECT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]), 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size() + 2]), 255);
  EXPECT_THROW(write_pgm_strip(dir / "e.pgm", {}), ShapeError);
}

TEST(ConfigTest, KeyValueParsing) {
  const auto kv = parse_key_values("# comment\n\n  d_model = 32 \nseed=4\n\t# indented\n");
  EXPECT_EQ(kv, (std::map<std::string, std::string>{{"d_model", "32"}, {"seed", "4"}}));
  try {
    parse_key_values("seed=1\nseed=2\n");
    FAIL() << "duplicate accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "seed");
  }
  EXPECT_THROW(parse_key_values("just words\n"), ConfigError);
}

TEST(ConfigTest, UnknownKeyNamed) {
  try {
    RunConfig::from_map({{"d_model", "16"}, {"learnin_rate", "0.1"}});
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "learnin_rate");
  }
}

TEST(ConfigTest, BadValuesNameTheirKey) {
  const std::vector<std::pair<std::string, std::string>> cases{
      {"learning_rate", "-1"}, {"stages", "3"},         {"corpus_videos", "0"},
      {"curriculum", "maybe"}, {"stage2_mode", "bogus"}, {"corpus_histogram", "1-2"},
      {"seed", "12x"},         {"sampling_steps", "0"}};
  for (const auto& [key, value] : cases) {
    try {
      RunConfig::from_map({{key, value}});
      ADD_FAILURE() << key << "=" << value << " accepted";
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key(), key);
    }
  }
}

TEST(ConfigTest, MapRoundTrip) {
  RunConfig c;
  c.model = small_config();
  c.learning_rate = 0.1;  // not exactly representable
  c.stage2_mode = ForcingMode::student(3);
  c.curriculum = false;
  c.corpus_histogram = "1:3,2:1";
  c.output_dir = "runs/x";
  const RunConfig back = RunConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map(), c.to_map());
  EXPECT_EQ(back.learning_rate, 0.1);
  EXPECT_EQ(back.stage2_mode, ForcingMode::student(3));
}

TEST(ConfigTest, FileSaveAndLoad) {
  const fs::path dir = scratch_dir("config");
  RunConfig c;
  c.seed = 77;
  c.model = small_config();
  save_run_config(dir / "nested" / "run.cfg", c);
  EXPECT_EQ(load_run_config(dir / "nested" / "run.cfg").to_map(), c.to_map());
  try {
    load_run_config(dir / "absent.cfg");
    FAIL() << "missing file accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "config");
  }
}

TEST(ConfigTest, TwoStageCarriesSettings) {
  RunConfig c;
  c.learning_rate = 2e-3;
  c.accumulation_window = 3;
  c.seed = 9;
  c.stage1_steps = 5;
  c.resume_from = "x.ckpt";
  const auto t = c.two_stage();
  EXPECT_EQ(t.train.learning_rate, 2e-3);
  EXPECT_EQ(t.train.accumulation_window, 3u);
  EXPECT_EQ(t.train.seed, 9u);
  EXPECT_EQ(t.stage1_steps, 5u);
  ASSERT_TRUE(t.resume_from.has_value());
  EXPECT_EQ(c.geometry().frames_per_clip, c.model.frames_per_segment);
}

TEST(AdamWTest, FirstStepMovesBySignedLearningRate) {
  ParameterStore store;
  store.add("w", Tensor({3}, {1.0, -2.0, 0.5}, true));
  auto g = store.at("w").mutable_grad();
  g[0] = 4.0;
  g[1] = -0.01;
  g[2] = 0.0;
  AdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  opt.apply(store);
  const Tensor& w = store.at("w");
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(w[0], 1.0 - 0.1, 1e-8);
  EXPECT_NEAR(w[1], -2.0 + 0.1, 1e-6);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_EQ(opt.step(), 1u);
}

TEST(AdamWTest, DecoupledWeightDecay) {
  ParameterStore store;
  store.add("w", Tensor({1}, {2.0}, true));
  AdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
  opt.apply(store);  // zero gradient: only decay acts
  EXPECT_NEAR(store.at("w")[0], 2.0 * (1.0 - 0.1 * 0.5), 1e-12);
}

TEST(AdamWTest, FrozenParametersUntouched) {
  ParameterStore store;
  store.add("a", Tensor({2}, {1.0, 1.0}, true));
  store.add("b", Tensor({2}, {1.0, 1.0}, true));
  store.set_trainable([](const std::string& n) { return n == "a"; });
  store.at("a").mutable_grad()[0] = 1.0;
  AdamW opt(AdamWConfig{0.1});
  opt.apply(store);
  EXPECT_NE(store.at("a")[0], 1.0);
  EXPECT_EQ(store.at("b")[0], 1.0);
  EXPECT_EQ(store.at("b")[1], 1.0);
  EXPECT_EQ(opt.moments().count("b"), 0u);
}

TEST(AdamWTest, RestoreContinuesIdentically) {
  auto make = [] {
    ParameterStore s;
    s.add("w", Tensor({2}, {0.3, -0.7}, true));
    return s;
  };
  auto grad_step = [](ParameterStore& s, AdamW& opt, double k) {
    auto g = s.at("w").mutable_grad();
    g[0] = k;
    g[1] = -2 * k;
    opt.apply(s);
    s.zero_grad();
  };
  ParameterStore a = make(), b = make();
  AdamW oa(AdamWConfig{0.05}), ob(AdamWConfig{0.05});
  grad_step(a, oa, 1.0);
  grad_step(b, ob, 1.0);
  AdamW resumed(AdamWConfig{0.05});
  resumed.restore(ob.step(), ob.moments());
  grad_step(a, oa, 0.5);
  grad_step(b, resumed, 0.5);
  EXPECT_TRUE(bits_equal(a.at("w"), b.at("w")));
}

TEST(GradientNormTest, OverTrainableOnly) {
  ParameterStore store;
  store.add("a", Tensor({2}, {0.0, 0.0}, true));
  store.add("b", Tensor({1}, {0.0}, true));
  store.at("a").mutable_grad()[0] = 3.0;
  store.at("a").mutable_grad()[1] = 4.0;
  store.at("b").mutable_grad()[0] = 12.0;
  EXPECT_DOUBLE_EQ(gradient_norm(store), 13.0);
  store.set_trainable([](const std::string& n) { return n == "a"; });
  EXPECT_DOUBLE_EQ(gradient_norm(store), 5.0);
}
