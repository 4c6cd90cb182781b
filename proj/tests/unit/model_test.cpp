#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grad_check.hpp"
#include "reference_ops.hpp"
#include "pfvg/errors.hpp"
#include "pfvg/flow.hpp"
#include "pfvg/model.hpp"
#include "pfvg/ops.hpp"

using namespace pfvg;
using namespace pfvg::oracle;

namespace {

// d=8, 2 heads, 8x8 frames of 2x2 patches, 2 frames per segment.
ModelConfig tiny_config(std::size_t layers = 1) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = layers;
  c.patch_size = 2;
  c.frames_per_segment = 2;
  c.frame_height = 8;
  c.frame_width = 8;
  c.channels = 1;
  c.prompt_vocab = 8;
  c.prompt_len = 4;
  c.memory_tokens = 4;
  c.memorize_window = 8;
  c.mlp_ratio = 2;
  return c;
}

void randomize(FlowTransformer& m, std::uint64_t seed, double stddev = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& [name, t] : m.parameters()) {
    for (auto& v : t.mutable_data()) {
      v = n(rng);
    }
  }
}

void zero_parameter(FlowTransformer& m, const std::string& name) {
  for (auto& v : m.parameters().at(name).mutable_data()) {
    v = 0.0;
  }
}

Tensor random_segment(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform({c.frames_per_segment, c.frame_height, c.frame_width, c.channels}, rng,
                         -1.0, 1.0);
}

std::vector<std::size_t> prompt_of(const ModelConfig& c, std::size_t offset = 0) {
  std::vector<std::size_t> ids(c.prompt_len);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ids[i] = (i + offset) % c.prompt_vocab;
  }
  return ids;
}

// Conditioning after one absorbed segment, so every input path is live.
ConditioningBundle live_conditioning(const FlowTransformer& m, std::uint64_t seed) {
  const auto& c = m.config();
  auto ids = prompt_of(c);
  std::mt19937_64 rng(seed);
  Tensor image = Tensor::uniform({c.frame_height, c.frame_width, c.channels}, rng, -1.0, 1.0);
  ContextStream s = m.open_stream(ids, image);
  m.absorb(s, random_segment(c, seed + 1));
  return m.conditioning(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.dims(), b.dims());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

Mat linear_named(const FlowTransformer& m, const std::string& name, const Mat& x) {
  return affine(x, m.parameters().at(name + ".weight"), m.parameters().at(name + ".bias"));
}

Mat reference_block(const FlowTransformer& m, std::size_t layer, const TokenSequence& x,
                    const ConditioningBundle& cond, const Tensor& temb) {
  const auto& c = m.config();
  const std::string p = "block" + std::to_string(layer);
  Mat t = to_mat(temb);
  for (auto& v : t[0]) {
    v = v / (1.0 + std::exp(-v));
  }
  const std::vector<double> mod = linear_named(m, p + ".modulation", t)[0];

  const Mat xs = to_mat(x.tokens);
  const Mat image = to_mat(cond.image_emb);
  Mat kv = image;
  std::vector<std::int64_t> kv_pos(image.size(), cond.image_position);
  if (!cond.short_ctx.empty()) {
    kv = stacked({kv, to_mat(cond.short_ctx.tokens)});
    kv_pos.insert(kv_pos.end(), cond.short_ctx.positions.begin(), cond.short_ctx.positions.end());
  }
  kv = stacked({kv, xs});
  kv_pos.insert(kv_pos.end(), x.positions.begin(), x.positions.end());

  const Mat h_all = modulated(kv, mod, 0);
  const Mat h_x(h_all.end() - static_cast<std::ptrdiff_t>(xs.size()), h_all.end());
  const Mat q = rotated(linear_named(m, p + ".self.q", h_x), x.positions, c.head_dim());
  const Mat k = rotated(linear_named(m, p + ".self.k", h_all), kv_pos, c.head_dim());
  const Mat v = linear_named(m, p + ".self.v", h_all);
  const Mat x1 = plus(xs, linear_named(m, p + ".self.o", attend(q, k, v, c.n_heads)));

  const Mat ctx =
      plain_layernorm(stacked({to_mat(cond.memory.psi), to_mat(cond.prompt_emb), image}));
  const Mat h2 = modulated(x1, mod, 1);
  const Mat x2 = plus(x1, linear_named(m, p + ".cross.o",
                                       attend(linear_named(m, p + ".cross.q", h2),
                                              linear_named(m, p + ".cross.k", ctx),
                                              linear_named(m, p + ".cross.v", ctx), c.n_heads)));
  Mat hidden = linear_named(m, p + ".mlp.in", modulated(x2, mod, 2));
  for (auto& row : hidden) {
    for (auto& v : row) {
      v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
  }
  return plus(x2, linear_named(m, p + ".mlp.out", hidden));
}

} // namespace

TEST(ModelConfigTest, DefaultsValidate) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.tokens_per_segment(), 64u);
}

TEST(ModelConfigTest, OddRopePairsRejected) {
  ModelConfig c;
  c.d_model = 60;  // 60 / 4 heads = 15, odd head width
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "d_model");
  }
}

TEST(ModelConfigTest, PatchMustTileFrame) {
  ModelConfig c;
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfigTest, MapRoundTrip) {
  ModelConfig c = tiny_config(2);
  c.variant = SqueezeVariant::C;
  const ModelConfig back = ModelConfig::from_map(c.to_map());
  EXPECT_EQ(back.to_map(), c.to_map());
}

TEST(ModelConfigTest, BadIntegerNamesKey) {
  try {
    ModelConfig::from_map({{"n_layers", "four"}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "n_layers");
  }
}

TEST(PatchifyTest, DefaultSegmentGivesSixtyFourTokens) {
  FlowTransformer m(ModelConfig{}, 1);
  TokenSequence ts = m.patchify(random_segment(m.config(), 2), 0);
  EXPECT_EQ(ts.size(), 64u);
  EXPECT_EQ(ts.tokens.dims(), (Shape{64, 64}));
}

TEST(PatchifyTest, PositionsFollowGlobalStartFrame) {
  FlowTransformer m(ModelConfig{}, 1);
  const Tensor seg = random_segment(m.config(), 2);
  const auto a = m.patchify(seg, 0).positions;
  const auto b = m.patchify(seg, 4).positions;
  ASSERT_EQ(a.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(a[i], static_cast<std::int64_t>(i / 16));
    EXPECT_EQ(b[i], static_cast<std::int64_t>(4 + i / 16));
  }
}

TEST(PatchifyTest, WrongFrameShapeThrows) {
  FlowTransformer m(ModelConfig{}, 1);
  EXPECT_THROW(m.patchify(Tensor::zeros({4, 8, 8, 1}), 0), ShapeError);
}

TEST(PatchifyTest, ExtractUnpatchifyRoundTripIsExact) {
  FlowTransformer m(ModelConfig{}, 1);
  const Tensor seg = random_segment(m.config(), 3);
  const Tensor back = m.unpatchify(m.extract_patches(seg));
  for (std::size_t i = 0; i < seg.numel(); ++i) {
    ASSERT_EQ(seg[i], back[i]);
  }
}

TEST(PatchifyTest, PseudoInverseProjectionRecoversSegment) {
  FlowTransformer m(ModelConfig{}, 5);
  zero_parameter(m, "spatial_embed");
  zero_parameter(m, "patch_embed.bias");
  const Tensor w = m.parameters().at("patch_embed.weight");  // [pd x d]
  const std::size_t pd = w.dim(0), d = w.dim(1);
  // W+ = W^T (W W^T)^-1, computed as ((W W^T)^-1 W)^T.
  const Mat wm = to_mat(w);
  Mat gram(pd, std::vector<double>(pd, 0.0));
  for (std::size_t i = 0; i < pd; ++i) {
    for (std::size_t j = 0; j < pd; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        gram[i][j] += wm[i][c] * wm[j][c];
      }
    }
  }
  const Mat sol = solve(gram, wm);  // [pd x d]
  std::vector<double> pinv(d * pd);
  for (std::size_t i = 0; i < pd; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      pinv[c * pd + i] = sol[i][c];
    }
  }
  const Tensor seg = random_segment(m.config(), 6);
  const TokenSequence ts = m.patchify(seg, 0);
  const Tensor recovered = m.unpatchify(matmul(ts.tokens, Tensor({d, pd}, pinv)));
  EXPECT_LT(max_abs_diff(recovered, seg), 1e-8);
}

TEST(AttentionBlockTest, ZeroOutputProjectionsGiveIdentity) {
  FlowTransformer m(tiny_config(), 3);
  randomize(m, 4);
  for (const char* name : {"self.o", "cross.o", "mlp.out"}) {
    zero_parameter(m, std::string("block0.") + name + ".weight");
    zero_parameter(m, std::string("block0.") + name + ".bias");
  }
  const auto cond = live_conditioning(m, 9);
  const TokenSequence x = m.patchify(random_segment(m.config(), 10), cond.segment_start);
  const TokenSequence y = m.attention_block(0, x, cond, m.timestep_embedding(0.3));
  for (std::size_t i = 0; i < x.tokens.numel(); ++i) {
    ASSERT_EQ(x.tokens[i], y.tokens[i]);
  }
  EXPECT_EQ(x.positions, y.positions);
}

TEST(AttentionBlockTest, MatchesLoopReference) {
  FlowTransformer m(tiny_config(), 3);
  randomize(m, 11);
  const auto cond = live_conditioning(m, 12);
  ASSERT_FALSE(cond.short_ctx.empty());
  const TokenSequence x = m.patchify(random_segment(m.config(), 13), cond.segment_start);
  const Tensor temb = m.timestep_embedding(0.7);
  const Tensor got = m.attention_block(0, x, cond, temb).tokens;
  const Mat want = reference_block(m, 0, x, cond, temb);
  const std::size_t d = m.config().d_model;
  double worst = 0.0;
  for (std::size_t r = 0; r < want.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      worst = std::max(worst, std::abs(got[r * d + c] - want[r][c]));
    }
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(AttentionBlockTest, MemoryTokenOrderIsIrrelevant) {
  FlowTransformer m(tiny_config(), 3);
  randomize(m, 14);
  auto cond = live_conditioning(m, 15);
  const TokenSequence x = m.patchify(random_segment(m.config(), 16), cond.segment_start);
  const Tensor temb = m.timestep_embedding(0.5);
  const Tensor before = m.attention_block(0, x, cond, temb).tokens;
  const std::size_t k = cond.memory.psi.dim(0);
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[1]);
  cond.memory.psi = gather_rows(cond.memory.psi, perm);
  const Tensor after = m.attention_block(0, x, cond, temb).tokens;
  EXPECT_LT(max_abs_diff(before, after), 1e-12);
}

TEST(AttentionBlockTest, LayerOutOfRangeThrows) {
  FlowTransformer m(tiny_config(), 3);
  const auto cond = live_conditioning(m, 1);
  const TokenSequence x = m.patchify(random_segment(m.config(), 2), 0);
  EXPECT_THROW(m.attention_block(1, x, cond, m.timestep_embedding(0.0)), ShapeError);
}

TEST(PredictVelocityTest, OutputShapeMatchesInput) {
  FlowTransformer m(ModelConfig{}, 1);
  const Tensor image = Tensor::zeros({16, 16, 1});
  const auto ids = prompt_of(m.config());
  ContextStream s = m.open_stream(ids, image);
  const Tensor x = random_segment(m.config(), 2);
  EXPECT_EQ(m.predict_velocity(x, 0.4, m.conditioning(s)).dims(), x.dims());
}

TEST(PredictVelocityTest, DeterministicBitwise) {
  FlowTransformer m(tiny_config(2), 3);
  randomize(m, 1);
  const auto cond = live_conditioning(m, 2);
  const Tensor x = random_segment(m.config(), 3);
  const Tensor a = m.predict_velocity(x, 0.25, cond);
  const Tensor b = m.predict_velocity(x, 0.25, cond);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ASSERT_EQ(a[i], b[i]);
  }
}

TEST(PredictVelocityTest, SameSeedSameModel) {
  FlowTransformer a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
  auto ia = a.parameters().begin();
  auto ib = b.parameters().begin();
  bool any_diff = false;
  auto ic = c.parameters().begin();
  for (; ia != a.parameters().end(); ++ia, ++ib, ++ic) {
    for (std::size_t i = 0; i < ia->second.numel(); ++i) {
      ASSERT_EQ(ia->second[i], ib->second[i]);
      any_diff |= ia->second[i] != ic->second[i];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(PredictVelocityTest, GlobalPositionShiftLeavesOutputUnchanged) {
  FlowTransformer m(tiny_config(2), 3);
  randomize(m, 21);
  const auto cond = live_conditioning(m, 22);
  const Tensor x = random_segment(m.config(), 23);
  const Tensor base = m.predict_velocity(x, 0.6, cond);
  for (std::int64_t delta : {1, 5, 1000}) {
    ConditioningBundle shifted = cond;
    shifted.image_position += delta;
    shifted.segment_start += delta;
    for (auto& p : shifted.short_ctx.positions) {
      p += delta;
    }
    EXPECT_LT(max_abs_diff(m.predict_velocity(x, 0.6, shifted), base), 1e-10) << delta;
  }
}

TEST(PredictVelocityTest, MemoryIsLive) {
  FlowTransformer m(tiny_config(), 3);
  randomize(m, 31);
  auto cond = live_conditioning(m, 32);
  const Tensor x = random_segment(m.config(), 33);
  const Tensor base = m.predict_velocity(x, 0.5, cond);
  std::vector<double> psi(cond.memory.psi.data().begin(), cond.memory.psi.data().end());
  psi[0] += 1.0;
  cond.memory.psi = Tensor(cond.memory.psi.dims(), psi);
  EXPECT_GT(max_abs_diff(m.predict_velocity(x, 0.5, cond), base), 1e-9);
}

TEST(PredictVelocityTest, BadMemoryShapeThrows) {
  FlowTransformer m(tiny_config(), 3);
  auto cond = live_conditioning(m, 1);
  cond.memory.psi = Tensor::zeros({3, 8});
  EXPECT_THROW(m.predict_velocity(random_segment(m.config(), 2), 0.1, cond), ShapeError);
}

TEST(PredictVelocityTest, FlowLossGradientMatchesFiniteDifferences) {
  FlowTransformer m(tiny_config(2), 7);
  randomize(m, 8, 0.2);
  const auto& c = m.config();
  const auto ids = prompt_of(c);
  std::mt19937_64 rng(9);
  const Tensor image = Tensor::uniform({c.frame_height, c.frame_width, c.channels}, rng, -1, 1);
  const Tensor prev = random_segment(c, 10);
  const Tensor x = random_segment(c, 11);
  const Tensor eps = standard_normal(x.dims(), rng);
  // Graph is rebuilt from the parameters every call, so memory and context
  // paths are differentiated too.
  auto loss = [&] {
    ContextStream s = m.open_stream(ids, image);
    m.absorb(s, prev);
    const FlowSample fs = interpolate(x, eps, 0.35);
    return fm_loss(m.predict_velocity(fs.x_t, fs.t, m.conditioning(s)),
                   velocity_target(x, eps));
  };
  std::vector<Tensor> leaves;
  for (auto& [name, t] : m.parameters()) {
    leaves.push_back(t);
  }
  const auto r = oracle::check_gradients(loss, leaves, 1e-5, 3, 12);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_GT(r.checked, 3 * leaves.size() / 2);
}

TEST(StreamTest, ConditioningTracksSegmentsAndBudget) {
  FlowTransformer m(ModelConfig{}, 1);
  const auto ids = prompt_of(m.config());
  ContextStream s = m.open_stream(ids, Tensor::zeros({16, 16, 1}));
  auto c0 = m.conditioning(s);
  EXPECT_TRUE(c0.short_ctx.empty());
  EXPECT_EQ(c0.segment_start, 0);
  EXPECT_EQ(c0.image_position, 0);
  NoGradGuard ng;
  const std::size_t expected[] = {64, 80, 84, 84, 84};
  for (std::size_t i = 0; i < 5; ++i) {
    m.absorb(s, random_segment(m.config(), 100 + i));
    const auto c = m.conditioning(s);
    EXPECT_EQ(c.short_ctx.size(), expected[i]);
    EXPECT_EQ(c.segment_start, static_cast<std::int64_t>(4 * (i + 1)));
    EXPECT_EQ(c.memory.n_segments_absorbed, i + 1);
    EXPECT_EQ(c.memory.psi.dims(), (Shape{16, 64}));
  }
}

TEST(StreamTest, DetachCutsHistory) {
  FlowTransformer m(tiny_config(), 1);
  const auto ids = prompt_of(m.config());
  ContextStream s = m.open_stream(ids, Tensor::zeros({8, 8, 1}));
  m.absorb(s, random_segment(m.config(), 1));
  ASSERT_FALSE(s.memory.psi.is_leaf());
  s.detach();
  EXPECT_TRUE(s.memory.psi.is_leaf());
  EXPECT_TRUE(s.recent[0].tokens.is_leaf());
}

TEST(HeadParameterTest, OnlyFinalNormAndHead) {
  FlowTransformer m(ModelConfig{}, 1);
  std::vector<std::string> head;
  for (auto& [name, t] : m.parameters()) {
    if (FlowTransformer::is_head_parameter(name)) {
      head.push_back(name);
    }
  }
  EXPECT_EQ(head, (std::vector<std::string>{"final_norm.gain", "final_norm.bias", "head.weight",
                                            "head.bias"}));
}

TEST(ModelSizeTest, DefaultParameterCount) {
  FlowTransformer m(ModelConfig{}, 1);
  EXPECT_EQ(m.parameters().total_values(), 418128u);
}
