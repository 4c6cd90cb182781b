#include <gtest/gtest.h>

#include <set>

#include "pfvg/errors.hpp"
#include "pfvg/synthetic.hpp"

using namespace pfvg;

namespace {

const FrameGeometry kGeom{};

// True where frame `f` of the joined video shows the object colour.
std::vector<bool> visible_mask(const ClipSequence& v, std::size_t f) {
  const auto frames = concat_frames(v.clips);
  const double fg = static_cast<double>(static_cast<float>(2.0 * v.spec.object_intensity - 1.0));
  std::vector<bool> m(kGeom.height * kGeom.width);
  for (std::size_t p = 0; p < m.size(); ++p) {
    m[p] = frames[f][p] == fg;
  }
  return m;
}

SceneSpec moving_spec(std::size_t clips) {
  SceneSpec s;
  s.velocity_x = 2;
  s.velocity_y = -1;
  s.start_x = 5;
  s.start_y = 9;
  s.n_clips = clips;
  return s;
}

} // namespace

TEST(RenderTest, StaticSceneHasIdenticalFrames) {
  SceneSpec s;
  s.velocity_x = 0;
  s.velocity_y = 0;
  s.n_clips = 3;
  const auto frames = concat_frames(render_video(s, kGeom).clips);
  ASSERT_EQ(frames.size(), 12u);
  for (const auto& f : frames) {
    for (std::size_t i = 0; i < f.numel(); ++i) {
      ASSERT_EQ(f[i], frames[0][i]);
    }
  }
}

TEST(RenderTest, SameSpecRendersBitIdentically) {
  const SceneSpec s = random_scene(77, 4, kGeom);
  const ClipSequence a = render_video(s, kGeom), b = render_video(s, kGeom);
  ASSERT_EQ(a.n_clips(), 4u);
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < a.clips[c].numel(); ++i) {
      ASSERT_EQ(a.clips[c][i], b.clips[c][i]);
    }
  }
  EXPECT_EQ(a.prompt_ids, b.prompt_ids);
}

TEST(RenderTest, OccluderHidesObjectExactlyInInterval) {
  SceneSpec s = moving_spec(6);
  s.occluder_start = 8;
  s.occluder_end = 16;
  const ClipSequence v = render_video(s, kGeom);
  for (std::size_t f = 0; f < 24; ++f) {
    const auto [cx, cy] = object_center(s, kGeom, static_cast<std::int64_t>(f));
    const auto expected = object_mask(s, kGeom, cx, cy);
    const auto seen = visible_mask(v, f);
    if (f >= 8 && f < 16) {
      EXPECT_EQ(std::count(seen.begin(), seen.end(), true), 0) << "frame " << f;
    } else {
      EXPECT_EQ(seen, expected) << "frame " << f;
    }
  }
}

TEST(RenderTest, ReferenceImageIsFirstFrame) {
  const ClipSequence v = render_video(random_scene(5, 2, kGeom), kGeom);
  const auto frames = split_frames(v.clips[0]);
  EXPECT_EQ(v.reference_image.dims(), (Shape{16, 16, 1}));
  for (std::size_t i = 0; i < v.reference_image.numel(); ++i) {
    ASSERT_EQ(v.reference_image[i], frames[0][i]);
  }
}

TEST(RenderTest, ClipsContinueOneTrajectory) {
  const SceneSpec s = moving_spec(5);
  const ClipSequence v = render_video(s, kGeom);
  const Tensor joined = render_frames(s, kGeom, 0, 20);
  const auto frames = concat_frames(v.clips);
  const auto expected = split_frames(joined);
  for (std::size_t f = 0; f < 20; ++f) {
    for (std::size_t i = 0; i < frames[f].numel(); ++i) {
      ASSERT_EQ(frames[f][i], expected[f][i]) << "frame " << f;
    }
  }
  // Consecutive clips differ by one motion step at the boundary.
  for (std::size_t c = 0; c + 1 < 5; ++c) {
    const auto last = object_center(s, kGeom, static_cast<std::int64_t>(4 * c + 3));
    const auto next = object_center(s, kGeom, static_cast<std::int64_t>(4 * c + 4));
    EXPECT_LE(std::abs(next.first - last.first), 2);
    EXPECT_LE(std::abs(next.second - last.second), 1);
    EXPECT_NE(next, last);
  }
}

TEST(RenderTest, IdentityPersistsThroughOcclusion) {
  SceneSpec s = moving_spec(4);
  s.velocity_y = 0;
  s.start_x = 3;
  s.occluder_start = 2;
  s.occluder_end = 5;
  const ClipSequence v = render_video(s, kGeom);
  const auto before = visible_mask(v, 1);
  const auto after = visible_mask(v, 5);
  // Reappears shifted by the integrated motion: 4 frames at +2 px.
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) {
      const bool shifted = x >= 8 && before[y * 16 + x - 8];
      EXPECT_EQ(after[y * 16 + x], shifted) << x << "," << y;
    }
  }
}

TEST(RenderTest, ObjectReflectsAtBorders) {
  SceneSpec s;
  s.velocity_x = 2;
  s.start_x = 12;
  s.n_clips = 2;
  std::vector<std::int64_t> xs;
  for (std::int64_t f = 0; f < 5; ++f) {
    xs.push_back(object_center(s, kGeom, f).first);
  }
  // Centre range is [2, 13]; 12 + 2 overshoots by one and folds back.
  EXPECT_EQ(xs, (std::vector<std::int64_t>{12, 12, 10, 8, 6}));
}

TEST(RenderTest, InvalidSpecsRejected) {
  SceneSpec s;
  s.object_intensity = 1.5;
  EXPECT_THROW(render_video(s, kGeom), ConfigError);
  s = SceneSpec{};
  s.start_x = 0;
  EXPECT_THROW(render_video(s, kGeom), ConfigError);
  s = SceneSpec{};
  s.occluder_start = 2;
  s.occluder_end = 40;  // beyond the 4-frame video
  EXPECT_THROW(render_video(s, kGeom), ConfigError);
  s = SceneSpec{};
  s.velocity_x = 3;
  EXPECT_THROW(render_video(s, kGeom), ConfigError);
}

TEST(PromptTest, DerivedFromSpecFields) {
  SceneSpec a = moving_spec(1), b = moving_spec(1);
  b.shape = ShapeKind::Disc;
  const auto pa = prompt_ids_for(a), pb = prompt_ids_for(b);
  ASSERT_EQ(pa.size(), kPromptLength);
  EXPECT_NE(pa, pb);
  for (auto id : pa) {
    EXPECT_LT(id, kPromptVocab);
  }
  EXPECT_EQ(pa[0], 0u);
  EXPECT_EQ(pb[0], 2u);
}

TEST(CorpusTest, ExactHistogramCounts) {
  const auto corpus = make_corpus(25, {{1, 10}, {4, 10}, {16, 5}}, 3);
  ASSERT_EQ(corpus.size(), 25u);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& v : corpus) {
    ++counts[v.n_clips()];
  }
  EXPECT_EQ(counts, (std::map<std::size_t, std::size_t>{{1, 10}, {4, 10}, {16, 5}}));
}

TEST(CorpusTest, ProportionalWhenTotalsDiffer) {
  const auto corpus = make_corpus(10, {{1, 1}, {2, 1}}, 3);
  std::map<std::size_t, std::size_t> counts;
  for (const auto& v : corpus) {
    ++counts[v.n_clips()];
  }
  EXPECT_EQ(counts, (std::map<std::size_t, std::size_t>{{1, 5}, {2, 5}}));
}

TEST(CorpusTest, VideoSeedsDistinctAndIdsSequential) {
  const auto corpus = make_corpus(50, parse_histogram("1:10,2:10,4:20,8:10"), 0);
  std::set<std::uint64_t> seeds;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    seeds.insert(corpus[i].spec.seed);
    EXPECT_EQ(corpus[i].video_id, i);
  }
  EXPECT_EQ(seeds.size(), 50u);
}

TEST(CorpusTest, PixelsWithinRange) {
  for (const auto& v : make_corpus(20, {{2, 1}}, 9)) {
    for (const auto& c : v.clips) {
      for (double x : c.data()) {
        ASSERT_GE(x, -1.0);
        ASSERT_LE(x, 1.0);
      }
    }
  }
}

TEST(CorpusTest, SameSeedSameCorpus) {
  const auto a = make_corpus(8, {{1, 1}, {3, 1}}, 12);
  const auto b = make_corpus(8, {{1, 1}, {3, 1}}, 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].spec.seed, b[i].spec.seed);
    ASSERT_EQ(a[i].n_clips(), b[i].n_clips());
    for (std::size_t c = 0; c < a[i].n_clips(); ++c) {
      for (std::size_t k = 0; k < a[i].clips[c].numel(); ++k) {
        ASSERT_EQ(a[i].clips[c][k], b[i].clips[c][k]);
      }
    }
  }
}

TEST(CorpusTest, ZeroVideosRejected) {
  EXPECT_THROW(make_corpus(0, {{1, 1}}, 0), ConfigError);
}

TEST(HistogramTest, ParseAndFormat) {
  const auto h = parse_histogram("1:10,4:10,16:5");
  EXPECT_EQ(h, (ClipHistogram{{1, 10}, {4, 10}, {16, 5}}));
  EXPECT_EQ(format_histogram(h), "1:10,4:10,16:5");
  EXPECT_THROW(parse_histogram("1-10"), ConfigError);
  EXPECT_THROW(parse_histogram("0:3"), ConfigError);
  EXPECT_THROW(parse_histogram(""), ConfigError);
}

TEST(FramesTest, SplitAndConcat) {
  const ClipSequence v = render_video(moving_spec(3), kGeom);
  const auto frames = concat_frames(v.clips);
  ASSERT_EQ(frames.size(), 12u);
  EXPECT_EQ(frames[0].dims(), (Shape{16, 16, 1}));
  EXPECT_THROW(split_frames(Tensor::zeros({4, 4})), ShapeError);
}

TEST(MixSeedTest, DistinctAndStable) {
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
  EXPECT_NE(mix_seed(0, 0), mix_seed(0, 1));
}
