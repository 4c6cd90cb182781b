// Timing harnesses: memory update against full-history attention, and the
// velocity model's forward and training passes.

#include <benchmark/benchmark.h>

#include "pfvg/flow.hpp"
#include "pfvg/model.hpp"
#include "pfvg/ops.hpp"
#include "pfvg/synthetic.hpp"

using namespace pfvg;

namespace {

// One update_memory call after `history` segments have been absorbed.
void BM_UpdateMemory(benchmark::State& state) {
  NoGradGuard no_grad;
  ModelConfig cfg;
  cfg.variant = static_cast<SqueezeVariant>(state.range(1));
  FlowTransformer model(cfg, 1);
  const auto& pack = model.semantic_pack();
  std::mt19937_64 rng(2);
  const auto history = static_cast<std::size_t>(state.range(0));
  MemoryState mem = pack.init_memory(Tensor::randn({cfg.prompt_len, cfg.d_model}, rng),
                                     Tensor::randn({cfg.tokens_per_frame(), cfg.d_model}, rng));
  for (std::size_t i = 0; i < history; ++i) {
    mem = pack.update_memory(mem, model.patchify(Tensor::uniform(model.segment_shape(), rng, -1, 1),
                                                 static_cast<std::int64_t>(4 * i)));
  }
  const TokenSequence next = model.patchify(Tensor::uniform(model.segment_shape(), rng, -1, 1),
                                            static_cast<std::int64_t>(4 * history));
  for (auto _ : state) {
    benchmark::DoNotOptimize(pack.update_memory(mem, next));
  }
  state.counters["state_tokens"] = static_cast<double>(mem.psi.dim(0));
}
BENCHMARK(BM_UpdateMemory)
    ->ArgsProduct({{8, 16, 32, 64}, {0, 1, 2}})
    ->ArgNames({"history", "variant"})
    ->Unit(benchmark::kMicrosecond);

// Quadratic alternative: one attention pass over every historical token.
void BM_FullHistoryAttention(benchmark::State& state) {
  NoGradGuard no_grad;
  const std::size_t d = 64, tokens = 64 * static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  Tensor hist = Tensor::randn({tokens, d}, rng);
  Tensor wq = Tensor::randn({d, d}, rng, 0.125), wk = Tensor::randn({d, d}, rng, 0.125),
         wv = Tensor::randn({d, d}, rng, 0.125);
  for (auto _ : state) {
    benchmark::DoNotOptimize(full_history_attention(hist, wq, wk, wv, 4));
  }
}
BENCHMARK(BM_FullHistoryAttention)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

struct ModelFixture {
  ModelConfig cfg;
  FlowTransformer model{cfg, 4};
  ClipSequence video = render_video(random_scene(5, 4, {}), {});
  ContextStream stream = model.open_stream(video.prompt_ids, video.reference_image);
  ModelFixture() {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < 3; ++i) {
      model.absorb(stream, video.clips[i]);
    }
    stream.detach();
  }
};

void BM_PredictVelocityForward(benchmark::State& state) {
  ModelFixture f;
  NoGradGuard no_grad;
  const auto cond = f.model.conditioning(f.stream);
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.model.predict_velocity(f.video.clips[3], 0.5, cond));
  }
}
BENCHMARK(BM_PredictVelocityForward)->Unit(benchmark::kMillisecond);

void BM_ClipTrainingStep(benchmark::State& state) {
  ModelFixture f;
  const auto cond = f.model.conditioning(f.stream);
  std::mt19937_64 rng(6);
  const Tensor& clip = f.video.clips[3];
  for (auto _ : state) {
    Tensor eps = standard_normal(clip.dims(), rng);
    const FlowSample s = interpolate(clip, eps, 0.4);
    Tensor loss = fm_loss(f.model.predict_velocity(s.x_t, 0.4, cond), velocity_target(clip, eps));
    backward(loss);
    f.model.parameters().zero_grad();
  }
}
BENCHMARK(BM_ClipTrainingStep)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
