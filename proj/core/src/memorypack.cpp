#include "pfvg/memorypack.hpp"

#include <cmath>

#include "pfvg/errors.hpp"
#include "pfvg/ops.hpp"

namespace pfvg {

namespace {

constexpr double kNormEps = 1e-6;

bool is_power_of_four(std::size_t f) {
  if (f == 0) {
    return false;
  }
  while (f % 4 == 0) {
    f /= 4;
  }
  return f == 1;
}

std::size_t pool_side(std::size_t factor) {
  std::size_t s = 1;
  while (s * s < factor) {
    s *= 2;
  }
  return s;
}

SemanticPack::AttentionWeights make_attention(ParameterStore& store, const std::string& prefix,
                                              std::size_t d, std::mt19937_64& rng) {
  return {Linear::create(store, prefix + ".q", d, d, rng),
          Linear::create(store, prefix + ".k", d, d, rng),
          Linear::create(store, prefix + ".v", d, d, rng),
          Linear::create(store, prefix + ".o", d, d, rng, 0.5)};
}

Tensor plain_norm(const Tensor& x) {
  return layernorm(x, Tensor(), Tensor(), kNormEps);
}

} // namespace

std::size_t FramePackSchedule::compressed_tokens(std::size_t frames, std::size_t grid_h,
                                                 std::size_t grid_w) const {
  std::size_t total = 0;
  for (auto f : factors) {
    total += frames * grid_h * grid_w / f;
  }
  return total;
}

void FramePackSchedule::validate(std::size_t frames, std::size_t grid_h,
                                 std::size_t grid_w) const {
  if (factors.empty()) {
    throw ConfigError("framepack schedule is empty");
  }
  for (std::size_t r = 0; r < factors.size(); ++r) {
    const auto f = factors[r];
    if (!is_power_of_four(f)) {
      throw ConfigError("framepack factor " + std::to_string(f) + " is not a power of 4");
    }
    if (r > 0 && f < factors[r - 1]) {
      throw ConfigError("framepack factors must be non-decreasing with recency rank");
    }
    const auto s = pool_side(f);
    if (grid_h % s != 0 || grid_w % s != 0) {
      throw ConfigError("framepack factor " + std::to_string(f) + " does not tile a " +
                        std::to_string(grid_h) + "x" + std::to_string(grid_w) + " patch grid");
    }
  }
  if (compressed_tokens(frames, grid_h, grid_w) > token_budget) {
    throw ConfigError("framepack schedule exceeds its token budget of " +
                      std::to_string(token_budget));
  }
}

TokenSequence framepack_compress(const std::vector<TokenSequence>& history,
                                 const FramePackSchedule& schedule, std::size_t frames,
                                 std::size_t grid_h, std::size_t grid_w) {
  schedule.validate(frames, grid_h, grid_w);
  if (history.empty()) {
    return {};
  }
  const std::size_t tpf = grid_h * grid_w;
  const std::size_t kept = std::min(history.size(), schedule.depth());
  std::vector<Tensor> parts;
  std::vector<std::int64_t> positions;
  // Chronological output: oldest retained segment first.
  for (std::size_t back = kept; back-- > 0;) {
    const auto& seg = history[history.size() - 1 - back];
    if (seg.size() != frames * tpf) {
      throw ShapeError("framepack: segment has " + std::to_string(seg.size()) +
                       " tokens, expected " + std::to_string(frames * tpf));
    }
    const auto factor = schedule.factors[back];
    if (factor == 1) {
      parts.push_back(seg.tokens);
      positions.insert(positions.end(), seg.positions.begin(), seg.positions.end());
      continue;
    }
    const auto s = pool_side(factor);
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t by = 0; by < grid_h / s; ++by) {
        for (std::size_t bx = 0; bx < grid_w / s; ++bx) {
          std::vector<std::size_t> g;
          std::int64_t pos_sum = 0;
          for (std::size_t dy = 0; dy < s; ++dy) {
            for (std::size_t dx = 0; dx < s; ++dx) {
              const auto idx = f * tpf + (by * s + dy) * grid_w + (bx * s + dx);
              g.push_back(idx);
              pos_sum += seg.positions[idx];
            }
          }
          const auto n = static_cast<std::int64_t>(g.size());
          positions.push_back(static_cast<std::int64_t>(
              std::llround(static_cast<double>(pos_sum) / static_cast<double>(n))));
          groups.push_back(std::move(g));
        }
      }
    }
    parts.push_back(pool_rows(seg.tokens, groups));
  }
  return TokenSequence{parts.size() == 1 ? parts[0] : concat_rows(parts), std::move(positions)};
}

SemanticPack::SemanticPack(ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  const auto d = cfg.d_model;
  const auto k = cfg.memory_tokens;
  mem_attn_ = make_attention(store, "memory.memorize", d, rng);
  mem_proj_ = Linear::create(store, "memory.memorize.proj", d, d, rng);
  sq_attn_ = make_attention(store, "memory.squeeze", d, rng);
  const auto group = cfg.tokens_per_segment() / k;
  const auto first_window = cfg.memorize_window / group;
  const auto mix_in = k + first_window;
  sq_query_mix_ = store.add("memory.squeeze.query_mix",
                            Tensor::randn({k, mix_in}, rng, 1.0 / std::sqrt(double(mix_in))));
  const auto init_in = cfg.prompt_len + cfg.tokens_per_frame();
  init_mix_ = store.add("memory.init.mix",
                        Tensor::randn({k, init_in}, rng, 1.0 / std::sqrt(double(init_in))));
  init_bias_ = store.add("memory.init.bias", Tensor::zeros({k, d}));
}

Tensor SemanticPack::memorize(const TokenSequence& segment_tokens) const {
  return memorize(segment_tokens, cfg_.memorize_window);
}

Tensor SemanticPack::memorize(const TokenSequence& segment_tokens,
                              std::size_t window_size) const {
  const auto& x = segment_tokens.tokens;
  if (!x.defined() || x.rank() != 2 || x.dim(1) != cfg_.d_model) {
    throw ShapeError("memorize: expected [L x " + std::to_string(cfg_.d_model) + "] tokens");
  }
  const std::size_t len = x.dim(0);
  const std::size_t k = cfg_.memory_tokens;
  if (len < k) {
    throw ConfigError("memorize: " + std::to_string(len) + " tokens cannot yield " +
                      std::to_string(k) + " memory tokens");
  }
  if (window_size == 0 || len % window_size != 0) {
    throw ConfigError("memorize: window " + std::to_string(window_size) + " does not divide " +
                      std::to_string(len) + " tokens");
  }
  if (len % k != 0 || window_size % (len / k) != 0) {
    throw ConfigError("memorize: pooling " + std::to_string(len) + " tokens to " +
                      std::to_string(k) + " would straddle windows of " +
                      std::to_string(window_size));
  }
  std::vector<Tensor> windows;
  for (std::size_t w = 0; w < len / window_size; ++w) {
    Tensor xw = len == window_size ? x : slice_rows(x, w * window_size, window_size);
    Tensor h = plain_norm(xw);
    Tensor a = multi_head_attention(mem_attn_.q(h), mem_attn_.k(h), mem_attn_.v(h), cfg_.n_heads);
    windows.push_back(add(xw, mem_attn_.o(a)));
  }
  Tensor attended = windows.size() == 1 ? windows[0] : concat_rows(windows);
  const std::size_t group = len / k;
  std::vector<std::vector<std::size_t>> groups(k);
  for (std::size_t g = 0; g < k; ++g) {
    for (std::size_t i = 0; i < group; ++i) {
      groups[g].push_back(g * group + i);
    }
  }
  return mem_proj_(pool_rows(attended, groups));
}

MemoryState SemanticPack::init_memory(const Tensor& prompt_emb, const Tensor& image_emb) const {
  if (prompt_emb.rank() != 2 || image_emb.rank() != 2 ||
      prompt_emb.dim(1) != cfg_.d_model || image_emb.dim(1) != cfg_.d_model) {
    throw ShapeError("init_memory: embedding dims " + shape_string(prompt_emb.dims()) + " and " +
                     shape_string(image_emb.dims()) + " must both be [* x " +
                     std::to_string(cfg_.d_model) + "]");
  }
  const auto rows = prompt_emb.dim(0) + image_emb.dim(0);
  if (rows < cfg_.memory_tokens) {
    throw ConfigError("init_memory: " + std::to_string(rows) + " prompt+image tokens < K = " +
                      std::to_string(cfg_.memory_tokens));
  }
  if (rows != init_mix_.dim(1)) {
    throw ShapeError("init_memory: expected " + std::to_string(init_mix_.dim(1)) +
                     " prompt+image tokens, got " + std::to_string(rows));
  }
  Tensor joint = concat_rows({prompt_emb, image_emb});
  return MemoryState{add(matmul(init_mix_, joint), init_bias_), 0};
}

MemoryState SemanticPack::squeeze(const MemoryState& state, const Tensor& mem_tokens,
                                  SqueezeVariant variant) const {
  const Shape want{cfg_.memory_tokens, cfg_.d_model};
  if (state.psi.dims() != want || mem_tokens.dims() != want) {
    throw ShapeError("squeeze: psi " + shape_string(state.psi.dims()) + " and memory tokens " +
                     shape_string(mem_tokens.dims()) + " must both be " + shape_string(want));
  }
  Tensor query_src, kv_src, residual;
  switch (variant) {
    case SqueezeVariant::A:
      query_src = mem_tokens;
      kv_src = state.psi;
      residual = mem_tokens;
      break;
    case SqueezeVariant::B:
      query_src = state.psi;
      kv_src = mem_tokens;
      residual = state.psi;
      break;
    case SqueezeVariant::C: {
      const auto first = sq_query_mix_.dim(1) - cfg_.memory_tokens;
      query_src = matmul(sq_query_mix_, concat_rows({state.psi, slice_rows(mem_tokens, 0, first)}));
      kv_src = mem_tokens;
      residual = state.psi;
      break;
    }
  }
  Tensor hq = plain_norm(query_src);
  Tensor hkv = plain_norm(kv_src);
  Tensor a = multi_head_attention(sq_attn_.q(hq), sq_attn_.k(hkv), sq_attn_.v(hkv), cfg_.n_heads);
  return MemoryState{add(residual, sq_attn_.o(a)), state.n_segments_absorbed + 1};
}

MemoryState SemanticPack::update_memory(const MemoryState& state,
                                        const TokenSequence& new_segment) const {
  return squeeze(state, memorize(new_segment));
}

Tensor full_history_attention(const Tensor& history_tokens, const Tensor& wq, const Tensor& wk,
                              const Tensor& wv, std::size_t n_heads) {
  return multi_head_attention(matmul(history_tokens, wq), matmul(history_tokens, wk),
                              matmul(history_tokens, wv), n_heads);
}

} // namespace pfvg
