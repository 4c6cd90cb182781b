#include "pfvg/model.hpp"

#include <cmath>
#include <numbers>

#include "pfvg/errors.hpp"
#include "pfvg/ops.hpp"

namespace pfvg {

namespace {

constexpr double kNormEps = 1e-6;

std::size_t parse_size(const std::map<std::string, std::string>& kv, const std::string& key,
                       std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) {
    return fallback;
  }
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) {
      throw std::invalid_argument(key);
    }
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("invalid integer for " + key + ": '" + it->second + "'", key);
  }
}

} // namespace

SqueezeVariant parse_variant(const std::string& s) {
  if (s == "A" || s == "a") {
    return SqueezeVariant::A;
  }
  if (s == "B" || s == "b") {
    return SqueezeVariant::B;
  }
  if (s == "C" || s == "c") {
    return SqueezeVariant::C;
  }
  throw ConfigError("unknown squeeze variant '" + s + "' (expected A, B or C)", "variant");
}

std::string to_string(SqueezeVariant v) {
  switch (v) {
    case SqueezeVariant::A:
      return "A";
    case SqueezeVariant::B:
      return "B";
    case SqueezeVariant::C:
      return "C";
  }
  return "?";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("model config: " + key + " " + why, key);
  };
  if (d_model == 0 || n_heads == 0 || d_model % (2 * n_heads) != 0) {
    fail("d_model", "must be divisible by 2 * n_heads");
  }
  if (n_layers == 0) {
    fail("n_layers", "must be >= 1");
  }
  if (patch_size == 0 || frame_height % patch_size != 0 || frame_width % patch_size != 0) {
    fail("patch_size", "must tile the frame exactly");
  }
  if (frames_per_segment == 0 || channels == 0) {
    fail("frames_per_segment", "and channels must be positive");
  }
  if (prompt_vocab == 0 || prompt_len == 0) {
    fail("prompt_len", "and prompt_vocab must be positive");
  }
  if (mlp_ratio == 0) {
    fail("mlp_ratio", "must be positive");
  }
  const auto tokens = tokens_per_segment();
  if (memory_tokens == 0 || tokens < memory_tokens || tokens % memory_tokens != 0) {
    fail("memory_tokens", "must divide the segment token count");
  }
  if (memorize_window == 0 || tokens % memorize_window != 0 ||
      memorize_window % (tokens / memory_tokens) != 0) {
    fail("memorize_window", "must divide the segment and align with memory pooling");
  }
  if (prompt_len + tokens_per_frame() < memory_tokens) {
    fail("memory_tokens", "exceeds prompt + image token count");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"d_model", std::to_string(d_model)},
      {"n_heads", std::to_string(n_heads)},
      {"n_layers", std::to_string(n_layers)},
      {"patch_size", std::to_string(patch_size)},
      {"frames_per_segment", std::to_string(frames_per_segment)},
      {"frame_height", std::to_string(frame_height)},
      {"frame_width", std::to_string(frame_width)},
      {"channels", std::to_string(channels)},
      {"prompt_vocab", std::to_string(prompt_vocab)},
      {"prompt_len", std::to_string(prompt_len)},
      {"memory_tokens", std::to_string(memory_tokens)},
      {"memorize_window", std::to_string(memorize_window)},
      {"mlp_ratio", std::to_string(mlp_ratio)},
      {"variant", to_string(variant)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  c.d_model = parse_size(kv, "d_model", c.d_model);
  c.n_heads = parse_size(kv, "n_heads", c.n_heads);
  c.n_layers = parse_size(kv, "n_layers", c.n_layers);
  c.patch_size = parse_size(kv, "patch_size", c.patch_size);
  c.frames_per_segment = parse_size(kv, "frames_per_segment", c.frames_per_segment);
  c.frame_height = parse_size(kv, "frame_height", c.frame_height);
  c.frame_width = parse_size(kv, "frame_width", c.frame_width);
  c.channels = parse_size(kv, "channels", c.channels);
  c.prompt_vocab = parse_size(kv, "prompt_vocab", c.prompt_vocab);
  c.prompt_len = parse_size(kv, "prompt_len", c.prompt_len);
  c.memory_tokens = parse_size(kv, "memory_tokens", c.memory_tokens);
  c.memorize_window = parse_size(kv, "memorize_window", c.memorize_window);
  c.mlp_ratio = parse_size(kv, "mlp_ratio", c.mlp_ratio);
  if (auto it = kv.find("variant"); it != kv.end()) {
    c.variant = parse_variant(it->second);
  }
  return c;
}

void validate_segment(const ModelConfig& cfg, const Tensor& segment) {
  const Shape want{cfg.frames_per_segment, cfg.frame_height, cfg.frame_width, cfg.channels};
  if (!segment.defined() || segment.dims() != want) {
    throw ShapeError("segment must be " + shape_string(want) + ", got " +
                     (segment.defined() ? shape_string(segment.dims()) : "undefined"));
  }
}

void ContextStream::detach() {
  for (auto& seg : recent) {
    seg.tokens = seg.tokens.detach();
  }
  memory.psi = memory.psi.detach();
  prompt_emb = prompt_emb.detach();
  image_emb = image_emb.detach();
}

FlowTransformer::FlowTransformer(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  schedule_.token_budget =
      schedule_.compressed_tokens(cfg_.frames_per_segment, cfg_.grid_h(), cfg_.grid_w());
  schedule_.validate(cfg_.frames_per_segment, cfg_.grid_h(), cfg_.grid_w());

  std::mt19937_64 rng(seed);
  const auto d = cfg_.d_model;
  patch_embed_ = Linear::create(store_, "patch_embed", cfg_.patch_dim(), d, rng);
  spatial_embed_ = store_.add("spatial_embed", Tensor::randn({cfg_.tokens_per_frame(), d}, rng, 0.02));
  prompt_table_ = store_.add("prompt_table", Tensor::randn({cfg_.prompt_vocab, d}, rng, 0.02));
  time_in_ = Linear::create(store_, "time.in", d, d, rng);
  time_out_ = Linear::create(store_, "time.out", d, d, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const auto p = "block" + std::to_string(l);
    Block b;
    b.modulation = Linear::create(store_, p + ".modulation", d, 6 * d, rng, 0.0);
    b.self_q = Linear::create(store_, p + ".self.q", d, d, rng);
    b.self_k = Linear::create(store_, p + ".self.k", d, d, rng);
    b.self_v = Linear::create(store_, p + ".self.v", d, d, rng);
    b.self_o = Linear::create(store_, p + ".self.o", d, d, rng, 0.5);
    b.cross_q = Linear::create(store_, p + ".cross.q", d, d, rng);
    b.cross_k = Linear::create(store_, p + ".cross.k", d, d, rng);
    b.cross_v = Linear::create(store_, p + ".cross.v", d, d, rng);
    b.cross_o = Linear::create(store_, p + ".cross.o", d, d, rng, 0.5);
    b.mlp_in = Linear::create(store_, p + ".mlp.in", d, cfg_.mlp_ratio * d, rng);
    b.mlp_out = Linear::create(store_, p + ".mlp.out", cfg_.mlp_ratio * d, d, rng, 0.5);
    blocks_.push_back(std::move(b));
  }
  pack_.emplace(store_, cfg_, rng);
  final_norm_ = NormParams::create(store_, "final_norm", d);
  head_ = Linear::create(store_, "head", d, cfg_.patch_dim(), rng, 0.5);
}

bool FlowTransformer::is_head_parameter(const std::string& name) {
  return name == "final_norm.gain" || name == "final_norm.bias" || name == "head.weight" ||
         name == "head.bias";
}

Shape FlowTransformer::segment_shape() const {
  return {cfg_.frames_per_segment, cfg_.frame_height, cfg_.frame_width, cfg_.channels};
}

Tensor FlowTransformer::extract_patches(const Tensor& segment) const {
  if (segment.rank() != 4 || segment.dim(1) != cfg_.frame_height ||
      segment.dim(2) != cfg_.frame_width || segment.dim(3) != cfg_.channels) {
    throw ShapeError("patchify: frames must be [* x " + std::to_string(cfg_.frame_height) + " x " +
                     std::to_string(cfg_.frame_width) + " x " + std::to_string(cfg_.channels) +
                     "], got " + shape_string(segment.dims()));
  }
  const std::size_t frames = segment.dim(0);
  const std::size_t p = cfg_.patch_size, c = cfg_.channels;
  const std::size_t gh = cfg_.grid_h(), gw = cfg_.grid_w();
  const std::size_t h = cfg_.frame_height, w = cfg_.frame_width;
  const std::size_t pd = cfg_.patch_dim();
  const std::size_t rows = frames * gh * gw;
  // index[o] = source offset of output element o
  std::vector<std::size_t> index(rows * pd);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const std::size_t row = (f * gh + gy) * gw + gx;
        for (std::size_t py = 0; py < p; ++py) {
          for (std::size_t px = 0; px < p; ++px) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t col = (py * p + px) * c + ch;
              index[row * pd + col] = ((f * h + gy * p + py) * w + gx * p + px) * c + ch;
            }
          }
        }
      }
    }
  }
  const auto& src = segment.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    out[i] = src[index[i]];
  }
  return make_op_result({rows, pd}, std::move(out), {segment}, [index](detail::Node& self) {
    if (double* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < index.size(); ++i) {
        g[index[i]] += self.pending[i];
      }
    }
  });
}

Tensor FlowTransformer::unpatchify(const Tensor& patches) const {
  const std::size_t pd = cfg_.patch_dim();
  const std::size_t tpf = cfg_.tokens_per_frame();
  if (patches.rank() != 2 || patches.dim(1) != pd || patches.dim(0) % tpf != 0) {
    throw ShapeError("unpatchify: expected [frames*" + std::to_string(tpf) + " x " +
                     std::to_string(pd) + "], got " + shape_string(patches.dims()));
  }
  const std::size_t frames = patches.dim(0) / tpf;
  const std::size_t p = cfg_.patch_size, c = cfg_.channels;
  const std::size_t gh = cfg_.grid_h(), gw = cfg_.grid_w();
  const std::size_t h = cfg_.frame_height, w = cfg_.frame_width;
  // index[o] = patch element feeding frame element o
  std::vector<std::size_t> index(patches.numel());
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const std::size_t row = (f * gh + gy) * gw + gx;
        for (std::size_t py = 0; py < p; ++py) {
          for (std::size_t px = 0; px < p; ++px) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              index[((f * h + gy * p + py) * w + gx * p + px) * c + ch] =
                  row * pd + (py * p + px) * c + ch;
            }
          }
        }
      }
    }
  }
  const auto& src = patches.data();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    out[i] = src[index[i]];
  }
  return make_op_result({frames, h, w, c}, std::move(out), {patches},
                        [index](detail::Node& self) {
                          if (double* g = parent_grad(self, 0)) {
                            for (std::size_t i = 0; i < index.size(); ++i) {
                              g[index[i]] += self.pending[i];
                            }
                          }
                        });
}

TokenSequence FlowTransformer::patchify(const Tensor& segment, std::int64_t start_frame) const {
  Tensor patches = extract_patches(segment);
  const std::size_t frames = segment.dim(0);
  std::vector<Tensor> tiles(frames, spatial_embed_);
  Tensor spatial = frames == 1 ? spatial_embed_ : concat_rows(tiles);
  TokenSequence out;
  out.tokens = add(patch_embed_(patches), spatial);
  out.positions.reserve(patches.dim(0));
  const std::size_t tpf = cfg_.tokens_per_frame();
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < tpf; ++i) {
      out.positions.push_back(start_frame + static_cast<std::int64_t>(f));
    }
  }
  return out;
}

Tensor FlowTransformer::embed_prompt(std::span<const std::size_t> ids) const {
  if (ids.size() != cfg_.prompt_len) {
    throw ShapeError("prompt must have " + std::to_string(cfg_.prompt_len) + " ids, got " +
                     std::to_string(ids.size()));
  }
  return gather_rows(prompt_table_, ids);
}

Tensor FlowTransformer::embed_image(const Tensor& image) const {
  const Shape want{cfg_.frame_height, cfg_.frame_width, cfg_.channels};
  if (image.dims() != want) {
    throw ShapeError("reference image must be " + shape_string(want) + ", got " +
                     shape_string(image.dims()));
  }
  Shape one_frame{1, cfg_.frame_height, cfg_.frame_width, cfg_.channels};
  return patchify(reshape(image, one_frame), 0).tokens;
}

Tensor FlowTransformer::timestep_embedding(double t) const {
  const std::size_t d = cfg_.d_model;
  const std::size_t half = d / 2;
  std::vector<double> feat(d);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    feat[i] = std::sin(1000.0 * t * freq);
    feat[half + i] = std::cos(1000.0 * t * freq);
  }
  Tensor f({1, d}, std::move(feat));
  return time_out_(silu(time_in_(f)));
}

Tensor FlowTransformer::modulate(const Tensor& x, const Tensor& mod, std::size_t slot) const {
  const std::size_t d = cfg_.d_model;
  Tensor shift = reshape(slice_cols(mod, 2 * slot * d, d), {d});
  Tensor gain = add_scalar(reshape(slice_cols(mod, (2 * slot + 1) * d, d), {d}), 1.0);
  return add(mul(layernorm(x, Tensor(), Tensor(), kNormEps), gain), shift);
}

TokenSequence FlowTransformer::attention_block(std::size_t layer, const TokenSequence& x,
                                               const ConditioningBundle& cond,
                                               const Tensor& temb) const {
  if (layer >= blocks_.size()) {
    throw ShapeError("attention_block: layer " + std::to_string(layer) + " out of range");
  }
  const auto d = cfg_.d_model;
  if (x.tokens.rank() != 2 || x.tokens.dim(1) != d || x.size() != x.tokens.dim(0)) {
    throw ShapeError("attention_block: tokens must be [L x " + std::to_string(d) +
                     "] with one position each");
  }
  const auto& b = blocks_[layer];
  Tensor mod = b.modulation(silu(temb));

  // Self-attention over [image | short context | x]; image sits at index 0.
  std::vector<Tensor> kv_parts{cond.image_emb};
  std::vector<std::int64_t> kv_pos(cond.image_emb.dim(0), cond.image_position);
  if (!cond.short_ctx.empty()) {
    kv_parts.push_back(cond.short_ctx.tokens);
    kv_pos.insert(kv_pos.end(), cond.short_ctx.positions.begin(), cond.short_ctx.positions.end());
  }
  const std::size_t x_offset = kv_pos.size();
  kv_parts.push_back(x.tokens);
  kv_pos.insert(kv_pos.end(), x.positions.begin(), x.positions.end());

  Tensor h_all = modulate(concat_rows(kv_parts), mod, 0);
  Tensor h_x = slice_rows(h_all, x_offset, x.size());
  Tensor q = rope_apply(b.self_q(h_x), x.positions, cfg_.head_dim());
  Tensor k = rope_apply(b.self_k(h_all), kv_pos, cfg_.head_dim());
  Tensor v = b.self_v(h_all);
  Tensor x1 = add(x.tokens, b.self_o(multi_head_attention(q, k, v, cfg_.n_heads)));

  // Cross-attention to non-positional conditioning.
  Tensor ctx = layernorm(concat_rows({cond.memory.psi, cond.prompt_emb, cond.image_emb}), Tensor(),
                         Tensor(), kNormEps);
  Tensor h2 = modulate(x1, mod, 1);
  Tensor x2 = add(x1, b.cross_o(multi_head_attention(b.cross_q(h2), b.cross_k(ctx),
                                                     b.cross_v(ctx), cfg_.n_heads)));

  Tensor h3 = modulate(x2, mod, 2);
  Tensor x3 = add(x2, b.mlp_out(gelu(b.mlp_in(h3))));
  return TokenSequence{x3, x.positions};
}

Tensor FlowTransformer::predict_velocity(const Tensor& x_t, double t,
                                         const ConditioningBundle& cond) const {
  validate_segment(cfg_, x_t);
  if (!cond.memory.psi.defined() || cond.memory.psi.dims() != Shape{cfg_.memory_tokens, cfg_.d_model}) {
    throw ShapeError("conditioning memory must hold " + std::to_string(cfg_.memory_tokens) +
                     " tokens");
  }
  TokenSequence xs = patchify(x_t, cond.segment_start);
  Tensor temb = timestep_embedding(t);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    xs = attention_block(l, xs, cond, temb);
  }
  return unpatchify(head_(final_norm_(xs.tokens)));
}

VelocityField FlowTransformer::field(const ConditioningBundle& cond) const {
  return [this, cond](const Tensor& x_t, double t) { return predict_velocity(x_t, t, cond); };
}

ContextStream FlowTransformer::open_stream(std::span<const std::size_t> prompt_ids,
                                           const Tensor& reference_image) const {
  ContextStream s;
  s.prompt_emb = embed_prompt(prompt_ids);
  s.image_emb = embed_image(reference_image);
  s.memory = pack_->init_memory(s.prompt_emb, s.image_emb);
  return s;
}

void FlowTransformer::absorb(ContextStream& stream, const Tensor& segment) const {
  validate_segment(cfg_, segment);
  const auto start = static_cast<std::int64_t>(stream.segments * cfg_.frames_per_segment);
  TokenSequence tokens = patchify(segment, start);
  stream.memory = pack_->update_memory(stream.memory, tokens);
  stream.recent.push_back(std::move(tokens));
  if (stream.recent.size() > schedule_.depth()) {
    stream.recent.erase(stream.recent.begin());
  }
  ++stream.segments;
}

ConditioningBundle FlowTransformer::conditioning(const ContextStream& stream) const {
  ConditioningBundle c;
  c.short_ctx = framepack_compress(stream.recent, schedule_, cfg_.frames_per_segment,
                                   cfg_.grid_h(), cfg_.grid_w());
  c.memory = stream.memory;
  c.prompt_emb = stream.prompt_emb;
  c.image_emb = stream.image_emb;
  c.segment_start = static_cast<std::int64_t>(stream.segments * cfg_.frames_per_segment);
  return c;
}

} // namespace pfvg
