#include "pfvg/layers.hpp"

#include <cmath>

#include "pfvg/errors.hpp"
#include "pfvg/ops.hpp"

namespace pfvg {

Tensor& ParameterStore::add(std::string name, Tensor init) {
  if (contains(name)) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  Tensor leaf = init.clone(true);
  entries_.emplace_back(std::move(name), std::move(leaf));
  return entries_.back().second;
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) {
      return true;
    }
  }
  return false;
}

Tensor& ParameterStore::at(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      return t;
    }
  }
  throw ConfigError("unknown parameter: " + name);
}

const Tensor& ParameterStore::at(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) {
    n += t.numel();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) {
    t.zero_grad();
  }
}

void ParameterStore::set_trainable(const std::function<bool(const std::string&)>& trainable) {
  for (auto& [name, t] : entries_) {
    const bool on = trainable(name);
    t.set_requires_grad(on);
    if (!on) {
      t.zero_grad();
    }
  }
}

std::vector<std::string> ParameterStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : entries_) {
    if (t.requires_grad()) {
      out.push_back(name);
    }
  }
  return out;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.size() != size()) {
    throw ShapeError("parameter stores differ in size");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& [name, t] = entries_[i];
    const auto& [oname, ot] = other.entries_[i];
    if (name != oname || t.dims() != ot.dims()) {
      throw ShapeError("parameter mismatch: " + name + " vs " + oname);
    }
    auto dst = t.mutable_data();
    std::copy(ot.data().begin(), ot.data().end(), dst.begin());
  }
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, std::mt19937_64& rng, double init_scale) {
  const double stddev = init_scale / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = store.add(name + ".weight", stddev > 0.0 ? Tensor::randn({in, out}, rng, stddev)
                                                      : Tensor::zeros({in, out}));
  l.bias = store.add(name + ".bias", Tensor::zeros({out}));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  return add(matmul(x, weight), bias);
}

NormParams NormParams::create(ParameterStore& store, const std::string& name, std::size_t width) {
  NormParams p;
  p.gain = store.add(name + ".gain", Tensor::full({width}, 1.0));
  p.bias = store.add(name + ".bias", Tensor::zeros({width}));
  return p;
}

Tensor NormParams::operator()(const Tensor& x, double eps) const {
  return layernorm(x, gain, bias, eps);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dims() != v.dims()) {
    throw ShapeError("attention: incompatible q " + shape_string(q.dims()) + ", k " +
                     shape_string(k.dims()) + ", v " + shape_string(v.dims()));
  }
  const std::size_t d = q.dim(1);
  if (n_heads == 0 || d % n_heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible into " +
                     std::to_string(n_heads) + " heads");
  }
  const std::size_t hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = n_heads == 1 ? q : slice_cols(q, h * hd, hd);
    Tensor kh = n_heads == 1 ? k : slice_cols(k, h * hd, hd);
    Tensor vh = n_heads == 1 ? v : slice_cols(v, h * hd, hd);
    Tensor weights = softmax_last(scale(matmul_nt(qh, kh), inv_sqrt));
    heads.push_back(matmul(weights, vh));
  }
  return n_heads == 1 ? heads[0] : concat_cols(heads);
}

Tensor rope_apply(const Tensor& x, std::span<const std::int64_t> positions,
                  std::size_t head_dim, double base) {
  if (x.rank() != 2 || positions.size() != x.dim(0)) {
    throw ShapeError("rope: need one position per row, got " + std::to_string(positions.size()) +
                     " for " + shape_string(x.dims()));
  }
  const std::size_t width = x.dim(1);
  if (head_dim == 0 || head_dim % 2 != 0 || width % head_dim != 0) {
    throw ShapeError("rope: head dim " + std::to_string(head_dim) + " must be even and divide " +
                     std::to_string(width));
  }
  const std::size_t rows = x.dim(0);
  const std::size_t pairs = head_dim / 2;
  std::vector<double> cos_t(rows * pairs), sin_t(rows * pairs);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < pairs; ++j) {
      const double theta =
          std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(positions[r]) * theta;
      cos_t[r * pairs + j] = std::cos(angle);
      sin_t[r * pairs + j] = std::sin(angle);
    }
  }
  const auto& in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; c += 2) {
      const std::size_t j = (c % head_dim) / 2;
      const double cs = cos_t[r * pairs + j], sn = sin_t[r * pairs + j];
      const double a = in[r * width + c], b = in[r * width + c + 1];
      out[r * width + c] = a * cs - b * sn;
      out[r * width + c + 1] = a * sn + b * cs;
    }
  }
  return make_op_result(
      x.dims(), std::move(out), {x},
      [rows, width, head_dim, pairs, cos_t = std::move(cos_t),
       sin_t = std::move(sin_t)](detail::Node& self) {
        double* gx = parent_grad(self, 0);
        if (!gx) {
          return;
        }
        const auto& g = self.pending;
        // Inverse rotation (transpose of the rotation matrix).
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < width; c += 2) {
            const std::size_t j = (c % head_dim) / 2;
            const double cs = cos_t[r * pairs + j], sn = sin_t[r * pairs + j];
            const double ga = g[r * width + c], gb = g[r * width + c + 1];
            gx[r * width + c] += ga * cs + gb * sn;
            gx[r * width + c + 1] += -ga * sn + gb * cs;
          }
        }
      });
}

} // namespace pfvg
