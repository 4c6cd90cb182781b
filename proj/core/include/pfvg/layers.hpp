#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pfvg/tensor.hpp"

namespace pfvg {

/// Ordered table of named trainable leaves. Insertion order is the
/// serialization and optimizer iteration order.
class ParameterStore {
 public:
  Tensor& add(std::string name, Tensor init);

  bool contains(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_values() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  /// Marks exactly the parameters accepted by `trainable` as requiring grad;
  /// the rest are frozen and their grad buffers cleared.
  void set_trainable(const std::function<bool(const std::string&)>& trainable);
  std::vector<std::string> trainable_names() const;

  /// Overwrites values from another store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// y = x W + b, W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, std::mt19937_64& rng, double init_scale = 1.0);
  Tensor operator()(const Tensor& x) const;
};

/// Affine layernorm parameters over the last axis.
struct NormParams {
  Tensor gain;
  Tensor bias;

  static NormParams create(ParameterStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x, double eps = 1e-6) const;
};

/// Scaled dot-product attention split over `n_heads` column groups.
/// q [Lq x d], k and v [Lk x d] -> [Lq x d].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t n_heads);

/// Rotary position embedding applied independently inside each head of
/// width `head_dim`: the pair (2j, 2j+1) of a row at position m is rotated by
/// m * base^(-2j/head_dim).
Tensor rope_apply(const Tensor& x, std::span<const std::int64_t> positions,
                  std::size_t head_dim, double base = 10000.0);

} // namespace pfvg
