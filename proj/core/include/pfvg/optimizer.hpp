#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pfvg/layers.hpp"

namespace pfvg {

struct AdamWConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First and second moments of one parameter.
struct Moments {
  Shape dims;
  std::vector<double> m;
  std::vector<double> v;
};

/// Decoupled-weight-decay Adam over the trainable entries of a store.
/// Moments are created lazily the first time a parameter is stepped.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter with requires_grad using its accumulated grad
  /// (zero when none was produced), then increments the step counter.
  void apply(ParameterStore& params);

  std::uint64_t step() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

  const std::map<std::string, Moments>& moments() const { return moments_; }
  /// Replaces the full state (checkpoint restore).
  void restore(std::uint64_t step, std::map<std::string, Moments> moments);

 private:
  AdamWConfig cfg_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

/// L2 norm over the gradients of all trainable parameters.
double gradient_norm(const ParameterStore& params);

} // namespace pfvg
