#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

#include "pfvg/tensor.hpp"

namespace pfvg {

/// v(x_t, t): the velocity a model predicts at a point of the flow.
using VelocityField = std::function<Tensor(const Tensor& x_t, double t)>;

/// A point on the straight path between noise (t = 0) and data (t = 1).
struct FlowSample {
  Tensor x;
  Tensor eps;
  double t = 0.0;
  Tensor x_t;
};

struct VelocityTarget {
  Tensor u;
};

/// x_t = t x + (1 - t) eps. Throws RangeError when t is outside [0, 1].
FlowSample interpolate(const Tensor& x, const Tensor& eps, double t);

/// u = x - eps, the constant velocity of the straight path.
VelocityTarget velocity_target(const Tensor& x, const Tensor& eps);

/// Mean squared error between predicted and target velocity.
Tensor fm_loss(const Tensor& v_pred, const VelocityTarget& target);

Tensor standard_normal(const Shape& dims, std::mt19937_64& rng);

/// Forward Euler from x0 at t = 0 to t = 1 in `steps` uniform steps, with the
/// field evaluated at the left endpoint t_i = i / steps. Runs without graph.
Tensor euler_integrate(const VelocityField& field, const Tensor& x0, std::size_t steps);

/// euler_integrate from noise drawn with `seed`.
Tensor euler_sample(const VelocityField& field, const Shape& dims, std::size_t steps,
                    std::uint64_t seed);

struct OneStepResult {
  Tensor x1;
  /// Set when t == 1, where the step length vanishes and x_t is returned.
  bool degenerate = false;
};

/// x~1 = x_t + (1 - t) v(x_t, t). The result carries no gradient history.
OneStepResult one_step_approx(const VelocityField& field, const Tensor& x_t, double t);

} // namespace pfvg
