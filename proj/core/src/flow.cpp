#include "pfvg/flow.hpp"

#include "pfvg/errors.hpp"
#include "pfvg/ops.hpp"

namespace pfvg {

namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.dims()) + " vs " +
                     shape_string(b.dims()));
  }
}

// x + step * v, elementwise. Shared by the sampler and the one-step
// approximation so both evaluate the same expression.
Tensor euler_step(const Tensor& x, double step, const Tensor& v) {
  require_same("euler step", x, v);
  const auto& xs = x.data();
  const auto& vs = v.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xs[i] + step * vs[i];
  }
  return Tensor(x.dims(), std::move(out));
}

} // namespace

FlowSample interpolate(const Tensor& x, const Tensor& eps, double t) {
  require_same("interpolate", x, eps);
  if (!(t >= 0.0 && t <= 1.0)) {
    throw RangeError("interpolate: t = " + std::to_string(t) + " outside [0, 1]");
  }
  const auto& xs = x.data();
  const auto& es = eps.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = t * xs[i] + (1.0 - t) * es[i];
  }
  return FlowSample{x, eps, t, Tensor(x.dims(), std::move(out))};
}

VelocityTarget velocity_target(const Tensor& x, const Tensor& eps) {
  require_same("velocity_target", x, eps);
  const auto& xs = x.data();
  const auto& es = eps.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xs[i] - es[i];
  }
  return VelocityTarget{Tensor(x.dims(), std::move(out))};
}

Tensor fm_loss(const Tensor& v_pred, const VelocityTarget& target) {
  require_same("fm_loss", v_pred, target.u);
  return mse(v_pred, target.u);
}

Tensor standard_normal(const Shape& dims, std::mt19937_64& rng) {
  return Tensor::randn(dims, rng, 1.0);
}

Tensor euler_integrate(const VelocityField& field, const Tensor& x0, std::size_t steps) {
  if (steps == 0) {
    throw RangeError("euler_integrate: steps must be >= 1");
  }
  NoGradGuard no_grad;
  const double dt = 1.0 / static_cast<double>(steps);
  Tensor x = x0.detach();
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    x = euler_step(x, dt, field(x, t));
  }
  return x;
}

Tensor euler_sample(const VelocityField& field, const Shape& dims, std::size_t steps,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return euler_integrate(field, standard_normal(dims, rng), steps);
}

OneStepResult one_step_approx(const VelocityField& field, const Tensor& x_t, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw RangeError("one_step_approx: t = " + std::to_string(t) + " outside [0, 1]");
  }
  if (t == 1.0) {
    return OneStepResult{x_t.detach(), true};
  }
  NoGradGuard no_grad;
  return OneStepResult{euler_step(x_t.detach(), 1.0 - t, field(x_t.detach(), t)), false};
}

} // namespace pfvg
