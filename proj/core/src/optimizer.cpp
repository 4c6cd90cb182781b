#include "pfvg/optimizer.hpp"

#include <cmath>

#include "pfvg/errors.hpp"

namespace pfvg {

void AdamW::apply(ParameterStore& params) {
  const std::uint64_t t = step_ + 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) {
      continue;
    }
    auto [it, fresh] = moments_.try_emplace(name);
    Moments& mo = it->second;
    if (fresh) {
      mo.dims = p.dims();
      mo.m.assign(p.numel(), 0.0);
      mo.v.assign(p.numel(), 0.0);
    } else if (mo.dims != p.dims()) {
      throw ShapeError("optimizer moments for " + name + " have shape " + shape_string(mo.dims));
    }
    auto w = p.mutable_data();
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * gi;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      w[i] -= cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
  step_ = t;
}

void AdamW::restore(std::uint64_t step, std::map<std::string, Moments> moments) {
  step_ = step;
  moments_ = std::move(moments);
}

double gradient_norm(const ParameterStore& params) {
  double acc = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.requires_grad() || !p.has_grad()) {
      continue;
    }
    for (double g : p.grad()) {
      acc += g * g;
    }
  }
  return std::sqrt(acc);
}

} // namespace pfvg
