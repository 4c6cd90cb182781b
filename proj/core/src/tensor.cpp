#include "pfvg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "pfvg/errors.hpp"

namespace pfvg {

namespace {
thread_local bool g_grad_enabled = true;

detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) {
    throw ContractError("use of an undefined tensor");
  }
  return *node;
}
} // namespace

std::size_t shape_numel(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) {
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    os << (i ? "x" : "") << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape dims, std::vector<double> data, bool requires_grad) {
  if (shape_numel(dims) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(dims) + " does not hold " +
                     std::to_string(data.size()) + " values");
  }
  for (auto d : dims) {
    if (d == 0) {
      throw ShapeError("tensor dims must be positive, got " + shape_string(dims));
    }
  }
  node_ = std::make_shared<detail::Node>();
  node_->dims = std::move(dims);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape dims, bool requires_grad) {
  return full(std::move(dims), 0.0, requires_grad);
}

Tensor Tensor::full(Shape dims, double value, bool requires_grad) {
  const auto n = shape_numel(dims);
  return Tensor(std::move(dims), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) {
  return Tensor({1}, {value});
}

Tensor Tensor::randn(Shape dims, std::mt19937_64& rng, double stddev) {
  std::vector<double> v(shape_numel(dims));
  for (auto& x : v) {
    x = std::normal_distribution<double>(0.0, stddev)(rng);
  }
  return Tensor(std::move(dims), std::move(v));
}

Tensor Tensor::uniform(Shape dims, std::mt19937_64& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(dims));
  for (auto& x : v) {
    x = std::uniform_real_distribution<double>(lo, hi)(rng);
  }
  return Tensor(std::move(dims), std::move(v));
}

const Shape& Tensor::dims() const {
  return checked(node_).dims;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& d = dims();
  if (axis >= d.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(d));
  }
  return d[axis];
}

std::span<const double> Tensor::data() const {
  return checked(node_).data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(dims()));
  }
  return data()[0];
}

std::span<double> Tensor::mutable_data() {
  auto& n = checked(node_);
  if (!n.is_leaf()) {
    throw ContractError("mutable_data() on a non-leaf tensor");
  }
  return n.data;
}

bool Tensor::requires_grad() const {
  return checked(node_).requires_grad;
}

void Tensor::set_requires_grad(bool on) {
  auto& n = checked(node_);
  if (!n.is_leaf()) {
    throw ContractError("set_requires_grad() on a non-leaf tensor");
  }
  n.requires_grad = on;
}

bool Tensor::is_leaf() const {
  return checked(node_).is_leaf();
}

bool Tensor::has_grad() const {
  return !checked(node_).grad.empty();
}

std::span<const double> Tensor::grad() const {
  return checked(node_).grad;
}

std::span<double> Tensor::mutable_grad() {
  auto& n = checked(node_);
  if (n.grad.empty()) {
    n.grad.assign(n.data.size(), 0.0);
  }
  return n.grad;
}

void Tensor::zero_grad() {
  auto& n = checked(node_);
  if (!n.grad.empty()) {
    std::fill(n.grad.begin(), n.grad.end(), 0.0);
  }
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  if (n.is_leaf() && !n.requires_grad) {
    return *this;
  }
  return Tensor(n.dims, n.data);
}

Tensor Tensor::clone(bool requires_grad) const {
  const auto& n = checked(node_);
  return Tensor(n.dims, n.data, requires_grad);
}

bool Tensor::all_finite() const {
  for (double v : data()) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

bool grad_enabled() {
  return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
  g_grad_enabled = previous_;
}

Tensor make_op_result(Shape dims, std::vector<double> data,
                      std::vector<Tensor> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<detail::Node>();
  node->dims = std::move(dims);
  node->data = std::move(data);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) {
      any = any || in.requires_grad();
    }
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (auto& in : inputs) {
        node->parents.push_back(in.node());
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

double* parent_grad(detail::Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.pending.data() : nullptr;
}

Tape Tape::record(const Tensor& root) {
  Tape tape;
  auto* start = root.node().get();
  if (!start || !start->requires_grad) {
    return tape;
  }
  // Iterative post-order DFS; post-order over parents is a topological order.
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() requires a scalar root, got " +
                        (root.defined() ? shape_string(root.dims()) : std::string("undefined")));
  }
  if (!root.requires_grad()) {
    return;
  }
  Tape tape = Tape::record(root);
  for (auto* n : tape.nodes()) {
    n->pending.assign(n->data.size(), 0.0);
  }
  root.node()->pending[0] = 1.0;
  const auto& order = tape.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (!n->is_leaf()) {
      n->backward(*n);
    }
  }
  for (auto* n : order) {
    if (n->is_leaf()) {
      if (n->grad.empty()) {
        n->grad.assign(n->data.size(), 0.0);
      }
      for (std::size_t i = 0; i < n->grad.size(); ++i) {
        n->grad[i] += n->pending[i];
      }
    }
    std::vector<double>().swap(n->pending);
  }
}

} // namespace pfvg
