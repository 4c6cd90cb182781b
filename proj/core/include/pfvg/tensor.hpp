#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace pfvg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_string(const Shape& dims);

class Tensor;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

struct Node {
  Shape dims;
  std::vector<double> data;
  // Persistent gradient of a leaf; empty until the first backward reaches it.
  std::vector<double> grad;
  // Scratch gradient, only populated while a backward pass is running.
  std::vector<double> pending;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
};

} // namespace detail

/// Dense row-major tensor of doubles with an optional reverse-mode gradient.
///
/// A Tensor is a cheap handle; copies share the same storage. Values are
/// immutable after creation except for leaf tensors, which the optimizer
/// updates in place through `mutable_data()`.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape dims, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape dims, bool requires_grad = false);
  static Tensor full(Shape dims, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape dims, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape dims, std::mt19937_64& rng, double lo, double hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& dims() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return dims().size(); }
  std::size_t numel() const { return data().size(); }

  std::span<const double> data() const;
  double operator[](std::size_t i) const { return data()[i]; }
  double item() const;

  /// In-place access for leaves (parameters, optimizer targets).
  std::span<double> mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;
  /// Deep copy of values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  bool all_finite() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Records a new op result. When grad mode is on and any input requires a
/// gradient, the result keeps the inputs as parents and `backward` is run
/// during reverse traversal; otherwise the result is a plain constant.
Tensor make_op_result(Shape dims, std::vector<double> data,
                      std::vector<Tensor> inputs, detail::BackwardFn backward);

/// Scratch gradient of the i-th parent during backward, or nullptr when that
/// parent does not need one.
double* parent_grad(detail::Node& self, std::size_t i);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse topological record of the graph reachable from a root. Each node
/// appears exactly once and after all of its parents.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node*>& nodes() const { return order_; }

 private:
  std::vector<detail::Node*> order_;
};

/// Populates gradients of every requires_grad leaf reachable from the scalar
/// `root`. Leaf gradients accumulate across calls until zeroed; each call
/// adds its full contribution to a leaf exactly once.
void backward(const Tensor& root);

} // namespace pfvg
