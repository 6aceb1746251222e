#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

// Minimal dense tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared payload: row-major contiguous
// 64-bit data plus an optional gradient buffer. Payload data is immutable
// after construction (mutable_data() is the one sanctioned escape, used by
// the optimizer between tape passes); gradient buffers accumulate.
//
// Differentiation is tape-based. While a Tape is alive it is the active tape
// for the constructing thread, and every op whose inputs require gradients
// records a backward rule onto it. backward(root) replays the tape in
// reverse. Intermediate gradients live in a per-pass store; only leaf
// tensors (requires_grad and not produced by an op) have their persistent
// .grad accumulated, so repeated backward calls add up.

namespace sgcn {

using Shape = std::vector<std::int64_t>;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool tape_output = false;  // produced by a recorded op (not a leaf)
  std::vector<double> grad;  // empty = absent
};

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::int64_t n);
  /// Uniform in [lo, hi).
  static Tensor uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::int64_t extent(int axis) const;
  std::int64_t numel() const;
  std::int64_t rows() const { return extent(0); }
  std::int64_t cols() const { return extent(1); }

  std::span<const double> data() const;
  /// Direct write access to the payload. Reserved for parameter updates
  /// between tape passes; never call it on a tensor recorded on a live tape.
  std::span<double> mutable_data();

  double operator()(std::int64_t i) const;
  double operator()(std::int64_t i, std::int64_t j) const;
  /// Value of a tensor with exactly one element.
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy with a fresh payload, detached from any tape.
  Tensor clone(bool requires_grad = false) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Per-pass gradient buffers keyed by payload identity.
class GradStore {
 public:
  std::vector<double>& accumulate(const std::shared_ptr<detail::TensorImpl>& t);
  const std::vector<double>* find(const detail::TensorImpl* t) const;
  auto begin() { return bufs_.begin(); }
  auto end() { return bufs_.end(); }

 private:
  std::unordered_map<detail::TensorImpl*, std::vector<double>> bufs_;
};

using BackwardFn = std::function<void(GradStore&)>;

class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  struct Entry {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  /// Record a custom operation. The backward rule must read the output's
  /// pass gradient from the store and accumulate into the inputs'.
  void record(const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  Tape* prev_ = nullptr;
};

// Ops. Shapes are checked strictly; the only implicit broadcast is add_bias.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len);
Tensor add_bias(const Tensor& a, const Tensor& bias);

enum class Reduce { Sum, Mean };
/// Reduce along one axis; the axis disappears from the shape.
Tensor reduce(const Tensor& a, Reduce kind, int axis);
/// Reduce everything to a scalar.
Tensor reduce_all(const Tensor& a, Reduce kind);

/// Reverse pass from a one-element root. Leaf gradients accumulate.
void backward(const Tensor& root);

/// Central finite differences of f at `inputs` against the tape gradients;
/// returns the worst relative error max(|a-n| / max(1, |a|, |n|)).
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double eps = 1e-6);

}  // namespace sgcn
