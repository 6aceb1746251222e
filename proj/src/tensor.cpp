#include "sgcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "sgcn/kernels.hpp"

namespace sgcn {

namespace detail {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

}  // namespace detail

namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<detail::TensorImpl> make_impl(Shape shape, std::vector<double> data,
                                              bool requires_grad) {
  for (auto e : shape) {
    if (e <= 0)
      throw std::invalid_argument("tensor extents must be positive, got " +
                                  detail::shape_str(shape));
  }
  if (detail::shape_numel(shape) != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("shape " + detail::shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " elements");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  if (requires_grad) impl->grad.assign(impl->data.size(), 0.0);
  return impl;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
}

// Marks the output differentiable and records fn if a tape is active.
void finish_op(const std::vector<Tensor>& inputs, Tensor& out, BackwardFn fn) {
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in.requires_grad();
  if (!rg) return;
  out.impl()->requires_grad = true;
  if (Tape* tape = Tape::active()) tape->record(inputs, out, std::move(fn));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return wrap(make_impl(shape, std::vector<double>(detail::shape_numel(shape), 0.0),
                        requires_grad));
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return wrap(make_impl(shape, std::vector<double>(detail::shape_numel(shape), value),
                        requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
  return wrap(make_impl(shape, std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return wrap(make_impl({}, {value}, requires_grad));
}

Tensor Tensor::identity(std::int64_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::int64_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return from_data({n, n}, std::move(d));
}

Tensor Tensor::uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng,
                       bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> d(detail::shape_numel(shape));
  for (auto& v : d) v = dist(rng);
  return from_data(shape, std::move(d), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::extent(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " +
                                detail::shape_str(s));
  return s[axis];
}

std::int64_t Tensor::numel() const { return detail::shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return {impl_->data.data(), impl_->data.size()};
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return {impl_->data.data(), impl_->data.size()};
}

double Tensor::operator()(std::int64_t i) const {
  if (rank() != 1) throw std::invalid_argument("1-index access on " + detail::shape_str(shape()));
  return impl_->data.at(i);
}

double Tensor::operator()(std::int64_t i, std::int64_t j) const {
  if (rank() != 2) throw std::invalid_argument("2-index access on " + detail::shape_str(shape()));
  return impl_->data.at(i * shape()[1] + j);
}

double Tensor::item() const {
  if (numel() != 1)
    throw std::invalid_argument("item() on non-scalar tensor " + detail::shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad())
    throw std::logic_error("gradient absent on tensor " + detail::shape_str(shape()));
  return {impl_->grad.data(), impl_->grad.size()};
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return wrap(make_impl(shape(), impl_->data, requires_grad));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const std::vector<Tensor>& inputs, const Tensor& output, BackwardFn fn) {
  Entry e;
  e.inputs.reserve(inputs.size());
  for (const auto& in : inputs) e.inputs.push_back(in.impl());
  e.output = output.impl();
  e.output->tape_output = true;
  e.backward = std::move(fn);
  entries_.push_back(std::move(e));
}

std::vector<double>& GradStore::accumulate(const std::shared_ptr<detail::TensorImpl>& t) {
  auto [it, inserted] = bufs_.try_emplace(t.get());
  if (inserted) it->second.assign(t->data.size(), 0.0);
  return it->second;
}

const std::vector<double>* GradStore::find(const detail::TensorImpl* t) const {
  auto it = bufs_.find(const_cast<detail::TensorImpl*>(t));
  return it == bufs_.end() ? nullptr : &it->second;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1)
    throw std::invalid_argument("backward requires a scalar-shaped root");
  Tape* tape = Tape::active();
  GradStore store;
  store.accumulate(root.impl())[0] = 1.0;
  if (tape) {
    const auto& entries = tape->entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) it->backward(store);
  }
  for (auto& [impl, buf] : store) {
    if (!impl->requires_grad || impl->tape_output) continue;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    for (std::size_t i = 0; i < buf.size(); ++i) impl->grad[i] += buf[i];
  }
}

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + detail::shape_str(a.shape()) +
                                " and " + detail::shape_str(b.shape()));
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  kernels::matmul(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finish_op({a, b}, out, [ai, bi, oi, m, k, n](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    if (ai->requires_grad)
      kernels::matmul_acc_a_bt(go->data(), bi->data.data(), gs.accumulate(ai).data(), m, k, n);
    if (bi->requires_grad)
      kernels::matmul_acc_at_b(ai->data.data(), go->data(), gs.accumulate(bi).data(), m, k, n);
  });
  return out;
}

Tensor relu(const Tensor& a) {
  std::vector<double> d(a.data().begin(), a.data().end());
  for (auto& v : d) v = v > 0.0 ? v : 0.0;
  Tensor out = Tensor::from_data(a.shape(), std::move(d));
  auto ai = a.impl(), oi = out.impl();
  finish_op({a}, out, [ai, oi](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    auto& ga = gs.accumulate(ai);
    const auto& x = ai->data;
    // subgradient at exactly 0 is 0
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) ga[i] += (*go)[i];
  });
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  std::vector<double> d(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) d[i] = a.data()[i] * b.data()[i];
  Tensor out = Tensor::from_data(a.shape(), std::move(d));
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finish_op({a, b}, out, [ai, bi, oi](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    if (ai->requires_grad) {
      auto& ga = gs.accumulate(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& gb = gs.accumulate(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*go)[i] * ai->data[i];
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> d(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) d[i] = a.data()[i] + b.data()[i];
  Tensor out = Tensor::from_data(a.shape(), std::move(d));
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finish_op({a, b}, out, [ai, bi, oi](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    for (const auto& ii : {ai, bi}) {
      if (!ii->requires_grad) continue;
      auto& gi = gs.accumulate(ii);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += (*go)[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> d(a.numel());
  for (std::int64_t i = 0; i < a.numel(); ++i) d[i] = a.data()[i] - b.data()[i];
  Tensor out = Tensor::from_data(a.shape(), std::move(d));
  auto ai = a.impl(), bi = b.impl(), oi = out.impl();
  finish_op({a, b}, out, [ai, bi, oi](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    if (ai->requires_grad) {
      auto& ga = gs.accumulate(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
    }
    if (bi->requires_grad) {
      auto& gb = gs.accumulate(bi);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= (*go)[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> d(a.data().begin(), a.data().end());
  for (auto& v : d) v *= c;
  Tensor out = Tensor::from_data(a.shape(), std::move(d));
  auto ai = a.impl(), oi = out.impl();
  finish_op({a}, out, [ai, oi, c](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    auto& ga = gs.accumulate(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i] * c;
  });
  return out;
}

namespace {

// Splits a shape at `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit a;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if (i < axis)
      a.outer *= s[i];
    else if (i == axis)
      a.extent = s[i];
    else
      a.inner *= s[i];
  }
  return a;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty part list");
  const Shape& first = parts[0].shape();
  if (axis < 0 || axis >= static_cast<int>(first.size()))
    throw std::invalid_argument("concat: axis " + std::to_string(axis) + " out of range for " +
                                detail::shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<int>(first.size()))
      throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.shape()[i] != first[i])
        throw std::invalid_argument("concat: incompatible shapes " + detail::shape_str(first) +
                                    " vs " + detail::shape_str(p.shape()));
    out_shape[axis] += p.shape()[axis];
  }

  const AxisSplit sp = split_axis(out_shape, axis);
  std::vector<double> d(detail::shape_numel(out_shape));
  std::int64_t at = 0;  // running offset along the concat axis
  for (const Tensor& p : parts) {
    const std::int64_t pe = p.shape()[axis];
    const double* src = p.data().data();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::copy(src + o * pe * sp.inner, src + (o + 1) * pe * sp.inner,
                d.data() + (o * sp.extent + at) * sp.inner);
    at += pe;
  }
  Tensor out = Tensor::from_data(out_shape, std::move(d));

  std::vector<std::shared_ptr<detail::TensorImpl>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  auto oi = out.impl();
  finish_op(parts, out, [impls, oi, sp](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    std::int64_t at = 0;
    for (const auto& pi : impls) {
      const std::int64_t pe =
          static_cast<std::int64_t>(pi->data.size()) / (sp.outer * sp.inner);
      if (pi->requires_grad) {
        auto& gp = gs.accumulate(pi);
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          const double* src = go->data() + (o * sp.extent + at) * sp.inner;
          double* dst = gp.data() + o * pe * sp.inner;
          for (std::int64_t i = 0; i < pe * sp.inner; ++i) dst[i] += src[i];
        }
      }
      at += pe;
    }
  });
  return out;
}

Tensor slice(const Tensor& a, int axis, std::int64_t start, std::int64_t len) {
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > a.shape()[axis])
    throw std::invalid_argument("slice: window [" + std::to_string(start) + ", " +
                                std::to_string(start + len) + ") exceeds extent " +
                                std::to_string(a.shape()[axis]));
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  std::vector<double> d(detail::shape_numel(out_shape));
  const double* src = a.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    std::copy(src + (o * sp.extent + start) * sp.inner,
              src + (o * sp.extent + start + len) * sp.inner, d.data() + o * len * sp.inner);
  Tensor out = Tensor::from_data(out_shape, std::move(d));
  auto ai = a.impl(), oi = out.impl();
  finish_op({a}, out, [ai, oi, sp, start, len](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    auto& ga = gs.accumulate(ai);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      const double* src = go->data() + o * len * sp.inner;
      double* dst = ga.data() + (o * sp.extent + start) * sp.inner;
      for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != a.shape()[1])
    throw std::invalid_argument("add_bias: bias " + detail::shape_str(bias.shape()) +
                                " does not match " + detail::shape_str(a.shape()));
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> d(m * n);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) d[i * n + j] = a.data()[i * n + j] + bias.data()[j];
  Tensor out = Tensor::from_data(a.shape(), std::move(d));
  auto ai = a.impl(), bi = bias.impl(), oi = out.impl();
  finish_op({a, bias}, out, [ai, bi, oi, m, n](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    if (ai->requires_grad) {
      auto& ga = gs.accumulate(ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*go)[i];
    }
    if (bi->requires_grad) {
      auto& gb = gs.accumulate(bi);
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) gb[j] += (*go)[i * n + j];
    }
  });
  return out;
}

Tensor reduce(const Tensor& a, Reduce kind, int axis) {
  if (axis < 0 || axis >= a.rank())
    throw std::invalid_argument("reduce: axis " + std::to_string(axis) + " invalid for " +
                                detail::shape_str(a.shape()));
  const AxisSplit sp = split_axis(a.shape(), axis);
  Shape out_shape;
  for (int i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  std::vector<double> d(sp.outer * sp.inner, 0.0);
  const double* src = a.data().data();
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t e = 0; e < sp.extent; ++e)
      for (std::int64_t in = 0; in < sp.inner; ++in)
        d[o * sp.inner + in] += src[(o * sp.extent + e) * sp.inner + in];
  const double denom = kind == Reduce::Mean ? static_cast<double>(sp.extent) : 1.0;
  if (kind == Reduce::Mean)
    for (auto& v : d) v /= denom;
  Tensor out = Tensor::from_data(out_shape, std::move(d));
  auto ai = a.impl(), oi = out.impl();
  finish_op({a}, out, [ai, oi, sp, denom](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    auto& ga = gs.accumulate(ai);
    for (std::int64_t o = 0; o < sp.outer; ++o)
      for (std::int64_t e = 0; e < sp.extent; ++e)
        for (std::int64_t in = 0; in < sp.inner; ++in)
          ga[(o * sp.extent + e) * sp.inner + in] += (*go)[o * sp.inner + in] / denom;
  });
  return out;
}

Tensor reduce_all(const Tensor& a, Reduce kind) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  const double denom = kind == Reduce::Mean ? static_cast<double>(a.numel()) : 1.0;
  Tensor out = Tensor::scalar(acc / denom);
  auto ai = a.impl(), oi = out.impl();
  finish_op({a}, out, [ai, oi, denom](GradStore& gs) {
    const auto* go = gs.find(oi.get());
    if (!go) return;
    auto& ga = gs.accumulate(ai);
    for (auto& v : ga) v += (*go)[0] / denom;
  });
  return out;
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& in : inputs) leaves.push_back(in.clone(/*requires_grad=*/true));

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor y = f(leaves);
    if (y.numel() != 1)
      throw std::invalid_argument("grad_check: f must be scalar-valued, got " +
                                  detail::shape_str(y.shape()));
    backward(y);
  }
  for (const Tensor& leaf : leaves)
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  double worst = 0.0;
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::int64_t c = 0; c < inputs[which].numel(); ++c) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor> probe;
        probe.reserve(inputs.size());
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (k == which) {
            std::vector<double> d(inputs[k].data().begin(), inputs[k].data().end());
            d[c] += delta;
            probe.push_back(Tensor::from_data(inputs[k].shape(), std::move(d)));
          } else {
            probe.push_back(inputs[k]);
          }
        }
        return f(probe).item();
      };
      const double numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
      const double analytic_v = analytic[which][c];
      const double denom = std::max({1.0, std::abs(analytic_v), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic_v - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace sgcn
