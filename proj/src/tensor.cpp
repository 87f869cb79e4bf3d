#include "clipper/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace clipper::ad {

namespace {

void check_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid())
    throw ContractError(std::string(op) + ": invalid tensor handle");
  if (a.tape() != b.tape())
    throw ContractError(std::string(op) + ": tensors from different tapes");
}

void check_valid(const Tensor& a, const char* op) {
  if (!a.valid())
    throw ContractError(std::string(op) + ": invalid tensor handle");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
}

void check_2d(const Tensor& a, const char* op) {
  if (a.shape().rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     a.shape().str());
}

std::size_t outer_extent(const Shape& s, int axis) {
  std::size_t n = 1;
  for (int i = 0; i < axis; ++i) n *= static_cast<std::size_t>(s.dim(i));
  return n;
}

std::size_t inner_extent(const Shape& s, int axis) {
  std::size_t n = 1;
  for (int i = axis + 1; i < s.rank(); ++i)
    n *= static_cast<std::size_t>(s.dim(i));
  return n;
}

void check_axis(const Tensor& a, int axis, const char* op) {
  if (axis < 0 || axis >= a.shape().rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " invalid for shape " + a.shape().str());
}

}  // namespace

Shape::Shape(std::initializer_list<int> d) : dims(d) {
  for (int e : dims)
    if (e < 1) throw ShapeError("shape extent must be >= 1, got " + str());
}

Shape::Shape(std::vector<int> d) : dims(std::move(d)) {
  for (int e : dims)
    if (e < 1) throw ShapeError("shape extent must be >= 1, got " + str());
}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (int e : dims) n *= static_cast<std::size_t>(e);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ",";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->shape(id_); }
std::span<const double> Tensor::value() const { return tape_->value(id_); }
std::span<const double> Tensor::grad() const { return tape_->grad(id_); }

std::vector<double> Tensor::value_copy() const {
  auto v = value();
  return std::vector<double>(v.begin(), v.end());
}

double Tensor::scalar() const {
  if (numel() != 1)
    throw ContractError("scalar() on tensor of shape " + shape().str());
  return value()[0];
}

double Tensor::at(std::size_t i) const { return value()[i]; }

const Tape::Node& Tape::node(int id) const {
  return nodes_[static_cast<std::size_t>(id)];
}
Tape::Node& Tape::node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

Tensor Tape::emit(Shape s, std::vector<double> val, BackFn back,
                  bool trainable) {
  if (val.size() != s.numel())
    throw ShapeError("emit: value size " + std::to_string(val.size()) +
                     " does not match shape " + s.str());
  Node n;
  n.shape = std::move(s);
  n.val = std::move(val);
  n.back = std::move(back);
  n.trainable = trainable;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(Shape s, std::vector<double> val) {
  return emit(std::move(s), std::move(val));
}

Tensor Tape::constant(Shape s, double fill) {
  std::vector<double> v(s.numel(), fill);
  return emit(std::move(s), std::move(v));
}

Tensor Tape::leaf(Shape s, std::vector<double> val) {
  return emit(std::move(s), std::move(val), nullptr, true);
}

Tensor Tape::use(Parameter& p) {
  auto it = mount_index_.find(&p);
  if (it != mount_index_.end()) return Tensor(this, it->second);
  Tensor t = emit(p.shape, p.value, nullptr, true);
  mount_index_[&p] = t.id();
  mounted_.emplace_back(&p, t.id());
  return t;
}

void Tape::backward(Tensor loss) {
  if (!loss.valid() || loss.tape() != this)
    throw ContractError("backward: loss is not on this tape");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " +
                        loss.shape().str());
  for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
  node(loss.id()).grad[0] = 1.0;
  ran_backward_ = true;  // grads become readable during the reverse sweep
  for (int id = loss.id(); id >= 0; --id) {
    auto& n = node(id);
    if (n.back) n.back(*this);
  }
}

std::span<const double> Tape::value(int id) const { return node(id).val; }

std::span<const double> Tape::grad(int id) const {
  if (!ran_backward_) throw ContractError("grad: backward has not run");
  return node(id).grad;
}

std::span<double> Tape::grad_mut(int id) { return node(id).grad; }

bool Tape::uses(const Parameter& p) const { return mount_index_.count(&p) > 0; }

std::span<const double> Tape::grad_of(const Parameter& p) const {
  auto it = mount_index_.find(&p);
  if (it == mount_index_.end())
    throw ContractError("grad_of: parameter '" + p.name + "' not on tape");
  return grad(it->second);
}

// ---- ops ----

Tensor add(Tensor a, Tensor b) {
  check_same_tape(a, b, "add");
  check_same_shape(a, b, "add");
  auto av = a.value(), bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, ib, io](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    auto gb = tp.grad_mut(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Tensor sub(Tensor a, Tensor b) {
  check_same_tape(a, b, "sub");
  check_same_shape(a, b, "sub");
  auto av = a.value(), bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, ib, io](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    auto gb = tp.grad_mut(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Tensor mul(Tensor a, Tensor b) {
  check_same_tape(a, b, "mul");
  check_same_shape(a, b, "mul");
  auto av = a.value(), bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, ib, io](Tape& tp) {
    auto g = tp.grad(io);
    auto av = tp.value(ia);
    auto bv = tp.value(ib);
    auto ga = tp.grad_mut(ia);
    auto gb = tp.grad_mut(ib);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * bv[i];
      gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(Tensor a, double k) {
  check_valid(a, "scale");
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * k;
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io, k](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
  });
}

Tensor add_const(Tensor a, double c) {
  check_valid(a, "add_const");
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + c;
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor matmul(Tensor a, Tensor b) {
  check_same_tape(a, b, "matmul");
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const int m = a.shape().dim(0), k = a.shape().dim(1);
  const int k2 = b.shape().dim(0), n = b.shape().dim(1);
  if (k != k2)
    throw ShapeError("matmul: inner extents differ, " + a.shape().str() +
                     " x " + b.shape().str());
  auto av = a.value(), bv = b.value();
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = av.data() + static_cast<std::size_t>(i) * k;
    double* crow = out.data() + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = bv.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  Tape& t = *a.tape();
  int ia = a.id(), ib = b.id(), io = static_cast<int>(t.size());
  return t.emit(Shape{m, n}, std::move(out), [ia, ib, io, m, k, n](Tape& tp) {
    auto g = tp.grad(io);
    auto av = tp.value(ia);
    auto bv = tp.value(ib);
    auto ga = tp.grad_mut(ia);
    auto gb = tp.grad_mut(ib);
    // ga += g . b^T
    for (int i = 0; i < m; ++i) {
      const double* grow = g.data() + static_cast<std::size_t>(i) * n;
      double* garow = ga.data() + static_cast<std::size_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const double* brow = bv.data() + static_cast<std::size_t>(p) * n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
        garow[p] += acc;
      }
    }
    // gb += a^T . g
    for (int p = 0; p < k; ++p) {
      double* gbrow = gb.data() + static_cast<std::size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const double aip = av[static_cast<std::size_t>(i) * k + p];
        const double* grow = g.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
      }
    }
  });
}

Tensor transpose(Tensor a) {
  check_valid(a, "transpose");
  check_2d(a, "transpose");
  const int m = a.shape().dim(0), n = a.shape().dim(1);
  auto av = a.value();
  std::vector<double> out(av.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] =
          av[static_cast<std::size_t>(i) * n + j];
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(Shape{n, m}, std::move(out), [ia, io, m, n](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<std::size_t>(i) * n + j] +=
            g[static_cast<std::size_t>(j) * m + i];
  });
}

Tensor softmax(Tensor a, int axis) {
  check_valid(a, "softmax");
  check_axis(a, axis, "softmax");
  auto av = a.value();
  for (double x : av)
    if (!std::isfinite(x)) throw NumericError("softmax: non-finite input");
  const std::size_t n = static_cast<std::size_t>(a.shape().dim(axis));
  const std::size_t outer = outer_extent(a.shape(), axis);
  const std::size_t inner = inner_extent(a.shape(), axis);
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = av[base];
      for (std::size_t k = 1; k < n; ++k)
        mx = std::max(mx, av[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double e = std::exp(av[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out),
                [ia, io, n, outer, inner](Tape& tp) {
                  auto g = tp.grad(io);
                  auto pv = tp.value(io);
                  auto ga = tp.grad_mut(ia);
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                      const std::size_t base = o * n * inner + in;
                      double dot = 0.0;
                      for (std::size_t k = 0; k < n; ++k)
                        dot += g[base + k * inner] * pv[base + k * inner];
                      for (std::size_t k = 0; k < n; ++k)
                        ga[base + k * inner] +=
                            pv[base + k * inner] * (g[base + k * inner] - dot);
                    }
                  }
                });
}

Tensor exp(Tensor a) {
  check_valid(a, "exp");
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io](Tape& tp) {
    auto g = tp.grad(io);
    auto yv = tp.value(io);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
  });
}

Tensor log(Tensor a) {
  check_valid(a, "log");
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(av[i] > 0.0))
      throw NumericError("log: non-positive input " + std::to_string(av[i]));
    out[i] = std::log(av[i]);
  }
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io](Tape& tp) {
    auto g = tp.grad(io);
    auto xv = tp.value(ia);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / xv[i];
  });
}

Tensor sigmoid(Tensor a) {
  check_valid(a, "sigmoid");
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = av[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io](Tape& tp) {
    auto g = tp.grad(io);
    auto yv = tp.value(io);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
  });
}

Tensor gelu(Tensor a) {
  check_valid(a, "gelu");
  auto av = a.value();
  std::vector<double> out(av.size());
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = av[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io, inv_sqrt2](Tape& tp) {
    auto g = tp.grad(io);
    auto xv = tp.value(ia);
    auto ga = tp.grad_mut(ia);
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = xv[i];
      double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      ga[i] += g[i] * (phi + x * pdf);
    }
  });
}

Tensor clamp(Tensor a, double lo, double hi) {
  check_valid(a, "clamp");
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  auto av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(std::max(av[i], lo), hi);
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(a.shape(), std::move(out), [ia, io, lo, hi](Tape& tp) {
    auto g = tp.grad(io);
    auto xv = tp.value(ia);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > lo && xv[i] < hi) ga[i] += g[i];
  });
}

Tensor sum(Tensor a) {
  check_valid(a, "sum");
  auto av = a.value();
  double s = 0.0;
  for (double x : av) s += x;
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(Shape{1}, {s}, [ia, io](Tape& tp) {
    double g = tp.grad(io)[0];
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Tensor mean(Tensor a) {
  check_valid(a, "mean");
  auto av = a.value();
  double s = 0.0;
  for (double x : av) s += x;
  const double inv = 1.0 / static_cast<double>(av.size());
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(Shape{1}, {s * inv}, [ia, io, inv](Tape& tp) {
    double g = tp.grad(io)[0] * inv;
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Tensor mean_axis(Tensor a, int axis) {
  check_valid(a, "mean_axis");
  check_2d(a, "mean_axis");
  check_axis(a, axis, "mean_axis");
  const int m = a.shape().dim(0), n = a.shape().dim(1);
  auto av = a.value();
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  if (axis == 0) {
    std::vector<double> out(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[static_cast<std::size_t>(j)] +=
            av[static_cast<std::size_t>(i) * n + j];
    const double inv = 1.0 / m;
    for (auto& x : out) x *= inv;
    return t.emit(Shape{1, n}, std::move(out), [ia, io, m, n, inv](Tape& tp) {
      auto g = tp.grad(io);
      auto ga = tp.grad_mut(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<std::size_t>(i) * n + j] +=
              g[static_cast<std::size_t>(j)] * inv;
    });
  }
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += av[static_cast<std::size_t>(i) * n + j];
    out[static_cast<std::size_t>(i)] = s / n;
  }
  const double inv = 1.0 / n;
  return t.emit(Shape{m, 1}, std::move(out), [ia, io, m, n, inv](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        ga[static_cast<std::size_t>(i) * n + j] +=
            g[static_cast<std::size_t>(i)] * inv;
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) check_valid(p, "concat");
  Tape& t = *parts[0].tape();
  const Shape& s0 = parts[0].shape();
  check_axis(parts[0], axis, "concat");
  int total = 0;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw ContractError("concat: mixed tapes");
    const Shape& s = p.shape();
    if (s.rank() != s0.rank())
      throw ShapeError("concat: rank mismatch " + s0.str() + " vs " + s.str());
    for (int d = 0; d < s.rank(); ++d)
      if (d != axis && s.dim(d) != s0.dim(d))
        throw ShapeError("concat: shape mismatch " + s0.str() + " vs " +
                         s.str());
    total += s.dim(axis);
  }
  Shape out_shape = s0;
  out_shape.dims[static_cast<std::size_t>(axis)] = total;
  const std::size_t outer = outer_extent(out_shape, axis);
  const std::size_t inner = inner_extent(out_shape, axis);
  std::vector<double> out(out_shape.numel());
  std::vector<int> ids;
  std::vector<std::size_t> blocks;  // per part: dim(axis) * inner
  ids.reserve(parts.size());
  for (const auto& p : parts) {
    ids.push_back(p.id());
    blocks.push_back(static_cast<std::size_t>(p.shape().dim(axis)) * inner);
  }
  const std::size_t out_stride = static_cast<std::size_t>(total) * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * out_stride;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto pv = parts[k].value();
      const double* src = pv.data() + o * blocks[k];
      std::copy(src, src + blocks[k], out.data() + off);
      off += blocks[k];
    }
  }
  int io = static_cast<int>(t.size());
  return t.emit(std::move(out_shape), std::move(out),
                [ids, blocks, io, outer, out_stride](Tape& tp) {
                  auto g = tp.grad(io);
                  for (std::size_t o = 0; o < outer; ++o) {
                    std::size_t off = o * out_stride;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      auto gk = tp.grad_mut(ids[k]);
                      for (std::size_t i = 0; i < blocks[k]; ++i)
                        gk[o * blocks[k] + i] += g[off + i];
                      off += blocks[k];
                    }
                  }
                });
}

Tensor concat(Tensor a, Tensor b, int axis) {
  Tensor parts[2] = {a, b};
  return concat(std::span<const Tensor>(parts, 2), axis);
}

Tensor slice(Tensor a, int axis, int start, int len) {
  check_valid(a, "slice");
  check_axis(a, axis, "slice");
  const int extent = a.shape().dim(axis);
  if (start < 0 || len < 1 || start + len > extent)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of extent " +
                     std::to_string(extent));
  Shape out_shape = a.shape();
  out_shape.dims[static_cast<std::size_t>(axis)] = len;
  const std::size_t outer = outer_extent(a.shape(), axis);
  const std::size_t inner = inner_extent(a.shape(), axis);
  const std::size_t in_stride = static_cast<std::size_t>(extent) * inner;
  const std::size_t out_stride = static_cast<std::size_t>(len) * inner;
  const std::size_t skip = static_cast<std::size_t>(start) * inner;
  auto av = a.value();
  std::vector<double> out(out_shape.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = av.data() + o * in_stride + skip;
    std::copy(src, src + out_stride, out.data() + o * out_stride);
  }
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(std::move(out_shape), std::move(out),
                [ia, io, outer, in_stride, out_stride, skip](Tape& tp) {
                  auto g = tp.grad(io);
                  auto ga = tp.grad_mut(ia);
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < out_stride; ++i)
                      ga[o * in_stride + skip + i] += g[o * out_stride + i];
                });
}

Tensor reshape(Tensor a, Shape s) {
  check_valid(a, "reshape");
  if (s.numel() != a.numel())
    throw ShapeError("reshape: element count mismatch " + a.shape().str() +
                     " -> " + s.str());
  Tape& t = *a.tape();
  int ia = a.id(), io = static_cast<int>(t.size());
  return t.emit(std::move(s), a.value_copy(), [ia, io](Tape& tp) {
    auto g = tp.grad(io);
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps) {
  check_same_tape(x, gain, "layer_norm");
  check_same_tape(x, bias, "layer_norm");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be > 0");
  const int rank = x.shape().rank();
  if (rank < 1) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t n = static_cast<std::size_t>(x.shape().dim(rank - 1));
  if (gain.numel() != n || bias.numel() != n)
    throw ShapeError("layer_norm: gain/bias size must match last axis " +
                     std::to_string(n));
  const std::size_t rows = x.numel() / n;
  auto xv = x.value();
  auto gv = gain.value();
  auto bv = bias.value();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(rows), mu(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += row[j];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = row[j] - m;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    mu[r] = m;
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j)
      out[r * n + j] = gv[j] * (row[j] - m) * is + bv[j];
  }
  Tape& t = *x.tape();
  int ix = x.id(), ig = gain.id(), ib = bias.id(), io = static_cast<int>(t.size());
  return t.emit(x.shape(), std::move(out),
                [ix, ig, ib, io, n, rows, mu, inv_std](Tape& tp) {
                  auto g = tp.grad(io);
                  auto xv = tp.value(ix);
                  auto gv = tp.value(ig);
                  auto gx = tp.grad_mut(ix);
                  auto gg = tp.grad_mut(ig);
                  auto gb = tp.grad_mut(ib);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* xrow = xv.data() + r * n;
                    const double* grow = g.data() + r * n;
                    const double is = inv_std[r];
                    const double m = mu[r];
                    double mean_q = 0.0, mean_qx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      double xhat = (xrow[j] - m) * is;
                      double q = grow[j] * gv[j];
                      mean_q += q;
                      mean_qx += q * xhat;
                      gg[j] += grow[j] * xhat;
                      gb[j] += grow[j];
                    }
                    mean_q /= static_cast<double>(n);
                    mean_qx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                      double xhat = (xrow[j] - m) * is;
                      double q = grow[j] * gv[j];
                      gx[r * n + j] += (q - mean_q - xhat * mean_qx) * is;
                    }
                  }
                });
}

Tensor mul_scalar(Tensor x, Tensor s) {
  check_same_tape(x, s, "mul_scalar");
  if (s.numel() != 1)
    throw ShapeError("mul_scalar: scale must have one element, got " +
                     s.shape().str());
  const double sv = s.value()[0];
  auto xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sv;
  Tape& t = *x.tape();
  int ix = x.id(), is = s.id(), io = static_cast<int>(t.size());
  return t.emit(x.shape(), std::move(out), [ix, is, io](Tape& tp) {
    auto g = tp.grad(io);
    auto xv = tp.value(ix);
    const double sv = tp.value(is)[0];
    auto gx = tp.grad_mut(ix);
    auto gs = tp.grad_mut(is);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * sv;
      acc += g[i] * xv[i];
    }
    gs[0] += acc;
  });
}

Tensor add_rowvec(Tensor x, Tensor b) {
  check_same_tape(x, b, "add_rowvec");
  check_2d(x, "add_rowvec");
  const int m = x.shape().dim(0), n = x.shape().dim(1);
  if (b.numel() != static_cast<std::size_t>(n))
    throw ShapeError("add_rowvec: row vector size " + b.shape().str() +
                     " does not match columns of " + x.shape().str());
  auto xv = x.value();
  auto bv = b.value();
  std::vector<double> out(xv.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          xv[static_cast<std::size_t>(i) * n + j] + bv[static_cast<std::size_t>(j)];
  Tape& t = *x.tape();
  int ix = x.id(), ib = b.id(), io = static_cast<int>(t.size());
  return t.emit(x.shape(), std::move(out), [ix, ib, io, m, n](Tape& tp) {
    auto g = tp.grad(io);
    auto gx = tp.grad_mut(ix);
    auto gb = tp.grad_mut(ib);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double gij = g[static_cast<std::size_t>(i) * n + j];
        gx[static_cast<std::size_t>(i) * n + j] += gij;
        gb[static_cast<std::size_t>(j)] += gij;
      }
  });
}

Tensor gather_flat(Tensor src, std::vector<std::size_t> idx, Shape out_shape) {
  check_valid(src, "gather_flat");
  if (idx.size() != out_shape.numel())
    throw ShapeError("gather_flat: index count " + std::to_string(idx.size()) +
                     " does not match output shape " + out_shape.str());
  auto sv = src.value();
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= sv.size())
      throw ShapeError("gather_flat: index " + std::to_string(idx[i]) +
                       " out of range " + std::to_string(sv.size()));
    out[i] = sv[idx[i]];
  }
  Tape& t = *src.tape();
  int is = src.id(), io = static_cast<int>(t.size());
  return t.emit(std::move(out_shape), std::move(out),
                [is, io, idx = std::move(idx)](Tape& tp) {
                  auto g = tp.grad(io);
                  auto gs = tp.grad_mut(is);
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    gs[idx[i]] += g[i];
                });
}

Tensor l2norm_rows(Tensor x, double eps) {
  check_valid(x, "l2norm_rows");
  check_2d(x, "l2norm_rows");
  const int m = x.shape().dim(0), n = x.shape().dim(1);
  auto xv = x.value();
  std::vector<double> out(xv.size());
  std::vector<double> norms(static_cast<std::size_t>(m));
  std::vector<char> floored(static_cast<std::size_t>(m));
  for (int r = 0; r < m; ++r) {
    const double* row = xv.data() + static_cast<std::size_t>(r) * n;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += row[j] * row[j];
    double nr = std::sqrt(s);
    floored[static_cast<std::size_t>(r)] = nr < eps;
    nr = std::max(nr, eps);
    norms[static_cast<std::size_t>(r)] = nr;
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(r) * n + j] = row[j] / nr;
  }
  Tape& t = *x.tape();
  int ix = x.id(), io = static_cast<int>(t.size());
  return t.emit(x.shape(), std::move(out),
                [ix, io, m, n, norms = std::move(norms),
                 floored = std::move(floored)](Tape& tp) {
                  auto g = tp.grad(io);
                  auto yv = tp.value(io);
                  auto gx = tp.grad_mut(ix);
                  for (int r = 0; r < m; ++r) {
                    const std::size_t off = static_cast<std::size_t>(r) * n;
                    const double inv = 1.0 / norms[static_cast<std::size_t>(r)];
                    if (floored[static_cast<std::size_t>(r)]) {
                      // below the floor the norm is constant
                      for (int j = 0; j < n; ++j) gx[off + j] += g[off + j] * inv;
                      continue;
                    }
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) dot += g[off + j] * yv[off + j];
                    for (int j = 0; j < n; ++j)
                      gx[off + j] += (g[off + j] - yv[off + j] * dot) * inv;
                  }
                });
}

}  // namespace clipper::ad
