#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clipper/error.hpp"

namespace clipper::ad {

struct Shape {
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d);
  explicit Shape(std::vector<int> d);

  int rank() const { return static_cast<int>(dims.size()); }
  int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }
  std::size_t numel() const;
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// A persistent named array of trainable values. Lives in a ParamStore across
// steps; mounted onto a Tape per forward pass via Tape::use.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
};

class Tape;

// Lightweight handle into a Tape node. Values are immutable after creation.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  const Shape& shape() const;
  std::span<const double> value() const;
  std::span<const double> grad() const;
  std::vector<double> value_copy() const;
  double scalar() const;
  double at(std::size_t i) const;
  std::size_t numel() const { return shape().numel(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records primitive operations in topological (creation) order and replays
// them backward. Single-threaded by contract; not movable so backward
// closures can hold node ids safely.
class Tape {
 public:
  using BackFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor emit(Shape s, std::vector<double> val, BackFn back = nullptr,
              bool trainable = false);
  Tensor constant(Shape s, std::vector<double> val);
  Tensor constant(Shape s, double fill);
  Tensor leaf(Shape s, std::vector<double> val);  // trainable, anonymous
  Tensor use(Parameter& p);                       // trainable, cached per tape

  // Seeds d(loss)/d(loss) = 1 and replays all recorded ops in reverse order,
  // accumulating gradients additively. Loss must be a scalar.
  void backward(Tensor loss);
  bool backward_ran() const { return ran_backward_; }

  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(int id) const { return node(id).shape; }
  std::span<const double> value(int id) const;
  std::span<const double> grad(int id) const;
  std::span<double> grad_mut(int id);

  bool uses(const Parameter& p) const;
  std::span<const double> grad_of(const Parameter& p) const;
  const std::vector<std::pair<const Parameter*, int>>& mounted() const {
    return mounted_;
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    BackFn back;
    bool trainable = false;
  };

  const Node& node(int id) const;
  Node& node(int id);

  std::vector<Node> nodes_;
  std::vector<std::pair<const Parameter*, int>> mounted_;
  std::unordered_map<const Parameter*, int> mount_index_;
  bool ran_backward_ = false;
};

// ---- primitive op library (all differentiable through the tape) ----

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double k);
Tensor add_const(Tensor a, double c);
Tensor matmul(Tensor a, Tensor b);
Tensor transpose(Tensor a);
Tensor softmax(Tensor a, int axis);
Tensor exp(Tensor a);
Tensor log(Tensor a);  // rejects non-positive inputs
Tensor sigmoid(Tensor a);
Tensor gelu(Tensor a);
Tensor clamp(Tensor a, double lo, double hi);
Tensor sum(Tensor a);   // -> [1]
Tensor mean(Tensor a);  // -> [1]
Tensor mean_axis(Tensor a, int axis);  // 2-d only
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(Tensor a, Tensor b, int axis);
Tensor slice(Tensor a, int axis, int start, int len);
Tensor reshape(Tensor a, Shape s);
Tensor layer_norm(Tensor x, Tensor gain, Tensor bias, double eps);
Tensor mul_scalar(Tensor x, Tensor s);     // s has one element
Tensor add_rowvec(Tensor x, Tensor b);     // x [m,n], b n elements
Tensor gather_flat(Tensor src, std::vector<std::size_t> idx, Shape out);
Tensor l2norm_rows(Tensor x, double eps = 1e-12);

}  // namespace clipper::ad
