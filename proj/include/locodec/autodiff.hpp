#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.
//
// A Graph records every operation applied to its Vars. Calling backward() on a
// scalar Var walks the record in reverse creation order (a valid topological
// order) and accumulates gradients. Parameters enter a graph as leaves; only
// trainable ones request gradients, so frozen subgraphs cost nothing in the
// backward pass.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace locodec::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  Tensor reshaped(Shape s) const;
  void fill(double v);

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

class Graph;

class Var {
 public:
  Var() = default;
  Graph& graph() const { return *g_; }
  std::size_t id() const { return id_; }
  bool valid() const { return g_ != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Called once during backward with the node's own id; it reads grad(self)
  // and accumulates into inputs through grad_for(input).
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t);
  Var parameter(Parameter& p);
  // Generic node; `fn` may be empty for nodes without inputs needing grads.
  Var custom(Tensor value, std::vector<Var> inputs, BackwardFn fn);

  // Populates gradients of every reachable node and copies them into the
  // trainable parameters that entered this graph (zero when unreachable).
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  // Mutable gradient slot, zero-initialized on first use.
  Tensor& grad_for(std::size_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
};

// --- operations ------------------------------------------------------------
// All ops throw ShapeError naming both shapes on incompatible inputs and never
// modify their inputs.

// a[..., k] x b[k, n] -> [..., n]
Var matmul(Var a, Var b);
// a[B, m, k] x b[B, k, n] -> [B, m, n]; with transpose_b, b is [B, n, k].
Var bmm(Var a, Var b, bool transpose_b = false);
// Elementwise; b may also match a trailing suffix of a's shape (broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var softmax(Var a);  // over the last axis
// x[B, T, Cin], w[K, Cin, Cout], bias[Cout] -> [B, T-K+1, Cout] (valid padding)
Var conv1d(Var x, Var w, Var bias);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var x, Shape shape);
Var sum(Var x);
Var mean(Var x);
Var mse(Var pred, Var target);
// LSTM recurrence over a precomputed input projection xw[B, T, 4H] (gate
// order i, f, g, o; biases already added) with recurrent weights w_hh[H, 4H],
// zero initial state. Returns the final hidden state [B, H].
Var lstm_sequence(Var xw, Var w_hh);
// Inverted dropout with a mask drawn from `rng`; identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// --- gradient checking -----------------------------------------------------

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t samples = 64;  // parameter elements probed (at least one per tensor)
  std::uint64_t seed = 0;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct GradcheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  std::map<std::string, double> max_rel_error;  // per parameter tensor
  double worst = 0.0;
  bool passed = false;
};

// `build_loss` must construct a fresh scalar loss from the current parameter
// values on every call.
GradcheckReport gradcheck(const std::function<Var(Graph&)>& build_loss,
                          const std::vector<Parameter*>& params, const GradcheckOptions& opt = {});

}  // namespace locodec::ad
