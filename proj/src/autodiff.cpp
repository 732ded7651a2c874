#include "locodec/autodiff.hpp"

#include "locodec/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace locodec::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

Graph& graph_of(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw ArgumentError(std::string(op) + ": operands belong to different graphs");
  return a.graph();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("Tensor::item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_size(s) != data_.size())
    throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(s));
  return Tensor(std::move(s), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

const Tensor& Var::value() const { return g_->value(id_); }
const Tensor& Var::grad() const { return g_->grad(id_); }

// ---------------------------------------------------------------------------

Var Graph::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::custom(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw ArgumentError("Graph::custom: input from another graph");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor& Graph::grad_for(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw ArgumentError("backward: loss from another graph");
  if (loss.value().size() != 1)
    throw ArgumentError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  for (auto& n : nodes_) {
    n.grad = Tensor();
    if (n.param && n.param->trainable) n.param->grad = Tensor(n.param->value.shape(), 0.0);
  }
  grad_for(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  for (auto& n : nodes_) {
    if (!n.param || !n.param->trainable || n.grad.empty()) continue;
    auto& dst = n.param->grad.storage();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sb.size() != 2 || sa.back() != sb[0]) shape_fail("matmul", sa, sb);
  const std::size_t k = sb[0], n = sb[1];
  const std::size_t m = a.value().size() / k;
  Shape so(sa.begin(), sa.end() - 1);
  so.push_back(n);
  Tensor out(so);
  MMap(out.data(), m, n).noalias() = CMap(a.value().data(), m, k) * CMap(b.value().data(), k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return g.custom(std::move(out), {a, b}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    CMap go(g.grad(self).data(), m, n);
    if (g.requires_grad(ia))
      MMap(g.grad_for(ia).data(), m, k).noalias() += go * CMap(g.value(ib).data(), k, n).transpose();
    if (g.requires_grad(ib))
      MMap(g.grad_for(ib).data(), k, n).noalias() += CMap(g.value(ia).data(), m, k).transpose() * go;
  });
}

Var bmm(Var a, Var b, bool transpose_b) {
  Graph& g = graph_of(a, b, "bmm");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0]) shape_fail("bmm", sa, sb);
  const std::size_t batch = sa[0], m = sa[1], k = sa[2];
  const std::size_t n = transpose_b ? sb[1] : sb[2];
  if ((transpose_b ? sb[2] : sb[1]) != k) shape_fail("bmm", sa, sb);
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    CMap A(a.value().data() + i * m * k, m, k);
    MMap O(out.data() + i * m * n, m, n);
    if (transpose_b)
      O.noalias() = A * CMap(b.value().data() + i * n * k, n, k).transpose();
    else
      O.noalias() = A * CMap(b.value().data() + i * k * n, k, n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.custom(std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const bool ra = g.requires_grad(ia), rb = g.requires_grad(ib);
    for (std::size_t i = 0; i < batch; ++i) {
      CMap G(g.grad(self).data() + i * m * n, m, n);
      CMap A(g.value(ia).data() + i * m * k, m, k);
      if (transpose_b) {
        CMap B(g.value(ib).data() + i * n * k, n, k);
        if (ra) MMap(g.grad_for(ia).data() + i * m * k, m, k).noalias() += G * B;
        if (rb) MMap(g.grad_for(ib).data() + i * n * k, n, k).noalias() += G.transpose() * A;
      } else {
        CMap B(g.value(ib).data() + i * k * n, k, n);
        if (ra) MMap(g.grad_for(ia).data() + i * m * k, m, k).noalias() += G * B.transpose();
        if (rb) MMap(g.grad_for(ib).data() + i * k * n, k, n).noalias() += A.transpose() * G;
      }
    }
  });
}

namespace {

enum class BinOp { add, sub, mul };

Var binary(Var a, Var b, BinOp op, const char* name) {
  Graph& g = graph_of(a, b, name);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  if (!suffix) shape_fail(name, sa, sb);
  const std::size_t n = a.value().size(), m = b.value().size();
  Tensor out(sa);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  for (std::size_t base = 0; base < n; base += m)
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t i = base + j;
      o[i] = op == BinOp::add ? av[i] + bv[j] : op == BinOp::sub ? av[i] - bv[j] : av[i] * bv[j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  return g.custom(std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const double* go = g.grad(self).data();
    if (g.requires_grad(ia)) {
      double* ga = g.grad_for(ia).data();
      const double* bv = g.value(ib).data();
      for (std::size_t base = 0; base < n; base += m)
        for (std::size_t j = 0; j < m; ++j) ga[base + j] += op == BinOp::mul ? go[base + j] * bv[j] : go[base + j];
    }
    if (g.requires_grad(ib)) {
      double* gb = g.grad_for(ib).data();
      const double* av = g.value(ia).data();
      for (std::size_t base = 0; base < n; base += m)
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t i = base + j;
          gb[j] += op == BinOp::add ? go[i] : op == BinOp::sub ? -go[i] : go[i] * av[i];
        }
    }
  });
}

// Unary elementwise op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Graph& g = a.graph();
  Tensor out(a.shape());
  const double* x = a.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  return g.custom(std::move(out), {a}, [ia, dfdx](Graph& g, std::size_t self) {
    const double* go = g.grad(self).data();
    const double* x = g.value(ia).data();
    const double* y = g.value(self).data();
    Tensor& ga = g.grad_for(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinOp::add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::mul, "mul"); }

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 0.5 * (1.0 + std::tanh(0.5 * x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softmax(Var a) {
  Graph& g = a.graph();
  const Shape& s = a.shape();
  if (s.empty()) throw ShapeError("softmax: rank-0 input");
  const std::size_t d = s.back();
  const std::size_t rows = a.value().size() / d;
  Tensor out(s);
  const double* x = a.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double* yr = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < d; ++j) yr[j] /= z;
  }
  const std::size_t ia = a.id();
  return g.custom(std::move(out), {a}, [ia, rows, d](Graph& g, std::size_t self) {
    const double* go = g.grad(self).data();
    const double* y = g.value(self).data();
    double* ga = g.grad_for(ia).data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += go[r * d + j] * y[r * d + j];
      for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += y[r * d + j] * (go[r * d + j] - dot);
    }
  });
}

Var conv1d(Var x, Var w, Var bias) {
  Graph& g = graph_of(x, w, "conv1d");
  graph_of(x, bias, "conv1d");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 3 || sw[1] != sx[2] || sw[0] == 0 || sw[0] > sx[1])
    shape_fail("conv1d", sx, sw);
  if (bias.shape() != Shape{sw[2]}) shape_fail("conv1d", sw, bias.shape());
  const std::size_t batch = sx[0], t = sx[1], cin = sx[2], kk = sw[0], cout = sw[2];
  const std::size_t tout = t - kk + 1;
  Tensor out({batch, tout, cout});
  for (std::size_t b = 0; b < batch; ++b) {
    MMap O(out.data() + b * tout * cout, tout, cout);
    O.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), cout);
    for (std::size_t k = 0; k < kk; ++k)
      O.noalias() += CMap(x.value().data() + (b * t + k) * cin, tout, cin) *
                     CMap(w.value().data() + k * cin * cout, cin, cout);
  }
  const std::size_t ix = x.id(), iw = w.id(), ibias = bias.id();
  return g.custom(std::move(out), {x, w, bias}, [=](Graph& g, std::size_t self) {
    const bool rx = g.requires_grad(ix), rw = g.requires_grad(iw), rb = g.requires_grad(ibias);
    for (std::size_t b = 0; b < batch; ++b) {
      CMap G(g.grad(self).data() + b * tout * cout, tout, cout);
      if (rb)
        Eigen::Map<Eigen::RowVectorXd>(g.grad_for(ibias).data(), cout) += G.colwise().sum();
      for (std::size_t k = 0; k < kk; ++k) {
        if (rw)
          MMap(g.grad_for(iw).data() + k * cin * cout, cin, cout).noalias() +=
              CMap(g.value(ix).data() + (b * t + k) * cin, tout, cin).transpose() * G;
        if (rx)
          MMap(g.grad_for(ix).data() + (b * t + k) * cin, tout, cin).noalias() +=
              G * CMap(g.value(iw).data() + k * cin * cout, cin, cout).transpose();
      }
    }
  });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  Graph& g = parts.front().graph();
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape so = s0;
  so[axis] = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    graph_of(parts.front(), p, "concat");
    const Shape& s = p.shape();
    if (s.size() != s0.size()) shape_fail("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) shape_fail("concat", s0, s);
    so[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const AxisSplit sp = split_at(so, axis);
  Tensor out(so);
  const std::size_t row = so[axis] * sp.inner;
  std::size_t off = 0;
  std::vector<std::size_t> ids, offsets;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t blk = widths[p] * sp.inner;
    const double* src = parts[p].value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) std::copy(src + o * blk, src + (o + 1) * blk, out.data() + o * row + off);
    ids.push_back(parts[p].id());
    offsets.push_back(off);
    off += blk;
  }
  const std::size_t outer = sp.outer, inner = sp.inner;
  return g.custom(std::move(out), parts, [=](Graph& g, std::size_t self) {
    const double* go = g.grad(self).data();
    for (std::size_t p = 0; p < ids.size(); ++p) {
      if (!g.requires_grad(ids[p])) continue;
      const std::size_t blk = widths[p] * inner;
      double* dst = g.grad_for(ids[p]).data();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < blk; ++j) dst[o * blk + j] += go[o * row + offsets[p] + j];
    }
  });
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  Graph& g = x.graph();
  const Shape& s = x.shape();
  if (axis >= s.size() || start + length > s[axis] || length == 0)
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(axis) + " of " + shape_str(s));
  Shape so = s;
  so[axis] = length;
  const AxisSplit sp = split_at(s, axis);
  const std::size_t in_row = s[axis] * sp.inner, out_row = length * sp.inner, off = start * sp.inner;
  Tensor out(so);
  const double* src = x.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy(src + o * in_row + off, src + o * in_row + off + out_row, out.data() + o * out_row);
  const std::size_t ix = x.id(), outer = sp.outer;
  return g.custom(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const double* go = g.grad(self).data();
    double* dst = g.grad_for(ix).data();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < out_row; ++j) dst[o * in_row + off + j] += go[o * out_row + j];
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = x.graph();
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return g.custom(std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    const double* go = g.grad(self).data();
    Tensor& dst = g.grad_for(ix);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += go[i];
  });
}

Var sum(Var x) {
  Graph& g = x.graph();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return g.custom(Tensor::scalar(s), {x}, [ix](Graph& g, std::size_t self) {
    const double go = g.grad(self)[0];
    for (double& v : g.grad_for(ix).values()) v += go;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mse(Var pred, Var target) {
  Graph& g = graph_of(pred, target, "mse");
  if (pred.value().size() != target.value().size() || pred.value().size() == 0)
    shape_fail("mse", pred.shape(), target.shape());
  const std::size_t n = pred.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  const std::size_t ip = pred.id(), it = target.id();
  return g.custom(Tensor::scalar(s / static_cast<double>(n)), {pred, target}, [=](Graph& g, std::size_t self) {
    const double go = g.grad(self)[0] * 2.0 / static_cast<double>(n);
    const double* p = g.value(ip).data();
    const double* t = g.value(it).data();
    if (g.requires_grad(ip)) {
      double* gp = g.grad_for(ip).data();
      for (std::size_t i = 0; i < n; ++i) gp[i] += go * (p[i] - t[i]);
    }
    if (g.requires_grad(it)) {
      double* gt = g.grad_for(it).data();
      for (std::size_t i = 0; i < n; ++i) gt[i] -= go * (p[i] - t[i]);
    }
  });
}

Var lstm_sequence(Var xw, Var w_hh) {
  Graph& g = graph_of(xw, w_hh, "lstm_sequence");
  const Shape& sx = xw.shape();
  const Shape& sw = w_hh.shape();
  if (sx.size() != 3 || sw.size() != 2 || sw[1] != 4 * sw[0] || sx[2] != sw[1]) shape_fail("lstm_sequence", sx, sw);
  const std::size_t B = sx[0], T = sx[1], H = sw[0], G = 4 * H;
  // Saved per step: activated gates [B, 4H], cell state and its tanh [B, H].
  auto gates = std::make_shared<std::vector<double>>(T * B * G);
  auto cells = std::make_shared<std::vector<double>>(T * B * H);
  auto tcells = std::make_shared<std::vector<double>>(T * B * H);
  auto hidden = std::make_shared<std::vector<double>>(T * B * H);
  RowMat z(B, G);
  CMap W(w_hh.value().data(), H, G);
  const double* x = xw.value().data();
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b)
      std::copy(x + (b * T + t) * G, x + (b * T + t + 1) * G, z.data() + b * G);
    if (t > 0) z.noalias() += CMap(hidden->data() + (t - 1) * B * H, B, H) * W;
    double* ga = gates->data() + t * B * G;
    double* c = cells->data() + t * B * H;
    double* tc = tcells->data() + t * B * H;
    double* h = hidden->data() + t * B * H;
    const double* cprev = t > 0 ? cells->data() + (t - 1) * B * H : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
      const double* zr = z.data() + b * G;
      double* gr = ga + b * G;
      for (std::size_t j = 0; j < H; ++j) {
        const double i = 0.5 * (1.0 + std::tanh(0.5 * zr[j]));
        const double f = 0.5 * (1.0 + std::tanh(0.5 * zr[H + j]));
        const double gg = std::tanh(zr[2 * H + j]);
        const double o = 0.5 * (1.0 + std::tanh(0.5 * zr[3 * H + j]));
        gr[j] = i;
        gr[H + j] = f;
        gr[2 * H + j] = gg;
        gr[3 * H + j] = o;
        const std::size_t k = b * H + j;
        c[k] = (cprev ? f * cprev[k] : 0.0) + i * gg;
        tc[k] = std::tanh(c[k]);
        h[k] = o * tc[k];
      }
    }
  }
  Tensor out({B, H}, std::vector<double>(hidden->end() - static_cast<std::ptrdiff_t>(B * H), hidden->end()));
  const std::size_t ix = xw.id(), iw = w_hh.id();
  return g.custom(std::move(out), {xw, w_hh}, [=](Graph& g, std::size_t self) {
    const bool rx = g.requires_grad(ix), rw = g.requires_grad(iw);
    RowMat dh = CMap(g.grad(self).data(), B, H);
    RowMat dc = RowMat::Zero(B, H);
    RowMat dz(B, G);
    CMap W(g.value(iw).data(), H, G);
    double* gx = rx ? g.grad_for(ix).data() : nullptr;
    double* gw = rw ? g.grad_for(iw).data() : nullptr;
    for (std::size_t t = T; t-- > 0;) {
      const double* ga = gates->data() + t * B * G;
      const double* tc = tcells->data() + t * B * H;
      const double* cprev = t > 0 ? cells->data() + (t - 1) * B * H : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t j = 0; j < H; ++j) {
          const std::size_t k = b * H + j;
          const double* gr = ga + b * G;
          const double i = gr[j], f = gr[H + j], gg = gr[2 * H + j], o = gr[3 * H + j];
          const double dhk = dh.data()[k];
          double dck = dc.data()[k] + dhk * o * (1.0 - tc[k] * tc[k]);
          double* dzr = dz.data() + b * G;
          dzr[j] = dck * gg * i * (1.0 - i);
          dzr[H + j] = cprev ? dck * cprev[k] * f * (1.0 - f) : 0.0;
          dzr[2 * H + j] = dck * i * (1.0 - gg * gg);
          dzr[3 * H + j] = dhk * tc[k] * o * (1.0 - o);
          dc.data()[k] = dck * f;
        }
      if (gx)
        for (std::size_t b = 0; b < B; ++b) {
          double* dst = gx + (b * T + t) * G;
          const double* src = dz.data() + b * G;
          for (std::size_t j = 0; j < G; ++j) dst[j] += src[j];
        }
      if (t > 0) {
        CMap hprev(hidden->data() + (t - 1) * B * H, B, H);
        if (gw) MMap(gw, H, G).noalias() += hprev.transpose() * dz;
        dh.noalias() = dz * W.transpose();
      }
    }
  });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  Tensor mask(x.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& m : mask.values()) m = u(rng) >= rate ? 1.0 / (1.0 - rate) : 0.0;
  return mul(x, x.graph().constant(std::move(mask)));
}

// ---------------------------------------------------------------------------

GradcheckReport gradcheck(const std::function<Var(Graph&)>& build_loss,
                          const std::vector<Parameter*>& params, const GradcheckOptions& opt) {
  GradcheckReport rep;
  {
    Graph g;
    Var loss = build_loss(g);
    g.backward(loss);
  }
  std::vector<Tensor> analytic;
  std::size_t total = 0;
  for (Parameter* p : params) {
    analytic.push_back(p->grad.empty() ? Tensor(p->value.shape(), 0.0) : p->grad);
    total += p->value.size();
  }
  if (total == 0) {
    rep.passed = true;
    return rep;
  }

  std::mt19937_64 rng(opt.seed);
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i]->value.size() > 0)
      probes.emplace_back(i, std::uniform_int_distribution<std::size_t>(0, params[i]->value.size() - 1)(rng));
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  while (probes.size() < opt.samples) {
    std::size_t flat = pick(rng), i = 0;
    while (flat >= params[i]->value.size()) flat -= params[i++]->value.size();
    probes.emplace_back(i, flat);
  }

  auto eval = [&]() {
    Graph g;
    return build_loss(g).value().item();
  };
  for (const auto& [pi, idx] : probes) {
    Parameter& p = *params[pi];
    const double saved = p.value[idx];
    p.value[idx] = saved + opt.step;
    const double up = eval();
    p.value[idx] = saved - opt.step;
    const double down = eval();
    p.value[idx] = saved;
    GradcheckEntry e;
    e.parameter = p.name;
    e.index = idx;
    e.analytic = analytic[pi][idx];
    e.numeric = (up - down) / (2.0 * opt.step);
    e.rel_error = std::abs(e.analytic - e.numeric) /
                  std::max({std::abs(e.analytic), std::abs(e.numeric), opt.floor});
    rep.worst = std::max(rep.worst, e.rel_error);
    auto& slot = rep.max_rel_error[p.name];
    slot = std::max(slot, e.rel_error);
    rep.entries.push_back(e);
  }
  rep.passed = rep.worst <= opt.tolerance;
  return rep;
}

}  // namespace locodec::ad
