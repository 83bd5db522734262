#include "cva/tape.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace cva::ad {

namespace {

std::array<double, 32> g_fault_factor = [] {
  std::array<double, 32> a{};
  a.fill(1.0);
  return a;
}();

}  // namespace

namespace testing {
void corrupt_backward(Op op, double factor) { g_fault_factor[static_cast<std::size_t>(op)] = factor; }
void reset_backward_faults() { g_fault_factor.fill(1.0); }
}  // namespace testing

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Affine: return "affine";
    case Op::Outer: return "outer";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Mul: return "mul";
    case Op::Add: return "add";
    case Op::OneMinus: return "one_minus";
    case Op::AddRow: return "add_row";
    case Op::MulRow: return "mul_row";
    case Op::ScaleRows: return "scale_rows";
    case Op::AddScalar: return "add_scalar";
    case Op::Softmax: return "softmax";
    case Op::MeanRows: return "mean_rows";
    case Op::WeightedSumRows: return "weighted_sum_rows";
    case Op::Embed: return "embed";
    case Op::CrossEntropy: return "cross_entropy";
    case Op::Sum: return "sum";
    case Op::MaskMul: return "mask_mul";
  }
  return "?";
}

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.ref = &value;
  n.requires_grad = true;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node_value(v.id); }

const Tensor& Tape::grad(Var v) const {
  if (v.id >= grads_.size()) throw std::logic_error("grad() requested before backward()");
  return grads_[v.id];
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss lives on another tape");
  const Tensor& lv = node_value(loss.id);
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_string(lv.shape()));
  require_finite(lv, "loss");
  grads_.assign(nodes_.size(), Tensor{});
  for (std::size_t i = 0; i < nodes_.size(); ++i) grads_[i] = Tensor(node_value(static_cast<std::uint32_t>(i)).shape());
  grads_[loss.id].fill(1.0);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.op == Op::Leaf) continue;
    const double f = g_fault_factor[static_cast<std::size_t>(n.op)];
    if (f != 1.0)
      for (auto& g : grads_[id].data()) g *= f;
    backprop_node(id);
  }
}

// Accessor used by the free-function primitives.
struct Recorder {
  static Tape& tape_of(std::initializer_list<Var> vars) {
    Tape* t = vars.begin()->tape;
    for (const auto& v : vars)
      if (v.tape != t || t == nullptr) throw std::invalid_argument("operands live on different tapes");
    return *t;
  }

  static Var record(Tape& t, Op op, std::initializer_list<Var> inputs, Tensor value, Tensor aux = {},
                    double scale = 0.0, std::size_t index = 0) {
    Tape::Node n;
    n.op = op;
    n.value = std::move(value);
    n.aux = std::move(aux);
    n.scale = scale;
    n.index = index;
    for (const auto& v : inputs) {
      n.in[n.n_in++] = v.id;
      n.requires_grad = n.requires_grad || t.nodes_[v.id].requires_grad;
    }
    return t.push(std::move(n));
  }

  static void backprop(Tape& t, std::uint32_t id);
};

void Tape::backprop_node(std::uint32_t id) { Recorder::backprop(*this, id); }

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) throw ShapeError(what, a.shape(), b.shape());
}

void require_rank(const Tensor& a, std::size_t r, const char* what) {
  if (a.rank() != r) throw ShapeError(std::string(what) + " rank mismatch", a.shape(), Shape(r, 1));
}

}  // namespace

Var affine(Var W, Var x, std::optional<Var> b) {
  Tape& t = b ? Recorder::tape_of({W, x, *b}) : Recorder::tape_of({W, x});
  const Tensor& w = W.value();
  const Tensor& xv = x.value();
  if (w.rank() != 2) throw ShapeError("affine weight must be a matrix", w.shape(), xv.shape());
  if (xv.rank() < 1 || xv.rank() > 2 || xv.shape().back() != w.cols())
    throw ShapeError("affine weight/input mismatch", w.shape(), xv.shape());
  const std::size_t m = w.rows(), n = w.cols();
  const std::size_t rows = xv.rank() == 1 ? 1 : xv.rows();
  const double* bv = nullptr;
  if (b) {
    const Tensor& bt = b->value();
    if (bt.rank() != 1 || bt.size() != m) throw ShapeError("affine bias/weight mismatch", bt.shape(), w.shape());
    bv = bt.data().data();
  }
  Tensor y = xv.rank() == 1 ? Tensor(Shape{m}) : Tensor(Shape{rows, m});
  const double* wp = w.data().data();
  const double* xp = xv.data().data();
  double* yp = y.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xp + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double* wi = wp + i * n;
      double acc = bv ? bv[i] : 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += wi[j] * xr[j];
      yp[r * m + i] = acc;
    }
  }
  if (b) return Recorder::record(t, Op::Affine, {W, x, *b}, std::move(y));
  return Recorder::record(t, Op::Affine, {W, x}, std::move(y));
}

Var outer(Var a, Var b) {
  Tape& t = Recorder::tape_of({a, b});
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank(av, 1, "outer");
  require_rank(bv, 1, "outer");
  Tensor y(Shape{av.size(), bv.size()});
  for (std::size_t i = 0; i < av.size(); ++i)
    for (std::size_t j = 0; j < bv.size(); ++j) y(i, j) = av[i] * bv[j];
  return Recorder::record(t, Op::Outer, {a, b}, std::move(y));
}

Var tanh(Var x) {
  Tape& t = Recorder::tape_of({x});
  Tensor y = x.value();
  for (auto& v : y.data()) v = std::tanh(v);
  return Recorder::record(t, Op::Tanh, {x}, std::move(y));
}

Var sigmoid(Var x) {
  Tape& t = Recorder::tape_of({x});
  Tensor y = x.value();
  for (auto& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  return Recorder::record(t, Op::Sigmoid, {x}, std::move(y));
}

Var mul(Var a, Var b) {
  Tape& t = Recorder::tape_of({a, b});
  require_same(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const auto bv = b.value().data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] *= bv[i];
  return Recorder::record(t, Op::Mul, {a, b}, std::move(y));
}

Var add(Var a, Var b) {
  Tape& t = Recorder::tape_of({a, b});
  require_same(a.value(), b.value(), "add");
  Tensor y = a.value();
  const auto bv = b.value().data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += bv[i];
  return Recorder::record(t, Op::Add, {a, b}, std::move(y));
}

Var one_minus(Var x) {
  Tape& t = Recorder::tape_of({x});
  Tensor y = x.value();
  for (auto& v : y.data()) v = 1.0 - v;
  return Recorder::record(t, Op::OneMinus, {x}, std::move(y));
}

Var add_row(Var m, Var v) {
  Tape& t = Recorder::tape_of({m, v});
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  require_rank(mv, 2, "add_row");
  if (vv.rank() != 1 || vv.size() != mv.cols()) throw ShapeError("add_row", mv.shape(), vv.shape());
  Tensor y = mv;
  for (std::size_t k = 0; k < mv.rows(); ++k) {
    auto r = y.row(k);
    for (std::size_t d = 0; d < r.size(); ++d) r[d] += vv[d];
  }
  return Recorder::record(t, Op::AddRow, {m, v}, std::move(y));
}

Var mul_row(Var m, Var v) {
  Tape& t = Recorder::tape_of({m, v});
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  require_rank(mv, 2, "mul_row");
  if (vv.rank() != 1 || vv.size() != mv.cols()) throw ShapeError("mul_row", mv.shape(), vv.shape());
  Tensor y = mv;
  for (std::size_t k = 0; k < mv.rows(); ++k) {
    auto r = y.row(k);
    for (std::size_t d = 0; d < r.size(); ++d) r[d] *= vv[d];
  }
  return Recorder::record(t, Op::MulRow, {m, v}, std::move(y));
}

Var scale_rows(Var m, Var w) {
  Tape& t = Recorder::tape_of({m, w});
  const Tensor& mv = m.value();
  const Tensor& wv = w.value();
  require_rank(mv, 2, "scale_rows");
  if (wv.rank() != 1 || wv.size() != mv.rows()) throw ShapeError("scale_rows", mv.shape(), wv.shape());
  Tensor y = mv;
  for (std::size_t k = 0; k < mv.rows(); ++k)
    for (auto& e : y.row(k)) e *= wv[k];
  return Recorder::record(t, Op::ScaleRows, {m, w}, std::move(y));
}

Var add_scalar(Var x, Var s) {
  Tape& t = Recorder::tape_of({x, s});
  if (s.value().size() != 1) throw ShapeError("add_scalar expects a scalar", s.value().shape(), Shape{});
  Tensor y = x.value();
  const double sv = s.value()[0];
  for (auto& v : y.data()) v += sv;
  return Recorder::record(t, Op::AddScalar, {x, s}, std::move(y));
}

Var softmax(Var x) {
  Tape& t = Recorder::tape_of({x});
  return Recorder::record(t, Op::Softmax, {x}, cva::softmax(x.value()));
}

Var mean_rows(Var m) {
  Tape& t = Recorder::tape_of({m});
  return Recorder::record(t, Op::MeanRows, {m}, cva::mean_over_rows(m.value()));
}

Var weighted_sum_rows(Var w, Var m, double scale) {
  Tape& t = Recorder::tape_of({w, m});
  const Tensor& mv = m.value();
  const Tensor& wv = w.value();
  require_rank(mv, 2, "weighted_sum_rows");
  if (wv.rank() != 1 || wv.size() != mv.rows()) throw ShapeError("weighted_sum_rows", wv.shape(), mv.shape());
  Tensor y(Shape{mv.cols()});
  for (std::size_t k = 0; k < mv.rows(); ++k) {
    auto r = mv.row(k);
    for (std::size_t d = 0; d < r.size(); ++d) y[d] += wv[k] * r[d];
  }
  for (auto& v : y.data()) v *= scale;
  return Recorder::record(t, Op::WeightedSumRows, {w, m}, std::move(y), {}, scale);
}

Var embed(Var table, std::size_t index) {
  Tape& t = Recorder::tape_of({table});
  const Tensor& tv = table.value();
  require_rank(tv, 2, "embed");
  if (index >= tv.rows())
    throw std::out_of_range("embedding index " + std::to_string(index) + " >= vocabulary size " +
                            std::to_string(tv.rows()));
  auto r = tv.row(index);
  return Recorder::record(t, Op::Embed, {table}, Tensor::vector({r.begin(), r.end()}), {}, 0.0, index);
}

Var cross_entropy(Var logits, std::size_t label) {
  Tape& t = Recorder::tape_of({logits});
  const Tensor& z = logits.value();
  require_rank(z, 1, "cross_entropy");
  if (label >= z.size())
    throw std::invalid_argument("cross_entropy label " + std::to_string(label) + " out of range for " +
                                std::to_string(z.size()) + " classes");
  Tensor p = cva::softmax(z);
  const auto zd = z.data();
  const double mx = *std::max_element(zd.begin(), zd.end());
  double s = 0.0;
  for (double v : zd) s += std::exp(v - mx);
  const double loss = (mx + std::log(s)) - zd[label];
  return Recorder::record(t, Op::CrossEntropy, {logits}, Tensor::scalar(std::max(loss, 0.0)), std::move(p), 0.0,
                          label);
}

Var sum(Var x) {
  Tape& t = Recorder::tape_of({x});
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return Recorder::record(t, Op::Sum, {x}, Tensor::scalar(s));
}

Var mask_mul(Var x, Tensor mask) {
  Tape& t = Recorder::tape_of({x});
  require_same(x.value(), mask, "mask_mul");
  Tensor y = x.value();
  const auto md = mask.data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] *= md[i];
  return Recorder::record(t, Op::MaskMul, {x}, std::move(y), std::move(mask));
}

void Recorder::backprop(Tape& t, std::uint32_t id) {
  const Tape::Node& n = t.nodes_[id];
  const Tensor& y = t.node_value(id);
  const auto g = t.grads_[id].data();
  auto needs = [&](std::size_t i) { return t.nodes_[n.in[i]].requires_grad; };
  auto in_val = [&](std::size_t i) -> const Tensor& { return t.node_value(n.in[i]); };
  auto in_grad = [&](std::size_t i) { return t.grads_[n.in[i]].data(); };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Affine: {
      const Tensor& w = in_val(0);
      const Tensor& x = in_val(1);
      const std::size_t m = w.rows(), nn = w.cols();
      const std::size_t rows = x.rank() == 1 ? 1 : x.rows();
      const double* wp = w.data().data();
      const double* xp = x.data().data();
      if (needs(0)) {
        double* gw = in_grad(0).data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[r * m + i];
            if (gi == 0.0) continue;
            double* gwi = gw + i * nn;
            const double* xr = xp + r * nn;
            for (std::size_t j = 0; j < nn; ++j) gwi[j] += gi * xr[j];
          }
      }
      if (needs(1)) {
        double* gx = in_grad(1).data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < m; ++i) {
            const double gi = g[r * m + i];
            if (gi == 0.0) continue;
            const double* wi = wp + i * nn;
            double* gxr = gx + r * nn;
            for (std::size_t j = 0; j < nn; ++j) gxr[j] += gi * wi[j];
          }
      }
      if (n.n_in == 3 && needs(2)) {
        auto gb = in_grad(2);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < m; ++i) gb[i] += g[r * m + i];
      }
      break;
    }
    case Op::Outer: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      const std::size_t m = a.size(), nn = b.size();
      if (needs(0)) {
        auto ga = in_grad(0);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * b[j];
          ga[i] += acc;
        }
      }
      if (needs(1)) {
        auto gb = in_grad(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nn; ++j) gb[j] += g[i * nn + j] * a[i];
      }
      break;
    }
    case Op::Tanh: {
      auto gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
      break;
    }
    case Op::Sigmoid: {
      auto gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
      break;
    }
    case Op::Mul: {
      const Tensor& a = in_val(0);
      const Tensor& b = in_val(1);
      if (needs(0)) {
        auto ga = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (needs(1)) {
        auto gb = in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::Add: {
      for (std::size_t k = 0; k < 2; ++k)
        if (needs(k)) {
          auto gk = in_grad(k);
          for (std::size_t i = 0; i < g.size(); ++i) gk[i] += g[i];
        }
      break;
    }
    case Op::OneMinus: {
      auto gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
      break;
    }
    case Op::AddRow: {
      const std::size_t cols = y.cols();
      if (needs(0)) {
        auto gm = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
      }
      if (needs(1)) {
        auto gv = in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i % cols] += g[i];
      }
      break;
    }
    case Op::MulRow: {
      const Tensor& m = in_val(0);
      const Tensor& v = in_val(1);
      const std::size_t cols = m.cols();
      if (needs(0)) {
        auto gm = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i] * v[i % cols];
      }
      if (needs(1)) {
        auto gv = in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) gv[i % cols] += g[i] * m[i];
      }
      break;
    }
    case Op::ScaleRows: {
      const Tensor& m = in_val(0);
      const Tensor& w = in_val(1);
      const std::size_t cols = m.cols();
      if (needs(0)) {
        auto gm = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i] * w[i / cols];
      }
      if (needs(1)) {
        auto gw = in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) gw[i / cols] += g[i] * m[i];
      }
      break;
    }
    case Op::AddScalar: {
      if (needs(0)) {
        auto gx = in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (needs(1)) {
        double s = 0.0;
        for (double v : g) s += v;
        in_grad(1)[0] += s;
      }
      break;
    }
    case Op::Softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      auto gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot);
      break;
    }
    case Op::MeanRows: {
      const Tensor& m = in_val(0);
      const std::size_t cols = m.cols();
      const double inv = 1.0 / static_cast<double>(m.rows());
      auto gm = in_grad(0);
      for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i % cols] * inv;
      break;
    }
    case Op::WeightedSumRows: {
      const Tensor& w = in_val(0);
      const Tensor& m = in_val(1);
      const std::size_t cols = m.cols();
      if (needs(0)) {
        auto gw = in_grad(0);
        for (std::size_t k = 0; k < m.rows(); ++k) {
          auto r = m.row(k);
          double acc = 0.0;
          for (std::size_t d = 0; d < cols; ++d) acc += g[d] * r[d];
          gw[k] += n.scale * acc;
        }
      }
      if (needs(1)) {
        auto gm = in_grad(1);
        for (std::size_t k = 0; k < m.rows(); ++k)
          for (std::size_t d = 0; d < cols; ++d) gm[k * cols + d] += n.scale * w[k] * g[d];
      }
      break;
    }
    case Op::Embed: {
      auto gt = in_grad(0);
      const std::size_t cols = g.size();
      for (std::size_t d = 0; d < cols; ++d) gt[n.index * cols + d] += g[d];
      break;
    }
    case Op::CrossEntropy: {
      auto gz = in_grad(0);
      const double gl = g[0];
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += gl * (n.aux[i] - (i == n.index ? 1.0 : 0.0));
      break;
    }
    case Op::Sum: {
      auto gx = in_grad(0);
      for (auto& v : gx) v += g[0];
      break;
    }
    case Op::MaskMul: {
      auto gx = in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * n.aux[i];
      break;
    }
  }
}

}  // namespace cva::ad
