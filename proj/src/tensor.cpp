#include "aped/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "aped/error.hpp"

namespace aped::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

thread_local bool t_grad_enabled = true;
#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

int rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
int cols_of(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw Error(std::string(op) + ": " + what);
}

ConstMatMap cmap(const Node& n) { return ConstMatMap(n.value->data(), rows_of(n.shape), cols_of(n.shape)); }
MatMap gmap(Node& n) { return MatMap(n.ensure_grad().data(), rows_of(n.shape), cols_of(n.shape)); }
ConstMatMap self_grad(const Node& n) { return ConstMatMap(n.grad.data(), rows_of(n.shape), cols_of(n.shape)); }

Tensor make_op(const char* op, Shape shape, Buffer values, std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<Buffer>(std::move(values));
  node->op = op;
  if (g_finite_checks) {
    for (double v : *node->value) {
      if (!std::isfinite(v)) throw Error(std::string(op) + ": produced a non-finite value");
    }
  }
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor* t : inputs) node->parents.push_back(t->node());
    }
  }
  return Tensor(std::move(node));
}

Tensor make_op_n(const char* op, Shape shape, Buffer values, const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<Buffer>(std::move(values));
  node->op = op;
  if (g_finite_checks) {
    for (double v : *node->value) {
      if (!std::isfinite(v)) throw Error(std::string(op) + ": produced a non-finite value");
    }
  }
  if (t_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const auto& t : inputs) node->parents.push_back(t.node());
    }
  }
  return Tensor(std::move(node));
}

template <typename Fn>
void on_backward(Tensor& out, Fn&& fn) {
  if (out.requires_grad()) out.node()->backward_fn = std::forward<Fn>(fn);
}

// Unary elementwise op with derivative expressed through (x, y).
template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdx) {
  const auto& av = *a.node()->value;
  Buffer out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tensor r = make_op(op, a.shape(), std::move(out), {&a});
  on_backward(r, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    const auto& x = *p.value;
    const auto& y = *self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(x[i], y[i]);
  });
  return r;
}

}  // namespace

// ---- Node / Tensor ---------------------------------------------------------

Buffer& Node::ensure_grad() {
  if (grad.size() != value->size()) grad.assign(value->size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.size() > 2) throw Error("tensors of rank > 2 are not supported");
  if (numel(shape) != values.size()) {
    throw Error("tensor value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::make_shared<Buffer>(values.begin(), values.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::column(std::vector<double> values, bool requires_grad) {
  const int n = static_cast<int>(values.size());
  return from({n, 1}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of an undefined tensor");
  return node_->shape;
}
int Tensor::rows() const { return rows_of(shape()); }
int Tensor::cols() const { return cols_of(shape()); }
std::size_t Tensor::size() const { return node_->value->size(); }

std::span<const double> Tensor::values() const { return *node_->value; }
std::span<double> Tensor::mutable_values() { return *node_->value; }

double Tensor::item() const {
  if (size() != 1) throw Error("item() on a tensor of shape " + shape_str(shape()));
  return (*node_->value)[0];
}

double Tensor::at(int row, int col) const {
  if (row < 0 || row >= rows() || col < 0 || col >= cols()) throw Error("tensor index out of range");
  return (*node_->value)[static_cast<std::size_t>(row) * cols() + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value->size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }
void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->value->size(), 0.0);
}

Tensor Tensor::view_leaf(bool requires_grad) const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->value = node_->value;
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->shape = shape();
  node->value = std::make_shared<Buffer>(*node_->value);
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (size() != 1) throw Error("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (!requires_grad()) throw Error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value->size(), 0.0);
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void configure_allocator() {
#if defined(__GLIBC__)
  // Graphs free and reallocate the same buffers every step; keep them in
  // the heap instead of returning them to the kernel.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks() { return g_finite_checks; }

// ---- linear algebra --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.rows(), n = b.cols();
  Buffer out(static_cast<std::size_t>(m) * n);
  MatMap(out.data(), m, n).noalias() = cmap(*a.node()) * cmap(*b.node());
  Tensor r = make_op("matmul", {m, n}, std::move(out), {&a, &b});
  on_backward(r, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto g = self_grad(self);
    if (pa.requires_grad) gmap(pa).noalias() += g * cmap(pb).transpose();
    if (pb.requires_grad) gmap(pb).noalias() += cmap(pa).transpose() * g;
  });
  return r;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.cols() == w.rows(), "affine", "inner dimensions differ: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  require(b.rows() == 1 && b.cols() == w.cols(), "affine", "bias must be 1 x " + std::to_string(w.cols()));
  const int m = x.rows(), n = w.cols();
  Buffer out(static_cast<std::size_t>(m) * n);
  auto y = MatMap(out.data(), m, n);
  y.noalias() = cmap(*x.node()) * cmap(*w.node());
  y.rowwise() += cmap(*b.node()).row(0);
  Tensor r = make_op("affine", {m, n}, std::move(out), {&x, &w, &b});
  on_backward(r, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    const auto g = self_grad(self);
    if (px.requires_grad) gmap(px).noalias() += g * cmap(pw).transpose();
    if (pw.requires_grad) gmap(pw).noalias() += cmap(px).transpose() * g;
    if (pb.requires_grad) gmap(pb).row(0) += g.colwise().sum();
  });
  return r;
}

Tensor transpose(const Tensor& a) {
  const int m = a.rows(), n = a.cols();
  Buffer out(static_cast<std::size_t>(m) * n);
  MatMap(out.data(), n, m) = cmap(*a.node()).transpose();
  Tensor r = make_op("transpose", {n, m}, std::move(out), {&a});
  on_backward(r, [](Node& self) {
    Node& p = *self.parents[0];
    if (p.requires_grad) gmap(p) += self_grad(self).transpose();
  });
  return r;
}

// ---- elementwise -----------------------------------------------------------

namespace {

enum class BinKind { add, sub, mul, div };

Tensor binary(const char* op, BinKind kind, const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape() || (a.size() == b.size() && a.rows() == b.rows() && a.cols() == b.cols());
  const bool row_broadcast = !same && (kind == BinKind::add || kind == BinKind::sub) && b.rows() == 1 && b.cols() == a.cols();
  require(same || row_broadcast, op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int m = a.rows(), n = a.cols();
  Buffer out(a.size());
  auto y = MatMap(out.data(), m, n);
  const auto x = cmap(*a.node());
  const auto z = cmap(*b.node());
  if (row_broadcast) {
    y = kind == BinKind::add ? (x.rowwise() + z.row(0)).eval() : (x.rowwise() - z.row(0)).eval();
  } else {
    switch (kind) {
      case BinKind::add: y = x + z; break;
      case BinKind::sub: y = x - z; break;
      case BinKind::mul: y = x.cwiseProduct(z); break;
      case BinKind::div: y = x.cwiseQuotient(z); break;
    }
  }
  Tensor r = make_op(op, a.shape(), std::move(out), {&a, &b});
  on_backward(r, [kind, row_broadcast](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto g = self_grad(self);
    const auto x = cmap(pa);
    const auto z = cmap(pb);
    if (pa.requires_grad) {
      auto ga = gmap(pa);
      switch (kind) {
        case BinKind::add:
        case BinKind::sub: ga += g; break;
        case BinKind::mul: ga += g.cwiseProduct(z); break;
        case BinKind::div: ga += g.cwiseQuotient(z); break;
      }
    }
    if (pb.requires_grad) {
      auto gb = gmap(pb);
      if (row_broadcast) {
        if (kind == BinKind::add) gb.row(0) += g.colwise().sum();
        else gb.row(0) -= g.colwise().sum();
        return;
      }
      switch (kind) {
        case BinKind::add: gb += g; break;
        case BinKind::sub: gb -= g; break;
        case BinKind::mul: gb += g.cwiseProduct(x); break;
        case BinKind::div: gb.array() -= g.array() * x.array() / z.array().square(); break;
      }
    }
  });
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary("div", BinKind::div, a, b); }

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw Error("log: argument must be positive");
  }
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor pow_scalar(const Tensor& a, double exponent) {
  for (double v : a.values()) {
    if (v < 0.0) throw Error("pow_scalar: negative base");
  }
  return unary(
      "pow_scalar", a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x, double) { return exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  require(lo <= hi, "clamp", "lo must not exceed hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- structural ------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat", "no inputs");
  require(axis == 0 || axis == 1, "concat", "axis must be 0 or 1");
  const int rows0 = parts[0].rows(), cols0 = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      require(p.cols() == cols0, "concat", "column counts differ");
      total += p.rows();
    } else {
      require(p.rows() == rows0, "concat", "row counts differ");
      total += p.cols();
    }
  }
  const int out_rows = axis == 0 ? total : rows0;
  const int out_cols = axis == 0 ? cols0 : total;
  Buffer out(static_cast<std::size_t>(out_rows) * out_cols);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    if (axis == 0) {
      MatMap(out.data(), out_rows, out_cols).middleRows(off, p.rows()) = cmap(*p.node());
      off += p.rows();
    } else {
      MatMap(out.data(), out_rows, out_cols).middleCols(off, p.cols()) = cmap(*p.node());
      off += p.cols();
    }
  }
  Tensor r = make_op_n("concat", {out_rows, out_cols}, std::move(out), parts);
  on_backward(r, [axis, offsets](Node& self) {
    const auto g = self_grad(self);
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (!p.requires_grad) continue;
      if (axis == 0) {
        gmap(p) += g.middleRows(offsets[i], rows_of(p.shape));
      } else {
        gmap(p) += g.middleCols(offsets[i], cols_of(p.shape));
      }
    }
  });
  return r;
}

Tensor slice(const Tensor& a, int axis, int begin, int end) {
  require(axis == 0 || axis == 1, "slice", "axis must be 0 or 1");
  const int extent = axis == 0 ? a.rows() : a.cols();
  require(0 <= begin && begin <= end && end <= extent, "slice", "range out of bounds");
  const int out_rows = axis == 0 ? end - begin : a.rows();
  const int out_cols = axis == 0 ? a.cols() : end - begin;
  Buffer out(static_cast<std::size_t>(out_rows) * out_cols);
  if (axis == 0) {
    MatMap(out.data(), out_rows, out_cols) = cmap(*a.node()).middleRows(begin, out_rows);
  } else {
    MatMap(out.data(), out_rows, out_cols) = cmap(*a.node()).middleCols(begin, out_cols);
  }
  Tensor r = make_op("slice", {out_rows, out_cols}, std::move(out), {&a});
  on_backward(r, [axis, begin](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const auto g = self_grad(self);
    if (axis == 0) {
      gmap(p).middleRows(begin, g.rows()) += g;
    } else {
      gmap(p).middleCols(begin, g.cols()) += g;
    }
  });
  return r;
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  const int vocab = table.rows(), dim = table.cols();
  const int n = static_cast<int>(ids.size());
  Buffer out(static_cast<std::size_t>(n) * dim);
  const auto& tv = *table.node()->value;
  for (int i = 0; i < n; ++i) {
    require(ids[i] >= 0 && ids[i] < vocab, "embedding_lookup", "index " + std::to_string(ids[i]) + " out of range");
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i]) * dim, dim, out.begin() + static_cast<std::ptrdiff_t>(i) * dim);
  }
  Tensor r = make_op("embedding_lookup", {n, dim}, std::move(out), {&table});
  on_backward(r, [idx = std::vector<int>(ids.begin(), ids.end()), dim](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (int c = 0; c < dim; ++c) g[static_cast<std::size_t>(idx[i]) * dim + c] += self.grad[i * dim + c];
    }
  });
  return r;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const int n = x.rows(), d = x.cols();
  require(gain.size() == static_cast<std::size_t>(d) && bias.size() == static_cast<std::size_t>(d), "layer_norm",
          "gain/bias must have one entry per column");
  const auto& xv = *x.node()->value;
  const auto& gv = *gain.node()->value;
  const auto& bv = *bias.node()->value;
  Buffer out(xv.size());
  Buffer xhat(xv.size());
  Buffer inv_std(n);
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<std::size_t>(i) * d;
    double mu = 0.0;
    for (int c = 0; c < d; ++c) mu += row[c];
    mu /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= d;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) {
      const std::size_t k = static_cast<std::size_t>(i) * d + c;
      xhat[k] = (row[c] - mu) * inv_std[i];
      out[k] = xhat[k] * gv[c] + bv[c];
    }
  }
  Tensor r = make_op("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias});
  on_backward(r, [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const auto& g = self.grad;
    const auto& gv = *pg.value;
    if (pg.requires_grad || pb.requires_grad) {
      auto* gg = pg.requires_grad ? &pg.ensure_grad() : nullptr;
      auto* gb = pb.requires_grad ? &pb.ensure_grad() : nullptr;
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < d; ++c) {
          const std::size_t k = static_cast<std::size_t>(i) * d + c;
          if (gg) (*gg)[c] += g[k] * xhat[k];
          if (gb) (*gb)[c] += g[k];
        }
      }
    }
    if (px.requires_grad) {
      auto& gx = px.ensure_grad();
      for (int i = 0; i < n; ++i) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int c = 0; c < d; ++c) {
          const std::size_t k = static_cast<std::size_t>(i) * d + c;
          const double dy = g[k] * gv[c];
          sum_dy += dy;
          sum_dy_xhat += dy * xhat[k];
        }
        for (int c = 0; c < d; ++c) {
          const std::size_t k = static_cast<std::size_t>(i) * d + c;
          const double dy = g[k] * gv[c];
          gx[k] += inv_std[i] * (dy - sum_dy / d - xhat[k] * sum_dy_xhat / d);
        }
      }
    }
  });
  return r;
}

// ---- reductions / normalisation --------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  require(axis == -1 || axis == 0 || axis == 1, "softmax", "axis out of range");
  const bool by_row = axis != 0;
  const int n = a.rows(), d = a.cols();
  const auto& av = *a.node()->value;
  Buffer out(av.size());
  const int outer = by_row ? n : d;
  const int inner = by_row ? d : n;
  auto idx = [by_row, d](int o, int i) -> std::size_t {
    return by_row ? static_cast<std::size_t>(o) * d + i : static_cast<std::size_t>(i) * d + o;
  };
  for (int o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < inner; ++i) mx = std::max(mx, av[idx(o, i)]);
    double z = 0.0;
    for (int i = 0; i < inner; ++i) {
      const double e = std::exp(av[idx(o, i)] - mx);
      out[idx(o, i)] = e;
      z += e;
    }
    for (int i = 0; i < inner; ++i) out[idx(o, i)] /= z;
  }
  Tensor r = make_op("softmax", a.shape(), std::move(out), {&a});
  on_backward(r, [outer, inner, idx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    const auto& y = *self.value;
    for (int o = 0; o < outer; ++o) {
      double dot = 0.0;
      for (int i = 0; i < inner; ++i) dot += self.grad[idx(o, i)] * y[idx(o, i)];
      for (int i = 0; i < inner; ++i) g[idx(o, i)] += y[idx(o, i)] * (self.grad[idx(o, i)] - dot);
    }
  });
  return r;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                            std::span<const std::uint8_t> mask, std::vector<double>* probs_out) {
  const int lq = q.rows(), lk = k.rows(), d = q.cols();
  require(n_heads > 0 && d % n_heads == 0, "multi_head_attention", "d_model must be divisible by n_heads");
  require(k.cols() == d && v.cols() == d && v.rows() == lk, "multi_head_attention",
          "shape mismatch " + shape_str(q.shape()) + " " + shape_str(k.shape()) + " " + shape_str(v.shape()));
  require(mask.empty() || mask.size() == static_cast<std::size_t>(lq) * lk, "multi_head_attention",
          "mask size does not match scores");
  const int dh = d / n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs: n_heads blocks of lq x lk.
  auto probs = std::make_shared<Buffer>(static_cast<std::size_t>(n_heads) * lq * lk);
  Buffer out(static_cast<std::size_t>(lq) * d);
  auto y = MatMap(out.data(), lq, d);
  const auto qm = cmap(*q.node());
  const auto km = cmap(*k.node());
  const auto vm = cmap(*v.node());
  for (int h = 0; h < n_heads; ++h) {
    auto p = MatMap(probs->data() + static_cast<std::size_t>(h) * lq * lk, lq, lk);
    p.noalias() = qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose();
    p *= inv_scale;
    if (!mask.empty()) {
      for (int i = 0; i < lq; ++i) {
        for (int j = 0; j < lk; ++j) {
          if (mask[static_cast<std::size_t>(i) * lk + j]) p(i, j) = kAttentionMaskValue;
        }
      }
    }
    for (int i = 0; i < lq; ++i) {
      const double mx = p.row(i).maxCoeff();
      p.row(i) = (p.row(i).array() - mx).exp().matrix();
      p.row(i) /= p.row(i).sum();
    }
    y.middleCols(h * dh, dh).noalias() = p * vm.middleCols(h * dh, dh);
  }
  if (probs_out) probs_out->assign(probs->begin(), probs->end());
  Tensor r = make_op("multi_head_attention", {lq, d}, std::move(out), {&q, &k, &v});
  on_backward(r, [probs, n_heads, lq, lk, dh, inv_scale](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    const auto g = self_grad(self);
    const auto qm = cmap(pq);
    const auto km = cmap(pk);
    const auto vm = cmap(pv);
    RowMat dp(lq, lk);
    for (int h = 0; h < n_heads; ++h) {
      const auto p = ConstMatMap(probs->data() + static_cast<std::size_t>(h) * lq * lk, lq, lk);
      const auto gh = g.middleCols(h * dh, dh);
      if (pv.requires_grad) gmap(pv).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
      if (!pq.requires_grad && !pk.requires_grad) continue;
      dp.noalias() = gh * vm.middleCols(h * dh, dh).transpose();
      for (int i = 0; i < lq; ++i) {
        const double dot = dp.row(i).dot(p.row(i));
        dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot) * inv_scale).matrix();
      }
      if (pq.requires_grad) gmap(pq).middleCols(h * dh, dh).noalias() += dp * km.middleCols(h * dh, dh);
      if (pk.requires_grad) gmap(pk).middleCols(h * dh, dh).noalias() += dp.transpose() * qm.middleCols(h * dh, dh);
    }
  });
  return r;
}

Tensor log_softmax(const Tensor& a) {
  const int n = a.rows(), d = a.cols();
  const auto& av = *a.node()->value;
  Buffer out(av.size());
  for (int i = 0; i < n; ++i) {
    const double* row = av.data() + static_cast<std::size_t>(i) * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (int c = 0; c < d; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (int c = 0; c < d; ++c) out[static_cast<std::size_t>(i) * d + c] = row[c] - lse;
  }
  Tensor r = make_op("log_softmax", a.shape(), std::move(out), {&a});
  on_backward(r, [n, d](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    const auto& y = *self.value;
    for (int i = 0; i < n; ++i) {
      double total = 0.0;
      for (int c = 0; c < d; ++c) total += self.grad[static_cast<std::size_t>(i) * d + c];
      for (int c = 0; c < d; ++c) {
        const std::size_t k = static_cast<std::size_t>(i) * d + c;
        g[k] += self.grad[k] - std::exp(y[k]) * total;
      }
    }
  });
  return r;
}

Tensor sum(const Tensor& a, int axis) {
  require(axis == -1 || axis == 0 || axis == 1, "sum", "axis out of range");
  const int n = a.rows(), d = a.cols();
  const auto m = cmap(*a.node());
  Shape shape;
  Buffer out;
  if (axis == -1) {
    shape = {};
    out = {m.sum()};
  } else if (axis == 0) {
    shape = {1, d};
    out.resize(d);
    MatMap(out.data(), 1, d) = m.colwise().sum();
  } else {
    shape = {n, 1};
    out.resize(n);
    MatMap(out.data(), n, 1) = m.rowwise().sum();
  }
  Tensor r = make_op("sum", std::move(shape), std::move(out), {&a});
  on_backward(r, [axis, d](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t k = 0; k < g.size(); ++k) {
      const std::size_t src = axis == -1 ? 0 : axis == 0 ? k % d : k / d;
      g[k] += self.grad[src];
    }
  });
  return r;
}

Tensor mean(const Tensor& a, int axis) {
  require(axis == -1 || axis == 0 || axis == 1, "mean", "axis out of range");
  const double count = axis == -1 ? static_cast<double>(a.size()) : axis == 0 ? a.rows() : a.cols();
  require(count > 0, "mean", "empty tensor");
  return scale(sum(a, axis), 1.0 / count);
}

Tensor masked_fill(const Tensor& a, std::span<const std::uint8_t> mask, double value) {
  require(mask.size() == a.size(), "masked_fill", "mask size differs from tensor size");
  Buffer out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (mask[i]) out[i] = value;
  }
  Tensor r = make_op("masked_fill", a.shape(), std::move(out), {&a});
  on_backward(r, [m = std::vector<std::uint8_t>(mask.begin(), mask.end())](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!m[i]) g[i] += self.grad[i];
    }
  });
  return r;
}

Tensor pick(const Tensor& a, std::span<const int> index) {
  const int n = a.rows(), d = a.cols();
  require(static_cast<int>(index.size()) == n, "pick", "one index per row required");
  Buffer out(n);
  const auto& av = *a.node()->value;
  for (int i = 0; i < n; ++i) {
    require(index[i] >= 0 && index[i] < d, "pick", "index out of range");
    out[i] = av[static_cast<std::size_t>(i) * d + index[i]];
  }
  Tensor r = make_op("pick", {n, 1}, std::move(out), {&a});
  on_backward(r, [idx = std::vector<int>(index.begin(), index.end()), d](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * d + idx[i]] += self.grad[i];
  });
  return r;
}

// ---- optimisation ----------------------------------------------------------

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("adam_step: optimiser state does not match parameter list");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.m[i].size() != p.size()) throw Error("adam_step: parameter shape changed");
    if (!p.has_grad()) continue;
    auto values = p.mutable_values();
    const auto grad = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      values[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace aped::ag
