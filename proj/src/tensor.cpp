#include "vde/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace vde {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

/// Builds an op result; the backward closure is kept only when some input
/// needs a gradient and recording is enabled.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
                   std::function<void(const Node&)> backward) {
  auto node = make_leaf(std::move(shape), std::move(values), false);
  if (g_grad_enabled) {
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p && p->requires_grad; });
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

bool wants_grad(const NodePtr& n) { return n && n->requires_grad; }

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void require_scalar(const Tensor& t, const char* op) {
  require_defined(t, op);
  if (t.numel() != 1) {
    throw ShapeError(std::string(op) + ": expected one element, got " +
                     shape_to_string(t.shape()));
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& x, F forward, D derivative) {
  const auto& in = x.node();
  std::vector<double> out(in->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in->value[i]);
  return make_result(in->shape, std::move(out), {in}, [in, derivative](const Node& self) {
    auto& g = in->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * derivative(in->value[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward: root must hold one element");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order without recursion depth
  // limits on long graphs.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(node_->shape, node_->value, node_->requires_grad));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto &na = a.node(), &nb = b.node();
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] + nb->value[i];
  return make_result(na->shape, std::move(out), {na, nb}, [na, nb](const Node& self) {
    for (const auto& p : {na, nb}) {
      if (!wants_grad(p)) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto &na = a.node(), &nb = b.node();
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] - nb->value[i];
  return make_result(na->shape, std::move(out), {na, nb}, [na, nb](const Node& self) {
    if (wants_grad(na)) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(nb)) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto &na = a.node(), &nb = b.node();
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na->value[i] * nb->value[i];
  return make_result(na->shape, std::move(out), {na, nb}, [na, nb](const Node& self) {
    if (wants_grad(na)) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
    }
    if (wants_grad(nb)) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
    }
  });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  require_defined(x, "affine");
  return unary(
      x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  require_defined(x, "scale_by");
  require_scalar(s, "scale_by");
  const auto &nx = x.node(), &ns = s.node();
  const double k = ns->value[0];
  std::vector<double> out(nx->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * nx->value[i];
  return make_result(nx->shape, std::move(out), {nx, ns}, [nx, ns](const Node& self) {
    if (wants_grad(nx)) {
      auto& g = nx->ensure_grad();
      const double k = ns->value[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * k;
    }
    if (wants_grad(ns)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * nx->value[i];
      ns->ensure_grad()[0] += acc;
    }
  });
}

Tensor lerp(const Tensor& a, const Tensor& b, const Tensor& coef) {
  require_same_shape(a, b, "lerp");
  require_scalar(coef, "lerp");
  const auto &na = a.node(), &nb = b.node(), &nc = coef.node();
  const double c = nc->value[0];
  std::vector<double> out(na->value.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = c * na->value[i] + (1.0 - c) * nb->value[i];
  }
  return make_result(na->shape, std::move(out), {na, nb, nc}, [na, nb, nc](const Node& self) {
    const double c = nc->value[0];
    if (wants_grad(na)) {
      auto& g = na->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    }
    if (wants_grad(nb)) {
      auto& g = nb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += (1.0 - c) * self.grad[i];
    }
    if (wants_grad(nc)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        acc += self.grad[i] * (na->value[i] - nb->value[i]);
      }
      nc->ensure_grad()[0] += acc;
    }
  });
}

Tensor square(const Tensor& x) {
  require_defined(x, "square");
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  require_defined(x, "log");
  for (double v : x.values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt_clamped(const Tensor& x) {
  require_defined(x, "sqrt_clamped");
  return unary(
      x, [](double v) { return v > 0.0 ? std::sqrt(v) : 0.0; },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  require_defined(x, "clamp");
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [=](double v, double) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

// ---- reductions ------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto& nx = x.node();
  double acc = 0.0;
  for (double v : nx->value) acc += v;
  return make_result({1}, {acc}, {nx}, [nx](const Node& self) {
    auto& g = nx->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  return affine(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// ---- linear algebra ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                     " x " + shape_to_string(b.shape()));
  }
  const auto &na = a.node(), &nb = b.node();
  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      ConstMapMat(na->value.data(), m, k) * ConstMapMat(nb->value.data(), k, n);
  return make_result({m, n}, std::move(out), {na, nb}, [na, nb, m, k, n](const Node& self) {
    ConstMapMat g(self.grad.data(), m, n);
    if (wants_grad(na)) {
      MapMat(na->ensure_grad().data(), m, k).noalias() +=
          g * ConstMapMat(nb->value.data(), k, n).transpose();
    }
    if (wants_grad(nb)) {
      MapMat(nb->ensure_grad().data(), k, n).noalias() +=
          ConstMapMat(na->value.data(), m, k).transpose() * g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " for " +
                     std::to_string(out_dim) + " outputs");
  }
  const auto &nx = x.node(), &nw = weight.node();
  const NodePtr nb = bias.defined() ? bias.node() : nullptr;
  std::vector<double> out(rows * out_dim);
  MapMat y(out.data(), rows, out_dim);
  y.noalias() = ConstMapMat(nx->value.data(), rows, in) *
                ConstMapMat(nw->value.data(), out_dim, in).transpose();
  if (nb) {
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(nb->value.data(), out_dim);
  }
  return make_result(
      {rows, out_dim}, std::move(out), {nx, nw, nb}, [nx, nw, nb, rows, in, out_dim](const Node& self) {
        ConstMapMat g(self.grad.data(), rows, out_dim);
        if (wants_grad(nx)) {
          MapMat(nx->ensure_grad().data(), rows, in).noalias() +=
              g * ConstMapMat(nw->value.data(), out_dim, in);
        }
        if (wants_grad(nw)) {
          MapMat(nw->ensure_grad().data(), out_dim, in).noalias() +=
              g.transpose() * ConstMapMat(nx->value.data(), rows, in);
        }
        if (wants_grad(nb)) {
          Eigen::Map<Eigen::RowVectorXd>(nb->ensure_grad().data(), out_dim) += g.colwise().sum();
        }
      });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> index(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < r; ++j) index[i * r + j] = j * c + i;
  }
  return gather(x, std::move(index), {c, r});
}

// ---- normalization -------------------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  const auto& nx = x.node();
  const std::size_t n = nx->shape.back();
  const std::size_t rows = nx->value.size() / n;
  std::vector<double> out(nx->value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = nx->value.data() + r * n;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(in[j])) throw NumericError("softmax_rows: NaN input");
      mx = std::max(mx, in[j]);
    }
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: row without finite entries");
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += (o[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  return make_result(nx->shape, std::move(out), {nx}, [nx, n, rows](const Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* dy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t c = x.shape().back();
  if (gain.numel() != c || bias.numel() != c) {
    throw ShapeError("layer_norm: channel count " + std::to_string(c) + " vs gain " +
                     shape_to_string(gain.shape()) + ", bias " + shape_to_string(bias.shape()));
  }
  if (!(eps > 0.0)) throw NumericError("layer_norm: eps must be positive");
  const auto &nx = x.node(), &ng = gain.node(), &nb = bias.node();
  const std::size_t rows = nx->value.size() / c;
  auto normed = std::make_shared<std::vector<double>>(nx->value.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(nx->value.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = nx->value.data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += in[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (in[j] - mu) * is;
      (*normed)[r * c + j] = h;
      out[r * c + j] = h * ng->value[j] + nb->value[j];
    }
  }
  return make_result(
      nx->shape, std::move(out), {nx, ng, nb}, [nx, ng, nb, normed, inv_std, c, rows](const Node& self) {
        const double inv_c = 1.0 / static_cast<double>(c);
        std::vector<double> dh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * c;
          const double* h = normed->data() + r * c;
          if (wants_grad(ng)) {
            auto& gg = ng->ensure_grad();
            for (std::size_t j = 0; j < c; ++j) gg[j] += dy[j] * h[j];
          }
          if (wants_grad(nb)) {
            auto& gb = nb->ensure_grad();
            for (std::size_t j = 0; j < c; ++j) gb[j] += dy[j];
          }
          if (wants_grad(nx)) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              dh[j] = dy[j] * ng->value[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * h[j];
            }
            mean_dh *= inv_c;
            mean_dh_h *= inv_c;
            auto& gx = nx->ensure_grad();
            const double is = (*inv_std)[r];
            for (std::size_t j = 0; j < c; ++j) {
              gx[r * c + j] += is * (dh[j] - mean_dh - h[j] * mean_dh_h);
            }
          }
        }
      });
}

// ---- layout ----------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  const auto& nx = x.node();
  return make_result(std::move(shape), nx->value, {nx}, [nx](const Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather(const Tensor& x, std::vector<std::size_t> index, Shape out_shape) {
  require_defined(x, "gather");
  if (shape_numel(out_shape) != index.size()) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for output " +
                     shape_to_string(out_shape));
  }
  const auto& nx = x.node();
  const std::size_t n = nx->value.size();
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::size_t s = index[i];
    if (s == kZeroIndex) {
      out[i] = 0.0;
    } else if (s < n) {
      out[i] = nx->value[s];
    } else {
      throw ShapeError("gather: index " + std::to_string(s) + " out of range " + std::to_string(n));
    }
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return make_result(std::move(out_shape), std::move(out), {nx}, [nx, idx](const Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      const std::size_t s = (*idx)[i];
      if (s != kZeroIndex) g[s] += self.grad[i];
    }
  });
}

Tensor index_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  require_rank(x, 2, "index_rows");
  const std::size_t c = x.dim(1);
  std::vector<std::size_t> index(rows.size() * c);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      index[r * c + j] = rows[r] == kZeroIndex ? kZeroIndex : rows[r] * c + j;
    }
  }
  return gather(x, std::move(index), {rows.size(), c});
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape shape = parts.front().shape();
  std::size_t lead = 0;
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    require_defined(p, "concat0");
    if (p.rank() != shape.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw ShapeError("concat0: incompatible " + shape_to_string(p.shape()) + " and " +
                       shape_to_string(shape));
    }
    lead += p.dim(0);
    nodes.push_back(p.node());
  }
  shape[0] = lead;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  for (const auto& n : nodes) out.insert(out.end(), n->value.begin(), n->value.end());
  return make_result(std::move(shape), std::move(out), nodes, [nodes](const Node& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      if (wants_grad(n)) {
        auto& g = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += n->value.size();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_to_string(p.shape()));
    }
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(rows * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(nodes[k]->value.data() + r * widths[k], widths[k], out.data() + r * total + col);
    }
    col += widths[k];
  }
  return make_result({rows, total}, std::move(out), nodes, [nodes, widths, rows, total](const Node& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (wants_grad(nodes[k])) {
        auto& g = nodes[k]->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            g[r * widths[k] + j] += self.grad[r * total + col + j];
          }
        }
      }
      col += widths[k];
    }
  });
}

Tensor to_tokens(const Tensor& chw) {
  require_rank(chw, 3, "to_tokens");
  const std::size_t c = chw.dim(0), hw = chw.dim(1) * chw.dim(2);
  std::vector<std::size_t> index(c * hw);
  for (std::size_t t = 0; t < hw; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) index[t * c + ch] = ch * hw + t;
  }
  return gather(chw, std::move(index), {hw, c});
}

Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
  require_rank(tokens, 2, "from_tokens");
  const std::size_t hw = height * width, c = tokens.dim(1);
  if (tokens.dim(0) != hw) {
    throw ShapeError("from_tokens: " + shape_to_string(tokens.shape()) + " is not " +
                     std::to_string(height) + "x" + std::to_string(width) + " tokens");
  }
  std::vector<std::size_t> index(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t t = 0; t < hw; ++t) index[ch * hw + t] = t * c + ch;
  }
  return gather(tokens, std::move(index), {c, height, width});
}

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  require_rank(x, 3, "pixel_shuffle");
  if (r == 0 || x.dim(0) % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(x.dim(0)) +
                     " channels not divisible by r^2 = " + std::to_string(r * r));
  }
  const std::size_t c = x.dim(0) / (r * r), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * r, ow = w * r;
  std::vector<std::size_t> index(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t src_c = ch * r * r + (oy % r) * r + (ox % r);
        index[(ch * oh + oy) * ow + ox] = (src_c * h + oy / r) * w + ox / r;
      }
    }
  }
  return gather(x, std::move(index), {c, oh, ow});
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  require_rank(x, 3, "pixel_unshuffle");
  if (r == 0 || x.dim(1) % r != 0 || x.dim(2) % r != 0) {
    throw ShapeError("pixel_unshuffle: extents of " + shape_to_string(x.shape()) +
                     " not divisible by " + std::to_string(r));
  }
  const std::size_t c = x.dim(0), h = x.dim(1) / r, w = x.dim(2) / r;
  const std::size_t ih = x.dim(1), iw = x.dim(2);
  std::vector<std::size_t> index(c * r * r * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < r; ++j) {
        const std::size_t oc = ch * r * r + i * r + j;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t xx = 0; xx < w; ++xx) {
            index[(oc * h + y) * w + xx] = (ch * ih + y * r + i) * iw + xx * r + j;
          }
        }
      }
    }
  }
  return gather(x, std::move(index), {c * r * r, h, w});
}

namespace {

struct Interp {
  std::size_t lo, hi;
  double t;
};

std::vector<Interp> align_corners_axis(std::size_t in, std::size_t out) {
  std::vector<Interp> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src =
        (out == 1 || in == 1) ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) /
                                          static_cast<double>(out - 1);
    auto lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_resize");
  if (out_h == 0 || out_w == 0) {
    throw ShapeError("bilinear_resize: zero target size " + std::to_string(out_h) + "x" +
                     std::to_string(out_w));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0) throw ShapeError("bilinear_resize: empty source");
  auto ty = std::make_shared<std::vector<Interp>>(align_corners_axis(h, out_h));
  auto tx = std::make_shared<std::vector<Interp>>(align_corners_axis(w, out_w));
  const auto& nx = x.node();
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = nx->value.data() + ch * h * w;
    double* dst = out.data() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = (*ty)[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = (*tx)[ox];
        const double top = src[a.lo * w + b.lo] * (1.0 - b.t) + src[a.lo * w + b.hi] * b.t;
        const double bot = src[a.hi * w + b.lo] * (1.0 - b.t) + src[a.hi * w + b.hi] * b.t;
        dst[oy * out_w + ox] = top * (1.0 - a.t) + bot * a.t;
      }
    }
  }
  return make_result({c, out_h, out_w}, std::move(out), {nx},
                     [nx, ty, tx, c, h, w, out_h, out_w](const Node& self) {
                       auto& g = nx->ensure_grad();
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         double* gs = g.data() + ch * h * w;
                         const double* gd = self.grad.data() + ch * out_h * out_w;
                         for (std::size_t oy = 0; oy < out_h; ++oy) {
                           const auto& a = (*ty)[oy];
                           for (std::size_t ox = 0; ox < out_w; ++ox) {
                             const auto& b = (*tx)[ox];
                             const double d = gd[oy * out_w + ox];
                             gs[a.lo * w + b.lo] += d * (1.0 - a.t) * (1.0 - b.t);
                             gs[a.lo * w + b.hi] += d * (1.0 - a.t) * b.t;
                             gs[a.hi * w + b.lo] += d * a.t * (1.0 - b.t);
                             gs[a.hi * w + b.hi] += d * a.t * b.t;
                           }
                         }
                       }
                     });
}

Tensor adaptive_avg_pool(const Tensor& x, std::size_t bins) {
  require_rank(x, 3, "adaptive_avg_pool");
  if (bins == 0) throw ShapeError("adaptive_avg_pool: zero bins");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto span_of = [bins](std::size_t i, std::size_t extent) {
    const std::size_t lo = i * extent / bins;
    const std::size_t hi = ((i + 1) * extent + bins - 1) / bins;
    return std::pair{lo, hi};
  };
  const auto& nx = x.node();
  std::vector<double> out(c * bins * bins);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t by = 0; by < bins; ++by) {
      const auto [y0, y1] = span_of(by, h);
      for (std::size_t bx = 0; bx < bins; ++bx) {
        const auto [x0, x1] = span_of(bx, w);
        double acc = 0.0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t xx = x0; xx < x1; ++xx) acc += nx->value[(ch * h + y) * w + xx];
        }
        out[(ch * bins + by) * bins + bx] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return make_result({c, bins, bins}, std::move(out), {nx}, [nx, c, h, w, bins, span_of](const Node& self) {
    auto& g = nx->ensure_grad();
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t by = 0; by < bins; ++by) {
        const auto [y0, y1] = span_of(by, h);
        for (std::size_t bx = 0; bx < bins; ++bx) {
          const auto [x0, x1] = span_of(bx, w);
          const double d = self.grad[(ch * bins + by) * bins + bx] /
                           static_cast<double>((y1 - y0) * (x1 - x0));
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t xx = x0; xx < x1; ++xx) g[(ch * h + y) * w + xx] += d;
          }
        }
      }
    }
  });
}

// ---- windowed attention ----------------------------------------------------------

Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Tensor& bias_table, const AttentionLayout& layout) {
  require_rank(q, 2, "window_attention");
  require_rank(k, 2, "window_attention");
  require_rank(v, 2, "window_attention");
  const std::size_t nw = layout.windows, n = layout.tokens, heads = layout.heads;
  const std::size_t rows = nw * n;
  if (q.dim(0) != rows || k.dim(0) != rows || v.dim(0) != rows) {
    throw ShapeError("window_attention: expected " + std::to_string(rows) + " rows, got q " +
                     shape_to_string(q.shape()) + ", k " + shape_to_string(k.shape()) + ", v " +
                     shape_to_string(v.shape()));
  }
  const std::size_t p = q.dim(1), pv = v.dim(1);
  if (k.dim(1) != p || heads == 0 || p % heads != 0 || pv % heads != 0) {
    throw ShapeError("window_attention: widths q " + std::to_string(p) + ", k " +
                     std::to_string(k.dim(1)) + ", v " + std::to_string(pv) + " with " +
                     std::to_string(heads) + " heads");
  }
  const bool has_bias = bias_table.defined();
  if (has_bias && (layout.bias_index.size() != n * n || bias_table.rank() != 2 ||
                   bias_table.dim(1) != heads)) {
    throw ShapeError("window_attention: bias table " + shape_to_string(bias_table.shape()) +
                     " does not match layout");
  }
  if (!layout.mask.empty() && layout.mask.size() != nw * n * n) {
    throw ShapeError("window_attention: mask size mismatch");
  }
  const std::size_t ph = p / heads, pvh = pv / heads;

  const auto &nq = q.node(), &nk = k.node(), &nv = v.node();
  const NodePtr nb = has_bias ? bias_table.node() : nullptr;
  auto attn = std::make_shared<std::vector<double>>(nw * heads * n * n);
  auto lay = std::make_shared<AttentionLayout>(layout);
  std::vector<double> out(rows * pv);

  RowMat scores(n, n);
  for (std::size_t w = 0; w < nw; ++w) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap qh(nq->value.data() + w * n * p + h * ph, n, ph, Eigen::OuterStride<>(p));
      ConstStridedMap kh(nk->value.data() + w * n * p + h * ph, n, ph, Eigen::OuterStride<>(p));
      ConstStridedMap vh(nv->value.data() + w * n * pv + h * pvh, n, pvh, Eigen::OuterStride<>(pv));
      scores.noalias() = layout.scale * (qh * kh.transpose());
      MapMat a(attn->data() + (w * heads + h) * n * n, n, n);
      for (std::size_t i = 0; i < n; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          double s = scores(i, j);
          if (has_bias) s += nb->value[layout.bias_index[i * n + j] * heads + h];
          if (!layout.mask.empty()) s += layout.mask[(w * n + i) * n + j];
          if (std::isnan(s)) throw NumericError("window_attention: NaN score");
          scores(i, j) = s;
          mx = std::max(mx, s);
        }
        if (!std::isfinite(mx)) throw NumericError("window_attention: fully masked row");
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) total += (a(i, j) = std::exp(scores(i, j) - mx));
        for (std::size_t j = 0; j < n; ++j) a(i, j) /= total;
      }
      StridedMap oh(out.data() + w * n * pv + h * pvh, n, pvh, Eigen::OuterStride<>(pv));
      oh.noalias() = a * vh;
    }
  }

  return make_result(
      {rows, pv}, std::move(out), {nq, nk, nv, nb},
      [nq, nk, nv, nb, attn, lay, nw, n, heads, p, pv, ph, pvh](const Node& self) {
        const bool gq = wants_grad(nq), gk = wants_grad(nk), gv = wants_grad(nv);
        const bool gb = wants_grad(nb);
        if (gq) nq->ensure_grad();
        if (gk) nk->ensure_grad();
        if (gv) nv->ensure_grad();
        if (gb) nb->ensure_grad();
        RowMat da(n, n);
        for (std::size_t w = 0; w < nw; ++w) {
          for (std::size_t h = 0; h < heads; ++h) {
            ConstMapMat a(attn->data() + (w * heads + h) * n * n, n, n);
            ConstStridedMap dout(self.grad.data() + w * n * pv + h * pvh, n, pvh,
                                 Eigen::OuterStride<>(pv));
            ConstStridedMap vh(nv->value.data() + w * n * pv + h * pvh, n, pvh,
                               Eigen::OuterStride<>(pv));
            if (gv) {
              StridedMap dv(nv->grad.data() + w * n * pv + h * pvh, n, pvh, Eigen::OuterStride<>(pv));
              dv.noalias() += a.transpose() * dout;
            }
            da.noalias() = dout * vh.transpose();
            // softmax backward in place: dS = A o (dA - rowsum(dA o A))
            for (std::size_t i = 0; i < n; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j < n; ++j) dot += da(i, j) * a(i, j);
              for (std::size_t j = 0; j < n; ++j) da(i, j) = a(i, j) * (da(i, j) - dot);
            }
            if (gb) {
              for (std::size_t i = 0; i < n * n; ++i) {
                nb->grad[lay->bias_index[i] * heads + h] += da.data()[i];
              }
            }
            if (gq) {
              ConstStridedMap kh(nk->value.data() + w * n * p + h * ph, n, ph, Eigen::OuterStride<>(p));
              StridedMap dq(nq->grad.data() + w * n * p + h * ph, n, ph, Eigen::OuterStride<>(p));
              dq.noalias() += lay->scale * (da * kh);
            }
            if (gk) {
              ConstStridedMap qh(nq->value.data() + w * n * p + h * ph, n, ph, Eigen::OuterStride<>(p));
              StridedMap dk(nk->grad.data() + w * n * p + h * ph, n, ph, Eigen::OuterStride<>(p));
              dk.noalias() += lay->scale * (da.transpose() * qh);
            }
          }
        }
      });
}

}  // namespace vde
