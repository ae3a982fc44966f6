#include "zhoi/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "zhoi/dual.hpp"
#include "zhoi/geometry.hpp"
#include "zhoi/kernels.hpp"

namespace zhoi::ag {
namespace {

thread_local bool t_grad_enabled = true;

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_same(const Var& a, const Var& b, const char* op) {
  require(a.value().same_shape(b.value()), op,
          "shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
}

bool any_requires(std::initializer_list<const Var*> vars) {
  for (const Var* v : vars)
    if (v->requires_grad()) return true;
  return false;
}

/// Wraps a computed value into a node, wiring the backward closure only when
/// gradients are recorded and some parent needs them.
Var make(Matrix value, std::initializer_list<const Var*> parents,
         std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (t_grad_enabled && any_requires(parents)) {
    node->requires_grad = true;
    for (const Var* p : parents) node->parents.push_back(p->ptr());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void add_into(Matrix& dst, const Matrix& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }
double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}
double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double Var::item() const {
  if (node_->value.size() != 1) throw std::logic_error("item() on non-scalar " + shape_str(value()));
  return node_->value[0];
}

Var constant(Matrix m) {
  auto node = std::make_shared<Node>();
  node->value = std::move(m);
  return Var(std::move(node));
}

Var leaf(Matrix m, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(m);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

bool grad_enabled() noexcept { return t_grad_enabled; }
NoGradGuard::NoGradGuard() noexcept : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Var& root) {
  if (root.value().size() != 1) throw std::logic_error("backward: root must be 1x1");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_ref()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul", shape_str(a.value()) + " * " + shape_str(b.value()));
  Matrix out(m, n);
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  kernels::FlopCounter::add(2 * m * k * n);
  return make(std::move(out), {&a, &b}, [a, b, m, k, n](Node& self) {
    if (a.requires_grad())
      kernels::gemm_nt(self.grad.data(), b.value().data(), a.node()->grad_ref().data(), m, n, k,
                       true);
    if (b.requires_grad())
      kernels::gemm_tn(a.value().data(), self.grad.data(), b.node()->grad_ref().data(), k, m, n,
                       true);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  require(b.cols() == k, "matmul_nt", shape_str(a.value()) + " * T" + shape_str(b.value()));
  Matrix out(m, n);
  kernels::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  kernels::FlopCounter::add(2 * m * k * n);
  return make(std::move(out), {&a, &b}, [a, b, m, k, n](Node& self) {
    if (a.requires_grad())
      kernels::gemm_nn(self.grad.data(), b.value().data(), a.node()->grad_ref().data(), m, n, k,
                       true);
    if (b.requires_grad())
      kernels::gemm_tn(self.grad.data(), a.value().data(), b.node()->grad_ref().data(), n, m, k,
                       true);
  });
}

Var transpose(const Var& a) {
  const auto r = a.rows(), c = a.cols();
  Matrix out(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a.value()(i, j);
  return make(std::move(out), {&a}, [a, r, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(j, i);
  });
}

// ---- elementwise ----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Matrix out = a.value();
  add_into(out, b.value());
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a, &b}, [a, b](Node& self) {
    if (a.requires_grad()) add_into(a.node()->grad_ref(), self.grad);
    if (b.requires_grad()) add_into(b.node()->grad_ref(), self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a, &b}, [a, b](Node& self) {
    if (a.requires_grad()) add_into(a.node()->grad_ref(), self.grad);
    if (b.requires_grad()) {
      Matrix& g = b.node()->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a, &b}, [a, b](Node& self) {
    if (a.requires_grad()) {
      Matrix& g = a.node()->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      Matrix& g = b.node()->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value()[i];
    }
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row",
          shape_str(a.value()) + " + " + shape_str(row.value()));
  Matrix out = a.value();
  const auto r = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += row.value()[j];
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a, &row}, [a, row, r, c](Node& self) {
    if (a.requires_grad()) add_into(a.node()->grad_ref(), self.grad);
    if (row.requires_grad()) {
      Matrix& g = row.node()->grad_ref();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j);
    }
  });
}

Var mul_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row",
          shape_str(a.value()) + " * " + shape_str(row.value()));
  Matrix out = a.value();
  const auto r = out.rows(), c = out.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) *= row.value()[j];
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a, &row}, [a, row, r, c](Node& self) {
    if (a.requires_grad()) {
      Matrix& g = a.node()->grad_ref();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(i, j) * row.value()[j];
    }
    if (row.requires_grad()) {
      Matrix& g = row.node()->grad_ref();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j) * a.value()(i, j);
    }
  });
}

Var scale(const Var& a, double s) {
  Matrix out = a.value();
  for (double& x : out.storage()) x *= s;
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a}, [a, s](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Matrix out = a.value();
  for (double& x : out.storage()) x += s;
  return make(std::move(out), {&a}, [a](Node& self) { add_into(a.node()->grad_ref(), self.grad); });
}

namespace {
template <class F, class G>
Var unary(const Var& a, F f, G df) {
  Matrix out = a.value();
  for (double& x : out.storage()) x = f(x);
  kernels::FlopCounter::add(out.size());
  return make(std::move(out), {&a}, [a, df](Node& self) {
    Matrix& g = a.node()->grad_ref();
    const Matrix& x = a.value();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}
}  // namespace

Var gelu(const Var& a) {
  return unary(a, gelu_value, [](double x, double) { return gelu_grad(x); });
}
Var sigmoid(const Var& a) {
  return unary(a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}
Var abs(const Var& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- reductions -----------------------------------------------------------

Var sum(const Var& a) {
  double s = 0;
  for (double x : a.value().storage()) s += x;
  return make(Matrix(1, 1, s), {&a}, [a](Node& self) {
    Matrix& g = a.node()->grad_ref();
    const double go = self.grad[0];
    for (double& x : g.storage()) x += go;
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(std::max<std::size_t>(a.value().size(), 1));
  return scale(sum(a), 1.0 / n);
}

Var mean_rows(const Var& a) {
  const auto r = a.rows(), c = a.cols();
  require(r > 0, "mean_rows", "empty input");
  Matrix out(1, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.value()(i, j);
  for (double& x : out.storage()) x /= static_cast<double>(r);
  return make(std::move(out), {&a}, [a, r, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad[j] * inv;
  });
}

// ---- shape ----------------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const auto c = parts[0].cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    require(p.cols() == c, "concat_rows", "column mismatch");
    r += p.rows();
  }
  Matrix out(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off * c);
    off += p.rows();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(out);
  bool needs = false;
  for (const Var& p : parts) needs = needs || p.requires_grad();
  if (t_grad_enabled && needs) {
    node->requires_grad = true;
    std::vector<Var> keep(parts.begin(), parts.end());
    for (const Var& p : parts) node->parents.push_back(p.ptr());
    node->backward = [keep, c](Node& self) {
      std::size_t offset = 0;
      for (const Var& p : keep) {
        if (p.requires_grad()) {
          Matrix& g = p.node()->grad_ref();
          const double* src = self.grad.data() + offset * c;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
        }
        offset += p.rows();
      }
    };
  }
  return Var(std::move(node));
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols", "row mismatch");
  const auto r = a.rows(), ca = a.cols(), cb = b.cols();
  Matrix out(r, ca + cb);
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(a.value().row(i).begin(), a.value().row(i).end(), out.data() + i * (ca + cb));
    std::copy(b.value().row(i).begin(), b.value().row(i).end(), out.data() + i * (ca + cb) + ca);
  }
  return make(std::move(out), {&a, &b}, [a, b, r, ca, cb](Node& self) {
    if (a.requires_grad()) {
      Matrix& g = a.node()->grad_ref();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < ca; ++j) g(i, j) += self.grad(i, j);
    }
    if (b.requires_grad()) {
      Matrix& g = b.node()->grad_ref();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cb; ++j) g(i, j) += self.grad(i, ca + j);
    }
  });
}

Var slice_rows(const Var& a, std::size_t start, std::size_t count) {
  require(start + count <= a.rows(), "slice_rows", "range out of bounds");
  const auto c = a.cols();
  Matrix out(count, c);
  std::copy(a.value().data() + start * c, a.value().data() + (start + count) * c, out.data());
  return make(std::move(out), {&a}, [a, start, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    double* dst = g.data() + start * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

Var slice_cols(const Var& a, std::size_t start, std::size_t count) {
  require(start + count <= a.cols(), "slice_cols", "range out of bounds");
  const auto r = a.rows();
  Matrix out(r, count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = a.value()(i, start + j);
  return make(std::move(out), {&a}, [a, start, r, count](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g(i, start + j) += self.grad(i, j);
  });
}

Var gather_rows(const Var& a, std::span<const std::size_t> rows) {
  const auto c = a.cols();
  Matrix out(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < a.rows(), "gather_rows", "index out of bounds");
    std::copy(a.value().data() + rows[i] * c, a.value().data() + (rows[i] + 1) * c,
              out.data() + i * c);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make(std::move(out), {&a}, [a, idx, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g(idx[i], j) += self.grad(i, j);
  });
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  require(rows * cols == a.value().size(), "reshape", "element count mismatch");
  Matrix out(rows, cols, a.value().storage());
  return make(std::move(out), {&a}, [a](Node& self) { add_into(a.node()->grad_ref(), self.grad); });
}

Var tile_rows(const Var& a, std::size_t times) {
  const auto r = a.rows(), c = a.cols();
  Matrix out(r * times, c);
  for (std::size_t t = 0; t < times; ++t)
    std::copy(a.value().data(), a.value().data() + r * c, out.data() + t * r * c);
  return make(std::move(out), {&a}, [a, r, c, times](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[t * r * c + i];
  });
}

Var repeat_rows(const Var& a, std::size_t times) {
  const auto r = a.rows(), c = a.cols();
  Matrix out(r * times, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < times; ++t)
      std::copy(a.value().data() + i * c, a.value().data() + (i + 1) * c,
                out.data() + (i * times + t) * c);
  return make(std::move(out), {&a}, [a, r, c, times](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad((i * times + t), j);
  });
}

Var row_sums(const Var& a) {
  const auto r = a.rows(), c = a.cols();
  Matrix out(r, 1);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a.value()(i, j);
  return make(std::move(out), {&a}, [a, r, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad[i];
  });
}

Var grouped_weighted_sum(const Var& weights, const Var& values) {
  const auto groups = weights.rows(), len = weights.cols(), d = values.cols();
  require(values.rows() == groups * len, "grouped_weighted_sum",
          shape_str(weights.value()) + " vs " + shape_str(values.value()));
  Matrix out(groups, d);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < len; ++i) {
      const double wv = weights.value()(g, i);
      for (std::size_t j = 0; j < d; ++j) out(g, j) += wv * values.value()(g * len + i, j);
    }
  kernels::FlopCounter::add(2 * groups * len * d);
  return make(std::move(out), {&weights, &values}, [weights, values, groups, len, d](Node& self) {
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < len; ++i) {
        double dw = 0;
        const double wv = weights.value()(g, i);
        for (std::size_t j = 0; j < d; ++j) {
          dw += self.grad(g, j) * values.value()(g * len + i, j);
          if (values.requires_grad()) values.node()->grad_ref()(g * len + i, j) += wv * self.grad(g, j);
        }
        if (weights.requires_grad()) weights.node()->grad_ref()(g, i) += dw;
      }
  });
}

// ---- normalization / attention -------------------------------------------

Var softmax_rows(const Var& a) {
  const auto r = a.rows(), c = a.cols();
  Matrix out = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    auto row = out.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0;
    for (double& x : row) s += (x = std::exp(x - mx));
    for (double& x : row) x /= s;
  }
  kernels::FlopCounter::add(3 * out.size());
  return make(std::move(out), {&a}, [a, r, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad(i, j) * self.value(i, j);
      for (std::size_t j = 0; j < c; ++j) g(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto r = x.rows(), c = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == c && beta.value().same_shape(gamma.value()),
          "layer_norm", "affine shape mismatch");
  Matrix xhat(r, c);
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += x.value()(i, j);
    mu /= static_cast<double>(c);
    double var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (x.value()(i, j) - mu) * (x.value()(i, j) - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (x.value()(i, j) - mu) * inv_std[i];
  }
  Matrix out(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
  kernels::FlopCounter::add(8 * out.size());
  return make(std::move(out), {&x, &gamma, &beta},
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
                if (gamma.requires_grad() || beta.requires_grad()) {
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                      if (gamma.requires_grad())
                        gamma.node()->grad_ref()[j] += self.grad(i, j) * xhat(i, j);
                      if (beta.requires_grad()) beta.node()->grad_ref()[j] += self.grad(i, j);
                    }
                }
                if (!x.requires_grad()) return;
                Matrix& g = x.node()->grad_ref();
                const double inv_c = 1.0 / static_cast<double>(c);
                for (std::size_t i = 0; i < r; ++i) {
                  double m1 = 0, m2 = 0;
                  for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = self.grad(i, j) * gamma.value()[j];
                    m1 += dxh;
                    m2 += dxh * xhat(i, j);
                  }
                  m1 *= inv_c;
                  m2 *= inv_c;
                  for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = self.grad(i, j) * gamma.value()[j];
                    g(i, j) += inv_std[i] * (dxh - m1 - xhat(i, j) * m2);
                  }
                }
              });
}

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Matrix* batch_mean, Matrix* batch_var) {
  const auto r = x.rows(), c = x.cols();
  require(r > 0, "batch_norm_train", "empty batch");
  require(gamma.rows() == 1 && gamma.cols() == c && beta.value().same_shape(gamma.value()),
          "batch_norm_train", "affine shape mismatch");
  std::vector<double> mu(c, 0.0), var(c, 0.0), inv_std(c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) mu[j] += x.value()(i, j);
  for (double& m : mu) m /= static_cast<double>(r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.value()(i, j) - mu[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < c; ++j) {
    var[j] /= static_cast<double>(r);
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  if (batch_mean) *batch_mean = Matrix(1, c, mu);
  if (batch_var) *batch_var = Matrix(1, c, var);
  Matrix xhat(r, c), out(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (x.value()(i, j) - mu[j]) * inv_std[j];
      out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
    }
  kernels::FlopCounter::add(8 * out.size());
  return make(std::move(out), {&x, &gamma, &beta},
              [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](Node& self) {
                std::vector<double> m1(c, 0.0), m2(c, 0.0);
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < c; ++j) {
                    if (gamma.requires_grad())
                      gamma.node()->grad_ref()[j] += self.grad(i, j) * xhat(i, j);
                    if (beta.requires_grad()) beta.node()->grad_ref()[j] += self.grad(i, j);
                    const double dxh = self.grad(i, j) * gamma.value()[j];
                    m1[j] += dxh;
                    m2[j] += dxh * xhat(i, j);
                  }
                if (!x.requires_grad()) return;
                Matrix& g = x.node()->grad_ref();
                const double inv_r = 1.0 / static_cast<double>(r);
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < c; ++j) {
                    const double dxh = self.grad(i, j) * gamma.value()[j];
                    g(i, j) += inv_std[j] * (dxh - m1[j] * inv_r - xhat(i, j) * m2[j] * inv_r);
                  }
              });
}

Var normalize_rows(const Var& a) {
  const auto r = a.rows(), c = a.cols();
  Matrix out = a.value();
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < c; ++j) s += out(i, j) * out(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] < 1e-12) {
      for (std::size_t j = 0; j < c; ++j) out(i, j) = 0.0;
    } else {
      for (std::size_t j = 0; j < c; ++j) out(i, j) /= norms[i];
    }
  }
  kernels::FlopCounter::add(3 * out.size());
  return make(std::move(out), {&a}, [a, norms = std::move(norms), r, c](Node& self) {
    Matrix& g = a.node()->grad_ref();
    for (std::size_t i = 0; i < r; ++i) {
      if (norms[i] < 1e-12) continue;
      double dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad(i, j) * self.value(i, j);
      for (std::size_t j = 0; j < c; ++j)
        g(i, j) += (self.grad(i, j) - self.value(i, j) * dot) / norms[i];
    }
  });
}

Var depthwise_conv3x3(const Var& x, const Var& weight, std::size_t h, std::size_t w,
                      std::size_t batch) {
  const auto c = x.cols();
  const auto per = h * w;
  require(x.rows() == per * batch, "depthwise_conv3x3", "token count != batch*h*w");
  require(weight.rows() == 9 && weight.cols() == c, "depthwise_conv3x3",
          "weight must be 9 x channels, got " + shape_str(weight.value()));
  Matrix out(per * batch, c);
  for (std::size_t b = 0; b < batch; ++b)
    kernels::depthwise3x3(x.value().data() + b * per * c, weight.value().data(),
                          out.data() + b * per * c, h, w, c);
  kernels::FlopCounter::add(18 * out.size());
  return make(std::move(out), {&x, &weight}, [x, weight, h, w, c, per, batch](Node& self) {
    double* dx = x.requires_grad() ? x.node()->grad_ref().data() : nullptr;
    double* dw = weight.requires_grad() ? weight.node()->grad_ref().data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b)
      kernels::depthwise3x3_backward(x.value().data() + b * per * c, weight.value().data(),
                                     self.grad.data() + b * per * c, dx ? dx + b * per * c : nullptr,
                                     dw, h, w, c);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, std::size_t groups,
              Matrix* head_mean_probs) {
  const auto d = q.cols();
  require(groups > 0 && q.rows() % groups == 0 && k.rows() % groups == 0, "attention",
          "rows not divisible by groups");
  const auto lq = q.rows() / groups, lk = k.rows() / groups;
  require(k.cols() == d && v.cols() == d && v.rows() == k.rows(), "attention",
          "q " + shape_str(q.value()) + " k " + shape_str(k.value()) + " v " + shape_str(v.value()));
  require(heads > 0 && d % heads == 0, "attention", "dim not divisible by heads");
  const auto dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  // Copies one (group, head) block into contiguous storage.
  auto block = [](const Matrix& m, std::size_t r0, std::size_t rows, std::size_t c0,
                  std::size_t width) {
    Matrix s(rows, width);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < width; ++j) s(i, j) = m(r0 + i, c0 + j);
    return s;
  };

  std::vector<Matrix> probs(groups * heads);
  Matrix out(q.rows(), d);
  if (head_mean_probs) *head_mean_probs = Matrix(q.rows(), lk);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix qh = block(q.value(), g * lq, lq, h * dh, dh);
      const Matrix kh = block(k.value(), g * lk, lk, h * dh, dh);
      const Matrix vh = block(v.value(), g * lk, lk, h * dh, dh);
      Matrix& p = probs[g * heads + h];
      p = Matrix(lq, lk);
      kernels::gemm_nt(qh.data(), kh.data(), p.data(), lq, dh, lk, false);
      for (std::size_t i = 0; i < lq; ++i) {
        auto row = p.row(i);
        double mx = -INFINITY;
        for (double& x : row) mx = std::max(mx, x *= sc);
        double s = 0;
        for (double& x : row) s += (x = std::exp(x - mx));
        for (double& x : row) x /= s;
      }
      Matrix oh(lq, dh);
      kernels::gemm_nn(p.data(), vh.data(), oh.data(), lq, lk, dh, false);
      for (std::size_t i = 0; i < lq; ++i)
        for (std::size_t j = 0; j < dh; ++j) out(g * lq + i, h * dh + j) = oh(i, j);
      if (head_mean_probs) {
        for (std::size_t i = 0; i < lq; ++i)
          for (std::size_t j = 0; j < lk; ++j)
            (*head_mean_probs)(g * lq + i, j) += p(i, j) / static_cast<double>(heads);
      }
    }
  }
  kernels::FlopCounter::add(groups * (4 * lq * lk * d + 3 * lq * lk * heads));

  return make(std::move(out), {&q, &k, &v},
              [q, k, v, probs = std::move(probs), heads, groups, dh, sc, lq, lk, block](Node& self) {
                for (std::size_t g = 0; g < groups; ++g) {
                  for (std::size_t h = 0; h < heads; ++h) {
                    const Matrix& p = probs[g * heads + h];
                    const Matrix go = block(self.grad, g * lq, lq, h * dh, dh);
                    if (v.requires_grad()) {
                      Matrix dv(lk, dh);
                      kernels::gemm_tn(p.data(), go.data(), dv.data(), lk, lq, dh, false);
                      Matrix& gv = v.node()->grad_ref();
                      for (std::size_t i = 0; i < lk; ++i)
                        for (std::size_t j = 0; j < dh; ++j) gv(g * lk + i, h * dh + j) += dv(i, j);
                    }
                    if (!q.requires_grad() && !k.requires_grad()) continue;
                    const Matrix vh = block(v.value(), g * lk, lk, h * dh, dh);
                    Matrix dp(lq, lk);
                    kernels::gemm_nt(go.data(), vh.data(), dp.data(), lq, dh, lk, false);
                    for (std::size_t i = 0; i < lq; ++i) {
                      double dot = 0;
                      for (std::size_t j = 0; j < lk; ++j) dot += dp(i, j) * p(i, j);
                      for (std::size_t j = 0; j < lk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * sc;
                    }
                    if (q.requires_grad()) {
                      const Matrix kh = block(k.value(), g * lk, lk, h * dh, dh);
                      Matrix dq(lq, dh);
                      kernels::gemm_nn(dp.data(), kh.data(), dq.data(), lq, lk, dh, false);
                      Matrix& gq = q.node()->grad_ref();
                      for (std::size_t i = 0; i < lq; ++i)
                        for (std::size_t j = 0; j < dh; ++j) gq(g * lq + i, h * dh + j) += dq(i, j);
                    }
                    if (k.requires_grad()) {
                      const Matrix qh = block(q.value(), g * lq, lq, h * dh, dh);
                      Matrix dk(lk, dh);
                      kernels::gemm_tn(dp.data(), qh.data(), dk.data(), lk, lq, dh, false);
                      Matrix& gk = k.node()->grad_ref();
                      for (std::size_t i = 0; i < lk; ++i)
                        for (std::size_t j = 0; j < dh; ++j) gk(g * lk + i, h * dh + j) += dk(i, j);
                    }
                  }
                }
              });
}

// ---- losses ---------------------------------------------------------------

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets,
                  std::span<const double> class_weight) {
  const auto r = logits.rows(), c = logits.cols();
  require(targets.size() == r, "cross_entropy", "target count mismatch");
  require(class_weight.empty() || class_weight.size() == c, "cross_entropy", "weight size mismatch");
  Matrix prob = logits.value();
  double loss = 0, wsum = 0;
  std::vector<double> w(r);
  for (std::size_t i = 0; i < r; ++i) {
    require(targets[i] < c, "cross_entropy", "target out of range");
    auto row = prob.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0;
    for (double& x : row) s += (x = std::exp(x - mx));
    for (double& x : row) x /= s;
    w[i] = class_weight.empty() ? 1.0 : class_weight[targets[i]];
    loss -= w[i] * std::log(std::max(prob(i, targets[i]), 1e-300));
    wsum += w[i];
  }
  if (wsum <= 0) wsum = 1;
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return make(Matrix(1, 1, loss / wsum), {&logits},
              [logits, prob = std::move(prob), w = std::move(w), t = std::move(t), wsum, r, c](Node& self) {
                Matrix& g = logits.node()->grad_ref();
                const double go = self.grad[0] / wsum;
                for (std::size_t i = 0; i < r; ++i)
                  for (std::size_t j = 0; j < c; ++j)
                    g(i, j) += go * w[i] * (prob(i, j) - (j == t[i] ? 1.0 : 0.0));
              });
}

Var bce_with_logits(const Var& logits, const Matrix& targets) {
  require(logits.value().same_shape(targets), "bce_with_logits", "shape mismatch");
  const auto n = logits.value().size();
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.value()[i];
    loss += softplus(x) - x * targets[i];
  }
  const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
  return make(Matrix(1, 1, loss * inv), {&logits}, [logits, targets, inv, n](Node& self) {
    Matrix& g = logits.node()->grad_ref();
    for (std::size_t i = 0; i < n; ++i)
      g[i] += self.grad[0] * inv * (sigmoid_value(logits.value()[i]) - targets[i]);
  });
}

Var sigmoid_focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma) {
  require(logits.value().same_shape(targets), "sigmoid_focal_loss", "shape mismatch");
  const auto n = logits.value().size();
  double loss = 0;
  Matrix grad(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.value()[i];
    const double y = targets[i];
    const double p = sigmoid_value(x);
    const double log_p = -softplus(-x);
    const double log_1mp = -softplus(x);
    const double pos = -alpha * std::pow(1.0 - p, gamma) * log_p;
    const double neg = -(1.0 - alpha) * std::pow(p, gamma) * log_1mp;
    loss += y * pos + (1.0 - y) * neg;
    const double dpos = alpha * std::pow(1.0 - p, gamma) * (gamma * p * log_p - (1.0 - p));
    const double dneg = (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * log_1mp);
    grad[i] = y * dpos + (1.0 - y) * dneg;
  }
  return make(Matrix(1, 1, loss), {&logits}, [logits, grad = std::move(grad)](Node& self) {
    Matrix& g = logits.node()->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * grad[i];
  });
}

Var giou_rows(const Var& pred_center, const Matrix& target_center) {
  require(pred_center.cols() == 4 && pred_center.value().same_shape(target_center), "giou_rows",
          "expects matching K x 4 boxes");
  const auto k = pred_center.rows();
  using D = Dual<4>;
  Matrix out(k, 1), jac(k, 4);
  for (std::size_t i = 0; i < k; ++i) {
    const D cx = D::variable(pred_center.value()(i, 0), 0);
    const D cy = D::variable(pred_center.value()(i, 1), 1);
    const D w = D::variable(pred_center.value()(i, 2), 2);
    const D h = D::variable(pred_center.value()(i, 3), 3);
    const D half(0.5);
    const std::array<D, 4> a{cx - half * w, cy - half * h, cx + half * w, cy + half * h};
    const auto& t = target_center;
    const std::array<D, 4> b{D(t(i, 0) - 0.5 * t(i, 2)), D(t(i, 1) - 0.5 * t(i, 3)),
                             D(t(i, 0) + 0.5 * t(i, 2)), D(t(i, 1) + 0.5 * t(i, 3))};
    const D g = geometry::giou_generic(a, b);
    out(i, 0) = g.v;
    for (std::size_t j = 0; j < 4; ++j) jac(i, j) = g.d[j];
  }
  return make(std::move(out), {&pred_center}, [pred_center, jac = std::move(jac), k](Node& self) {
    Matrix& g = pred_center.node()->grad_ref();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < 4; ++j) g(i, j) += self.grad(i, 0) * jac(i, j);
  });
}

}  // namespace zhoi::ag
