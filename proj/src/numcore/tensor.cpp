#include "handcraft/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>
#include <utility>

namespace handcraft::numcore {

namespace {

thread_local bool g_grad_enabled = true;

Index shape_product(const std::vector<Index>& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

void check_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + " expects rank-2, got " +
                     shape_string(t.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
}

// Accumulate into a parent's grad only when it participates in the pass.
template <typename Fn>
void accum(TensorNode* p, Fn&& fn) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  fn(p->grad);
}

ConstMatrixMap map_of(const TensorNode* n, Index rows, Index cols) {
  return ConstMatrixMap(n->value.data(), rows, cols);
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

std::string shape_string(const std::vector<Index>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor make_op_tensor(std::vector<Index> shape, std::vector<Scalar> values,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled) {
    bool req = false;
    for (const Tensor& p : parents) req = req || p.requires_grad();
    node->requires_grad = req;
    if (req) {
      node->parents.reserve(parents.size());
      for (const Tensor& p : parents) node->parents.push_back(p.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(node);
}

// ---- construction -----------------------------------------------------------

Tensor Tensor::zeros(std::vector<Index> shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<Index> shape, Scalar value, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  Index n = shape_product(shape);
  if (n < 0) throw ShapeError("negative dimension in " + shape_string(shape));
  node->shape = std::move(shape);
  node->value.assign(static_cast<std::size_t>(n), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_matrix(const Matrix& m, bool requires_grad) {
  auto t = zeros({m.rows(), m.cols()}, requires_grad);
  MatrixMap(t.node_->value.data(), m.rows(), m.cols()) = m;
  return t;
}

Tensor Tensor::from_values(std::vector<Index> shape, std::vector<Scalar> values,
                           bool requires_grad) {
  if (shape_product(shape) != static_cast<Index>(values.size()))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match " + shape_string(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Scalar v, bool requires_grad) {
  return from_values({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<Index> shape, Rng& rng, Scalar stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (Scalar& v : t.node_->value) v = stddev * rng.normal();
  return t;
}

Tensor Tensor::xavier_uniform(Index rows, Index cols, Rng& rng,
                              bool requires_grad) {
  Tensor t = zeros({rows, cols}, requires_grad);
  Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
  for (Scalar& v : t.node_->value) v = rng.uniform(-limit, limit);
  return t;
}

// ---- accessors --------------------------------------------------------------

const std::vector<Index>& Tensor::shape() const { return node_->shape; }
Index Tensor::rank() const { return static_cast<Index>(node_->shape.size()); }
Index Tensor::size() const { return node_->size(); }

Index Tensor::rows() const {
  check_rank2(*this, "rows()");
  return node_->shape[0];
}

Index Tensor::cols() const {
  check_rank2(*this, "cols()");
  return node_->shape[1];
}

std::span<const Scalar> Tensor::values() const {
  return {node_->value.data(), node_->value.size()};
}

std::span<Scalar> Tensor::mutable_values() {
  return {node_->value.data(), node_->value.size()};
}

Scalar Tensor::value_at(Index i) const { return node_->value.at(i); }

Scalar Tensor::value_at(Index i, Index j) const {
  check_rank2(*this, "value_at(i, j)");
  return node_->value.at(i * node_->shape[1] + j);
}

ConstMatrixMap Tensor::mat() const {
  check_rank2(*this, "mat()");
  return ConstMatrixMap(node_->value.data(), node_->shape[0], node_->shape[1]);
}

Matrix Tensor::to_matrix() const {
  if (rank() == 1) return ConstMatrixMap(node_->value.data(), 1, size());
  return mat();
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const Scalar> Tensor::grad() const {
  if (node_->grad.empty()) throw Error("gradient not populated");
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::clear_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const {
  auto node = std::make_shared<TensorNode>();
  node->shape = node_->shape;
  node->value = node_->value;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  if (!node_) throw Error("backward on empty tensor");
  if (node_->size() != 1)
    throw ShapeError("backward requires a scalar, got " +
                     shape_string(node_->shape));
  if (!node_->requires_grad)
    throw Error("backward on a tensor with no gradient path");

  // Post-order DFS over parent edges; reversed it yields every consumer
  // before the node it feeds.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    bool descended = false;
    while (i < n->parents.size()) {
      TensorNode* p = n->parents[i++].get();
      if (p->requires_grad && visited.insert(p).second) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && (stack.back().second >= stack.back().first->parents.size())) {
      order.push_back(stack.back().first);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<Scalar> out(a.size());
  for (Index i = 0; i < a.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  TensorNode* pa = a.node();
  TensorNode* pb = b.node();
  return make_op_tensor(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& n) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    accum(pb, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<Scalar> out(a.size());
  for (Index i = 0; i < a.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  TensorNode* pa = a.node();
  TensorNode* pb = b.node();
  return make_op_tensor(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& n) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
    accum(pb, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.size());
  for (Index i = 0; i < a.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  TensorNode* pa = a.node();
  TensorNode* pb = b.node();
  return make_op_tensor(a.shape(), std::move(out), {a, b}, [pa, pb](TensorNode& n) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb->value[i];
    });
    accum(pb, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa->value[i];
    });
  });
}

Tensor scale(const Tensor& a, Scalar c) {
  std::vector<Scalar> out(a.size());
  for (Index i = 0; i < a.size(); ++i) out[i] = c * a.values()[i];
  TensorNode* pa = a.node();
  return make_op_tensor(a.shape(), std::move(out), {a}, [pa, c](TensorNode& n) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
    });
  });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul lhs");
  check_rank2(b, "matmul rhs");
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul inner dimensions: " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() = a.mat() * b.mat();
  TensorNode* pa = a.node();
  TensorNode* pb = b.node();
  return make_op_tensor({m, n}, std::move(out), {a, b},
                        [pa, pb, m, k, n](TensorNode& nd) {
    ConstMatrixMap g(nd.grad.data(), m, n);
    accum(pa, [&](std::vector<Scalar>& ga) {
      MatrixMap(ga.data(), m, k).noalias() += g * map_of(pb, k, n).transpose();
    });
    accum(pb, [&](std::vector<Scalar>& gb) {
      MatrixMap(gb.data(), k, n).noalias() += map_of(pa, m, k).transpose() * g;
    });
  });
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  const Index m = a.rows(), n = a.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), n, m) = a.mat().transpose();
  TensorNode* pa = a.node();
  return make_op_tensor({n, m}, std::move(out), {a}, [pa, m, n](TensorNode& nd) {
    ConstMatrixMap g(nd.grad.data(), n, m);
    accum(pa, [&](std::vector<Scalar>& ga) {
      MatrixMap(ga.data(), m, n) += g.transpose();
    });
  });
}

// ---- slicing / concatenation -------------------------------------------------

Tensor slice_rows(const Tensor& a, Index start, Index count) {
  check_rank2(a, "slice_rows");
  if (start < 0 || count < 0 || start + count > a.rows())
    throw RangeError("slice_rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") of " +
                     std::to_string(a.rows()) + " rows");
  const Index c = a.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(count * c));
  std::copy_n(a.values().data() + start * c, count * c, out.data());
  TensorNode* pa = a.node();
  return make_op_tensor({count, c}, std::move(out), {a},
                        [pa, start, count, c](TensorNode& nd) {
    accum(pa, [&](std::vector<Scalar>& ga) {
      for (Index i = 0; i < count * c; ++i) ga[start * c + i] += nd.grad[i];
    });
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  check_rank2(a, "slice_cols");
  if (start < 0 || count < 0 || start + count > a.cols())
    throw RangeError("slice_cols [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") of " +
                     std::to_string(a.cols()) + " cols");
  const Index m = a.rows(), c = a.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(m * count));
  MatrixMap(out.data(), m, count) = a.mat().middleCols(start, count);
  TensorNode* pa = a.node();
  return make_op_tensor({m, count}, std::move(out), {a},
                        [pa, start, count, m, c](TensorNode& nd) {
    ConstMatrixMap g(nd.grad.data(), m, count);
    accum(pa, [&](std::vector<Scalar>& ga) {
      MatrixMap(ga.data(), m, c).middleCols(start, count) += g;
    });
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero tensors");
  const Index c = parts[0].cols();
  Index total = 0;
  for (const Tensor& p : parts) {
    check_rank2(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows column mismatch");
    total += p.rows();
  }
  std::vector<Scalar> out;
  out.reserve(static_cast<std::size_t>(total * c));
  for (const Tensor& p : parts)
    out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Index> offsets;
  std::vector<TensorNode*> nodes;
  Index off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    nodes.push_back(p.node());
    off += p.rows() * c;
  }
  return make_op_tensor({total, c}, std::move(out), parts,
                        [offsets, nodes, c](TensorNode& nd) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      accum(nodes[k], [&](std::vector<Scalar>& g) {
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += nd.grad[offsets[k] + i];
      });
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
  const Index m = parts[0].rows();
  Index total = 0;
  for (const Tensor& p : parts) {
    check_rank2(p, "concat_cols");
    if (p.rows() != m) throw ShapeError("concat_cols row mismatch");
    total += p.cols();
  }
  std::vector<Scalar> out(static_cast<std::size_t>(m * total));
  MatrixMap om(out.data(), m, total);
  Index off = 0;
  std::vector<Index> offsets;
  std::vector<Index> widths;
  std::vector<TensorNode*> nodes;
  for (const Tensor& p : parts) {
    om.middleCols(off, p.cols()) = p.mat();
    offsets.push_back(off);
    widths.push_back(p.cols());
    nodes.push_back(p.node());
    off += p.cols();
  }
  return make_op_tensor({m, total}, std::move(out), parts,
                        [offsets, widths, nodes, m, total](TensorNode& nd) {
    ConstMatrixMap g(nd.grad.data(), m, total);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      accum(nodes[k], [&](std::vector<Scalar>& gk) {
        MatrixMap(gk.data(), m, widths[k]) += g.middleCols(offsets[k], widths[k]);
      });
    }
  });
}

// ---- broadcasts --------------------------------------------------------------

namespace {
void check_vec_size(const Tensor& v, Index expect, const char* what) {
  if (v.size() != expect)
    throw ShapeError(std::string(what) + ": vector size " +
                     std::to_string(v.size()) + " != " + std::to_string(expect));
}
}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_rank2(a, "add_rowvec");
  check_vec_size(v, a.cols(), "add_rowvec");
  const Index m = a.rows(), c = a.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(m * c));
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j)
      out[i * c + j] = a.values()[i * c + j] + v.values()[j];
  TensorNode* pa = a.node();
  TensorNode* pv = v.node();
  return make_op_tensor({m, c}, std::move(out), {a, v}, [pa, pv, m, c](TensorNode& nd) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
    });
    accum(pv, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j) g[j] += nd.grad[i * c + j];
    });
  });
}

Tensor mul_rowvec(const Tensor& a, const Tensor& v) {
  check_rank2(a, "mul_rowvec");
  check_vec_size(v, a.cols(), "mul_rowvec");
  const Index m = a.rows(), c = a.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(m * c));
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j)
      out[i * c + j] = a.values()[i * c + j] * v.values()[j];
  TensorNode* pa = a.node();
  TensorNode* pv = v.node();
  return make_op_tensor({m, c}, std::move(out), {a, v}, [pa, pv, m, c](TensorNode& nd) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j)
          g[i * c + j] += nd.grad[i * c + j] * pv->value[j];
    });
    accum(pv, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j)
          g[j] += nd.grad[i * c + j] * pa->value[i * c + j];
    });
  });
}

Tensor mul_colvec(const Tensor& a, const Tensor& v) {
  check_rank2(a, "mul_colvec");
  check_vec_size(v, a.rows(), "mul_colvec");
  const Index m = a.rows(), c = a.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(m * c));
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j)
      out[i * c + j] = a.values()[i * c + j] * v.values()[i];
  TensorNode* pa = a.node();
  TensorNode* pv = v.node();
  return make_op_tensor({m, c}, std::move(out), {a, v}, [pa, pv, m, c](TensorNode& nd) {
    accum(pa, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j)
          g[i * c + j] += nd.grad[i * c + j] * pv->value[i];
    });
    accum(pv, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j)
          g[i] += nd.grad[i * c + j] * pa->value[i * c + j];
    });
  });
}

// ---- normalization -----------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  int axis, Scalar eps) {
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError("layer_norm expects rank 1 or 2");
  if (axis < 0 || axis >= x.rank())
    throw ShapeError("layer_norm axis " + std::to_string(axis) + " out of rank " +
                     std::to_string(x.rank()));
  const Index n = x.shape()[axis];  // normalized length
  if (gain.size() != n || bias.size() != n)
    throw ShapeError("layer_norm gain/bias size != axis length " +
                     std::to_string(n));
  const Index slices = x.size() / n;
  // Flat index of position p within slice s.
  const bool along_rows = (x.rank() == 1) || axis == 1;
  const Index pos_stride = along_rows ? 1 : x.shape()[1];
  const Index slice_stride = along_rows ? n : 1;
  auto at = [pos_stride, slice_stride](Index s, Index p) {
    return s * slice_stride + p * pos_stride;
  };

  std::vector<Scalar> out(x.size());
  std::vector<Scalar> xhat(x.size());
  std::vector<Scalar> istds(slices);
  for (Index s = 0; s < slices; ++s) {
    Scalar mean = 0;
    for (Index p = 0; p < n; ++p) mean += x.values()[at(s, p)];
    mean /= static_cast<Scalar>(n);
    Scalar var = 0;
    for (Index p = 0; p < n; ++p) {
      Scalar d = x.values()[at(s, p)] - mean;
      var += d * d;
    }
    var /= static_cast<Scalar>(n);
    Scalar istd = 1.0 / std::sqrt(var + eps);
    istds[s] = istd;
    for (Index p = 0; p < n; ++p) {
      Index i = at(s, p);
      Scalar xh = (x.values()[i] - mean) * istd;
      xhat[i] = xh;
      out[i] = xh * gain.values()[p] + bias.values()[p];
    }
  }

  TensorNode* px = x.node();
  TensorNode* pg = gain.node();
  TensorNode* pb = bias.node();
  return make_op_tensor(
      x.shape(), std::move(out), {x, gain, bias},
      [px, pg, pb, at, n, slices, xhat = std::move(xhat),
       istds = std::move(istds)](TensorNode& nd) {
        for (Index s = 0; s < slices; ++s) {
          // dxhat = dy * gain; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          Scalar mean_dxh = 0, mean_dxh_xh = 0;
          for (Index p = 0; p < n; ++p) {
            Index i = at(s, p);
            Scalar dxh = nd.grad[i] * pg->value[p];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xhat[i];
          }
          mean_dxh /= static_cast<Scalar>(n);
          mean_dxh_xh /= static_cast<Scalar>(n);
          accum(px, [&](std::vector<Scalar>& g) {
            for (Index p = 0; p < n; ++p) {
              Index i = at(s, p);
              Scalar dxh = nd.grad[i] * pg->value[p];
              g[i] += istds[s] * (dxh - mean_dxh - xhat[i] * mean_dxh_xh);
            }
          });
          accum(pg, [&](std::vector<Scalar>& g) {
            for (Index p = 0; p < n; ++p) {
              Index i = at(s, p);
              g[p] += nd.grad[i] * xhat[i];
            }
          });
          accum(pb, [&](std::vector<Scalar>& g) {
            for (Index p = 0; p < n; ++p) g[p] += nd.grad[at(s, p)];
          });
        }
      });
}

// ---- softmax / losses ----------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  const Index m = x.rank() == 1 ? 1 : x.shape()[0];
  const Index c = x.rank() == 1 ? x.size() : x.shape()[1];
  if (x.rank() > 2) throw ShapeError("softmax_rows expects rank 1 or 2");
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < m; ++i) {
    const Scalar* row = x.values().data() + i * c;
    Scalar mx = row[0];
    for (Index j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    Scalar z = 0;
    for (Index j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (Index j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  TensorNode* px = x.node();
  std::vector<Scalar> saved = out;
  return make_op_tensor(x.shape(), std::move(out), {x},
                        [px, m, c, saved = std::move(saved)](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i) {
        Scalar dot = 0;
        for (Index j = 0; j < c; ++j)
          dot += nd.grad[i * c + j] * saved[i * c + j];
        for (Index j = 0; j < c; ++j)
          g[i * c + j] += saved[i * c + j] * (nd.grad[i * c + j] - dot);
      }
    });
  });
}

Tensor cross_entropy_logits(const Tensor& logits, Index label) {
  if (!(logits.rank() == 1 || (logits.rank() == 2 && logits.shape()[0] == 1)))
    throw ShapeError("cross_entropy_logits expects a logits vector");
  const Index c = logits.size();
  if (label < 0 || label >= c)
    throw IndexError("label " + std::to_string(label) + " out of [0, " +
                     std::to_string(c) + ")");
  const Scalar* l = logits.values().data();
  Scalar mx = l[0];
  for (Index j = 1; j < c; ++j) mx = std::max(mx, l[j]);
  Scalar z = 0;
  std::vector<Scalar> p(c);
  for (Index j = 0; j < c; ++j) {
    p[j] = std::exp(l[j] - mx);
    z += p[j];
  }
  for (Index j = 0; j < c; ++j) p[j] /= z;
  Scalar loss = std::log(z) + mx - l[label];
  TensorNode* pl = logits.node();
  return make_op_tensor({1}, {loss}, {logits},
                        [pl, label, c, p = std::move(p)](TensorNode& nd) {
    accum(pl, [&](std::vector<Scalar>& g) {
      for (Index j = 0; j < c; ++j)
        g[j] += nd.grad[0] * (p[j] - (j == label ? 1.0 : 0.0));
    });
  });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Scalar s = 0;
  for (Scalar v : x.values()) s += v;
  TensorNode* px = x.node();
  return make_op_tensor({1}, {s}, {x}, [px](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (Scalar& v : g) v += nd.grad[0];
    });
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  Scalar s = 0;
  for (Scalar v : x.values()) s += v;
  const Scalar inv = 1.0 / static_cast<Scalar>(x.size());
  TensorNode* px = x.node();
  return make_op_tensor({1}, {s * inv}, {x}, [px, inv](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (Scalar& v : g) v += nd.grad[0] * inv;
    });
  });
}

Tensor rowwise_sum(const Tensor& x) {
  check_rank2(x, "rowwise_sum");
  const Index m = x.rows(), c = x.cols();
  std::vector<Scalar> out(static_cast<std::size_t>(m), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j) out[i] += x.values()[i * c + j];
  TensorNode* px = x.node();
  return make_op_tensor({m}, std::move(out), {x}, [px, m, c](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j) g[i * c + j] += nd.grad[i];
    });
  });
}

// ---- nonlinearities -------------------------------------------------------------

Tensor sqrt_elem(const Tensor& x) {
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = std::sqrt(x.values()[i]);
  TensorNode* px = x.node();
  std::vector<Scalar> saved = out;
  return make_op_tensor(x.shape(), std::move(out), {x},
                        [px, saved = std::move(saved)](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (saved[i] > 0) g[i] += nd.grad[i] * 0.5 / saved[i];
    });
  });
}

Tensor exp_elem(const Tensor& x) {
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) out[i] = std::exp(x.values()[i]);
  TensorNode* px = x.node();
  std::vector<Scalar> saved = out;
  return make_op_tensor(x.shape(), std::move(out), {x},
                        [px, saved = std::move(saved)](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i] * saved[i];
    });
  });
}

namespace {
Scalar sigmoid(Scalar x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  Scalar e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor softplus(const Tensor& x) {
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Scalar v = x.values()[i];
    out[i] = v > 30.0 ? v : std::log1p(std::exp(std::min(v, 30.0)));
  }
  TensorNode* px = x.node();
  return make_op_tensor(x.shape(), std::move(out), {x}, [px](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += nd.grad[i] * sigmoid(px->value[i]);
    });
  });
}

namespace {
constexpr Scalar kInvSqrt2 = 0.7071067811865475244;
constexpr Scalar kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Scalar v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  TensorNode* px = x.node();
  return make_op_tensor(x.shape(), std::move(out), {x}, [px](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        Scalar v = px->value[i];
        Scalar cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        Scalar pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        g[i] += nd.grad[i] * (cdf + v * pdf);
      }
    });
  });
}

Tensor silu(const Tensor& x) {
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Scalar v = x.values()[i];
    out[i] = v * sigmoid(v);
  }
  TensorNode* px = x.node();
  return make_op_tensor(x.shape(), std::move(out), {x}, [px](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        Scalar s = sigmoid(px->value[i]);
        g[i] += nd.grad[i] * s * (1.0 + px->value[i] * (1.0 - s));
      }
    });
  });
}

Tensor dropout(const Tensor& x, Scalar rate, Rng& rng, bool training) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Scalar inv_keep = 1.0 / (1.0 - rate);
  std::vector<Scalar> mask(x.size());
  std::vector<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? inv_keep : 0.0;
    out[i] = x.values()[i] * mask[i];
  }
  TensorNode* px = x.node();
  return make_op_tensor(x.shape(), std::move(out), {x},
                        [px, mask = std::move(mask)](TensorNode& nd) {
    accum(px, [&](std::vector<Scalar>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i] * mask[i];
    });
  });
}

// ---- helpers --------------------------------------------------------------------

Index argmax(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("argmax of empty tensor");
  Index best = 0;
  for (Index i = 1; i < x.size(); ++i)
    if (x.values()[i] > x.values()[best]) best = i;
  return best;
}

bool all_finite(const Tensor& x) {
  for (Scalar v : x.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace handcraft::numcore
