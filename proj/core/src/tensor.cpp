#include "stylus/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>
#include <cmath>

#include "stylus/common.hpp"

namespace stylus::nn {

namespace {

std::atomic<std::uint64_t> g_order{0};

using RMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RMap = Eigen::Map<RMat>;
using RMapC = Eigen::Map<const RMat>;

RMapC mat_of(const Var& v) {
  return RMapC(v->value.data(), v->shape.rows(), v->shape.cols());
}
RMap mat_of_grad(const Var& v) {
  v->ensure_grad();
  return RMap(v->grad.data(), v->shape.rows(), v->shape.cols());
}

void check_2d(const Var& v, const char* who) {
  if (v->shape.ndim != 2) fail(ErrorClass::training, std::string(who) + ": expected 2-D shape, got " + v->shape.str());
}

Var make_op(Shape shape, std::vector<Var> parents) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->order = ++g_order;
  for (const auto& p : parents) {
    if (p->requires_grad) node->requires_grad = true;
  }
  node->parents = std::move(parents);
  return node;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape
// ---------------------------------------------------------------------------

Shape Shape::of(std::initializer_list<int> dims) {
  if (dims.size() == 0 || dims.size() > 4) fail(ErrorClass::training, "shape must have 1..4 dims");
  Shape s;
  s.ndim = static_cast<int>(dims.size());
  int i = 0;
  for (int d : dims) {
    if (d <= 0) fail(ErrorClass::training, "shape dims must be positive");
    s.d[static_cast<std::size_t>(i++)] = d;
  }
  return s;
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (int i = 0; i < ndim; ++i) n *= d[static_cast<std::size_t>(i)];
  return n;
}

std::string Shape::str() const {
  std::string s = "[";
  for (int i = 0; i < ndim; ++i) {
    if (i) s += ",";
    s += std::to_string(d[static_cast<std::size_t>(i)]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// Construction / backward
// ---------------------------------------------------------------------------

Var make_leaf(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = Arr::Zero(shape.numel());
  node->requires_grad = requires_grad;
  node->order = ++g_order;
  return node;
}

Var make_custom(Shape shape, std::vector<Var> parents) { return make_op(shape, std::move(parents)); }

Var constant(Shape shape, const Arr& values) {
  if (values.size() != shape.numel()) fail(ErrorClass::training, "constant: size mismatch");
  auto node = make_leaf(shape, false);
  node->value = values;
  return node;
}

Var constant_scalar(real v) {
  auto node = make_leaf(Shape::of({1}), false);
  node->value(0) = v;
  return node;
}

Var parameter(Shape shape, Rng& rng, real init_std) {
  auto node = make_leaf(shape, true);
  for (Eigen::Index i = 0; i < node->value.size(); ++i) node->value(i) = rng.normal() * init_std;
  return node;
}

Var parameter_zeros(Shape shape) { return make_leaf(shape, true); }

Var parameter_consts(Shape shape, real v) {
  auto node = make_leaf(shape, true);
  node->value.setConstant(v);
  return node;
}

void backward(const Var& root) {
  if (root->value.size() != 1) fail(ErrorClass::training, "backward: root must be scalar");
  // Collect the reachable subgraph, then replay in reverse creation order.
  std::vector<Var> stack{root};
  std::unordered_set<const Node*> seen;
  auto mark = [&](const Var& v) { return seen.insert(v.get()).second; };
  seen.reserve(4096);
  mark(root);
  std::vector<Var> order_vars{root};
  while (!stack.empty()) {
    Var v = stack.back();
    stack.pop_back();
    for (const auto& p : v->parents) {
      if (p->requires_grad && mark(p)) {
        stack.push_back(p);
        order_vars.push_back(p);
      }
    }
  }
  std::sort(order_vars.begin(), order_vars.end(),
            [](const Var& a, const Var& b) { return a->order > b->order; });

  root->ensure_grad();
  root->grad(0) += 1.0;
  for (const auto& v : order_vars) {
    if (v->backprop && v->requires_grad) {
      v->ensure_grad();
      v->backprop(*v);
    }
  }
}

Var detach(const Var& x) {
  auto node = make_leaf(x->shape, false);
  node->value = x->value;
  return node;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const Var& a, const Var& b, const char* who) {
  if (!(a->shape == b->shape)) {
    fail(ErrorClass::training, std::string(who) + ": shape mismatch " + a->shape.str() + " vs " + b->shape.str());
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  auto out = make_op(a->shape, {a, b});
  out->value = a->value + b->value;
  out->backprop = [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += n.grad;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += n.grad;
    }
  };
  return out;
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  auto out = make_op(a->shape, {a, b});
  out->value = a->value - b->value;
  out->backprop = [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += n.grad;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad -= n.grad;
    }
  };
  return out;
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  auto out = make_op(a->shape, {a, b});
  out->value = a->value * b->value;
  out->backprop = [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += n.grad * b->value;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      b->grad += n.grad * a->value;
    }
  };
  return out;
}

Var add_scalar(const Var& a, real s) {
  auto out = make_op(a->shape, {a});
  out->value = a->value + s;
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad;
  };
  return out;
}

Var mul_scalar(const Var& a, real s) {
  auto out = make_op(a->shape, {a});
  out->value = a->value * s;
  out->backprop = [a, s](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad * s;
  };
  return out;
}

Var relu(const Var& a) {
  auto out = make_op(a->shape, {a});
  out->value = a->value.max(0.0);
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad * (a->value > 0.0).cast<real>();
  };
  return out;
}

namespace {
constexpr real kInvSqrt2 = 0.7071067811865475244;
constexpr real kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Var gelu(const Var& a) {
  auto out = make_op(a->shape, {a});
  const Arr cdf = a->value.unaryExpr([](real v) { return 0.5 * (1.0 + std::erf(v * kInvSqrt2)); });
  out->value = a->value * cdf;
  out->backprop = [a, cdf](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    const Arr pdf = kInvSqrt2Pi * (-0.5 * a->value.square()).exp();
    a->grad += n.grad * (cdf + a->value * pdf);
  };
  return out;
}

Var silu(const Var& a) {
  auto out = make_op(a->shape, {a});
  const Arr sig = 1.0 / (1.0 + (-a->value).exp());
  out->value = a->value * sig;
  out->backprop = [a, sig](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad * (sig + a->value * sig * (1.0 - sig));
  };
  return out;
}

Var sigmoid(const Var& a) {
  auto out = make_op(a->shape, {a});
  out->value = 1.0 / (1.0 + (-a->value).exp());
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad * n.value * (1.0 - n.value);
  };
  return out;
}

Var exp_(const Var& a) {
  auto out = make_op(a->shape, {a});
  out->value = a->value.exp();
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad * n.value;
  };
  return out;
}

Var square(const Var& a) {
  auto out = make_op(a->shape, {a});
  out->value = a->value.square();
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad * 2.0 * a->value;
  };
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  if (a->shape.cols() != b->shape.rows()) {
    fail(ErrorClass::training, "matmul: inner dims " + a->shape.str() + " x " + b->shape.str());
  }
  auto out = make_op(Shape::of({a->shape.rows(), b->shape.cols()}), {a, b});
  out->value = Arr::Zero(out->shape.numel());
  RMap(out->value.data(), out->shape.rows(), out->shape.cols()).noalias() = mat_of(a) * mat_of(b);
  out->backprop = [a, b](Node& n) {
    RMapC g(n.grad.data(), n.shape.rows(), n.shape.cols());
    if (a->requires_grad) {
      mat_of_grad(a).noalias() += g * mat_of(b).transpose();
    }
    if (b->requires_grad) {
      mat_of_grad(b).noalias() += mat_of(a).transpose() * g;
    }
  };
  return out;
}

Var transpose(const Var& a) {
  check_2d(a, "transpose");
  auto out = make_op(Shape::of({a->shape.cols(), a->shape.rows()}), {a});
  out->value = Arr::Zero(out->shape.numel());
  RMap(out->value.data(), out->shape.rows(), out->shape.cols()) = mat_of(a).transpose();
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    RMapC g(n.grad.data(), n.shape.rows(), n.shape.cols());
    mat_of_grad(a) += g.transpose();
  };
  return out;
}

Var add_rowvec(const Var& a, const Var& bias) {
  check_2d(a, "add_rowvec");
  if (bias->shape.numel() != a->shape.cols()) fail(ErrorClass::training, "add_rowvec: bias size mismatch");
  auto out = make_op(a->shape, {a, bias});
  out->value = Arr::Zero(out->shape.numel());
  const int rows = a->shape.rows(), cols = a->shape.cols();
  for (int r = 0; r < rows; ++r) {
    out->value.segment(static_cast<Eigen::Index>(r) * cols, cols) =
        a->value.segment(static_cast<Eigen::Index>(r) * cols, cols) + bias->value;
  }
  out->backprop = [a, bias, rows, cols](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      a->grad += n.grad;
    }
    if (bias->requires_grad) {
      bias->ensure_grad();
      for (int r = 0; r < rows; ++r) {
        bias->grad += n.grad.segment(static_cast<Eigen::Index>(r) * cols, cols);
      }
    }
  };
  return out;
}

Var slice_cols(const Var& a, int c0, int ncols) {
  check_2d(a, "slice_cols");
  if (c0 < 0 || ncols <= 0 || c0 + ncols > a->shape.cols()) fail(ErrorClass::training, "slice_cols out of range");
  auto out = make_op(Shape::of({a->shape.rows(), ncols}), {a});
  out->value = Arr::Zero(out->shape.numel());
  RMap(out->value.data(), out->shape.rows(), ncols) = mat_of(a).middleCols(c0, ncols);
  out->backprop = [a, c0, ncols](Node& n) {
    if (!a->requires_grad) return;
    RMapC g(n.grad.data(), n.shape.rows(), ncols);
    mat_of_grad(a).middleCols(c0, ncols) += g;
  };
  return out;
}

Var slice_rows(const Var& a, int r0, int nrows) {
  check_2d(a, "slice_rows");
  if (r0 < 0 || nrows <= 0 || r0 + nrows > a->shape.rows()) fail(ErrorClass::training, "slice_rows out of range");
  auto out = make_op(Shape::of({nrows, a->shape.cols()}), {a});
  const int cols = a->shape.cols();
  out->value = a->value.segment(static_cast<Eigen::Index>(r0) * cols, static_cast<Eigen::Index>(nrows) * cols);
  out->backprop = [a, r0, nrows, cols](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad.segment(static_cast<Eigen::Index>(r0) * cols, static_cast<Eigen::Index>(nrows) * cols) += n.grad;
  };
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorClass::training, "concat_cols: empty");
  const int rows = parts[0]->shape.rows();
  int cols = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p->shape.rows() != rows) fail(ErrorClass::training, "concat_cols: row mismatch");
    cols += p->shape.cols();
  }
  auto out = make_op(Shape::of({rows, cols}), {parts});
  out->value = Arr::Zero(out->shape.numel());
  RMap dst(out->value.data(), rows, cols);
  int c = 0;
  for (const auto& p : parts) {
    dst.middleCols(c, p->shape.cols()) = mat_of(p);
    c += p->shape.cols();
  }
  out->backprop = [parts, rows, cols](Node& n) {
    RMapC g(n.grad.data(), rows, cols);
    int c = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        mat_of_grad(p) += g.middleCols(c, p->shape.cols());
      }
      c += p->shape.cols();
    }
  };
  return out;
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorClass::training, "concat_rows: empty");
  const int cols = parts[0]->shape.cols();
  int rows = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_rows");
    if (p->shape.cols() != cols) fail(ErrorClass::training, "concat_rows: col mismatch");
    rows += p->shape.rows();
  }
  auto out = make_op(Shape::of({rows, cols}), {parts});
  out->value = Arr::Zero(out->shape.numel());
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out->value.segment(off, p->value.size()) = p->value;
    off += p->value.size();
  }
  out->backprop = [parts](Node& n) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad.segment(off, p->value.size());
      }
      off += p->value.size();
    }
  };
  return out;
}

Var reshape(const Var& a, Shape shape) {
  if (shape.numel() != a->shape.numel()) fail(ErrorClass::training, "reshape: numel mismatch");
  auto out = make_op(shape, {a});
  out->value = a->value;
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad;
  };
  return out;
}

Var softmax_rows(const Var& a, bool causal) {
  check_2d(a, "softmax_rows");
  const int rows = a->shape.rows(), cols = a->shape.cols();
  auto out = make_op(a->shape, {a});
  out->value = Arr::Zero(a->value.size());
  for (int r = 0; r < rows; ++r) {
    const int valid = causal ? std::min(r + 1, cols) : cols;
    auto row = a->value.segment(static_cast<Eigen::Index>(r) * cols, valid);
    const real mx = row.maxCoeff();
    Arr e = (row - mx).exp();
    out->value.segment(static_cast<Eigen::Index>(r) * cols, valid) = e / e.sum();
    // masked tail stays zero
  }
  out->backprop = [a, rows, cols, causal](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      const int valid = causal ? std::min(r + 1, cols) : cols;
      auto y = n.value.segment(static_cast<Eigen::Index>(r) * cols, valid);
      auto gy = n.grad.segment(static_cast<Eigen::Index>(r) * cols, valid);
      const real dot = (y * gy).sum();
      a->grad.segment(static_cast<Eigen::Index>(r) * cols, valid) += y * (gy - dot);
    }
  };
  return out;
}

Var log_softmax_rows(const Var& a) {
  check_2d(a, "log_softmax_rows");
  const int rows = a->shape.rows(), cols = a->shape.cols();
  auto out = make_op(a->shape, {a});
  out->value = Arr::Zero(a->value.size());
  for (int r = 0; r < rows; ++r) {
    auto row = a->value.segment(static_cast<Eigen::Index>(r) * cols, cols);
    const real mx = row.maxCoeff();
    const real lse = mx + std::log((row - mx).exp().sum());
    out->value.segment(static_cast<Eigen::Index>(r) * cols, cols) = row - lse;
  }
  out->backprop = [a, rows, cols](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (int r = 0; r < rows; ++r) {
      auto y = n.value.segment(static_cast<Eigen::Index>(r) * cols, cols);
      auto gy = n.grad.segment(static_cast<Eigen::Index>(r) * cols, cols);
      const real gsum = gy.sum();
      a->grad.segment(static_cast<Eigen::Index>(r) * cols, cols) += gy - y.exp() * gsum;
    }
  };
  return out;
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  check_2d(table, "gather_rows");
  if (ids.empty()) fail(ErrorClass::training, "gather_rows: no ids");
  const int cols = table->shape.cols();
  for (int id : ids) {
    if (id < 0 || id >= table->shape.rows()) fail(ErrorClass::training, "gather_rows: id out of range");
  }
  auto out = make_op(Shape::of({static_cast<int>(ids.size()), cols}), {table});
  out->value = Arr::Zero(out->shape.numel());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out->value.segment(static_cast<Eigen::Index>(i) * cols, cols) =
        table->value.segment(static_cast<Eigen::Index>(ids[i]) * cols, cols);
  }
  out->backprop = [table, ids, cols](Node& n) {
    if (!table->requires_grad) return;
    table->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      table->grad.segment(static_cast<Eigen::Index>(ids[i]) * cols, cols) +=
          n.grad.segment(static_cast<Eigen::Index>(i) * cols, cols);
    }
  };
  return out;
}

Var rms_norm(const Var& x, const Var& gamma, real eps) {
  check_2d(x, "rms_norm");
  const int rows = x->shape.rows(), cols = x->shape.cols();
  if (gamma->shape.numel() != cols) fail(ErrorClass::training, "rms_norm: gamma size mismatch");
  auto out = make_op(x->shape, {x, gamma});
  out->value = Arr::Zero(x->value.size());
  Arr inv_rms(rows);
  for (int r = 0; r < rows; ++r) {
    auto row = x->value.segment(static_cast<Eigen::Index>(r) * cols, cols);
    inv_rms(r) = 1.0 / std::sqrt(row.square().mean() + eps);
    out->value.segment(static_cast<Eigen::Index>(r) * cols, cols) = row * inv_rms(r) * gamma->value;
  }
  out->backprop = [x, gamma, rows, cols, inv_rms](Node& n) {
    for (int r = 0; r < rows; ++r) {
      auto xr = x->value.segment(static_cast<Eigen::Index>(r) * cols, cols);
      auto gy = n.grad.segment(static_cast<Eigen::Index>(r) * cols, cols);
      const real ir = inv_rms(r);
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        gamma->grad += gy * xr * ir;
      }
      if (x->requires_grad) {
        x->ensure_grad();
        const Arr gg = gy * gamma->value;
        const real dot = (gg * xr).sum();
        x->grad.segment(static_cast<Eigen::Index>(r) * cols, cols) +=
            gg * ir - xr * (ir * ir * ir * dot / static_cast<real>(cols));
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// Convolutional ops
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  int n, c, h, w, oc, kh, kw, oh, ow;
};

ConvDims conv_dims(const Var& x, const Var& weight, int stride, int padding) {
  if (x->shape.ndim != 4) fail(ErrorClass::training, "conv2d: input must be [N,C,H,W]");
  if (weight->shape.ndim != 4) fail(ErrorClass::training, "conv2d: weight must be [OC,C,KH,KW]");
  ConvDims d;
  d.n = x->shape.d[0];
  d.c = x->shape.d[1];
  d.h = x->shape.d[2];
  d.w = x->shape.d[3];
  d.oc = weight->shape.d[0];
  d.kh = weight->shape.d[2];
  d.kw = weight->shape.d[3];
  if (weight->shape.d[1] != d.c) fail(ErrorClass::training, "conv2d: channel mismatch");
  d.oh = (d.h + 2 * padding - d.kh) / stride + 1;
  d.ow = (d.w + 2 * padding - d.kw) / stride + 1;
  if (d.oh <= 0 || d.ow <= 0) fail(ErrorClass::training, "conv2d: output collapses to zero");
  return d;
}

// Row-major col buffer [C*KH*KW, OH*OW] for one sample.
void im2col(const real* x, const ConvDims& d, int stride, int padding, real* col) {
  const int M = d.oh * d.ow;
  for (int c = 0; c < d.c; ++c) {
    const real* xc = x + static_cast<std::size_t>(c) * d.h * d.w;
    for (int dy = 0; dy < d.kh; ++dy) {
      for (int dx = 0; dx < d.kw; ++dx) {
        real* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw + static_cast<std::size_t>(dy) * d.kw + dx) * M;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - padding + dy;
          real* out = row + static_cast<std::size_t>(oy) * d.ow;
          if (iy < 0 || iy >= d.h) {
            std::fill(out, out + d.ow, real(0));
            continue;
          }
          const real* xrow = xc + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - padding + dx;
            out[ox] = (ix >= 0 && ix < d.w) ? xrow[ix] : real(0);
          }
        }
      }
    }
  }
}

void col2im_add(const real* col, const ConvDims& d, int stride, int padding, real* gx) {
  const int M = d.oh * d.ow;
  for (int c = 0; c < d.c; ++c) {
    real* gc = gx + static_cast<std::size_t>(c) * d.h * d.w;
    for (int dy = 0; dy < d.kh; ++dy) {
      for (int dx = 0; dx < d.kw; ++dx) {
        const real* row = col + (static_cast<std::size_t>(c) * d.kh * d.kw + static_cast<std::size_t>(dy) * d.kw + dx) * M;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride - padding + dy;
          if (iy < 0 || iy >= d.h) continue;
          real* grow = gc + static_cast<std::size_t>(iy) * d.w;
          const real* r = row + static_cast<std::size_t>(oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride - padding + dx;
            if (ix >= 0 && ix < d.w) grow[ix] += r[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
  const ConvDims d = conv_dims(x, weight, stride, padding);
  if (bias->shape.numel() != d.oc) fail(ErrorClass::training, "conv2d: bias size mismatch");
  auto out = make_op(Shape::of({d.n, d.oc, d.oh, d.ow}), {x, weight, bias});
  out->value = Arr::Zero(out->shape.numel());

  const int K = d.c * d.kh * d.kw;
  const int M = d.oh * d.ow;
  const std::size_t x_stride = static_cast<std::size_t>(d.c) * d.h * d.w;
  const std::size_t o_stride = static_cast<std::size_t>(d.oc) * M;
  RMapC wmat(weight->value.data(), d.oc, K);

#pragma omp parallel
  {
    std::vector<real> col(static_cast<std::size_t>(K) * M);
#pragma omp for schedule(static)
    for (int n = 0; n < d.n; ++n) {
      im2col(x->value.data() + n * x_stride, d, stride, padding, col.data());
      RMap omat(out->value.data() + n * o_stride, d.oc, M);
      omat.noalias() = wmat * RMapC(col.data(), K, M);
      for (int oc = 0; oc < d.oc; ++oc) {
        out->value.segment(static_cast<Eigen::Index>(n * o_stride + static_cast<std::size_t>(oc) * M), M) +=
            bias->value(oc);
      }
    }
  }

  out->backprop = [x, weight, bias, d, stride, padding, K, M, x_stride, o_stride](Node& n_node) {
    RMapC wmat(weight->value.data(), d.oc, K);
    if (bias->requires_grad) {
      bias->ensure_grad();
      for (int n = 0; n < d.n; ++n) {
        for (int oc = 0; oc < d.oc; ++oc) {
          bias->grad(oc) += n_node.grad.segment(static_cast<Eigen::Index>(n * o_stride + static_cast<std::size_t>(oc) * M), M).sum();
        }
      }
    }
    if (weight->requires_grad) weight->ensure_grad();
    if (x->requires_grad) x->ensure_grad();

    // Per-sample recompute of im2col; two threads accumulate into separate
    // buffers, reduced at the end.
    const bool need_w = weight->requires_grad;
    const bool need_x = x->requires_grad;
    if (!need_w && !need_x) return;

#pragma omp parallel
    {
      std::vector<real> col(static_cast<std::size_t>(K) * M);
      std::vector<real> dcol(static_cast<std::size_t>(K) * M);
      Arr wgrad_local = need_w ? Arr(Arr::Zero(weight->value.size())) : Arr();
#pragma omp for schedule(static)
      for (int n = 0; n < d.n; ++n) {
        RMapC gmat(n_node.grad.data() + n * o_stride, d.oc, M);
        if (need_w) {
          im2col(x->value.data() + n * x_stride, d, stride, padding, col.data());
          RMap(wgrad_local.data(), d.oc, K).noalias() += gmat * RMapC(col.data(), K, M).transpose();
        }
        if (need_x) {
          RMap(dcol.data(), K, M).noalias() = wmat.transpose() * gmat;
          col2im_add(dcol.data(), d, stride, padding, x->grad.data() + n * x_stride);
        }
      }
      if (need_w) {
#pragma omp critical
        weight->grad += wgrad_local;
      }
    }
  };
  return out;
}

Var upsample_nearest2x(const Var& x) {
  if (x->shape.ndim != 4) fail(ErrorClass::training, "upsample_nearest2x: input must be [N,C,H,W]");
  const int n = x->shape.d[0], c = x->shape.d[1], h = x->shape.d[2], w = x->shape.d[3];
  auto out = make_op(Shape::of({n, c, h * 2, w * 2}), {x});
  out->value = Arr::Zero(out->shape.numel());
  const int oh = h * 2, ow = w * 2;
  for (int i = 0; i < n * c; ++i) {
    const real* src = x->value.data() + static_cast<std::size_t>(i) * h * w;
    real* dst = out->value.data() + static_cast<std::size_t>(i) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const real* srow = src + static_cast<std::size_t>(y / 2) * w;
      real* drow = dst + static_cast<std::size_t>(y) * ow;
      for (int xk = 0; xk < ow; ++xk) drow[xk] = srow[xk / 2];
    }
  }
  out->backprop = [x, n, c, h, w](Node& nn) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const int oh = h * 2, ow = w * 2;
    for (int i = 0; i < n * c; ++i) {
      const real* g = nn.grad.data() + static_cast<std::size_t>(i) * oh * ow;
      real* gx = x->grad.data() + static_cast<std::size_t>(i) * h * w;
      for (int y = 0; y < oh; ++y) {
        const real* grow = g + static_cast<std::size_t>(y) * ow;
        real* gxrow = gx + static_cast<std::size_t>(y / 2) * w;
        for (int xk = 0; xk < ow; ++xk) gxrow[xk / 2] += grow[xk];
      }
    }
  };
  return out;
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, real eps) {
  if (x->shape.ndim != 4) fail(ErrorClass::training, "group_norm: input must be [N,C,H,W]");
  const int n = x->shape.d[0], c = x->shape.d[1], h = x->shape.d[2], w = x->shape.d[3];
  if (c % groups != 0) fail(ErrorClass::training, "group_norm: channels not divisible by groups");
  if (gamma->shape.numel() != c || beta->shape.numel() != c) fail(ErrorClass::training, "group_norm: affine size mismatch");
  const int cpg = c / groups;
  const std::int64_t m = static_cast<std::int64_t>(cpg) * h * w;

  auto out = make_op(x->shape, {x, gamma, beta});
  out->value = Arr::Zero(x->value.size());
  Arr mu(n * groups), ivar(n * groups);
  for (int i = 0; i < n; ++i) {
    for (int g = 0; g < groups; ++g) {
      const Eigen::Index off = (static_cast<Eigen::Index>(i) * c + static_cast<Eigen::Index>(g) * cpg) * h * w;
      auto seg = x->value.segment(off, m);
      const real mean_v = seg.mean();
      const real var_v = (seg - mean_v).square().mean();
      const real iv = 1.0 / std::sqrt(var_v + eps);
      mu(i * groups + g) = mean_v;
      ivar(i * groups + g) = iv;
      for (int cc = 0; cc < cpg; ++cc) {
        const int channel = g * cpg + cc;
        const Eigen::Index coff = (static_cast<Eigen::Index>(i) * c + channel) * h * w;
        out->value.segment(coff, static_cast<Eigen::Index>(h) * w) =
            (x->value.segment(coff, static_cast<Eigen::Index>(h) * w) - mean_v) * iv * gamma->value(channel) +
            beta->value(channel);
      }
    }
  }
  out->backprop = [x, gamma, beta, n, c, h, w, groups, cpg, m, mu, ivar](Node& nn) {
    const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
    if (gamma->requires_grad) gamma->ensure_grad();
    if (beta->requires_grad) beta->ensure_grad();
    if (x->requires_grad) x->ensure_grad();
    for (int i = 0; i < n; ++i) {
      for (int g = 0; g < groups; ++g) {
        const real mean_v = mu(i * groups + g);
        const real iv = ivar(i * groups + g);
        const Eigen::Index goff = (static_cast<Eigen::Index>(i) * c + static_cast<Eigen::Index>(g) * cpg) * hw;
        // accumulate group statistics of dxhat
        real sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int channel = g * cpg + cc;
          const Eigen::Index coff = (static_cast<Eigen::Index>(i) * c + channel) * hw;
          auto gy = nn.grad.segment(coff, hw);
          const Arr xhat = (x->value.segment(coff, hw) - mean_v) * iv;
          if (gamma->requires_grad) gamma->grad(channel) += (gy * xhat).sum();
          if (beta->requires_grad) beta->grad(channel) += gy.sum();
          const Arr dxhat = gy * gamma->value(channel);
          sum_dxhat += dxhat.sum();
          sum_dxhat_xhat += (dxhat * xhat).sum();
        }
        if (!x->requires_grad) continue;
        const real inv_m = 1.0 / static_cast<real>(m);
        for (int cc = 0; cc < cpg; ++cc) {
          const int channel = g * cpg + cc;
          const Eigen::Index coff = (static_cast<Eigen::Index>(i) * c + channel) * hw;
          auto gy = nn.grad.segment(coff, hw);
          const Arr xhat = (x->value.segment(coff, hw) - mean_v) * iv;
          const Arr dxhat = gy * gamma->value(channel);
          x->grad.segment(coff, hw) += iv * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
        }
        (void)goff;
      }
    }
  };
  return out;
}

Var global_avg_pool(const Var& x) {
  if (x->shape.ndim != 4) fail(ErrorClass::training, "global_avg_pool: input must be [N,C,H,W]");
  const int n = x->shape.d[0], c = x->shape.d[1];
  const Eigen::Index hw = static_cast<Eigen::Index>(x->shape.d[2]) * x->shape.d[3];
  auto out = make_op(Shape::of({n, c}), {x});
  out->value = Arr::Zero(static_cast<Eigen::Index>(n) * c);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n) * c; ++i) {
    out->value(i) = x->value.segment(i * hw, hw).mean();
  }
  out->backprop = [x, n, c, hw](Node& nn) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n) * c; ++i) {
      x->grad.segment(i * hw, hw) += nn.grad(i) / static_cast<real>(hw);
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// Reductions / losses
// ---------------------------------------------------------------------------

Var sum(const Var& a) {
  auto out = make_op(Shape::of({1}), {a});
  out->value = Arr::Constant(1, a->value.sum());
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad(0);
  };
  return out;
}

Var mean(const Var& a) {
  auto out = make_op(Shape::of({1}), {a});
  out->value = Arr::Constant(1, a->value.mean());
  out->backprop = [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    a->grad += n.grad(0) / static_cast<real>(a->value.size());
  };
  return out;
}

Var l1_mean(const Var& pred, const Var& target) {
  check_same_shape(pred, target, "l1_mean");
  auto out = make_op(Shape::of({1}), {pred, target});
  const Arr diff = pred->value - target->value;
  out->value = Arr::Constant(1, diff.abs().mean());
  out->backprop = [pred, target, diff](Node& n) {
    const real scale = n.grad(0) / static_cast<real>(diff.size());
    const Arr sgn = diff.sign();
    if (pred->requires_grad) {
      pred->ensure_grad();
      pred->grad += scale * sgn;
    }
    if (target->requires_grad) {
      target->ensure_grad();
      target->grad -= scale * sgn;
    }
  };
  return out;
}

Var mse_mean(const Var& pred, const Var& target) {
  check_same_shape(pred, target, "mse_mean");
  auto out = make_op(Shape::of({1}), {pred, target});
  const Arr diff = pred->value - target->value;
  out->value = Arr::Constant(1, diff.square().mean());
  out->backprop = [pred, target, diff](Node& n) {
    const real scale = 2.0 * n.grad(0) / static_cast<real>(diff.size());
    if (pred->requires_grad) {
      pred->ensure_grad();
      pred->grad += scale * diff;
    }
    if (target->requires_grad) {
      target->ensure_grad();
      target->grad -= scale * diff;
    }
  };
  return out;
}

Var mse_masked_rows(const Var& pred, const Var& target, const std::vector<bool>& row_mask) {
  check_same_shape(pred, target, "mse_masked_rows");
  check_2d(pred, "mse_masked_rows");
  const int rows = pred->shape.rows(), cols = pred->shape.cols();
  if (static_cast<int>(row_mask.size()) != rows) fail(ErrorClass::training, "mse_masked_rows: mask size mismatch");
  std::int64_t active = 0;
  for (bool b : row_mask) active += b ? 1 : 0;
  if (active == 0) fail(ErrorClass::training, "mse_masked_rows: empty mask");

  auto out = make_op(Shape::of({1}), {pred, target});
  real acc = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (!row_mask[static_cast<std::size_t>(r)]) continue;
    acc += (pred->value.segment(static_cast<Eigen::Index>(r) * cols, cols) -
            target->value.segment(static_cast<Eigen::Index>(r) * cols, cols))
               .square()
               .sum();
  }
  const real denom = static_cast<real>(active) * cols;
  out->value = Arr::Constant(1, acc / denom);
  out->backprop = [pred, target, row_mask, rows, cols, denom](Node& n) {
    const real scale = 2.0 * n.grad(0) / denom;
    for (int r = 0; r < rows; ++r) {
      if (!row_mask[static_cast<std::size_t>(r)]) continue;
      const Arr diff = pred->value.segment(static_cast<Eigen::Index>(r) * cols, cols) -
                       target->value.segment(static_cast<Eigen::Index>(r) * cols, cols);
      if (pred->requires_grad) {
        pred->ensure_grad();
        pred->grad.segment(static_cast<Eigen::Index>(r) * cols, cols) += scale * diff;
      }
      if (target->requires_grad) {
        target->ensure_grad();
        target->grad.segment(static_cast<Eigen::Index>(r) * cols, cols) -= scale * diff;
      }
    }
  };
  return out;
}

Var kl_gaussian_mean(const Var& mu, const Var& logvar) {
  check_same_shape(mu, logvar, "kl_gaussian_mean");
  auto out = make_op(Shape::of({1}), {mu, logvar});
  const Arr var = logvar->value.exp();
  out->value = Arr::Constant(1, 0.5 * (mu->value.square() + var - 1.0 - logvar->value).mean());
  out->backprop = [mu, logvar, var](Node& n) {
    const real scale = n.grad(0) * 0.5 / static_cast<real>(var.size());
    if (mu->requires_grad) {
      mu->ensure_grad();
      mu->grad += scale * 2.0 * mu->value;
    }
    if (logvar->requires_grad) {
      logvar->ensure_grad();
      logvar->grad += scale * (var - 1.0);
    }
  };
  return out;
}

Var cross_entropy_logits(const Var& logits, const std::vector<int>& labels) {
  check_2d(logits, "cross_entropy_logits");
  const int rows = logits->shape.rows(), cols = logits->shape.cols();
  if (static_cast<int>(labels.size()) != rows) fail(ErrorClass::training, "cross_entropy_logits: label count mismatch");
  for (int l : labels) {
    if (l < 0 || l >= cols) fail(ErrorClass::training, "cross_entropy_logits: label out of range");
  }
  auto out = make_op(Shape::of({1}), {logits});
  Arr probs = Arr::Zero(logits->value.size());
  real loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    auto row = logits->value.segment(static_cast<Eigen::Index>(r) * cols, cols);
    const real mx = row.maxCoeff();
    Arr e = (row - mx).exp();
    const real z = e.sum();
    probs.segment(static_cast<Eigen::Index>(r) * cols, cols) = e / z;
    loss += -(row(labels[static_cast<std::size_t>(r)]) - mx - std::log(z));
  }
  out->value = Arr::Constant(1, loss / rows);
  out->backprop = [logits, labels, rows, cols, probs](Node& n) {
    if (!logits->requires_grad) return;
    logits->ensure_grad();
    const real scale = n.grad(0) / rows;
    for (int r = 0; r < rows; ++r) {
      auto seg = logits->grad.segment(static_cast<Eigen::Index>(r) * cols, cols);
      seg += scale * probs.segment(static_cast<Eigen::Index>(r) * cols, cols);
      seg(labels[static_cast<std::size_t>(r)]) -= scale;
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// ParamStore / AdamW
// ---------------------------------------------------------------------------

Var ParamStore::add(const std::string& name, Var v) {
  for (const auto& [n, p] : entries_) {
    if (n == name) fail(ErrorClass::training, "duplicate parameter name: " + name);
  }
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& [n, p] : entries_) {
    if (n == name) return p;
  }
  fail(ErrorClass::checkpoint, "parameter not found: " + name);
}

std::int64_t ParamStore::count() const {
  std::int64_t n = 0;
  for (const auto& [name, p] : entries_) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : entries_) {
    if (p->grad.size() != p->value.size()) p->grad = Arr::Zero(p->value.size());
    p->grad.setZero();
  }
}

std::uint64_t ParamStore::value_hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [name, p] : entries_) {
    h = fnv1a(name, h);
    h = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(real), h);
  }
  return h;
}

AdamW::AdamW(ParamStore& params, AdamWConfig cfg) : params_(params), cfg_(cfg) { reset(); }

void AdamW::reset() {
  m_.clear();
  v_.clear();
  for (const auto& [name, p] : params_.entries()) {
    m_.push_back(Arr::Zero(p->value.size()));
    v_.push_back(Arr::Zero(p->value.size()));
  }
  t_ = 0;
}

void AdamW::step() {
  ++t_;
  const real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<real>(t_));
  const real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<real>(t_));
  std::size_t i = 0;
  for (auto& [name, p] : params_.entries()) {
    if (p->grad.size() != p->value.size()) {
      ++i;
      continue;  // parameter unused in this step
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p->grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p->grad.square();
    const Arr mhat = m_[i] / bc1;
    const Arr vhat = v_[i] / bc2;
    p->value -= cfg_.lr * (mhat / (vhat.sqrt() + cfg_.eps) + cfg_.weight_decay * p->value);
    ++i;
  }
}

Arr finite_difference_grad(const std::function<real()>& loss_fn, const Var& param, real step) {
  Arr grad(param->value.size());
  for (Eigen::Index i = 0; i < param->value.size(); ++i) {
    const real orig = param->value(i);
    param->value(i) = orig + step;
    const real up = loss_fn();
    param->value(i) = orig - step;
    const real down = loss_fn();
    param->value(i) = orig;
    grad(i) = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace stylus::nn
