#include "changeseg/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace changeseg {

namespace {

bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Node factory honoring the recording toggle.
NodePtr out_node(std::vector<int> shape, std::vector<NodePtr> inputs) {
  if (!g_grad_enabled) return make_node(std::move(shape), {});
  return make_node(std::move(shape), std::move(inputs));
}

void accumulate(Node& dst, const std::vector<double>& g) {
  auto& gd = dst.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) gd[i] += g[i];
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

// ---------------- elementwise ----------------

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch");
  auto out = out_node(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + bv[i];
  if (out->requires_grad)
    out->backward_fn = [](Node& n) {
      for (auto& in : n.inputs)
        if (in->requires_grad) accumulate(*in, n.grad);
    };
  return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  auto out = out_node(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] - bv[i];
  if (out->requires_grad)
    out->backward_fn = [](Node& n) {
      if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
      if (n.inputs[1]->requires_grad) {
        auto& g = n.inputs[1]->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
      }
    };
  return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  auto out = out_node(a.shape(), {a.node(), b.node()});
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * bv[i];
  if (out->requires_grad)
    out->backward_fn = [](Node& n) {
      const auto& av = n.inputs[0]->value;
      const auto& bv = n.inputs[1]->value;
      if (n.inputs[0]->requires_grad) {
        auto& g = n.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
      }
      if (n.inputs[1]->requires_grad) {
        auto& g = n.inputs[1]->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
      }
    };
  return Tensor(out);
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = out_node(a.shape(), {a.node()});
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + s;
  if (out->requires_grad)
    out->backward_fn = [](Node& n) { accumulate(*n.inputs[0], n.grad); };
  return Tensor(out);
}

Tensor mul_scalar(const Tensor& a, double s) {
  auto out = out_node(a.shape(), {a.node()});
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] * s;
  if (out->requires_grad)
    out->backward_fn = [s](Node& n) {
      auto& g = n.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * s;
    };
  return Tensor(out);
}

Tensor relu(const Tensor& a) {
  auto out = out_node(a.shape(), {a.node()});
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] > 0.0 ? av[i] : 0.0;
  if (out->requires_grad)
    out->backward_fn = [](Node& n) {
      auto& g = n.inputs[0]->ensure_grad();
      const auto& xv = n.inputs[0]->value;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (xv[i] > 0.0) g[i] += n.grad[i];
    };
  return Tensor(out);
}

Tensor gelu(const Tensor& a) {
  // Exact form x * Phi(x); derivative Phi(x) + x * phi(x).
  auto out = out_node(a.shape(), {a.node()});
  const auto& av = a.values();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < av.size(); ++i)
    out->value[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
  if (out->requires_grad)
    out->backward_fn = [](Node& n) {
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      auto& g = n.inputs[0]->ensure_grad();
      const auto& xv = n.inputs[0]->value;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        double x = xv[i];
        double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        g[i] += n.grad[i] * (cdf + x * pdf);
      }
    };
  return Tensor(out);
}

Tensor sigmoid(const Tensor& a) {
  auto out = out_node(a.shape(), {a.node()});
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = 1.0 / (1.0 + std::exp(-av[i]));
  if (out->requires_grad)
    out->backward_fn = [](Node& n) {
      auto& g = n.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        double y = n.value[i];
        g[i] += n.grad[i] * y * (1.0 - y);
      }
    };
  return Tensor(out);
}

// ---------------- broadcasts ----------------

namespace {
void check_map3(const Tensor& x, const char* op) {
  require(x.ndim() == 3, std::string(op) + ": expected (C,H,W)");
}
}  // namespace

Tensor add_spatial(const Tensor& x, const Tensor& m) {
  check_map3(x, "add_spatial");
  require(m.ndim() == 2 && m.dim(0) == x.dim(1) && m.dim(1) == x.dim(2),
          "add_spatial: map shape mismatch");
  const int C = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(m.size());
  auto out = out_node(x.shape(), {x.node(), m.node()});
  const auto& xv = x.values();
  const auto& mv = m.values();
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < hw; ++p) out->value[c * hw + p] = xv[c * hw + p] + mv[p];
  if (out->requires_grad)
    out->backward_fn = [C, hw](Node& n) {
      if (n.inputs[0]->requires_grad) accumulate(*n.inputs[0], n.grad);
      if (n.inputs[1]->requires_grad) {
        auto& gm = n.inputs[1]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (std::size_t p = 0; p < hw; ++p) gm[p] += n.grad[c * hw + p];
      }
    };
  return Tensor(out);
}

Tensor mul_spatial(const Tensor& x, const Tensor& m) {
  check_map3(x, "mul_spatial");
  require(m.ndim() == 2 && m.dim(0) == x.dim(1) && m.dim(1) == x.dim(2),
          "mul_spatial: map shape mismatch");
  const int C = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(m.size());
  auto out = out_node(x.shape(), {x.node(), m.node()});
  const auto& xv = x.values();
  const auto& mv = m.values();
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < hw; ++p) out->value[c * hw + p] = xv[c * hw + p] * mv[p];
  if (out->requires_grad)
    out->backward_fn = [C, hw](Node& n) {
      const auto& xv = n.inputs[0]->value;
      const auto& mv = n.inputs[1]->value;
      if (n.inputs[0]->requires_grad) {
        auto& gx = n.inputs[0]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (std::size_t p = 0; p < hw; ++p) gx[c * hw + p] += n.grad[c * hw + p] * mv[p];
      }
      if (n.inputs[1]->requires_grad) {
        auto& gm = n.inputs[1]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (std::size_t p = 0; p < hw; ++p) gm[p] += n.grad[c * hw + p] * xv[c * hw + p];
      }
    };
  return Tensor(out);
}

Tensor mul_channel(const Tensor& x, const Tensor& c) {
  check_map3(x, "mul_channel");
  require(c.ndim() == 1 && c.dim(0) == x.dim(0), "mul_channel: channel vector mismatch");
  const int C = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto out = out_node(x.shape(), {x.node(), c.node()});
  const auto& xv = x.values();
  const auto& cv = c.values();
  for (int ch = 0; ch < C; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out->value[ch * hw + p] = xv[ch * hw + p] * cv[ch];
  if (out->requires_grad)
    out->backward_fn = [C, hw](Node& n) {
      const auto& xv = n.inputs[0]->value;
      const auto& cv = n.inputs[1]->value;
      if (n.inputs[0]->requires_grad) {
        auto& gx = n.inputs[0]->ensure_grad();
        for (int ch = 0; ch < C; ++ch)
          for (std::size_t p = 0; p < hw; ++p) gx[ch * hw + p] += n.grad[ch * hw + p] * cv[ch];
      }
      if (n.inputs[1]->requires_grad) {
        auto& gc = n.inputs[1]->ensure_grad();
        for (int ch = 0; ch < C; ++ch) {
          double s = 0.0;
          for (std::size_t p = 0; p < hw; ++p) s += n.grad[ch * hw + p] * xv[ch * hw + p];
          gc[ch] += s;
        }
      }
    };
  return Tensor(out);
}

Tensor mul_cw(const Tensor& x, const Tensor& a) {
  check_map3(x, "mul_cw");
  require(a.ndim() == 2 && a.dim(0) == x.dim(0) && a.dim(1) == x.dim(2),
          "mul_cw: profile shape mismatch");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto out = out_node(x.shape(), {x.node(), a.node()});
  const auto& xv = x.values();
  const auto& av = a.values();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        out->value[(c * H + h) * W + w] = xv[(c * H + h) * W + w] * av[c * W + w];
  if (out->requires_grad)
    out->backward_fn = [C, H, W](Node& n) {
      const auto& xv = n.inputs[0]->value;
      const auto& av = n.inputs[1]->value;
      if (n.inputs[0]->requires_grad) {
        auto& gx = n.inputs[0]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              gx[(c * H + h) * W + w] += n.grad[(c * H + h) * W + w] * av[c * W + w];
      }
      if (n.inputs[1]->requires_grad) {
        auto& ga = n.inputs[1]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              ga[c * W + w] += n.grad[(c * H + h) * W + w] * xv[(c * H + h) * W + w];
      }
    };
  return Tensor(out);
}

Tensor mul_ch(const Tensor& x, const Tensor& a) {
  check_map3(x, "mul_ch");
  require(a.ndim() == 2 && a.dim(0) == x.dim(0) && a.dim(1) == x.dim(1),
          "mul_ch: profile shape mismatch");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto out = out_node(x.shape(), {x.node(), a.node()});
  const auto& xv = x.values();
  const auto& av = a.values();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        out->value[(c * H + h) * W + w] = xv[(c * H + h) * W + w] * av[c * H + h];
  if (out->requires_grad)
    out->backward_fn = [C, H, W](Node& n) {
      const auto& xv = n.inputs[0]->value;
      const auto& av = n.inputs[1]->value;
      if (n.inputs[0]->requires_grad) {
        auto& gx = n.inputs[0]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              gx[(c * H + h) * W + w] += n.grad[(c * H + h) * W + w] * av[c * H + h];
      }
      if (n.inputs[1]->requires_grad) {
        auto& ga = n.inputs[1]->ensure_grad();
        for (int c = 0; c < C; ++c)
          for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
              ga[c * H + h] += n.grad[(c * H + h) * W + w] * xv[(c * H + h) * W + w];
      }
    };
  return Tensor(out);
}

// ---------------- linear algebra ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul: shape mismatch");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = out_node({m, n}, {a.node(), b.node()});
  MapC A(a.values().data(), m, k), B(b.values().data(), k, n);
  MapM O(out->value.data(), m, n);
  O.noalias() = A * B;
  if (out->requires_grad)
    out->backward_fn = [m, k, n](Node& nd) {
      MapC G(nd.grad.data(), m, n);
      MapC A(nd.inputs[0]->value.data(), m, k), B(nd.inputs[1]->value.data(), k, n);
      if (nd.inputs[0]->requires_grad) {
        MapM GA(nd.inputs[0]->ensure_grad().data(), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (nd.inputs[1]->requires_grad) {
        MapM GB(nd.inputs[1]->ensure_grad().data(), k, n);
        GB.noalias() += A.transpose() * G;
      }
    };
  return Tensor(out);
}

Tensor transpose(const Tensor& a) {
  require(a.ndim() == 2, "transpose: expected 2-D");
  const int m = a.dim(0), n = a.dim(1);
  auto out = out_node({n, m}, {a.node()});
  MapC A(a.values().data(), m, n);
  MapM O(out->value.data(), n, m);
  O = A.transpose();
  if (out->requires_grad)
    out->backward_fn = [m, n](Node& nd) {
      MapC G(nd.grad.data(), n, m);
      MapM GA(nd.inputs[0]->ensure_grad().data(), m, n);
      GA.noalias() += G.transpose();
    };
  return Tensor(out);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(0), "linear: shape mismatch");
  require(b.ndim() == 1 && b.dim(0) == w.dim(1), "linear: bias mismatch");
  const int n = x.dim(0), ci = x.dim(1), co = w.dim(1);
  auto out = out_node({n, co}, {x.node(), w.node(), b.node()});
  MapC X(x.values().data(), n, ci), W(w.values().data(), ci, co);
  MapM O(out->value.data(), n, co);
  O.noalias() = X * W;
  const auto& bv = b.values();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < co; ++c) out->value[r * co + c] += bv[c];
  if (out->requires_grad)
    out->backward_fn = [n, ci, co](Node& nd) {
      MapC G(nd.grad.data(), n, co);
      MapC X(nd.inputs[0]->value.data(), n, ci), W(nd.inputs[1]->value.data(), ci, co);
      if (nd.inputs[0]->requires_grad) {
        MapM GX(nd.inputs[0]->ensure_grad().data(), n, ci);
        GX.noalias() += G * W.transpose();
      }
      if (nd.inputs[1]->requires_grad) {
        MapM GW(nd.inputs[1]->ensure_grad().data(), ci, co);
        GW.noalias() += X.transpose() * G;
      }
      if (nd.inputs[2]->requires_grad) {
        auto& gb = nd.inputs[2]->ensure_grad();
        for (int r = 0; r < n; ++r)
          for (int c = 0; c < co; ++c) gb[c] += nd.grad[r * co + c];
      }
    };
  return Tensor(out);
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  require(x.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_cols: bad range");
  const int n = x.dim(0), c = x.dim(1), w = c1 - c0;
  auto out = out_node({n, w}, {x.node()});
  const auto& xv = x.values();
  for (int r = 0; r < n; ++r)
    for (int j = 0; j < w; ++j) out->value[r * w + j] = xv[r * c + c0 + j];
  if (out->requires_grad)
    out->backward_fn = [n, c, c0, w](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < w; ++j) gx[r * c + c0 + j] += nd.grad[r * w + j];
    };
  return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  const int n = parts[0].dim(0);
  int total = 0;
  std::vector<NodePtr> ins;
  std::vector<int> widths;
  for (const auto& p : parts) {
    require(p.ndim() == 2 && p.dim(0) == n, "concat_cols: row mismatch");
    widths.push_back(p.dim(1));
    total += p.dim(1);
    ins.push_back(p.node());
  }
  auto out = out_node({n, total}, std::move(ins));
  int off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].values();
    const int w = widths[k];
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < w; ++j) out->value[r * total + off + j] = pv[r * w + j];
    off += w;
  }
  if (out->requires_grad)
    out->backward_fn = [n, total, widths](Node& nd) {
      int off = 0;
      for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
        const int w = widths[k];
        if (nd.inputs[k]->requires_grad) {
          auto& g = nd.inputs[k]->ensure_grad();
          for (int r = 0; r < n; ++r)
            for (int j = 0; j < w; ++j) g[r * w + j] += nd.grad[r * total + off + j];
        }
        off += w;
      }
    };
  return Tensor(out);
}

Tensor softmax_rows(const Tensor& x) {
  require(x.ndim() == 2, "softmax_rows: expected 2-D");
  const int m = x.dim(0), n = x.dim(1);
  auto out = out_node(x.shape(), {x.node()});
  const auto& xv = x.values();
  for (int r = 0; r < m; ++r) {
    double mx = xv[r * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xv[r * n + j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(xv[r * n + j] - mx);
      out->value[r * n + j] = e;
      s += e;
    }
    double inv = 1.0 / s;
    for (int j = 0; j < n; ++j) out->value[r * n + j] *= inv;
  }
  if (out->requires_grad)
    out->backward_fn = [m, n](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      for (int r = 0; r < m; ++r) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += nd.grad[r * n + j] * nd.value[r * n + j];
        for (int j = 0; j < n; ++j)
          gx[r * n + j] += nd.value[r * n + j] * (nd.grad[r * n + j] - dot);
      }
    };
  return Tensor(out);
}

// ---------------- shape ----------------

Tensor reshape(const Tensor& x, const std::vector<int>& shape) {
  require(numel(shape) == x.size(), "reshape: element count mismatch");
  auto out = out_node(shape, {x.node()});
  out->value = x.values();
  if (out->requires_grad)
    out->backward_fn = [](Node& nd) { accumulate(*nd.inputs[0], nd.grad); };
  return Tensor(out);
}

Tensor concat_channels(const std::vector<Tensor>& maps) {
  require(!maps.empty(), "concat_channels: empty");
  const int H = maps[0].dim(1), W = maps[0].dim(2);
  int C = 0;
  std::vector<NodePtr> ins;
  std::vector<int> chans;
  for (const auto& m : maps) {
    require(m.ndim() == 3 && m.dim(1) == H && m.dim(2) == W, "concat_channels: shape mismatch");
    chans.push_back(m.dim(0));
    C += m.dim(0);
    ins.push_back(m.node());
  }
  auto out = out_node({C, H, W}, std::move(ins));
  std::size_t off = 0;
  for (const auto& m : maps) {
    const auto& v = m.values();
    std::copy(v.begin(), v.end(), out->value.begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  if (out->requires_grad)
    out->backward_fn = [](Node& nd) {
      std::size_t off = 0;
      for (auto& in : nd.inputs) {
        const std::size_t sz = in->value.size();
        if (in->requires_grad) {
          auto& g = in->ensure_grad();
          for (std::size_t i = 0; i < sz; ++i) g[i] += nd.grad[off + i];
        }
        off += sz;
      }
    };
  return Tensor(out);
}

// ---------------- conv / spatial ----------------

namespace {

void im2col(const double* x, int ci, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, double* col) {
  // col is (ci*kh*kw) x (oh*ow), row-major
  const int ocols = oh * ow;
  for (int c = 0; c < ci; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + ((c * kh + ki) * kw + kj) * ocols;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ki;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kj;
            row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[(c * h + iy) * w + ix]
                                    : 0.0;
          }
        }
      }
}

void col2im_accum(const double* col, int ci, int h, int w, int kh, int kw, int stride, int pad,
                  int oh, int ow, double* gx) {
  const int ocols = oh * ow;
  for (int c = 0; c < ci; ++c)
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + ((c * kh + ki) * kw + kj) * ocols;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) gx[(c * h + iy) * w + ix] += row[oy * ow + ox];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  require(x.ndim() == 3 && w.ndim() == 4, "conv2d: expected x(C,H,W), w(Co,Ci,kh,kw)");
  require(x.dim(0) == w.dim(1), "conv2d: channel mismatch");
  require(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d: bias mismatch");
  const int ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d: empty output");

  auto out = out_node({co, oh, ow}, {x.node(), w.node(), b.node()});
  const int krows = ci * kh * kw, ocols = oh * ow;
  std::vector<double> col(static_cast<std::size_t>(krows) * ocols);
  im2col(x.values().data(), ci, h, ww, kh, kw, stride, pad, oh, ow, col.data());
  MapC Wf(w.values().data(), co, krows), Col(col.data(), krows, ocols);
  MapM O(out->value.data(), co, ocols);
  O.noalias() = Wf * Col;
  const auto& bv = b.values();
  for (int c = 0; c < co; ++c)
    for (int p = 0; p < ocols; ++p) out->value[c * ocols + p] += bv[c];

  if (out->requires_grad)
    out->backward_fn = [ci, h, ww, co, kh, kw, stride, pad, oh, ow](Node& nd) {
      const int krows = ci * kh * kw, ocols = oh * ow;
      std::vector<double> col(static_cast<std::size_t>(krows) * ocols);
      im2col(nd.inputs[0]->value.data(), ci, h, ww, kh, kw, stride, pad, oh, ow, col.data());
      MapC G(nd.grad.data(), co, ocols);
      if (nd.inputs[1]->requires_grad) {
        MapM GW(nd.inputs[1]->ensure_grad().data(), co, krows);
        MapC Col(col.data(), krows, ocols);
        GW.noalias() += G * Col.transpose();
      }
      if (nd.inputs[2]->requires_grad) {
        auto& gb = nd.inputs[2]->ensure_grad();
        for (int c = 0; c < co; ++c) {
          double s = 0.0;
          for (int p = 0; p < ocols; ++p) s += nd.grad[c * ocols + p];
          gb[c] += s;
        }
      }
      if (nd.inputs[0]->requires_grad) {
        std::vector<double> gcol(static_cast<std::size_t>(krows) * ocols);
        MapC Wf(nd.inputs[1]->value.data(), co, krows);
        MapM GC(gcol.data(), krows, ocols);
        GC.noalias() = Wf.transpose() * G;
        col2im_accum(gcol.data(), ci, h, ww, kh, kw, stride, pad, oh, ow,
                     nd.inputs[0]->ensure_grad().data());
      }
    };
  return Tensor(out);
}

Tensor dwconv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.ndim() == 3 && w.ndim() == 3 && w.dim(1) == 3 && w.dim(2) == 3,
          "dwconv3x3: expected x(C,H,W), w(C,3,3)");
  require(w.dim(0) == x.dim(0) && b.ndim() == 1 && b.dim(0) == x.dim(0),
          "dwconv3x3: channel mismatch");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto out = out_node(x.shape(), {x.node(), w.node(), b.node()});
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double s = bv[c];
        for (int ki = 0; ki < 3; ++ki) {
          int iy = y + ki - 1;
          if (iy < 0 || iy >= H) continue;
          for (int kj = 0; kj < 3; ++kj) {
            int ix = xx + kj - 1;
            if (ix < 0 || ix >= W) continue;
            s += wv[(c * 3 + ki) * 3 + kj] * xv[(c * H + iy) * W + ix];
          }
        }
        out->value[(c * H + y) * W + xx] = s;
      }
  if (out->requires_grad)
    out->backward_fn = [C, H, W](Node& nd) {
      const auto& xv = nd.inputs[0]->value;
      const auto& wv = nd.inputs[1]->value;
      const bool need_x = nd.inputs[0]->requires_grad;
      const bool need_w = nd.inputs[1]->requires_grad;
      const bool need_b = nd.inputs[2]->requires_grad;
      auto* gx = need_x ? nd.inputs[0]->ensure_grad().data() : nullptr;
      auto* gw = need_w ? nd.inputs[1]->ensure_grad().data() : nullptr;
      auto* gb = need_b ? nd.inputs[2]->ensure_grad().data() : nullptr;
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
          for (int xx = 0; xx < W; ++xx) {
            const double g = nd.grad[(c * H + y) * W + xx];
            if (gb) gb[c] += g;
            for (int ki = 0; ki < 3; ++ki) {
              int iy = y + ki - 1;
              if (iy < 0 || iy >= H) continue;
              for (int kj = 0; kj < 3; ++kj) {
                int ix = xx + kj - 1;
                if (ix < 0 || ix >= W) continue;
                if (gw) gw[(c * 3 + ki) * 3 + kj] += g * xv[(c * H + iy) * W + ix];
                if (gx) gx[(c * H + iy) * W + ix] += g * wv[(c * 3 + ki) * 3 + kj];
              }
            }
          }
    };
  return Tensor(out);
}

void resize_bilinear_raw(const double* src, int channels, int in_h, int in_w,
                         double* dst, int out_h, int out_w) {
  const double sy = static_cast<double>(in_h) / out_h;
  const double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    if (fy < 0.0) fy = 0.0;
    int y0 = static_cast<int>(fy);
    if (y0 > in_h - 1) y0 = in_h - 1;
    int y1 = std::min(y0 + 1, in_h - 1);
    double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      if (fx < 0.0) fx = 0.0;
      int x0 = static_cast<int>(fx);
      if (x0 > in_w - 1) x0 = in_w - 1;
      int x1 = std::min(x0 + 1, in_w - 1);
      double wx = fx - x0;
      for (int c = 0; c < channels; ++c) {
        const double* p = src + static_cast<std::size_t>(c) * in_h * in_w;
        double top = p[y0 * in_w + x0] * (1.0 - wx) + p[y0 * in_w + x1] * wx;
        double bot = p[y1 * in_w + x0] * (1.0 - wx) + p[y1 * in_w + x1] * wx;
        dst[(static_cast<std::size_t>(c) * out_h + oy) * out_w + ox] =
            top * (1.0 - wy) + bot * wy;
      }
    }
  }
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  check_map3(x, "bilinear_resize");
  const int C = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto out = out_node({C, out_h, out_w}, {x.node()});
  resize_bilinear_raw(x.values().data(), C, h, w, out->value.data(), out_h, out_w);
  if (out->requires_grad)
    out->backward_fn = [C, h, w, out_h, out_w](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      const double sy = static_cast<double>(h) / out_h;
      const double sx = static_cast<double>(w) / out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        if (fy < 0.0) fy = 0.0;
        int y0 = static_cast<int>(fy);
        if (y0 > h - 1) y0 = h - 1;
        int y1 = std::min(y0 + 1, h - 1);
        double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
          double fx = (ox + 0.5) * sx - 0.5;
          if (fx < 0.0) fx = 0.0;
          int x0 = static_cast<int>(fx);
          if (x0 > w - 1) x0 = w - 1;
          int x1 = std::min(x0 + 1, w - 1);
          double wx = fx - x0;
          for (int c = 0; c < C; ++c) {
            const double g = nd.grad[(static_cast<std::size_t>(c) * out_h + oy) * out_w + ox];
            double* gp = gx.data() + static_cast<std::size_t>(c) * h * w;
            gp[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
            gp[y0 * w + x1] += g * (1.0 - wy) * wx;
            gp[y1 * w + x0] += g * wy * (1.0 - wx);
            gp[y1 * w + x1] += g * wy * wx;
          }
        }
      }
    };
  return Tensor(out);
}

Tensor avg_pool_rows(const Tensor& x) {
  check_map3(x, "avg_pool_rows");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto out = out_node({C, W}, {x.node()});
  const auto& xv = x.values();
  const double inv = 1.0 / H;
  for (int c = 0; c < C; ++c)
    for (int w = 0; w < W; ++w) {
      double s = 0.0;
      for (int h = 0; h < H; ++h) s += xv[(c * H + h) * W + w];
      out->value[c * W + w] = s * inv;
    }
  if (out->requires_grad)
    out->backward_fn = [C, H, W](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      const double inv = 1.0 / H;
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) gx[(c * H + h) * W + w] += nd.grad[c * W + w] * inv;
    };
  return Tensor(out);
}

Tensor avg_pool_cols(const Tensor& x) {
  check_map3(x, "avg_pool_cols");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto out = out_node({C, H}, {x.node()});
  const auto& xv = x.values();
  const double inv = 1.0 / W;
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < H; ++h) {
      double s = 0.0;
      for (int w = 0; w < W; ++w) s += xv[(c * H + h) * W + w];
      out->value[c * H + h] = s * inv;
    }
  if (out->requires_grad)
    out->backward_fn = [C, H, W](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      const double inv = 1.0 / W;
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) gx[(c * H + h) * W + w] += nd.grad[c * H + h] * inv;
    };
  return Tensor(out);
}

Tensor global_avg_pool(const Tensor& x) {
  check_map3(x, "global_avg_pool");
  const int C = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto out = out_node({C}, {x.node()});
  const auto& xv = x.values();
  const double inv = 1.0 / static_cast<double>(hw);
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += xv[c * hw + p];
    out->value[c] = s * inv;
  }
  if (out->requires_grad)
    out->backward_fn = [C, hw](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      const double inv = 1.0 / static_cast<double>(hw);
      for (int c = 0; c < C; ++c)
        for (std::size_t p = 0; p < hw; ++p) gx[c * hw + p] += nd.grad[c] * inv;
    };
  return Tensor(out);
}

// ---------------- normalization / reductions ----------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require(x.ndim() == 2, "layer_norm: expected (N,C)");
  const int N = x.dim(0), C = x.dim(1);
  require(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 && beta.dim(0) == C,
          "layer_norm: affine shape mismatch");
  auto out = out_node(x.shape(), {x.node(), gamma.node(), beta.node()});
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int r = 0; r < N; ++r) {
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += xv[r * C + c];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = xv[r * C + c] - mu;
      var += d * d;
    }
    var /= C;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < C; ++c)
      out->value[r * C + c] = (xv[r * C + c] - mu) * inv * gv[c] + bv[c];
  }
  if (out->requires_grad)
    out->backward_fn = [N, C, eps](Node& nd) {
      const auto& xv = nd.inputs[0]->value;
      const auto& gv = nd.inputs[1]->value;
      const bool need_x = nd.inputs[0]->requires_grad;
      const bool need_g = nd.inputs[1]->requires_grad;
      const bool need_b = nd.inputs[2]->requires_grad;
      auto* gx = need_x ? nd.inputs[0]->ensure_grad().data() : nullptr;
      auto* gg = need_g ? nd.inputs[1]->ensure_grad().data() : nullptr;
      auto* gb = need_b ? nd.inputs[2]->ensure_grad().data() : nullptr;
      std::vector<double> xhat(static_cast<std::size_t>(C));
      for (int r = 0; r < N; ++r) {
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += xv[r * C + c];
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
          double d = xv[r * C + c] - mu;
          var += d * d;
        }
        var /= C;
        double inv = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < C; ++c) xhat[c] = (xv[r * C + c] - mu) * inv;
        if (gg || gb) {
          for (int c = 0; c < C; ++c) {
            const double g = nd.grad[r * C + c];
            if (gg) gg[c] += g * xhat[c];
            if (gb) gb[c] += g;
          }
        }
        if (gx) {
          double m1 = 0.0, m2 = 0.0;
          for (int c = 0; c < C; ++c) {
            double dxh = nd.grad[r * C + c] * gv[c];
            m1 += dxh;
            m2 += dxh * xhat[c];
          }
          m1 /= C;
          m2 /= C;
          for (int c = 0; c < C; ++c) {
            double dxh = nd.grad[r * C + c] * gv[c];
            gx[r * C + c] += inv * (dxh - m1 - xhat[c] * m2);
          }
        }
      }
    };
  return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
  auto out = out_node({1}, {x.node()});
  const auto& xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  const double inv = 1.0 / static_cast<double>(xv.size());
  out->value[0] = s * inv;
  if (out->requires_grad)
    out->backward_fn = [inv](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      const double g = nd.grad[0] * inv;
      for (auto& v : gx) v += g;
    };
  return Tensor(out);
}

Tensor sum_all(const Tensor& x) {
  auto out = out_node({1}, {x.node()});
  double s = 0.0;
  for (double v : x.values()) s += v;
  out->value[0] = s;
  if (out->requires_grad)
    out->backward_fn = [](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      for (auto& v : gx) v += nd.grad[0];
    };
  return Tensor(out);
}

// ---------------- task-specific ----------------

Tensor channel_l2(const Tensor& x) {
  check_map3(x, "channel_l2");
  const int C = x.dim(0);
  const int H = x.dim(1), W = x.dim(2);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  auto out = out_node({H, W}, {x.node()});
  const auto& xv = x.values();
  for (std::size_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) {
      double v = xv[c * hw + p];
      s += v * v;
    }
    out->value[p] = std::sqrt(s);
  }
  if (out->requires_grad)
    out->backward_fn = [C, hw](Node& nd) {
      auto& gx = nd.inputs[0]->ensure_grad();
      const auto& xv = nd.inputs[0]->value;
      for (std::size_t p = 0; p < hw; ++p) {
        const double d = nd.value[p];
        if (d <= 0.0) continue;  // subgradient 0 at the coincidence point
        const double g = nd.grad[p] / d;
        for (int c = 0; c < C; ++c) gx[c * hw + p] += g * xv[c * hw + p];
      }
    };
  return Tensor(out);
}

Tensor minmax_normalize(const Tensor& d, double eps) {
  require(d.ndim() == 2, "minmax_normalize: expected (H,W)");
  const auto& dv = d.values();
  std::size_t imin = 0, imax = 0;
  for (std::size_t i = 1; i < dv.size(); ++i) {
    if (dv[i] < dv[imin]) imin = i;
    if (dv[i] > dv[imax]) imax = i;
  }
  const double m = dv[imin], M = dv[imax];
  const double r = M - m + eps;
  auto out = out_node(d.shape(), {d.node()});
  for (std::size_t i = 0; i < dv.size(); ++i) out->value[i] = (dv[i] - m) / r;
  if (out->requires_grad)
    out->backward_fn = [imin, imax, m, r](Node& nd) {
      auto& gd = nd.inputs[0]->ensure_grad();
      const auto& dv = nd.inputs[0]->value;
      double smin = 0.0, smax = 0.0;
      for (std::size_t i = 0; i < nd.grad.size(); ++i) {
        const double g = nd.grad[i];
        gd[i] += g / r;
        smin += g * (-1.0 / r + (dv[i] - m) / (r * r));
        smax += g * (-(dv[i] - m) / (r * r));
      }
      gd[imin] += smin;
      gd[imax] += smax;
    };
  return Tensor(out);
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  require(logits.ndim() == 3, "cross_entropy_mean: expected (C,H,W) logits");
  const int C = logits.dim(0);
  const std::size_t P = static_cast<std::size_t>(logits.dim(1)) * logits.dim(2);
  require(labels.size() == P, "cross_entropy_mean: label count mismatch");
  for (int y : labels) require(y >= 0 && y < C, "cross_entropy_mean: label out of range");

  auto out = out_node({1}, {logits.node()});
  const auto& zv = logits.values();
  double total = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    double mx = zv[p];
    for (int c = 1; c < C; ++c) mx = std::max(mx, zv[c * P + p]);
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += std::exp(zv[c * P + p] - mx);
    const double lse = std::log(s) + mx;
    total += lse - zv[static_cast<std::size_t>(labels[p]) * P + p];
  }
  out->value[0] = total / static_cast<double>(P);
  if (out->requires_grad)
    out->backward_fn = [C, P, labels](Node& nd) {
      auto& gz = nd.inputs[0]->ensure_grad();
      const auto& zv = nd.inputs[0]->value;
      const double g = nd.grad[0] / static_cast<double>(P);
      for (std::size_t p = 0; p < P; ++p) {
        double mx = zv[p];
        for (int c = 1; c < C; ++c) mx = std::max(mx, zv[c * P + p]);
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(zv[c * P + p] - mx);
        for (int c = 0; c < C; ++c) {
          double soft = std::exp(zv[c * P + p] - mx) / s;
          gz[c * P + p] += g * (soft - (c == labels[p] ? 1.0 : 0.0));
        }
      }
    };
  return Tensor(out);
}

}  // namespace changeseg
