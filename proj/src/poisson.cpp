#include "changeseg/poisson.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace changeseg {

namespace {

constexpr int kDy[4] = {-1, 1, 0, 0};
constexpr int kDx[4] = {0, 0, -1, 1};

/// Conjugate gradient on (Ax)_p = 4 x_p - sum of x over in-region neighbors.
/// The system is symmetric positive definite, so plain CG suffices.
void solve_cg(const std::vector<std::int32_t>& idx, const std::vector<int>& ys,
              const std::vector<int>& xs, int w, const std::vector<double>& b,
              std::vector<double>& x) {
  const std::size_t n = b.size();
  auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 4.0 * v[i];
      for (int k = 0; k < 4; ++k) {
        std::int32_t j = idx[static_cast<std::size_t>((ys[i] + kDy[k])) * w + (xs[i] + kDx[k])];
        if (j >= 0) acc -= v[static_cast<std::size_t>(j)];
      }
      out[i] = acc;
    }
  };

  std::vector<double> r(n), p(n), ap(n);
  apply(x, ap);
  double bnorm2 = 0.0, rr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = b[i] - ap[i];
    p[i] = r[i];
    rr += r[i] * r[i];
    bnorm2 += b[i] * b[i];
  }
  const double tol2 = 1e-26 * (1.0 + bnorm2);
  const std::size_t max_iters = 40 * n + 1000;
  for (std::size_t it = 0; it < max_iters && rr > tol2; ++it) {
    apply(p, ap);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    if (pap <= 0.0) break;
    const double alpha = rr / pap;
    double rr_next = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      rr_next += r[i] * r[i];
    }
    const double beta = rr_next / rr;
    rr = rr_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
}

}  // namespace

Image poisson_blend(const Image& source, const Image& target, const LabelMask& region) {
  if (source.channels != target.channels || source.h != target.h || source.w != target.w ||
      region.h != target.h || region.w != target.w)
    throw std::invalid_argument("poisson_blend: shape mismatch");

  const int h = target.h, w = target.w;
  std::vector<std::int32_t> idx(static_cast<std::size_t>(h) * w, -1);
  std::vector<int> ys, xs;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (region.at(y, x)) {
        if (y == 0 || y == h - 1 || x == 0 || x == w - 1)
          throw std::invalid_argument("poisson_blend: region touches the image border");
        idx[static_cast<std::size_t>(y) * w + x] = static_cast<std::int32_t>(ys.size());
        ys.push_back(y);
        xs.push_back(x);
      }
  if (ys.empty()) return target;

  const std::size_t n = ys.size();
  Image out = target;
  std::vector<double> b(n), x(n);
  for (int c = 0; c < target.channels; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const double sp = source.at(c, ys[i], xs[i]);
      for (int k = 0; k < 4; ++k) {
        const int qy = ys[i] + kDy[k], qx = xs[i] + kDx[k];
        acc += sp - source.at(c, qy, qx);  // guidance: source gradient
        if (idx[static_cast<std::size_t>(qy) * w + qx] < 0) acc += target.at(c, qy, qx);
      }
      b[i] = acc;
      x[i] = target.at(c, ys[i], xs[i]);  // warm start from the boundary side
    }
    solve_cg(idx, ys, xs, w, b, x);
    for (std::size_t i = 0; i < n; ++i) out.at(c, ys[i], xs[i]) = x[i];
  }
  return out;
}

}  // namespace changeseg
