#pragma once

#include <vector>

#include "changeseg/tensor.hpp"

namespace changeseg {

/// Graph recording toggle. With recording off, ops produce detached nodes and
/// intermediates free as soon as handles drop (forward-only evaluation).
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- broadcasts over a (C,H,W) map ----
Tensor add_spatial(const Tensor& x, const Tensor& m);   // m: (H,W)
Tensor mul_spatial(const Tensor& x, const Tensor& m);   // m: (H,W)
Tensor mul_channel(const Tensor& x, const Tensor& c);   // c: (C)
Tensor mul_cw(const Tensor& x, const Tensor& a);        // a: (C,W), broadcast over H
Tensor mul_ch(const Tensor& x, const Tensor& a);        // a: (C,H), broadcast over W

// ---- linear algebra on 2-D tensors ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x:(N,Ci) w:(Ci,Co) b:(Co)
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor softmax_rows(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, const std::vector<int>& shape);
Tensor concat_channels(const std::vector<Tensor>& maps);  // (Ci,H,W) -> (sum Ci,H,W)

// ---- conv / spatial ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor dwconv3x3(const Tensor& x, const Tensor& w, const Tensor& b);  // stride 1, pad 1
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);
Tensor avg_pool_rows(const Tensor& x);   // (C,H,W) -> (C,W), mean over the vertical axis
Tensor avg_pool_cols(const Tensor& x);   // (C,H,W) -> (C,H), mean over the horizontal axis
Tensor global_avg_pool(const Tensor& x); // (C,H,W) -> (C)

// ---- normalization / reductions ----
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// ---- task-specific ----
Tensor channel_l2(const Tensor& x);                        // (C,H,W) -> (H,W)
Tensor minmax_normalize(const Tensor& d, double eps);      // (H,W) -> (H,W)
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels);  // (C,H,W)

/// Shared bilinear kernel (align_corners=false); also used by image utilities
/// so the autodiff op and raw resizes agree bit for bit.
void resize_bilinear_raw(const double* src, int channels, int in_h, int in_w,
                         double* dst, int out_h, int out_w);

}  // namespace changeseg
