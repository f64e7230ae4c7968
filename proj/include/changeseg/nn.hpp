#pragma once

#include <string>
#include <utility>
#include <vector>

#include "changeseg/ops.hpp"
#include "changeseg/rng.hpp"
#include "changeseg/tensor.hpp"

namespace changeseg {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Layers hold parameter leaves; weights are truncated-normal (sigma 0.02),
/// biases zero. collect() order is construction order and defines the
/// checkpoint layout.

struct LinearLayer {
  Tensor w, b;  // w: (Cin,Cout)
  LinearLayer() = default;
  LinearLayer(int cin, int cout, Rng& rng);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct Conv2dLayer {
  Tensor w, b;  // w: (Cout,Cin,k,k)
  int stride = 1, pad = 0;
  Conv2dLayer() = default;
  Conv2dLayer(int cin, int cout, int k, int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct DwConv3x3Layer {
  Tensor w, b;  // w: (C,3,3)
  DwConv3x3Layer() = default;
  DwConv3x3Layer(int c, Rng& rng);
  Tensor forward(const Tensor& x) const { return dwconv3x3(x, w, b); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

struct LayerNormLayer {
  Tensor gamma, beta;
  LayerNormLayer() = default;
  explicit LayerNormLayer(int c);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(NamedParams& out, const std::string& prefix) const;
};

/// Decoupled weight-decay Adam over a flat parameter list.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  void init(const NamedParams& params);
  void step(const NamedParams& params, double lr);
};

/// Base lr with linear warmup then polynomial decay to zero at total_steps.
double poly_warmup_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps,
                      std::int64_t total_steps, double power);

void zero_grads(const NamedParams& params);

}  // namespace changeseg
