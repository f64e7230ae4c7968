#include "changeseg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace changeseg {

namespace {
std::vector<double> trunc_normal_values(std::int64_t n, Rng& rng, double sigma = 0.02) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.trunc_normal(sigma);
  return v;
}
}  // namespace

LinearLayer::LinearLayer(int cin, int cout, Rng& rng) {
  w = Tensor::param({cin, cout}, trunc_normal_values(static_cast<std::int64_t>(cin) * cout, rng));
  b = Tensor::param({cout}, std::vector<double>(static_cast<std::size_t>(cout), 0.0));
}

void LinearLayer::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

Conv2dLayer::Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
  w = Tensor::param({cout, cin, k, k},
                    trunc_normal_values(static_cast<std::int64_t>(cout) * cin * k * k, rng));
  b = Tensor::param({cout}, std::vector<double>(static_cast<std::size_t>(cout), 0.0));
}

void Conv2dLayer::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

DwConv3x3Layer::DwConv3x3Layer(int c, Rng& rng) {
  w = Tensor::param({c, 3, 3}, trunc_normal_values(static_cast<std::int64_t>(c) * 9, rng));
  b = Tensor::param({c}, std::vector<double>(static_cast<std::size_t>(c), 0.0));
}

void DwConv3x3Layer::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".w", w);
  out.emplace_back(prefix + ".b", b);
}

LayerNormLayer::LayerNormLayer(int c) {
  gamma = Tensor::param({c}, std::vector<double>(static_cast<std::size_t>(c), 1.0));
  beta = Tensor::param({c}, std::vector<double>(static_cast<std::size_t>(c), 0.0));
}

void LayerNormLayer::collect(NamedParams& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

void AdamW::init(const NamedParams& params) {
  m.clear();
  v.clear();
  for (const auto& [name, t] : params) {
    m.emplace_back(t.values().size(), 0.0);
    v.emplace_back(t.values().size(), 0.0);
  }
  step_count = 0;
}

void AdamW::step(const NamedParams& params, double lr) {
  if (m.size() != params.size()) throw std::logic_error("AdamW: init() not called");
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].second;
    auto& val = t.mutable_values();
    const auto& g = t.grad();
    auto& mi = m[i];
    auto& vi = v[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      val[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * val[j]);
    }
  }
}

double poly_warmup_lr(double base_lr, std::int64_t step, std::int64_t warmup_steps,
                      std::int64_t total_steps, double power) {
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return base_lr;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return base_lr * std::pow(1.0 - std::min(1.0, t), power);
}

void zero_grads(const NamedParams& params) {
  for (const auto& [name, t] : params) Tensor(t).zero_grad();
}

}  // namespace changeseg
