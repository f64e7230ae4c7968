#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace changeseg {

enum class DecoderMode { intra_class, out_of_class };
enum class Protocol { full, LL, AA, LA, AL, label_fraction };
enum class ContrastiveKind { none, cl, bcl };  // cl = unbalanced, bcl = class-balanced

std::string to_string(DecoderMode m);
std::string to_string(Protocol p);
std::string to_string(ContrastiveKind c);
DecoderMode decoder_mode_from_string(const std::string& s);
Protocol protocol_from_string(const std::string& s);
ContrastiveKind contrastive_from_string(const std::string& s);

constexpr int kNumStages = 4;
constexpr std::array<int, kNumStages> kStageStrides{4, 8, 16, 32};

/// Widths are deliberately bottom-heavy: token count at stride 4 dominates the
/// attention cost (which scales as N^2/R), so capacity lives where N is small.
struct ModelConfig {
  std::array<int, kNumStages> stage_channels{4, 16, 64, 376};
  std::array<int, kNumStages> stage_depths{2, 2, 2, 2};
  std::array<int, kNumStages> stage_heads{1, 2, 4, 8};
  std::array<int, kNumStages> reduction_ratios{8, 4, 2, 1};
  double mlp_ratio = 4.0;
  int num_classes = 3;
  int decoder_channels = 256;
  DecoderMode mode = DecoderMode::intra_class;
  bool use_change_attention = true;

  int mlp_hidden(int stage) const;
};

struct LossConfig {
  double tau_ok = 0.3;
  double tau_ng = 2.2;
  double lambda1 = 1.0;  // cross-entropy weight
  double lambda2 = 1.0;  // balanced contrastive weight
  bool clamp_unchanged_at_zero = true;
  ContrastiveKind contrastive = ContrastiveKind::bcl;
};

struct TrainConfig {
  std::array<int, 2> input_size{512, 512};  // h, w
  std::int64_t iterations = 126000;
  int batch_size = 4;
  double label_fraction = 1.0;
  Protocol protocol = Protocol::full;
  std::uint64_t seed = 1;
  double learning_rate = 6e-5;
  std::int64_t warmup_steps = 1500;
  double poly_power = 1.0;
  double weight_decay = 0.01;
  bool augment = true;  // scale-jitter crop + mirror; off for overfit smokes
  std::array<double, 3> norm_mean{0.485, 0.456, 0.406};
  std::array<double, 3> norm_std{0.229, 0.224, 0.225};
};

struct FullConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
};

/// Returns every violated invariant (empty means valid).
std::vector<std::string> validate(const FullConfig& cfg);

/// JSON-backed text format. Unknown keys anywhere are a hard error; parse and
/// serialize round-trip losslessly.
std::string to_text(const FullConfig& cfg);
FullConfig from_text(const std::string& text);
FullConfig load_config_file(const std::string& path);
void save_config_file(const FullConfig& cfg, const std::string& path);

/// Apply a dotted-path override, e.g. "model.num_classes=4", "train.seed=7".
/// The value is parsed as a JSON literal when possible, else as a string.
FullConfig apply_override(const FullConfig& cfg, const std::string& key_eq_value);

/// One line per documented key (CLI --help-config).
std::string describe_config_keys();

// ---- analytic accounting ----

inline std::int64_t matmul_flops(std::int64_t m, std::int64_t k, std::int64_t n) {
  return 2 * m * k * n;  // one multiply-accumulate = 2 FLOPs
}

struct FlopEstimate {
  std::int64_t attention = 0;    // the N*(N/R) score/apply matmuls
  std::int64_t conv_linear = 0;  // all other GEMM-like work
  std::int64_t resample = 0;     // bilinear resampling, pooling, gating
  std::int64_t total() const { return attention + conv_linear + resample; }
};

/// Exact scalar-parameter count of the model a config describes; must equal
/// count_parameters() of the instantiated model (tested).
std::int64_t analytic_parameter_count(const ModelConfig& cfg);
std::int64_t analytic_decoder_attention_parameter_count(const ModelConfig& cfg);

/// Analytic FLOPs of one full Siamese forward pass (both encoder branches,
/// fusion, DistMap, decoder, output upsample). MACs count 2 FLOPs;
/// normalization, softmax and activations are ignored.
FlopEstimate estimate_flops(const ModelConfig& cfg, int in_h, int in_w);
FlopEstimate estimate_decoder_attention_flops(const ModelConfig& cfg, int in_h, int in_w);

}  // namespace changeseg
