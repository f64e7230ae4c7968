#include "changeseg/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace changeseg {

using nlohmann::json;

std::string to_string(DecoderMode m) {
  return m == DecoderMode::intra_class ? "intra_class" : "out_of_class";
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::full: return "full";
    case Protocol::LL: return "LL";
    case Protocol::AA: return "AA";
    case Protocol::LA: return "LA";
    case Protocol::AL: return "AL";
    case Protocol::label_fraction: return "label_fraction";
  }
  return "full";
}

std::string to_string(ContrastiveKind c) {
  switch (c) {
    case ContrastiveKind::none: return "none";
    case ContrastiveKind::cl: return "cl";
    case ContrastiveKind::bcl: return "bcl";
  }
  return "bcl";
}

DecoderMode decoder_mode_from_string(const std::string& s) {
  if (s == "intra_class") return DecoderMode::intra_class;
  if (s == "out_of_class") return DecoderMode::out_of_class;
  throw std::invalid_argument("unknown decoder mode: " + s);
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "full") return Protocol::full;
  if (s == "LL") return Protocol::LL;
  if (s == "AA") return Protocol::AA;
  if (s == "LA") return Protocol::LA;
  if (s == "AL") return Protocol::AL;
  if (s == "label_fraction") return Protocol::label_fraction;
  throw std::invalid_argument("unknown protocol: " + s);
}

ContrastiveKind contrastive_from_string(const std::string& s) {
  if (s == "none") return ContrastiveKind::none;
  if (s == "cl") return ContrastiveKind::cl;
  if (s == "bcl") return ContrastiveKind::bcl;
  throw std::invalid_argument("unknown contrastive kind: " + s);
}

int ModelConfig::mlp_hidden(int stage) const {
  return static_cast<int>(std::llround(mlp_ratio * stage_channels[static_cast<std::size_t>(stage)]));
}

// ---------------- validation ----------------

std::vector<std::string> validate(const FullConfig& cfg) {
  std::vector<std::string> v;
  const auto& m = cfg.model;
  const auto& l = cfg.loss;
  const auto& t = cfg.train;

  for (int s = 0; s < kNumStages; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    if (m.stage_channels[idx] <= 0)
      v.push_back("model.stage_channels[" + std::to_string(s) + "] must be positive");
    if (m.stage_depths[idx] <= 0)
      v.push_back("model.stage_depths[" + std::to_string(s) + "] must be positive");
    if (m.stage_heads[idx] <= 0)
      v.push_back("model.stage_heads[" + std::to_string(s) + "] must be positive");
    if (m.reduction_ratios[idx] <= 0)
      v.push_back("model.reduction_ratios[" + std::to_string(s) + "] must be positive");
    if (m.stage_heads[idx] > 0 && m.stage_channels[idx] % m.stage_heads[idx] != 0)
      v.push_back("model.stage_channels[" + std::to_string(s) + "] not divisible by heads");
  }
  if (m.mlp_ratio <= 0.0) v.push_back("model.mlp_ratio must be positive");
  if (m.num_classes < 2) v.push_back("model.num_classes must be >= 2");
  if (m.decoder_channels <= 0) v.push_back("model.decoder_channels must be positive");

  if (!(l.tau_ok >= 0.0)) v.push_back("loss.tau_ok must be >= 0");
  if (!(l.tau_ng > l.tau_ok)) v.push_back("loss.tau_ng must be > loss.tau_ok");
  if (l.lambda1 < 0.0) v.push_back("loss.lambda1 must be >= 0");
  if (l.lambda2 < 0.0) v.push_back("loss.lambda2 must be >= 0");

  if (t.input_size[0] <= 0 || t.input_size[1] <= 0) {
    v.push_back("train.input_size must be positive");
  } else {
    if (t.input_size[0] % 32 != 0 || t.input_size[1] % 32 != 0)
      v.push_back("train.input_size must be divisible by 32");
    for (int s = 0; s < kNumStages; ++s) {
      const auto idx = static_cast<std::size_t>(s);
      const int stride = kStageStrides[idx];
      if (t.input_size[0] % stride == 0 && t.input_size[1] % stride == 0) {
        const std::int64_t tokens = static_cast<std::int64_t>(t.input_size[0] / stride) *
                                    (t.input_size[1] / stride);
        if (m.reduction_ratios[idx] > 0 && tokens % m.reduction_ratios[idx] != 0)
          v.push_back("model.reduction_ratios[" + std::to_string(s) +
                      "] does not divide the stage token count");
      }
    }
  }
  if (t.iterations <= 0) v.push_back("train.iterations must be positive");
  if (t.batch_size <= 0) v.push_back("train.batch_size must be positive");
  if (!(t.label_fraction > 0.0 && t.label_fraction <= 1.0))
    v.push_back("train.label_fraction must be in (0,1]");
  if (!(t.learning_rate > 0.0)) v.push_back("train.learning_rate must be positive");
  if (t.warmup_steps < 0) v.push_back("train.warmup_steps must be >= 0");
  if (t.poly_power < 0.0) v.push_back("train.poly_power must be >= 0");
  if (t.weight_decay < 0.0) v.push_back("train.weight_decay must be >= 0");
  for (double sd : t.norm_std)
    if (!(sd > 0.0)) {
      v.push_back("train.norm_std entries must be positive");
      break;
    }
  if ((t.protocol == Protocol::LA || t.protocol == Protocol::AL) &&
      m.mode != DecoderMode::out_of_class)
    v.push_back("protocol LA/AL requires model.mode = out_of_class");
  if (t.protocol == Protocol::label_fraction && t.label_fraction >= 1.0)
    v.push_back("protocol label_fraction requires train.label_fraction < 1");
  return v;
}

// ---------------- JSON I/O ----------------

namespace {

template <std::size_t N, typename T>
json arr_to_json(const std::array<T, N>& a) {
  json j = json::array();
  for (const auto& x : a) j.push_back(x);
  return j;
}

template <std::size_t N, typename T>
void arr_from_json(const json& j, const char* key, std::array<T, N>& out) {
  if (!j.is_array() || j.size() != N)
    throw std::invalid_argument(std::string("config key '") + key + "' must be an array of " +
                                std::to_string(N));
  for (std::size_t i = 0; i < N; ++i) out[i] = j[i].get<T>();
}

void check_keys(const json& j, const std::string& section,
                const std::vector<std::string>& known) {
  if (!j.is_object()) throw std::invalid_argument("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok)
      throw std::invalid_argument("unknown config key '" + section + "." + it.key() + "'");
  }
}

json model_to_json(const ModelConfig& m) {
  return json{{"stage_channels", arr_to_json(m.stage_channels)},
              {"stage_depths", arr_to_json(m.stage_depths)},
              {"stage_heads", arr_to_json(m.stage_heads)},
              {"reduction_ratios", arr_to_json(m.reduction_ratios)},
              {"mlp_ratio", m.mlp_ratio},
              {"num_classes", m.num_classes},
              {"decoder_channels", m.decoder_channels},
              {"mode", to_string(m.mode)},
              {"use_change_attention", m.use_change_attention}};
}

json loss_to_json(const LossConfig& l) {
  return json{{"tau_ok", l.tau_ok},
              {"tau_ng", l.tau_ng},
              {"lambda1", l.lambda1},
              {"lambda2", l.lambda2},
              {"clamp_unchanged_at_zero", l.clamp_unchanged_at_zero},
              {"contrastive", to_string(l.contrastive)}};
}

json train_to_json(const TrainConfig& t) {
  return json{{"input_size", arr_to_json(t.input_size)},
              {"iterations", t.iterations},
              {"batch_size", t.batch_size},
              {"label_fraction", t.label_fraction},
              {"protocol", to_string(t.protocol)},
              {"seed", t.seed},
              {"learning_rate", t.learning_rate},
              {"warmup_steps", t.warmup_steps},
              {"poly_power", t.poly_power},
              {"weight_decay", t.weight_decay},
              {"augment", t.augment},
              {"norm_mean", arr_to_json(t.norm_mean)},
              {"norm_std", arr_to_json(t.norm_std)}};
}

json config_to_json(const FullConfig& cfg) {
  return json{{"model", model_to_json(cfg.model)},
              {"loss", loss_to_json(cfg.loss)},
              {"train", train_to_json(cfg.train)}};
}

ModelConfig model_from_json(const json& j) {
  check_keys(j, "model",
             {"stage_channels", "stage_depths", "stage_heads", "reduction_ratios", "mlp_ratio",
              "num_classes", "decoder_channels", "mode", "use_change_attention"});
  ModelConfig m;
  if (j.contains("stage_channels")) arr_from_json(j["stage_channels"], "model.stage_channels", m.stage_channels);
  if (j.contains("stage_depths")) arr_from_json(j["stage_depths"], "model.stage_depths", m.stage_depths);
  if (j.contains("stage_heads")) arr_from_json(j["stage_heads"], "model.stage_heads", m.stage_heads);
  if (j.contains("reduction_ratios")) arr_from_json(j["reduction_ratios"], "model.reduction_ratios", m.reduction_ratios);
  if (j.contains("mlp_ratio")) m.mlp_ratio = j["mlp_ratio"].get<double>();
  if (j.contains("num_classes")) m.num_classes = j["num_classes"].get<int>();
  if (j.contains("decoder_channels")) m.decoder_channels = j["decoder_channels"].get<int>();
  if (j.contains("mode")) m.mode = decoder_mode_from_string(j["mode"].get<std::string>());
  if (j.contains("use_change_attention")) m.use_change_attention = j["use_change_attention"].get<bool>();
  return m;
}

LossConfig loss_from_json(const json& j) {
  check_keys(j, "loss",
             {"tau_ok", "tau_ng", "lambda1", "lambda2", "clamp_unchanged_at_zero", "contrastive"});
  LossConfig l;
  if (j.contains("tau_ok")) l.tau_ok = j["tau_ok"].get<double>();
  if (j.contains("tau_ng")) l.tau_ng = j["tau_ng"].get<double>();
  if (j.contains("lambda1")) l.lambda1 = j["lambda1"].get<double>();
  if (j.contains("lambda2")) l.lambda2 = j["lambda2"].get<double>();
  if (j.contains("clamp_unchanged_at_zero"))
    l.clamp_unchanged_at_zero = j["clamp_unchanged_at_zero"].get<bool>();
  if (j.contains("contrastive"))
    l.contrastive = contrastive_from_string(j["contrastive"].get<std::string>());
  return l;
}

TrainConfig train_from_json(const json& j) {
  check_keys(j, "train",
             {"input_size", "iterations", "batch_size", "label_fraction", "protocol", "seed",
              "learning_rate", "warmup_steps", "poly_power", "weight_decay", "augment",
              "norm_mean", "norm_std"});
  TrainConfig t;
  if (j.contains("input_size")) arr_from_json(j["input_size"], "train.input_size", t.input_size);
  if (j.contains("iterations")) t.iterations = j["iterations"].get<std::int64_t>();
  if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
  if (j.contains("label_fraction")) t.label_fraction = j["label_fraction"].get<double>();
  if (j.contains("protocol")) t.protocol = protocol_from_string(j["protocol"].get<std::string>());
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("learning_rate")) t.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("warmup_steps")) t.warmup_steps = j["warmup_steps"].get<std::int64_t>();
  if (j.contains("poly_power")) t.poly_power = j["poly_power"].get<double>();
  if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("augment")) t.augment = j["augment"].get<bool>();
  if (j.contains("norm_mean")) arr_from_json(j["norm_mean"], "train.norm_mean", t.norm_mean);
  if (j.contains("norm_std")) arr_from_json(j["norm_std"], "train.norm_std", t.norm_std);
  return t;
}

FullConfig config_from_json(const json& j) {
  check_keys(j, "config", {"model", "loss", "train"});
  FullConfig cfg;
  if (j.contains("model")) cfg.model = model_from_json(j["model"]);
  if (j.contains("loss")) cfg.loss = loss_from_json(j["loss"]);
  if (j.contains("train")) cfg.train = train_from_json(j["train"]);
  return cfg;
}

}  // namespace

std::string to_text(const FullConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

FullConfig from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

FullConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void save_config_file(const FullConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::invalid_argument("cannot write config file: " + path);
  out << to_text(cfg);
}

FullConfig apply_override(const FullConfig& cfg, const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("override must be key=value: " + key_eq_value);
  const std::string path = key_eq_value.substr(0, eq);
  const std::string raw = key_eq_value.substr(eq + 1);

  json j = config_to_json(cfg);
  json* cursor = &j;
  std::size_t pos = 0;
  std::vector<std::string> parts;
  while (pos != std::string::npos) {
    auto dot = path.find('.', pos);
    parts.push_back(path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos));
    pos = dot == std::string::npos ? std::string::npos : dot + 1;
  }
  if (parts.empty()) throw std::invalid_argument("empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cursor->contains(parts[i]))
      throw std::invalid_argument("unknown config key '" + path + "'");
    cursor = &(*cursor)[parts[i]];
  }
  if (!cursor->contains(parts.back()))
    throw std::invalid_argument("unknown config key '" + path + "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // bare strings like intra_class
  }
  (*cursor)[parts.back()] = value;
  return config_from_json(j);
}

std::string describe_config_keys() {
  return
      "model.stage_channels      int[4]   per-stage token width\n"
      "model.stage_depths        int[4]   attention blocks per stage\n"
      "model.stage_heads         int[4]   attention heads per stage\n"
      "model.reduction_ratios    int[4]   key/value sequence reduction per stage\n"
      "model.mlp_ratio           real     MLP hidden width multiplier\n"
      "model.num_classes         int      label classes incl. background (>= 2)\n"
      "model.decoder_channels    int      fused-difference width\n"
      "model.mode                string   intra_class | out_of_class\n"
      "model.use_change_attention bool    gate the decoder with 3-D attention\n"
      "loss.tau_ok               real     unchanged-pixel distance target\n"
      "loss.tau_ng               real     changed-pixel distance margin (> tau_ok)\n"
      "loss.lambda1              real     cross-entropy weight\n"
      "loss.lambda2              real     contrastive weight\n"
      "loss.clamp_unchanged_at_zero bool  hinge the unchanged branch at zero\n"
      "loss.contrastive          string   none | cl | bcl\n"
      "train.input_size          int[2]   h,w; divisible by 32\n"
      "train.iterations          int      optimizer steps\n"
      "train.batch_size          int      pairs per step\n"
      "train.label_fraction      real     (0,1]; labeled share for label_fraction protocol\n"
      "train.protocol            string   full | LL | AA | LA | AL | label_fraction\n"
      "train.seed                int      global RNG seed\n"
      "train.learning_rate       real     base AdamW learning rate\n"
      "train.warmup_steps        int      linear warmup length\n"
      "train.poly_power          real     polynomial decay exponent\n"
      "train.weight_decay        real     decoupled weight decay\n"
      "train.augment             bool     scale-jitter crop + mirror during training\n"
      "train.norm_mean           real[3]  per-channel input mean\n"
      "train.norm_std            real[3]  per-channel input std\n";
}

// ---------------- analytic accounting ----------------

namespace {

std::int64_t block_param_count(int c, int hidden, int R) {
  std::int64_t p = 0;
  p += 2 * c;                                      // ln1
  p += 4 * (static_cast<std::int64_t>(c) * c + c); // q,k,v,o
  if (R > 1) p += static_cast<std::int64_t>(c) * R * c + c;  // sequence reduction
  p += 2 * c;                                      // ln2
  p += static_cast<std::int64_t>(c) * hidden + hidden;       // fc1
  p += 9LL * hidden + hidden;                      // depthwise 3x3
  p += static_cast<std::int64_t>(hidden) * c + c;  // fc2
  return p;
}

int decoder_mid(int d) { return std::max(8, d / 8); }

}  // namespace

std::int64_t analytic_parameter_count(const ModelConfig& cfg) {
  std::int64_t p = 0;
  int cin = 3;
  for (int s = 0; s < kNumStages; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const int c = cfg.stage_channels[idx];
    const int k = s == 0 ? 7 : 3;
    p += static_cast<std::int64_t>(k) * k * cin * c + c;  // embed conv
    p += 2 * c;                                           // embed norm
    for (int b = 0; b < cfg.stage_depths[idx]; ++b)
      p += block_param_count(c, cfg.mlp_hidden(s), cfg.reduction_ratios[idx]);
    p += 2 * c;  // stage-out norm
    cin = c;
  }
  const int d = cfg.decoder_channels;
  for (int s = 0; s < kNumStages; ++s)
    p += static_cast<std::int64_t>(cfg.stage_channels[static_cast<std::size_t>(s)]) * d + d;
  if (cfg.use_change_attention) p += analytic_decoder_attention_parameter_count(cfg);
  p += static_cast<std::int64_t>(d) * cfg.num_classes + cfg.num_classes;  // head
  return p;
}

std::int64_t analytic_decoder_attention_parameter_count(const ModelConfig& cfg) {
  const int d = cfg.decoder_channels;
  const int mid = decoder_mid(d);
  const std::int64_t bottleneck =
      static_cast<std::int64_t>(d) * mid + mid + static_cast<std::int64_t>(mid) * d + d;
  return 3 * bottleneck;  // CA + HA + VA
}

FlopEstimate estimate_flops(const ModelConfig& cfg, int in_h, int in_w) {
  FlopEstimate f;
  const std::int64_t h1 = in_h / kStageStrides[0], w1 = in_w / kStageStrides[0];
  const std::int64_t n1 = h1 * w1;

  // Two weight-shared encoder branches.
  int cin = 3;
  std::int64_t sum_c = 0;
  for (int s = 0; s < kNumStages; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const int c = cfg.stage_channels[idx];
    const int R = cfg.reduction_ratios[idx];
    const int hidden = cfg.mlp_hidden(s);
    const std::int64_t n =
        static_cast<std::int64_t>(in_h / kStageStrides[idx]) * (in_w / kStageStrides[idx]);
    const std::int64_t nr = n / R;
    const int k = s == 0 ? 7 : 3;
    std::int64_t branch = 0;
    branch += matmul_flops(n, static_cast<std::int64_t>(k) * k * cin, c);  // embed conv
    std::int64_t attn = 0;
    for (int b = 0; b < cfg.stage_depths[idx]; ++b) {
      branch += matmul_flops(n, c, c);                 // q
      if (R > 1) branch += matmul_flops(nr, static_cast<std::int64_t>(c) * R, c);  // reduce
      branch += 2 * matmul_flops(nr, c, c);            // k, v
      branch += matmul_flops(n, c, c);                 // o
      attn += 2 * matmul_flops(n, nr, c);              // scores + apply
      branch += matmul_flops(n, c, hidden);            // fc1
      branch += matmul_flops(n, 9, hidden);            // depthwise
      branch += matmul_flops(n, hidden, c);            // fc2
    }
    f.conv_linear += 2 * branch;
    f.attention += 2 * attn;
    sum_c += c;
    cin = c;
  }

  // align_concat upsamples (both branches) + DistMap.
  for (int s = 1; s < kNumStages; ++s)
    f.resample += 2 * 8 * static_cast<std::int64_t>(cfg.stage_channels[static_cast<std::size_t>(s)]) * n1;
  f.resample += 3 * sum_c * n1;  // subtract, square, accumulate

  // fuse_differences: per-stage subtract + projection + upsample + sum.
  const int d = cfg.decoder_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const std::int64_t n =
        static_cast<std::int64_t>(in_h / kStageStrides[idx]) * (in_w / kStageStrides[idx]);
    f.resample += static_cast<std::int64_t>(cfg.stage_channels[idx]) * n;
    f.conv_linear += matmul_flops(n, cfg.stage_channels[idx], d);
    if (s > 0) f.resample += 8LL * d * n1;
  }
  f.resample += 3LL * d * n1;

  if (cfg.use_change_attention) {
    const FlopEstimate da = estimate_decoder_attention_flops(cfg, in_h, in_w);
    f.conv_linear += da.conv_linear;
    f.resample += da.resample;
  }
  f.conv_linear += matmul_flops(n1, d, cfg.num_classes);         // head
  f.resample += 8LL * cfg.num_classes * in_h * in_w;             // logits upsample
  return f;
}

FlopEstimate estimate_decoder_attention_flops(const ModelConfig& cfg, int in_h, int in_w) {
  FlopEstimate f;
  const std::int64_t h1 = in_h / kStageStrides[0], w1 = in_w / kStageStrides[0];
  const std::int64_t n1 = h1 * w1;
  const int d = cfg.decoder_channels;
  const int mid = decoder_mid(d);
  const bool intra = cfg.mode == DecoderMode::intra_class;

  if (intra) {
    f.resample += static_cast<std::int64_t>(d) * n1;  // + DistMap broadcast
    // CA / HA / VA pools and bottlenecks.
    f.resample += 3LL * d * n1;
    f.conv_linear += matmul_flops(1, d, mid) + matmul_flops(1, mid, d);        // CA
    f.conv_linear += matmul_flops(w1, d, mid) + matmul_flops(w1, mid, d);      // HA
    f.conv_linear += matmul_flops(h1, d, mid) + matmul_flops(h1, mid, d);      // VA
    f.resample += 3LL * d * n1;  // three gates
  } else {
    f.resample += static_cast<std::int64_t>(d) * n1;                           // CA pool
    f.conv_linear += matmul_flops(1, d, mid) + matmul_flops(1, mid, d);        // CA
    f.resample += 2LL * d * n1;  // CA gate + normalized-DistMap gate
    f.resample += 2LL * n1;      // min-max normalization
  }
  return f;
}

}  // namespace changeseg
