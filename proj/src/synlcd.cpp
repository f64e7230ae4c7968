#include "changeseg/synlcd.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "changeseg/imageio.hpp"
#include "changeseg/poisson.hpp"

namespace changeseg {

using nlohmann::json;

std::string to_string(DefectType t) {
  switch (t) {
    case DefectType::line: return "line";
    case DefectType::abpt: return "abpt";
    case DefectType::mixed: return "mixed";
  }
  return "?";
}

DefectType defect_type_from_string(const std::string& s) {
  if (s == "line") return DefectType::line;
  if (s == "abpt") return DefectType::abpt;
  if (s == "mixed") return DefectType::mixed;
  throw std::invalid_argument("unknown defect type: " + s);
}

std::string to_string(DefectColor c) {
  switch (c) {
    case DefectColor::black: return "black";
    case DefectColor::white: return "white";
    case DefectColor::red: return "red";
    case DefectColor::green: return "green";
    case DefectColor::blue: return "blue";
  }
  return "?";
}

DefectColor defect_color_from_string(const std::string& s) {
  if (s == "black") return DefectColor::black;
  if (s == "white") return DefectColor::white;
  if (s == "red") return DefectColor::red;
  if (s == "green") return DefectColor::green;
  if (s == "blue") return DefectColor::blue;
  throw std::invalid_argument("unknown defect color: " + s);
}

std::array<double, 3> color_rgb(DefectColor c) {
  switch (c) {
    case DefectColor::black: return {0, 0, 0};
    case DefectColor::white: return {255, 255, 255};
    case DefectColor::red: return {255, 0, 0};
    case DefectColor::green: return {0, 255, 0};
    case DefectColor::blue: return {0, 0, 255};
  }
  return {0, 0, 0};
}

namespace {

// Independent sub-streams per sample; a spec loaded from the manifest
// replays geometry and noise without re-drawing the recorded attributes.
enum Stream : std::uint64_t {
  kStreamAttrs = 1,
  kStreamLineGeom = 2,
  kStreamAbptGeom = 3,
  kStreamNgPert = 4,
  kStreamOkPert = 5,
};

DefectAttr sample_attr(Rng& rng) {
  DefectAttr a;
  a.color = static_cast<DefectColor>(rng.uniform_int(0, 4));
  a.opacity = 0.1 * rng.uniform_int(1, 10);
  a.width = 3 * rng.uniform_int(1, 11);
  return a;
}

Perturbation sample_pert(Rng& rng) {
  Perturbation p;
  p.brightness_bias = rng.uniform_int(1, 6);
  p.contrast_alpha = 0.1 * rng.uniform_int(5, 15);
  p.iso_noise = 0.1 * rng.uniform_int(1, 10);
  p.rgb_deviation = 3 * rng.uniform_int(1, 11);
  return p;
}

bool on_tenth_grid(double v, double lo, double hi) {
  double steps = v * 10.0;
  return v >= lo - 1e-9 && v <= hi + 1e-9 && std::abs(steps - std::llround(steps)) < 1e-6;
}

void validate_pert_for_apply(const Perturbation& p) {
  if (p.brightness_bias < 0 || p.brightness_bias > 6)
    throw std::invalid_argument("perturbation: brightness bias out of range");
  if (p.contrast_alpha < 0.5 - 1e-9 || p.contrast_alpha > 1.5 + 1e-9)
    throw std::invalid_argument("perturbation: contrast alpha out of range");
  if (p.iso_noise < 0.0 || p.iso_noise > 1.0 + 1e-9)
    throw std::invalid_argument("perturbation: iso noise out of range");
  if (p.rgb_deviation < 0 || p.rgb_deviation > 33)
    throw std::invalid_argument("perturbation: rgb deviation out of range");
}

void stamp(DefectLayer& layer, int y, int x, const std::array<double, 3>& rgb, double opacity,
           int class_id) {
  for (int c = 0; c < 3; ++c) layer.rgb.at(c, y, x) = rgb[c];
  layer.alpha[static_cast<std::size_t>(y) * layer.rgb.w + x] = opacity;
  layer.mask.at(y, x) = static_cast<std::uint8_t>(class_id);
}

DefectLayer empty_layer(const Image& clean) {
  DefectLayer layer;
  layer.rgb = Image::zeros(3, clean.h, clean.w);
  layer.alpha.assign(static_cast<std::size_t>(clean.h) * clean.w, 0.0);
  layer.mask = LabelMask::zeros(clean.h, clean.w);
  return layer;
}

}  // namespace

SynthesisSpec sample_spec(std::uint64_t seed, DefectType type) {
  Rng rng(derive_seed(seed, kStreamAttrs));
  SynthesisSpec s;
  s.seed = seed;
  s.type = type;
  if (type == DefectType::line || type == DefectType::mixed) {
    s.line_areas = rng.uniform_int(1, 4);
    for (int i = 0; i < s.line_areas; ++i) s.line_attrs.push_back(sample_attr(rng));
  }
  if (type == DefectType::abpt || type == DefectType::mixed) {
    s.abpt_clusters = rng.uniform_int(2, 6);
    for (int i = 0; i < s.abpt_clusters; ++i) s.abpt_attrs.push_back(sample_attr(rng));
  }
  s.ng_pert = sample_pert(rng);
  s.ok_pert = sample_pert(rng);
  return s;
}

bool spec_in_ranges(const SynthesisSpec& spec) {
  auto attr_ok = [](const DefectAttr& a) {
    return on_tenth_grid(a.opacity, 0.1, 1.0) && a.width >= 3 && a.width <= 33 &&
           a.width % 3 == 0;
  };
  auto pert_ok = [](const Perturbation& p) {
    return p.brightness_bias >= 1 && p.brightness_bias <= 6 &&
           on_tenth_grid(p.contrast_alpha, 0.5, 1.5) && on_tenth_grid(p.iso_noise, 0.1, 1.0) &&
           p.rgb_deviation >= 3 && p.rgb_deviation <= 33 && p.rgb_deviation % 3 == 0;
  };
  if (spec.line_areas < 0 || spec.abpt_clusters < 0) return false;
  if (spec.line_attrs.size() != static_cast<std::size_t>(spec.line_areas)) return false;
  if (spec.abpt_clusters > 0 &&
      spec.abpt_attrs.size() != static_cast<std::size_t>(spec.abpt_clusters))
    return false;
  for (const auto& a : spec.line_attrs)
    if (!attr_ok(a)) return false;
  for (const auto& a : spec.abpt_attrs)
    if (!attr_ok(a)) return false;
  return pert_ok(spec.ng_pert) && pert_ok(spec.ok_pert);
}

namespace {

json attr_to_json(const DefectAttr& a) {
  return json{{"color", to_string(a.color)}, {"opacity", a.opacity}, {"width", a.width}};
}

DefectAttr attr_from_json(const json& j) {
  DefectAttr a;
  a.color = defect_color_from_string(j.at("color").get<std::string>());
  a.opacity = j.at("opacity").get<double>();
  a.width = j.at("width").get<int>();
  return a;
}

json pert_to_json(const Perturbation& p) {
  return json{{"brightness_bias", p.brightness_bias},
              {"contrast_alpha", p.contrast_alpha},
              {"iso_noise", p.iso_noise},
              {"rgb_deviation", p.rgb_deviation}};
}

Perturbation pert_from_json(const json& j) {
  Perturbation p;
  p.brightness_bias = j.at("brightness_bias").get<int>();
  p.contrast_alpha = j.at("contrast_alpha").get<double>();
  p.iso_noise = j.at("iso_noise").get<double>();
  p.rgb_deviation = j.at("rgb_deviation").get<int>();
  return p;
}

json spec_to_json_obj(const SynthesisSpec& s) {
  json jl = json::array(), ja = json::array();
  for (const auto& a : s.line_attrs) jl.push_back(attr_to_json(a));
  for (const auto& a : s.abpt_attrs) ja.push_back(attr_to_json(a));
  return json{{"seed", s.seed},
              {"type", to_string(s.type)},
              {"line_areas", s.line_areas},
              {"abpt_clusters", s.abpt_clusters},
              {"line_attrs", jl},
              {"abpt_attrs", ja},
              {"ng_pert", pert_to_json(s.ng_pert)},
              {"ok_pert", pert_to_json(s.ok_pert)}};
}

SynthesisSpec spec_from_json_obj(const json& j) {
  SynthesisSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.type = defect_type_from_string(j.at("type").get<std::string>());
  s.line_areas = j.at("line_areas").get<int>();
  s.abpt_clusters = j.at("abpt_clusters").get<int>();
  for (const auto& a : j.at("line_attrs")) s.line_attrs.push_back(attr_from_json(a));
  for (const auto& a : j.at("abpt_attrs")) s.abpt_attrs.push_back(attr_from_json(a));
  s.ng_pert = pert_from_json(j.at("ng_pert"));
  s.ok_pert = pert_from_json(j.at("ok_pert"));
  return s;
}

}  // namespace

std::string spec_to_json(const SynthesisSpec& spec) { return spec_to_json_obj(spec).dump(); }

SynthesisSpec spec_from_json(const std::string& text) {
  return spec_from_json_obj(json::parse(text));
}

DefectLayer generate_line_defects(const Image& clean, int K, Rng& rng) {
  if (K < 0) throw std::invalid_argument("generate_line_defects: K must be >= 0");
  std::vector<DefectAttr> attrs;
  for (int i = 0; i < K; ++i) attrs.push_back(sample_attr(rng));
  return generate_line_defects_with(clean, attrs, rng);
}

DefectLayer generate_line_defects_with(const Image& clean, const std::vector<DefectAttr>& attrs,
                                       Rng& rng) {
  DefectLayer layer = empty_layer(clean);
  layer.attrs = attrs;
  const int K = static_cast<int>(attrs.size());
  if (K == 0) return layer;
  const int h = clean.h, w = clean.w;
  for (int i = 0; i < K; ++i) {
    const int strip_lo = static_cast<int>(static_cast<std::int64_t>(i) * w / K);
    const int strip_hi = static_cast<int>(static_cast<std::int64_t>(i + 1) * w / K);
    if (strip_hi <= strip_lo) continue;
    const DefectAttr& a = attrs[static_cast<std::size_t>(i)];
    const auto rgb = color_rgb(a.color);

    // Anchor both endpoints inside the strip so lines never merge across
    // strips; the strip clamp below handles widths larger than the strip.
    const int margin = a.width / 2 + 1;
    int lo = strip_lo + margin, hi = strip_hi - 1 - margin;
    int x_top, x_bot;
    if (lo <= hi) {
      x_top = rng.uniform_int(lo, hi);
      const int jitter = std::max(1, (strip_hi - strip_lo) / 4);
      x_bot = std::clamp(x_top + rng.uniform_int(-jitter, jitter), lo, hi);
    } else {
      x_top = x_bot = (strip_lo + strip_hi) / 2;
    }
    const double half = a.width / 2.0;
    for (int y = 0; y < h; ++y) {
      const double t = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
      const double cx = x_top + (x_bot - x_top) * t;
      int x0 = std::max(strip_lo, static_cast<int>(std::ceil(cx - half)));
      int x1 = std::min(strip_hi - 1, static_cast<int>(std::floor(cx + half - 1e-9)));
      for (int x = x0; x <= x1; ++x) stamp(layer, y, x, rgb, a.opacity, kClassLine);
    }
  }
  return layer;
}

std::vector<std::pair<int, int>> edge_points(const Image& clean) {
  const int h = clean.h, w = clean.w;
  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      gray[static_cast<std::size_t>(y) * w + x] =
          (clean.at(0, y, x) + clean.at(1 % clean.channels, y, x) +
           clean.at(2 % clean.channels, y, x)) /
          3.0;

  std::vector<std::uint8_t> hit(static_cast<std::size_t>(h) * w, 0);
  for (int t = 50; t <= 200; t += 10) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const bool b = gray[static_cast<std::size_t>(y) * w + x] >= t;
        const bool edge =
            (y > 0 && (gray[static_cast<std::size_t>(y - 1) * w + x] >= t) != b) ||
            (y + 1 < h && (gray[static_cast<std::size_t>(y + 1) * w + x] >= t) != b) ||
            (x > 0 && (gray[static_cast<std::size_t>(y) * w + x - 1] >= t) != b) ||
            (x + 1 < w && (gray[static_cast<std::size_t>(y) * w + x + 1] >= t) != b);
        if (edge) hit[static_cast<std::size_t>(y) * w + x] = 1;
      }
  }
  std::vector<std::pair<int, int>> pts;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (hit[static_cast<std::size_t>(y) * w + x]) pts.emplace_back(y, x);
  return pts;
}

std::vector<std::pair<double, double>> kmeans_points(
    const std::vector<std::pair<int, int>>& points, int k, Rng& rng, int max_iters) {
  if (k < 1) throw std::invalid_argument("kmeans_points: k must be >= 1");
  const int n = static_cast<int>(points.size());
  if (n == 0) return {};
  k = std::min(k, n);

  // Partial Fisher-Yates so initial centroids are distinct points.
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(i, n - 1))]);

  std::vector<std::pair<double, double>> centroids(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto& p = points[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    centroids[static_cast<std::size_t>(i)] = {static_cast<double>(p.first),
                                              static_cast<double>(p.second)};
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < k; ++c) {
        const double dy = points[static_cast<std::size_t>(i)].first -
                          centroids[static_cast<std::size_t>(c)].first;
        const double dx = points[static_cast<std::size_t>(i)].second -
                          centroids[static_cast<std::size_t>(c)].second;
        const double d = dy * dy + dx * dx;
        if (d < best) {  // strict: ties keep the lowest-index centroid
          best = d;
          best_c = c;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best_c) {
        assign[static_cast<std::size_t>(i)] = best_c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<double> sy(static_cast<std::size_t>(k), 0), sx(static_cast<std::size_t>(k), 0);
    std::vector<int> cnt(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sy[static_cast<std::size_t>(c)] += points[static_cast<std::size_t>(i)].first;
      sx[static_cast<std::size_t>(c)] += points[static_cast<std::size_t>(i)].second;
      ++cnt[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c)
      if (cnt[static_cast<std::size_t>(c)] > 0)
        centroids[static_cast<std::size_t>(c)] = {
            sy[static_cast<std::size_t>(c)] / cnt[static_cast<std::size_t>(c)],
            sx[static_cast<std::size_t>(c)] / cnt[static_cast<std::size_t>(c)]};
  }
  return centroids;
}

DefectLayer generate_abpt_defects(const Image& clean, int clusters, Rng& rng) {
  if (clusters < 1) throw std::invalid_argument("generate_abpt_defects: clusters must be >= 1");
  std::vector<DefectAttr> attrs;
  for (int i = 0; i < clusters; ++i) attrs.push_back(sample_attr(rng));
  return generate_abpt_defects_with(clean, clusters, attrs, rng);
}

DefectLayer generate_abpt_defects_with(const Image& clean, int clusters,
                                       const std::vector<DefectAttr>& attrs, Rng& rng) {
  DefectLayer layer = empty_layer(clean);
  layer.attrs = attrs;
  const auto pts = edge_points(clean);
  if (pts.empty()) {
    layer.empty_warning = true;
    return layer;
  }
  const auto centroids = kmeans_points(pts, clusters, rng);
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const DefectAttr& a = attrs[c % attrs.size()];
    const auto rgb = color_rgb(a.color);
    const double r = a.width / 2.0;
    const double cy = centroids[c].first, cx = centroids[c].second;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(clean.h - 1, static_cast<int>(std::ceil(cy + r)));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(clean.w - 1, static_cast<int>(std::ceil(cx + r)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
          stamp(layer, y, x, rgb, a.opacity, kClassAbpt);
  }
  return layer;
}

Image apply_perturbations(const Image& im, const Perturbation& p, Rng& rng) {
  validate_pert_for_apply(p);
  std::array<int, 3> offset{0, 0, 0};
  for (int c = 0; c < im.channels && c < 3; ++c)
    offset[static_cast<std::size_t>(c)] =
        p.rgb_deviation > 0 ? rng.uniform_int(-p.rgb_deviation, p.rgb_deviation) : 0;

  Image out = im;
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) {
        double t = p.contrast_alpha * im.at(c, y, x) + p.brightness_bias +
                   offset[static_cast<std::size_t>(c % 3)];
        if (p.iso_noise > 0.0)
          // shot noise + small floor; std grows with the signal
          t += rng.normal(0.0, p.iso_noise * std::sqrt(std::max(t, 0.0) + 4.0));
        out.at(c, y, x) = std::clamp(t, 0.0, 255.0);
      }
  return out;
}

SynthSample synthesize_sample(const Image& pattern, const SynthesisSpec& spec) {
  if (pattern.channels != 3)
    throw std::invalid_argument("synthesize_sample: pattern must be a 3-channel image");
  const int h = pattern.h, w = pattern.w;

  Rng line_rng(derive_seed(spec.seed, kStreamLineGeom));
  Rng abpt_rng(derive_seed(spec.seed, kStreamAbptGeom));

  DefectLayer combined = empty_layer(pattern);
  bool warn = false;
  if (spec.type == DefectType::line || spec.type == DefectType::mixed)
    combined = generate_line_defects_with(pattern, spec.line_attrs, line_rng);
  if (spec.type == DefectType::abpt || spec.type == DefectType::mixed) {
    DefectLayer ab = generate_abpt_defects_with(pattern, spec.abpt_clusters, spec.abpt_attrs,
                                                abpt_rng);
    warn = ab.empty_warning;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (ab.alpha[i] > 0.0) {
          for (int c = 0; c < 3; ++c) combined.rgb.at(c, y, x) = ab.rgb.at(c, y, x);
          combined.alpha[i] = ab.alpha[i];
          combined.mask.at(y, x) = ab.mask.at(y, x);
        }
      }
  }

  SynthSample out;
  out.spec = spec;
  out.mask = combined.mask;  // labels come from pre-blur geometry
  out.empty_warning = warn;

  // Soften the layer (premultiplied so zero-alpha color never bleeds), then
  // alpha-composite onto the pattern to form the blend source.
  Image pm = Image::zeros(3, h, w);
  Image am = Image::zeros(1, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double a = combined.alpha[static_cast<std::size_t>(y) * w + x];
      am.at(0, y, x) = a;
      if (a > 0.0)
        for (int c = 0; c < 3; ++c) pm.at(c, y, x) = combined.rgb.at(c, y, x) * a;
    }
  pm = gaussian_blur(pm, 1.0);
  am = gaussian_blur(am, 1.0);
  Image src = pattern;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        src.at(c, y, x) = pattern.at(c, y, x) * (1.0 - am.at(0, y, x)) + pm.at(c, y, x);

  // Poisson-blend the interior of the defect support; support pixels on the
  // image frame have no Dirichlet ring, so they take the composite directly.
  LabelMask region = LabelMask::zeros(h, w);
  bool any_interior = false, any_border = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (out.mask.at(y, x)) {
        if (y == 0 || y == h - 1 || x == 0 || x == w - 1)
          any_border = true;
        else {
          region.at(y, x) = 1;
          any_interior = true;
        }
      }
  Image ng = any_interior ? poisson_blend(src, pattern, region) : pattern;
  if (any_border)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (out.mask.at(y, x) && (y == 0 || y == h - 1 || x == 0 || x == w - 1))
          for (int c = 0; c < 3; ++c) ng.at(c, y, x) = src.at(c, y, x);
  clip_image(ng);

  Rng ng_rng(derive_seed(spec.seed, kStreamNgPert));
  Rng ok_rng(derive_seed(spec.seed, kStreamOkPert));
  out.ng = apply_perturbations(ng, spec.ng_pert, ng_rng);
  out.ok = apply_perturbations(pattern, spec.ok_pert, ok_rng);
  return out;
}

std::vector<ManifestEntry> build_dataset(const std::vector<Image>& patterns, int per_type_count,
                                         const std::string& out_dir, std::uint64_t seed) {
  if (patterns.empty()) throw std::invalid_argument("build_dataset: need at least one pattern");
  namespace fs = std::filesystem;
  const int P = static_cast<int>(patterns.size());
  const int train_count = P == 1 ? 1 : std::clamp<int>(std::llround(0.7 * P), 1, P - 1);

  for (const char* split : {"train", "test"})
    for (const char* kind : {"ng", "ok", "mask"})
      fs::create_directories(fs::path(out_dir) / split / kind);

  std::vector<ManifestEntry> entries;
  auto emit = [&](int p, const std::string& tag, int index, const SynthesisSpec& spec) {
    const SynthSample s = synthesize_sample(patterns[static_cast<std::size_t>(p)], spec);
    ManifestEntry e;
    e.stem = std::to_string(p) + "_" + tag + "_" + std::to_string(index);
    e.split = p < train_count ? "train" : "test";
    e.pattern_id = p;
    e.tag = tag;
    e.spec = spec;
    const fs::path base = fs::path(out_dir) / e.split;
    write_image((base / "ng" / (e.stem + ".png")).string(), s.ng);
    write_image((base / "ok" / (e.stem + ".png")).string(), s.ok);
    write_mask((base / "mask" / (e.stem + ".png")).string(), s.mask);
    entries.push_back(std::move(e));
  };

  constexpr DefectType kTypes[3] = {DefectType::line, DefectType::abpt, DefectType::mixed};
  for (int p = 0; p < P; ++p)
    for (int t = 0; t < 3; ++t)
      for (int i = 0; i < per_type_count; ++i)
        emit(p, to_string(kTypes[t]),
             i, sample_spec(derive_seed(seed, static_cast<std::uint64_t>(p), t, i), kTypes[t]));

  std::ofstream mf(fs::path(out_dir) / "manifest.jsonl");
  if (!mf) throw std::runtime_error("build_dataset: cannot write manifest in " + out_dir);
  for (const auto& e : entries) {
    json j{{"stem", e.stem},
           {"split", e.split},
           {"pattern", e.pattern_id},
           {"tag", e.tag},
           {"spec", spec_to_json_obj(e.spec)}};
    mf << j.dump() << "\n";
  }
  return entries;
}

Image make_builtin_pattern(int index, int h, int w) {
  Rng rng(derive_seed(0x5ee8f00d, static_cast<std::uint64_t>(index)));
  Image im = Image::zeros(3, h, w);
  std::array<double, 3> c0, c1;
  for (int c = 0; c < 3; ++c) {
    c0[static_cast<std::size_t>(c)] = rng.uniform(50, 170);
    c1[static_cast<std::size_t>(c)] = rng.uniform(50, 170);
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = 0.5 * (static_cast<double>(y) / std::max(1, h - 1) +
                              static_cast<double>(x) / std::max(1, w - 1));
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = c0[static_cast<std::size_t>(c)] +
                         (c1[static_cast<std::size_t>(c)] - c0[static_cast<std::size_t>(c)]) * t;
    }

  // Glyph-like rectangles on a grid give the threshold sweep real structure.
  const int cell = std::max(8, std::min(h, w) / 16);
  for (int gy = 0; gy + cell <= h; gy += cell)
    for (int gx = 0; gx + cell <= w; gx += cell) {
      if (rng.uniform() > 0.45) continue;
      const int gw = rng.uniform_int(cell / 4, cell - 2);
      const int gh = rng.uniform_int(cell / 4, cell - 2);
      const double lum = rng.uniform() < 0.5 ? rng.uniform(20, 60) : rng.uniform(180, 235);
      for (int y = gy + 1; y < std::min(h, gy + 1 + gh); ++y)
        for (int x = gx + 1; x < std::min(w, gx + 1 + gw); ++x)
          for (int c = 0; c < 3; ++c) im.at(c, y, x) = lum;
    }
  clip_image(im);
  return im;
}

}  // namespace changeseg
