#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "changeseg/image.hpp"
#include "changeseg/rng.hpp"

namespace changeseg {

constexpr int kClassLine = 1;
constexpr int kClassAbpt = 2;

enum class DefectType { line, abpt, mixed };

std::string to_string(DefectType t);
DefectType defect_type_from_string(const std::string& s);

enum class DefectColor { black, white, red, green, blue };

std::string to_string(DefectColor c);
DefectColor defect_color_from_string(const std::string& s);
std::array<double, 3> color_rgb(DefectColor c);

/// Sampled per-defect attributes; all values land on the documented grids
/// (opacity 0.1..1.0 step 0.1, width 3..33 step 3).
struct DefectAttr {
  DefectColor color = DefectColor::black;
  double opacity = 0.1;
  int width = 3;
};

/// Global photometric screen perturbation. Sampling stays on the grids
/// (bias 1..6, alpha 0.5..1.5 step 0.1, noise 0.1..1.0 step 0.1, deviation
/// 3..33 step 3), but the apply path also accepts the neutral values
/// (bias/noise/deviation 0, alpha 1) so identity transforms are expressible.
struct Perturbation {
  int brightness_bias = 0;
  double contrast_alpha = 1.0;
  double iso_noise = 0.0;
  int rgb_deviation = 0;
};

/// Everything needed to regenerate one sample byte-for-byte: the recorded
/// attribute draws plus the seed that drives geometry and noise streams.
struct SynthesisSpec {
  std::uint64_t seed = 0;
  DefectType type = DefectType::line;
  int line_areas = 0;     // K vertical strips, one line each
  int abpt_clusters = 0;  // K-means cluster count
  std::vector<DefectAttr> line_attrs;
  std::vector<DefectAttr> abpt_attrs;
  Perturbation ng_pert, ok_pert;  // independent draws for the pair
};

/// Draw a complete spec from a seed; every field lands on the documented
/// grids (see spec_in_ranges).
SynthesisSpec sample_spec(std::uint64_t seed, DefectType type);

/// True when every attribute lies on its documented grid/range.
bool spec_in_ranges(const SynthesisSpec& spec);

std::string spec_to_json(const SynthesisSpec& spec);
SynthesisSpec spec_from_json(const std::string& text);

/// Colored strokes with per-pixel coverage; the mask marks alpha > 0 pixels
/// with the shape's class id and is recorded before any blur.
struct DefectLayer {
  Image rgb;                  // (3,H,W) stroke color where alpha > 0
  std::vector<double> alpha;  // H*W coverage in [0,1]
  LabelMask mask;
  std::vector<DefectAttr> attrs;  // the draws that produced the layer
  bool empty_warning = false;     // abpt found no edge points to cluster
};

/// One near-vertical full-height line per strip, K strips across the width.
/// The (clean, K, rng) form samples attributes from rng first.
DefectLayer generate_line_defects(const Image& clean, int K, Rng& rng);
DefectLayer generate_line_defects_with(const Image& clean, const std::vector<DefectAttr>& attrs,
                                       Rng& rng);

/// Threshold sweep (50..200 step 10) on the grayscale image, boundary-point
/// extraction, seeded K-means, one disc blob per cluster.
DefectLayer generate_abpt_defects(const Image& clean, int clusters, Rng& rng);
DefectLayer generate_abpt_defects_with(const Image& clean, int clusters,
                                       const std::vector<DefectAttr>& attrs, Rng& rng);

/// Boundary pixels (4-neighbor transitions) of gray >= t for any threshold in
/// the sweep, in row-major order.
std::vector<std::pair<int, int>> edge_points(const Image& clean);

/// Lloyd iterations with seeded initialization, 50-iteration cap, ties to the
/// lowest-index centroid. Returns k (possibly reduced) centroids.
std::vector<std::pair<double, double>> kmeans_points(
    const std::vector<std::pair<int, int>>& points, int k, Rng& rng, int max_iters = 50);

Image apply_perturbations(const Image& im, const Perturbation& p, Rng& rng);

struct SynthSample {
  Image ng, ok;
  LabelMask mask;
  SynthesisSpec spec;
  bool empty_warning = false;
};

/// Full pipeline: defect layers -> Gaussian blur (sigma 1) -> Poisson blend
/// into the pattern -> independent photometric perturbation of NG and OK.
SynthSample synthesize_sample(const Image& pattern, const SynthesisSpec& spec);

struct ManifestEntry {
  std::string stem;   // <pattern>_<tag>_<index>
  std::string split;  // train | test
  int pattern_id = 0;
  std::string tag;    // line | abpt | mixed
  SynthesisSpec spec;
};

/// Writes `<root>/{train,test}/{ng,ok,mask}/<stem>.png` plus a JSON-lines
/// manifest (one spec per line) at `<root>/manifest.jsonl`. Per pattern:
/// per_type_count samples of each defect type; each sample's independently
/// perturbed OK reference doubles as its defect-free counterpart. Patterns
/// split 70/30 by id (first ceil-rounded 70% train).
std::vector<ManifestEntry> build_dataset(const std::vector<Image>& patterns, int per_type_count,
                                         const std::string& out_dir, std::uint64_t seed);

/// Procedural LCD-like test pattern: gradient background, glyph grid, and a
/// few shapes, varied by index. Gives the threshold sweep real edges.
Image make_builtin_pattern(int index, int h, int w);

}  // namespace changeseg
