#pragma once

// Label-preserving glyph perturbations and the positive-pair generator used
// by contrastive training. All randomness comes from the caller's Rng, so a
// fixed seed reproduces every output.

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>

#include "glyphsim/corpus.hpp"
#include "glyphsim/rng.hpp"
#include "json.hpp"

namespace glyphsim::augment {

enum class Transform {
  rotate,
  scale,
  translate,
  shear,
  elastic,
  brightness,
  contrast,
  sharpness,
  blur,
  noise,
  speckle,
  texture,
  jitter,
};

std::string to_string(Transform t);
Transform parse_transform(std::string_view name);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  bool operator==(const Range&) const = default;
};

struct AugmentationPolicy {
  Range rotation_deg{-45.0, 45.0};
  Range scale{0.85, 1.15};
  Range translate_frac{-0.10, 0.10};
  Range shear_deg{-8.0, 8.0};
  double elastic_alpha = 34.0;
  double elastic_sigma = 4.0;
  Range brightness{0.7, 1.5};
  Range contrast{0.7, 1.5};
  Range sharpness{0.7, 1.6};
  Range blur_radius{0.5, 1.2};
  double noise_amplitude = 0.05;  // additive uniform, fraction of [0,1] range
  double speckle_sigma = 0.05;    // multiplicative gaussian
  bool background_texture = true;
  double texture_amplitude = 0.04;
  bool jitter = true;
  double jitter_amplitude = 0.03;
  // One combo is drawn uniformly per call and its transforms applied in order.
  std::vector<std::vector<Transform>> combos = default_combos();

  static std::vector<std::vector<Transform>> default_combos();
  // Every range collapsed to its neutral value: augment() returns its input.
  static AugmentationPolicy identity();

  void validate() const;
  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& j);
};

// Concrete parameters for one augment() call. Every field is drawn on every
// call (so draws are comparable across combos); only `combo`'s transforms run.
struct AugmentParams {
  size_t combo = 0;
  double rotation_deg = 0.0;
  double scale = 1.0;
  double translate_x = 0.0;  // fraction of width
  double translate_y = 0.0;
  double shear_deg = 0.0;
  double brightness = 1.0;
  double contrast = 1.0;
  double sharpness = 1.0;
  double blur_radius = 0.0;
  double jitter_offset = 0.0;
  uint64_t field_seed = 0;  // elastic field, noise and texture draws
};

AugmentParams sample_params(const AugmentationPolicy& policy, Rng& rng);

// Applies `params` to an intensity raster (CV_32FC1, values in [0,1]).
cv::Mat apply(const cv::Mat& intensity, const AugmentParams& params,
              const AugmentationPolicy& policy);

// Intensity raster in, intensity raster out (same shape, clipped to [0,1]).
cv::Mat augment(const cv::Mat& intensity, const AugmentationPolicy& policy, Rng& rng);

// Normalized glyphs are de-normalized, perturbed and standardized again.
corpus::GlyphImage augment(const corpus::GlyphImage& glyph, const AugmentationPolicy& policy,
                           Rng& rng);

// (k + 1) x size corpus; each original is followed by k variants "<id>#aug<i>".
corpus::ScriptCorpus expand(const corpus::ScriptCorpus& corpus, int k,
                            const AugmentationPolicy& policy, Rng& rng);

// Two independent draws of the same glyph, each from its own sub-seed.
std::pair<corpus::GlyphImage, corpus::GlyphImage> positive_pair(const corpus::GlyphImage& glyph,
                                                                const AugmentationPolicy& policy,
                                                                Rng& rng);

}  // namespace glyphsim::augment
