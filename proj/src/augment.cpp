#include "glyphsim/augment.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

#include "glyphsim/error.hpp"

namespace glyphsim::augment {

using nlohmann::json;

namespace {

constexpr std::pair<Transform, const char*> kNames[] = {
    {Transform::rotate, "rotate"},       {Transform::scale, "scale"},
    {Transform::translate, "translate"}, {Transform::shear, "shear"},
    {Transform::elastic, "elastic"},     {Transform::brightness, "brightness"},
    {Transform::contrast, "contrast"},   {Transform::sharpness, "sharpness"},
    {Transform::blur, "blur"},           {Transform::noise, "noise"},
    {Transform::speckle, "speckle"},     {Transform::texture, "texture"},
    {Transform::jitter, "jitter"},
};

double draw(Rng& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

Range range_from(const json& j, const char* key, Range fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  return {v.at(0).get<double>(), v.at(1).get<double>()};
}

float border_mean(const cv::Mat& img) {
  double sum = 0.0;
  int n = 0;
  for (int x = 0; x < img.cols; ++x) {
    sum += img.at<float>(0, x) + img.at<float>(img.rows - 1, x);
    n += 2;
  }
  for (int y = 1; y + 1 < img.rows; ++y) {
    sum += img.at<float>(y, 0) + img.at<float>(y, img.cols - 1);
    n += 2;
  }
  return static_cast<float>(sum / n);
}

cv::Mat random_field(const cv::Size& size, uint64_t seed, bool gaussian) {
  Rng rng(seed);
  cv::Mat f(size, CV_32F);
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  std::normal_distribution<float> norm(0.0f, 1.0f);
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) f.at<float>(y, x) = gaussian ? norm(rng) : uni(rng);
  return f;
}

}  // namespace

std::string to_string(Transform t) {
  for (const auto& [value, name] : kNames)
    if (value == t) return name;
  return "?";
}

Transform parse_transform(std::string_view name) {
  for (const auto& [value, n] : kNames)
    if (name == n) return value;
  throw ConfigError("unknown augmentation transform '" + std::string(name) + "'");
}

std::vector<std::vector<Transform>> AugmentationPolicy::default_combos() {
  using T = Transform;
  return {
      {T::rotate, T::brightness, T::noise},
      {T::elastic, T::contrast},
      {T::rotate, T::scale, T::translate, T::sharpness},
      {T::shear, T::scale, T::blur, T::speckle},
      {T::translate, T::texture, T::jitter, T::contrast},
      {T::elastic, T::rotate, T::blur, T::noise},
  };
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.rotation_deg = {0.0, 0.0};
  p.scale = {1.0, 1.0};
  p.translate_frac = {0.0, 0.0};
  p.shear_deg = {0.0, 0.0};
  p.elastic_alpha = 0.0;
  p.brightness = {1.0, 1.0};
  p.contrast = {1.0, 1.0};
  p.sharpness = {1.0, 1.0};
  p.blur_radius = {0.0, 0.0};
  p.noise_amplitude = 0.0;
  p.speckle_sigma = 0.0;
  p.background_texture = false;
  p.jitter = false;
  return p;
}

void AugmentationPolicy::validate() const {
  for (const Range* r : {&rotation_deg, &scale, &translate_frac, &shear_deg, &brightness,
                         &contrast, &sharpness, &blur_radius})
    if (r->lo > r->hi) throw ConfigError("augmentation range with lo > hi");
  if (scale.lo <= 0.0) throw ConfigError("augmentation scale must be positive");
  if (blur_radius.lo < 0.0) throw ConfigError("blur radius must be nonnegative");
  if (elastic_alpha < 0.0 || elastic_sigma < 0.0 || noise_amplitude < 0.0 ||
      speckle_sigma < 0.0 || texture_amplitude < 0.0 || jitter_amplitude < 0.0)
    throw ConfigError("augmentation magnitudes must be nonnegative");
  if (combos.empty()) throw ConfigError("augmentation policy needs at least one combo");
}

json AugmentationPolicy::to_json() const {
  json combo_list = json::array();
  for (const auto& c : combos) {
    json names = json::array();
    for (auto t : c) names.push_back(to_string(t));
    combo_list.push_back(names);
  }
  return json{{"rotation_deg", range_json(rotation_deg)},
              {"scale", range_json(scale)},
              {"translate_frac", range_json(translate_frac)},
              {"shear_deg", range_json(shear_deg)},
              {"elastic_alpha", elastic_alpha},
              {"elastic_sigma", elastic_sigma},
              {"brightness", range_json(brightness)},
              {"contrast", range_json(contrast)},
              {"sharpness", range_json(sharpness)},
              {"blur_radius", range_json(blur_radius)},
              {"noise_amplitude", noise_amplitude},
              {"speckle_sigma", speckle_sigma},
              {"background_texture", background_texture},
              {"texture_amplitude", texture_amplitude},
              {"jitter", jitter},
              {"jitter_amplitude", jitter_amplitude},
              {"combos", combo_list}};
}

AugmentationPolicy AugmentationPolicy::from_json(const json& j) {
  AugmentationPolicy p;
  p.rotation_deg = range_from(j, "rotation_deg", p.rotation_deg);
  p.scale = range_from(j, "scale", p.scale);
  p.translate_frac = range_from(j, "translate_frac", p.translate_frac);
  p.shear_deg = range_from(j, "shear_deg", p.shear_deg);
  p.elastic_alpha = j.value("elastic_alpha", p.elastic_alpha);
  p.elastic_sigma = j.value("elastic_sigma", p.elastic_sigma);
  p.brightness = range_from(j, "brightness", p.brightness);
  p.contrast = range_from(j, "contrast", p.contrast);
  p.sharpness = range_from(j, "sharpness", p.sharpness);
  p.blur_radius = range_from(j, "blur_radius", p.blur_radius);
  p.noise_amplitude = j.value("noise_amplitude", p.noise_amplitude);
  p.speckle_sigma = j.value("speckle_sigma", p.speckle_sigma);
  p.background_texture = j.value("background_texture", p.background_texture);
  p.texture_amplitude = j.value("texture_amplitude", p.texture_amplitude);
  p.jitter = j.value("jitter", p.jitter);
  p.jitter_amplitude = j.value("jitter_amplitude", p.jitter_amplitude);
  if (j.contains("combos")) {
    p.combos.clear();
    for (const auto& c : j.at("combos")) {
      std::vector<Transform> combo;
      for (const auto& name : c) combo.push_back(parse_transform(name.get<std::string>()));
      p.combos.push_back(std::move(combo));
    }
  }
  p.validate();
  return p;
}

AugmentParams sample_params(const AugmentationPolicy& policy, Rng& rng) {
  AugmentParams p;
  p.combo = std::uniform_int_distribution<size_t>(0, policy.combos.size() - 1)(rng);
  p.rotation_deg = draw(rng, policy.rotation_deg);
  p.scale = draw(rng, policy.scale);
  p.translate_x = draw(rng, policy.translate_frac);
  p.translate_y = draw(rng, policy.translate_frac);
  p.shear_deg = draw(rng, policy.shear_deg);
  p.brightness = draw(rng, policy.brightness);
  p.contrast = draw(rng, policy.contrast);
  p.sharpness = draw(rng, policy.sharpness);
  p.blur_radius = draw(rng, policy.blur_radius);
  const double j = policy.jitter ? policy.jitter_amplitude : 0.0;
  p.jitter_offset = draw(rng, {-j, j});
  p.field_seed = rng();
  return p;
}

cv::Mat apply(const cv::Mat& intensity, const AugmentParams& params,
              const AugmentationPolicy& policy) {
  if (intensity.empty() || intensity.type() != CV_32FC1)
    throw InvalidInput("augment: expected a CV_32FC1 intensity raster");
  if (params.combo >= policy.combos.size()) throw InvalidInput("augment: combo index out of range");

  bool use[13] = {};
  for (auto t : policy.combos[params.combo]) use[static_cast<int>(t)] = true;
  auto on = [&](Transform t) { return use[static_cast<int>(t)]; };

  cv::Mat img = intensity.clone();
  const float background = border_mean(img);
  bool touched = false;

  // geometric part as one affine map about the image center
  const double rot = on(Transform::rotate) ? params.rotation_deg : 0.0;
  const double scale = on(Transform::scale) ? params.scale : 1.0;
  const double tx = on(Transform::translate) ? params.translate_x * img.cols : 0.0;
  const double ty = on(Transform::translate) ? params.translate_y * img.rows : 0.0;
  const double shear = on(Transform::shear) ? params.shear_deg : 0.0;
  if (rot != 0.0 || scale != 1.0 || tx != 0.0 || ty != 0.0 || shear != 0.0) {
    const double th = rot * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double k = std::tan(shear * std::numbers::pi / 180.0);
    // A = R * Shear * scale,  R = [[c, s], [-s, c]]  (counter-clockwise on screen)
    const double a00 = scale * c, a01 = scale * (c * k + s);
    const double a10 = -scale * s, a11 = scale * (-s * k + c);
    const double cx = (img.cols - 1) / 2.0, cy = (img.rows - 1) / 2.0;
    cv::Mat m = (cv::Mat_<double>(2, 3) << a00, a01, cx + tx - a00 * cx - a01 * cy,  //
                 a10, a11, cy + ty - a10 * cx - a11 * cy);
    cv::Mat out;
    cv::warpAffine(img, out, m, img.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                   cv::Scalar(background));
    img = out;
    touched = true;
  }

  if (on(Transform::elastic) && policy.elastic_alpha > 0.0 && policy.elastic_sigma > 0.0) {
    cv::Mat dx = random_field(img.size(), mix_seed(params.field_seed + 1), false);
    cv::Mat dy = random_field(img.size(), mix_seed(params.field_seed + 2), false);
    cv::GaussianBlur(dx, dx, cv::Size(0, 0), policy.elastic_sigma);
    cv::GaussianBlur(dy, dy, cv::Size(0, 0), policy.elastic_sigma);
    cv::Mat map_x(img.size(), CV_32F), map_y(img.size(), CV_32F);
    for (int y = 0; y < img.rows; ++y) {
      for (int x = 0; x < img.cols; ++x) {
        map_x.at<float>(y, x) = x + static_cast<float>(policy.elastic_alpha) * dx.at<float>(y, x);
        map_y.at<float>(y, x) = y + static_cast<float>(policy.elastic_alpha) * dy.at<float>(y, x);
      }
    }
    cv::Mat out;
    cv::remap(img, out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT,
              cv::Scalar(background));
    img = out;
    touched = true;
  }

  if (on(Transform::brightness) && params.brightness != 1.0) {
    img *= params.brightness;
    touched = true;
  }
  if (on(Transform::contrast) && params.contrast != 1.0) {
    const double m = cv::mean(img)[0];
    img.convertTo(img, CV_32F, params.contrast, m * (1.0 - params.contrast));
    touched = true;
  }
  if (on(Transform::sharpness) && params.sharpness != 1.0) {
    const cv::Mat kernel = (cv::Mat_<float>(3, 3) << 1, 1, 1, 1, 5, 1, 1, 1, 1) / 13.0f;
    cv::Mat smooth;
    cv::filter2D(img, smooth, CV_32F, kernel, cv::Point(-1, -1), 0, cv::BORDER_REPLICATE);
    img = smooth + params.sharpness * (img - smooth);
    touched = true;
  }
  if (on(Transform::blur) && params.blur_radius > 0.0) {
    cv::GaussianBlur(img, img, cv::Size(0, 0), params.blur_radius, 0, cv::BORDER_REPLICATE);
    touched = true;
  }
  if (on(Transform::texture) && policy.background_texture && policy.texture_amplitude > 0.0) {
    const cv::Size coarse(std::max(2, img.cols / 16), std::max(2, img.rows / 16));
    cv::Mat field = random_field(coarse, mix_seed(params.field_seed + 3), true);
    cv::resize(field, field, img.size(), 0, 0, cv::INTER_CUBIC);
    img += policy.texture_amplitude * field;
    touched = true;
  }
  if (on(Transform::jitter) && params.jitter_offset != 0.0) {
    img += params.jitter_offset;
    touched = true;
  }
  if (on(Transform::noise) && policy.noise_amplitude > 0.0) {
    img += policy.noise_amplitude * random_field(img.size(), mix_seed(params.field_seed + 4), false);
    touched = true;
  }
  if (on(Transform::speckle) && policy.speckle_sigma > 0.0) {
    cv::Mat n = random_field(img.size(), mix_seed(params.field_seed + 5), true);
    img += img.mul(n * policy.speckle_sigma);
    touched = true;
  }

  if (touched) {
    cv::max(img, 0.0, img);
    cv::min(img, 1.0, img);
  }
  return img;
}

cv::Mat augment(const cv::Mat& intensity, const AugmentationPolicy& policy, Rng& rng) {
  const auto params = sample_params(policy, rng);
  return apply(intensity, params, policy);
}

corpus::GlyphImage augment(const corpus::GlyphImage& glyph, const AugmentationPolicy& policy,
                           Rng& rng) {
  corpus::GlyphImage out = glyph;
  cv::Mat perturbed = augment(glyph.intensity(), policy, rng);
  if (glyph.normalized) {
    out.pixels = corpus::standardize(perturbed, glyph.pixels.rows);
  } else {
    out.pixels = perturbed;
  }
  return out;
}

corpus::ScriptCorpus expand(const corpus::ScriptCorpus& corpus, int k,
                            const AugmentationPolicy& policy, Rng& rng) {
  if (k < 0) throw InvalidInput("expand: k must be nonnegative");
  corpus::ScriptCorpus out;
  out.name = corpus.name;
  out.role = corpus.role;
  out.glyphs.reserve(corpus.size() * (k + 1));
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& g = corpus.glyphs[i];
    out.glyphs.push_back(g);
    if (corpus.has_splits()) out.splits.push_back(corpus.splits[i]);
    for (int a = 1; a <= k; ++a) {
      auto variant = augment(g, policy, rng);
      variant.glyph_id = g.glyph_id + "#aug" + std::to_string(a);
      out.glyphs.push_back(std::move(variant));
      if (corpus.has_splits()) out.splits.push_back(corpus.splits[i]);
    }
  }
  return out;
}

std::pair<corpus::GlyphImage, corpus::GlyphImage> positive_pair(const corpus::GlyphImage& glyph,
                                                                const AugmentationPolicy& policy,
                                                                Rng& rng) {
  Rng first(rng());
  Rng second(rng());
  return {augment(glyph, policy, first), augment(glyph, policy, second)};
}

}  // namespace glyphsim::augment
