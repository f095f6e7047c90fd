#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "glyphsim/augment.hpp"
#include "glyphsim/error.hpp"

using namespace glyphsim;
using namespace glyphsim::augment;

namespace {

cv::Mat l_shape(int n = 64) {
  cv::Mat img(n, n, CV_32F, cv::Scalar(1.0f));
  cv::rectangle(img, {12, 8}, {20, 50}, cv::Scalar(0.0f), cv::FILLED);
  cv::rectangle(img, {12, 44}, {44, 52}, cv::Scalar(0.0f), cv::FILLED);
  return img;
}

corpus::GlyphImage glyph(const std::string& id) {
  corpus::GlyphImage g;
  g.pixels = l_shape();
  g.script = "S";
  g.glyph_id = id;
  return corpus::standardize(std::move(g), 64);
}

}  // namespace

TEST_SUITE("augment") {
  TEST_CASE("identity policy is a no-op") {
    const auto policy = AugmentationPolicy::identity();
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(cv::norm(augment::augment(l_shape(), policy, rng), l_shape(), cv::NORM_INF) == 0.0);
    const auto g = glyph("a");
    const auto [x, y] = positive_pair(g, policy, rng);
    CHECK(cv::norm(x.pixels, g.pixels, cv::NORM_INF) < 1e-6);
    CHECK(cv::norm(y.pixels, g.pixels, cv::NORM_INF) < 1e-6);
  }

  TEST_CASE("rotation by +90 degrees matches a coordinate remap") {
    auto policy = AugmentationPolicy::identity();
    policy.rotation_deg = {90.0, 90.0};
    policy.combos = {{Transform::rotate}};
    Rng rng(3);
    const cv::Mat src = l_shape();
    const cv::Mat out = augment::augment(src, policy, rng);
    const int n = src.rows;
    // counter-clockwise on screen: out(r, c) = in(c, n - 1 - r)
    cv::Mat ref(n, n, CV_32F);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) ref.at<float>(r, c) = src.at<float>(c, n - 1 - r);
    CHECK(cv::norm(out, ref, cv::NORM_INF) < 1e-4);
  }

  TEST_CASE("fixed seed reproduces output") {
    const AugmentationPolicy policy;
    for (int s = 0; s < 12; ++s) {
      Rng a(s), b(s);
      CHECK(cv::norm(augment::augment(l_shape(), policy, a), augment::augment(l_shape(), policy, b), cv::NORM_INF) == 0.0);
    }
  }

  TEST_CASE("outputs stay finite and in range") {
    const AugmentationPolicy policy;
    Rng rng(8);
    for (int i = 0; i < 60; ++i) {
      const cv::Mat out = augment::augment(l_shape(), policy, rng);
      CHECK(out.size() == l_shape().size());
      double lo, hi;
      cv::minMaxLoc(out, &lo, &hi);
      CHECK(lo >= 0.0);
      CHECK(hi <= 1.0);
    }
    const auto g = glyph("z");
    for (int i = 0; i < 10; ++i) {
      const auto v = augment::augment(g, policy, rng);
      CHECK(v.normalized);
      CHECK(cv::checkRange(v.pixels));
      double lo, hi;
      cv::minMaxLoc(v.pixels.reshape(1), &lo, &hi);
      CHECK(lo >= -2.2);
      CHECK(hi <= 2.7);
    }
  }

  TEST_CASE("sampled parameters stay inside their ranges") {
    const AugmentationPolicy p;
    Rng rng(12);
    for (int i = 0; i < 10000; ++i) {
      const auto s = sample_params(p, rng);
      CHECK(s.combo < p.combos.size());
      CHECK(p.rotation_deg.contains(s.rotation_deg));
      CHECK(p.scale.contains(s.scale));
      CHECK(p.translate_frac.contains(s.translate_x));
      CHECK(p.translate_frac.contains(s.translate_y));
      CHECK(p.shear_deg.contains(s.shear_deg));
      CHECK(p.brightness.contains(s.brightness));
      CHECK(p.contrast.contains(s.contrast));
      CHECK(p.sharpness.contains(s.sharpness));
      CHECK(p.blur_radius.contains(s.blur_radius));
      CHECK(std::abs(s.jitter_offset) <= p.jitter_amplitude);
    }
  }

  TEST_CASE("default combos include the two named ones") {
    const auto combos = AugmentationPolicy::default_combos();
    CHECK(combos.size() == 6);
    const std::vector<Transform> a{Transform::rotate, Transform::brightness, Transform::noise};
    const std::vector<Transform> b{Transform::elastic, Transform::contrast};
    CHECK(std::find(combos.begin(), combos.end(), a) != combos.end());
    CHECK(std::find(combos.begin(), combos.end(), b) != combos.end());
    for (const auto& c : combos)
      for (auto t : c) CHECK(parse_transform(to_string(t)) == t);
    CHECK_THROWS(parse_transform("flip"));
  }

  TEST_CASE("policy json round trip and validation") {
    AugmentationPolicy p;
    p.rotation_deg = {-10, 10};
    p.combos = {{Transform::blur}};
    const auto q = AugmentationPolicy::from_json(p.to_json());
    CHECK(q.rotation_deg == p.rotation_deg);
    CHECK(q.combos == p.combos);
    AugmentationPolicy bad;
    bad.scale = {1.2, 0.8};
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("expand sizes and ids") {
    corpus::ScriptCorpus c;
    c.name = "S";
    c.role = corpus::Role::comparison;
    for (int i = 0; i < 10; ++i) c.glyphs.push_back(glyph("g" + std::to_string(i)));
    Rng rng(2);
    const AugmentationPolicy policy;
    const auto e = expand(c, 4, policy, rng);
    CHECK(e.size() == 50);
    CHECK(e.role == corpus::Role::comparison);
    CHECK(e.glyphs[0].glyph_id == "g0");
    CHECK(e.glyphs[1].glyph_id == "g0#aug1");
    for (const auto& g : e.glyphs) CHECK(g.script == "S");
    CHECK(expand(c, 0, policy, rng).size() == 10);
    corpus::ScriptCorpus one = c;
    one.glyphs.resize(1);
    const auto e1 = expand(one, 4, policy, rng);
    int tagged = 0;
    for (const auto& g : e1.glyphs) tagged += g.glyph_id.find("#aug") != std::string::npos;
    CHECK(e1.size() == 5);
    CHECK(tagged == 4);
  }

  TEST_CASE("positive pairs differ and reproduce") {
    const AugmentationPolicy policy;
    const auto g = glyph("p");
    int equal = 0;
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
      const auto [a, b] = positive_pair(g, policy, rng);
      if (cv::norm(a.pixels, b.pixels, cv::NORM_INF) == 0.0) ++equal;
    }
    CHECK(equal == 0);
    Rng r1(7), r2(7);
    const auto p1 = positive_pair(g, policy, r1), p2 = positive_pair(g, policy, r2);
    CHECK(cv::norm(p1.first.pixels, p2.first.pixels, cv::NORM_INF) == 0.0);
    CHECK(cv::norm(p1.second.pixels, p2.second.pixels, cv::NORM_INF) == 0.0);
  }
}
