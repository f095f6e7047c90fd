#include <filesystem>
#include <fstream>
#include <queue>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "glyphsim/augment.hpp"
#include "glyphsim/corpus.hpp"
#include "glyphsim/error.hpp"

using namespace glyphsim;
using namespace glyphsim::corpus;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("glyphsim_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 4-connected components of pixels below 0.5 (dark ink), by explicit BFS.
int ink_components(const cv::Mat& img) {
  cv::Mat f;
  img.convertTo(f, CV_32F);
  std::vector<char> seen(f.total(), 0);
  int count = 0;
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) {
      if (seen[y * f.cols + x] || f.at<float>(y, x) >= 0.5f) continue;
      ++count;
      std::queue<std::pair<int, int>> q;
      q.push({y, x});
      seen[y * f.cols + x] = 1;
      while (!q.empty()) {
        auto [cy, cx] = q.front();
        q.pop();
        const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ny = cy + dy[k], nx = cx + dx[k];
          if (ny < 0 || nx < 0 || ny >= f.rows || nx >= f.cols) continue;
          if (seen[ny * f.cols + nx] || f.at<float>(ny, nx) >= 0.5f) continue;
          seen[ny * f.cols + nx] = 1;
          q.push({ny, nx});
        }
      }
    }
  return count;
}

cv::Mat clean_glyph() {
  cv::Mat g(96, 96, CV_32F, cv::Scalar(1.0f));
  cv::rectangle(g, {20, 20}, {30, 75}, cv::Scalar(0.0f), cv::FILLED);
  cv::rectangle(g, {50, 30}, {80, 40}, cv::Scalar(0.0f), cv::FILLED);
  return g;
}

void write_png(const fs::path& p, const cv::Mat& intensity) {
  cv::Mat u8;
  intensity.convertTo(u8, CV_8U, 255.0);
  REQUIRE(cv::imwrite(p.string(), u8));
}

ScriptCorpus synthetic_corpus(const std::string& name, int n) {
  ScriptCorpus c;
  c.name = name;
  for (int i = 0; i < n; ++i) {
    GlyphImage g;
    cv::Mat img(32, 32, CV_32F, cv::Scalar(1.0f));
    cv::circle(img, {16, 16}, 3 + i % 10, cv::Scalar(0.0f), 2);
    g.pixels = img;
    g.script = name;
    g.glyph_id = name + std::to_string(1000 + i);
    c.glyphs.push_back(standardize(std::move(g), 32));
  }
  return c;
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("square_pad geometry") {
    cv::Mat sq(224, 224, CV_32F);
    cv::randu(sq, 0.0f, 1.0f);
    CHECK(cv::norm(square_pad(sq), sq, cv::NORM_INF) == 0.0);

    cv::Mat tall(224, 100, CV_32F, cv::Scalar(0.25f));
    tall.col(0).setTo(0.75f);
    const cv::Mat out = square_pad(tall);
    REQUIRE(out.rows == 224);
    REQUIRE(out.cols == 224);
    // 124 pad columns split 62 / 62; column 62 is the first content column
    CHECK(out.at<float>(100, 62) == 0.75f);
    CHECK(out.at<float>(100, 63) == 0.25f);
    CHECK(out.at<float>(100, 161) == 0.25f);

    cv::Mat ones(3, 1, CV_32F, cv::Scalar(1.0f));
    const cv::Mat o3 = square_pad(ones);
    CHECK(o3.rows == 3);
    CHECK(o3.cols == 3);
    for (int r = 0; r < 3; ++r) CHECK(o3.at<float>(r, 1) == 1.0f);
    CHECK_THROWS_AS(square_pad(cv::Mat()), InvalidInput);
  }

  TEST_CASE("square_pad fills with the border mean") {
    cv::Mat wide(10, 30, CV_32F, cv::Scalar(0.8f));
    wide(cv::Rect(10, 3, 10, 4)).setTo(0.0f);
    const cv::Mat out = square_pad(wide);
    CHECK(out.at<float>(0, 0) == doctest::Approx(0.8f));
    CHECK(out.at<float>(29, 29) == doctest::Approx(0.8f));
  }

  TEST_CASE("standardize constants") {
    const cv::Mat gray(50, 50, CV_32F, cv::Scalar(0.485f));
    const cv::Mat s = standardize(gray);
    REQUIRE(s.rows == kInputSize);
    REQUIRE(s.cols == kInputSize);
    REQUIRE(s.channels() == 3);
    std::vector<cv::Mat> ch;
    cv::split(s, ch);
    CHECK(cv::norm(ch[0], cv::NORM_INF) < 1e-6);
    const cv::Mat white(40, 40, CV_32F, cv::Scalar(1.0f));
    std::vector<cv::Mat> wc;
    cv::split(standardize(white), wc);
    double lo, hi;
    cv::minMaxLoc(wc[0], &lo, &hi);
    CHECK(lo == doctest::Approx((1 - 0.485) / 0.229).epsilon(1e-5));
    CHECK(hi == doctest::Approx(2.2489).epsilon(1e-4));
    cv::Mat bad(8, 8, CV_32F, cv::Scalar(0.5f));
    bad.at<float>(2, 2) = NAN;
    CHECK_THROWS_AS(standardize(bad), InvalidInput);
  }

  TEST_CASE("double normalization is refused and intensity round-trips") {
    GlyphImage g;
    g.pixels = clean_glyph();
    g.glyph_id = "x";
    auto n = standardize(std::move(g), 96);
    CHECK(n.normalized);
    CHECK_THROWS_AS(standardize(n, 96), InvalidInput);
    CHECK(cv::norm(n.intensity(), clean_glyph(), cv::NORM_INF) < 1e-5);
  }

  TEST_CASE("denoise keeps clean glyphs and removes speckles") {
    const cv::Mat g = clean_glyph();
    const cv::Mat d = denoise_manuscript(g);
    CHECK(d.size() == g.size());
    CHECK(ink_components(d) == ink_components(g));

    cv::Mat noisy = g.clone();
    std::mt19937 rng(4);
    std::uniform_int_distribution<int> pos(0, 95);
    for (int k = 0; k < 92; ++k) {
      const int y = pos(rng), x = pos(rng);
      noisy.at<float>(y, x) = noisy.at<float>(y, x) > 0.5f ? 0.0f : 1.0f;
    }
    const int before = ink_components(noisy);
    const int after = ink_components(denoise_manuscript(noisy));
    CHECK(after < before);

    const cv::Mat white(64, 64, CV_32F, cv::Scalar(1.0f));
    double lo;
    cv::minMaxLoc(denoise_manuscript(white), &lo);
    CHECK(lo == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("load_corpus order, skips and stage order") {
    const fs::path dir = scratch("load");
    for (int i = 0; i < 4; ++i) write_png(dir / ("g" + std::to_string(i) + ".png"), clean_glyph());
    std::ofstream(dir / "broken.png") << "not an image";
    ManifestEntry e;
    e.name = "S";
    e.directory = dir;
    e.denoise = true;
    LoadReport report;
    std::vector<std::string> stages;
    const auto c = load_corpus(e, report, {}, [&](std::string_view stage, std::string_view file) {
      if (file == "g0.png") stages.emplace_back(stage);
    });
    CHECK(c.size() == 4);
    CHECK(report.skipped.size() == 1);
    CHECK(c.glyphs[0].glyph_id == "g0.png");
    CHECK(c.glyphs[3].glyph_id == "g3.png");
    CHECK(stages == std::vector<std::string>{"read", "denoise", "square_pad", "standardize"});
    for (const auto& g : c.glyphs) CHECK(cv::checkRange(g.pixels));

    const fs::path empty = scratch("empty");
    e.directory = empty;
    CHECK_THROWS_AS(load_corpus(e, report), InvalidInput);
  }

  TEST_CASE("apportion and composites") {
    const double thirds[] = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    CHECK(apportion(thirds, 99) == std::vector<size_t>{33, 33, 33});
    const double uneven[] = {0.5, 0.3, 0.2};
    const auto counts = apportion(uneven, 11);
    CHECK(counts[0] + counts[1] + counts[2] == 11);

    const auto a = synthetic_corpus("a", 30), b = synthetic_corpus("b", 10);
    const CompositeSource two[] = {{&a, 0.5}, {&b, 0.5}};
    const auto comp = build_composite("ab", Role::comparison, two, 40, 3, augment::AugmentationPolicy{});
    CHECK(comp.size() == 40);
    int from_b = 0, aug_b = 0;
    for (const auto& g : comp.glyphs)
      if (g.glyph_id.rfind("b/", 0) == 0) {
        ++from_b;
        if (g.glyph_id.find("#aug") != std::string::npos) ++aug_b;
      }
    CHECK(from_b == 20);
    CHECK(aug_b == 10);

    const CompositeSource one[] = {{&a, 1.0}};
    const auto single = build_composite("a1", Role::target, one, 30, 1, augment::AugmentationPolicy{});
    CHECK(single.size() == 30);
    ScriptCorpus none;
    none.name = "none";
    const CompositeSource bad[] = {{&a, 0.5}, {&none, 0.5}};
    CHECK_THROWS_AS(build_composite("x", Role::target, bad, 10, 1, augment::AugmentationPolicy{}), InvalidInput);
  }

  TEST_CASE("splits") {
    auto check_sizes = [](int n, size_t tr, size_t va, size_t te) {
      const auto c = split(synthetic_corpus("s", n), {}, 5);
      CHECK(c.count(Split::train) == tr);
      CHECK(c.count(Split::val) == va);
      CHECK(c.count(Split::test) == te);
    };
    check_sizes(100, 70, 20, 10);
    check_sizes(10, 7, 2, 1);
    const auto x = split(synthetic_corpus("s", 37), {}, 9), y = split(synthetic_corpus("s", 37), {}, 9);
    CHECK(x.splits == y.splits);
    for (unsigned seed = 0; seed < 20; ++seed) {
      const auto c = split(synthetic_corpus("s", 23), {}, seed);
      CHECK(c.count(Split::train) + c.count(Split::val) + c.count(Split::test) == 23);
      CHECK(std::abs(static_cast<double>(c.count(Split::train)) - 0.7 * 23) <= 1.0);
    }
    CHECK_THROWS_AS(split(synthetic_corpus("s", 20), {0.7, 0.2, 0.2}, 1), InvalidInput);
    CHECK_THROWS_AS(split(synthetic_corpus("s", 5), {}, 1), InvalidInput);
  }

  TEST_CASE("manifest validation") {
    const auto j = nlohmann::json::parse(R"({"entries": [
      {"name": "A", "role": "target", "dir": "a"},
      {"name": "B", "role": "comparison", "dir": "b"},
      {"name": "AB", "role": "comparison", "composite": [{"source": "A", "proportion": 0.5}, {"source": "B", "proportion": 0.4}]}
    ]})");
    CHECK_THROWS(CorpusManifest::from_json(j).validate(false));
    auto ok = j;
    ok["entries"][2]["composite"][1]["proportion"] = 0.5;
    const auto m = CorpusManifest::from_json(ok, "/data");
    CHECK_NOTHROW(m.validate(false));
    CHECK_THROWS(m.validate(true));
    CHECK(m.find("AB")->is_composite());
    CHECK(m.find("A")->directory == fs::path("/data/a"));
  }

  TEST_CASE("saved corpus round trip") {
    const auto c = split(synthetic_corpus("rt", 12), {}, 2);
    const fs::path dir = scratch("save");
    save_corpus(c, dir / "rt");
    const auto back = load_saved_corpus(dir / "rt");
    REQUIRE(back.size() == c.size());
    CHECK(back.splits == c.splits);
    for (size_t i = 0; i < c.size(); ++i) {
      CHECK(back.glyphs[i].glyph_id == c.glyphs[i].glyph_id);
      CHECK(cv::norm(back.glyphs[i].pixels, c.glyphs[i].pixels, cv::NORM_INF) < 1e-4);
    }
  }
}
