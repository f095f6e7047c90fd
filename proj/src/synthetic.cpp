#include "glyphsim/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glyphsim/error.hpp"
#include "glyphsim/io.hpp"
#include "glyphsim/rng.hpp"

namespace glyphsim::synthetic {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

IntRange range_from(const json& j, const char* key, IntRange fallback) {
  if (!j.contains(key)) return fallback;
  return {j.at(key).at(0).get<int>(), j.at(key).at(1).get<int>()};
}

int draw(Rng& rng, IntRange r) { return std::uniform_int_distribution<int>(r.lo, r.hi)(rng); }

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Motif make_motif(const SyntheticScriptSpec& spec, Rng& rng) {
  Motif m;
  const int strokes = draw(rng, spec.strokes_per_motif);
  for (int s = 0; s < strokes; ++s) {
    const double angle =
        spec.angles_deg[std::uniform_int_distribution<size_t>(0, spec.angles_deg.size() - 1)(rng)] *
        std::numbers::pi / 180.0;
    const double length = uniform(rng, 0.35, 0.7);
    const cv::Point2d center(uniform(rng, 0.35, 0.65), uniform(rng, 0.35, 0.65));
    const cv::Point2d dir(std::cos(angle), -std::sin(angle));
    const cv::Point2d normal(-dir.y, dir.x);
    Stroke st;
    st.p0 = center - dir * (length / 2);
    st.p1 = center + dir * (length / 2);
    st.ctrl = center + normal * (spec.curvature * length * uniform(rng, -1.0, 1.0));
    m.push_back(st);
  }
  return m;
}

void draw_stroke(cv::Mat& canvas, const Stroke& s, double scale, cv::Point2d offset, int thickness) {
  const double size = canvas.cols;
  std::vector<cv::Point> pts;
  for (int k = 0; k <= 24; ++k) {
    const double t = k / 24.0;
    const cv::Point2d p = (1 - t) * (1 - t) * s.p0 + 2 * (1 - t) * t * s.ctrl + t * t * s.p1;
    const cv::Point2d q = (p - cv::Point2d(0.5, 0.5)) * scale + cv::Point2d(0.5, 0.5) + offset;
    pts.emplace_back(cvRound(q.x * size), cvRound(q.y * size));
  }
  cv::polylines(canvas, pts, false, cv::Scalar(0), thickness, cv::LINE_AA);
}

}  // namespace

void SyntheticScriptSpec::validate() const {
  if (name.empty()) throw ConfigError("synthetic family needs a name");
  if (glyph_count < 1 || motif_count < 1) throw ConfigError("family '" + name + "': counts must be positive");
  for (const IntRange* r : {&motifs_per_glyph, &strokes_per_motif, &thickness})
    if (r->lo < 1 || r->lo > r->hi) throw ConfigError("family '" + name + "': bad integer range");
  if (angles_deg.empty()) throw ConfigError("family '" + name + "': empty angle set");
  if (curvature < 0.0) throw ConfigError("family '" + name + "': curvature must be >= 0");
  if (!(shared_motif_fraction >= 0.0 && shared_motif_fraction <= 1.0))
    throw ConfigError("family '" + name + "': shared_motif_fraction must lie in [0, 1]");
  if (shared_motif_fraction > 0.0 && share_with.empty())
    throw ConfigError("family '" + name + "': shared motifs need share_with");
}

json SyntheticScriptSpec::to_json() const {
  json j{{"name", name},
         {"role", corpus::to_string(role)},
         {"glyph_count", glyph_count},
         {"motif_count", motif_count},
         {"motifs_per_glyph", {motifs_per_glyph.lo, motifs_per_glyph.hi}},
         {"strokes_per_motif", {strokes_per_motif.lo, strokes_per_motif.hi}},
         {"angles", angles_deg},
         {"curvature", curvature},
         {"thickness", {thickness.lo, thickness.hi}},
         {"shared_motif_fraction", shared_motif_fraction}};
  if (!share_with.empty()) j["share_with"] = share_with;
  return j;
}

SyntheticScriptSpec SyntheticScriptSpec::from_json(const json& j, const SyntheticScriptSpec* parent) {
  SyntheticScriptSpec s = parent ? *parent : SyntheticScriptSpec{};
  s.name = j.at("name").get<std::string>();
  s.role = corpus::parse_role(j.value("role", std::string("target")));
  s.glyph_count = j.value("glyph_count", s.glyph_count);
  s.motif_count = j.value("motif_count", s.motif_count);
  s.motifs_per_glyph = range_from(j, "motifs_per_glyph", s.motifs_per_glyph);
  s.strokes_per_motif = range_from(j, "strokes_per_motif", s.strokes_per_motif);
  if (j.contains("angles")) s.angles_deg = j.at("angles").get<std::vector<double>>();
  s.curvature = j.value("curvature", s.curvature);
  s.thickness = range_from(j, "thickness", s.thickness);
  s.share_with = j.value("share_with", std::string());
  s.shared_motif_fraction = j.value("shared_motif_fraction", 0.0);
  s.validate();
  return s;
}

void SyntheticFixture::validate() const {
  if (families.empty()) throw ConfigError("synthetic fixture has no families");
  if (image_size < 16) throw ConfigError("synthetic image_size too small");
  for (size_t i = 0; i < families.size(); ++i) {
    families[i].validate();
    for (size_t k = 0; k < i; ++k)
      if (families[k].name == families[i].name) throw ConfigError("duplicate family '" + families[i].name + "'");
    if (!families[i].share_with.empty()) {
      bool found = false;
      for (size_t k = 0; k < i; ++k) found = found || families[k].name == families[i].share_with;
      if (!found)
        throw ConfigError("family '" + families[i].name + "' shares with '" + families[i].share_with +
                          "', which must be listed before it");
    }
  }
}

json SyntheticFixture::to_json() const {
  json fams = json::array();
  for (const auto& f : families) fams.push_back(f.to_json());
  return json{{"seed", seed}, {"image_size", image_size}, {"families", fams}};
}

SyntheticFixture SyntheticFixture::from_json(const json& j) {
  SyntheticFixture f;
  f.seed = j.value("seed", uint64_t{0});
  f.image_size = j.value("image_size", f.image_size);
  for (const auto& fj : j.at("families")) {
    const SyntheticScriptSpec* parent = nullptr;
    const auto share = fj.value("share_with", std::string());
    for (const auto& existing : f.families)
      if (existing.name == share) parent = &existing;
    f.families.push_back(SyntheticScriptSpec::from_json(fj, parent));
  }
  f.validate();
  return f;
}

SyntheticFixture SyntheticFixture::load(const fs::path& path) { return from_json(io::read_json(path)); }

const SyntheticScriptSpec& SyntheticFixture::family(const std::string& name) const {
  for (const auto& f : families)
    if (f.name == name) return f;
  throw InvalidInput("unknown synthetic family '" + name + "'");
}

std::map<std::string, std::vector<Motif>> motif_libraries(const SyntheticFixture& fixture) {
  fixture.validate();
  std::map<std::string, std::vector<Motif>> libs;
  for (const auto& f : fixture.families) {
    std::vector<Motif> lib;
    if (!f.share_with.empty()) {
      const auto& parent = libs.at(f.share_with);
      const auto shared = static_cast<size_t>(std::lround(f.shared_motif_fraction * f.motif_count));
      for (size_t i = 0; i < shared && i < parent.size(); ++i) lib.push_back(parent[i]);
    }
    Rng rng(derive_seed(fixture.seed, "motifs:" + f.name));
    while (lib.size() < static_cast<size_t>(f.motif_count)) lib.push_back(make_motif(f, rng));
    libs[f.name] = std::move(lib);
  }
  return libs;
}

std::vector<cv::Mat> render_family(const SyntheticFixture& fixture, const std::string& name) {
  const auto libs = motif_libraries(fixture);
  const auto& spec = fixture.family(name);
  const auto& lib = libs.at(name);
  std::vector<cv::Mat> out;
  for (int i = 0; i < spec.glyph_count; ++i) {
    Rng rng(derive_seed(fixture.seed, "glyph:" + name, static_cast<uint64_t>(i)));
    cv::Mat canvas(fixture.image_size, fixture.image_size, CV_8UC1, cv::Scalar(255));
    const int thickness = std::max(1, draw(rng, spec.thickness) * fixture.image_size / corpus::kInputSize);
    const int parts = draw(rng, spec.motifs_per_glyph);
    for (int p = 0; p < parts; ++p) {
      const auto& motif = lib[std::uniform_int_distribution<size_t>(0, lib.size() - 1)(rng)];
      const double scale = uniform(rng, 0.55, 0.9);
      const cv::Point2d offset(uniform(rng, -0.15, 0.15), uniform(rng, -0.15, 0.15));
      for (const auto& s : motif) draw_stroke(canvas, s, scale, offset, thickness);
    }
    out.push_back(canvas);
  }
  return out;
}

corpus::CorpusManifest generate_synthetic(const SyntheticFixture& fixture, const fs::path& out_dir) {
  fixture.validate();
  corpus::CorpusManifest manifest;
  for (const auto& f : fixture.families) {
    const fs::path dir = out_dir / f.name;
    fs::create_directories(dir);
    const auto images = render_family(fixture, f.name);
    for (size_t i = 0; i < images.size(); ++i) {
      char file[64];
      std::snprintf(file, sizeof(file), "%s_%03zu.png", f.name.c_str(), i);
      if (!cv::imwrite((dir / file).string(), images[i]))
        throw std::runtime_error("cannot write " + (dir / file).string());
    }
    corpus::ManifestEntry e;
    e.name = f.name;
    e.role = f.role;
    e.directory = dir;
    manifest.entries.push_back(e);
  }
  auto j = manifest.to_json();
  // directories relative to the manifest so the tree can be moved
  for (auto& e : j.at("entries"))
    if (e.contains("dir")) e["dir"] = fs::path(e["dir"].get<std::string>()).filename().string();
  io::write_json(out_dir / "manifest.json", j);
  io::write_json(out_dir / "fixture.json", fixture.to_json());
  return manifest;
}

}  // namespace glyphsim::synthetic
