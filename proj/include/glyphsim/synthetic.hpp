#pragma once

// Synthetic script families drawn from a stroke grammar. Families borrow a
// fraction of another family's motif library, so relatedness is known by
// construction.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "glyphsim/corpus.hpp"
#include "json.hpp"

namespace glyphsim::synthetic {

struct IntRange {
  int lo = 1;
  int hi = 1;
};

struct SyntheticScriptSpec {
  std::string name;
  corpus::Role role = corpus::Role::target;
  int glyph_count = 40;
  int motif_count = 12;
  IntRange motifs_per_glyph{2, 3};
  IntRange strokes_per_motif{1, 3};
  std::vector<double> angles_deg{0.0, 45.0, 90.0, 135.0};
  double curvature = 0.1;  // bezier control offset relative to stroke length
  IntRange thickness{6, 8};
  std::string share_with;  // family whose motifs are borrowed
  double shared_motif_fraction = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  // Grammar fields not given fall back to `parent` (the share_with family) when present.
  static SyntheticScriptSpec from_json(const nlohmann::json& j, const SyntheticScriptSpec* parent);
};

struct SyntheticFixture {
  uint64_t seed = 0;
  int image_size = corpus::kInputSize;
  std::vector<SyntheticScriptSpec> families;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticFixture from_json(const nlohmann::json& j);
  static SyntheticFixture load(const std::filesystem::path& path);
  const SyntheticScriptSpec& family(const std::string& name) const;
};

// Quadratic Bezier stroke in unit coordinates.
struct Stroke {
  cv::Point2d p0, ctrl, p1;
};
using Motif = std::vector<Stroke>;

// Motif library per family; the first round(fraction * motif_count) motifs of
// a sharing family are the parent's, in order.
std::map<std::string, std::vector<Motif>> motif_libraries(const SyntheticFixture& fixture);

// Black strokes on white, CV_8UC1, image_size^2.
std::vector<cv::Mat> render_family(const SyntheticFixture& fixture, const std::string& name);

// Writes <out>/<family>/<family>_NNN.png for every family and <out>/manifest.json.
corpus::CorpusManifest generate_synthetic(const SyntheticFixture& fixture,
                                          const std::filesystem::path& out_dir);

}  // namespace glyphsim::synthetic
