#pragma once

// Glyph corpora: loading image directories, the preprocessing chain
// (square pad, optional manuscript denoising, standardization) and
// balanced composites / train-val-test splits.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"

namespace glyphsim::augment {
struct AugmentationPolicy;
}

namespace glyphsim::corpus {

inline constexpr int kInputSize = 224;
// Per-channel normalization constants (RGB order).
inline constexpr std::array<double, 3> kChannelMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kChannelStd{0.229, 0.224, 0.225};

enum class Role { target, comparison };
enum class Split : uint8_t { train, val, test };

std::string to_string(Role role);
Role parse_role(std::string_view s);
std::string to_string(Split split);
Split parse_split(std::string_view s);

// One glyph raster. Once `normalized` is set, `pixels` is a kInputSize^2
// CV_32FC3 matrix whose channels follow kChannelMean/kChannelStd order.
struct GlyphImage {
  cv::Mat pixels;
  std::string script;
  std::string glyph_id;
  std::string provenance;
  bool normalized = false;

  // Grayscale intensity in [0,1] recovered from a normalized glyph.
  cv::Mat intensity() const;
};

struct ScriptCorpus {
  std::string name;
  Role role = Role::target;
  std::vector<GlyphImage> glyphs;
  std::vector<Split> splits;  // empty, or one label per glyph

  size_t size() const { return glyphs.size(); }
  bool has_splits() const { return !splits.empty(); }
  std::vector<const GlyphImage*> subset(Split which) const;
  size_t count(Split which) const;
  // Throws InvalidInput on duplicate ids or a split vector of the wrong length.
  void validate() const;
};

struct CompositePart {
  std::string source;
  double proportion = 0.0;
};

struct ManifestEntry {
  std::string name;
  Role role = Role::target;
  std::filesystem::path directory;
  bool denoise = false;
  std::vector<CompositePart> composite;  // nonempty for composite entries
  size_t composite_size = 0;             // 0: sum of source sizes

  bool is_composite() const { return !composite.empty(); }
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;

  static CorpusManifest from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static CorpusManifest load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  // Composite proportions sum to 1, names unique, sources known; with
  // `check_directories` also that every plain entry's directory exists.
  void validate(bool check_directories) const;
  const ManifestEntry* find(std::string_view name) const;
};

struct DenoiseParams {
  int block_size = 11;
  double offset = 2.0;
  float nlm_strength = 10.0f;
  int nlm_patch = 7;
  int nlm_search = 21;
};

struct PreprocessOptions {
  DenoiseParams denoise;
  bool denoise_before_pad = true;
  int size = kInputSize;

  nlohmann::json to_json() const;
  static PreprocessOptions from_json(const nlohmann::json& j);
};

// Pads to S x S, S = max(H, W), content centered (extra column/row goes to
// the right/bottom), padding filled with the mean of the border pixels.
cv::Mat square_pad(const cv::Mat& image);

// Converts any 1/3/4-channel raster (8-bit or float) to CV_32FC1 in [0,1]
// using 0.299/0.587/0.114 luminance weights (input assumed BGR like imread).
cv::Mat to_intensity(const cv::Mat& image);

// Resize to size x size, grayscale, replicate to three channels and apply
// (x - mean_c) / std_c. Throws InvalidInput on non-finite pixels.
cv::Mat standardize(const cv::Mat& image, int size = kInputSize);

// Builds a normalized GlyphImage; refuses an already-normalized input.
GlyphImage standardize(GlyphImage raw, int size = kInputSize);

// Gaussian adaptive threshold -> 2x2 closing -> non-local means.
// Output is CV_32FC1 in [0,1] with the input's height and width.
cv::Mat denoise_manuscript(const cv::Mat& image, const DenoiseParams& params = {});

struct LoadReport {
  struct Skip {
    std::string path;
    std::string reason;
  };
  std::vector<Skip> skipped;
  std::vector<std::string> loaded_corpora;

  std::string to_text() const;
};

// Called with the stage name ("read", "denoise", "square_pad", "standardize")
// for each file; lets callers observe the pipeline order.
using StageTrace = std::function<void(std::string_view stage, std::string_view file)>;

ScriptCorpus load_corpus(const ManifestEntry& entry, LoadReport& report,
                         const PreprocessOptions& options = {}, const StageTrace& trace = {});

// Largest-remainder apportionment of `total` among `proportions`.
std::vector<size_t> apportion(std::span<const double> proportions, size_t total);

struct CompositeSource {
  const ScriptCorpus* corpus;
  double proportion;
};

ScriptCorpus build_composite(std::string name, Role role, std::span<const CompositeSource> sources,
                             size_t size, uint64_t seed, const augment::AugmentationPolicy& policy);

struct SplitRatios {
  double train = 0.70;
  double val = 0.20;
  double test = 0.10;
};

ScriptCorpus split(ScriptCorpus corpus, SplitRatios ratios, uint64_t seed);

// Loads every manifest entry (plain entries first, then composites).
std::vector<ScriptCorpus> load_manifest(const CorpusManifest& manifest, LoadReport& report,
                                        const PreprocessOptions& options, uint64_t seed,
                                        const augment::AugmentationPolicy& policy);

// Prepared-corpus cache: intensities as (n, S, S) float32 .npy plus a JSON sidecar.
void save_corpus(const ScriptCorpus& corpus, const std::filesystem::path& prefix);
ScriptCorpus load_saved_corpus(const std::filesystem::path& prefix);

}  // namespace glyphsim::corpus
