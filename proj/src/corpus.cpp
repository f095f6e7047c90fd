#include "glyphsim/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/photo.hpp>

#include "glyphsim/augment.hpp"
#include "glyphsim/error.hpp"
#include "glyphsim/io.hpp"

namespace glyphsim::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Role role) { return role == Role::target ? "target" : "comparison"; }

Role parse_role(std::string_view s) {
  if (s == "target") return Role::target;
  if (s == "comparison") return Role::comparison;
  throw ConfigError("unknown corpus role '" + std::string(s) + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split label '" + std::string(s) + "'");
}

cv::Mat GlyphImage::intensity() const {
  if (!normalized) return to_intensity(pixels);
  cv::Mat channel;
  cv::extractChannel(pixels, channel, 0);
  cv::Mat out;
  channel.convertTo(out, CV_32F, kChannelStd[0], kChannelMean[0]);
  return out;
}

std::vector<const GlyphImage*> ScriptCorpus::subset(Split which) const {
  std::vector<const GlyphImage*> out;
  for (size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == which) out.push_back(&glyphs[i]);
  return out;
}

size_t ScriptCorpus::count(Split which) const {
  return static_cast<size_t>(std::count(splits.begin(), splits.end(), which));
}

void ScriptCorpus::validate() const {
  std::set<std::string> ids;
  for (const auto& g : glyphs)
    if (!ids.insert(g.glyph_id).second)
      throw InvalidInput("corpus '" + name + "' has duplicate glyph id '" + g.glyph_id + "'");
  if (!splits.empty() && splits.size() != glyphs.size())
    throw InvalidInput("corpus '" + name + "' split labels do not cover every glyph");
}

// ---------------------------------------------------------------------------
// manifest

CorpusManifest CorpusManifest::from_json(const json& j, const fs::path& base) {
  CorpusManifest m;
  for (const auto& e : j.at("entries")) {
    ManifestEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.role = parse_role(e.value("role", std::string("target")));
    if (e.contains("dir")) {
      fs::path dir = e.at("dir").get<std::string>();
      entry.directory = dir.is_absolute() || base.empty() ? dir : base / dir;
    }
    entry.denoise = e.value("denoise", false);
    if (e.contains("composite")) {
      for (const auto& part : e.at("composite"))
        entry.composite.push_back(
            {part.at("source").get<std::string>(), part.at("proportion").get<double>()});
      entry.composite_size = e.value("size", size_t{0});
    }
    m.entries.push_back(std::move(entry));
  }
  return m;
}

CorpusManifest CorpusManifest::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("manifest not found: " + path.string());
  auto m = from_json(io::read_json(path), path.parent_path());
  m.validate(false);
  return m;
}

json CorpusManifest::to_json() const {
  json entries = json::array();
  for (const auto& e : this->entries) {
    json je{{"name", e.name}, {"role", corpus::to_string(e.role)}, {"denoise", e.denoise}};
    if (!e.directory.empty()) je["dir"] = e.directory.string();
    if (e.is_composite()) {
      json parts = json::array();
      for (const auto& p : e.composite)
        parts.push_back({{"source", p.source}, {"proportion", p.proportion}});
      je["composite"] = parts;
      je["size"] = e.composite_size;
    }
    entries.push_back(je);
  }
  return json{{"entries", entries}};
}

void CorpusManifest::validate(bool check_directories) const {
  std::set<std::string> names;
  for (const auto& e : entries)
    if (!names.insert(e.name).second) throw ConfigError("duplicate manifest entry '" + e.name + "'");
  for (const auto& e : entries) {
    if (e.is_composite()) {
      double total = 0.0;
      for (const auto& p : e.composite) {
        if (!names.count(p.source))
          throw ConfigError("composite '" + e.name + "' references unknown source '" + p.source +
                            "'");
        if (p.proportion < 0.0) throw ConfigError("negative composite proportion in " + e.name);
        total += p.proportion;
      }
      if (std::abs(total - 1.0) > 1e-6)
        throw ConfigError("composite '" + e.name + "' proportions sum to " +
                          io::format_double(total) + ", expected 1");
    } else {
      if (e.directory.empty()) throw ConfigError("entry '" + e.name + "' has no dir");
      if (check_directories && !fs::is_directory(e.directory))
        throw ConfigError("directory for '" + e.name + "' does not exist: " +
                          e.directory.string());
    }
  }
}

const ManifestEntry* CorpusManifest::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

json PreprocessOptions::to_json() const {
  return json{{"denoise_block_size", denoise.block_size},
              {"denoise_offset", denoise.offset},
              {"nlm_strength", denoise.nlm_strength},
              {"nlm_patch", denoise.nlm_patch},
              {"nlm_search", denoise.nlm_search},
              {"denoise_before_pad", denoise_before_pad},
              {"size", size}};
}

PreprocessOptions PreprocessOptions::from_json(const json& j) {
  PreprocessOptions o;
  o.denoise.block_size = j.value("denoise_block_size", o.denoise.block_size);
  o.denoise.offset = j.value("denoise_offset", o.denoise.offset);
  o.denoise.nlm_strength = j.value("nlm_strength", o.denoise.nlm_strength);
  o.denoise.nlm_patch = j.value("nlm_patch", o.denoise.nlm_patch);
  o.denoise.nlm_search = j.value("nlm_search", o.denoise.nlm_search);
  o.denoise_before_pad = j.value("denoise_before_pad", o.denoise_before_pad);
  o.size = j.value("size", o.size);
  if (o.denoise.block_size < 3 || o.denoise.block_size % 2 == 0)
    throw ConfigError("denoise_block_size must be odd and >= 3");
  return o;
}

// ---------------------------------------------------------------------------
// preprocessing

cv::Mat square_pad(const cv::Mat& image) {
  if (image.empty() || image.rows < 1 || image.cols < 1)
    throw InvalidInput("square_pad: empty image");
  const int side = std::max(image.rows, image.cols);
  if (image.rows == image.cols) return image.clone();

  cv::Scalar sum = cv::Scalar::all(0.0);
  int count = 0;
  for (int y = 0; y < image.rows; ++y) {
    const bool edge_row = y == 0 || y == image.rows - 1;
    for (int x = 0; x < image.cols; ++x) {
      if (!edge_row && x != 0 && x != image.cols - 1) continue;
      cv::Mat px = image(cv::Rect(x, y, 1, 1));
      sum += cv::mean(px);
      ++count;
    }
  }
  const cv::Scalar fill = sum / count;
  const int left = (side - image.cols) / 2;
  const int top = (side - image.rows) / 2;
  cv::Mat out;
  cv::copyMakeBorder(image, out, top, side - image.rows - top, left, side - image.cols - left,
                     cv::BORDER_CONSTANT, fill);
  return out;
}

cv::Mat to_intensity(const cv::Mat& image) {
  if (image.empty()) throw InvalidInput("to_intensity: empty image");
  double scale = 1.0;
  if (image.depth() == CV_8U) scale = 1.0 / 255.0;
  else if (image.depth() == CV_16U) scale = 1.0 / 65535.0;
  cv::Mat f;
  image.convertTo(f, CV_MAKETYPE(CV_32F, image.channels()), scale);

  switch (f.channels()) {
    case 1: return f;
    case 3: {
      cv::Mat gray(f.rows, f.cols, CV_32F);
      f.forEach<cv::Vec3f>([&](const cv::Vec3f& p, const int* pos) {
        gray.at<float>(pos[0], pos[1]) =
            static_cast<float>(0.114 * p[0] + 0.587 * p[1] + 0.299 * p[2]);
      });
      return gray;
    }
    case 4: {
      // composite onto a white page so transparent backgrounds read as paper
      cv::Mat gray(f.rows, f.cols, CV_32F);
      f.forEach<cv::Vec4f>([&](const cv::Vec4f& p, const int* pos) {
        const double lum = 0.114 * p[0] + 0.587 * p[1] + 0.299 * p[2];
        const double a = p[3];
        gray.at<float>(pos[0], pos[1]) = static_cast<float>(a * lum + (1.0 - a));
      });
      return gray;
    }
    default:
      throw InvalidInput("unsupported channel count " + std::to_string(f.channels()));
  }
}

cv::Mat standardize(const cv::Mat& image, int size) {
  if (image.empty()) throw InvalidInput("standardize: empty image");
  cv::Mat gray = to_intensity(image);
  if (!cv::checkRange(gray, /*quiet=*/true))
    throw InvalidInput("standardize: non-finite pixel values");
  if (gray.rows != gray.cols) gray = square_pad(gray);
  if (gray.rows != size) {
    const int interp = gray.rows > size ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(gray, gray, cv::Size(size, size), 0, 0, interp);
  }
  std::vector<cv::Mat> channels(3);
  for (int c = 0; c < 3; ++c)
    gray.convertTo(channels[c], CV_32F, 1.0 / kChannelStd[c], -kChannelMean[c] / kChannelStd[c]);
  cv::Mat out;
  cv::merge(channels, out);
  return out;
}

GlyphImage standardize(GlyphImage raw, int size) {
  if (raw.normalized)
    throw InvalidInput("glyph '" + raw.glyph_id + "' is already normalized");
  raw.pixels = standardize(raw.pixels, size);
  raw.normalized = true;
  return raw;
}

cv::Mat denoise_manuscript(const cv::Mat& image, const DenoiseParams& params) {
  cv::Mat gray = to_intensity(image);
  if (!cv::checkRange(gray, true)) throw InvalidInput("denoise_manuscript: non-finite pixels");
  cv::Mat bytes;
  gray.convertTo(bytes, CV_8U, 255.0);
  cv::Mat binary;
  cv::adaptiveThreshold(bytes, binary, 255, cv::ADAPTIVE_THRESH_GAUSSIAN_C, cv::THRESH_BINARY,
                        params.block_size, params.offset);
  const auto kernel = cv::getStructuringElement(cv::MORPH_RECT, cv::Size(2, 2));
  cv::morphologyEx(binary, binary, cv::MORPH_CLOSE, kernel);
  cv::Mat smoothed;
  cv::fastNlMeansDenoising(binary, smoothed, params.nlm_strength, params.nlm_patch,
                           params.nlm_search);
  cv::Mat out;
  smoothed.convertTo(out, CV_32F, 1.0 / 255.0);
  return out;
}

std::string LoadReport::to_text() const {
  std::ostringstream out;
  out << "loaded corpora: " << loaded_corpora.size() << "\n";
  for (const auto& c : loaded_corpora) out << "  " << c << "\n";
  out << "skipped files: " << skipped.size() << "\n";
  for (const auto& s : skipped) out << "  " << s.path << ": " << s.reason << "\n";
  return out.str();
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

ScriptCorpus load_corpus(const ManifestEntry& entry, LoadReport& report,
                         const PreprocessOptions& options, const StageTrace& trace) {
  if (entry.is_composite())
    throw ConfigError("load_corpus: '" + entry.name + "' is a composite entry");
  if (!fs::is_directory(entry.directory))
    throw ConfigError("corpus directory does not exist: " + entry.directory.string());

  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(entry.directory))
    if (de.is_regular_file() && is_image_file(de.path())) files.push_back(de.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (files.empty())
    throw InvalidInput("corpus directory has no png/jpg images: " + entry.directory.string());

  auto note = [&](std::string_view stage, const fs::path& f) {
    if (trace) trace(stage, f.filename().string());
  };

  ScriptCorpus corpus;
  corpus.name = entry.name;
  corpus.role = entry.role;
  for (const auto& file : files) {
    note("read", file);
    cv::Mat raw = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) {
      report.skipped.push_back({file.string(), "unreadable image"});
      continue;
    }
    try {
      cv::Mat img = to_intensity(raw);
      if (entry.denoise && options.denoise_before_pad) {
        note("denoise", file);
        img = denoise_manuscript(img, options.denoise);
      }
      note("square_pad", file);
      img = square_pad(img);
      if (entry.denoise && !options.denoise_before_pad) {
        note("denoise", file);
        img = denoise_manuscript(img, options.denoise);
      }
      note("standardize", file);
      GlyphImage g;
      g.pixels = img;
      g.script = entry.name;
      g.glyph_id = file.filename().string();
      g.provenance = file.string();
      corpus.glyphs.push_back(standardize(std::move(g), options.size));
    } catch (const InvalidInput& e) {
      report.skipped.push_back({file.string(), e.what()});
    }
  }
  if (corpus.glyphs.empty())
    throw InvalidInput("no readable images in " + entry.directory.string());
  report.loaded_corpora.push_back(entry.name + " (" + std::to_string(corpus.size()) + " glyphs)");
  return corpus;
}

// ---------------------------------------------------------------------------
// composites and splits

std::vector<size_t> apportion(std::span<const double> proportions, size_t total) {
  std::vector<size_t> counts(proportions.size());
  std::vector<std::pair<double, size_t>> remainders;
  size_t assigned = 0;
  for (size_t i = 0; i < proportions.size(); ++i) {
    const double exact = proportions[i] * static_cast<double>(total);
    counts[i] = static_cast<size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t k = 0; assigned < total && k < remainders.size(); ++k, ++assigned)
    ++counts[remainders[k].second];
  return counts;
}

ScriptCorpus build_composite(std::string name, Role role, std::span<const CompositeSource> sources,
                             size_t size, uint64_t seed,
                             const augment::AugmentationPolicy& policy) {
  if (sources.empty()) throw InvalidInput("build_composite: no sources");
  std::vector<double> props;
  double total = 0.0;
  for (const auto& s : sources) {
    if (s.proportion < 0.0) throw InvalidInput("build_composite: negative proportion");
    if (s.proportion > 0.0 && s.corpus->size() == 0)
      throw InvalidInput("build_composite: source '" + s.corpus->name +
                         "' is empty but has a nonzero proportion");
    props.push_back(s.proportion);
    total += s.proportion;
  }
  if (std::abs(total - 1.0) > 1e-6)
    throw InvalidInput("build_composite: proportions sum to " + io::format_double(total));

  const auto quotas = apportion(props, size);
  ScriptCorpus out;
  out.name = std::move(name);
  out.role = role;
  for (size_t s = 0; s < sources.size(); ++s) {
    const ScriptCorpus& src = *sources[s].corpus;
    const size_t quota = quotas[s];
    const size_t n = src.size();
    Rng rng(derive_seed(seed, "composite", s));
    auto take = [&](const GlyphImage& g, std::string id) {
      GlyphImage copy = g;
      copy.script = out.name;
      copy.glyph_id = src.name + "/" + id;
      out.glyphs.push_back(std::move(copy));
    };
    if (quota <= n) {
      std::vector<size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(quota);
      std::sort(idx.begin(), idx.end());
      for (size_t i : idx) take(src.glyphs[i], src.glyphs[i].glyph_id);
    } else {
      for (const auto& g : src.glyphs) take(g, g.glyph_id);
      for (size_t j = 0; j < quota - n; ++j) {
        const auto& g = src.glyphs[j % n];
        auto variant = augment::augment(g, policy, rng);
        take(variant, g.glyph_id + "#aug" + std::to_string(1 + j / n));
      }
    }
  }
  out.validate();
  return out;
}

ScriptCorpus split(ScriptCorpus corpus, SplitRatios ratios, uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
    throw InvalidInput("split ratios must be nonnegative and sum to 1 (got " +
                       io::format_double(sum) + ")");
  const size_t n = corpus.size();
  if (n < 10)
    throw InvalidInput("split: corpus '" + corpus.name + "' has " + std::to_string(n) +
                       " glyphs, need at least 10");
  const double props[3] = {ratios.train, ratios.val, ratios.test};
  const auto counts = apportion(props, n);
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  corpus.splits.assign(n, Split::train);
  for (size_t i = 0; i < n; ++i) {
    Split label = Split::test;
    if (i < counts[0]) label = Split::train;
    else if (i < counts[0] + counts[1]) label = Split::val;
    corpus.splits[perm[i]] = label;
  }
  return corpus;
}

std::vector<ScriptCorpus> load_manifest(const CorpusManifest& manifest, LoadReport& report,
                                        const PreprocessOptions& options, uint64_t seed,
                                        const augment::AugmentationPolicy& policy) {
  manifest.validate(true);
  std::vector<ScriptCorpus> loaded;
  for (const auto& e : manifest.entries)
    if (!e.is_composite()) loaded.push_back(load_corpus(e, report, options));
  for (const auto& e : manifest.entries) {
    if (!e.is_composite()) continue;
    std::vector<CompositeSource> sources;
    size_t default_size = 0;
    for (const auto& part : e.composite) {
      auto it = std::find_if(loaded.begin(), loaded.end(),
                             [&](const ScriptCorpus& c) { return c.name == part.source; });
      if (it == loaded.end())
        throw ConfigError("composite '" + e.name + "' source '" + part.source + "' not loaded");
      sources.push_back({&*it, part.proportion});
      default_size += it->size();
    }
    const size_t size = e.composite_size ? e.composite_size : default_size;
    auto composite = build_composite(e.name, e.role, sources, size,
                                     derive_seed(seed, "composite:" + e.name), policy);
    report.loaded_corpora.push_back(e.name + " (composite, " + std::to_string(composite.size()) +
                                    " glyphs)");
    loaded.push_back(std::move(composite));
  }
  for (auto& c : loaded)
    if (c.size() >= 10) c = split(std::move(c), {}, derive_seed(seed, "split:" + c.name));
  return loaded;
}

void save_corpus(const ScriptCorpus& corpus, const fs::path& prefix) {
  if (corpus.glyphs.empty()) throw InvalidInput("save_corpus: empty corpus " + corpus.name);
  const int side = corpus.glyphs.front().pixels.rows;
  std::vector<float> data;
  data.reserve(corpus.size() * side * side);
  json glyphs = json::array();
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& g = corpus.glyphs[i];
    cv::Mat inten = g.intensity();
    if (inten.rows != side || inten.cols != side)
      throw ShapeError("save_corpus: glyphs differ in size");
    if (!inten.isContinuous()) inten = inten.clone();
    data.insert(data.end(), inten.ptr<float>(), inten.ptr<float>() + side * side);
    json jg{{"id", g.glyph_id}, {"script", g.script}, {"provenance", g.provenance}};
    if (corpus.has_splits()) jg["split"] = to_string(corpus.splits[i]);
    glyphs.push_back(jg);
  }
  const int64_t shape[3] = {static_cast<int64_t>(corpus.size()), side, side};
  io::write_npy<float>(fs::path(prefix.string() + ".npy"), data, shape);
  io::write_json(fs::path(prefix.string() + ".json"),
                 json{{"name", corpus.name},
                      {"role", to_string(corpus.role)},
                      {"size", corpus.size()},
                      {"image_size", side},
                      {"content", "pre-normalization intensity in [0,1]"},
                      {"glyphs", glyphs}});
}

ScriptCorpus load_saved_corpus(const fs::path& prefix) {
  const fs::path meta_path(prefix.string() + ".json");
  const fs::path data_path(prefix.string() + ".npy");
  if (!fs::exists(meta_path) || !fs::exists(data_path))
    throw MissingArtifact("prepared corpus missing: " + prefix.string(), "prepare");
  const json meta = io::read_json(meta_path);
  const auto arr = io::read_npy<float>(data_path);
  ScriptCorpus c;
  c.name = meta.at("name").get<std::string>();
  c.role = parse_role(meta.at("role").get<std::string>());
  const auto& glyphs = meta.at("glyphs");
  if (arr.shape.size() != 3 || arr.shape[0] != static_cast<int64_t>(glyphs.size()))
    throw ShapeError("prepared corpus data does not match its index: " + prefix.string());
  const int side = static_cast<int>(arr.shape[1]);
  bool any_split = false;
  for (size_t i = 0; i < glyphs.size(); ++i) {
    const auto& jg = glyphs[i];
    cv::Mat inten(side, side, CV_32F,
                  const_cast<float*>(arr.data.data() + i * static_cast<size_t>(side * side)));
    GlyphImage g;
    g.pixels = inten.clone();
    g.script = jg.at("script").get<std::string>();
    g.glyph_id = jg.at("id").get<std::string>();
    g.provenance = jg.value("provenance", std::string());
    c.glyphs.push_back(standardize(std::move(g), side));
    if (jg.contains("split")) {
      any_split = true;
      c.splits.push_back(parse_split(jg.at("split").get<std::string>()));
    }
  }
  if (any_split && c.splits.size() != c.glyphs.size())
    throw InvalidInput("prepared corpus has partial split labels: " + prefix.string());
  c.validate();
  return c;
}

}  // namespace glyphsim::corpus
