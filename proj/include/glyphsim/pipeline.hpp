#pragma once

// Run configuration and the pipeline commands behind the `glyphsim` CLI.
// Commands throw; run_cli maps exceptions to exit codes (1 user error,
// 2 internal error).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "glyphsim/augment.hpp"
#include "glyphsim/corpus.hpp"
#include "glyphsim/model.hpp"
#include "glyphsim/structure.hpp"
#include "glyphsim/trainer.hpp"
#include "json.hpp"

namespace glyphsim::pipeline {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "GLYPHSIM_OUTPUT_ROOT";

// One trained ensemble: the corpora it learns from and the targets it embeds for.
struct EnsembleSpec {
  std::string name;
  std::vector<std::string> train_on;
  std::vector<std::string> serves;
};

struct AnalysisOptions {
  double alpha = 0.05;
  size_t subsample_threshold = 1000;
  size_t subsample_cap = 32;
  double tsne_perplexity = 30.0;
  int tsne_iterations = 1000;
  std::vector<structure::Linkage> linkages{std::begin(structure::kAllLinkages),
                                           std::end(structure::kAllLinkages)};
  int gradcam_per_script = 4;  // 0: every glyph
  double foreground_threshold = 0.25;
  int foreground_radius = 16;  // half a cell of the 7x7 map at 224
};

struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path synthetic;  // fixture rendered by `prepare` when no manifest is given
  std::string preset = "paper";
  model::EncoderConfig encoder = model::EncoderConfig::paper();
  trainer::TrainConfig train;
  augment::AugmentationPolicy augment;
  corpus::PreprocessOptions preprocess;
  AnalysisOptions analysis;
  std::filesystem::path output_dir = "glyphsim-run";
  uint64_t seed = 0;
  int expand = 0;  // materialized variants per training glyph (on-the-fly pairs regardless)
  std::vector<EnsembleSpec> ensembles;  // empty: one ensemble per target, trained on it
  nlohmann::json user;  // the keys the user actually supplied

  // Relative paths resolve against `base` (the config file's directory).
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static RunConfig load(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});
  nlohmann::json to_json() const;

  std::filesystem::path run_dir() const;  // honours GLYPHSIM_OUTPUT_ROOT for relative dirs
  std::filesystem::path manifest_path() const;
  std::vector<EnsembleSpec> resolved_ensembles(const corpus::CorpusManifest& manifest) const;
};

// "train.max_epochs=3" style override applied to a JSON document; the value is
// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct CommandOptions {
  bool force = false;
  bool allow_partial = false;
  bool fine = false;  // per-glyph clustering
  std::ostream* log = nullptr;
};

void cmd_synth(const std::filesystem::path& fixture, const std::filesystem::path& out_dir,
               const CommandOptions& options = {});
void cmd_prepare(const RunConfig& config, const CommandOptions& options = {});
void cmd_train(const RunConfig& config, const CommandOptions& options = {});
void cmd_embed(const RunConfig& config, const CommandOptions& options = {});
void cmd_analyze(const RunConfig& config, const CommandOptions& options = {});
void cmd_cluster(const RunConfig& config, const CommandOptions& options = {});
void cmd_project(const RunConfig& config, const CommandOptions& options = {});
void cmd_gradcam(const RunConfig& config, const CommandOptions& options = {});
void cmd_report(const RunConfig& config, const CommandOptions& options = {});

// Prepared corpora of a run, in manifest order.
std::vector<corpus::ScriptCorpus> load_prepared(const std::filesystem::path& run_dir);

// Full CLI entry point (argv[0] is the program name). Returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace glyphsim::pipeline
