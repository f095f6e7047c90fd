#pragma once

// Ensemble members, per-member embeddings and the consensus (raw-space mean).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glyphsim/corpus.hpp"
#include "glyphsim/embedding.hpp"
#include "glyphsim/model.hpp"
#include "glyphsim/trainer.hpp"

namespace glyphsim::ensemble {

std::string member_id(int model_idx);  // 1-based idx -> "model_<idx-1>"

struct EnsembleMember {
  int model_idx = 0;
  uint64_t seed = 0;
  std::string path;
  model::HybridEncoder encoder{nullptr};
};

struct Ensemble {
  std::string name;
  std::vector<EnsembleMember> members;
  size_t expected_members = 0;
  bool partial = false;

  model::EncoderConfig config() const;
  // Members share one EncoderConfig.
  void validate() const;

  // Reads <run_dir>/training/<name>.json and the checkpoints it lists.
  static Ensemble load(const std::filesystem::path& run_dir, const std::string& name);
};

// Training record file written by `train`: {"name", "partial", "records": [...]}.
std::filesystem::path training_record_path(const std::filesystem::path& run_dir, const std::string& name);
void save_training_record(const std::filesystem::path& run_dir, const trainer::EnsembleTrainResult& result);

// Eval-mode embeddings of every glyph in `corpus`.
EmbeddingSet member_embed(const EnsembleMember& member, const corpus::ScriptCorpus& corpus,
                          const model::EncoderConfig* expected = nullptr, size_t batch_size = 32);

// Partial ensembles are refused unless allow_partial.
EmbeddingSet consensus_embed(const Ensemble& ensemble, const corpus::ScriptCorpus& corpus,
                             bool allow_partial = false);

}  // namespace glyphsim::ensemble
