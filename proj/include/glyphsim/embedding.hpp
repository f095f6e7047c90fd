#pragma once

// Embedding matrices keyed by glyph id; independent of the model backend so
// saved sets can be analysed on their own.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace glyphsim::ensemble {

// Rows sorted by glyph_id. Saved as <prefix>.npy (float64, n x d) and
// <prefix>.json {"script", "model_id", "glyph_ids", "dim"}.
struct EmbeddingSet {
  std::string script;
  std::string model_id;  // "model_0", ... or "consensus"
  std::vector<std::string> glyph_ids;
  Eigen::MatrixXd rows;

  size_t size() const { return glyph_ids.size(); }
  Eigen::Index dim() const { return rows.cols(); }
  // Finite rows, ids unique and sorted, row count matches.
  void validate() const;
  EmbeddingSet normalized() const;

  void save(const std::filesystem::path& prefix) const;
  static EmbeddingSet load(const std::filesystem::path& prefix);
};

// Per-glyph mean of member sets with identical glyph ids.
EmbeddingSet consensus(const std::vector<EmbeddingSet>& members);

}  // namespace glyphsim::ensemble
