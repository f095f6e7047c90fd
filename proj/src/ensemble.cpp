#include "glyphsim/ensemble.hpp"

#include <algorithm>
#include <numeric>

#include "glyphsim/error.hpp"
#include "glyphsim/io.hpp"

namespace glyphsim::ensemble {

using nlohmann::json;
namespace fs = std::filesystem;

std::string member_id(int model_idx) { return "model_" + std::to_string(model_idx - 1); }

model::EncoderConfig Ensemble::config() const {
  if (members.empty()) throw InvalidInput("ensemble '" + name + "' has no members");
  return members.front().encoder->config();
}

void Ensemble::validate() const {
  const auto first = config();
  for (const auto& m : members)
    if (!(m.encoder->config() == first))
      throw ConfigError("ensemble '" + name + "': members disagree on the encoder configuration");
}

fs::path training_record_path(const fs::path& run_dir, const std::string& name) {
  return run_dir / "training" / (name + ".json");
}

void save_training_record(const fs::path& run_dir, const trainer::EnsembleTrainResult& result) {
  json records = json::array();
  for (const auto& r : result.records) records.push_back(r.to_json());
  io::write_json(training_record_path(run_dir, result.name),
                 json{{"name", result.name}, {"partial", result.partial}, {"records", records}});
}

Ensemble Ensemble::load(const fs::path& run_dir, const std::string& name) {
  const auto path = training_record_path(run_dir, name);
  if (!fs::exists(path)) throw MissingArtifact("no trained ensemble '" + name + "' in " + run_dir.string(), "train");
  const auto j = io::read_json(path);
  Ensemble e;
  e.name = name;
  e.partial = j.value("partial", false);
  for (const auto& rj : j.at("records")) {
    ++e.expected_members;
    const auto record = trainer::TrainRecord::from_json(rj);
    if (record.diverged || record.model_path.empty()) {
      e.partial = true;
      continue;
    }
    auto ck = model::load_checkpoint(run_dir / record.model_path);
    ck.encoder->eval();
    e.members.push_back({record.model_idx, record.seed, record.model_path, ck.encoder});
  }
  if (e.members.empty()) throw InvalidInput("ensemble '" + name + "' has no usable members");
  e.validate();
  return e;
}

EmbeddingSet member_embed(const EnsembleMember& member, const corpus::ScriptCorpus& corpus,
                          const model::EncoderConfig* expected, size_t batch_size) {
  if (corpus.glyphs.empty()) throw InvalidInput("cannot embed empty corpus '" + corpus.name + "'");
  const auto& config = member.encoder->config();
  if (expected && !(*expected == config))
    throw ConfigError("member " + member_id(member.model_idx) + " does not match the ensemble configuration");

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return corpus.glyphs[a].glyph_id < corpus.glyphs[b].glyph_id; });

  EmbeddingSet out;
  out.script = corpus.name;
  out.model_id = member_id(member.model_idx);
  out.rows.resize(static_cast<Eigen::Index>(corpus.size()), config.embedding_dim);

  auto encoder = member.encoder;
  const bool was_training = encoder->is_training();
  encoder->eval();
  torch::NoGradGuard no_grad;
  for (size_t lo = 0; lo < order.size(); lo += batch_size) {
    const size_t hi = std::min(order.size(), lo + batch_size);
    std::vector<corpus::GlyphImage> part;
    for (size_t i = lo; i < hi; ++i) {
      const auto& g = corpus.glyphs[order[i]];
      if (g.pixels.rows != config.image_size || g.pixels.cols != config.image_size)
        throw ShapeError("glyph '" + g.glyph_id + "' does not match the encoder input size");
      part.push_back(g);
      out.glyph_ids.push_back(g.glyph_id);
    }
    auto z = encoder->forward(trainer::to_batch(part)).to(torch::kDouble).contiguous();
    auto acc = z.accessor<double, 2>();
    for (size_t i = lo; i < hi; ++i)
      for (int64_t c = 0; c < z.size(1); ++c) out.rows(static_cast<Eigen::Index>(i), c) = acc[i - lo][c];
  }
  encoder->train(was_training);
  out.validate();
  return out;
}

EmbeddingSet consensus_embed(const Ensemble& ensemble, const corpus::ScriptCorpus& corpus,
                             bool allow_partial) {
  if (ensemble.partial && !allow_partial)
    throw InvalidInput("ensemble '" + ensemble.name + "' is partial (" +
                       std::to_string(ensemble.members.size()) + " of " +
                       std::to_string(ensemble.expected_members) +
                       " members); pass --allow-partial to use it");
  const auto config = ensemble.config();
  std::vector<EmbeddingSet> sets;
  for (const auto& m : ensemble.members) sets.push_back(member_embed(m, corpus, &config));
  return consensus(sets);
}

}  // namespace glyphsim::ensemble
