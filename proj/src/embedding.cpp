#include "glyphsim/embedding.hpp"

#include "glyphsim/error.hpp"
#include "glyphsim/io.hpp"

namespace glyphsim::ensemble {

using nlohmann::json;
namespace fs = std::filesystem;

void EmbeddingSet::validate() const {
  if (static_cast<size_t>(rows.rows()) != glyph_ids.size())
    throw ShapeError("embedding set '" + script + "/" + model_id + "': row count does not match ids");
  for (size_t i = 1; i < glyph_ids.size(); ++i)
    if (!(glyph_ids[i - 1] < glyph_ids[i]))
      throw InvalidInput("embedding set ids must be unique and sorted: '" + glyph_ids[i] + "'");
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    if (!rows.row(i).allFinite())
      throw InvalidInput("non-finite embedding for glyph '" + glyph_ids[i] + "'");
}

EmbeddingSet EmbeddingSet::normalized() const {
  EmbeddingSet out = *this;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (n == 0.0) throw InvalidInput("zero-norm embedding for glyph '" + glyph_ids[i] + "'");
    out.rows.row(i) /= n;
  }
  return out;
}

void EmbeddingSet::save(const fs::path& prefix) const {
  validate();
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor m = rows;
  const int64_t shape[2] = {m.rows(), m.cols()};
  io::write_npy<double>(fs::path(prefix.string() + ".npy"),
                        std::span<const double>(m.data(), static_cast<size_t>(m.size())), shape);
  io::write_json(fs::path(prefix.string() + ".json"),
                 json{{"script", script}, {"model_id", model_id}, {"dim", m.cols()}, {"glyph_ids", glyph_ids}});
}

EmbeddingSet EmbeddingSet::load(const fs::path& prefix) {
  const fs::path meta = prefix.string() + ".json";
  const fs::path data = prefix.string() + ".npy";
  if (!fs::exists(meta) || !fs::exists(data))
    throw MissingArtifact("embedding set not found: " + prefix.string(), "embed");
  const auto j = io::read_json(meta);
  auto arr = io::read_npy<double>(data);
  EmbeddingSet s;
  s.script = j.at("script").get<std::string>();
  s.model_id = j.at("model_id").get<std::string>();
  s.glyph_ids = j.at("glyph_ids").get<std::vector<std::string>>();
  if (arr.shape.size() != 2) throw ShapeError("embedding matrix must be 2-D: " + data.string());
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  s.rows = Eigen::Map<RowMajor>(arr.data.data(), arr.shape[0], arr.shape[1]);
  s.validate();
  return s;
}

EmbeddingSet consensus(const std::vector<EmbeddingSet>& members) {
  if (members.empty()) throw InvalidInput("consensus of zero members");
  EmbeddingSet out;
  out.script = members.front().script;
  out.model_id = "consensus";
  out.glyph_ids = members.front().glyph_ids;
  out.rows = members.front().rows;
  // Running mean: identical members give back the member bit for bit.
  for (size_t k = 0; k < members.size(); ++k) {
    const auto& m = members[k];
    if (m.glyph_ids != out.glyph_ids || m.rows.rows() != out.rows.rows() || m.rows.cols() != out.rows.cols())
      throw ShapeError("consensus members disagree on glyphs or dimension");
    if (k > 0) out.rows += (m.rows - out.rows) / static_cast<double>(k + 1);
  }
  return out;
}

}  // namespace glyphsim::ensemble
