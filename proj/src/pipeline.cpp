#include "glyphsim/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <boost/version.hpp>
#include <Eigen/Core>
#include <opencv2/core/version.hpp>
#include <opencv2/imgcodecs.hpp>
#include <torch/version.h>

#include "CLI11.hpp"
#include "glyphsim/analysis.hpp"
#include "glyphsim/ensemble.hpp"
#include "glyphsim/error.hpp"
#include "glyphsim/explain.hpp"
#include "glyphsim/io.hpp"
#include "glyphsim/plots.hpp"
#include "glyphsim/rng.hpp"
#include "glyphsim/synthetic.hpp"

namespace glyphsim::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ostream& logger(const CommandOptions& o) { return o.log ? *o.log : std::clog; }

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

// Glyph ids may carry a composite source prefix ("src/file.png").
std::string file_stem(std::string id) {
  std::replace(id.begin(), id.end(), '/', '_');
  std::replace(id.begin(), id.end(), '#', '_');
  const auto dot = id.rfind('.');
  if (dot != std::string::npos && dot > 0) id.erase(dot);
  return id;
}

json versions() {
  return json{{"glyphsim", kVersion},
              {"torch", TORCH_VERSION},
              {"opencv", CV_VERSION},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"boost", BOOST_LIB_VERSION}};
}

void record_run(const RunConfig& config, const std::string& command) {
  const fs::path dir = config.run_dir();
  fs::create_directories(dir);
  json seeds{{"root", config.seed},
             {"members", config.train.seeds},
             {"corpus", derive_seed(config.seed, "corpus")},
             {"expand", derive_seed(config.seed, "expand")},
             {"subsample", derive_seed(config.seed, "subsample")},
             {"tsne", derive_seed(config.seed, "tsne")}};
  json supplied = config.user;
  json overrides = json::array();
  if (supplied.is_object() && supplied.contains("_overrides")) {
    overrides = supplied["_overrides"];
    supplied.erase("_overrides");
  }
  json doc{{"config", config.to_json()},
           {"supplied", supplied},
           {"overrides", overrides},
           {"seeds", seeds},
           {"versions", versions()},
           {"last_command", command}};
  io::write_json(dir / "run_config.json", doc);
}

json read_required(const fs::path& path, const std::string& what, const std::string& producer) {
  if (!fs::exists(path)) throw MissingArtifact(what + " not found at " + path.string(), producer);
  return io::read_json(path);
}

void write_table(const io::Table& t, const fs::path& path) {
  fs::create_directories(path.parent_path());
  t.save(path);
}

struct CorpusInfo {
  std::string name;
  corpus::Role role;
};

std::vector<CorpusInfo> prepared_index(const fs::path& run_dir) {
  const json j = read_required(run_dir / "corpora" / "index.json", "prepared corpora", "prepare");
  std::vector<CorpusInfo> out;
  for (const auto& e : j.at("corpora"))
    out.push_back({e.at("name").get<std::string>(), corpus::parse_role(e.at("role").get<std::string>())});
  return out;
}

fs::path embedding_prefix(const fs::path& run_dir, const std::string& ens, const std::string& model,
                          const std::string& script) {
  return run_dir / "embeddings" / ens / model / script;
}

json embedding_index(const fs::path& run_dir) {
  return read_required(run_dir / "embeddings" / "index.json", "embedding index", "embed");
}

void check_partial(const json& ens_entry, const std::string& name, const CommandOptions& options) {
  if (ens_entry.value("partial", false) && !options.allow_partial)
    throw ConfigError("ensemble '" + name + "' is partial; pass --allow-partial to use it anyway");
}

std::vector<std::string> names_with_role(const std::vector<CorpusInfo>& info, corpus::Role role) {
  std::vector<std::string> out;
  for (const auto& c : info)
    if (c.role == role) out.push_back(c.name);
  return out;
}

// Consensus sets of every script embedded by one ensemble, in corpus order.
std::vector<ensemble::EmbeddingSet> consensus_sets(const fs::path& run_dir, const std::string& ens,
                                                   const std::vector<CorpusInfo>& info) {
  std::vector<ensemble::EmbeddingSet> sets;
  for (const auto& c : info) sets.push_back(ensemble::EmbeddingSet::load(embedding_prefix(run_dir, ens, "consensus", c.name)));
  return sets;
}

std::vector<std::string> ensemble_names(const json& index) {
  std::vector<std::string> out;
  for (const auto& [name, _] : index.at("ensembles").items()) out.push_back(name);
  return out;
}

json projection_json(const structure::Projection& p) {
  json coords = json::array();
  for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < p.coords.cols(); ++k) row.push_back(p.coords(i, k));
    coords.push_back(row);
  }
  json j{{"method", p.method}, {"coords", coords}, {"rank_deficient", p.rank_deficient}};
  if (p.method == "pca") {
    j["explained_variance_ratio"] = p.explained;
    j["title"] = p.variance_title();
  }
  return j;
}

io::Table heatmap_table(const structure::Heatmap& h) {
  std::vector<std::string> header{"Script"};
  header.insert(header.end(), h.labels.begin(), h.labels.end());
  io::Table t(header);
  for (size_t i = 0; i < h.labels.size(); ++i) {
    std::vector<std::string> row{h.labels[i]};
    for (size_t k = 0; k < h.labels.size(); ++k)
      row.push_back(io::format_fixed(h.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)), 6));
    t.add_row(row);
  }
  return t;
}

json report_json(const analysis::AnalysisReport& r) {
  json means = json::object();
  for (const auto& [c, by_target] : r.distributions)
    for (const auto& [t, by_model] : by_target)
      for (const auto& [m, d] : by_model) means[c][t][m] = {{"mean", d.mean}, {"std", d.std}, {"n", d.n}};
  json tests = json::array();
  for (const auto& t : r.tests)
    tests.push_back({{"comparison_script", t.comparison_script},
                     {"model", t.model},
                     {"test", t.test_name},
                     {"mean1", t.mean1},
                     {"mean2", t.mean2},
                     {"difference", t.difference},
                     {"t_stat", t.t_stat},
                     {"p_value", t.p_value},
                     {"cohens_d", t.cohens_d},
                     {"effect_size", t.effect_label},
                     {"significant", t.significant},
                     {"better_match", t.better_match},
                     {"degenerate", t.degenerate}});
  json paired = json::array();
  for (const auto& p : r.paired)
    paired.push_back({{"comparison_script", p.comparison_script},
                      {"test", p.test_name},
                      {"mean_difference", p.test.mean_difference},
                      {"sd_difference", p.test.sd_difference},
                      {"t_stat", p.test.t},
                      {"p_value", p.test.p},
                      {"df", p.test.df},
                      {"significant", p.significant},
                      {"degenerate", p.test.degenerate}});
  json stability = json::object();
  for (const auto& [c, s] : r.stability) {
    json lo = json::array();
    for (const auto& [m, t] : s.leave_out_top) lo.push_back({{"left_out", m}, {"top", t}});
    stability[c] = {{"stable", s.stable}, {"top", s.top}, {"leave_out_top", lo}, {"dissenting", s.dissenting}};
  }
  json summaries = json::object();
  for (const auto& [t, rows] : r.summaries) {
    json arr = json::array();
    for (const auto& s : rows)
      arr.push_back({{"script", s.script},
                     {"mean", s.mean},
                     {"std", s.std},
                     {"ci_lower", s.ci_lower},
                     {"ci_upper", s.ci_upper}});
    summaries[t] = arr;
  }
  return json{{"comparisons", r.comparisons},
              {"targets", r.targets},
              {"models", r.models},
              {"alpha", r.alpha},
              {"alpha_corrected", r.alpha_corrected},
              {"n_tests", r.n_tests},
              {"mean_similarity", means},
              {"tests", tests},
              {"paired", paired},
              {"stability", stability},
              {"summaries", summaries}};
}

// Table files written by `analyze`, in report order: (file, caption).
const std::vector<std::pair<std::string, std::string>> kAnalysisTables = {
    {"mean_similarity.csv", "Mean cosine similarity (member mean)"},
    {"effect_sizes.csv", "Cohen's d between target pairs"},
    {"similarity_matrix.csv", "Similarity matrix across models"},
    {"statistical_tests.csv", "Statistical tests"},
    {"similarity_summary.csv", "Script similarity summary"},
    {"paired_tests.csv", "Paired tests across members"},
    {"stability.csv", "Leave-one-out stability"},
};

std::string markdown_table(const io::Table& t) {
  std::ostringstream out;
  out << '|';
  for (const auto& h : t.header()) out << ' ' << h << " |";
  out << "\n|";
  for (size_t i = 0; i < t.header().size(); ++i) out << " --- |";
  out << '\n';
  for (const auto& row : t.rows()) {
    out << '|';
    for (const auto& cell : row) out << ' ' << cell << " |";
    out << '\n';
  }
  return out.str();
}

}  // namespace

// ---------------------------------------------------------------- config

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::string_view rest = key;
  while (true) {
    const auto dot = rest.find('.');
    const std::string part(rest.substr(0, dot));
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string_view::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    rest.remove_prefix(dot + 1);
  }
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  static const std::set<std::string> known{"manifest", "synthetic", "preset", "encoder", "train",
                                           "augment", "preprocess", "analysis", "output_dir", "seed",
                                           "expand", "ensembles"};
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  RunConfig c;
  c.user = j;
  if (j.contains("manifest")) c.manifest = resolve(j.at("manifest").get<std::string>(), base);
  if (j.contains("synthetic")) c.synthetic = resolve(j.at("synthetic").get<std::string>(), base);
  c.preset = j.value("preset", c.preset);
  json enc = model::EncoderConfig::from_preset(c.preset).to_json();
  if (j.contains("encoder")) enc.merge_patch(j.at("encoder"));
  enc["preset"] = c.preset;
  c.encoder = model::EncoderConfig::from_json(enc);
  c.encoder.validate();

  json train = json::object();
  if (c.preset == "tiny") train["batch_size"] = 16;
  if (j.contains("train")) train.merge_patch(j.at("train"));
  c.train = trainer::TrainConfig::from_json(train);
  c.train.validate();

  if (j.contains("augment")) c.augment = augment::AugmentationPolicy::from_json(j.at("augment"));
  c.augment.validate();
  if (j.contains("preprocess")) c.preprocess = corpus::PreprocessOptions::from_json(j.at("preprocess"));

  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    auto& o = c.analysis;
    o.alpha = a.value("alpha", o.alpha);
    o.subsample_threshold = a.value("subsample_threshold", o.subsample_threshold);
    o.subsample_cap = a.value("subsample_cap", o.subsample_cap);
    o.tsne_perplexity = a.value("tsne_perplexity", o.tsne_perplexity);
    o.tsne_iterations = a.value("tsne_iterations", o.tsne_iterations);
    if (a.contains("linkages")) {
      o.linkages.clear();
      for (const auto& l : a.at("linkages")) o.linkages.push_back(structure::parse_linkage(l.get<std::string>()));
    }
    o.gradcam_per_script = a.value("gradcam_per_script", o.gradcam_per_script);
    o.foreground_threshold = a.value("foreground_threshold", o.foreground_threshold);
    o.foreground_radius = a.value("foreground_radius", o.foreground_radius);
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw ConfigError("analysis.alpha must lie in (0, 1)");
    if (o.subsample_cap < 2) throw ConfigError("analysis.subsample_cap must be at least 2");
    if (o.linkages.empty()) throw ConfigError("analysis.linkages is empty");
  }

  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  c.seed = j.value("seed", c.seed);
  c.expand = j.value("expand", c.expand);
  if (c.expand < 0) throw ConfigError("expand must be >= 0");
  if (j.contains("ensembles")) {
    for (const auto& e : j.at("ensembles")) {
      EnsembleSpec s;
      s.name = e.at("name").get<std::string>();
      s.train_on = e.at("train_on").get<std::vector<std::string>>();
      s.serves = e.value("serves", std::vector<std::string>{});
      if (s.train_on.empty()) throw ConfigError("ensemble '" + s.name + "' trains on nothing");
      c.ensembles.push_back(s);
    }
  }
  if (c.manifest.empty() && c.synthetic.empty()) throw ConfigError("config needs a manifest or a synthetic fixture");
  return c;
}

RunConfig RunConfig::load(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json doc = io::read_json(path);
  for (const auto& o : overrides) apply_override(doc, o);
  auto c = from_json(doc, fs::absolute(path).parent_path());
  c.user["_overrides"] = overrides;
  return c;
}

json RunConfig::to_json() const {
  json analysis_json{{"alpha", analysis.alpha},
                     {"subsample_threshold", analysis.subsample_threshold},
                     {"subsample_cap", analysis.subsample_cap},
                     {"tsne_perplexity", analysis.tsne_perplexity},
                     {"tsne_iterations", analysis.tsne_iterations},
                     {"gradcam_per_script", analysis.gradcam_per_script},
                     {"foreground_threshold", analysis.foreground_threshold},
                     {"foreground_radius", analysis.foreground_radius}};
  json linkages = json::array();
  for (auto l : analysis.linkages) linkages.push_back(structure::to_string(l));
  analysis_json["linkages"] = linkages;
  json ens = json::array();
  for (const auto& e : ensembles) ens.push_back({{"name", e.name}, {"train_on", e.train_on}, {"serves", e.serves}});
  json j{{"preset", preset},
         {"encoder", encoder.to_json()},
         {"train", train.to_json()},
         {"augment", augment.to_json()},
         {"preprocess", preprocess.to_json()},
         {"analysis", analysis_json},
         {"output_dir", output_dir.string()},
         {"seed", seed},
         {"expand", expand},
         {"ensembles", ens}};
  if (!manifest.empty()) j["manifest"] = manifest.string();
  if (!synthetic.empty()) j["synthetic"] = synthetic.string();
  return j;
}

fs::path RunConfig::run_dir() const {
  if (output_dir.is_absolute()) return output_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / output_dir;
  return fs::absolute(output_dir);
}

fs::path RunConfig::manifest_path() const {
  return manifest.empty() ? run_dir() / "synthetic" / "manifest.json" : manifest;
}

std::vector<EnsembleSpec> RunConfig::resolved_ensembles(const corpus::CorpusManifest& m) const {
  std::vector<EnsembleSpec> out = ensembles;
  if (out.empty()) {
    for (const auto& e : m.entries)
      if (e.role == corpus::Role::target) out.push_back({e.name, {e.name}, {e.name}});
  }
  std::set<std::string> served, names;
  for (auto& e : out) {
    if (!names.insert(e.name).second) throw ConfigError("duplicate ensemble '" + e.name + "'");
    if (e.serves.empty()) e.serves = e.train_on;
    for (const auto& n : e.train_on)
      if (!m.find(n)) throw ConfigError("ensemble '" + e.name + "' trains on unknown corpus '" + n + "'");
    for (const auto& n : e.serves) {
      const auto* entry = m.find(n);
      if (!entry) throw ConfigError("ensemble '" + e.name + "' serves unknown corpus '" + n + "'");
      if (entry->role != corpus::Role::target)
        throw ConfigError("ensemble '" + e.name + "' serves '" + n + "', which is not a target");
      if (!served.insert(n).second) throw ConfigError("target '" + n + "' is served by two ensembles");
    }
  }
  for (const auto& e : m.entries)
    if (e.role == corpus::Role::target && !served.count(e.name))
      throw ConfigError("target '" + e.name + "' has no ensemble");
  return out;
}

// ---------------------------------------------------------------- commands

void cmd_synth(const fs::path& fixture, const fs::path& out_dir, const CommandOptions& options) {
  const auto f = synthetic::SyntheticFixture::load(fixture);
  const auto m = synthetic::generate_synthetic(f, out_dir);
  logger(options) << "synth: " << m.entries.size() << " families written to " << out_dir.string() << "\n";
}

std::vector<corpus::ScriptCorpus> load_prepared(const fs::path& run_dir) {
  std::vector<corpus::ScriptCorpus> out;
  for (const auto& c : prepared_index(run_dir)) out.push_back(corpus::load_saved_corpus(run_dir / "corpora" / c.name));
  return out;
}

void cmd_prepare(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  if (config.manifest.empty()) {
    const auto f = synthetic::SyntheticFixture::load(config.synthetic);
    synthetic::generate_synthetic(f, run / "synthetic");
  }
  const auto manifest = corpus::CorpusManifest::load(config.manifest_path());
  config.resolved_ensembles(manifest);
  corpus::LoadReport report;
  const auto corpora =
      corpus::load_manifest(manifest, report, config.preprocess, derive_seed(config.seed, "corpus"), config.augment);
  json index = json::array();
  for (const auto& c : corpora) {
    if (c.glyphs.empty()) throw InvalidInput("corpus '" + c.name + "' has no loadable glyphs");
    corpus::save_corpus(c, run / "corpora" / c.name);
    index.push_back({{"name", c.name},
                     {"role", corpus::to_string(c.role)},
                     {"size", c.size()},
                     {"train", c.count(corpus::Split::train)},
                     {"val", c.count(corpus::Split::val)},
                     {"test", c.count(corpus::Split::test)}});
    logger(options) << "prepare: " << c.name << " " << c.size() << " glyphs\n";
  }
  io::write_json(run / "corpora" / "index.json", json{{"corpora", index}});
  io::write_text(run / "corpora" / "load_report.txt", report.to_text());
  record_run(config, "prepare");
}

void cmd_train(const RunConfig& config, const CommandOptions& options) {
  if (config.preset == "paper" && !options.force)
    throw ConfigError(
        "the paper preset trains full-size encoders for many epochs; use preset \"tiny\" or pass --force");
  const fs::path run = config.run_dir();
  const auto corpora = load_prepared(run);
  const auto manifest = corpus::CorpusManifest::load(config.manifest_path());
  auto& log = logger(options);
  for (const auto& spec : config.resolved_ensembles(manifest)) {
    std::vector<corpus::ScriptCorpus> expanded;
    std::vector<const corpus::ScriptCorpus*> used;
    for (const auto& name : spec.train_on) {
      auto it = std::find_if(corpora.begin(), corpora.end(), [&](const auto& c) { return c.name == name; });
      if (it == corpora.end()) throw MissingArtifact("prepared corpus '" + name + "'", "prepare");
      used.push_back(&*it);
    }
    if (config.expand > 0) {
      expanded.reserve(used.size());
      for (const auto* c : used) {
        Rng rng(derive_seed(config.seed, "expand:" + c->name));
        expanded.push_back(augment::expand(*c, config.expand, config.augment, rng));
      }
      used.clear();
      for (const auto& c : expanded) used.push_back(&c);
    }
    const auto data = trainer::collect_splits(used);
    log << "train: ensemble " << spec.name << " on " << data.train.size() << " train / " << data.val.size()
        << " val glyphs\n";
    const auto on_epoch = [&](const trainer::EpochStats& s) {
      log << "  epoch " << s.epoch << " train " << io::format_fixed(s.train_loss, 5) << " val "
          << io::format_fixed(s.val_loss, 5) << " lr " << io::format_double(s.lr) << "\n";
    };
    const auto result = trainer::train_ensemble(spec.name, data, config.encoder, config.train, config.augment, run, on_epoch);
    ensemble::save_training_record(run, result);
    write_table(trainer::training_summary(result.records), run / "tables" / ("training_summary_" + spec.name + ".csv"));
    for (const auto& r : result.records)
      log << "  member " << r.model_idx << " seed " << r.seed << " best val "
          << io::format_double(r.best_val_loss) << " @ epoch " << r.best_epoch
          << (r.diverged ? " (diverged: " + r.diagnostic + ")" : std::string()) << "\n";
  }
  record_run(config, "train");
}

void cmd_embed(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  const auto corpora = load_prepared(run);
  const auto manifest = corpus::CorpusManifest::load(config.manifest_path());
  json index{{"ensembles", json::object()}};
  for (const auto& spec : config.resolved_ensembles(manifest)) {
    const auto ens = ensemble::Ensemble::load(run, spec.name);
    if (ens.partial && !options.allow_partial)
      throw ConfigError("ensemble '" + spec.name + "' has " + std::to_string(ens.members.size()) + " of " +
                        std::to_string(ens.expected_members) + " members; pass --allow-partial to embed anyway");
    const auto cfg = ens.config();
    std::vector<std::string> models;
    for (const auto& m : ens.members) models.push_back(ensemble::member_id(m.model_idx));
    for (const auto& c : corpora) {
      std::vector<ensemble::EmbeddingSet> sets;
      for (const auto& m : ens.members) {
        sets.push_back(ensemble::member_embed(m, c, &cfg));
        sets.back().save(embedding_prefix(run, spec.name, sets.back().model_id, c.name));
      }
      ensemble::consensus(sets).save(embedding_prefix(run, spec.name, "consensus", c.name));
      logger(options) << "embed: " << spec.name << " / " << c.name << " (" << c.size() << " glyphs)\n";
    }
    json scripts = json::array();
    for (const auto& c : corpora) scripts.push_back(c.name);
    index["ensembles"][spec.name] = {{"models", models},
                                     {"scripts", scripts},
                                     {"serves", spec.serves},
                                     {"partial", ens.partial},
                                     {"dim", cfg.embedding_dim}};
  }
  io::write_json(run / "embeddings" / "index.json", index);
  record_run(config, "embed");
}

void cmd_analyze(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  const auto info = prepared_index(run);
  const json index = embedding_index(run);
  analysis::EmbeddingIndex emb;
  for (const auto& [name, entry] : index.at("ensembles").items()) {
    check_partial(entry, name, options);
    std::vector<std::string> models = entry.at("models").get<std::vector<std::string>>();
    models.push_back("consensus");
    for (const auto& target : entry.at("serves").get<std::vector<std::string>>())
      for (const auto& m : models)
        for (const auto& c : info) emb[target][m][c.name] = ensemble::EmbeddingSet::load(embedding_prefix(run, name, m, c.name));
  }
  analysis::BatteryConfig bc;
  bc.comparisons = names_with_role(info, corpus::Role::comparison);
  bc.targets = names_with_role(info, corpus::Role::target);
  bc.alpha = config.analysis.alpha;
  bc.subsample = {config.analysis.subsample_threshold, config.analysis.subsample_cap,
                  derive_seed(config.seed, "subsample")};
  const auto report = analysis::run_battery(emb, bc);
  const fs::path tables = run / "tables";
  const io::Table all[] = {report.table_mean_similarity(), report.table_effect_sizes(), report.table_model_matrix(),
                           report.table_statistics(),      report.table_summary(),      report.table_paired(),
                           report.table_stability()};
  for (size_t i = 0; i < kAnalysisTables.size(); ++i) write_table(all[i], tables / kAnalysisTables[i].first);
  io::write_json(run / "analysis" / "analysis.json", report_json(report));
  logger(options) << "analyze: " << report.tests.size() << " tests, corrected alpha "
                  << io::format_double(report.alpha_corrected) << "\n";
  record_run(config, "analyze");
}

void cmd_cluster(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  const auto info = prepared_index(run);
  const json index = embedding_index(run);
  for (const auto& name : ensemble_names(index)) {
    check_partial(index.at("ensembles").at(name), name, options);
    const auto sets = consensus_sets(run, name, info);
    const fs::path dir = run / "clusters" / name;
    Eigen::MatrixXd points;
    std::vector<std::string> labels;
    const auto cents = structure::centroids(sets);
    if (options.fine) {
      Eigen::Index rows = 0;
      for (const auto& s : sets) rows += s.rows.rows();
      points.resize(rows, sets.front().dim());
      Eigen::Index at = 0;
      for (const auto& s : sets) {
        points.middleRows(at, s.rows.rows()) = s.rows;
        at += s.rows.rows();
        for (const auto& g : s.glyph_ids) labels.push_back(s.script + ":" + g);
      }
    } else {
      points = cents.rows;
      labels = cents.labels;
    }
    json summary = json::object();
    std::optional<structure::Dendrogram> heat_order;
    for (const auto linkage : config.analysis.linkages) {
      const auto d = structure::hierarchical_cluster(points, labels, linkage);
      const std::string stem = (options.fine ? "fine_" : "") + structure::to_string(linkage);
      io::write_json(dir / (stem + ".json"), d.to_json());
      write_table(d.to_table(), dir / (stem + ".csv"));
      if (!options.fine || labels.size() <= 80) plots::save((dir / (stem + ".png")).string(), plots::dendrogram(d, "Script dendrogram " + name));
      json order = json::array();
      for (auto i : d.leaf_order()) order.push_back(labels[i]);
      summary[structure::to_string(linkage)] = order;
      if (!heat_order || linkage == structure::Linkage::average) heat_order = d;
    }
    if (!options.fine) {
      const auto h = structure::similarity_heatmap(cents, *heat_order);
      write_table(heatmap_table(h), dir / "heatmap.csv");
      plots::save((dir / "heatmap.png").string(), plots::heatmap(h, "Centroid cosine similarity " + name));
    }
    io::write_json(dir / (options.fine ? "fine_leaf_orders.json" : "leaf_orders.json"), summary);
    logger(options) << "cluster: " << name << " (" << labels.size() << " leaves)\n";
  }
  record_run(config, "cluster");
}

void cmd_project(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  const auto info = prepared_index(run);
  const json index = embedding_index(run);
  for (const auto& name : ensemble_names(index)) {
    check_partial(index.at("ensembles").at(name), name, options);
    const auto sets = consensus_sets(run, name, info);
    Eigen::Index rows = 0;
    for (const auto& s : sets) rows += s.rows.rows();
    Eigen::MatrixXd points(rows, sets.front().dim());
    std::vector<std::string> labels, groups;
    Eigen::Index at = 0;
    for (const auto& s : sets) {
      points.middleRows(at, s.rows.rows()) = s.rows;
      at += s.rows.rows();
      labels.insert(labels.end(), s.glyph_ids.begin(), s.glyph_ids.end());
      groups.insert(groups.end(), s.glyph_ids.size(), s.script);
    }
    const fs::path dir = run / "projections" / name;
    auto emit = [&](const structure::Projection& p, const std::string& stem, const std::string& title) {
      write_table(p.to_table(labels, groups), dir / (stem + ".csv"));
      io::write_json(dir / (stem + ".json"), projection_json(p));
      plots::save((dir / (stem + ".png")).string(), plots::scatter(p.coords, groups, title));
    };
    for (int dims : {2, 3}) {
      if (points.rows() <= dims) continue;
      const auto p = structure::pca_project(points, dims);
      emit(p, "pca" + std::to_string(dims), "PCA " + p.variance_title());
    }
    const double n = static_cast<double>(points.rows());
    if (n >= 5) {
      structure::TsneOptions t;
      t.perplexity = std::min(config.analysis.tsne_perplexity, (n - 1.0) / 3.0);
      t.iterations = config.analysis.tsne_iterations;
      t.seed = derive_seed(config.seed, "tsne:" + name);
      emit(structure::tsne_project(points, t), "tsne", "t-SNE (perplexity " + io::format_fixed(t.perplexity, 1) + ")");
    }
    logger(options) << "project: " << name << " (" << points.rows() << " glyphs)\n";
  }
  record_run(config, "project");
}

void cmd_gradcam(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  const auto corpora = load_prepared(run);
  const auto manifest = corpus::CorpusManifest::load(config.manifest_path());
  io::Table summary({"ensemble", "script", "glyph_id", "pathway", "layer", "degenerate", "top_decile_foreground"});
  for (const auto& spec : config.resolved_ensembles(manifest)) {
    auto ens = ensemble::Ensemble::load(run, spec.name);
    if (ens.members.empty()) throw MissingArtifact("no trained members for '" + spec.name + "'", "train");
    auto& member = ens.members.front();
    const fs::path dir = run / "gradcam" / spec.name;
    for (const auto& c : corpora) {
      const size_t count = config.analysis.gradcam_per_script > 0
                               ? std::min(c.size(), static_cast<size_t>(config.analysis.gradcam_per_script))
                               : c.size();
      for (size_t i = 0; i < count; ++i) {
        const auto& g = c.glyphs[i];
        const auto [cnn, swin] = explain::grad_cam_both(member.encoder, g);
        const cv::Mat inten = g.intensity();
        const cv::Mat mask =
            explain::foreground_mask(inten, config.analysis.foreground_threshold, config.analysis.foreground_radius);
        for (const auto* m : {&cnn, &swin}) {
          const std::string stem = file_stem(g.glyph_id) + "_" + explain::to_string(m->pathway);
          const int64_t shape[] = {m->heat.rows, m->heat.cols};
          cv::Mat heat = m->heat.isContinuous() ? m->heat : m->heat.clone();
          fs::create_directories(dir / c.name);
          io::write_npy<float>(dir / c.name / (stem + ".npy"),
                               std::span<const float>(heat.ptr<float>(), heat.total()), shape);
          plots::save((dir / c.name / (stem + ".png")).string(), explain::overlay(inten, m->heat));
          const double frac = m->degenerate ? 0.0 : explain::top_decile_mass_fraction(m->heat, mask);
          summary.add_row({spec.name, c.name, g.glyph_id, explain::to_string(m->pathway), m->layer,
                           m->degenerate ? "true" : "false", io::format_fixed(frac, 6)});
        }
      }
    }
    logger(options) << "gradcam: " << spec.name << " via " << ensemble::member_id(member.model_idx) << "\n";
  }
  write_table(summary, run / "gradcam" / "summary.csv");
  record_run(config, "gradcam");
}

void cmd_report(const RunConfig& config, const CommandOptions& options) {
  const fs::path run = config.run_dir();
  const json analysis_doc = read_required(run / "analysis" / "analysis.json", "analysis results", "analyze");
  json artifacts = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), run));
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string top = f.begin()->string();
    if (top == "report.md" || top == "index.json" || top == "synthetic" || top == "corpora") continue;
    const std::string ext = f.extension().string();
    const std::string kind = ext == ".csv" ? "tables" : ext == ".png" ? "figures" : ext == ".npy" ? "arrays" : ext == ".pth" ? "checkpoints" : "data";
    artifacts[kind][top].push_back(f.generic_string());
  }
  json idx{{"run_dir", run.string()},
           {"version", kVersion},
           {"alpha", analysis_doc.at("alpha")},
           {"alpha_corrected", analysis_doc.at("alpha_corrected")},
           {"n_tests", analysis_doc.at("n_tests")},
           {"stability", analysis_doc.at("stability")},
           {"artifacts", artifacts}};
  io::write_json(run / "index.json", idx);

  std::ostringstream md;
  md << "# glyphsim run report\n\n";
  md << "Corrected significance level: " << io::format_double(analysis_doc.at("alpha_corrected").get<double>()) << " ("
     << analysis_doc.at("n_tests").get<size_t>() << " tests)\n\n";
  std::vector<fs::path> training;
  if (fs::exists(run / "tables"))
    for (const auto& e : fs::directory_iterator(run / "tables"))
      if (e.path().filename().string().rfind("training_summary_", 0) == 0) training.push_back(e.path());
  std::sort(training.begin(), training.end());
  for (const auto& t : training)
    md << "## Training summary (" << t.stem().string().substr(17) << ")\n\n" << markdown_table(io::Table::load(t)) << "\n";
  for (const auto& [file, caption] : kAnalysisTables) {
    const fs::path p = run / "tables" / file;
    if (fs::exists(p)) md << "## " << caption << "\n\n" << markdown_table(io::Table::load(p)) << "\n";
  }
  if (artifacts.contains("figures")) {
    md << "## Figures\n\n";
    for (const auto& [group, list] : artifacts["figures"].items()) {
      if (group == "gradcam") {
        md << "- gradcam: " << list.size() << " overlays under gradcam/\n";
        continue;
      }
      for (const auto& f : list) md << "- ![" << f.get<std::string>() << "](" << f.get<std::string>() << ")\n";
    }
  }
  io::write_text(run / "report.md", md.str());
  logger(options) << "report: " << (run / "report.md").string() << "\n";
  record_run(config, "report");
}

// ---------------------------------------------------------------- CLI

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"glyphsim: contrastive visual-similarity analysis of glyph corpora"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, fixture_path, out_dir, output;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<size_t> subsample_cap;
  CommandOptions options;
  options.log = &out;

  auto* synth = app.add_subcommand("synth", "render the synthetic fixture into a corpus tree");
  synth->add_option("fixture", fixture_path, "fixture JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("out", out_dir, "output directory")->required();

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"prepare", "load, preprocess and split corpora"},
      {"train", "train one ensemble per target"},
      {"embed", "member and consensus embeddings"},
      {"analyze", "similarity statistics and tables"},
      {"cluster", "dendrograms and similarity heatmap"},
      {"project", "PCA and t-SNE projections"},
      {"gradcam", "dual-pathway Grad-CAM maps"},
      {"report", "assemble tables and figures into report.md and index.json"},
      {"all", "run prepare through report"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("-c,--config", config_path, "run config JSON")->required()->check(CLI::ExistingFile);
    s->add_option("--set", overrides, "override a config key (key.path=value)");
    s->add_option("--seed", seed, "root seed");
    s->add_option("-o,--output", output, "run directory");
    s->add_flag("--force", options.force, "allow the paper preset to train");
    s->add_flag("--allow-partial", options.allow_partial, "accept ensembles missing members");
    s->add_option("--subsample-cap", subsample_cap, "values kept from large distributions");
    s->add_flag("--fine", options.fine, "cluster individual glyphs instead of script centroids");
    subs.push_back(s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      cmd_synth(fixture_path, out_dir, options);
      return 0;
    }
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (!output.empty()) overrides.push_back("output_dir=" + json(output).dump());
    if (subsample_cap) overrides.push_back("analysis.subsample_cap=" + std::to_string(*subsample_cap));
    const auto config = RunConfig::load(config_path, overrides);
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "prepare" || name == "all") cmd_prepare(config, options);
    if (name == "train" || name == "all") cmd_train(config, options);
    if (name == "embed" || name == "all") cmd_embed(config, options);
    if (name == "analyze" || name == "all") cmd_analyze(config, options);
    if (name == "cluster" || name == "all") cmd_cluster(config, options);
    if (name == "project" || name == "all") cmd_project(config, options);
    if (name == "gradcam" || name == "all") cmd_gradcam(config, options);
    if (name == "report" || name == "all") cmd_report(config, options);
    return 0;
  } catch (const MissingArtifact& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const InvalidInput& e) {
    err << "invalid input: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "malformed JSON: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace glyphsim::pipeline
