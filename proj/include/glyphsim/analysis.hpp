#pragma once

// Cross-script cosine similarity and the statistics built on it.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "glyphsim/embedding.hpp"
#include "glyphsim/io.hpp"

namespace glyphsim::analysis {

using ensemble::EmbeddingSet;

struct SimilarityDistribution {
  std::string script_a;
  std::string script_b;
  std::string model_id;
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1)
  size_t n = 0;
};

// |A| x |B| cosine matrix; throws InvalidInput naming any zero-norm glyph.
Eigen::MatrixXd similarity_matrix(const EmbeddingSet& a, const EmbeddingSet& b);

// All cross cosine values. When both sets describe the same script, pairs of a
// glyph with itself are left out of the distribution.
SimilarityDistribution cross_script_similarity(const EmbeddingSet& a, const EmbeddingSet& b);

double mean(std::span<const double> x);
double sample_variance(std::span<const double> x);

struct TTest {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool degenerate = false;
};

// Welch statistic, Welch-Satterthwaite df, two-sided p.
TTest welch_t(std::span<const double> a, std::span<const double> b);

struct SubsampleOptions {
  size_t threshold = 1000;  // distributions larger than this are subsampled
  size_t cap = 32;          // ~sqrt(1000) values drawn without replacement
  uint64_t seed = 0;
};

// Returns `values` untouched at or below the threshold, else `cap` of them
// drawn without replacement (stream keyed by the distribution's labels).
std::vector<double> subsample(const SimilarityDistribution& dist, const SubsampleOptions& options);

TTest welch_t(const SimilarityDistribution& a, const SimilarityDistribution& b,
              const SubsampleOptions& options);

struct PairedTTest {
  double mean_difference = 0.0;
  double sd_difference = 0.0;
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool degenerate = false;
};

PairedTTest paired_model_t(std::span<const double> a, std::span<const double> b);

struct EffectSize {
  double d = 0.0;
  std::string label;
  bool degenerate = false;
};

std::string effect_label(double d);
EffectSize cohens_d(std::span<const double> a, std::span<const double> b);

double bonferroni(double alpha, size_t n_tests);

struct StabilityReport {
  bool stable = true;
  std::string top;  // top target with every model present
  std::vector<std::pair<std::string, std::string>> leave_out_top;  // (left-out model, top target)
  std::vector<std::string> dissenting;  // models whose own top differs from `top`
};

// per_model_means[model][target]; ties go to the lexicographically first target.
StabilityReport leave_one_out_stability(
    const std::map<std::string, std::map<std::string, double>>& per_model_means);

struct StatTestResult {
  std::string comparison_script;
  std::string model;
  std::string test_name;  // "<target1>_vs_<target2>"
  double mean1 = 0.0;
  double mean2 = 0.0;
  double difference = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;
  double cohens_d = 0.0;
  std::string effect_label;
  bool significant = false;
  std::string better_match;
  bool degenerate = false;
};

struct PairedResult {
  std::string comparison_script;
  std::string test_name;
  PairedTTest test;
  bool significant = false;
};

// embeddings[target][model_id][script]: every script as embedded by the
// ensemble serving that target. model ids are "model_<k>" plus optionally
// "consensus".
using EmbeddingIndex = std::map<std::string, std::map<std::string, std::map<std::string, EmbeddingSet>>>;

struct BatteryConfig {
  std::vector<std::string> comparisons;
  std::vector<std::string> targets;
  double alpha = 0.05;
  SubsampleOptions subsample;
};

struct ScriptSummary {
  std::string script;
  double mean = 0.0;
  double std = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
};

struct AnalysisReport {
  std::vector<std::string> comparisons;
  std::vector<std::string> targets;
  std::vector<std::string> models;  // members first, then "consensus" if present
  // mean_similarity[comparison][target][model]
  std::map<std::string, std::map<std::string, std::map<std::string, SimilarityDistribution>>> distributions;
  std::vector<StatTestResult> tests;
  std::vector<PairedResult> paired;
  std::map<std::string, StabilityReport> stability;  // per comparison script
  std::map<std::string, std::vector<ScriptSummary>> summaries;  // per target, sorted by mean
  double alpha = 0.05;
  double alpha_corrected = 0.05;
  size_t n_tests = 0;

  std::vector<std::string> member_models() const;

  io::Table table_mean_similarity() const;   // Comparison Script,<targets>
  io::Table table_effect_sizes() const;      // Comparison Script,<t1> vs. <t2>,...
  io::Table table_model_matrix() const;      // Comparison Script,Model,<targets>
  io::Table table_statistics() const;        // twelve-column test table
  io::Table table_summary() const;           // per-target centroid similarity with 95% CI
  io::Table table_paired() const;
  io::Table table_stability() const;
};

// Model ids ordered numerically ("model_2" < "model_10"), "consensus" last.
bool model_less(const std::string& a, const std::string& b);

AnalysisReport run_battery(const EmbeddingIndex& embeddings, const BatteryConfig& config);

// Cosine similarity of the two sets' mean rows.
double centroid_similarity(const EmbeddingSet& a, const EmbeddingSet& b);

}  // namespace glyphsim::analysis
