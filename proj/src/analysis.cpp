#include "glyphsim/analysis.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <numeric>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "glyphsim/error.hpp"
#include "glyphsim/rng.hpp"

namespace glyphsim::analysis {

namespace {

double two_sided_p(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

void require_two(std::span<const double> x, const char* what) {
  if (x.size() < 2) throw InvalidInput(std::string(what) + " needs at least 2 values");
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

std::string fixed(double x, int digits) { return io::format_fixed(x, digits); }

}  // namespace

Eigen::MatrixXd similarity_matrix(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.size() == 0 || b.size() == 0) throw InvalidInput("similarity of an empty embedding set");
  if (a.dim() != b.dim())
    throw ShapeError("embedding dimensions differ: " + std::to_string(a.dim()) + " vs " +
                     std::to_string(b.dim()));
  const auto na = a.normalized();
  const auto nb = b.normalized();
  Eigen::MatrixXd m = na.rows * nb.rows.transpose();
  return m.cwiseMax(-1.0).cwiseMin(1.0);
}

SimilarityDistribution cross_script_similarity(const EmbeddingSet& a, const EmbeddingSet& b) {
  const Eigen::MatrixXd m = similarity_matrix(a, b);
  const bool same_script = a.script == b.script;
  SimilarityDistribution d;
  d.script_a = a.script;
  d.script_b = b.script;
  d.model_id = a.model_id == b.model_id ? a.model_id : a.model_id + "|" + b.model_id;
  d.values.reserve(static_cast<size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (!(same_script && a.glyph_ids[i] == b.glyph_ids[j])) d.values.push_back(m(i, j));
  d.n = d.values.size();
  d.mean = d.n ? mean(d.values) : 0.0;
  d.std = d.n > 1 ? std::sqrt(sample_variance(d.values)) : 0.0;
  return d;
}

double mean(std::span<const double> x) {
  if (x.empty()) throw InvalidInput("mean of an empty sample");
  // constant samples come back exactly, so their variance is exactly zero
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) return x.front();
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  require_two(x, "sample variance");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

TTest welch_t(std::span<const double> a, std::span<const double> b) {
  require_two(a, "welch_t");
  require_two(b, "welch_t");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double ma = mean(a), mb = mean(b);
  const double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
  TTest r;
  if (va + vb == 0.0) {
    r.degenerate = true;
    r.df = na + nb - 2.0;
    if (ma == mb) return r;  // t = 0, p = 1
    r.t = ma > mb ? INFINITY : -INFINITY;
    r.p = 0.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p = two_sided_p(r.t, r.df);
  return r;
}

std::vector<double> subsample(const SimilarityDistribution& dist, const SubsampleOptions& options) {
  if (dist.values.size() <= options.threshold || dist.values.size() <= options.cap) return dist.values;
  Rng rng(derive_seed(options.seed, dist.script_a + "|" + dist.script_b + "|" + dist.model_id));
  std::vector<double> out;
  out.reserve(options.cap);
  std::sample(dist.values.begin(), dist.values.end(), std::back_inserter(out), options.cap, rng);
  return out;
}

TTest welch_t(const SimilarityDistribution& a, const SimilarityDistribution& b,
              const SubsampleOptions& options) {
  return welch_t(subsample(a, options), subsample(b, options));
}

PairedTTest paired_model_t(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidInput("paired_model_t: samples differ in length");
  require_two(a, "paired_model_t");
  std::vector<double> diff(a.size());
  for (size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  PairedTTest r;
  r.df = static_cast<double>(diff.size() - 1);
  r.mean_difference = mean(diff);
  r.sd_difference = std::sqrt(sample_variance(diff));
  if (r.sd_difference == 0.0) {
    r.degenerate = true;
    if (r.mean_difference != 0.0) {
      r.t = r.mean_difference > 0 ? INFINITY : -INFINITY;
      r.p = 0.0;
    }
    return r;
  }
  r.t = r.mean_difference / (r.sd_difference / std::sqrt(static_cast<double>(diff.size())));
  r.p = two_sided_p(r.t, r.df);
  return r;
}

std::string effect_label(double d) {
  const double m = std::abs(d);
  if (m < 0.2) return "negligible";
  if (m < 0.5) return "small";
  if (m < 0.8) return "medium";
  return "large";
}

EffectSize cohens_d(std::span<const double> a, std::span<const double> b) {
  require_two(a, "cohens_d");
  require_two(b, "cohens_d");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled =
      std::sqrt(((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0));
  const double diff = mean(a) - mean(b);
  EffectSize e;
  if (pooled == 0.0) {
    e.degenerate = true;
    e.d = diff == 0.0 ? 0.0 : (diff > 0 ? INFINITY : -INFINITY);
  } else {
    e.d = diff / pooled;
  }
  e.label = effect_label(e.d);
  return e;
}

double bonferroni(double alpha, size_t n_tests) {
  if (n_tests < 1) throw InvalidInput("bonferroni needs at least one test");
  return alpha / static_cast<double>(n_tests);
}

StabilityReport leave_one_out_stability(
    const std::map<std::string, std::map<std::string, double>>& per_model_means) {
  if (per_model_means.size() < 2) throw InvalidInput("leave-one-out stability needs at least 2 models");
  std::set<std::string> targets;
  for (const auto& [model, means] : per_model_means)
    for (const auto& [target, value] : means) targets.insert(target);

  auto top_of = [&](const std::string& skip, const std::string& only) {
    std::string best;
    double best_value = -INFINITY;
    for (const auto& target : targets) {
      double sum = 0.0;
      int count = 0;
      for (const auto& [model, means] : per_model_means) {
        if (model == skip || (!only.empty() && model != only)) continue;
        auto it = means.find(target);
        if (it == means.end()) throw InvalidInput("model '" + model + "' lacks target '" + target + "'");
        sum += it->second;
        ++count;
      }
      const double value = sum / count;
      if (value > best_value) {  // strict: ties keep the lexicographically first
        best_value = value;
        best = target;
      }
    }
    return best;
  };

  StabilityReport r;
  r.top = top_of("", "");
  for (const auto& [model, means] : per_model_means) {
    const auto top = top_of(model, "");
    r.leave_out_top.emplace_back(model, top);
    if (top != r.top) r.stable = false;
    if (top_of("", model) != r.top) r.dissenting.push_back(model);
  }
  return r;
}

bool model_less(const std::string& a, const std::string& b) {
  auto key = [](const std::string& s) -> std::pair<long, std::string> {
    if (s == "consensus") return {LONG_MAX, s};
    if (s.rfind("model_", 0) == 0) {
      try {
        return {std::stol(s.substr(6)), s};
      } catch (...) {
      }
    }
    return {LONG_MAX - 1, s};
  };
  return key(a) < key(b);
}

double centroid_similarity(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.size() == 0 || b.size() == 0) throw InvalidInput("centroid of an empty embedding set");
  const Eigen::RowVectorXd ca = a.rows.colwise().mean();
  const Eigen::RowVectorXd cb = b.rows.colwise().mean();
  const double denom = ca.norm() * cb.norm();
  if (denom == 0.0) throw InvalidInput("zero centroid for '" + a.script + "' or '" + b.script + "'");
  return std::clamp(ca.dot(cb) / denom, -1.0, 1.0);
}

std::vector<std::string> AnalysisReport::member_models() const {
  std::vector<std::string> out;
  for (const auto& m : models)
    if (m != "consensus") out.push_back(m);
  return out;
}

AnalysisReport run_battery(const EmbeddingIndex& embeddings, const BatteryConfig& config) {
  if (config.comparisons.empty() || config.targets.empty())
    throw InvalidInput("analysis needs at least one comparison and one target script");
  AnalysisReport r;
  r.comparisons = config.comparisons;
  r.targets = config.targets;
  r.alpha = config.alpha;

  // models available for every target
  std::set<std::string> common;
  bool first = true;
  for (const auto& target : config.targets) {
    auto it = embeddings.find(target);
    if (it == embeddings.end()) throw InvalidInput("no embeddings for target '" + target + "'");
    std::set<std::string> ids;
    for (const auto& [model, sets] : it->second) ids.insert(model);
    if (first) {
      common = ids;
      first = false;
    } else {
      std::set<std::string> keep;
      std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                            std::inserter(keep, keep.begin()));
      common = keep;
    }
  }
  r.models.assign(common.begin(), common.end());
  std::sort(r.models.begin(), r.models.end(), model_less);
  if (r.member_models().empty()) throw InvalidInput("no ensemble members shared by all targets");

  auto lookup = [&](const std::string& target, const std::string& model,
                    const std::string& script) -> const EmbeddingSet& {
    const auto& by_script = embeddings.at(target).at(model);
    auto it = by_script.find(script);
    if (it == by_script.end())
      throw InvalidInput("no embeddings of '" + script + "' from the '" + target + "' ensemble (" + model + ")");
    return it->second;
  };

  for (const auto& c : config.comparisons)
    for (const auto& t : config.targets)
      for (const auto& m : r.models)
        r.distributions[c][t][m] = cross_script_similarity(lookup(t, m, c), lookup(t, m, t));

  const auto members = r.member_models();
  for (const auto& c : config.comparisons) {
    for (const auto& m : r.models) {
      for (size_t i = 0; i < config.targets.size(); ++i) {
        for (size_t j = i + 1; j < config.targets.size(); ++j) {
          const auto& t1 = config.targets[i];
          const auto& t2 = config.targets[j];
          const auto& d1 = r.distributions[c][t1][m];
          const auto& d2 = r.distributions[c][t2][m];
          StatTestResult s;
          s.comparison_script = c;
          s.model = m;
          s.test_name = t1 + "_vs_" + t2;
          s.mean1 = d1.mean;
          s.mean2 = d2.mean;
          s.difference = d1.mean - d2.mean;
          const auto t = welch_t(d1, d2, config.subsample);
          s.t_stat = t.t;
          s.p_value = t.p;
          const auto e = cohens_d(d1.values, d2.values);
          s.cohens_d = e.d;
          s.effect_label = e.label;
          s.degenerate = t.degenerate || e.degenerate;
          s.better_match = d1.mean >= d2.mean ? t1 : t2;
          r.tests.push_back(std::move(s));
        }
      }
    }
    if (members.size() >= 2) {
      for (size_t i = 0; i < config.targets.size(); ++i) {
        for (size_t j = i + 1; j < config.targets.size(); ++j) {
          std::vector<double> a, b;
          for (const auto& m : members) {
            a.push_back(r.distributions[c][config.targets[i]][m].mean);
            b.push_back(r.distributions[c][config.targets[j]][m].mean);
          }
          r.paired.push_back({c, config.targets[i] + "_vs_" + config.targets[j], paired_model_t(a, b), false});
        }
      }
      std::map<std::string, std::map<std::string, double>> per_model;
      for (const auto& m : members)
        for (const auto& t : config.targets) per_model[m][t] = r.distributions[c][t][m].mean;
      r.stability[c] = leave_one_out_stability(per_model);
    }
  }

  r.n_tests = r.tests.size() + r.paired.size();
  r.alpha_corrected = bonferroni(config.alpha, std::max<size_t>(1, r.n_tests));
  for (auto& s : r.tests) s.significant = s.p_value < r.alpha_corrected;
  for (auto& p : r.paired) p.significant = p.test.p < r.alpha_corrected;

  // centroid similarity per member, summarized across members
  for (const auto& t : config.targets) {
    std::set<std::string> scripts;
    for (const auto& m : members)
      for (const auto& [script, set] : embeddings.at(t).at(m)) scripts.insert(script);
    std::vector<ScriptSummary> rows;
    for (const auto& s : scripts) {
      std::vector<double> values;
      for (const auto& m : members)
        values.push_back(s == t ? 1.0 : centroid_similarity(lookup(t, m, t), lookup(t, m, s)));
      ScriptSummary row;
      row.script = s;
      row.mean = mean(values);
      row.std = values.size() > 1 ? std::sqrt(sample_variance(values)) : 0.0;
      const double half = 1.96 * row.std / std::sqrt(static_cast<double>(values.size()));
      row.ci_lower = row.mean - half;
      row.ci_upper = row.mean + half;
      rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const ScriptSummary& a, const ScriptSummary& b) { return a.mean > b.mean; });
    r.summaries[t] = std::move(rows);
  }
  return r;
}

io::Table AnalysisReport::table_mean_similarity() const {
  std::vector<std::string> header{"Comparison Script"};
  header.insert(header.end(), targets.begin(), targets.end());
  io::Table table(header);
  const auto members = member_models();
  for (const auto& c : comparisons) {
    std::vector<std::string> row{c};
    for (const auto& t : targets) {
      double sum = 0.0;
      for (const auto& m : members) sum += distributions.at(c).at(t).at(m).mean;
      row.push_back(fixed(sum / static_cast<double>(members.size()), 3));
    }
    table.add_row(row);
  }
  return table;
}

io::Table AnalysisReport::table_effect_sizes() const {
  std::vector<std::string> header{"Comparison Script"};
  for (size_t i = 0; i < targets.size(); ++i)
    for (size_t j = i + 1; j < targets.size(); ++j) header.push_back(targets[i] + " vs. " + targets[j]);
  io::Table table(header);
  for (const auto& c : comparisons) {
    std::vector<std::string> row{c};
    for (size_t i = 0; i < targets.size(); ++i) {
      for (size_t j = i + 1; j < targets.size(); ++j) {
        const auto name = targets[i] + "_vs_" + targets[j];
        double sum = 0.0;
        int count = 0;
        for (const auto& s : tests) {
          if (s.comparison_script == c && s.test_name == name && s.model != "consensus") {
            sum += s.cohens_d;
            ++count;
          }
        }
        const double d = sum / count;
        row.push_back(fixed(d, 2) + " (" + effect_label(d) + ")");
      }
    }
    table.add_row(row);
  }
  return table;
}

io::Table AnalysisReport::table_model_matrix() const {
  std::vector<std::string> header{"Comparison Script", "Model"};
  header.insert(header.end(), targets.begin(), targets.end());
  io::Table table(header);
  for (const auto& c : comparisons) {
    for (const auto& m : models) {
      std::vector<std::string> row{c, m};
      for (const auto& t : targets) row.push_back(fixed(distributions.at(c).at(t).at(m).mean, 6));
      table.add_row(row);
    }
  }
  return table;
}

io::Table AnalysisReport::table_statistics() const {
  io::Table table({"Comparison Script", "Model", "Test", "Mean 1", "Mean 2", "Difference",
                   "T-statistic", "P-value", "Cohen's d", "Effect Size", "Significant",
                   "Better Match"});
  for (const auto& s : tests) {
    table.add_row({s.comparison_script, s.model, s.test_name, fixed(s.mean1, 4), fixed(s.mean2, 4),
                   fixed(s.difference, 4), fixed(s.t_stat, 4), io::format_double(s.p_value),
                   fixed(s.cohens_d, 4), s.effect_label, s.significant ? "Yes" : "No",
                   s.better_match});
  }
  return table;
}

io::Table AnalysisReport::table_summary() const {
  io::Table table({"Target", "Script", "Mean Similarity", "Std Dev", "95% CI Lower", "95% CI Upper"});
  for (const auto& t : targets) {
    for (const auto& row : summaries.at(t)) {
      table.add_row({t, row.script, fixed(row.mean, 4), fixed(row.std, 4), fixed(row.ci_lower, 4),
                     fixed(row.ci_upper, 4)});
    }
  }
  return table;
}

io::Table AnalysisReport::table_paired() const {
  io::Table table({"Comparison Script", "Test", "Mean Difference", "SD Difference", "T-statistic",
                   "df", "P-value", "Significant", "Degenerate"});
  for (const auto& p : paired) {
    table.add_row({p.comparison_script, p.test_name, fixed(p.test.mean_difference, 6),
                   fixed(p.test.sd_difference, 6), fixed(p.test.t, 4), io::format_double(p.test.df),
                   io::format_double(p.test.p), p.significant ? "Yes" : "No",
                   p.test.degenerate ? "Yes" : "No"});
  }
  return table;
}

io::Table AnalysisReport::table_stability() const {
  io::Table table({"Comparison Script", "Top Target", "Stable", "Leave-Out Tops", "Dissenting Models"});
  for (const auto& c : comparisons) {
    auto it = stability.find(c);
    if (it == stability.end()) continue;
    std::vector<std::string> tops;
    for (const auto& [model, top] : it->second.leave_out_top) tops.push_back(model + ":" + top);
    table.add_row({c, it->second.top, it->second.stable ? "Yes" : "No", join(tops, ";"),
                   join(it->second.dissenting, ";")});
  }
  return table;
}

}  // namespace glyphsim::analysis
