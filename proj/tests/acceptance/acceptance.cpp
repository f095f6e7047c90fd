// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   glyphsim_acceptance [--work-dir DIR] [--only 1,9,11] [--reuse]
// --reuse keeps an existing trained synthetic run instead of retraining it.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "glyphsim/analysis.hpp"
#include "glyphsim/ensemble.hpp"
#include "glyphsim/error.hpp"
#include "glyphsim/explain.hpp"
#include "glyphsim/io.hpp"
#include "glyphsim/pipeline.hpp"
#include "glyphsim/structure.hpp"
#include "glyphsim/trainer.hpp"
#include "oracles.hpp"
#include "reference.hpp"

using namespace glyphsim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

Eigen::MatrixXd gaussian(int n, int d, uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) m(i, k) = nd(g);
  return m;
}

std::vector<double> to_vec(std::initializer_list<double> v) { return std::vector<double>(v); }

struct Context {
  fs::path work;
  bool reuse = false;
  std::optional<pipeline::RunConfig> synthetic;  // set once criterion 9 has run
};

// 1
Outcome loss_oracle(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  uint64_t seed = 1;
  for (int n : {2, 3, 4, 8})
    for (double tau : {0.1, 1.0})
      for (double lambda : {0.0, 1.0}) {
        const auto z = gaussian(2 * n, 16, seed++);
        const auto pair = trainer::half_pairing(2 * n);
        const trainer::LossConfig c{tau, lambda, 1e-4, 0.1};
        const double got = trainer::contrastive_loss(z, pair, c, false).terms.total;
        worst = std::max(worst, std::abs(got - reference::loss(z, pair, c)));
      }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-6 && secs < 60.0, "max |diff| " + fmt(worst) + " over 16 configs, " + fmt(secs, 2) + " s"};
}

// 2
Outcome degenerate_point(Context&) {
  Eigen::MatrixXd z(4, 3);
  for (int i = 0; i < 4; ++i) z.row(i) << 0.3, -1.2, 0.7;
  const trainer::LossConfig c{0.1, 1.0, 1e-4, 0.1};
  const auto r = trainer::contrastive_loss(z, trainer::half_pairing(4), c, false);
  const bool ok = std::abs(r.terms.nt_xent - std::log(3.0)) <= 1e-9 && std::abs(r.terms.uniformity) <= 1e-12 &&
                  std::abs(r.terms.variance - c.var_weight / c.var_eps) <= 1e-9 * (c.var_weight / c.var_eps);
  return {ok, "nt_xent " + fmt(r.terms.nt_xent, 12) + ", unif " + fmt(r.terms.uniformity) + ", var " +
                  fmt(r.terms.variance, 10)};
}

// 3
Outcome gradient_checks(Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  // loss w.r.t. embeddings, N = 2, dim 8
  const auto z = gaussian(4, 8, 77);
  const auto pair = trainer::half_pairing(4);
  const trainer::LossConfig c{0.5, 1.0, 1e-4, 0.1};
  const auto r = trainer::contrastive_loss(z, pair, c, true);
  Eigen::MatrixXd numeric(z.rows(), z.cols());
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index k = 0; k < z.cols(); ++k) {
      auto up = z, down = z;
      up(i, k) += h;
      down(i, k) -= h;
      numeric(i, k) = (trainer::contrastive_loss(up, pair, c, false).terms.total -
                       trainer::contrastive_loss(down, pair, c, false).terms.total) /
                      (2 * h);
    }
  const double loss_err = (r.grad - numeric).norm() / std::max(1e-12, numeric.norm());

  // projection head parameters and input, double precision, no dropout
  torch::manual_seed(9);
  model::ProjectionHead head(8, 6, 4, 0.01, 0.0);
  head->to(torch::kDouble);
  head->train();
  const auto x = torch::randn({5, 8}, torch::kDouble).requires_grad_(true);
  const auto w = torch::randn({5, 4}, torch::kDouble);
  auto f = [&]() { return (head->forward(x) * w).sum(); };
  f().backward();
  std::vector<torch::Tensor> targets{x};
  for (auto& p : head->parameters()) targets.push_back(p);
  double head_err = 0.0;
  for (auto& t : targets) {
    const auto analytic = t.grad().clone();
    auto flat = t.data().view(-1);
    auto num = torch::zeros_like(flat);
    torch::NoGradGuard ng;
    for (int64_t i = 0; i < flat.numel(); ++i) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = f().item<double>();
      flat[i] = orig - h;
      const double down = f().item<double>();
      flat[i] = orig;
      num[i] = (up - down) / (2 * h);
    }
    const double nn = num.norm().item<double>();
    if (nn > 1e-8) head_err = std::max(head_err, (analytic.view(-1) - num).norm().item<double>() / nn);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {loss_err < 1e-3 && head_err < 1e-3 && secs < 60.0,
          "loss rel err " + fmt(loss_err) + ", head rel err " + fmt(head_err) + ", " + fmt(secs, 2) + " s"};
}

// 4
Outcome schedule(Context&) {
  trainer::TrainConfig c;  // lr_max 3e-5, warmup 10%
  c.lr_min = 1e-6;
  const double total = 10000.0, warm = c.warmup_frac * total;
  const bool anchors = trainer::lr_at(warm, total, c) == 3e-5 && trainer::lr_at(total, total, c) == c.lr_min &&
                       trainer::lr_at((warm + total) / 2.0, total, c) == (c.lr_max + c.lr_min) / 2.0;
  bool mono = true;
  double prev = trainer::lr_at(0.0, total, c);
  for (int s = 1; s <= 10000; ++s) {
    const double lr = trainer::lr_at(s, total, c);
    mono = mono && (s <= warm ? lr >= prev : lr <= prev);
    prev = lr;
  }
  return {anchors && mono, std::string("anchors ") + (anchors ? "exact" : "off") + ", monotone " + (mono ? "yes" : "no")};
}

// 5
Outcome architecture(Context&) {
  torch::NoGradGuard ng;
  const auto cfg = model::EncoderConfig::paper();
  model::HybridEncoder enc(cfg);
  model::initialize(enc, 1);
  enc->eval();
  torch::manual_seed(2);
  const auto f = enc->features(torch::randn({1, 3, 224, 224}));
  const bool sizes = f.cnn.size(1) == 512 && f.swin.size(1) == 1024 && cfg.concat_dim() == 1536 &&
                     f.fused.size(1) == 256;

  model::WindowAttention attn(32, 7, 2);
  model::SwinBlock shifted(32, 14, 2, 7, 3, 4.0);
  torch::Tensor weights;
  attn->forward(torch::randn({4, 49, 32}), shifted->attn_mask_, &weights);
  const double row_err = (weights.sum(-1) - 1).abs().max().item<double>();

  model::ResidualBlock block(8, 8, 1);
  block->conv1_->weight.zero_();
  block->conv2_->weight.zero_();
  block->eval();
  const auto x = torch::rand({2, 8, 10, 10});
  const double id_err = (block->forward(x) - x).abs().max().item<double>();
  return {sizes && row_err < 1e-6 && id_err < 1e-6,
          "cnn " + std::to_string(f.cnn.size(1)) + " swin " + std::to_string(f.swin.size(1)) + " concat " +
              std::to_string(cfg.concat_dim()) + " out " + std::to_string(f.fused.size(1)) + "; row-sum err " +
              fmt(row_err) + "; identity err " + fmt(id_err)};
}

// 6
Outcome statistics(Context&) {
  const auto a = gaussian(1, 40, 5), b = gaussian(1, 55, 6);
  std::vector<double> va(a.data(), a.data() + 40), vb(b.data(), b.data() + 55);
  for (auto& v : vb) v = 0.4 + 1.7 * v;
  const auto w = analysis::welch_t(va, vb);
  const auto ow = oracle::welch(va, vb);
  double worst = std::max({std::abs(w.t - ow.t), std::abs(w.df - ow.df), std::abs(w.p - ow.p)});

  const auto e = analysis::cohens_d(va, vb);
  worst = std::max(worst, std::abs(e.d - oracle::cohen(va, vb)));

  const auto pa = to_vec({0.61, 0.61, 0.63, 0.65, 0.68}), pb = to_vec({0.06, 0.07, 0.07, 0.07, 0.23});
  const auto pt = analysis::paired_model_t(pa, pb);
  std::vector<double> diff(5);
  for (int i = 0; i < 5; ++i) diff[i] = pa[i] - pb[i];
  const double od = oracle::mean(diff), ot = od / std::sqrt(oracle::var(diff) / 5.0);
  worst = std::max({worst, std::abs(pt.t - ot), std::abs(pt.p - oracle::t_two_sided(ot, 4))});
  worst = std::max(worst, std::abs(analysis::bonferroni(0.05, 7) - 0.05 / 7));

  const bool dbar = std::abs(pt.mean_difference - 0.536) < 1e-12;
  const bool labels = analysis::effect_label(0.01) == "negligible" && analysis::effect_label(0.46) == "small" &&
                      analysis::effect_label(0.74) == "medium" && analysis::effect_label(1.17) == "large";
  return {worst < 1e-9 && dbar && labels, "max oracle diff " + fmt(worst) + ", d-bar " +
                                              fmt(pt.mean_difference, 12) + ", labels " + (labels ? "ok" : "wrong")};
}

// 7
Outcome clustering(Context&) {
  size_t mismatches = 0;
  double worst = 0.0;
  std::vector<std::string> labels;
  for (int i = 0; i < 10; ++i) labels.push_back("p" + std::to_string(i));
  for (uint64_t inst = 0; inst < 20; ++inst) {
    const auto D = structure::cosine_distances(gaussian(10, 6, 500 + inst));
    for (auto L : structure::kAllLinkages) {
      const auto got = structure::agglomerate(D, labels, L);
      const auto ref = reference::agglomerate(D, labels, L);
      for (size_t k = 0; k < ref.size(); ++k) {
        const auto& m = got.merges[k];
        if (m.a != ref[k].a || m.b != ref[k].b || m.size != ref[k].size) ++mismatches;
        worst = std::max(worst, std::abs(m.height - ref[k].h));
      }
    }
  }
  return {mismatches == 0 && worst < 1e-12,
          std::to_string(mismatches) + " topology mismatches, max height diff " + fmt(worst)};
}

// 8
Outcome pca(Context&) {
  Eigen::MatrixXd line(12, 5);
  Eigen::RowVectorXd dir(5);
  dir << 1, -2, 0.5, 3, 1;
  for (int i = 0; i < 12; ++i) line.row(i) = (0.3 * i - 1.0) * dir;
  line.rowwise() += Eigen::RowVectorXd::Constant(5, 2.0);
  const auto p = structure::pca_project(line, 2);
  const double ratio = p.explained[0];

  const Eigen::MatrixXd pts = gaussian(30, 8, 9) * gaussian(8, 8, 10);
  const Eigen::MatrixXd xc = pts.rowwise() - pts.colwise().mean();
  const Eigen::MatrixXd cov = xc.transpose() * xc / (pts.rows() - 1);
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  reference::jacobi(cov, values, vectors);
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.rbegin(), sorted.rend());
  const auto q = structure::pca_project(pts, 3);
  double worst = 0.0;
  for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(q.explained[k] - sorted[k] / values.sum()));
  return {std::abs(ratio - 1.0) <= 1e-9 && worst < 1e-6,
          "line ratio " + fmt(ratio, 12) + ", eigen agreement " + fmt(worst)};
}

// 9
Outcome synthetic_end_to_end(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path run = ctx.work / "synthetic-run";
  auto config = pipeline::RunConfig::load(fs::path(GLYPHSIM_FIXTURES) / "synthetic_run.json",
                                          {"output_dir=" + json(run.string()).dump()});
  ctx.synthetic = config;
  std::ostringstream log;
  pipeline::CommandOptions o;
  o.log = &log;
  const bool have_models = fs::exists(run / "training" / "ABC.json");
  if (!(ctx.reuse && have_models)) {
    fs::remove_all(run);
    pipeline::cmd_prepare(config, o);
    pipeline::cmd_train(config, o);
  }
  pipeline::cmd_embed(config, o);
  pipeline::cmd_analyze(config, o);
  pipeline::cmd_cluster(config, o);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

  const auto a = io::read_json(run / "analysis" / "analysis.json");
  const auto& ms = a.at("mean_similarity").at("A");
  bool ordered = true;
  std::string worst_model;
  double worst_gap = INFINITY;
  for (const auto& m : a.at("models")) {
    const std::string id = m.get<std::string>();
    const double gap = ms.at("B").at(id).at("mean").get<double>() - ms.at("C").at(id).at("mean").get<double>();
    if (gap < worst_gap) {
      worst_gap = gap;
      worst_model = id;
    }
    ordered = ordered && gap > 0.0;
  }
  double d = NAN;
  for (const auto& t : a.at("tests"))
    if (t.at("model") == "consensus" && t.at("comparison_script") == "A" && t.at("test") == "B_vs_C")
      d = t.at("cohens_d").get<double>();
  const bool stable = a.at("stability").at("A").at("stable").get<bool>();

  bool merges = true;
  for (auto L : structure::kAllLinkages) {
    const auto j = io::read_json(run / "clusters" / "ABC" / (structure::to_string(L) + ".json"));
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    const auto first = j.at("merges").at(0);
    std::set<std::string> joined;
    for (int side : {0, 1}) {
      const auto node = first.at(side).get<size_t>();
      if (node < labels.size()) joined.insert(labels[node]);
    }
    merges = merges && joined == std::set<std::string>{"A", "B"};
  }
  const bool ok = ordered && d >= 0.8 && stable && merges;
  return {ok, "smallest sim(A,B)-sim(A,C) " + fmt(worst_gap) + " (" + worst_model + "), consensus d " + fmt(d) +
                  ", stable " + (stable ? "yes" : "no") + ", A+B first in every linkage " + (merges ? "yes" : "no") +
                  ", " + fmt(minutes, 3) + " min"};
}

// 10
Outcome consensus(Context&) {
  corpus::ScriptCorpus c;
  c.name = "S";
  for (int i = 0; i < 3; ++i) {
    cv::Mat img(224, 224, CV_32F, cv::Scalar(1.0f));
    cv::rectangle(img, {50 + 20 * i, 60}, {150, 160 - 15 * i}, cv::Scalar(0.0f), 9);
    corpus::GlyphImage g;
    g.pixels = img;
    g.script = "S";
    g.glyph_id = "S_" + std::to_string(i) + ".png";
    c.glyphs.push_back(corpus::standardize(std::move(g)));
  }
  model::HybridEncoder enc(model::EncoderConfig::tiny());
  model::initialize(enc, 8);
  enc->eval();
  ensemble::Ensemble e;
  e.name = "E";
  for (int k = 1; k <= 4; ++k) e.members.push_back({k, 8, "", enc});
  e.expected_members = 4;
  const auto single = ensemble::member_embed(e.members[0], c);
  const auto cons = ensemble::consensus_embed(e, c);
  const bool exact = (cons.rows.array() == single.rows.array()).all();

  const int n = 1000, d = 8, k = 5;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g;
  std::vector<ensemble::EmbeddingSet> members;
  ensemble::EmbeddingSet signal;
  signal.script = "S";
  signal.rows = gaussian(n, d, 31);
  for (int i = 0; i < n; ++i) signal.glyph_ids.push_back("g" + std::to_string(10000 + i));
  for (int m = 0; m < k; ++m) {
    auto s = signal;
    s.model_id = ensemble::member_id(m + 1);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) s.rows(i, j) += 0.5 * g(rng);
    members.push_back(s);
  }
  const auto avg = ensemble::consensus(members);
  double worst_p = 0.0;
  for (const auto& m : members) {
    std::vector<double> diff(n);
    for (int i = 0; i < n; ++i)
      diff[i] = (m.rows.row(i) - signal.rows.row(i)).squaredNorm() - (avg.rows.row(i) - signal.rows.row(i)).squaredNorm();
    const double t = oracle::mean(diff) / std::sqrt(oracle::var(diff) / n);
    worst_p = std::max(worst_p, t > 0 ? oracle::t_two_sided(t, n - 1) : 1.0);
  }
  return {exact && worst_p < 0.01,
          std::string("identical members ") + (exact ? "exact" : "differ") + ", largest p " + fmt(worst_p)};
}

// 11
Outcome gradcam_foreground(Context& ctx) {
  if (!ctx.synthetic) return {false, "needs the synthetic run (criterion 9)"};
  const auto run = ctx.synthetic->run_dir();
  auto ens = ensemble::Ensemble::load(run, "ABC");
  const auto& opt = ctx.synthetic->analysis;
  const auto corpora = pipeline::load_prepared(run);
  std::vector<double> fractions, chance, member_means;
  for (auto& member : ens.members) {
    std::vector<double> mine;
    for (const auto& corpus : corpora)
      for (const auto* glyph : corpus.subset(corpus::Split::test)) {
        const auto mask = explain::foreground_mask(glyph->intensity(), opt.foreground_threshold, opt.foreground_radius);
        chance.push_back(cv::countNonZero(mask) / static_cast<double>(mask.total()));
        const auto map = explain::grad_cam(member.encoder, *glyph, explain::Pathway::cnn);
        mine.push_back(map.degenerate ? 0.0 : explain::top_decile_mass_fraction(map.heat, mask));
      }
    member_means.push_back(oracle::mean(mine));
    fractions.insert(fractions.end(), mine.begin(), mine.end());
  }
  const double mean = oracle::mean(fractions);
  std::string per;
  for (double m : member_means) per += (per.empty() ? "" : " ") + fmt(m);
  return {mean >= 0.6, "mean top-decile foreground share " + fmt(mean) + " over " + std::to_string(fractions.size()) +
                           " member x held-out maps (members " + per + "; mask covers " + fmt(oracle::mean(chance)) +
                           " of the image)"};
}

std::string joined(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
  return s;
}

std::string csv_header(const fs::path& p) {
  const auto t = io::Table::load(p);
  return joined(t.header(), '\t');
}

// 12
Outcome report_schemas(Context& ctx) {
  const std::string kTrainingHeader = "model_idx\tseed\tval_loss\tepoch\tmodel_path";
  const std::string kMatrixHeader = "Comparison Script\tModel\tIndus\tProto-Cuneiform\tProto-Elamite";
  const std::string kTestsHeader =
      "Comparison Script\tModel\tTest\tMean 1\tMean 2\tDifference\tT-statistic\tP-value\tCohen's d\tEffect "
      "Size\tSignificant\tBetter Match";

  analysis::EmbeddingIndex index;
  const std::vector<std::string> targets{"Indus", "Proto-Cuneiform", "Proto-Elamite"};
  const std::vector<std::string> scripts{"Dongba", "Indus", "Proto-Cuneiform", "Proto-Elamite"};
  uint64_t seed = 40;
  for (const auto& t : targets)
    for (const std::string m : {"model_0", "model_1", "consensus"})
      for (const auto& s : scripts) {
        ensemble::EmbeddingSet e;
        e.script = s;
        e.model_id = m;
        e.rows = gaussian(6, 5, seed++);
        for (int i = 0; i < 6; ++i) e.glyph_ids.push_back(s + "_" + std::to_string(i));
        index[t][m][s] = e;
      }
  analysis::BatteryConfig bc;
  bc.comparisons = {"Dongba"};
  bc.targets = targets;
  const auto rep = analysis::run_battery(index, bc);
  trainer::TrainRecord rec;
  rec.model_idx = 1;

  std::vector<std::pair<std::string, bool>> checks{
      {"training summary", joined(trainer::training_summary({rec}).header(), '\t') == kTrainingHeader},
      {"model matrix", joined(rep.table_model_matrix().header(), '\t') == kMatrixHeader},
      {"statistical tests", joined(rep.table_statistics().header(), '\t') == kTestsHeader}};
  if (ctx.synthetic) {
    // headers as written by the CLI on the synthetic run (targets B and C there)
    const auto run = ctx.synthetic->run_dir();
    checks.push_back({"training summary csv", csv_header(run / "tables" / "training_summary_ABC.csv") == kTrainingHeader});
    checks.push_back({"model matrix csv", csv_header(run / "tables" / "similarity_matrix.csv") == "Comparison Script\tModel\tB\tC"});
    checks.push_back({"statistical tests csv", csv_header(run / "tables" / "statistical_tests.csv") == kTestsHeader});
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, pass] : checks) {
    ok = ok && pass;
    detail += name + (pass ? " ok; " : " MISMATCH; ");
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glyphsim acceptance criteria"};
  std::string work = (fs::temp_directory_path() / "glyphsim-acceptance").string();
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--work-dir", work, "scratch directory for the synthetic run");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_flag("--reuse", reuse, "reuse an existing trained synthetic run");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.work = work;
  ctx.reuse = reuse;
  fs::create_directories(ctx.work);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"loss matches brute-force oracle", loss_oracle},
      {"degenerate batch values", degenerate_point},
      {"finite-difference gradients", gradient_checks},
      {"warmup-cosine schedule", schedule},
      {"architecture shapes", architecture},
      {"statistics oracles", statistics},
      {"linkages match reference agglomerator", clustering},
      {"pca explained variance", pca},
      {"synthetic end-to-end ordering", synthetic_end_to_end},
      {"ensemble consensus", consensus},
      {"grad-cam foreground share", gradcam_foreground},
      {"report headers", report_schemas}};

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome r;
    try {
      r = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += r.pass ? 0 : 1;
    std::cout << (r.pass ? "PASS" : "FAIL") << "  " << id << ". " << criteria[i].first << ": " << r.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
