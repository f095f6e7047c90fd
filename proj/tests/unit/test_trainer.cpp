#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "torch_doctest.hpp"
#include "glyphsim/error.hpp"
#include "glyphsim/trainer.hpp"

using namespace glyphsim;
using namespace glyphsim::trainer;

namespace {

std::vector<corpus::GlyphImage> bar_glyphs(int n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pos(30, 190);
  std::vector<corpus::GlyphImage> out;
  for (int i = 0; i < n; ++i) {
    cv::Mat img(224, 224, CV_32F, cv::Scalar(1.0f));
    for (int s = 0; s < 3; ++s)
      cv::line(img, {pos(rng), pos(rng)}, {pos(rng), pos(rng)}, cv::Scalar(0.0f), 8);
    corpus::GlyphImage g;
    g.pixels = img;
    g.script = "S";
    g.glyph_id = "g" + std::to_string(i);
    out.push_back(corpus::standardize(std::move(g)));
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.max_epochs = 1;
  c.patience = 1;
  c.batch_size = 4;
  c.seeds = {7};
  return c;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("lr schedule anchors") {
    TrainConfig c;
    c.lr_max = 3e-5;
    c.lr_min = 1e-7;
    const double total = 1000.0;
    CHECK(lr_at(0.0, total, c) == 0.0);
    CHECK(lr_at(100.0, total, c) == 3e-5);
    CHECK(lr_at(total, total, c) == c.lr_min);
    CHECK(lr_at(550.0, total, c) == doctest::Approx((c.lr_max + c.lr_min) / 2.0).epsilon(1e-12));
  }

  TEST_CASE("lr schedule is monotone on each side of warmup") {
    TrainConfig c;
    c.lr_min = 2e-6;
    const int n = 10000;
    const double warm = c.warmup_frac * n;
    double prev = -1.0;
    for (int s = 0; s <= n; ++s) {
      const double lr = lr_at(s, n, c);
      CHECK(lr <= c.lr_max);
      if (s <= warm) {
        CHECK(lr >= prev);
      } else {
        CHECK(lr >= c.lr_min - 1e-18);
        CHECK(lr <= prev);
      }
      prev = lr;
    }
  }

  TEST_CASE("early stopping") {
    EarlyStopping es(5);
    const double losses[] = {5.0, 4.0, 4.1, 4.2, 4.3, 4.4, 4.5};
    bool stop = false;
    int stopped_at = 0;
    for (double l : losses) {
      stop = es.update(l);
      if (stop) {
        stopped_at = es.epochs();
        break;
      }
    }
    CHECK(stop);
    CHECK(stopped_at == 7);
    CHECK(es.best_epoch() == 2);
    CHECK(es.best() == 4.0);

    EarlyStopping tiny(2, 0.5);
    CHECK_FALSE(tiny.update(1.0));
    CHECK_FALSE(tiny.update(0.6));  // not better by min_delta
    CHECK_FALSE(tiny.improved());
    CHECK(tiny.update(0.7));
  }

  TEST_CASE("gradient clipping") {
    torch::manual_seed(3);
    auto a = torch::randn({10, 10}, torch::requires_grad());
    auto b = torch::randn({5}, torch::requires_grad());
    a.mutable_grad() = torch::randn({10, 10}) * 5;
    b.mutable_grad() = torch::randn({5}) * 5;
    const double before = clip_gradients({a, b}, 1.0);
    CHECK(before > 1.0);
    const double after =
        std::sqrt(a.grad().pow(2).sum().item<double>() + b.grad().pow(2).sum().item<double>());
    CHECK(after <= 1.0 + 1e-6);
    CHECK(after == doctest::Approx(1.0).epsilon(1e-5));

    a.mutable_grad() = torch::full({10, 10}, 0.01);
    b.mutable_grad() = torch::zeros({5});
    const auto saved = a.grad().clone();
    clip_gradients({a, b}, 1.0);
    CHECK(torch::equal(a.grad(), saved));
  }

  TEST_CASE("batch ranges") {
    auto r = batch_ranges(10, 4);
    REQUIRE(r.size() == 3);
    CHECK((r[2] == std::pair<size_t, size_t>{8, 10}));
    r = batch_ranges(9, 4);  // trailing singleton folds in
    REQUIRE(r.size() == 2);
    CHECK((r[1] == std::pair<size_t, size_t>{4, 9}));
    CHECK(batch_ranges(0, 4).empty());
    CHECK(batch_ranges(1, 4).size() == 1);
  }

  TEST_CASE("torch wrapper matches the double loss and its gradient") {
    torch::manual_seed(11);
    auto z = torch::randn({8, 6}, torch::kFloat64).requires_grad_(true);
    LossConfig cfg{0.5, 1.0, 1e-4, 0.1};
    LossTerms terms;
    auto loss = contrastive_loss(z, cfg, &terms);
    loss.backward();

    Eigen::MatrixXd zm(8, 6);
    const auto zd = z.detach();
    auto acc = zd.accessor<double, 2>();
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 6; ++j) zm(i, j) = acc[i][j];
    const auto pair = half_pairing(8);
    const auto ref = trainer::contrastive_loss(zm, pair, cfg);
    CHECK(loss.item<double>() == doctest::Approx(ref.terms.total).epsilon(1e-12));
    CHECK(terms.total == doctest::Approx(ref.terms.total).epsilon(1e-12));
    const auto zg = z.grad();
    auto g = zg.accessor<double, 2>();
    double worst = 0.0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 6; ++j) worst = std::max(worst, std::abs(g[i][j] - ref.grad(i, j)));
    CHECK(worst < 1e-12);

    // float input yields a float loss with a float gradient
    auto zf = torch::randn({4, 3}).requires_grad_(true);
    auto lf = contrastive_loss(zf, cfg);
    CHECK((lf.scalar_type() == torch::kFloat32));
    lf.backward();
    CHECK((zf.grad().scalar_type() == torch::kFloat32));
  }

  TEST_CASE("config validation and json") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = c;
    bad.patience = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.seeds = {1, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.lr_min = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    auto j = c.to_json();
    j["max_epochs"] = 3;
    j["patience"] = 2;
    const auto back = TrainConfig::from_json(j);
    CHECK(back.max_epochs == 3);
    CHECK(back.lr_max == c.lr_max);
    CHECK(back.seeds == c.seeds);
    const auto partial = TrainConfig::from_json({{"batch_size", 8}});
    CHECK(partial.batch_size == 8);
    CHECK(partial.temperature == c.temperature);
  }

  TEST_CASE("one step at a small learning rate lowers the loss") {
    const auto glyphs = bar_glyphs(8, 1);
    auto batch = to_batch(glyphs);
    CHECK(batch.sizes() == torch::IntArrayRef({8, 3, 224, 224}));
    model::HybridEncoder enc(model::EncoderConfig::tiny());
    model::initialize(enc, 5);
    enc->eval();  // fixed batch-norm statistics so the two evaluations are comparable
    // pairs: rows i and i+4 are the same glyph shifted by two pixels
    auto x = torch::cat({batch.slice(0, 0, 4), torch::roll(batch.slice(0, 0, 4), {2}, {3})});
    LossConfig cfg;
    auto l0 = contrastive_loss(enc->forward(x), cfg);
    torch::optim::SGD opt(enc->parameters(), torch::optim::SGDOptions(1e-3));
    opt.zero_grad();
    l0.backward();
    opt.step();
    torch::NoGradGuard ng;
    const double l1 = contrastive_loss(enc->forward(x), cfg).item<double>();
    CHECK(l1 < l0.item<double>());
  }

  TEST_CASE("single-epoch training and determinism") {
    auto glyphs = bar_glyphs(10, 2);
    TrainData data;
    for (size_t i = 0; i < 6; ++i) data.train.push_back(&glyphs[i]);
    for (size_t i = 6; i < 10; ++i) data.val.push_back(&glyphs[i]);
    augment::AugmentationPolicy policy;
    const auto cfg = quick_config();
    const auto enc = model::EncoderConfig::tiny();
    int calls = 0;
    auto r1 = train_model(data, enc, cfg, policy, 7, [&](const EpochStats& s) {
      ++calls;
      CHECK(s.epoch == 1);
      CHECK(std::isfinite(s.train_loss));
    });
    CHECK(calls == 1);
    CHECK(r1.record.best_epoch == 1);
    CHECK(r1.record.train_losses.size() == 1);
    CHECK(r1.record.val_losses.size() == 1);
    CHECK(std::isfinite(r1.record.best_val_loss));
    auto r2 = train_model(data, enc, cfg, policy, 7);
    CHECK(r2.record.train_losses == r1.record.train_losses);
    CHECK(r2.record.val_losses == r1.record.val_losses);

    TrainData thin = data;
    thin.val.resize(1);
    CHECK_THROWS_AS(train_model(thin, enc, cfg, policy, 7), InvalidInput);
  }

  TEST_CASE("record json and summary table") {
    TrainRecord r;
    r.model_idx = 2;
    r.seed = 43;
    r.best_val_loss = 1.25;
    r.best_epoch = 4;
    r.model_path = "models/x_ensemble_2_hybrid_extractor_best.pth";
    r.train_losses = {2.0, 1.5};
    r.val_losses = {1.3, 1.25};
    const auto back = TrainRecord::from_json(r.to_json());
    CHECK(back.seed == 43);
    CHECK(back.val_losses == r.val_losses);
    const auto t = training_summary({r});
    CHECK((t.header() == std::vector<std::string>{"model_idx", "seed", "val_loss", "epoch", "model_path"}));
    CHECK(checkpoint_name("Indus", 3) == "Indus_ensemble_3_hybrid_extractor_best.pth");
  }
}
