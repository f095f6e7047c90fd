#include "glyphsim/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "glyphsim/error.hpp"
#include "glyphsim/rng.hpp"

namespace glyphsim::trainer {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw ConfigError("warmup_frac must lie in (0, 1)");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs) throw ConfigError("patience must lie in [1, max_epochs]");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (negatives come from the batch)");
  if (!(lr_max > 0.0) || lr_min < 0.0 || lr_min > lr_max) throw ConfigError("need 0 <= lr_min <= lr_max, lr_max > 0");
  if (weight_decay < 0.0 || var_weight < 0.0 || var_eps <= 0.0 || unif_weight < 0.0)
    throw ConfigError("loss weights must be nonnegative and var_eps positive");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be > 0");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  auto sorted = seeds;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError("ensemble seeds must be distinct");
}

json TrainConfig::to_json() const {
  return json{{"lr_max", lr_max},           {"lr_min", lr_min},
              {"weight_decay", weight_decay}, {"max_epochs", max_epochs},
              {"patience", patience},       {"min_delta", min_delta},
              {"warmup_frac", warmup_frac}, {"temperature", temperature},
              {"unif_weight", unif_weight}, {"var_weight", var_weight},
              {"var_eps", var_eps},         {"grad_clip_norm", grad_clip_norm},
              {"batch_size", batch_size},   {"seeds", seeds}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.lr_max = j.value("lr_max", c.lr_max);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.min_delta = j.value("min_delta", c.min_delta);
  c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
  c.temperature = j.value("temperature", c.temperature);
  c.unif_weight = j.value("unif_weight", c.unif_weight);
  c.var_weight = j.value("var_weight", c.var_weight);
  c.var_eps = j.value("var_eps", c.var_eps);
  c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  c.validate();
  return c;
}

double lr_at(double step, double total_steps, const TrainConfig& config) {
  const double warm = config.warmup_frac * total_steps;
  if (step <= warm) return warm > 0.0 ? config.lr_max * (step / warm) : config.lr_max;
  const double progress = std::min(1.0, (step - warm) / (total_steps - warm));
  return config.lr_min +
         0.5 * (config.lr_max - config.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

bool EarlyStopping::update(double loss) {
  ++epochs_;
  improved_ = loss < best_ - min_delta_;
  if (improved_) {
    best_ = loss;
    best_epoch_ = epochs_;
    bad_ = 0;
  } else {
    ++bad_;
  }
  return bad_ >= patience_;
}

namespace {

class ContrastiveFunction : public torch::autograd::Function<ContrastiveFunction> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& z,
                               LossConfig config, LossTerms* terms) {
    if (z.dim() != 2) throw ShapeError("contrastive loss expects a (2N, D) tensor");
    const auto zd = z.detach().to(torch::kDouble).contiguous();
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMajor> view(zd.data_ptr<double>(), zd.size(0), zd.size(1));
    const Eigen::MatrixXd mat = view;
    const auto pair = half_pairing(mat.rows());
    auto result = contrastive_loss(mat, pair, config, /*with_grad=*/true);
    if (terms) *terms = result.terms;
    RowMajor g = result.grad;
    auto grad = torch::from_blob(g.data(), {g.rows(), g.cols()}, torch::kDouble).clone().to(z.dtype());
    ctx->save_for_backward({grad});
    return torch::tensor(result.terms.total, z.options());
  }

  static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                 torch::autograd::variable_list grad_out) {
    auto grad = ctx->get_saved_variables()[0];
    return {grad * grad_out[0], torch::Tensor(), torch::Tensor()};
  }
};

std::vector<std::pair<std::string, torch::Tensor>> snapshot(model::HybridEncoder& encoder) {
  std::vector<std::pair<std::string, torch::Tensor>> state;
  for (const auto& p : encoder->named_parameters()) state.emplace_back(p.key(), p.value().detach().clone());
  for (const auto& b : encoder->named_buffers()) state.emplace_back(b.key(), b.value().detach().clone());
  return state;
}

void restore(model::HybridEncoder& encoder,
             const std::vector<std::pair<std::string, torch::Tensor>>& state) {
  torch::NoGradGuard no_grad;
  auto params = encoder->named_parameters();
  auto buffers = encoder->named_buffers();
  for (const auto& [name, value] : state) {
    if (auto* p = params.find(name)) {
      p->copy_(value);
    } else if (auto* b = buffers.find(name)) {
      b->copy_(value);
    }
  }
}

// Two augmented views per glyph, laid out as [a_0..a_{B-1}, b_0..b_{B-1}].
torch::Tensor pair_batch(const std::vector<const corpus::GlyphImage*>& glyphs,
                         const augment::AugmentationPolicy& policy, Rng& rng) {
  std::vector<corpus::GlyphImage> first, second;
  first.reserve(glyphs.size());
  second.reserve(glyphs.size());
  for (const auto* g : glyphs) {
    auto [a, b] = augment::positive_pair(*g, policy, rng);
    first.push_back(std::move(a));
    second.push_back(std::move(b));
  }
  first.insert(first.end(), std::make_move_iterator(second.begin()),
               std::make_move_iterator(second.end()));
  return to_batch(first);
}

}  // namespace

torch::Tensor contrastive_loss(const torch::Tensor& z, const LossConfig& config, LossTerms* terms) {
  return ContrastiveFunction::apply(z, config, terms);
}

double clip_gradients(const std::vector<torch::Tensor>& parameters, double max_norm) {
  double sq = 0.0;
  for (const auto& p : parameters)
    if (p.grad().defined()) sq += p.grad().to(torch::kDouble).pow(2).sum().item<double>();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    torch::NoGradGuard no_grad;
    for (const auto& p : parameters)
      if (p.grad().defined()) p.grad().mul_(scale);
  }
  return norm;
}

torch::Tensor to_batch(const std::vector<corpus::GlyphImage>& glyphs) {
  if (glyphs.empty()) throw InvalidInput("empty batch");
  std::vector<torch::Tensor> items;
  items.reserve(glyphs.size());
  for (const auto& g : glyphs) {
    if (!g.normalized || g.pixels.type() != CV_32FC3 || !g.pixels.isContinuous())
      throw InvalidInput("batch glyph '" + g.glyph_id + "' is not a standardized raster");
    auto t = torch::from_blob(const_cast<float*>(g.pixels.ptr<float>()),
                              {g.pixels.rows, g.pixels.cols, 3}, torch::kFloat32);
    items.push_back(t.permute({2, 0, 1}).clone());
  }
  return torch::stack(items);
}

std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n, size_t batch_size) {
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t start = 0; start < n; start += batch_size) out.emplace_back(start, std::min(n, start + batch_size));
  if (out.size() > 1 && out.back().second - out.back().first == 1) {
    out.pop_back();
    out.back().second = n;
  }
  return out;
}

TrainData collect_splits(const std::vector<const corpus::ScriptCorpus*>& corpora) {
  TrainData d;
  for (const auto* c : corpora) {
    if (!c->has_splits()) throw InvalidInput("corpus '" + c->name + "' has no train/val/test split");
    for (auto* g : c->subset(corpus::Split::train)) d.train.push_back(g);
    for (auto* g : c->subset(corpus::Split::val)) d.val.push_back(g);
  }
  return d;
}

json TrainRecord::to_json() const {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  json train = json::array(), val = json::array();
  for (double x : train_losses) train.push_back(num(x));
  for (double x : val_losses) val.push_back(num(x));
  return json{{"model_idx", model_idx},
              {"seed", seed},
              {"best_val_loss", num(best_val_loss)},
              {"best_epoch", best_epoch},
              {"model_path", model_path},
              {"train_losses", train},
              {"val_losses", val},
              {"stopped_early", stopped_early},
              {"diverged", diverged},
              {"diagnostic", diagnostic}};
}

TrainRecord TrainRecord::from_json(const json& j) {
  auto num = [](const json& v) { return v.is_null() ? NAN : v.get<double>(); };
  TrainRecord r;
  r.model_idx = j.at("model_idx").get<int>();
  r.seed = j.at("seed").get<uint64_t>();
  r.best_val_loss = num(j.at("best_val_loss"));
  r.best_epoch = j.at("best_epoch").get<int>();
  r.model_path = j.at("model_path").get<std::string>();
  for (const auto& v : j.value("train_losses", json::array())) r.train_losses.push_back(num(v));
  for (const auto& v : j.value("val_losses", json::array())) r.val_losses.push_back(num(v));
  r.stopped_early = j.value("stopped_early", false);
  r.diverged = j.value("diverged", false);
  r.diagnostic = j.value("diagnostic", "");
  return r;
}

double validation_loss(model::HybridEncoder& encoder,
                       const std::vector<const corpus::GlyphImage*>& glyphs,
                       const TrainConfig& config, const augment::AugmentationPolicy& policy,
                       uint64_t seed) {
  if (glyphs.size() < 2) throw InvalidInput("validation split needs at least 2 glyphs");
  const bool was_training = encoder->is_training();
  encoder->eval();
  torch::NoGradGuard no_grad;
  Rng rng(seed);
  double sum = 0.0;
  size_t rows = 0;
  for (auto [lo, hi] : batch_ranges(glyphs.size(), static_cast<size_t>(config.batch_size))) {
    std::vector<const corpus::GlyphImage*> part(glyphs.begin() + lo, glyphs.begin() + hi);
    auto z = encoder->forward(pair_batch(part, policy, rng));
    const double loss = contrastive_loss(z, config.loss()).item<double>();
    sum += loss * static_cast<double>(hi - lo);
    rows += hi - lo;
  }
  encoder->train(was_training);
  return sum / static_cast<double>(rows);
}

TrainResult train_model(const TrainData& data, const model::EncoderConfig& encoder_config,
                        const TrainConfig& config, const augment::AugmentationPolicy& policy,
                        uint64_t seed, const EpochCallback& on_epoch) {
  config.validate();
  encoder_config.validate();
  if (data.train.size() < 2) throw InvalidInput("training split needs at least 2 glyphs");
  if (data.val.size() < 2) throw InvalidInput("validation split needs at least 2 glyphs");

  TrainResult result;
  result.record.seed = seed;
  result.encoder = model::HybridEncoder(encoder_config);
  auto& encoder = result.encoder;
  model::initialize(encoder, seed);

  auto params = encoder->parameters();
  torch::optim::AdamW optimizer(
      params, torch::optim::AdamWOptions(config.lr_max).weight_decay(config.weight_decay));

  const auto batches = batch_ranges(data.train.size(), static_cast<size_t>(config.batch_size));
  const double total_steps = static_cast<double>(batches.size()) * config.max_epochs;
  const uint64_t val_seed = derive_seed(seed, "validation");

  EarlyStopping stopper(config.patience, config.min_delta);
  auto best_state = snapshot(encoder);
  int64_t step = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng(derive_seed(seed, "epoch", static_cast<uint64_t>(epoch)));
    std::vector<size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    encoder->train();
    double epoch_loss = 0.0;
    double lr = 0.0;
    for (auto [lo, hi] : batches) {
      std::vector<const corpus::GlyphImage*> part;
      for (size_t i = lo; i < hi; ++i) part.push_back(data.train[order[i]]);
      auto x = pair_batch(part, policy, rng);

      lr = lr_at(static_cast<double>(step), total_steps, config);
      for (auto& group : optimizer.param_groups())
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

      optimizer.zero_grad();
      auto loss = contrastive_loss(encoder->forward(x), config.loss());
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        result.record.diverged = true;
        result.record.diagnostic = "non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step);
        return result;
      }
      loss.backward();
      clip_gradients(params, config.grad_clip_norm);
      optimizer.step();
      epoch_loss += value * static_cast<double>(hi - lo);
      ++step;
    }
    epoch_loss /= static_cast<double>(data.train.size());

    const double val = validation_loss(encoder, data.val, config, policy, val_seed);
    result.record.train_losses.push_back(epoch_loss);
    result.record.val_losses.push_back(val);
    if (!std::isfinite(val)) {
      result.record.diverged = true;
      result.record.diagnostic = "non-finite validation loss at epoch " + std::to_string(epoch);
      return result;
    }
    const bool stop = stopper.update(val);
    if (stopper.improved()) best_state = snapshot(encoder);
    if (on_epoch) on_epoch({epoch, epoch_loss, val, lr});
    if (stop) {
      result.record.stopped_early = epoch < config.max_epochs;
      break;
    }
  }

  restore(encoder, best_state);
  encoder->eval();
  result.record.best_val_loss = stopper.best();
  result.record.best_epoch = stopper.best_epoch();
  return result;
}

std::string checkpoint_name(const std::string& ensemble, int model_idx) {
  return ensemble + "_ensemble_" + std::to_string(model_idx) + "_hybrid_extractor_best.pth";
}

EnsembleTrainResult train_ensemble(const std::string& name, const TrainData& data,
                                   const model::EncoderConfig& encoder_config,
                                   const TrainConfig& config,
                                   const augment::AugmentationPolicy& policy,
                                   const fs::path& run_dir, const EpochCallback& on_epoch) {
  config.validate();
  EnsembleTrainResult out;
  out.name = name;
  for (size_t i = 0; i < config.seeds.size(); ++i) {
    const int idx = static_cast<int>(i) + 1;
    auto trained = train_model(data, encoder_config, config, policy, config.seeds[i], on_epoch);
    trained.record.model_idx = idx;
    if (trained.record.diverged) {
      out.partial = true;
    } else {
      const fs::path rel = fs::path("models") / checkpoint_name(name, idx);
      model::save_checkpoint(trained.encoder, config.seeds[i], run_dir / rel);
      trained.record.model_path = rel.generic_string();
    }
    out.records.push_back(std::move(trained.record));
  }
  return out;
}

io::Table training_summary(const std::vector<TrainRecord>& records) {
  io::Table t({"model_idx", "seed", "val_loss", "epoch", "model_path"});
  for (const auto& r : records) {
    t.add_row({std::to_string(r.model_idx), std::to_string(r.seed),
               std::isfinite(r.best_val_loss) ? io::format_double(r.best_val_loss) : "nan",
               std::to_string(r.best_epoch), r.model_path});
  }
  return t;
}

}  // namespace glyphsim::trainer
