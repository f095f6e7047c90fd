#pragma once

// Contrastive training of one encoder and of a seeded ensemble.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "glyphsim/augment.hpp"
#include "glyphsim/corpus.hpp"
#include "glyphsim/io.hpp"
#include "glyphsim/loss.hpp"
#include "glyphsim/model.hpp"
#include "json.hpp"

namespace glyphsim::trainer {

struct TrainConfig {
  double lr_max = 3e-5;
  double lr_min = 0.0;
  double weight_decay = 1e-3;
  int max_epochs = 20;
  int patience = 5;
  double min_delta = 1e-6;
  double warmup_frac = 0.10;
  double temperature = 0.1;
  double unif_weight = 0.1;
  double var_weight = 1.0;
  double var_eps = 1e-4;
  double grad_clip_norm = 1.0;
  int batch_size = 64;
  std::vector<uint64_t> seeds{42, 43, 44, 45, 46};

  LossConfig loss() const { return {temperature, var_weight, var_eps, unif_weight}; }
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

// Linear warmup 0 -> lr_max over warmup_frac * total_steps, cosine to lr_min after.
double lr_at(double step, double total_steps, const TrainConfig& config);

class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta = 1e-6) : patience_(patience), min_delta_(min_delta) {}

  // Feed one epoch's validation loss; returns true once training should stop.
  bool update(double loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }  // 1-based, 0 before any update
  int epochs() const { return epochs_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = INFINITY;
  int best_epoch_ = 0;
  int epochs_ = 0;
  int bad_ = 0;
  bool improved_ = false;
};

// Differentiable wrapper over the double-precision loss (rows pair i <-> i + N).
torch::Tensor contrastive_loss(const torch::Tensor& z, const LossConfig& config,
                               LossTerms* terms = nullptr);

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_gradients(const std::vector<torch::Tensor>& parameters, double max_norm);

// Pixels of normalized glyphs as a (B, 3, S, S) float tensor.
torch::Tensor to_batch(const std::vector<corpus::GlyphImage>& glyphs);

// Contiguous batch ranges over n items; a trailing singleton joins the previous batch.
std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n, size_t batch_size);

struct TrainData {
  std::vector<const corpus::GlyphImage*> train;
  std::vector<const corpus::GlyphImage*> val;
};

// Train and val subsets of every corpus, in corpus order.
TrainData collect_splits(const std::vector<const corpus::ScriptCorpus*>& corpora);

struct TrainRecord {
  int model_idx = 0;  // 1-based
  uint64_t seed = 0;
  double best_val_loss = INFINITY;
  int best_epoch = 0;
  std::string model_path;
  std::vector<double> train_losses;
  std::vector<double> val_losses;
  bool stopped_early = false;
  bool diverged = false;
  std::string diagnostic;

  nlohmann::json to_json() const;
  static TrainRecord from_json(const nlohmann::json& j);
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};
using EpochCallback = std::function<void(const EpochStats&)>;

struct TrainResult {
  model::HybridEncoder encoder{nullptr};  // parameters of the best epoch
  TrainRecord record;
};

// Mean loss over fixed augmented pairs of `glyphs` in eval mode.
double validation_loss(model::HybridEncoder& encoder, const std::vector<const corpus::GlyphImage*>& glyphs,
                       const TrainConfig& config, const augment::AugmentationPolicy& policy,
                       uint64_t seed);

TrainResult train_model(const TrainData& data, const model::EncoderConfig& encoder_config,
                        const TrainConfig& config, const augment::AugmentationPolicy& policy,
                        uint64_t seed, const EpochCallback& on_epoch = {});

std::string checkpoint_name(const std::string& ensemble, int model_idx);

struct EnsembleTrainResult {
  std::string name;
  std::vector<TrainRecord> records;
  bool partial = false;
};

// One member per config seed, checkpoints under <run_dir>/models/.
EnsembleTrainResult train_ensemble(const std::string& name, const TrainData& data,
                                   const model::EncoderConfig& encoder_config,
                                   const TrainConfig& config,
                                   const augment::AugmentationPolicy& policy,
                                   const std::filesystem::path& run_dir,
                                   const EpochCallback& on_epoch = {});

// Header: model_idx,seed,val_loss,epoch,model_path
io::Table training_summary(const std::vector<TrainRecord>& records);

}  // namespace glyphsim::trainer
