#include "glyphsim/model.hpp"

#include <cmath>
#include <sstream>

#include "glyphsim/error.hpp"

namespace glyphsim::model {

namespace F = torch::nn::functional;
using nlohmann::json;

EncoderConfig EncoderConfig::paper() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::tiny() {
  EncoderConfig c;
  c.preset = "tiny";
  c.cnn_widths = {8, 16, 32, 64};
  c.swin_dims = {32, 64, 128, 256};
  c.swin_depths = {2, 2, 2, 2};
  c.swin_heads = {2, 2, 4, 4};
  c.fusion_hidden = 256;
  // few optimizer steps at this scale; 0.01 leaves the running stats near their init
  c.head_bn_momentum = 0.1;
  return c;
}

EncoderConfig EncoderConfig::from_preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "tiny") return tiny();
  throw ConfigError("unknown encoder preset '" + name + "' (expected paper or tiny)");
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("EncoderConfig: " + msg); };
  if (cnn_widths.empty() || cnn_widths.size() != cnn_blocks.size())
    fail("cnn_widths and cnn_blocks must be nonempty and the same length");
  if (swin_dims.empty() || swin_dims.size() != swin_depths.size() ||
      swin_dims.size() != swin_heads.size())
    fail("swin_dims, swin_depths and swin_heads must be nonempty and the same length");
  for (size_t i = 0; i < swin_dims.size(); ++i) {
    if (swin_dims[i] % swin_heads[i] != 0) fail("stage dim not divisible by head count");
    if (i + 1 < swin_dims.size() && swin_dims[i + 1] != 2 * swin_dims[i])
      fail("patch merging doubles the channel dim; swin_dims must double per stage");
  }
  if (patch_size < 1 || window_size < 1) fail("patch and window sizes must be positive");
  if (image_size % patch_size != 0) fail("image_size not divisible by patch_size");
  int64_t res = image_size / patch_size;
  for (size_t i = 0; i < swin_dims.size(); ++i) {
    const int64_t w = std::min(window_size, res);
    if (res % w != 0) fail("token grid " + std::to_string(res) + " not divisible by window");
    if (i + 1 < swin_dims.size()) {
      if (res % 2 != 0) fail("token grid must be even before patch merging");
      res /= 2;
    }
  }
  if (embedding_dim < 1 || fusion_hidden < 1) fail("projection dims must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

json EncoderConfig::to_json() const {
  return json{{"preset", preset},
              {"image_size", image_size},
              {"cnn_widths", cnn_widths},
              {"cnn_blocks", cnn_blocks},
              {"patch_size", patch_size},
              {"window_size", window_size},
              {"swin_dims", swin_dims},
              {"swin_depths", swin_depths},
              {"swin_heads", swin_heads},
              {"mlp_ratio", mlp_ratio},
              {"fusion_hidden", fusion_hidden},
              {"embedding_dim", embedding_dim},
              {"head_bn_momentum", head_bn_momentum},
              {"dropout", dropout}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c = from_preset(j.value("preset", std::string("paper")));
  auto take = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("image_size", c.image_size);
  take("cnn_widths", c.cnn_widths);
  take("cnn_blocks", c.cnn_blocks);
  take("patch_size", c.patch_size);
  take("window_size", c.window_size);
  take("swin_dims", c.swin_dims);
  take("swin_depths", c.swin_depths);
  take("swin_heads", c.swin_heads);
  take("mlp_ratio", c.mlp_ratio);
  take("fusion_hidden", c.fusion_hidden);
  take("embedding_dim", c.embedding_dim);
  take("head_bn_momentum", c.head_bn_momentum);
  take("dropout", c.dropout);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// attention primitives

std::pair<torch::Tensor, torch::Tensor> biased_attention(const torch::Tensor& q,
                                                         const torch::Tensor& k,
                                                         const torch::Tensor& v,
                                                         const torch::Tensor& bias) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  auto scores = torch::matmul(q, k.transpose(-2, -1)) * scale;
  if (bias.defined()) scores = scores + bias;
  auto weights = torch::softmax(scores, -1);
  return {torch::matmul(weights, v), weights};
}

torch::Tensor window_partition(const torch::Tensor& x, int64_t window) {
  const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  return x.view({b, h / window, window, w / window, window, c})
      .permute({0, 1, 3, 2, 4, 5})
      .contiguous()
      .view({-1, window * window, c});
}

torch::Tensor window_reverse(const torch::Tensor& windows, int64_t window, int64_t height,
                             int64_t width) {
  const auto per_image = (height / window) * (width / window);
  const auto b = windows.size(0) / per_image;
  return windows.view({b, height / window, width / window, window, window, -1})
      .permute({0, 1, 3, 2, 4, 5})
      .contiguous()
      .view({b, height, width, -1});
}

torch::Tensor relative_position_index(int64_t window) {
  const int64_t n = window * window;
  const int64_t span = 2 * window - 1;
  auto index = torch::empty({n, n}, torch::kLong);
  auto acc = index.accessor<int64_t, 2>();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const int64_t dy = i / window - j / window + window - 1;
      const int64_t dx = i % window - j % window + window - 1;
      acc[i][j] = dy * span + dx;
    }
  }
  return index;
}

// ---------------------------------------------------------------------------
// CNN pathway

ResidualBlockImpl::ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride) {
  using torch::nn::Conv2dOptions;
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(
                   Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1).bias(false)));
  bn1_ = register_module("bn1", torch::nn::BatchNorm2d(out_channels));
  conv2_ = register_module(
      "conv2",
      torch::nn::Conv2d(Conv2dOptions(out_channels, out_channels, 3).padding(1).bias(false)));
  bn2_ = register_module("bn2", torch::nn::BatchNorm2d(out_channels));
  if (stride != 1 || in_channels != out_channels) {
    downsample_conv_ = register_module(
        "downsample_conv",
        torch::nn::Conv2d(Conv2dOptions(in_channels, out_channels, 1).stride(stride).bias(false)));
    downsample_bn_ = register_module("downsample_bn", torch::nn::BatchNorm2d(out_channels));
  }
}

torch::Tensor ResidualBlockImpl::residual(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(conv1_(x)));
  return bn2_(conv2_(y));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x, torch::Tensor* out_tap) {
  auto shortcut = has_projection() ? downsample_bn_(downsample_conv_(x)) : x;
  auto y = torch::relu(residual(x) + shortcut);
  if (out_tap) *out_tap = y;
  return y;
}

ResNetPathwayImpl::ResNetPathwayImpl(const EncoderConfig& config) {
  using torch::nn::Conv2dOptions;
  const int64_t stem = config.cnn_widths.front();
  stem_conv_ = register_module(
      "stem_conv",
      torch::nn::Conv2d(Conv2dOptions(3, stem, 7).stride(2).padding(3).bias(false)));
  stem_bn_ = register_module("stem_bn", torch::nn::BatchNorm2d(stem));
  int64_t in = stem;
  for (size_t s = 0; s < config.cnn_widths.size(); ++s) {
    const int64_t out = config.cnn_widths[s];
    for (int64_t b = 0; b < config.cnn_blocks[s]; ++b) {
      const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      auto block = ResidualBlock(in, out, stride);
      blocks_.push_back(register_module(
          "stage" + std::to_string(s) + "_block" + std::to_string(b), block));
      in = out;
    }
  }
}

torch::Tensor ResNetPathwayImpl::forward(const torch::Tensor& x, torch::Tensor* last_map) {
  auto y = torch::relu(stem_bn_(stem_conv_(x)));
  y = F::max_pool2d(y, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const bool last = i + 1 == blocks_.size();
    y = blocks_[i]->forward(y, last ? last_map : nullptr);
  }
  return y.mean({2, 3});
}

// ---------------------------------------------------------------------------
// Swin pathway

WindowAttentionImpl::WindowAttentionImpl(int64_t dim, int64_t window, int64_t heads)
    : dim_(dim), window_(window), heads_(heads) {
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  const int64_t span = 2 * window - 1;
  bias_table_ = register_parameter("relative_position_bias_table",
                                   torch::zeros({span * span, heads}));
  bias_index_ = register_buffer("relative_position_index", relative_position_index(window));
}

torch::Tensor WindowAttentionImpl::position_bias() const {
  const int64_t n = window_ * window_;
  return bias_table_.index_select(0, bias_index_.view(-1))
      .view({n, n, heads_})
      .permute({2, 0, 1})
      .contiguous();
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& mask,
                                           torch::Tensor* weights) {
  const auto windows = x.size(0), n = x.size(1), c = x.size(2);
  auto qkv = qkv_(x).reshape({windows, n, 3, heads_, c / heads_}).permute({2, 0, 3, 1, 4});
  auto bias = position_bias().unsqueeze(0);  // (1, heads, n, n)
  if (mask.defined()) {
    const auto per_image = mask.size(0);
    bias = (bias + mask.unsqueeze(1)).repeat({windows / per_image, 1, 1, 1});
  }
  auto [out, attn] = biased_attention(qkv[0], qkv[1], qkv[2], bias);
  if (weights) *weights = attn;
  return proj_(out.transpose(1, 2).reshape({windows, n, c}));
}

SwinBlockImpl::SwinBlockImpl(int64_t dim, int64_t resolution, int64_t heads, int64_t window,
                             int64_t shift, double mlp_ratio)
    : dim_(dim), resolution_(resolution), window_(window), shift_(shift) {
  if (resolution_ <= window_) {
    window_ = resolution_;
    shift_ = 0;
  }
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", WindowAttention(dim, window_, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  const auto hidden = static_cast<int64_t>(dim * mlp_ratio);
  fc1_ = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, dim));

  if (shift_ > 0) {
    // Label the nine regions produced by the cyclic shift; tokens from
    // different regions must not attend to each other.
    auto regions = torch::zeros({1, resolution_, resolution_, 1});
    const int64_t bounds[4] = {0, resolution_ - window_, resolution_ - shift_, resolution_};
    float label = 0.0f;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        regions.index_put_({0, torch::indexing::Slice(bounds[a], bounds[a + 1]),
                            torch::indexing::Slice(bounds[b], bounds[b + 1]), 0},
                           label);
        label += 1.0f;
      }
    }
    auto ids = window_partition(regions, window_).squeeze(-1);  // (nW, M*M)
    auto diff = ids.unsqueeze(1) - ids.unsqueeze(2);
    attn_mask_ = register_buffer(
        "attn_mask", torch::zeros_like(diff).masked_fill(diff != 0, -100.0f));
  }
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(2);
  auto shortcut = x;
  auto y = norm1_(x).view({b, resolution_, resolution_, c});
  if (shift_ > 0) y = torch::roll(y, {-shift_, -shift_}, {1, 2});
  auto windows = window_partition(y, window_);
  windows = attn_(windows, attn_mask_);
  y = window_reverse(windows, window_, resolution_, resolution_);
  if (shift_ > 0) y = torch::roll(y, {shift_, shift_}, {1, 2});
  auto out = shortcut + y.view({b, resolution_ * resolution_, c});
  return out + fc2_(torch::gelu(fc1_(norm2_(out))));
}

PatchMergingImpl::PatchMergingImpl(int64_t resolution, int64_t dim)
    : resolution_(resolution), dim_(dim) {
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({4 * dim})));
  reduction_ = register_module(
      "reduction", torch::nn::Linear(torch::nn::LinearOptions(4 * dim, 2 * dim).bias(false)));
}

torch::Tensor PatchMergingImpl::forward(const torch::Tensor& x) {
  using torch::indexing::None;
  using torch::indexing::Slice;
  const auto b = x.size(0);
  auto grid = x.view({b, resolution_, resolution_, dim_});
  auto x0 = grid.index({Slice(), Slice(0, None, 2), Slice(0, None, 2), Slice()});
  auto x1 = grid.index({Slice(), Slice(1, None, 2), Slice(0, None, 2), Slice()});
  auto x2 = grid.index({Slice(), Slice(0, None, 2), Slice(1, None, 2), Slice()});
  auto x3 = grid.index({Slice(), Slice(1, None, 2), Slice(1, None, 2), Slice()});
  auto merged = torch::cat({x0, x1, x2, x3}, -1).view({b, -1, 4 * dim_});
  return reduction_(norm_(merged));
}

SwinPathwayImpl::SwinPathwayImpl(const EncoderConfig& config) {
  const int64_t d0 = config.swin_dims.front();
  patch_embed_ = register_module(
      "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, d0, config.patch_size)
                                           .stride(config.patch_size)));
  embed_norm_ =
      register_module("embed_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d0})));
  int64_t res = config.image_size / config.patch_size;
  for (size_t s = 0; s < config.swin_dims.size(); ++s) {
    std::vector<SwinBlock> stage;
    for (int64_t b = 0; b < config.swin_depths[s]; ++b) {
      const int64_t shift = (b % 2 == 0) ? 0 : config.window_size / 2;
      stage.push_back(register_module(
          "stage" + std::to_string(s) + "_block" + std::to_string(b),
          SwinBlock(config.swin_dims[s], res, config.swin_heads[s], config.window_size, shift,
                    config.mlp_ratio)));
    }
    stages_.push_back(std::move(stage));
    if (s + 1 < config.swin_dims.size()) {
      merges_.push_back(register_module("merge" + std::to_string(s),
                                        PatchMerging(res, config.swin_dims[s])));
      res /= 2;
    }
  }
  final_resolution_ = res;
  final_norm_ = register_module(
      "final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({config.swin_out()})));
}

torch::Tensor SwinPathwayImpl::forward(const torch::Tensor& x, torch::Tensor* final_tokens) {
  auto y = patch_embed_(x).flatten(2).transpose(1, 2);
  y = embed_norm_(y);
  for (size_t s = 0; s < stages_.size(); ++s) {
    for (auto& block : stages_[s]) y = block->forward(y);
    if (s < merges_.size()) y = merges_[s]->forward(y);
  }
  if (final_tokens) {
    // route the pooled output through the grid so gradients can be taken w.r.t. it
    *final_tokens =
        y.transpose(1, 2).reshape({y.size(0), y.size(2), final_resolution_, final_resolution_});
    y = final_tokens->flatten(2).transpose(1, 2);
  }
  return final_norm_(y).mean(1);
}

// ---------------------------------------------------------------------------
// fusion

ProjectionHeadImpl::ProjectionHeadImpl(int64_t in_dim, int64_t hidden_dim, int64_t out_dim,
                                       double bn_momentum, double dropout) {
  fc1_ = register_module("fc1", torch::nn::Linear(in_dim, hidden_dim));
  bn1_ = register_module(
      "bn1", torch::nn::BatchNorm1d(torch::nn::BatchNormOptions(hidden_dim).momentum(bn_momentum)));
  dropout_ = register_module("dropout", torch::nn::Dropout(dropout));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden_dim, out_dim));
  bn2_ = register_module(
      "bn2", torch::nn::BatchNorm1d(torch::nn::BatchNormOptions(out_dim).momentum(bn_momentum)));
}

torch::Tensor ProjectionHeadImpl::forward(const torch::Tensor& z) {
  auto h = dropout_(torch::relu(bn1_(fc1_(z))));
  return bn2_(fc2_(h));
}

HybridEncoderImpl::HybridEncoderImpl(const EncoderConfig& config) : config_(config) {
  config_.validate();
  cnn_ = register_module("cnn", ResNetPathway(config_));
  swin_ = register_module("swin", SwinPathway(config_));
  head_ = register_module("head", ProjectionHead(config_.concat_dim(), config_.fusion_hidden,
                                                 config_.embedding_dim,
                                                 config_.head_bn_momentum, config_.dropout));
}

void HybridEncoderImpl::check_input(const torch::Tensor& pixels) const {
  if (pixels.dim() != 4 || pixels.size(1) != 3 || pixels.size(2) != config_.image_size ||
      pixels.size(3) != config_.image_size) {
    std::ostringstream msg;
    msg << "encoder expects (B, 3, " << config_.image_size << ", " << config_.image_size
        << ") input, got " << pixels.sizes();
    throw ShapeError(msg.str());
  }
}

torch::Tensor HybridEncoderImpl::fuse_project(const torch::Tensor& cnn_feat,
                                              const torch::Tensor& swin_feat) {
  if (cnn_feat.dim() != 2 || swin_feat.dim() != 2 || cnn_feat.size(1) != config_.cnn_out() ||
      swin_feat.size(1) != config_.swin_out() || cnn_feat.size(0) != swin_feat.size(0)) {
    std::ostringstream msg;
    msg << "fuse_project expects (B, " << config_.cnn_out() << ") and (B, "
        << config_.swin_out() << "), got " << cnn_feat.sizes() << " and " << swin_feat.sizes();
    throw ShapeError(msg.str());
  }
  return head_(torch::cat({cnn_feat, swin_feat}, 1));
}

HybridFeatures HybridEncoderImpl::features(const torch::Tensor& pixels, bool keep_maps) {
  check_input(pixels);
  HybridFeatures f;
  f.cnn = cnn_(pixels, keep_maps ? &f.cnn_map : nullptr);
  f.swin = swin_(pixels, keep_maps ? &f.swin_map : nullptr);
  f.fused = fuse_project(f.cnn, f.swin);
  return f;
}

torch::Tensor HybridEncoderImpl::forward(const torch::Tensor& pixels) {
  return features(pixels).fused;
}

// ---------------------------------------------------------------------------

namespace {

void trunc_normal_(torch::Tensor& t, double std) {
  // inverse-CDF sampling restricted to [-2 std, 2 std]
  const double lo = 0.5 * (1.0 + std::erf(-2.0 / std::sqrt(2.0)));
  const double hi = 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0)));
  t.uniform_(2.0 * lo - 1.0, 2.0 * hi - 1.0).erfinv_().mul_(std * std::sqrt(2.0));
}

}  // namespace

void initialize(HybridEncoder& encoder, uint64_t seed) {
  torch::manual_seed(seed);
  torch::NoGradGuard no_grad;
  for (auto& m : encoder->cnn_->modules(/*include_self=*/true)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
  for (auto& m : encoder->swin_->modules(true)) {
    if (auto* lin = m->as<torch::nn::Linear>()) {
      trunc_normal_(lin->weight, 0.02);
      if (lin->bias.defined()) lin->bias.zero_();
    } else if (auto* ln = m->as<torch::nn::LayerNorm>()) {
      ln->weight.fill_(1.0);
      ln->bias.zero_();
    } else if (auto* attn = m->as<WindowAttention>()) {
      attn->bias_table_.zero_();
    } else if (auto* conv = m->as<torch::nn::Conv2d>()) {
      // patch embedding
      trunc_normal_(conv->weight, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    }
  }
  auto& head = encoder->head_;
  head->fc1_->reset_parameters();
  head->fc2_->reset_parameters();
}

void save_checkpoint(HybridEncoder& encoder, uint64_t seed, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  encoder->save(archive);
  archive.write("glyphsim_config", c10::IValue(encoder->config().to_json().dump()));
  archive.write("glyphsim_seed", c10::IValue(static_cast<int64_t>(seed)));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive.save_to(path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw MissingArtifact("checkpoint not found: " + path.string(), "train");
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  c10::IValue config_value, seed_value;
  archive.read("glyphsim_config", config_value);
  archive.read("glyphsim_seed", seed_value);
  Checkpoint ck;
  ck.config = EncoderConfig::from_json(json::parse(config_value.toStringRef()));
  ck.seed = static_cast<uint64_t>(seed_value.toInt());
  ck.encoder = HybridEncoder(ck.config);
  ck.encoder->load(archive);
  ck.encoder->eval();
  return ck;
}

int64_t parameter_count(HybridEncoder& encoder) {
  int64_t n = 0;
  for (const auto& p : encoder->parameters()) n += p.numel();
  return n;
}

}  // namespace glyphsim::model
