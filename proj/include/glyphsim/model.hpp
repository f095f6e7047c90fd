#pragma once

// Two-pathway glyph encoder: a residual CNN for local stroke detail and a
// shifted-window transformer for global layout, fused by a projection head.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace glyphsim::model {

struct EncoderConfig {
  std::string preset = "paper";
  int64_t image_size = 224;

  std::vector<int64_t> cnn_widths{64, 128, 256, 512};
  std::vector<int64_t> cnn_blocks{2, 2, 2, 2};

  int64_t patch_size = 4;
  int64_t window_size = 7;
  std::vector<int64_t> swin_dims{128, 256, 512, 1024};
  std::vector<int64_t> swin_depths{2, 2, 18, 2};
  std::vector<int64_t> swin_heads{4, 8, 16, 32};
  double mlp_ratio = 4.0;

  int64_t fusion_hidden = 1024;
  int64_t embedding_dim = 256;
  double head_bn_momentum = 0.01;
  double dropout = 0.1;

  static EncoderConfig paper();
  static EncoderConfig tiny();
  static EncoderConfig from_preset(const std::string& name);

  int64_t cnn_out() const { return cnn_widths.back(); }
  int64_t swin_out() const { return swin_dims.back(); }
  int64_t concat_dim() const { return cnn_out() + swin_out(); }

  // Throws ConfigError on inconsistent stage lists or a non-divisible grid.
  void validate() const;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

// Softmax(Q K^T / sqrt(d_k) + B) V over the last two dims. `bias` broadcasts
// against the score tensor; pass an undefined tensor for no bias. Returns the
// attention output and the row-stochastic weight tensor.
std::pair<torch::Tensor, torch::Tensor> biased_attention(const torch::Tensor& q,
                                                         const torch::Tensor& k,
                                                         const torch::Tensor& v,
                                                         const torch::Tensor& bias);

// (B, H, W, C) -> (B * nW, M*M, C)
torch::Tensor window_partition(const torch::Tensor& x, int64_t window);
// inverse of window_partition
torch::Tensor window_reverse(const torch::Tensor& windows, int64_t window, int64_t height,
                             int64_t width);

// Index into the (2M-1)^2 bias table for every (query, key) pair of an MxM window.
torch::Tensor relative_position_index(int64_t window);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in_channels, int64_t out_channels, int64_t stride);
  // `out_tap` receives the rectified block output.
  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* out_tap = nullptr);

  // Branch F(x) of y = F(x) + x, without the shortcut and final rectifier.
  torch::Tensor residual(const torch::Tensor& x);
  bool has_projection() const { return !downsample_conv_.is_empty(); }

  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Conv2d downsample_conv_{nullptr};
  torch::nn::BatchNorm2d downsample_bn_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class ResNetPathwayImpl : public torch::nn::Module {
 public:
  explicit ResNetPathwayImpl(const EncoderConfig& config);
  // (B,3,S,S) -> (B, cnn_out). `last_map` receives the last block's rectified
  // output, the final conv feature map (Grad-CAM target).
  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* last_map = nullptr);

  torch::nn::Conv2d stem_conv_{nullptr};
  torch::nn::BatchNorm2d stem_bn_{nullptr};
  std::vector<ResidualBlock> blocks_;
};
TORCH_MODULE(ResNetPathway);

class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(int64_t dim, int64_t window, int64_t heads);
  // x: (B*nW, M*M, C); mask: (nW, M*M, M*M) with 0 / -100 entries, or undefined.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask = {},
                        torch::Tensor* weights = nullptr);
  // (heads, M*M, M*M) gathered from the learnable table.
  torch::Tensor position_bias() const;

  int64_t dim_, window_, heads_;
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
  torch::Tensor bias_table_;
  torch::Tensor bias_index_;
};
TORCH_MODULE(WindowAttention);

class SwinBlockImpl : public torch::nn::Module {
 public:
  SwinBlockImpl(int64_t dim, int64_t resolution, int64_t heads, int64_t window, int64_t shift,
                double mlp_ratio);
  // x: (B, L, C) with L = resolution^2
  torch::Tensor forward(const torch::Tensor& x);

  int64_t dim_, resolution_, window_, shift_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  WindowAttention attn_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  torch::Tensor attn_mask_;
};
TORCH_MODULE(SwinBlock);

class PatchMergingImpl : public torch::nn::Module {
 public:
  PatchMergingImpl(int64_t resolution, int64_t dim);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t resolution_, dim_;
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear reduction_{nullptr};
};
TORCH_MODULE(PatchMerging);

class SwinPathwayImpl : public torch::nn::Module {
 public:
  explicit SwinPathwayImpl(const EncoderConfig& config);
  // (B,3,S,S) -> (B, swin_out). `final_tokens` receives the last block output
  // as a (B, C, R, R) grid.
  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* final_tokens = nullptr);

  int64_t final_resolution_ = 0;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::nn::LayerNorm embed_norm_{nullptr};
  std::vector<std::vector<SwinBlock>> stages_;
  std::vector<PatchMerging> merges_;
  torch::nn::LayerNorm final_norm_{nullptr};
};
TORCH_MODULE(SwinPathway);

// BN -> ReLU -> Dropout on the first linear map, BN on the second.
class ProjectionHeadImpl : public torch::nn::Module {
 public:
  ProjectionHeadImpl(int64_t in_dim, int64_t hidden_dim, int64_t out_dim, double bn_momentum,
                     double dropout);
  torch::Tensor forward(const torch::Tensor& z);

  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  torch::nn::BatchNorm1d bn1_{nullptr}, bn2_{nullptr};
  torch::nn::Dropout dropout_{nullptr};
};
TORCH_MODULE(ProjectionHead);

struct HybridFeatures {
  torch::Tensor cnn;    // (B, cnn_out)
  torch::Tensor swin;   // (B, swin_out)
  torch::Tensor fused;  // (B, embedding_dim)
  torch::Tensor cnn_map;   // Grad-CAM targets, filled when requested
  torch::Tensor swin_map;
};

class HybridEncoderImpl : public torch::nn::Module {
 public:
  explicit HybridEncoderImpl(const EncoderConfig& config);

  torch::Tensor forward(const torch::Tensor& pixels);
  HybridFeatures features(const torch::Tensor& pixels, bool keep_maps = false);
  torch::Tensor fuse_project(const torch::Tensor& cnn_feat, const torch::Tensor& swin_feat);

  const EncoderConfig& config() const { return config_; }

  ResNetPathway cnn_{nullptr};
  SwinPathway swin_{nullptr};
  ProjectionHead head_{nullptr};

 private:
  void check_input(const torch::Tensor& pixels) const;
  EncoderConfig config_;
};
TORCH_MODULE(HybridEncoder);

// Random init: truncated normal (std 0.02) for transformer linears,
// fan-out normal for convolutions; bias tables start at zero.
void initialize(HybridEncoder& encoder, uint64_t seed);

struct Checkpoint {
  HybridEncoder encoder{nullptr};
  EncoderConfig config;
  uint64_t seed = 0;
};

void save_checkpoint(HybridEncoder& encoder, uint64_t seed, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

int64_t parameter_count(HybridEncoder& encoder);

}  // namespace glyphsim::model
