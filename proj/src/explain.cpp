#include "glyphsim/explain.hpp"

#include <algorithm>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "glyphsim/error.hpp"
#include "glyphsim/trainer.hpp"

namespace glyphsim::explain {

namespace F = torch::nn::functional;

std::string to_string(Pathway p) { return p == Pathway::cnn ? "cnn" : "swin"; }

Pathway parse_pathway(std::string_view name) {
  if (name == "cnn") return Pathway::cnn;
  if (name == "swin") return Pathway::swin;
  throw ConfigError("unknown pathway '" + std::string(name) + "' (cnn, swin)");
}

namespace {

std::string layer_name(const model::EncoderConfig& config, Pathway p) {
  const size_t last = config.cnn_widths.size() - 1;
  if (p == Pathway::cnn)
    return "cnn.stage" + std::to_string(last) + "_block" +
           std::to_string(config.cnn_blocks.back() - 1) + ".out";
  return "swin.stage" + std::to_string(config.swin_dims.size() - 1) + ".tokens";
}

AttentionMap make_map(const torch::Tensor& activation, const torch::Tensor& gradient, Pathway p,
                      const corpus::GlyphImage& glyph, const model::EncoderConfig& config) {
  AttentionMap out;
  out.pathway = p;
  out.glyph_id = glyph.glyph_id;
  out.layer = layer_name(config, p);
  const int64_t size = config.image_size;

  auto act = activation.detach().to(torch::kDouble);
  auto grad = gradient.detach().to(torch::kDouble);
  auto weights = grad.mean({2, 3}, /*keepdim=*/true);
  auto cam = torch::relu((weights * act).sum(1, /*keepdim=*/true));  // (1,1,R,R)
  auto up = F::interpolate(cam, F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{size, size})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));

  auto grid = cam[0][0].to(torch::kFloat).contiguous();
  out.grid = cv::Mat(static_cast<int>(grid.size(0)), static_cast<int>(grid.size(1)), CV_32F,
                     grid.data_ptr<float>()).clone();

  const double lo = up.min().item<double>();
  const double hi = up.max().item<double>();
  const bool zero_grad = grad.abs().max().item<double>() == 0.0;
  if (zero_grad || !(hi - lo > 1e-12 * std::max(1.0, std::abs(hi)))) {
    out.degenerate = true;
    out.heat = cv::Mat::zeros(static_cast<int>(size), static_cast<int>(size), CV_32F);
    return out;
  }
  auto norm = ((up - lo) / (hi - lo)).clamp(0.0, 1.0)[0][0].to(torch::kFloat).contiguous();
  out.heat = cv::Mat(static_cast<int>(size), static_cast<int>(size), CV_32F, norm.data_ptr<float>()).clone();
  return out;
}

}  // namespace

std::pair<AttentionMap, AttentionMap> grad_cam_both(model::HybridEncoder& encoder,
                                                    const corpus::GlyphImage& glyph) {
  const bool was_training = encoder->is_training();
  encoder->eval();
  torch::AutoGradMode enable(true);
  auto x = trainer::to_batch({glyph});
  auto f = encoder->features(x, /*keep_maps=*/true);
  auto objective = f.fused.norm();
  auto grads = torch::autograd::grad({objective}, {f.cnn_map, f.swin_map}, /*grad_outputs=*/{},
                                     /*retain_graph=*/false, /*create_graph=*/false,
                                     /*allow_unused=*/true);
  auto fill = [](torch::Tensor g, const torch::Tensor& like) {
    return g.defined() ? g : torch::zeros_like(like);
  };
  const auto& config = encoder->config();
  auto cnn = make_map(f.cnn_map, fill(grads[0], f.cnn_map), Pathway::cnn, glyph, config);
  auto swin = make_map(f.swin_map, fill(grads[1], f.swin_map), Pathway::swin, glyph, config);
  encoder->train(was_training);
  return {std::move(cnn), std::move(swin)};
}

AttentionMap grad_cam(model::HybridEncoder& encoder, const corpus::GlyphImage& glyph, Pathway pathway) {
  auto both = grad_cam_both(encoder, glyph);
  return pathway == Pathway::cnn ? std::move(both.first) : std::move(both.second);
}

cv::Mat overlay(const cv::Mat& intensity, const cv::Mat& heat, double alpha) {
  if (intensity.size() != heat.size()) throw ShapeError("overlay: image and heat sizes differ");
  cv::Mat gray8, heat8, color, base;
  intensity.convertTo(gray8, CV_8U, 255.0);
  cv::cvtColor(gray8, base, cv::COLOR_GRAY2BGR);
  heat.convertTo(heat8, CV_8U, 255.0);
  cv::applyColorMap(heat8, color, cv::COLORMAP_JET);
  cv::Mat out;
  cv::addWeighted(color, alpha, base, 1.0 - alpha, 0.0, out);
  return out;
}

cv::Mat foreground_mask(const cv::Mat& intensity, double threshold, int radius) {
  if (intensity.empty() || intensity.type() != CV_32FC1)
    throw InvalidInput("foreground_mask expects a CV_32FC1 intensity raster");
  double sum = 0.0;
  int n = 0;
  for (int x = 0; x < intensity.cols; ++x) {
    sum += intensity.at<float>(0, x) + intensity.at<float>(intensity.rows - 1, x);
    n += 2;
  }
  for (int y = 0; y < intensity.rows; ++y) {
    sum += intensity.at<float>(y, 0) + intensity.at<float>(y, intensity.cols - 1);
    n += 2;
  }
  const double background = sum / n;
  cv::Mat diff = cv::abs(intensity - background);
  cv::Mat mask = diff > threshold;
  if (radius > 0) {
    auto k = cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * radius + 1, 2 * radius + 1));
    cv::dilate(mask, mask, k);
  }
  return mask;
}

double top_decile_mass_fraction(const cv::Mat& heat, const cv::Mat& mask) {
  if (heat.size() != mask.size()) throw ShapeError("heat and mask sizes differ");
  std::vector<float> values(heat.begin<float>(), heat.end<float>());
  const size_t k = std::max<size_t>(1, values.size() / 10);
  std::nth_element(values.begin(), values.begin() + static_cast<long>(values.size() - k), values.end());
  const float cut = values[values.size() - k];
  double total = 0.0, inside = 0.0;
  for (int y = 0; y < heat.rows; ++y) {
    for (int x = 0; x < heat.cols; ++x) {
      const float h = heat.at<float>(y, x);
      if (h < cut || h <= 0.0f) continue;
      total += h;
      if (mask.at<uchar>(y, x)) inside += h;
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

}  // namespace glyphsim::explain
