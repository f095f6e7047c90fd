#pragma once

// Grad-CAM for an embedding model: the scalar being explained is the L2 norm
// of the projected embedding.

#include <string>
#include <string_view>
#include <utility>

#include <opencv2/core.hpp>

#include "glyphsim/corpus.hpp"
#include "glyphsim/model.hpp"

namespace glyphsim::explain {

enum class Pathway { cnn, swin };
std::string to_string(Pathway p);
Pathway parse_pathway(std::string_view name);

struct AttentionMap {
  Pathway pathway = Pathway::cnn;
  cv::Mat heat;  // CV_32FC1, input size, values in [0,1]
  cv::Mat grid;  // rectified map at layer resolution, before upsampling
  std::string glyph_id;
  std::string layer;
  bool degenerate = false;  // zero gradients or a flat map; heat is all zeros
};

// Target layers: last convolution of the final CNN stage; final Swin stage
// output as its token grid.
AttentionMap grad_cam(model::HybridEncoder& encoder, const corpus::GlyphImage& glyph, Pathway pathway);

// Both pathways from a single forward pass.
std::pair<AttentionMap, AttentionMap> grad_cam_both(model::HybridEncoder& encoder,
                                                    const corpus::GlyphImage& glyph);

// JET-colored heat blended over the grayscale glyph (CV_8UC3).
cv::Mat overlay(const cv::Mat& intensity, const cv::Mat& heat, double alpha = 0.45);

// Pixels that differ from the border-mean background by more than `threshold`,
// dilated by `radius` pixels.
cv::Mat foreground_mask(const cv::Mat& intensity, double threshold = 0.25, int radius = 0);

// Share of the heat carried by the top 10% hottest pixels that lies inside `mask`.
double top_decile_mass_fraction(const cv::Mat& heat, const cv::Mat& mask);

}  // namespace glyphsim::explain
