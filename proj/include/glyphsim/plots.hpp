#pragma once

// Minimal raster figures (BGR, CV_8UC3). Every figure written by the CLI has a
// sidecar data file, so these only need to be legible.

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <opencv2/core.hpp>

#include "glyphsim/structure.hpp"

namespace glyphsim::plots {

cv::Mat heatmap(const structure::Heatmap& h, const std::string& title);

// First two columns of `coords`, one color per distinct group.
cv::Mat scatter(const Eigen::MatrixXd& coords, const std::vector<std::string>& groups,
                const std::string& title);

cv::Mat dendrogram(const structure::Dendrogram& d, const std::string& title);

void save(const std::string& path, const cv::Mat& image);

}  // namespace glyphsim::plots
