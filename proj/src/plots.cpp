#include "glyphsim/plots.hpp"

#include <algorithm>
#include <filesystem>
#include <map>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glyphsim/error.hpp"
#include "glyphsim/io.hpp"

namespace glyphsim::plots {

namespace {

const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kWhite(255, 255, 255);
constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

cv::Scalar palette(size_t i) {
  static const cv::Scalar colors[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},  {40, 39, 214},
                                      {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127},
                                      {34, 189, 188},  {207, 190, 23}};
  return colors[i % 10];
}

void title_bar(cv::Mat& img, const std::string& title) {
  cv::putText(img, title, {12, 26}, kFont, 0.6, kBlack, 1, cv::LINE_AA);
}

}  // namespace

cv::Mat heatmap(const structure::Heatmap& h, const std::string& title) {
  const int n = static_cast<int>(h.labels.size());
  const int cell = std::max(24, 360 / std::max(1, n));
  const int left = 150, top = 50;
  cv::Mat img(top + n * cell + 20, left + n * cell + 20, CV_8UC3, kWhite);
  title_bar(img, title);
  double lo = h.values.minCoeff(), hi = h.values.maxCoeff();
  if (hi - lo < 1e-12) lo = hi - 1.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      cv::Mat px(1, 1, CV_8U, cv::Scalar(cv::saturate_cast<uchar>(255.0 * (h.values(i, j) - lo) / (hi - lo))));
      cv::Mat c;
      cv::applyColorMap(px, c, cv::COLORMAP_VIRIDIS);
      const auto v = c.at<cv::Vec3b>(0, 0);
      cv::rectangle(img, cv::Rect(left + j * cell, top + i * cell, cell, cell), cv::Scalar(v[0], v[1], v[2]),
                    cv::FILLED);
      if (cell >= 40)
        cv::putText(img, io::format_fixed(h.values(i, j), 2), {left + j * cell + 4, top + i * cell + cell / 2 + 4},
                    kFont, 0.35, kWhite, 1, cv::LINE_AA);
    }
    cv::putText(img, h.labels[i], {6, top + i * cell + cell / 2 + 4}, kFont, 0.45, kBlack, 1, cv::LINE_AA);
  }
  return img;
}

cv::Mat scatter(const Eigen::MatrixXd& coords, const std::vector<std::string>& groups,
                const std::string& title) {
  if (coords.cols() < 2 || static_cast<size_t>(coords.rows()) != groups.size())
    throw ShapeError("scatter expects n x (>=2) coordinates and one group per row");
  const int w = 640, h = 520, margin = 50;
  cv::Mat img(h, w, CV_8UC3, kWhite);
  title_bar(img, title);
  std::map<std::string, size_t> color_of;
  for (const auto& g : groups) color_of.emplace(g, color_of.size());
  const double x0 = coords.col(0).minCoeff(), x1 = coords.col(0).maxCoeff();
  const double y0 = coords.col(1).minCoeff(), y1 = coords.col(1).maxCoeff();
  auto sx = [&](double x) { return margin + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (w - 2 * margin - 120); };
  auto sy = [&](double y) { return h - margin - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * (h - 2 * margin); };
  cv::rectangle(img, cv::Rect(margin - 8, margin - 8, w - 2 * margin - 104, h - 2 * margin + 16),
                cv::Scalar(200, 200, 200));
  for (Eigen::Index i = 0; i < coords.rows(); ++i)
    cv::circle(img, cv::Point(cvRound(sx(coords(i, 0))), cvRound(sy(coords(i, 1)))), 4,
               palette(color_of[groups[static_cast<size_t>(i)]]), cv::FILLED, cv::LINE_AA);
  int row = 0;
  for (const auto& [g, idx] : color_of) {
    const cv::Point at(w - 150, margin + 20 * row++);
    cv::circle(img, at, 5, palette(idx), cv::FILLED, cv::LINE_AA);
    cv::putText(img, g, at + cv::Point(10, 5), kFont, 0.45, kBlack, 1, cv::LINE_AA);
  }
  return img;
}

cv::Mat dendrogram(const structure::Dendrogram& d, const std::string& title) {
  const size_t n = d.labels.size();
  const int w = 640, row_h = std::max(18, 360 / static_cast<int>(std::max<size_t>(1, n)));
  const int left = 40, right = 160, top = 50;
  cv::Mat img(top + static_cast<int>(n) * row_h + 30, w, CV_8UC3, kWhite);
  title_bar(img, title + " (" + structure::to_string(d.linkage) + ")");
  double hmax = 0.0;
  for (const auto& m : d.merges) hmax = std::max(hmax, m.height);
  if (hmax <= 0.0) hmax = 1.0;
  auto xh = [&](double height) { return cvRound(w - right - (w - right - left) * height / hmax); };

  std::vector<double> y(n + d.merges.size()), x(n + d.merges.size());
  const auto order = d.leaf_order();
  for (size_t r = 0; r < order.size(); ++r) {
    y[order[r]] = top + (static_cast<double>(r) + 0.5) * row_h;
    x[order[r]] = xh(0.0);
    cv::putText(img, d.labels[order[r]], {w - right + 8, cvRound(y[order[r]]) + 5}, kFont, 0.45, kBlack, 1,
                cv::LINE_AA);
  }
  for (size_t k = 0; k < d.merges.size(); ++k) {
    const auto& m = d.merges[k];
    const int xm = xh(m.height);
    const auto a = static_cast<size_t>(m.a), b = static_cast<size_t>(m.b);
    cv::line(img, {cvRound(x[a]), cvRound(y[a])}, {xm, cvRound(y[a])}, kBlack, 1, cv::LINE_AA);
    cv::line(img, {cvRound(x[b]), cvRound(y[b])}, {xm, cvRound(y[b])}, kBlack, 1, cv::LINE_AA);
    cv::line(img, {xm, cvRound(y[a])}, {xm, cvRound(y[b])}, kBlack, 1, cv::LINE_AA);
    x[n + k] = xm;
    y[n + k] = (y[a] + y[b]) / 2.0;
  }
  return img;
}

void save(const std::string& path, const cv::Mat& image) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  if (!cv::imwrite(path, image)) throw std::runtime_error("cannot write " + path);
}

}  // namespace glyphsim::plots
