#pragma once

// Structure of the embedding space: agglomerative clustering on cosine
// distance, PCA, exact t-SNE and ordered similarity heatmaps.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "glyphsim/embedding.hpp"
#include "glyphsim/io.hpp"
#include "json.hpp"

namespace glyphsim::structure {

enum class Linkage { single, complete, average, ward };

std::string to_string(Linkage linkage);
Linkage parse_linkage(std::string_view name);  // ConfigError on unknown names
inline constexpr Linkage kAllLinkages[] = {Linkage::single, Linkage::complete, Linkage::average,
                                           Linkage::ward};

// Node ids: leaves 0..n-1, merge k creates node n+k; a < b.
struct Merge {
  int64_t a = 0;
  int64_t b = 0;
  double height = 0.0;
  size_t size = 0;
};

struct Dendrogram {
  Linkage linkage = Linkage::average;
  std::vector<std::string> labels;
  std::vector<Merge> merges;

  // Leaves left to right (smaller child id on the left).
  std::vector<size_t> leaf_order() const;
  // Index of the merge that first puts leaves i and j in one cluster.
  size_t joining_merge(size_t i, size_t j) const;
  size_t joining_merge(std::string_view a, std::string_view b) const;

  io::Table to_table() const;  // node_a,node_b,height,size
  nlohmann::json to_json() const;
};

// 1 - cosine similarity between rows; zero rows are rejected.
Eigen::MatrixXd cosine_distances(const Eigen::MatrixXd& points);

// Lance-Williams agglomeration of a symmetric dissimilarity matrix. Ward uses
// the squared-distance recurrence (heights are square roots). Equal distances
// are broken by the pair of smallest member labels, compared lexicographically.
Dendrogram agglomerate(const Eigen::MatrixXd& distances, const std::vector<std::string>& labels,
                       Linkage linkage);

// Cosine-distance clustering of embedding rows.
Dendrogram hierarchical_cluster(const Eigen::MatrixXd& points, const std::vector<std::string>& labels,
                                Linkage linkage);

struct Centroids {
  std::vector<std::string> labels;
  Eigen::MatrixXd rows;
};
// One mean row per set, labelled by script.
Centroids centroids(const std::vector<ensemble::EmbeddingSet>& sets);

struct Projection {
  std::string method;
  Eigen::MatrixXd coords;         // n x dims
  std::vector<double> explained;  // pca: variance ratio per component
  bool rank_deficient = false;

  double total_explained() const;
  std::string variance_title() const;  // "Total Explained Variance: 20.29%"
  io::Table to_table(const std::vector<std::string>& labels, const std::vector<std::string>& groups) const;
};

// Covariance eigendecomposition; components sign-fixed so their largest
// |entry| is positive. Missing rank is padded with zero components.
Projection pca_project(const Eigen::MatrixXd& points, int dims);

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 0.0;  // <= 0 picks a rate from n
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  uint64_t seed = 0;
};

// Exact t-SNE to two dimensions with PCA initialization.
Projection tsne_project(const Eigen::MatrixXd& points, const TsneOptions& options = {});

// Conditional affinities P_{j|i} at the given perplexity (row-stochastic, zero diagonal).
Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& points, double perplexity);

struct Heatmap {
  std::vector<std::string> labels;  // dendrogram leaf order
  Eigen::MatrixXd values;           // cosine similarity, unit diagonal
};

Heatmap similarity_heatmap(const Centroids& centroids, const Dendrogram& order);

}  // namespace glyphsim::structure
