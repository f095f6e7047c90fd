#include "glyphsim/structure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "glyphsim/error.hpp"
#include "glyphsim/rng.hpp"

namespace glyphsim::structure {

using nlohmann::json;

std::string to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::single: return "single";
    case Linkage::complete: return "complete";
    case Linkage::average: return "average";
    case Linkage::ward: return "ward";
  }
  return "?";
}

Linkage parse_linkage(std::string_view name) {
  for (auto l : kAllLinkages)
    if (name == to_string(l)) return l;
  throw ConfigError("unknown linkage '" + std::string(name) + "' (single, complete, average, ward)");
}

std::vector<size_t> Dendrogram::leaf_order() const {
  const size_t n = labels.size();
  std::vector<size_t> order;
  if (n == 0) return order;
  if (merges.empty()) {
    order.push_back(0);
    return order;
  }
  std::vector<int64_t> stack{static_cast<int64_t>(n + merges.size() - 1)};
  while (!stack.empty()) {
    const int64_t node = stack.back();
    stack.pop_back();
    if (node < static_cast<int64_t>(n)) {
      order.push_back(static_cast<size_t>(node));
    } else {
      const auto& m = merges[static_cast<size_t>(node) - n];
      stack.push_back(m.b);  // right child popped after the left one
      stack.push_back(m.a);
    }
  }
  return order;
}

size_t Dendrogram::joining_merge(size_t i, size_t j) const {
  const size_t n = labels.size();
  if (i >= n || j >= n) throw InvalidInput("joining_merge: leaf index out of range");
  std::vector<int64_t> parent(n + merges.size(), -1);
  for (size_t k = 0; k < merges.size(); ++k) {
    parent[static_cast<size_t>(merges[k].a)] = static_cast<int64_t>(n + k);
    parent[static_cast<size_t>(merges[k].b)] = static_cast<int64_t>(n + k);
  }
  std::vector<bool> above_i(parent.size(), false);
  for (int64_t v = static_cast<int64_t>(i); v >= 0; v = parent[static_cast<size_t>(v)])
    above_i[static_cast<size_t>(v)] = true;
  for (int64_t v = static_cast<int64_t>(j); v >= 0; v = parent[static_cast<size_t>(v)])
    if (above_i[static_cast<size_t>(v)]) return static_cast<size_t>(v) - n;
  throw InvalidInput("leaves are never joined");
}

size_t Dendrogram::joining_merge(std::string_view a, std::string_view b) const {
  auto index = [&](std::string_view s) {
    auto it = std::find(labels.begin(), labels.end(), s);
    if (it == labels.end()) throw InvalidInput("unknown dendrogram label '" + std::string(s) + "'");
    return static_cast<size_t>(it - labels.begin());
  };
  return joining_merge(index(a), index(b));
}

io::Table Dendrogram::to_table() const {
  io::Table t({"node_a", "node_b", "height", "size"});
  for (const auto& m : merges)
    t.add_row({std::to_string(m.a), std::to_string(m.b), io::format_double(m.height), std::to_string(m.size)});
  return t;
}

json Dendrogram::to_json() const {
  json merges_json = json::array();
  for (const auto& m : merges) merges_json.push_back({m.a, m.b, m.height, m.size});
  std::vector<std::string> ordered;
  for (auto i : leaf_order()) ordered.push_back(labels[i]);
  return json{{"linkage", to_string(linkage)}, {"labels", labels}, {"merges", merges_json},
              {"leaf_order", ordered}};
}

Eigen::MatrixXd cosine_distances(const Eigen::MatrixXd& points) {
  const Eigen::VectorXd norms = points.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (!(norms[i] > 0.0)) throw InvalidInput("zero or non-finite row " + std::to_string(i) + " in cosine distance");
  const Eigen::MatrixXd u = norms.cwiseInverse().asDiagonal() * points;
  Eigen::MatrixXd d = Eigen::MatrixXd::Ones(points.rows(), points.rows()) - u * u.transpose();
  d = d.cwiseMax(0.0).cwiseMin(2.0);
  d.diagonal().setZero();
  return d;
}

Dendrogram agglomerate(const Eigen::MatrixXd& distances, const std::vector<std::string>& labels,
                       Linkage linkage) {
  const Eigen::Index n = distances.rows();
  if (n < 2) throw InvalidInput("clustering needs at least 2 items");
  if (distances.cols() != n || static_cast<Eigen::Index>(labels.size()) != n)
    throw ShapeError("distance matrix must be square and match the labels");
  if (!distances.allFinite()) throw InvalidInput("non-finite distance");

  Eigen::MatrixXd d = distances;
  std::vector<int64_t> node(static_cast<size_t>(n));
  std::vector<size_t> size(static_cast<size_t>(n), 1);
  std::vector<std::string> key(labels);  // smallest member label
  std::vector<bool> active(static_cast<size_t>(n), true);
  for (Eigen::Index i = 0; i < n; ++i) node[static_cast<size_t>(i)] = i;

  Dendrogram out;
  out.linkage = linkage;
  out.labels = labels;
  for (Eigen::Index step = 0; step + 1 < n; ++step) {
    Eigen::Index bi = -1, bj = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        if (bi < 0 || d(i, j) < d(bi, bj)) {
          bi = i;
          bj = j;
        } else if (d(i, j) == d(bi, bj)) {
          auto pair_key = [&](Eigen::Index x, Eigen::Index y) {
            return std::minmax(key[x], key[y]);
          };
          const auto cand = pair_key(i, j);
          const auto best = pair_key(bi, bj);
          if (std::tie(cand.first, cand.second) < std::tie(best.first, best.second)) {
            bi = i;
            bj = j;
          }
        }
      }
    }

    const double h = d(bi, bj);
    const double ni = static_cast<double>(size[bi]), nj = static_cast<double>(size[bj]);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double dik = d(bi, k), djk = d(bj, k);
      double v = 0.0;
      switch (linkage) {
        case Linkage::single: v = std::min(dik, djk); break;
        case Linkage::complete: v = std::max(dik, djk); break;
        case Linkage::average: v = (ni * dik + nj * djk) / (ni + nj); break;
        case Linkage::ward: {
          const double nk = static_cast<double>(size[k]);
          const double sq = ((ni + nk) * dik * dik + (nj + nk) * djk * djk - nk * h * h) / (ni + nj + nk);
          v = std::sqrt(std::max(0.0, sq));
          break;
        }
      }
      d(bi, k) = d(k, bi) = v;
    }
    Merge m;
    m.a = std::min(node[bi], node[bj]);
    m.b = std::max(node[bi], node[bj]);
    m.height = h;
    m.size = size[bi] + size[bj];
    out.merges.push_back(m);

    node[bi] = n + step;
    size[bi] = m.size;
    key[bi] = std::min(key[bi], key[bj]);
    active[bj] = false;
  }
  return out;
}

Dendrogram hierarchical_cluster(const Eigen::MatrixXd& points, const std::vector<std::string>& labels,
                                Linkage linkage) {
  return agglomerate(cosine_distances(points), labels, linkage);
}

Centroids centroids(const std::vector<ensemble::EmbeddingSet>& sets) {
  if (sets.empty()) throw InvalidInput("no embedding sets for centroids");
  Centroids c;
  c.rows.resize(static_cast<Eigen::Index>(sets.size()), sets.front().dim());
  for (size_t i = 0; i < sets.size(); ++i) {
    if (sets[i].size() == 0) throw InvalidInput("empty embedding set '" + sets[i].script + "'");
    if (sets[i].dim() != c.rows.cols()) throw ShapeError("embedding sets differ in dimension");
    c.labels.push_back(sets[i].script);
    c.rows.row(static_cast<Eigen::Index>(i)) = sets[i].rows.colwise().mean();
  }
  return c;
}

double Projection::total_explained() const {
  double s = 0.0;
  for (double r : explained) s += r;
  return s;
}

std::string Projection::variance_title() const {
  return "Total Explained Variance: " + io::format_fixed(100.0 * total_explained(), 2) + "%";
}

io::Table Projection::to_table(const std::vector<std::string>& labels,
                               const std::vector<std::string>& groups) const {
  std::vector<std::string> header{"label", "group"};
  const char* axes[] = {"x", "y", "z"};
  for (Eigen::Index c = 0; c < coords.cols(); ++c)
    header.push_back(c < 3 ? axes[c] : "c" + std::to_string(c));
  io::Table t(header);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    std::vector<std::string> row{labels.at(static_cast<size_t>(i)), groups.at(static_cast<size_t>(i))};
    for (Eigen::Index c = 0; c < coords.cols(); ++c) row.push_back(io::format_double(coords(i, c)));
    t.add_row(row);
  }
  return t;
}

Projection pca_project(const Eigen::MatrixXd& points, int dims) {
  if (dims < 1 || dims > points.cols()) throw InvalidInput("pca: dims out of range");
  if (points.rows() < dims + 1) throw InvalidInput("pca needs at least dims + 1 items");
  if (!points.allFinite()) throw InvalidInput("pca: non-finite input");
  const Eigen::RowVectorXd mu = points.colwise().mean();
  const Eigen::MatrixXd x = points.rowwise() - mu;
  const Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(points.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw InvalidInput("pca: eigendecomposition failed");

  const double trace = cov.trace();
  const auto& values = solver.eigenvalues();  // ascending
  const double top = values[values.size() - 1];
  const double tol = std::max(top, 0.0) * 1e-10 * static_cast<double>(cov.rows());

  Projection p;
  p.method = "pca";
  p.coords = Eigen::MatrixXd::Zero(points.rows(), dims);
  for (int c = 0; c < dims; ++c) {
    const Eigen::Index idx = values.size() - 1 - c;
    const double lambda = values[idx];
    if (!(trace > 0.0) || lambda <= tol) {
      p.rank_deficient = true;
      p.explained.push_back(0.0);
      continue;
    }
    Eigen::VectorXd v = solver.eigenvectors().col(idx);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    p.coords.col(c) = x * v;
    p.explained.push_back(lambda / trace);
  }
  return p;
}

Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& points, double perplexity) {
  const Eigen::Index n = points.rows();
  // Direct differences and sorted row sums: coincident points get bit-identical
  // rows, which the optimizer needs to keep them coincident.
  Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d2(i, j) = d2(j, i) = (points.row(i) - points.row(j)).squaredNorm();
  const double target = std::log(perplexity);

  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> sorted;
  sorted.reserve(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    sorted.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) sorted.push_back(d2(i, j));
    std::sort(sorted.begin(), sorted.end());
    const double dmin = sorted.front();
    double beta = 1.0, lo = -INFINITY, hi = INFINITY, sum = 1.0;
    for (int tries = 0; tries < 200; ++tries) {
      double weighted = 0.0;
      sum = 0.0;
      for (double d : sorted) {
        const double e = std::exp(-(d - dmin) * beta);
        sum += e;
        weighted += e * (d - dmin);
      }
      const double diff = std::log(sum) + beta * weighted / sum - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : (beta + lo) / 2.0;
      }
    }
    // the last beta tried may not be the one summed; recompute against it
    sum = 0.0;
    for (double d : sorted) sum += std::exp(-(d - dmin) * beta);
    for (Eigen::Index j = 0; j < n; ++j) p(i, j) = j == i ? 0.0 : std::exp(-(d2(i, j) - dmin) * beta) / sum;
  }
  return p;
}

Projection tsne_project(const Eigen::MatrixXd& points, const TsneOptions& options) {
  const Eigen::Index n = points.rows();
  if (n < 4) throw InvalidInput("t-SNE needs at least 4 items");
  if (!(options.perplexity > 0.0) || options.perplexity >= static_cast<double>(n - 1))
    throw InvalidInput("t-SNE perplexity must lie in (0, n - 1)");
  if (!points.allFinite()) throw InvalidInput("t-SNE: non-finite input");

  Eigen::MatrixXd p = tsne_affinities(points, options.perplexity);
  p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();

  // PCA initialization rescaled to a tiny spread
  Eigen::MatrixXd y = pca_project(points, 2).coords;
  Rng rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  const double spread = std::sqrt((y.col(0).array() - y.col(0).mean()).square().sum() / static_cast<double>(n));
  if (spread > 0.0) {
    y *= 1e-4 / spread;
  } else {
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = normal(rng);
  }

  // non-positive rate: max(n / exaggeration / 4, 50)
  const double eta = options.learning_rate > 0.0
                         ? options.learning_rate
                         : std::max(static_cast<double>(n) / std::max(options.early_exaggeration, 1.0) / 4.0, 50.0);

  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
  Eigen::MatrixXd num(n, n);
  Eigen::MatrixXd grad(n, 2);
  for (int it = 0; it < options.iterations; ++it) {
    const double exaggeration = it < options.exaggeration_iterations ? options.early_exaggeration : 1.0;
    const double momentum = it < options.exaggeration_iterations ? 0.5 : 0.8;
    // direct differences keep coincident points exactly coincident
    for (Eigen::Index i = 0; i < n; ++i) {
      num(i, i) = 0.0;
      for (Eigen::Index j = i + 1; j < n; ++j)
        num(i, j) = num(j, i) = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
    }
    const double z = num.sum();
    // dC/dy_i = 4 sum_j (p_ij - q_ij) num_ij (y_i - y_j)
    const Eigen::MatrixXd w = ((exaggeration * p).array() - num.array() / z).matrix().cwiseProduct(num);
    for (Eigen::Index i = 0; i < n; ++i) {
      grad.row(i).setZero();
      for (Eigen::Index j = 0; j < n; ++j) grad.row(i) += w(i, j) * (y.row(i) - y.row(j));
    }
    grad *= 4.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 2; ++c) {
        double& g = gains(i, c);
        g = (grad(i, c) > 0) != (update(i, c) > 0) ? g + 0.2 : g * 0.8;
        g = std::max(g, 0.01);
        update(i, c) = momentum * update(i, c) - eta * g * grad(i, c);
      }
    }
    y += update;
    y = y.rowwise() - y.colwise().mean();
  }

  Projection out;
  out.method = "tsne";
  out.coords = y;
  return out;
}

Heatmap similarity_heatmap(const Centroids& c, const Dendrogram& order) {
  if (c.labels.size() < 2) throw InvalidInput("heatmap needs at least 2 scripts");
  if (order.labels != c.labels) throw InvalidInput("dendrogram labels do not match the centroids");
  const Eigen::MatrixXd sim = Eigen::MatrixXd::Ones(c.rows.rows(), c.rows.rows()) - cosine_distances(c.rows);
  const auto leaves = order.leaf_order();
  Heatmap h;
  h.values.resize(static_cast<Eigen::Index>(leaves.size()), static_cast<Eigen::Index>(leaves.size()));
  for (size_t i = 0; i < leaves.size(); ++i) {
    h.labels.push_back(c.labels[leaves[i]]);
    for (size_t j = 0; j < leaves.size(); ++j)
      h.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          i == j ? 1.0 : sim(static_cast<Eigen::Index>(leaves[i]), static_cast<Eigen::Index>(leaves[j]));
  }
  return h;
}

}  // namespace glyphsim::structure
