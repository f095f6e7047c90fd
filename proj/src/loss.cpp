#include "glyphsim/loss.hpp"

#include <cmath>
#include <string>

#include "glyphsim/error.hpp"

namespace glyphsim::trainer {

std::vector<int64_t> half_pairing(int64_t rows) {
  if (rows % 2 != 0) throw InvalidInput("pairing needs an even number of rows");
  const int64_t n = rows / 2;
  std::vector<int64_t> pair(static_cast<size_t>(rows));
  for (int64_t i = 0; i < n; ++i) {
    pair[i] = i + n;
    pair[i + n] = i;
  }
  return pair;
}

LossResult contrastive_loss(const Eigen::MatrixXd& z, std::span<const int64_t> pair,
                            const LossConfig& config, bool with_grad) {
  const Eigen::Index m = z.rows();
  if (m < 4) throw InvalidInput("contrastive loss needs at least 2 positive pairs (no negatives)");
  if (static_cast<Eigen::Index>(pair.size()) != m)
    throw InvalidInput("pair index length does not match the batch");
  if (config.temperature <= 0.0) throw InvalidInput("temperature must be positive");
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto p = pair[i];
    if (p < 0 || p >= m || p == i || pair[p] != i) throw InvalidInput("pair index is not an involution");
  }
  if (!z.allFinite()) throw InvalidInput("non-finite embedding in contrastive loss");

  const Eigen::VectorXd norms = z.rowwise().norm();
  for (Eigen::Index i = 0; i < m; ++i)
    if (norms[i] == 0.0) throw InvalidInput("zero-norm embedding row " + std::to_string(i));
  const Eigen::MatrixXd u = norms.cwiseInverse().asDiagonal() * z;
  const Eigen::MatrixXd sim = u * u.transpose();
  const double tau = config.temperature;

  // NT-Xent with a softmax over k != i
  Eigen::MatrixXd prob = Eigen::MatrixXd::Zero(m, m);
  double nt = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (Eigen::Index k = 0; k < m; ++k)
      if (k != i) mx = std::max(mx, sim(i, k) / tau);
    double denom = 0.0;
    for (Eigen::Index k = 0; k < m; ++k)
      if (k != i) denom += std::exp(sim(i, k) / tau - mx);
    const double lse = mx + std::log(denom);
    nt += lse - sim(i, pair[i]) / tau;
    for (Eigen::Index k = 0; k < m; ++k)
      if (k != i) prob(i, k) = std::exp(sim(i, k) / tau - lse);
  }
  nt /= static_cast<double>(m);

  // variance guard on raw rows
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const Eigen::MatrixXd centered = z.rowwise() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(m);
  const double var_term = config.var_weight / (var + config.var_eps);

  // uniformity on normalized rows, over distinct pairs
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);
  double s = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double e = std::exp(-2.0 * (u.row(i) - u.row(j)).squaredNorm());
      w(i, j) = w(j, i) = e;
      s += e;
    }
  }
  const double n_pairs = 0.5 * static_cast<double>(m) * static_cast<double>(m - 1);
  const double unif = std::log(s / n_pairs);

  LossResult result;
  result.terms.nt_xent = nt;
  result.terms.variance = var_term;
  result.terms.uniformity = unif;
  result.terms.total = nt + var_term + config.unif_weight * unif;
  if (!with_grad) return result;

  // gradient w.r.t. the normalized rows
  Eigen::MatrixXd a = prob;
  for (Eigen::Index i = 0; i < m; ++i) a(i, pair[i]) -= 1.0;
  a /= static_cast<double>(m) * tau;
  Eigen::MatrixXd gu = (a + a.transpose()) * u;

  if (config.unif_weight != 0.0) {
    const Eigen::VectorXd wsum = w.rowwise().sum();
    // sum_j w_ij (u_i - u_j) = wsum_i u_i - (W u)_i
    const Eigen::MatrixXd diff = wsum.asDiagonal() * u - w * u;
    gu += (config.unif_weight * -4.0 / s) * diff;
  }

  // back through u = z / |z|
  Eigen::MatrixXd grad(m, z.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const double dot = u.row(i).dot(gu.row(i));
    grad.row(i) = (gu.row(i) - dot * u.row(i)) / norms[i];
  }
  const double coef = -config.var_weight / ((var + config.var_eps) * (var + config.var_eps)) *
                      2.0 / static_cast<double>(m);
  grad += coef * centered;
  result.grad = std::move(grad);
  return result;
}

}  // namespace glyphsim::trainer
