#pragma once

// Regularized contrastive objective on a batch of 2N projected embeddings:
//   NT-Xent (cosine similarities / tau, every other row is a candidate)
//   + lambda / (Var[z] + eps)                      (collapse guard, raw rows)
//   + w_unif * log mean_{i<j} exp(-2 |f_i - f_j|^2) (normalized rows)
// Evaluated in double precision with a closed-form gradient.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace glyphsim::trainer {

struct LossConfig {
  double temperature = 0.1;
  double var_weight = 1.0;  // lambda_reg
  double var_eps = 1e-4;
  double unif_weight = 0.1;
};

struct LossTerms {
  double nt_xent = 0.0;
  double variance = 0.0;    // already multiplied by lambda
  double uniformity = 0.0;  // raw log-mean, before unif_weight
  double total = 0.0;
};

struct LossResult {
  LossTerms terms;
  Eigen::MatrixXd grad;  // d total / d z, same shape as z; empty if not requested
};

// Row i is paired with row i + N (and back) for a 2N-row batch.
std::vector<int64_t> half_pairing(int64_t rows);

// Throws InvalidInput for fewer than 4 rows, a bad pairing, non-finite or
// zero-norm rows.
LossResult contrastive_loss(const Eigen::MatrixXd& z, std::span<const int64_t> pair,
                            const LossConfig& config, bool with_grad = true);

}  // namespace glyphsim::trainer
