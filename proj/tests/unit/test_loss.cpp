#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "glyphsim/error.hpp"
#include "glyphsim/loss.hpp"
#include "reference.hpp"

using namespace glyphsim;
using trainer::LossConfig;

namespace {

Eigen::MatrixXd random_batch(int rows, int dim, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd z(rows, dim);
  for (int i = 0; i < rows; ++i)
    for (int k = 0; k < dim; ++k) z(i, k) = n(gen);
  return z;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("matches brute-force evaluation over N, tau, lambda") {
    unsigned seed = 1;
    for (int n : {2, 3, 4, 8})
      for (double tau : {0.1, 1.0})
        for (double lambda : {0.0, 1.0}) {
          const auto z = random_batch(2 * n, 16, seed++);
          const auto pair = trainer::half_pairing(2 * n);
          LossConfig c{tau, lambda, 1e-4, 0.1};
          const auto r = trainer::contrastive_loss(z, pair, c, false);
          CHECK(r.terms.total == doctest::Approx(reference::loss(z, pair, c)).epsilon(1e-9));
          CHECK(std::abs(r.terms.total - reference::loss(z, pair, c)) < 1e-6);
        }
  }

  TEST_CASE("non-adjacent involution pairing") {
    const auto z = random_batch(6, 5, 99);
    const std::vector<int64_t> pair{3, 4, 5, 0, 1, 2};
    const std::vector<int64_t> shuffled{1, 0, 5, 4, 3, 2};
    LossConfig c;
    CHECK(std::abs(trainer::contrastive_loss(z, pair, c).terms.total - reference::loss(z, pair, c)) < 1e-6);
    CHECK(std::abs(trainer::contrastive_loss(z, shuffled, c).terms.total - reference::loss(z, shuffled, c)) < 1e-6);
  }

  TEST_CASE("degenerate point: identical rows") {
    Eigen::MatrixXd z = Eigen::MatrixXd::Constant(4, 8, 0.3);
    LossConfig c;
    const auto r = trainer::contrastive_loss(z, trainer::half_pairing(4), c);
    CHECK(std::abs(r.terms.nt_xent - std::log(3.0)) < 1e-9);
    CHECK(std::abs(r.terms.uniformity) < 1e-12);
    CHECK(r.terms.variance == doctest::Approx(c.var_weight / c.var_eps).epsilon(1e-12));
  }

  TEST_CASE("large temperature flattens to log(2N-1)") {
    const auto z = random_batch(8, 6, 5);
    LossConfig c{1e9, 0.0, 1e-4, 0.0};
    CHECK(trainer::contrastive_loss(z, trainer::half_pairing(8), c).terms.nt_xent ==
          doctest::Approx(std::log(7.0)).epsilon(1e-7));
  }

  TEST_CASE("uniformity term is never positive") {
    for (unsigned s = 0; s < 20; ++s) {
      const auto z = random_batch(2 * (2 + static_cast<int>(s % 5)), 4, 100 + s);
      CHECK(trainer::contrastive_loss(z, trainer::half_pairing(z.rows()), {}, false).terms.uniformity <= 0.0);
    }
  }

  TEST_CASE("analytic gradient matches central differences") {
    for (double lambda : {0.0, 1.0}) {
      const auto z = random_batch(4, 8, 7);
      const auto pair = trainer::half_pairing(4);
      LossConfig c{0.1, lambda, 1e-4, 0.1};
      const auto r = trainer::contrastive_loss(z, pair, c, true);
      const double h = 1e-6;
      double num = 0, den = 0;
      for (int i = 0; i < z.rows(); ++i)
        for (int k = 0; k < z.cols(); ++k) {
          Eigen::MatrixXd zp = z, zm = z;
          zp(i, k) += h;
          zm(i, k) -= h;
          const double fd = (reference::loss(zp, pair, c) - reference::loss(zm, pair, c)) / (2 * h);
          num += (fd - r.grad(i, k)) * (fd - r.grad(i, k));
          den += fd * fd;
        }
      CHECK(std::sqrt(num / den) < 1e-3);
    }
  }

  TEST_CASE("rejects unusable batches") {
    LossConfig c;
    CHECK_THROWS_AS(trainer::contrastive_loss(random_batch(2, 4, 1), trainer::half_pairing(2), c), InvalidInput);
    auto z = random_batch(4, 4, 2);
    z(1, 1) = NAN;
    CHECK_THROWS_AS(trainer::contrastive_loss(z, trainer::half_pairing(4), c), InvalidInput);
    auto zero = random_batch(4, 4, 3);
    zero.row(2).setZero();
    CHECK_THROWS_AS(trainer::contrastive_loss(zero, trainer::half_pairing(4), c), InvalidInput);
    const std::vector<int64_t> bad{1, 2, 3, 0};
    CHECK_THROWS_AS(trainer::contrastive_loss(random_batch(4, 4, 4), bad, c), InvalidInput);
  }
}
