#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "medalign/matching_loss.hpp"
#include "support/oracles.hpp"

using namespace medalign;

namespace {

Matrix to_matrix(const oracle::Mat& m) {
  Matrix out(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = m[i][j];
  return out;
}

oracle::Mat to_rows(const Matrix& m) {
  oracle::Mat out = oracle::zeros(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

Matrix random_unit(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  return to_matrix(oracle::random_unit_rows(n, d, rng));
}

Matrix random_stochastic_rows(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = u(rng);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

}  // namespace

TEST(Temperature, InitialValueAndPositivity) {
  EXPECT_DOUBLE_EQ(kInitialTemperature, 0.07);
  Temperature t;
  EXPECT_NEAR(t.tau(), 0.07, 1e-15);
  auto big = Temperature::from_log(10.0);
  big.clamp_upper();
  EXPECT_NEAR(big.tau(), 100.0, 1e-9);
  EXPECT_GT(Temperature::from_log(-50).tau(), 0.0);
  EXPECT_THROW(Temperature(0.0), ConfigError);
}

TEST(Logits, SelfSimilarityDiagonal) {
  std::mt19937_64 rng(1);
  Matrix v = random_unit(5, 8, rng);
  Matrix s = logits(v, v);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(s(i, i), 1.0, 1e-12);
}

TEST(Logits, OrthogonalRows) {
  Matrix v = Matrix::Identity(4, 4);
  Matrix s = logits(v, v);
  EXPECT_TRUE(s.isApprox(Matrix::Identity(4, 4)));
}

TEST(Logits, ElementwiseOracle) {
  std::mt19937_64 rng(2);
  auto v = oracle::random_unit_rows(7, 16, rng), t = oracle::random_unit_rows(7, 16, rng);
  Matrix s = logits(to_matrix(v), to_matrix(t));
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j) {
      double d = 0;
      for (int k = 0; k < 16; ++k) d += v[i][k] * t[j][k];
      EXPECT_NEAR(s(i, j), d, 1e-6);
      EXPECT_LE(std::abs(s(i, j)), 1.0 + 1e-12);
    }
}

TEST(Logits, NonUnitRowsRejected) {
  Matrix v = Matrix::Identity(3, 3);
  v(1, 1) = 1.01;
  EXPECT_THROW(logits(v, Matrix::Identity(3, 3)), ContractViolation);
}

TEST(PredictDistribution, ConstantRowUniform) {
  Matrix s = Matrix::Constant(5, 5, 0.3);
  EXPECT_TRUE(predict_distribution(s, 0.07, Direction::V2T).isApprox(Matrix::Constant(5, 5, 0.2)));
  EXPECT_TRUE(predict_distribution(s, 0.07, Direction::T2V).isApprox(Matrix::Constant(5, 5, 0.2)));
}

TEST(PredictDistribution, NormalizedAlongDirection) {
  std::mt19937_64 rng(3);
  Matrix v = random_unit(6, 4, rng), t = random_unit(6, 4, rng);
  Matrix s = logits(v, t);
  EXPECT_LE((predict_distribution(s, 0.07, Direction::V2T).rowwise().sum().array() - 1).abs().maxCoeff(), 1e-9);
  EXPECT_LE((predict_distribution(s, 0.07, Direction::T2V).colwise().sum().array() - 1).abs().maxCoeff(), 1e-9);
}

TEST(PredictDistribution, SmallTemperatureSharpens) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    Matrix v = random_unit(5, 6, rng), w = random_unit(5, 6, rng);
    Matrix s = logits(v, w);
    Matrix sharp = predict_distribution(s, 0.01, Direction::V2T), soft = predict_distribution(s, 1.0, Direction::V2T);
    for (int i = 0; i < 5; ++i) EXPECT_GT(sharp.row(i).maxCoeff(), soft.row(i).maxCoeff());
  }
}

TEST(PredictDistribution, NoOverflowAtExtremeTemperature) {
  Matrix s(2, 2);
  s << 1, -1, -1, 1;
  Matrix p = predict_distribution(s, 1e-4, Direction::V2T);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
}

TEST(CrossEntropy, GibbsEqualityCase) {
  std::mt19937_64 rng(5);
  Matrix y = random_stochastic_rows(6, rng);
  EXPECT_NEAR(cross_entropy(y, y, Direction::V2T), oracle::row_entropy_mean(to_rows(y)), 1e-12);
}

TEST(CrossEntropy, OneHotAgainstUniformIsLogN) {
  Matrix y = Matrix::Identity(8, 8);
  EXPECT_NEAR(cross_entropy(y, Matrix::Constant(8, 8, 1.0 / 8), Direction::V2T), std::log(8.0), 1e-12);
}

TEST(CrossEntropy, ScalarDoubleLoopOracleAndGibbsBound) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 100; ++t) {
    Matrix y = random_stochastic_rows(2 + t % 9, rng), p = random_stochastic_rows(y.rows(), rng);
    const double ce = cross_entropy(y, p, Direction::V2T);
    EXPECT_NEAR(ce, oracle::cross_entropy(to_rows(y), to_rows(p)), 1e-9);
    EXPECT_GE(ce, oracle::row_entropy_mean(to_rows(y)) - 1e-12);
  }
}

TEST(CrossEntropy, ClampsZeroPredictionsAndRejectsNaN) {
  Matrix y = Matrix::Identity(2, 2), p = Matrix::Zero(2, 2);
  EXPECT_NEAR(cross_entropy(y, p, Direction::V2T), -std::log(1e-30), 1e-9);
  p(0, 0) = std::nan("");
  y(0, 0) = std::nan("");
  EXPECT_THROW(cross_entropy(y, p, Direction::V2T), NumericalError);
}

TEST(SemanticMatchingLoss, TotalIsMeanOfDirections) {
  std::mt19937_64 rng(7);
  Matrix v = random_unit(5, 4, rng), t = random_unit(5, 4, rng);
  auto b = soft_targets_from_similarity(Matrix::Identity(5, 5));
  auto r = semantic_matching_loss(v, t, b, Temperature());
  EXPECT_EQ(r.total, (r.l_v2t + r.l_t2v) / 2);
  EXPECT_GE(r.l_v2t, 0);
  EXPECT_GE(r.l_t2v, 0);
}

TEST(SemanticMatchingLoss, TwoByTwoClosedForm) {
  Matrix v = Matrix::Identity(2, 2);
  auto b = soft_targets_from_similarity(Matrix::Identity(2, 2));
  const double e = std::exp(1.0), a = e / (e + 1), c = 1 / (e + 1);
  // tau = 1: predictions equal the targets, loss is their entropy.
  EXPECT_NEAR(semantic_matching_loss(v, v, b, Temperature(1.0)).total, -(a * std::log(a) + c * std::log(c)), 1e-14);
  // tau = 0.5: prediction rows softmax([2, 0]).
  const double p = e * e / (e * e + 1);
  EXPECT_NEAR(semantic_matching_loss(v, v, b, Temperature(0.5)).total,
              -(a * std::log(p) + c * std::log(1 - p)), 1e-14);
}

TEST(SemanticMatchingLoss, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + t % 6;
    auto v = oracle::random_unit_rows(n, 5, rng), w = oracle::random_unit_rows(n, 5, rng);
    oracle::Mat s = oracle::zeros(n, n);
    for (auto& row : s)
      for (double& x : row) x = u(rng);
    const double tau = 0.05 + u(rng);
    auto r = semantic_matching_loss(to_matrix(v), to_matrix(w), soft_targets_from_similarity(to_matrix(s)),
                                    Temperature(tau));
    EXPECT_NEAR(r.total, oracle::semantic_loss(v, w, s, tau), 1e-9);
  }
}

TEST(SemanticMatchingLoss, ReducesToInfoNCEWithOneHotTargets) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + t % 10;
    auto v = oracle::random_unit_rows(n, 8, rng), w = oracle::random_unit_rows(n, 8, rng);
    const double tau = 0.07 + 0.01 * (t % 5);
    auto r = semantic_matching_loss(to_matrix(v), to_matrix(w), SimilarityBundle::hard_diagonal(n), Temperature(tau));
    EXPECT_NEAR(r.total, oracle::symmetric_infonce(v, w, tau), 1e-9);
    EXPECT_NEAR(hard_infonce_loss(to_matrix(v), to_matrix(w), Temperature(tau)), r.total, 1e-15);
  }
}

TEST(HardInfoNCE, PerfectAlignmentLimit) {
  // Diagonal logits 1, off-diagonal -1.
  Matrix v(2, 1), t(2, 1);
  v << 1, -1;
  t << 1, -1;
  EXPECT_LT(hard_infonce_loss(v, t, Temperature(0.01)), 1e-3);
}

TEST(HardInfoNCE, UniformLogitsIsLogN) {
  Matrix v = Matrix::Zero(6, 3);
  v.col(0).setOnes();
  EXPECT_NEAR(hard_infonce_loss(v, v, Temperature(0.07)), std::log(6.0), 1e-12);
}

TEST(HardInfoNCE, DiffersFromSoftenedIdentityTargets) {
  std::mt19937_64 rng(10);
  Matrix v = random_unit(4, 4, rng), t = random_unit(4, 4, rng);
  const double soft =
      semantic_matching_loss(v, t, soft_targets_from_similarity(Matrix::Identity(4, 4)), Temperature()).total;
  EXPECT_GT(std::abs(soft - hard_infonce_loss(v, t, Temperature())), 1e-3);
}

TEST(LossProperties, ModalitySwapSymmetry) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    const int n = 3 + t % 5;
    Matrix v = random_unit(n, 6, rng), w = random_unit(n, 6, rng), s(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s(i, j) = u(rng);
    auto b = soft_targets_from_similarity(s);
    const double a = semantic_matching_loss(v, w, b, Temperature()).total;
    const double swapped = semantic_matching_loss(w, v, b.transposed(), Temperature()).total;
    EXPECT_NEAR(a, swapped, 1e-12);
  }
}

TEST(LossProperties, TargetShiftInvariance) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0, 1);
  Matrix v = random_unit(5, 6, rng), w = random_unit(5, 6, rng), s(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) s(i, j) = u(rng);
  auto b0 = soft_targets_from_similarity(s), b1 = soft_targets_from_similarity((s.array() + 3.5).matrix());
  EXPECT_LT((b0.y_v2t - b1.y_v2t).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((b0.y_t2v - b1.y_t2v).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(semantic_matching_loss(v, w, b0, Temperature()).total,
              semantic_matching_loss(v, w, b1, Temperature()).total, 1e-12);
}

TEST(LossProperties, FalseNegativesReceiveEqualMass) {
  using F = FindingType;
  std::vector<FindingLabel> images{FindingLabel::of({F::Edema}), FindingLabel::of({F::Fracture}),
                                   FindingLabel::of({F::Edema, F::Pneumonia})};
  std::vector<FindingLabel> texts{FindingLabel::of({F::Edema}), FindingLabel::of({F::Fracture}),
                                  FindingLabel::of({F::Edema})};
  auto b = build_soft_targets(images, texts);
  EXPECT_EQ(b.y_v2t(0, 0), b.y_v2t(0, 2));
  EXPECT_GT(b.y_v2t(0, 2), b.y_v2t(0, 1));
}

TEST(LossGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 4, d = 5;
  Matrix v = random_unit(n, d, rng), w = random_unit(n, d, rng), s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = u(rng);
  auto b = soft_targets_from_similarity(s);
  Temperature temp(0.3);
  LossGradient g;
  semantic_matching_loss(v, w, b, temp, g);
  // The loss is evaluated on raw (not re-normalized) rows, so perturbations
  // stay inside the 1e-3 unit-norm contract for small h.
  const double h = 1e-6;
  auto f = [&] { return semantic_matching_loss(v, w, b, temp).total; };
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) {
      EXPECT_NEAR(oracle::central_difference(f, &v(i, k), h), g.d_v_tilde(i, k), 1e-7);
      EXPECT_NEAR(oracle::central_difference(f, &w(i, k), h), g.d_t_tilde(i, k), 1e-7);
    }
  EXPECT_NEAR(oracle::central_difference(f, &temp.log_tau_ref(), h), g.d_log_tau, 1e-7);
}
