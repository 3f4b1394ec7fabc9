#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "medalign/errors.hpp"
#include "medalign/numeric.hpp"
#include "medalign/semantic_pairing.hpp"

namespace medalign {

inline constexpr double kInitialTemperature = 0.07;
inline constexpr double kMaxTemperature = 100.0;
inline constexpr double kLogClampFloor = 1e-30;
inline constexpr double kUnitNormTolerance = 1e-3;

/// Learnable softmax temperature stored as log(tau), so tau > 0 always.
class Temperature {
public:
  explicit Temperature(double tau = kInitialTemperature) {
    if (!(tau > 0)) throw ConfigError("temperature must be positive");
    log_tau_ = std::log(tau);
  }
  static Temperature from_log(double log_tau) {
    Temperature t;
    t.log_tau_ = log_tau;
    return t;
  }
  double tau() const noexcept { return std::exp(log_tau_); }
  double log_tau() const noexcept { return log_tau_; }
  double& log_tau_ref() noexcept { return log_tau_; }
  void clamp_upper(double max_tau = kMaxTemperature) { log_tau_ = std::min(log_tau_, std::log(max_tau)); }

private:
  double log_tau_ = 0;
};

struct LossReport {
  double l_v2t = 0;
  double l_t2v = 0;
  double total = 0;
};

/// Cosine logits between unit-norm image rows and unit-norm text rows.
template <typename DV, typename DT>
MatrixX<typename DV::Scalar> logits(const Eigen::MatrixBase<DV>& v_tilde, const Eigen::MatrixBase<DT>& t_tilde) {
  if (v_tilde.cols() != t_tilde.cols()) throw ShapeError("logits: embedding dimensions differ");
  auto check = [](const auto& m, const char* which) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      const double n = static_cast<double>(m.row(i).norm());
      if (!(std::abs(n - 1.0) <= kUnitNormTolerance))
        throw ContractViolation(std::string("logits: ") + which + " row " + std::to_string(i) +
                                " is not unit norm (norm " + std::to_string(n) + ")");
    }
  };
  check(v_tilde, "image");
  check(t_tilde, "text");
  return v_tilde * t_tilde.transpose();
}

/// Temperature-scaled softmax of the logits: over texts for each image (V2T)
/// or over images for each text (T2V).
template <typename Derived>
MatrixX<typename Derived::Scalar> predict_distribution(const Eigen::MatrixBase<Derived>& s_hat, double tau,
                                                       Direction direction) {
  if (!(tau > 0)) throw ContractViolation("temperature must be positive");
  const MatrixX<typename Derived::Scalar> z = s_hat / tau;
  return softmax_along(z, direction);
}

/// -(1/N) sum_ij y_ij log yhat_ij, with yhat clamped below at 1e-30.
/// N is the number of distributions along the direction's axis.
template <typename DY, typename DP>
double cross_entropy(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& y_hat, Direction direction) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols()) throw ShapeError("cross_entropy: shape mismatch");
  const Eigen::Index n = direction == Direction::V2T ? y.rows() : y.cols();
  if (n == 0) throw ShapeError("cross_entropy: empty input");
  double acc = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double p = std::max(static_cast<double>(y_hat(i, j)), kLogClampFloor);
      acc -= static_cast<double>(y(i, j)) * std::log(p);
    }
  const double loss = acc / static_cast<double>(n);
  if (std::isnan(loss)) throw NumericalError("cross_entropy produced NaN");
  return loss;
}

struct LossGradient {
  Matrix d_v_tilde;
  Matrix d_t_tilde;
  double d_log_tau = 0;
};

namespace detail {

inline void check_bundle(const Matrix& v_tilde, const Matrix& t_tilde, const SimilarityBundle& b) {
  const auto n = v_tilde.rows();
  if (t_tilde.rows() != n || b.y_v2t.rows() != n || b.y_v2t.cols() != n || b.y_t2v.rows() != n ||
      b.y_t2v.cols() != n)
    throw ShapeError("semantic_matching_loss: inconsistent batch sizes");
}

}  // namespace detail

inline LossReport semantic_matching_loss(const Matrix& v_tilde, const Matrix& t_tilde, const SimilarityBundle& bundle,
                                         const Temperature& temperature) {
  detail::check_bundle(v_tilde, t_tilde, bundle);
  const Matrix s_hat = logits(v_tilde, t_tilde);
  const double tau = temperature.tau();
  LossReport r;
  r.l_v2t = cross_entropy(bundle.y_v2t, predict_distribution(s_hat, tau, Direction::V2T), Direction::V2T);
  r.l_t2v = cross_entropy(bundle.y_t2v, predict_distribution(s_hat, tau, Direction::T2V), Direction::T2V);
  r.total = (r.l_v2t + r.l_t2v) / 2;
  return r;
}

/// Loss plus its gradient with respect to the unit embeddings and log(tau).
/// The 1e-30 log clamp is treated as inactive in the gradient.
inline LossReport semantic_matching_loss(const Matrix& v_tilde, const Matrix& t_tilde, const SimilarityBundle& bundle,
                                         const Temperature& temperature, LossGradient& grad) {
  const LossReport r = semantic_matching_loss(v_tilde, t_tilde, bundle, temperature);
  const Matrix s_hat = v_tilde * t_tilde.transpose();
  const double tau = temperature.tau();
  const auto n = static_cast<double>(v_tilde.rows());
  const Matrix p_v2t = predict_distribution(s_hat, tau, Direction::V2T);
  const Matrix p_t2v = predict_distribution(s_hat, tau, Direction::T2V);

  // d total / d z with z = s_hat / tau. Written for targets that need not be
  // exactly normalized: softmax-CE gradient is p * sum(y) - y per distribution.
  const Vector row_mass = bundle.y_v2t.rowwise().sum();
  const Eigen::RowVectorXd col_mass = bundle.y_t2v.colwise().sum();
  Matrix dz = (p_v2t.array().colwise() * row_mass.array()).matrix() - bundle.y_v2t;
  dz += (p_t2v.array().rowwise() * col_mass.array()).matrix() - bundle.y_t2v;
  dz /= 2 * n;

  const Matrix ds = dz / tau;
  grad.d_v_tilde = ds * t_tilde;
  grad.d_t_tilde = ds.transpose() * v_tilde;
  grad.d_log_tau = -(dz.array() * s_hat.array()).sum() / tau;
  return r;
}

/// Symmetric InfoNCE with one-hot diagonal targets (paired batches).
inline double hard_infonce_loss(const Matrix& v_tilde, const Matrix& t_tilde, const Temperature& temperature) {
  return semantic_matching_loss(v_tilde, t_tilde, SimilarityBundle::hard_diagonal(v_tilde.rows()), temperature).total;
}

}  // namespace medalign
