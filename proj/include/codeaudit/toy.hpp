#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "codeaudit/latent_model.hpp"

namespace codeaudit::toy {

/// z ~ N(0, I), x | z ~ N(A z, s2 I). The exact posterior is Gaussian with
/// precision I + A^T A / s2; when the columns of A are orthogonal it is
/// diagonal, so the encoder family contains it. The encoder is the exact
/// posterior with its mean scaled by `mean_scale` and its log-variance
/// shifted by `logvar_shift` (both neutral values give q = p(z|x)).
/// decode() returns sigmoid(A z) and only feeds the decoder code map.
class LinearGaussianModel : public LatentModel {
 public:
  LinearGaussianModel(Eigen::MatrixXd A, double s2, double mean_scale = 1.0, double logvar_shift = 0.0);

  int latent_dim() const override { return static_cast<int>(A_.cols()); }
  int output_dim() const override { return static_cast<int>(A_.rows()); }
  void encode(const Eigen::MatrixXd& X, Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) const override;
  Eigen::MatrixXd decode(const Eigen::MatrixXd& Z) const override;
  Eigen::MatrixXd log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) const override;
  codemaps::BregmanGenerator generator() const override { return codemaps::BregmanGenerator::bernoulli(); }

  /// Exact posterior mean and variance diagonal (orthogonal columns only).
  void exact_posterior(const Eigen::MatrixXd& X, Eigen::MatrixXd& mean, Eigen::VectorXd& var) const;
  /// Closed-form mean KL(q(z|x) || p(z|x)) over the rows of X.
  double exact_gap(const Eigen::MatrixXd& X) const;

  /// N draws from the generative model.
  Eigen::MatrixXd sample(int N, std::uint64_t seed) const;

  const Eigen::MatrixXd& A() const { return A_; }

 private:
  Eigen::MatrixXd A_;
  double s2_;
  double mean_scale_;
  double logvar_shift_;
  Eigen::VectorXd post_var_;
};

/// D x d matrix with orthogonal columns of the given norms (seeded QR).
Eigen::MatrixXd orthogonal_columns(int D, const Eigen::VectorXd& norms, std::uint64_t seed);

}  // namespace codeaudit::toy
