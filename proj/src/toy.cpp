#include "codeaudit/toy.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "codeaudit/util.hpp"

namespace codeaudit::toy {

using Eigen::MatrixXd;
using Eigen::VectorXd;

LinearGaussianModel::LinearGaussianModel(MatrixXd A, double s2, double mean_scale, double logvar_shift)
    : A_(std::move(A)), s2_(s2), mean_scale_(mean_scale), logvar_shift_(logvar_shift) {
  if (A_.rows() < 1 || A_.cols() < 1) throw InvalidArgument("toy model: empty loading matrix");
  if (!(s2_ > 0.0)) throw InvalidArgument("toy model: noise variance must be positive");
  const MatrixXd G = A_.transpose() * A_;
  const double off = (G - MatrixXd(G.diagonal().asDiagonal())).cwiseAbs().maxCoeff();
  if (off > 1e-10 * std::max(1.0, G.diagonal().maxCoeff()))
    throw InvalidArgument("toy model: columns of A must be orthogonal");
  post_var_ = (1.0 + G.diagonal().array() / s2_).inverse();
}

void LinearGaussianModel::exact_posterior(const MatrixXd& X, MatrixXd& mean, VectorXd& var) const {
  mean = (X * A_ / s2_) * post_var_.asDiagonal();
  var = post_var_;
}

void LinearGaussianModel::encode(const MatrixXd& X, MatrixXd& mu, MatrixXd& logvar) const {
  VectorXd var;
  exact_posterior(X, mu, var);
  mu *= mean_scale_;
  logvar = (var.array().log() + logvar_shift_).transpose().replicate(X.rows(), 1);
}

MatrixXd LinearGaussianModel::decode(const MatrixXd& Z) const {
  const MatrixXd a = Z * A_.transpose();
  return a.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); })
      .cwiseMax(codemaps::kDecoderEpsilon)
      .cwiseMin(1.0 - codemaps::kDecoderEpsilon);
}

MatrixXd LinearGaussianModel::log_likelihood(const MatrixXd& X, const MatrixXd& Z) const {
  const MatrixXd mean = Z * A_.transpose();  // G x D
  const VectorXd xx = X.rowwise().squaredNorm();
  const VectorXd mm = mean.rowwise().squaredNorm();
  MatrixXd sq = -2.0 * X * mean.transpose();
  sq.colwise() += xx;
  sq.rowwise() += mm.transpose();
  const double D = static_cast<double>(A_.rows());
  return (-0.5 / s2_) * sq.array() - 0.5 * D * std::log(2.0 * std::numbers::pi * s2_);
}

double LinearGaussianModel::exact_gap(const MatrixXd& X) const {
  MatrixXd pm, qm, qlv;
  VectorXd pv;
  exact_posterior(X, pm, pv);
  encode(X, qm, qlv);
  double total = 0.0;
  for (Eigen::Index n = 0; n < X.rows(); ++n)
    for (Eigen::Index j = 0; j < pm.cols(); ++j) {
      const double qv = std::exp(qlv(n, j));
      const double d = qm(n, j) - pm(n, j);
      total += 0.5 * (std::log(pv(j) / qv) + (qv + d * d) / pv(j) - 1.0);
    }
  return total / static_cast<double>(X.rows());
}

MatrixXd LinearGaussianModel::sample(int N, std::uint64_t seed) const {
  if (N < 1) throw InvalidArgument("toy model: N must be positive");
  auto rng = stream_rng(seed, 7);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd Z(N, A_.cols()), E(N, A_.rows());
  for (Eigen::Index i = 0; i < Z.size(); ++i) Z.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < E.size(); ++i) E.data()[i] = normal(rng);
  return Z * A_.transpose() + std::sqrt(s2_) * E;
}

MatrixXd orthogonal_columns(int D, const VectorXd& norms, std::uint64_t seed) {
  const auto d = norms.size();
  if (d < 1 || D < d) throw InvalidArgument("orthogonal_columns needs 1 <= d <= D");
  auto rng = stream_rng(seed, 11);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd G(D, d);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = normal(rng);
  const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(G).householderQ() * MatrixXd::Identity(D, d);
  return Q * norms.asDiagonal();
}

}  // namespace codeaudit::toy
