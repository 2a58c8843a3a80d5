#pragma once

#include <optional>

#include <Eigen/Dense>

#include "codeaudit/codemaps.hpp"

namespace codeaudit {

/// Diagonal-Gaussian encoder plus a decoder with a tractable likelihood.
/// Data, latent points and outputs are stored one per row.
class LatentModel {
 public:
  virtual ~LatentModel() = default;

  virtual int latent_dim() const = 0;
  virtual int output_dim() const = 0;

  /// Encoder mean and log-variance, each N x latent_dim.
  virtual void encode(const Eigen::MatrixXd& X, Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) const = 0;

  /// Decoder outputs (G x output_dim), clipped to [eps, 1-eps].
  virtual Eigen::MatrixXd decode(const Eigen::MatrixXd& Z) const = 0;

  /// log p(x_n | z_g) for every pair, N x G.
  virtual Eigen::MatrixXd log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) const = 0;

  /// Generator used by the decoder code map.
  virtual codemaps::BregmanGenerator generator() const = 0;

  /// Exact decoder Jacobian at z (output_dim x latent_dim), when available.
  virtual std::optional<Eigen::MatrixXd> decoder_jacobian(const Eigen::VectorXd&) const {
    return std::nullopt;
  }

  Eigen::VectorXd decode_one(const Eigen::VectorXd& z) const {
    return decode(z.transpose()).row(0).transpose();
  }
};

}  // namespace codeaudit
