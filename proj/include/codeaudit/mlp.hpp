#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

namespace codeaudit::vae {

struct Dense {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
};

/// Fully connected net: tanh on hidden layers, identity on the last layer.
/// Batches are stored one example per row.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, h1, ..., out}; Glorot-uniform weights, zero biases.
  Mlp(const std::vector<int>& sizes, std::mt19937_64& rng);
  explicit Mlp(std::vector<Dense> layers);

  struct Cache {
    std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, acts[i] = output of layer i
  };

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients into `grads` (same shapes as layers)
  /// and returns dL/dX.
  Eigen::MatrixXd backward(const Cache& cache, const Eigen::MatrixXd& d_out, std::vector<Dense>& grads) const;

  /// d output / d input at a single point (out x in).
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& x) const;

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().W.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.rows()); }
  std::size_t parameter_count() const;
  const std::vector<Dense>& layers() const { return layers_; }
  std::vector<Dense>& layers() { return layers_; }

  std::vector<Dense> zero_like() const;

  /// Row-major W then b, layer by layer.
  void flatten_into(Eigen::VectorXd& out, std::size_t& offset) const;
  void assign_from(const Eigen::VectorXd& in, std::size_t& offset);

 private:
  std::vector<Dense> layers_;
};

void flatten_grads(const std::vector<Dense>& grads, Eigen::VectorXd& out, std::size_t& offset);

}  // namespace codeaudit::vae
