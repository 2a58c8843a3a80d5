#include "codeaudit/mlp.hpp"

#include <cmath>

#include "codeaudit/util.hpp"

namespace codeaudit::vae {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Mlp::Mlp(const std::vector<int>& sizes, std::mt19937_64& rng) {
  if (sizes.size() < 2) throw InvalidArgument("an MLP needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i], out = sizes[i + 1];
    if (in < 1 || out < 1) throw InvalidArgument("layer sizes must be positive");
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Dense d{MatrixXd(out, in), VectorXd::Zero(out)};
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) d.W(r, c) = u(rng);
    layers_.push_back(std::move(d));
  }
}

Mlp::Mlp(std::vector<Dense> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("an MLP needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].b.size() != layers_[i].W.rows()) throw InvalidArgument("bias size != layer width");
    if (i > 0 && layers_[i].W.cols() != layers_[i - 1].W.rows())
      throw InvalidArgument("layer shapes do not chain");
  }
}

MatrixXd Mlp::forward(const MatrixXd& X, Cache* cache) const {
  if (X.cols() != input_dim()) throw InvalidArgument("MLP input width mismatch");
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(X);
  }
  MatrixXd h = X;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    MatrixXd a = (h * layers_[i].W.transpose()).rowwise() + layers_[i].b.transpose();
    if (i + 1 < layers_.size()) a = a.array().tanh();
    h = std::move(a);
    if (cache) cache->acts.push_back(h);
  }
  return h;
}

MatrixXd Mlp::backward(const Cache& cache, const MatrixXd& d_out, std::vector<Dense>& grads) const {
  MatrixXd delta = d_out;  // dL / d(pre-activation) of the current layer
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (k + 1 < layers_.size()) delta = delta.cwiseProduct((1.0 - cache.acts[k + 1].array().square()).matrix());
    grads[k].W.noalias() += delta.transpose() * cache.acts[k];
    grads[k].b += delta.colwise().sum().transpose();
    delta = delta * layers_[k].W;
  }
  return delta;
}

MatrixXd Mlp::jacobian(const VectorXd& x) const {
  MatrixXd J = MatrixXd::Identity(x.size(), x.size());
  VectorXd h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    VectorXd a = layers_[i].W * h + layers_[i].b;
    J = layers_[i].W * J;
    if (i + 1 < layers_.size()) {
      a = a.array().tanh();
      J = (1.0 - a.array().square()).matrix().asDiagonal() * J;
    }
    h = a;
  }
  return J;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

std::vector<Dense> Mlp::zero_like() const {
  std::vector<Dense> g;
  for (const auto& l : layers_) g.push_back({MatrixXd::Zero(l.W.rows(), l.W.cols()), VectorXd::Zero(l.b.size())});
  return g;
}

void flatten_grads(const std::vector<Dense>& grads, VectorXd& out, std::size_t& offset) {
  for (const auto& l : grads) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) out(static_cast<Eigen::Index>(offset++)) = l.W(r, c);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) out(static_cast<Eigen::Index>(offset++)) = l.b(r);
  }
}

void Mlp::flatten_into(VectorXd& out, std::size_t& offset) const { flatten_grads(layers_, out, offset); }

void Mlp::assign_from(const VectorXd& in, std::size_t& offset) {
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = in(static_cast<Eigen::Index>(offset++));
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = in(static_cast<Eigen::Index>(offset++));
  }
}

}  // namespace codeaudit::vae
