#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace codeaudit::codemaps {

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // symmetric positive definite (diagonal allowed)
  double weight = 0.0;         // in (0, 1]
};

enum class CovarianceType { full, diagonal, automatic };

struct GmmOptions {
  int K = 2;
  std::uint64_t seed = 0;
  int restarts = 5;
  int max_iter = 500;
  double tol = 1e-9;  // stop when the per-sample log-likelihood improves less than this
  CovarianceType covariance = CovarianceType::automatic;  // full for d <= 3, diagonal above
  double covariance_floor = 1e-6;                         // eigenvalue floor
};

/// Gaussian mixture summary of a point cloud in latent space.
struct GmmSummary {
  std::vector<GaussianComponent> components;
  std::vector<double> fit_log;  // mean log-likelihood per EM iteration (best restart)
  CovarianceType covariance = CovarianceType::full;
  bool degenerate = false;      // all samples identical: one effective component
  int K() const { return static_cast<int>(components.size()); }
  int dim() const { return components.empty() ? 0 : static_cast<int>(components[0].mean.size()); }
};

/// Best-of-restarts EM with k-means++ seeding. Rows of `samples` are points.
/// Covariances are projected onto {S : S >= floor * I} in every M-step,
/// which keeps each EM step an exact maximization and the log-likelihood
/// sequence non-decreasing.
GmmSummary fit_gmm(const Eigen::MatrixXd& samples, const GmmOptions& options);

/// Mean log-likelihood of `samples` under the mixture.
double gmm_mean_log_likelihood(const GmmSummary& gmm, const Eigen::MatrixXd& samples);

nlohmann::json to_json(const GmmSummary& gmm);
GmmSummary gmm_from_json(const nlohmann::json& j);

std::string to_string(CovarianceType t);
CovarianceType parse_covariance(const std::string& name);

}  // namespace codeaudit::codemaps
