#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace codeaudit::gridaudit {

enum class GridWeighting { uniform, prior };

std::string to_string(GridWeighting w);
GridWeighting parse_weighting(const std::string& name);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Weighted tensor-product grid on latent space. Point g has row g of
/// `points`; the last axis varies fastest.
struct LatentGrid {
  Eigen::MatrixXd points;   // M x d
  Eigen::VectorXd weights;  // sums to 1
  std::vector<Interval> bounds;
  std::vector<int> resolution;
  GridWeighting weighting = GridWeighting::uniform;
  double cell_volume = 1.0;

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

/// Resolution >= 2 per axis, finite non-empty bounds. Prior weighting uses
/// the standard normal density at the points, normalized.
LatentGrid build_grid(const std::vector<Interval>& bounds, const std::vector<int>& resolution,
                      GridWeighting weighting);

/// [min - margin, max + margin] per column of `latent_means`.
std::vector<Interval> data_bounds(const Eigen::MatrixXd& latent_means, double margin = 0.5);

/// Per-axis union of data_bounds(...) and [-prior_half_width, prior_half_width].
std::vector<Interval> auto_bounds(const Eigen::MatrixXd& latent_means, double margin = 0.5,
                                  double prior_half_width = 3.0);

/// Grid of explicit points (any layout) with given non-negative weights.
LatentGrid explicit_grid(Eigen::MatrixXd points, Eigen::VectorXd weights);

}  // namespace codeaudit::gridaudit
