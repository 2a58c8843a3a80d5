#include "codeaudit/grid.hpp"

#include <algorithm>
#include <cmath>

#include "codeaudit/util.hpp"

namespace codeaudit::gridaudit {

std::string to_string(GridWeighting w) { return w == GridWeighting::uniform ? "uniform" : "prior"; }

GridWeighting parse_weighting(const std::string& name) {
  if (name == "uniform") return GridWeighting::uniform;
  if (name == "prior") return GridWeighting::prior;
  throw InvalidArgument("unknown grid weighting '" + name + "'");
}

LatentGrid build_grid(const std::vector<Interval>& bounds, const std::vector<int>& resolution,
                      GridWeighting weighting) {
  if (bounds.empty() || bounds.size() != resolution.size())
    throw InvalidArgument("grid: bounds and resolution must be non-empty and the same length");
  std::size_t M = 1;
  for (std::size_t a = 0; a < bounds.size(); ++a) {
    if (!std::isfinite(bounds[a].lo) || !std::isfinite(bounds[a].hi))
      throw InvalidArgument("grid: bounds must be finite");
    if (!(bounds[a].hi > bounds[a].lo)) throw InvalidArgument("grid: empty bounds on axis " + std::to_string(a));
    if (resolution[a] < 2) throw InvalidArgument("grid: resolution must be >= 2 per axis");
    M *= static_cast<std::size_t>(resolution[a]);
  }
  const int d = static_cast<int>(bounds.size());
  LatentGrid g;
  g.bounds = bounds;
  g.resolution = resolution;
  g.weighting = weighting;
  g.points.resize(static_cast<Eigen::Index>(M), d);
  g.cell_volume = 1.0;
  std::vector<double> step(d);
  for (int a = 0; a < d; ++a) {
    step[a] = (bounds[a].hi - bounds[a].lo) / (resolution[a] - 1);
    g.cell_volume *= step[a];
  }
  std::vector<int> idx(d, 0);
  for (std::size_t m = 0; m < M; ++m) {
    for (int a = 0; a < d; ++a) {
      // Endpoints exact; interior points by index, not accumulation.
      g.points(static_cast<Eigen::Index>(m), a) =
          idx[a] == resolution[a] - 1 ? bounds[a].hi : bounds[a].lo + idx[a] * step[a];
    }
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[a] < resolution[a]) break;
      idx[a] = 0;
    }
  }
  if (weighting == GridWeighting::uniform) {
    g.weights = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(M), 1.0 / static_cast<double>(M));
  } else {
    const Eigen::VectorXd logw = -0.5 * g.points.rowwise().squaredNorm();
    const double mx = logw.maxCoeff();
    Eigen::VectorXd w = (logw.array() - mx).exp();
    g.weights = w / w.sum();
  }
  return g;
}

std::vector<Interval> data_bounds(const Eigen::MatrixXd& Z, double margin) {
  if (Z.rows() == 0) throw InvalidArgument("grid: no latent means for data bounds");
  std::vector<Interval> out(Z.cols());
  for (Eigen::Index a = 0; a < Z.cols(); ++a) {
    out[a] = {Z.col(a).minCoeff() - margin, Z.col(a).maxCoeff() + margin};
  }
  return out;
}

std::vector<Interval> auto_bounds(const Eigen::MatrixXd& Z, double margin, double half) {
  auto out = data_bounds(Z, margin);
  for (auto& iv : out) {
    iv.lo = std::min(iv.lo, -half);
    iv.hi = std::max(iv.hi, half);
  }
  return out;
}

LatentGrid explicit_grid(Eigen::MatrixXd points, Eigen::VectorXd weights) {
  if (points.rows() < 1 || points.rows() != weights.size())
    throw InvalidArgument("grid: points and weights must be non-empty and the same length");
  if ((weights.array() < 0.0).any() || !(weights.sum() > 0.0))
    throw InvalidArgument("grid: weights must be non-negative with positive total");
  LatentGrid g;
  g.points = std::move(points);
  g.weights = weights / weights.sum();
  g.cell_volume = 1.0;
  return g;
}

}  // namespace codeaudit::gridaudit
