#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "codeaudit/gmm.hpp"
#include "json.hpp"

// Hard code maps on latent space. Encoder side: argmin of the Gaussian
// potential Phi_c. Decoder side: Type-1 Bregman Voronoi rule on decoder
// outputs. Labels are 0-based; ties go to the lowest index.

namespace codeaudit::codemaps {

inline constexpr double kDecoderEpsilon = 1e-7;
/// Gap between best and runner-up score below which a query counts as a tie.
inline constexpr double kTieGap = 1e-9;

/// argmin with lowest-index tie-break; scores within a relative 1e-12 of the
/// running minimum count as equal.
int argmin_lowest(const Eigen::VectorXd& scores);

enum class EncoderRegime { isotropic_uniform, additively_weighted, mahalanobis_quadric };

std::string to_string(EncoderRegime r);
EncoderRegime parse_encoder_regime(const std::string& name);

class EncoderCodeMap {
 public:
  /// Picks the most specific regime consistent with the components unless
  /// one is requested; an inconsistent request throws InvalidArgument.
  explicit EncoderCodeMap(GmmSummary summary, std::optional<EncoderRegime> regime = std::nullopt);

  int K() const { return summary_.K(); }
  int dim() const { return summary_.dim(); }
  EncoderRegime regime() const { return regime_; }
  const GmmSummary& summary() const { return summary_; }

  /// Phi_c(z) = 0.5 (z-mu)^T S^-1 (z-mu) + 0.5 log|S| - log pi.
  Eigen::VectorXd potentials(const Eigen::VectorXd& z) const;
  /// Regime-specific score whose argmin is the label (nearest mean,
  /// ||z-mu||^2 - 2 s^2 log pi, or Phi_c).
  Eigen::VectorXd scores(const Eigen::VectorXd& z) const;
  int label(const Eigen::VectorXd& z) const;
  std::vector<int> labels(const Eigen::MatrixXd& Z) const;  // rows are points

 private:
  GmmSummary summary_;
  EncoderRegime regime_;
  double sigma2_ = 1.0;  // shared isotropic variance, when applicable
  std::vector<Eigen::MatrixXd> precision_;
  std::vector<double> log_det_;
};

std::optional<double> shared_isotropic_variance(const GmmSummary& summary, double rel_tol = 1e-12);

enum class GeneratorKind { bernoulli, categorical };

/// Separable convex generator on decoder outputs.
/// Bernoulli: F(d) = sum d log d + (1-d) log(1-d), grad F = logit,
///   F*(t) = sum log(1 + e^t), grad F* = sigmoid.
/// Categorical (per position, orthant form): F(d) = sum d log d - d,
///   grad F = log d, F*(t) = sum e^t, grad F* = exp.
/// On per-position probability vectors the categorical divergence is the
/// sum of per-position KL divergences.
struct BregmanGenerator {
  GeneratorKind kind = GeneratorKind::bernoulli;
  int positions = 0;  // categorical only
  int vocab = 0;      // categorical only

  static BregmanGenerator bernoulli() { return {}; }
  static BregmanGenerator categorical(int positions, int vocab);

  double F(const Eigen::VectorXd& d) const;
  Eigen::VectorXd grad(const Eigen::VectorXd& d) const;
  double F_dual(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd grad_dual(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd hessian_diag(const Eigen::VectorXd& d) const;
  double divergence(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
  double dual_divergence(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
};

std::string to_string(GeneratorKind k);

Eigen::VectorXd clip_output(const Eigen::VectorXd& d, double eps = kDecoderEpsilon);

class DecoderCodeMap {
 public:
  /// `prototypes` rows are decoder outputs at the component means; they are
  /// clipped to [eps, 1-eps]. Duplicate prototypes throw InvalidArgument.
  DecoderCodeMap(Eigen::MatrixXd prototypes, BregmanGenerator generator,
                 double eps = kDecoderEpsilon);

  int K() const { return static_cast<int>(prototypes_.rows()); }
  int output_dim() const { return static_cast<int>(prototypes_.cols()); }
  const Eigen::MatrixXd& prototypes() const { return prototypes_; }
  const BregmanGenerator& generator() const { return generator_; }
  double epsilon() const { return eps_; }

  /// D_F(x || d_c) for every c; x is clipped first.
  Eigen::VectorXd divergences(const Eigen::VectorXd& x) const;
  int label(const Eigen::VectorXd& x) const;
  std::vector<int> labels(const Eigen::MatrixXd& X) const;  // rows are outputs

  /// Additively weighted Euclidean Voronoi rule with centers grad F(d_c)/2.
  int affine_label(const Eigen::VectorXd& x) const;
  /// Dual rule: argmin D_F*(theta_c || theta_x) in logit coordinates.
  int dual_label(const Eigen::VectorXd& x) const;

  /// Runner-up minus best divergence.
  double tie_gap(const Eigen::VectorXd& x) const;
  bool is_tie(const Eigen::VectorXd& x, double gap = kTieGap) const { return tie_gap(x) < gap; }

  /// Euclidean distance from x to the nearest Type-1 bisector between its
  /// own cell and another cell (bisectors are hyperplanes in output space).
  double bisector_distance(const Eigen::VectorXd& x) const;

  const Eigen::MatrixXd& affine_centers() const { return centers_; }
  const Eigen::VectorXd& affine_weights() const { return weights_; }

 private:
  Eigen::MatrixXd prototypes_;
  BregmanGenerator generator_;
  double eps_;
  Eigen::MatrixXd theta_;    // grad F(d_c), rows
  Eigen::VectorXd a_;        // <d_c, grad F(d_c)> - F(d_c)
  Eigen::MatrixXd centers_;  // theta / 2
  Eigen::VectorXd weights_;  // ||theta||^2 / 4 - a
};

using LatentFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using JacobianFunction = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

/// Central differences with step h_i = step * max(1, |z_i|).
Eigen::MatrixXd finite_difference_jacobian(const LatentFunction& f, const Eigen::VectorXd& z,
                                           double step);

struct ComponentMismatch {
  double kappa = 0.0;
  double a_star = 0.0;
  double kappa_inv = 0.0;          // NaN when undefined
  bool kappa_inv_defined = true;   // false when G_c is singular
  Eigen::MatrixXd G;               // pullback Fisher metric at mu_c
};

struct FisherMismatch {
  std::vector<ComponentMismatch> components;
  double weighted_kappa = 0.0;  // sum_c pi_c kappa_c
};

/// Pullback metric G_c = J^T diag(hess F(d_c)) J at each component mean.
/// Uses `jacobian` when given, central differences of `decoder` otherwise.
FisherMismatch fisher_mismatch(const GmmSummary& summary, const LatentFunction& decoder,
                               const BregmanGenerator& generator, double fd_step = 1e-4,
                               const JacobianFunction& jacobian = {},
                               double eps = kDecoderEpsilon);

struct DecoderRegularity {
  double L = 0.0;      // mean spectral norm of the latent-to-output Jacobian
  double gamma = 0.0;  // 5th percentile of distance to the nearest bisector
};

DecoderRegularity decoder_regularity(const DecoderCodeMap& map, const Eigen::MatrixXd& latent_points,
                                     const LatentFunction& decoder, double fd_step = 1e-4,
                                     const JacobianFunction& jacobian = {});

nlohmann::json to_json(const EncoderCodeMap& map);
EncoderCodeMap encoder_map_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DecoderCodeMap& map);
DecoderCodeMap decoder_map_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FisherMismatch& fm);

}  // namespace codeaudit::codemaps
