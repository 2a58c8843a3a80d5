#pragma once

#include <vector>

#include <Eigen/Dense>

#include "codeaudit/gridaudit.hpp"
#include "json.hpp"

// Posterior-Gibbs kernels z -> x -> z' on a finite grid and the one-step and
// finite-horizon kernel mismatch bounds.

namespace codeaudit::gibbs {

/// Joint table Gamma(n, g) = w_n * cond(n, g) over (example, grid point).
struct DiscreteJoint {
  Eigen::MatrixXd gamma;    // N x M, sums to 1
  Eigen::MatrixXd forward;  // N x M, cond(g | n), rows sum to 1
  Eigen::MatrixXd reverse;  // M x N, r(n | g); zero rows where the marginal vanishes
  Eigen::VectorXd marginal; // M
  Eigen::VectorXd data_weights;  // N
  std::vector<bool> zero_marginal;

  int N() const { return static_cast<int>(gamma.rows()); }
  int M() const { return static_cast<int>(gamma.cols()); }

  /// `cond` rows are normalized here; data weights default to uniform.
  static DiscreteJoint from_conditionals(const Eigen::MatrixXd& cond,
                                         Eigen::VectorXd data_weights = Eigen::VectorXd());
};

DiscreteJoint q_joint(const gridaudit::GridPosteriorSet& post);
DiscreteJoint p_joint(const gridaudit::GridPosteriorSet& post);

struct GibbsKernels {
  Eigen::MatrixXd Kq;  // M x M
  Eigen::MatrixXd Kp;
  int zero_rows_q = 0;
  int zero_rows_p = 0;
};

/// K_q = R_q Q and K_p = R_p P.
GibbsKernels build_kernels(const DiscreteJoint& q, const DiscreteJoint& p);

/// sum_n w_n KL(q(.|n) || p(.|n)).
double joint_delta_bar(const DiscreteJoint& q, const DiscreteJoint& p);
/// KL(q-bar || p-bar).
double marginal_kl(const DiscreteJoint& q, const DiscreteJoint& p);
/// E_{q-bar} KL(L_q(z, .) || L_p(z, .)) for the lifted kernels onto (x, z').
double lifted_kl_average(const DiscreteJoint& q, const DiscreteJoint& p);

/// sum_g mu_g KL(A(g,.) || B(g,.)) over rows with mu_g > 0; +inf when a row
/// of A puts mass where B has none.
double expected_row_kl(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::VectorXd& mu);

struct OneStep {
  double lhs = 0.0;
  double rhs = 0.0;  // 2 delta_bar - KL(q-bar || p-bar)
  bool holds = false;
  bool ac_violation = false;
};

inline constexpr double kBoundSlack = 1e-8;

OneStep one_step_mismatch(const GibbsKernels& k, const Eigen::VectorXd& q_bar, double delta_bar,
                          double kl_marginals);

struct PathMismatch {
  int H = 0;
  double path_kl = 0.0;
  double bound = 0.0;
  std::vector<double> per_step;
  bool holds = false;
  double stationarity_residual = 0.0;  // || q-bar K_q - q-bar ||_1
  bool stationary = false;             // residual <= 1e-8
};

/// Chain-rule KL between the H-step path laws of the q- and p-chains, both
/// started at q-bar.
PathMismatch path_mismatch(const GibbsKernels& k, const Eigen::VectorXd& q_bar, int H, double delta_bar,
                           double kl_marginals);

/// Brute-force path KL over all M^(H+1) paths. Small grids only.
double path_kl_enumeration(const GibbsKernels& k, const Eigen::VectorXd& q_bar, int H);

struct HorizonAgreement {
  int H = 0;
  double A_H = 0.0;
  double eta_p_H = 0.0;
  double d_bin = 0.0;
  double path_kl = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// Endpoint disagreement of the two H-step chains started at q-bar.
HorizonAgreement horizon_agreement(const GibbsKernels& k, const Eigen::VectorXd& q_bar,
                                   const gridaudit::GridLabels& labels, int H, double delta_bar,
                                   double kl_marginals);

nlohmann::json to_json(const OneStep& s);
nlohmann::json to_json(const PathMismatch& p);
nlohmann::json to_json(const HorizonAgreement& h);

}  // namespace codeaudit::gibbs
