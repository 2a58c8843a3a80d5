#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "codeaudit/channel.hpp"
#include "codeaudit/codemaps.hpp"
#include "codeaudit/grid.hpp"
#include "codeaudit/infokl.hpp"
#include "codeaudit/latent_model.hpp"
#include "json.hpp"

namespace codeaudit::gridaudit {

/// How the encoder density is discretized on the grid.
///  volume:      q_ng ∝ q(z_g | x_n) * cell volume (plain quadrature)
///  grid_weight: q_ng ∝ q(z_g | x_n) * w_g
enum class QuadratureRule { volume, grid_weight };

std::string to_string(QuadratureRule r);
QuadratureRule parse_quadrature(const std::string& name);

/// Per-example discrete posteriors over a shared grid, in log space.
struct GridPosteriorSet {
  Eigen::MatrixXd log_q;            // N x M, rows normalized
  Eigen::MatrixXd log_p;            // N x M, rows normalized
  Eigen::VectorXd log_marginal;     // log sum_g p(x_n | z_g) w_g
  Eigen::VectorXd delta;            // KL(q_n || p_n); +inf when absolute continuity fails
  std::vector<bool> ac_violation;   // q_ng > 0 where p_ng == 0
  QuadratureRule rule = QuadratureRule::volume;

  int N() const { return static_cast<int>(log_q.rows()); }
  int M() const { return static_cast<int>(log_q.cols()); }
  bool any_violation() const;

  /// Builds a set from explicit (unnormalized, non-negative) weights.
  static GridPosteriorSet from_distributions(const Eigen::MatrixXd& q, const Eigen::MatrixXd& p);
};

/// log N(z; mu, diag(exp(logvar))) for each row of Z.
Eigen::VectorXd log_normal_diag(const Eigen::MatrixXd& Z, const Eigen::VectorXd& mu,
                                const Eigen::VectorXd& logvar);

GridPosteriorSet grid_posteriors(const LatentModel& model, const Eigen::MatrixXd& X,
                                 const LatentGrid& grid, QuadratureRule rule = QuadratureRule::volume,
                                 int jobs = 1);

struct ExampleRow {
  double delta = 0.0;
  double eta_q = 0.0;
  double eta_p = 0.0;
  double d_bin = 0.0;
  double rho = 0.0;  // direct conditional route
  bool ac_violation = false;
};

struct AuditReport {
  double delta_bar = 0.0;
  double d_bin = 0.0;
  double J = 0.0;
  double rho_bar = 0.0;         // difference route
  double rho_bar_direct = 0.0;  // conditional KL route
  double rho_route_gap = 0.0;   // |rho_bar - rho_bar_direct|
  double closure_residual = 0.0;
  double eta_q_bar = 0.0;
  double eta_p_bar = 0.0;
  double A_q = 0.0;
  double A_p = 0.0;
  double A_mu = -1.0;  // filled in separately; negative when absent
  double code_pair_kl = 0.0;
  bool coarsening_ok = false;   // d_bin <= code_pair_kl <= delta_bar (1e-10 slack)
  bool valid = false;           // delta_bar >= d_bin - 1e-6 and no violations
  bool ac_violation = false;
  int ac_violation_count = 0;
  double fubini_gap = 0.0;      // |(1 - trace P_q) - eta_q_bar|
  infokl::BoundSet bounds;
  Eigen::MatrixXd table_q;      // K x K pushforward of the label pair under q-bar
  Eigen::MatrixXd table_p;      // same under p-bar
  std::vector<ExampleRow> per_example;
  std::string grid_weighting;
  std::string quadrature;
  int grid_size = 0;
};

inline constexpr double kValidityTolerance = 1e-6;

/// Grid labels: encoder label at each z_g and decoder label at d(z_g).
struct GridLabels {
  std::vector<int> enc;
  std::vector<int> dec;
};

GridLabels grid_labels(const LatentGrid& grid, const codemaps::EncoderCodeMap& enc,
                       const codemaps::DecoderCodeMap& dec, const LatentModel& model);

AuditReport audit_exact(const GridPosteriorSet& post, const GridLabels& labels, int K, int jobs = 1);

AuditReport audit_exact(const GridPosteriorSet& post, const codemaps::EncoderCodeMap& enc,
                        const codemaps::DecoderCodeMap& dec, const LatentModel& model,
                        const LatentGrid& grid, int jobs = 1);

/// Probabilities of a grid event under q-bar and p-bar.
std::pair<double, double> event_probabilities(const GridPosteriorSet& post, const std::vector<bool>& event);

/// Fraction of examples whose encoder mean gets equal labels.
double mean_code_agreement(const LatentModel& model, const Eigen::MatrixXd& X,
                           const codemaps::EncoderCodeMap& enc, const codemaps::DecoderCodeMap& dec);

struct FreeEnergyStack {
  double floor = 0.0;  // gap-free term supplied by the caller
  double d_bin = 0.0;
  double J = 0.0;
  double rho = 0.0;
  double closure_residual = 0.0;
};

FreeEnergyStack free_energy_stack(const AuditReport& report, double reconstruction_term);

nlohmann::json to_json(const AuditReport& r);
nlohmann::json to_json(const FreeEnergyStack& s);
void write_per_example_csv(std::ostream& out, const AuditReport& r);

}  // namespace codeaudit::gridaudit
