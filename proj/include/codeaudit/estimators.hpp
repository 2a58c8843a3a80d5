#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "codeaudit/codemaps.hpp"
#include "codeaudit/latent_model.hpp"
#include "json.hpp"

// Sampling estimators for models whose latent space is not enumerated.
// Every example draws from its own generator stream_rng(seed, n), so results
// do not depend on the number of workers.

namespace codeaudit::estimators {

struct SnisResult {
  int K_samples = 0;
  std::vector<double> eta_p;      // NaN for excluded examples
  std::vector<double> ess;        // NaN for excluded examples
  std::vector<double> eta_q_mc;   // plain disagreement frequency under q
  std::vector<bool> excluded;     // all unnormalized weights underflowed
  int excluded_count = 0;
  double eta_p_mean = 0.0;
  double eta_p_se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double ess_mean = 0.0;
  double eta_q_mean = 0.0;
};

/// Self-normalized importance weights w_k ∝ p(x|z_k) p(z_k) / q(z_k|x) with
/// z_k ~ q(.|x). K_samples >= 2.
SnisResult snis_eta_p(const LatentModel& model, const Eigen::MatrixXd& X,
                      const codemaps::EncoderCodeMap& enc, const codemaps::DecoderCodeMap& dec,
                      int K_samples, std::uint64_t seed, int jobs = 1);

/// 1 / sum w^2 for normalized weights.
double effective_sample_size(const std::vector<double>& normalized_weights);

struct IwaeDiagnostic {
  int K_samples = 0;
  double iwae = 0.0;  // mean of log-mean-exp of log weights
  double elbo = 0.0;  // mean of the average log weight over the same draws
  double gap = 0.0;   // iwae - elbo; a scale diagnostic, never a certified gap
  bool heuristic = true;
  int excluded_count = 0;
};

IwaeDiagnostic iwae_gap_diagnostic(const LatentModel& model, const Eigen::MatrixXd& X, int K_samples,
                                   std::uint64_t seed, int jobs = 1);

struct McAgreement {
  double A = 0.0;
  double se = 0.0;  // sqrt(A (1 - A) / draws)
  long long draws = 0;
};

McAgreement mc_agreement(const LatentModel& model, const Eigen::MatrixXd& X,
                         const codemaps::EncoderCodeMap& enc, const codemaps::DecoderCodeMap& dec,
                         int samples_per_example, std::uint64_t seed, int jobs = 1);

/// Summary row in the shape of the sampling audit table:
/// {delta_iwae, eta_p_snis, ess_over_k, A_q, d_bin, residual_budget}.
/// Always labelled heuristic; it never carries a grid-exact validity flag.
nlohmann::json snis_audit_json(const SnisResult& snis, const IwaeDiagnostic& iwae);

nlohmann::json to_json(const SnisResult& r);
nlohmann::json to_json(const IwaeDiagnostic& d);
nlohmann::json to_json(const McAgreement& a);

/// Draws z ~ N(mu, diag(exp(logvar))), one per row of the returned matrix.
Eigen::MatrixXd sample_posterior(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, int count,
                                 std::mt19937_64& rng);

}  // namespace codeaudit::estimators
