#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "codeaudit/latent_model.hpp"
#include "codeaudit/mlp.hpp"
#include "json.hpp"

// Diagonal-Gaussian encoder, Bernoulli or per-position Categorical decoder.

namespace codeaudit::vae {

enum class Likelihood { bernoulli, categorical };

std::string to_string(Likelihood l);

struct VaeSpec {
  int input_dim = 0;                 // decoder output width (L * V for categorical)
  int latent_dim = 2;
  std::vector<int> hidden = {64, 64};
  Likelihood likelihood = Likelihood::bernoulli;
  int vocab = 0;      // categorical only
  int positions = 0;  // categorical only
  double beta = 1.0;  // training KL weight; audits always use the beta = 1 gap
  double epsilon = codemaps::kDecoderEpsilon;
};

struct ElboTerms {
  Eigen::VectorXd recon;  // log p(x | z)
  Eigen::VectorXd rate;   // KL(q(z|x) || N(0, I))
  Eigen::VectorXd elbo;   // recon - beta * rate
};

class VaeModel : public LatentModel {
 public:
  VaeModel(const VaeSpec& spec, std::uint64_t seed);
  VaeModel(const VaeSpec& spec, Mlp encoder, Mlp decoder);

  const VaeSpec& spec() const { return spec_; }
  VaeSpec& mutable_spec() { return spec_; }
  const Mlp& encoder() const { return enc_; }
  const Mlp& decoder() const { return dec_; }

  int latent_dim() const override { return spec_.latent_dim; }
  int output_dim() const override { return spec_.input_dim; }
  void encode(const Eigen::MatrixXd& X, Eigen::MatrixXd& mu, Eigen::MatrixXd& logvar) const override;
  Eigen::MatrixXd decode(const Eigen::MatrixXd& Z) const override;
  Eigen::MatrixXd log_likelihood(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z) const override;
  codemaps::BregmanGenerator generator() const override;
  std::optional<Eigen::MatrixXd> decoder_jacobian(const Eigen::VectorXd& z) const override;

  /// Row n of Z is the latent sample for example n.
  ElboTerms elbo_terms(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z, double beta) const;

  /// Mean over the batch of -(recon - beta * rate) with z = mu + sigma * noise.
  double loss(const Eigen::MatrixXd& X, const Eigen::MatrixXd& noise, double beta) const;
  /// Loss and its gradient with respect to parameters().
  double loss_and_gradient(const Eigen::MatrixXd& X, const Eigen::MatrixXd& noise, double beta,
                           Eigen::VectorXd& grad) const;

  std::size_t parameter_count() const { return enc_.parameter_count() + dec_.parameter_count(); }
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);

  /// Throws InvalidArgument when X does not fit the likelihood: width
  /// mismatch, non-finite values, or (categorical) rows that are not one-hot
  /// per position.
  void check_inputs(const Eigen::MatrixXd& X) const;

 private:
  Eigen::MatrixXd output_probs(const Eigen::MatrixXd& logits) const;
  VaeSpec spec_;
  Mlp enc_;
  Mlp dec_;
};

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 800;
  int batch_size = 0;     // 0: full batch
  double beta = 1.0;
  int warmup_epochs = 0;  // linear beta warmup from 0 when > 0
  std::uint64_t seed = 0;
  int eval_every = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct CurvePoint {
  int epoch = 0;
  double loss = 0.0;
  double recon = 0.0;
  double rate = 0.0;
  int active_units = 0;
};

struct TrainResult {
  VaeModel model;
  std::vector<CurvePoint> curve;
};

/// Adam on the single-sample reparameterized beta-ELBO. Throws
/// NumericalError naming the epoch when the loss becomes non-finite.
TrainResult train(VaeModel model, const Eigen::MatrixXd& X, const TrainConfig& config);

/// Latent coordinates whose encoder-mean variance over X exceeds threshold.
int active_units(const VaeModel& model, const Eigen::MatrixXd& X, double threshold = 0.01);

/// Mean over x of the closed-form rate KL(q(z|x) || N(0, I)).
double mean_rate(const VaeModel& model, const Eigen::MatrixXd& X);

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve);

inline constexpr int kSnapshotVersion = 1;

std::string snapshot_string(const VaeModel& model, const nlohmann::json& training = nlohmann::json::object());
void save_snapshot(const VaeModel& model, const std::string& path,
                   const nlohmann::json& training = nlohmann::json::object());
VaeModel restore_snapshot_string(const std::string& text);
VaeModel restore_snapshot(const std::string& path);

}  // namespace codeaudit::vae
