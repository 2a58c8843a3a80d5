#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "codeaudit/channel.hpp"
#include "codeaudit/codemaps.hpp"
#include "codeaudit/gmm.hpp"
#include "codeaudit/grid.hpp"
#include "codeaudit/gridaudit.hpp"
#include "codeaudit/latent_model.hpp"
#include "json.hpp"

// Glue shared by the command-line tool and the acceptance runner.

namespace codeaudit::pipeline {

struct CodeMaps {
  codemaps::EncoderCodeMap enc;
  codemaps::DecoderCodeMap dec;
};

/// GMM on encoder means; decoder prototypes are decoder outputs at the
/// component means.
CodeMaps fit_code_maps(const LatentModel& model, const Eigen::MatrixXd& X, const codemaps::GmmOptions& options);

nlohmann::json to_json(const CodeMaps& maps);

/// Label-pair table from S draws z ~ q(.|x) per example. Uses the per-example
/// streams of estimators::mc_agreement, so its trace equals that estimate.
channel::JointCodeTable sampled_code_table(const LatentModel& model, const Eigen::MatrixXd& X, const CodeMaps& maps,
                                           int samples_per_example, std::uint64_t seed, int jobs = 1);
CodeMaps code_maps_from_json(const nlohmann::json& j);

/// Encoder-side summary statistics that travel with every agreement number.
struct LatentSummary {
  int active_units = 0;
  double rate = 0.0;  // mean KL(q(z|x) || N(0, I))
};

LatentSummary latent_summary(const LatentModel& model, const Eigen::MatrixXd& X, double au_threshold = 0.01);

struct GridAuditOptions {
  int resolution = 41;
  gridaudit::GridWeighting weighting = gridaudit::GridWeighting::prior;
  gridaudit::QuadratureRule rule = gridaudit::QuadratureRule::volume;
  std::optional<std::vector<gridaudit::Interval>> bounds;  // default: auto_bounds of encoder means
  int jobs = 1;
};

struct GridAudit {
  gridaudit::LatentGrid grid;
  gridaudit::GridPosteriorSet posteriors;
  gridaudit::GridLabels labels;
  gridaudit::AuditReport report;  // A_mu filled in
  channel::ChannelReport channel;  // summary of table_q
  LatentSummary latent;
};

GridAudit grid_audit(const LatentModel& model, const Eigen::MatrixXd& X, const CodeMaps& maps,
                     const GridAuditOptions& options);

/// Report JSON: the audit fields plus the package {K_e->d, A, R_eff, R, AU}.
nlohmann::json to_json(const GridAudit& audit);

struct SweepRow {
  int K = 0;
  bool ok = false;
  std::string failure;  // failure code and message when !ok
  double A_mu = 0.0;
  double A_q = 0.0;
  double R_eff = 0.0;
  double R = 0.0;
  int AU = 0;
  double d_bin = 0.0;
  double delta_bar = 0.0;
  bool valid = false;
  Eigen::MatrixXd K_ed;
};

/// Refits both code maps for every K on one shared grid. A K whose fit
/// fails keeps its row with a failure code.
std::vector<SweepRow> sweep_k(const LatentModel& model, const Eigen::MatrixXd& X, const std::vector<int>& Ks,
                              const codemaps::GmmOptions& gmm, const GridAuditOptions& options);

nlohmann::json to_json(const SweepRow& row);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace codeaudit::pipeline
