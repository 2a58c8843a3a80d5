#include "codeaudit/pipeline.hpp"

#include <ostream>

#include "codeaudit/estimators.hpp"
#include "codeaudit/util.hpp"

namespace codeaudit::pipeline {

using Eigen::MatrixXd;

namespace {

nlohmann::json matrix_rows(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) r[static_cast<std::size_t>(c)] = m(i, c);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

CodeMaps fit_code_maps(const LatentModel& model, const MatrixXd& X, const codemaps::GmmOptions& options) {
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  if (options.K > mu.rows())
    throw InvalidArgument("GMM: K = " + std::to_string(options.K) + " exceeds the sample count " +
                          std::to_string(mu.rows()));
  codemaps::GmmSummary gmm = codemaps::fit_gmm(mu, options);
  MatrixXd means(gmm.K(), gmm.dim());
  for (int c = 0; c < gmm.K(); ++c) means.row(c) = gmm.components[c].mean.transpose();
  codemaps::EncoderCodeMap enc(std::move(gmm));
  codemaps::DecoderCodeMap dec(model.decode(means), model.generator());
  return {std::move(enc), std::move(dec)};
}

nlohmann::json to_json(const CodeMaps& maps) {
  return {{"encoder", codemaps::to_json(maps.enc)}, {"decoder", codemaps::to_json(maps.dec)}};
}

CodeMaps code_maps_from_json(const nlohmann::json& j) {
  try {
    return {codemaps::encoder_map_from_json(j.at("encoder")), codemaps::decoder_map_from_json(j.at("decoder"))};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("code-map file: ") + e.what());
  }
}

channel::JointCodeTable sampled_code_table(const LatentModel& model, const MatrixXd& X, const CodeMaps& maps,
                                           int S, std::uint64_t seed, int jobs) {
  if (S < 1) throw InvalidArgument("sampled_code_table needs samples_per_example >= 1");
  const int K = maps.enc.K();
  if (maps.dec.K() != K) throw InvalidArgument("encoder and decoder maps disagree on K");
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  std::vector<MatrixXd> counts(static_cast<std::size_t>(X.rows()), MatrixXd::Zero(K, K));
  parallel_for(static_cast<std::size_t>(X.rows()), jobs, [&](std::size_t n) {
    auto rng = stream_rng(seed, n);
    const auto i = static_cast<Eigen::Index>(n);
    const MatrixXd Z = estimators::sample_posterior(mu.row(i).transpose(), lv.row(i).transpose(), S, rng);
    const auto e = maps.enc.labels(Z);
    const auto d = maps.dec.labels(model.decode(Z));
    for (int s = 0; s < S; ++s) counts[n](e[s], d[s]) += 1.0;
  });
  MatrixXd total = MatrixXd::Zero(K, K);
  for (const auto& c : counts) total += c;
  return channel::JointCodeTable::from_weights(total, static_cast<std::size_t>(X.rows()) * S);
}

LatentSummary latent_summary(const LatentModel& model, const MatrixXd& X, double au_threshold) {
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  LatentSummary s;
  const double N = static_cast<double>(mu.rows());
  for (Eigen::Index j = 0; j < mu.cols(); ++j) {
    const double m = mu.col(j).mean();
    s.active_units += (mu.col(j).array() - m).square().sum() / N > au_threshold;
  }
  s.rate = 0.5 * (mu.array().square() + lv.array().exp() - 1.0 - lv.array()).sum() / N;
  return s;
}

GridAudit grid_audit(const LatentModel& model, const MatrixXd& X, const CodeMaps& maps,
                     const GridAuditOptions& o) {
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  const auto bounds = o.bounds ? *o.bounds : gridaudit::auto_bounds(mu);
  GridAudit a;
  a.grid = gridaudit::build_grid(bounds, std::vector<int>(static_cast<std::size_t>(model.latent_dim()), o.resolution),
                                 o.weighting);
  a.posteriors = gridaudit::grid_posteriors(model, X, a.grid, o.rule, o.jobs);
  a.labels = gridaudit::grid_labels(a.grid, maps.enc, maps.dec, model);
  a.report = gridaudit::audit_exact(a.posteriors, a.labels, maps.enc.K(), o.jobs);
  a.report.A_mu = gridaudit::mean_code_agreement(model, X, maps.enc, maps.dec);
  a.report.grid_weighting = gridaudit::to_string(o.weighting);
  a.channel = channel::summarize(channel::JointCodeTable::from_weights(a.report.table_q, X.rows()));
  a.latent = latent_summary(model, X);
  return a;
}

nlohmann::json to_json(const GridAudit& a) {
  nlohmann::json j = gridaudit::to_json(a.report);
  const auto K_ed = channel::row_normalize(channel::JointCodeTable::from_weights(a.report.table_q, 0));
  j["package"] = {
      {"K_ed", matrix_rows(K_ed.matrix)},
      {"A_q", a.report.A_q},
      {"A_mu", a.report.A_mu},
      {"R_eff", a.channel.r_eff},
      {"R", a.latent.rate},
      {"AU", a.latent.active_units},
  };
  j["channel"] = channel::to_json(a.channel);
  return j;
}

std::vector<SweepRow> sweep_k(const LatentModel& model, const MatrixXd& X, const std::vector<int>& Ks,
                              const codemaps::GmmOptions& gmm, const GridAuditOptions& o) {
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  const auto bounds = o.bounds ? *o.bounds : gridaudit::auto_bounds(mu);
  const auto grid = gridaudit::build_grid(
      bounds, std::vector<int>(static_cast<std::size_t>(model.latent_dim()), o.resolution), o.weighting);
  const auto post = gridaudit::grid_posteriors(model, X, grid, o.rule, o.jobs);
  const LatentSummary latent = latent_summary(model, X);
  std::vector<SweepRow> rows;
  for (int K : Ks) {
    SweepRow row;
    row.K = K;
    row.R = latent.rate;
    row.AU = latent.active_units;
    try {
      codemaps::GmmOptions g = gmm;
      g.K = K;
      const CodeMaps maps = fit_code_maps(model, X, g);
      const auto labels = gridaudit::grid_labels(grid, maps.enc, maps.dec, model);
      const auto rep = gridaudit::audit_exact(post, labels, K, o.jobs);
      const auto table = channel::JointCodeTable::from_weights(rep.table_q, static_cast<std::size_t>(X.rows()));
      row.A_mu = gridaudit::mean_code_agreement(model, X, maps.enc, maps.dec);
      row.A_q = rep.A_q;
      row.R_eff = channel::summarize(table).r_eff;
      row.d_bin = rep.d_bin;
      row.delta_bar = rep.delta_bar;
      row.valid = rep.valid;
      row.K_ed = channel::row_normalize(table).matrix;
      row.ok = true;
    } catch (const InvalidArgument& e) {
      row.failure = std::string("invalid_argument: ") + e.what();
    } catch (const NumericalError& e) {
      row.failure = std::string("numerical: ") + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const SweepRow& r) {
  nlohmann::json j = {{"K", r.K}, {"ok", r.ok}};
  if (!r.ok) {
    j["failure"] = r.failure;
    return j;
  }
  j["A_mu"] = r.A_mu;
  j["A_q"] = r.A_q;
  j["R_eff"] = r.R_eff;
  j["R"] = r.R;
  j["AU"] = r.AU;
  j["d_bin"] = r.d_bin;
  j["delta_bar_G"] = r.delta_bar;
  j["valid"] = r.valid;
  j["K_ed"] = matrix_rows(r.K_ed);
  return j;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "K,ok,A_mu,A_q,R_eff,R,AU,d_bin,delta_bar_G,valid,failure\n";
  for (const auto& r : rows) {
    out << r.K << ',' << (r.ok ? 1 : 0) << ',';
    if (r.ok)
      out << format_double(r.A_mu) << ',' << format_double(r.A_q) << ',' << format_double(r.R_eff) << ','
          << format_double(r.R) << ',' << r.AU << ',' << format_double(r.d_bin) << ',' << format_double(r.delta_bar)
          << ',' << (r.valid ? 1 : 0) << ",\n";
    else
      out << ",,,,,,,,\"" << r.failure << "\"\n";
  }
}

}  // namespace codeaudit::pipeline
