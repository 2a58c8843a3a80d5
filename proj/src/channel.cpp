#include "codeaudit/channel.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

#include "codeaudit/util.hpp"

namespace codeaudit::channel {

JointCodeTable::JointCodeTable(Eigen::MatrixXd cells, std::size_t sample_count)
    : cells_(std::move(cells)), sample_count_(sample_count) {
  if (cells_.rows() < 1 || cells_.rows() != cells_.cols()) {
    throw InvalidArgument("joint table must be K x K with K >= 1");
  }
  if ((cells_.array() < 0.0).any() || !cells_.allFinite()) {
    throw InvalidArgument("joint table cells must be finite and non-negative");
  }
  const double total = cells_.sum();
  if (std::abs(total - 1.0) > 1e-12) {
    throw InvalidArgument("joint table mass must be 1, got " + format_double(total));
  }
}

JointCodeTable JointCodeTable::from_weights(const Eigen::MatrixXd& weights,
                                            std::size_t sample_count) {
  if ((weights.array() < 0.0).any()) throw InvalidArgument("negative table weight");
  const double total = weights.sum();
  if (!(total > 0.0)) throw InvalidArgument("table weights have no mass");
  return JointCodeTable(weights / total, sample_count);
}

JointCodeTable table_from_pairs(std::span<const LabelPair> pairs, int K) {
  if (K < 1) throw InvalidArgument("K must be >= 1");
  if (pairs.empty()) throw InvalidArgument("no label pairs");
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(K, K);
  for (const auto& [i, j] : pairs) {
    if (i < 0 || i >= K || j < 0 || j >= K) {
      throw InvalidArgument("label pair (" + std::to_string(i) + "," + std::to_string(j) +
                            ") outside [0," + std::to_string(K) + ")");
    }
    counts(i, j) += 1.0;
  }
  return JointCodeTable::from_weights(counts, pairs.size());
}

RowChannel row_normalize(const JointCodeTable& table) {
  const int K = table.K();
  RowChannel out{Eigen::MatrixXd(K, K), std::vector<bool>(K, false)};
  for (int i = 0; i < K; ++i) {
    const double mass = table.cells().row(i).sum();
    if (mass > 0.0) {
      out.matrix.row(i) = table.cells().row(i) / mass;
    } else {
      out.matrix.row(i).setConstant(1.0 / K);
      out.uniform_fill[i] = true;
    }
  }
  return out;
}

namespace {

double entropy(const Eigen::VectorXd& p) {
  std::vector<double> terms;
  terms.reserve(p.size());
  for (double v : p) {
    if (v > 0.0) terms.push_back(-v * std::log(v));
  }
  return order_invariant_sum(std::move(terms));
}

std::pair<double, std::vector<int>> exhaustive_matching(const Eigen::MatrixXd& cells) {
  const int K = static_cast<int>(cells.rows());
  std::vector<int> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_val = -1.0;
  do {
    double s = 0.0;
    for (int i = 0; i < K; ++i) s += cells(i, perm[i]);
    if (s > best_val) {
      best_val = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_val, best};
}

// Shortest augmenting path assignment on cost = -cells (minimization).
std::pair<double, std::vector<int>> hungarian_matching(const Eigen::MatrixXd& cells) {
  const int n = static_cast<int>(cells.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -cells(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> perm(n);
  for (int j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += cells(i, perm[i]);
  return {s, perm};
}

}  // namespace

std::pair<double, std::vector<int>> best_matching(const Eigen::MatrixXd& cells) {
  if (cells.rows() != cells.cols()) throw InvalidArgument("matching needs a square table");
  if (cells.rows() <= 8) return exhaustive_matching(cells);
  return hungarian_matching(cells);
}

ChannelReport summarize(const JointCodeTable& table, double activity_threshold) {
  const int K = table.K();
  const Eigen::MatrixXd& P = table.cells();
  ChannelReport r;
  r.K = K;
  r.activity_threshold = activity_threshold;
  // Ratio form keeps pure-diagonal and pure-off-diagonal tables exactly at 1 and 0.
  const double diag = P.trace();
  const double off_mass = (P - Eigen::MatrixXd(P.diagonal().asDiagonal())).sum();
  r.agreement = diag / (diag + off_mass);
  r.interference = off_mass / (diag + off_mass);
  std::tie(r.matched_agreement, r.matched_perm) = best_matching(P);
  // Exhaustive search can land one ulp below the raw diagonal.
  r.matched_agreement = std::max(r.matched_agreement, r.agreement);

  r.enc_marginal = P.rowwise().sum();
  r.dec_marginal = P.colwise().sum().transpose();
  r.h_enc = entropy(r.enc_marginal);
  r.h_dec = entropy(r.dec_marginal);

  std::vector<double> mi_terms;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      const double v = P(i, j);
      if (v > 0.0) {
        mi_terms.push_back(
            v * (std::log(v) - std::log(r.enc_marginal(i)) - std::log(r.dec_marginal(j))));
      }
    }
  }
  r.r_eff = std::clamp(order_invariant_sum(std::move(mi_terms)), 0.0, std::min(r.h_enc, r.h_dec));
  r.r_eff_normalized = K > 1 ? r.r_eff / std::log(static_cast<double>(K)) : 0.0;

  const double total = P.sum();
  for (int i = 0; i < K; ++i) {
    if (r.enc_marginal(i) > activity_threshold * total) ++r.active_enc;
    if (r.dec_marginal(i) > activity_threshold * total) ++r.active_dec;
  }

  const RowChannel ch = row_normalize(table);
  r.row_entropies.resize(K);
  for (int i = 0; i < K; ++i) r.row_entropies[i] = entropy(ch.matrix.row(i).transpose());
  r.column_concentrations.resize(K);
  for (int j = 0; j < K; ++j) {
    const double col = r.dec_marginal(j);
    r.column_concentrations[j] = col > 0.0 ? P.col(j).maxCoeff() / col : 0.0;
  }
  return r;
}

StressKind parse_stress_kind(const std::string& name) {
  static const std::map<std::string, StressKind> kinds = {
      {"identity", StressKind::identity},
      {"derangement", StressKind::derangement},
      {"many_to_one", StressKind::many_to_one},
      {"collapse", StressKind::collapse},
      {"weighted_identity", StressKind::weighted_identity},
      {"weighted_permutation", StressKind::weighted_permutation},
  };
  auto it = kinds.find(name);
  if (it == kinds.end()) throw InvalidArgument("unknown stress kind '" + name + "'");
  return it->second;
}

std::string to_string(StressKind kind) {
  switch (kind) {
    case StressKind::identity: return "identity";
    case StressKind::derangement: return "derangement";
    case StressKind::many_to_one: return "many_to_one";
    case StressKind::collapse: return "collapse";
    case StressKind::weighted_identity: return "weighted_identity";
    case StressKind::weighted_permutation: return "weighted_permutation";
  }
  return "unknown";
}

std::vector<int> cyclic_shift(int K) {
  std::vector<int> perm(K);
  for (int i = 0; i < K; ++i) perm[i] = (i + 1) % K;
  return perm;
}

namespace {

void check_permutation(const std::vector<int>& perm, int K, bool derangement) {
  if (static_cast<int>(perm.size()) != K) throw InvalidArgument("permutation has wrong length");
  std::vector<bool> seen(K, false);
  for (int i = 0; i < K; ++i) {
    const int v = perm[i];
    if (v < 0 || v >= K || seen[v]) throw InvalidArgument("not a permutation");
    seen[v] = true;
    if (derangement && v == i) {
      throw InvalidArgument("permutation has fixed point " + std::to_string(i) +
                            "; a derangement is required");
    }
  }
}

std::vector<double> checked_weights(const std::vector<double>& w, int K) {
  if (w.empty()) return std::vector<double>(K, 1.0 / K);
  if (static_cast<int>(w.size()) != K) throw InvalidArgument("weight vector has wrong length");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw InvalidArgument("weights must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("weights must sum to 1");
  return w;
}

}  // namespace

JointCodeTable stress_table(const StressSpec& spec) {
  const int K = spec.K;
  if (K < 1) throw InvalidArgument("K must be >= 1");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(K, K);
  const std::vector<int> perm = spec.perm.empty() ? cyclic_shift(K) : spec.perm;
  switch (spec.kind) {
    case StressKind::identity:
      for (int i = 0; i < K; ++i) P(i, i) = 1.0 / K;
      break;
    case StressKind::derangement:
      if (K < 2) throw InvalidArgument("derangement needs K >= 2");
      check_permutation(perm, K, true);
      for (int i = 0; i < K; ++i) P(i, perm[i]) = 1.0 / K;
      break;
    case StressKind::many_to_one:
      for (int i = 0; i < K; ++i) P(i, 0) = 1.0 / K;
      break;
    case StressKind::collapse:
      P(0, 0) = 1.0;
      break;
    case StressKind::weighted_identity: {
      const auto w = checked_weights(spec.weights, K);
      for (int i = 0; i < K; ++i) P(i, i) = w[i];
      break;
    }
    case StressKind::weighted_permutation: {
      const auto w = checked_weights(spec.weights, K);
      check_permutation(perm, K, false);
      for (int i = 0; i < K; ++i) P(i, perm[i]) = w[i];
      break;
    }
  }
  return JointCodeTable(P, 0);
}

double lagged_interference(const LabeledSequence& seq, int lag, int K) {
  if (lag < 1) throw InvalidArgument("lag must be >= 1");
  if (static_cast<int>(seq.size()) <= lag) throw InvalidArgument("sequence shorter than lag");
  // Triple (a, b, c) = (enc[t-lag], dec[t], enc[t]).
  std::vector<double> abc(static_cast<std::size_t>(K) * K * K, 0.0);
  for (std::size_t t = lag; t < seq.size(); ++t) {
    const int a = seq[t - lag].first;
    const int b = seq[t].second;
    const int c = seq[t].first;
    for (int v : {a, b, c}) {
      if (v < 0 || v >= K) throw InvalidArgument("label outside [0,K)");
    }
    abc[(static_cast<std::size_t>(a) * K + b) * K + c] += 1.0;
  }
  const double n = static_cast<double>(seq.size() - lag);
  std::vector<double> ac(K * K, 0.0), bc(K * K, 0.0), cc(K, 0.0);
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b)
      for (int c = 0; c < K; ++c) {
        const double v = abc[(static_cast<std::size_t>(a) * K + b) * K + c];
        ac[a * K + c] += v;
        bc[b * K + c] += v;
        cc[c] += v;
      }
  double cmi = 0.0;
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b)
      for (int c = 0; c < K; ++c) {
        const double v = abc[(static_cast<std::size_t>(a) * K + b) * K + c];
        if (v == 0.0) continue;
        cmi += (v / n) * std::log((v * cc[c]) / (ac[a * K + c] * bc[b * K + c]));
      }
  return std::max(0.0, cmi);
}

void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

void write_table_csv(std::ostream& out, const JointCodeTable& table) {
  out << table.K() << '\n';
  write_matrix_csv(out, table.cells());
}

JointCodeTable read_table_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("table csv: missing K header");
  int K = 0;
  try {
    K = std::stoi(line);
  } catch (const std::exception&) {
    throw FormatError("table csv: bad K header '" + line + "'");
  }
  if (K < 1) throw FormatError("table csv: K must be >= 1");
  Eigen::MatrixXd cells(K, K);
  for (int i = 0; i < K; ++i) {
    if (!std::getline(in, line)) throw FormatError("table csv: missing row " + std::to_string(i));
    std::stringstream ss(line);
    std::string cell;
    for (int j = 0; j < K; ++j) {
      if (!std::getline(ss, cell, ',')) {
        throw FormatError("table csv: row " + std::to_string(i) + " has too few cells");
      }
      try {
        cells(i, j) = std::stod(cell);
      } catch (const std::exception&) {
        throw FormatError("table csv: bad cell at row " + std::to_string(i) + " col " +
                          std::to_string(j));
      }
    }
  }
  return JointCodeTable(cells, 0);
}

nlohmann::json to_json(const ChannelReport& r) {
  nlohmann::json j;
  j["K"] = r.K;
  j["A"] = r.agreement;
  j["A_matched"] = r.matched_agreement;
  j["perm"] = r.matched_perm;
  j["R_eff"] = r.r_eff;
  j["R_eff_norm"] = r.r_eff_normalized;
  j["H_enc"] = r.h_enc;
  j["H_dec"] = r.h_dec;
  j["active_enc"] = r.active_enc;
  j["active_dec"] = r.active_dec;
  j["interference"] = r.interference;
  j["activity_threshold"] = r.activity_threshold;
  j["row_entropies"] = r.row_entropies;
  j["column_concentrations"] = r.column_concentrations;
  j["enc_marginal"] = std::vector<double>(r.enc_marginal.begin(), r.enc_marginal.end());
  j["dec_marginal"] = std::vector<double>(r.dec_marginal.begin(), r.dec_marginal.end());
  return j;
}

}  // namespace codeaudit::channel
