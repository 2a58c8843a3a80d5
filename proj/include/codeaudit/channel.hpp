#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

// Joint encoder/decoder label tables P_ed(i,j), the row-normalized channel
// K_{e->d}(j|i), and their summaries. Labels are 0-based throughout.

namespace codeaudit::channel {

using Label = int;
using LabelPair = std::pair<Label, Label>;

/// K x K probability table over (encoder label, decoder label).
class JointCodeTable {
 public:
  /// Cells must be non-negative and sum to 1 within 1e-12.
  JointCodeTable(Eigen::MatrixXd cells, std::size_t sample_count);

  int K() const { return static_cast<int>(cells_.rows()); }
  double operator()(int i, int j) const { return cells_(i, j); }
  const Eigen::MatrixXd& cells() const { return cells_; }
  std::size_t sample_count() const { return sample_count_; }

  /// Normalizes non-negative weights with positive total.
  static JointCodeTable from_weights(const Eigen::MatrixXd& weights, std::size_t sample_count);

 private:
  Eigen::MatrixXd cells_;
  std::size_t sample_count_;
};

/// Contingency table of observed label pairs.
JointCodeTable table_from_pairs(std::span<const LabelPair> pairs, int K);

struct RowChannel {
  Eigen::MatrixXd matrix;          // each row sums to 1
  std::vector<bool> uniform_fill;  // rows with zero mass, emitted as uniform
};

RowChannel row_normalize(const JointCodeTable& table);

struct ChannelReport {
  int K = 0;
  double agreement = 0.0;
  double interference = 0.0;
  double matched_agreement = 0.0;
  std::vector<int> matched_perm;  // row i matched to column matched_perm[i]
  double r_eff = 0.0;             // I(C_enc; C_dec), nats
  double r_eff_normalized = 0.0;  // r_eff / log K (0 when K == 1)
  double h_enc = 0.0;
  double h_dec = 0.0;
  int active_enc = 0;
  int active_dec = 0;
  double activity_threshold = 0.0;
  std::vector<double> row_entropies;          // entropy of K(.|i); log K for zero rows
  std::vector<double> column_concentrations;  // max_i P(i,j) / P(., j); 0 for empty columns
  Eigen::VectorXd enc_marginal;
  Eigen::VectorXd dec_marginal;
};

inline constexpr double kDefaultActivityThreshold = 1e-6;

ChannelReport summarize(const JointCodeTable& table,
                        double activity_threshold = kDefaultActivityThreshold);

/// Maximum diagonal mass over column permutations. Exhaustive for K <= 8,
/// Hungarian assignment above.
std::pair<double, std::vector<int>> best_matching(const Eigen::MatrixXd& cells);

enum class StressKind {
  identity,
  derangement,
  many_to_one,
  collapse,
  weighted_identity,
  weighted_permutation,
};

StressKind parse_stress_kind(const std::string& name);
std::string to_string(StressKind kind);

struct StressSpec {
  StressKind kind = StressKind::identity;
  int K = 2;
  std::vector<int> perm;        // empty: cyclic shift i -> i+1 mod K
  std::vector<double> weights;  // empty: uniform 1/K
};

/// Analytic stress-test tables (sample_count 0).
JointCodeTable stress_table(const StressSpec& spec);

/// Cyclic derangement i -> (i + 1) mod K.
std::vector<int> cyclic_shift(int K);

/// Ordered (encoder, decoder) labels along a sequence.
using LabeledSequence = std::vector<LabelPair>;

/// Plug-in I(C_enc[t-lag]; C_dec[t] | C_enc[t]) in nats, from the empirical
/// triple distribution over t = lag .. T-1.
double lagged_interference(const LabeledSequence& seq, int lag, int K);

// Serialization.
void write_table_csv(std::ostream& out, const JointCodeTable& table);
JointCodeTable read_table_csv(std::istream& in);
void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m);
nlohmann::json to_json(const ChannelReport& report);

}  // namespace codeaudit::channel
