#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

// Deterministic synthetic datasets and a small CSV format.
//
// CSV layout: a header row of `kind:name` cells followed by numeric rows.
// Column kinds are continuous, binary, token and label; at most one label
// column. Tokens are integers in [0, V). Generator metadata goes to a
// sidecar `<file>.meta.json`.

namespace codeaudit::synth {

enum class FeatureKind { continuous, binary, tokens };

std::string to_string(FeatureKind k);

struct Dataset {
  Eigen::MatrixXd features;  // N x D, or N x L token indices
  std::vector<int> labels;   // empty when absent
  FeatureKind kind = FeatureKind::continuous;
  int vocab = 0;      // tokens only
  int positions = 0;  // tokens only
  std::vector<std::string> names;
  nlohmann::json meta = nlohmann::json::object();

  int N() const { return static_cast<int>(features.rows()); }
  int D() const { return static_cast<int>(features.cols()); }
};

/// Model inputs: features for continuous/binary data, one-hot (N x L*V) for tokens.
Eigen::MatrixXd model_inputs(const Dataset& ds);
Eigen::MatrixXd one_hot(const Eigen::MatrixXd& tokens, int vocab);

/// Two interleaved half-circles: outer (cos t, sin t), inner
/// (1 - cos t, 0.5 - sin t), t on an even grid over [0, pi], plus N(0, noise^2)
/// jitter; rows shuffled. Outer moon gets label 0 and floor(N/2) points.
Dataset gen_moons(int N, double noise, std::uint64_t seed);

/// Isotropic Gaussian blobs; rows of `centers` are the means. Points are
/// assigned to centers round-robin, then shuffled.
Dataset gen_blobs(int N, const Eigen::MatrixXd& centers, double sigma, std::uint64_t seed);

/// Blob stand-ins at tabular-benchmark dimensions: "wine" (13-D, 3 classes),
/// "cancer" (30-D, 2 classes), "digits" (64-D, 10 classes). N <= 0 uses the
/// benchmark's own size (178, 569, 1797). Features are min-max scaled.
Dataset blob_preset(const std::string& name, int N, std::uint64_t seed);

struct Setting1Options {
  int N = 1797;
  int K = 10;
  double sigma_star2 = 0.04;
  double sigma_tok2 = 0.01;
  int V = 16;
  int L = 8;
  double spacing = 1.0;
  std::uint64_t seed = 0;
};

/// Lattice layout for K components: the most square rows x cols with
/// rows * cols == K (10 -> 5 x 2, 9 -> 3 x 3).
std::pair<int, int> lattice_shape(int K);

/// GMM-token data: z* from a lattice GMM in R^2, tokens are uniform-quantile
/// bins of Q (z* + eta) for an L x 2 basis Q with orthonormal columns.
/// Basis, quantile edges and the latent draws are stored in `meta`.
Dataset gen_setting1(const Setting1Options& opt);

/// Token for value v given ascending interior edges: number of edges <= v.
int quantile_bin(double v, const std::vector<double>& edges);

void minmax_scale(Dataset& ds);
void zscore(Dataset& ds);

void write_csv(std::ostream& out, const Dataset& ds);
Dataset read_csv(std::istream& in, const std::string& source_name = "<stream>");

/// File helpers; write_dataset also writes the sidecar.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace codeaudit::synth
