#include "codeaudit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "codeaudit/util.hpp"

namespace codeaudit::synth {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::continuous: return "continuous";
    case FeatureKind::binary: return "binary";
    case FeatureKind::tokens: return "tokens";
  }
  return "unknown";
}

MatrixXd one_hot(const MatrixXd& tokens, int V) {
  MatrixXd out = MatrixXd::Zero(tokens.rows(), tokens.cols() * V);
  for (Eigen::Index n = 0; n < tokens.rows(); ++n)
    for (Eigen::Index l = 0; l < tokens.cols(); ++l) {
      const int t = static_cast<int>(tokens(n, l));
      if (t < 0 || t >= V) throw InvalidArgument("token outside [0, V)");
      out(n, l * V + t) = 1.0;
    }
  return out;
}

MatrixXd model_inputs(const Dataset& ds) {
  return ds.kind == FeatureKind::tokens ? one_hot(ds.features, ds.vocab) : ds.features;
}

namespace {

// Fisher-Yates with raw engine output so the permutation depends only on the engine.
void shuffle_rows(Dataset& ds, std::mt19937_64& rng) {
  const Eigen::Index N = ds.features.rows();
  for (Eigen::Index i = N - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(i + 1));
    if (i == j) continue;
    ds.features.row(i).swap(ds.features.row(j));
    if (!ds.labels.empty()) std::swap(ds.labels[i], ds.labels[j]);
  }
}

std::vector<std::string> numbered(const std::string& stem, int count) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

double linear_quantile(const std::vector<double>& sorted, double prob) {
  const double pos = prob * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[j] = m(i, j);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

Dataset gen_moons(int N, double noise, std::uint64_t seed) {
  if (N < 2) throw InvalidArgument("gen_moons needs N >= 2");
  if (!(noise >= 0.0)) throw InvalidArgument("gen_moons needs noise >= 0");
  auto rng = stream_rng(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int n_out = N / 2, n_in = N - n_out;
  Dataset ds;
  ds.features.resize(N, 2);
  ds.labels.resize(N);
  auto t_at = [](int i, int n) { return n > 1 ? std::numbers::pi * i / (n - 1) : 0.0; };
  for (int i = 0; i < n_out; ++i) {
    const double t = t_at(i, n_out);
    ds.features.row(i) << std::cos(t), std::sin(t);
    ds.labels[i] = 0;
  }
  for (int i = 0; i < n_in; ++i) {
    const double t = t_at(i, n_in);
    ds.features.row(n_out + i) << 1.0 - std::cos(t), 0.5 - std::sin(t);
    ds.labels[n_out + i] = 1;
  }
  if (noise > 0.0)
    for (int n = 0; n < N; ++n)
      for (int j = 0; j < 2; ++j) ds.features(n, j) += noise * normal(rng);
  shuffle_rows(ds, rng);
  ds.names = {"x0", "x1"};
  ds.meta = {{"kind", "moons"}, {"seed", seed}, {"N", N}, {"noise", noise}};
  return ds;
}

Dataset gen_blobs(int N, const MatrixXd& centers, double sigma, std::uint64_t seed) {
  if (centers.rows() < 1 || centers.cols() < 1) throw InvalidArgument("gen_blobs needs at least one center");
  if (N < 1) throw InvalidArgument("gen_blobs needs N >= 1");
  if (!(sigma >= 0.0)) throw InvalidArgument("gen_blobs needs sigma >= 0");
  auto rng = stream_rng(seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index C = centers.rows(), D = centers.cols();
  Dataset ds;
  ds.features.resize(N, D);
  ds.labels.resize(N);
  for (int n = 0; n < N; ++n) {
    const int c = static_cast<int>(n % C);
    ds.labels[n] = c;
    for (Eigen::Index j = 0; j < D; ++j) ds.features(n, j) = centers(c, j) + sigma * normal(rng);
  }
  shuffle_rows(ds, rng);
  ds.names = numbered("x", static_cast<int>(D));
  ds.meta = {{"kind", "blobs"}, {"seed", seed}, {"N", N}, {"sigma", sigma}, {"centers", matrix_json(centers)}};
  return ds;
}

Dataset blob_preset(const std::string& name, int N, std::uint64_t seed) {
  int D = 0, C = 0, n_default = 0;
  if (name == "wine") D = 13, C = 3, n_default = 178;
  else if (name == "cancer") D = 30, C = 2, n_default = 569;
  else if (name == "digits") D = 64, C = 10, n_default = 1797;
  else throw InvalidArgument("unknown blob preset '" + name + "' (wine, cancer, digits)");
  if (N <= 0) N = n_default;
  auto rng = stream_rng(seed, 2);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd centers(C, D);
  for (int c = 0; c < C; ++c)
    for (int j = 0; j < D; ++j) centers(c, j) = 2.0 * normal(rng);
  Dataset ds = gen_blobs(N, centers, 1.0, seed);
  minmax_scale(ds);
  ds.meta["kind"] = name;
  ds.meta["preset"] = true;
  return ds;
}

std::pair<int, int> lattice_shape(int K) {
  if (K < 1) throw InvalidArgument("lattice needs K >= 1");
  int rows = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(K))));
  while (K % rows != 0) ++rows;
  return {rows, K / rows};
}

int quantile_bin(double v, const std::vector<double>& edges) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
}

Dataset gen_setting1(const Setting1Options& o) {
  if (o.N < 1 || o.K < 1 || o.V < 2 || o.L < 1) throw InvalidArgument("gen_setting1: bad sizes");
  if (!(o.sigma_star2 >= 0.0) || !(o.sigma_tok2 >= 0.0)) throw InvalidArgument("gen_setting1: negative variance");
  if (o.L < 2) throw InvalidArgument("gen_setting1 needs L >= 2 for a 2-column orthonormal basis");
  auto rng = stream_rng(o.seed, 3);
  std::normal_distribution<double> normal(0.0, 1.0);

  const auto [rows, cols] = lattice_shape(o.K);
  MatrixXd means(o.K, 2);
  for (int c = 0; c < o.K; ++c) {
    means(c, 0) = o.spacing * ((c / cols) - 0.5 * (rows - 1));
    means(c, 1) = o.spacing * ((c % cols) - 0.5 * (cols - 1));
  }
  MatrixXd G(o.L, 2);
  for (int i = 0; i < o.L; ++i)
    for (int j = 0; j < 2; ++j) G(i, j) = normal(rng);
  Eigen::HouseholderQR<MatrixXd> qr(G);
  const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(o.L, 2);

  const double s_star = std::sqrt(o.sigma_star2), s_tok = std::sqrt(o.sigma_tok2);
  MatrixXd z(o.N, 2), s(o.N, o.L);
  std::vector<int> comp(o.N);
  std::uniform_int_distribution<int> pick(0, o.K - 1);
  for (int n = 0; n < o.N; ++n) {
    comp[n] = pick(rng);
    for (int j = 0; j < 2; ++j) z(n, j) = means(comp[n], j) + s_star * normal(rng);
    Eigen::Vector2d noisy = z.row(n).transpose();
    if (s_tok > 0.0)
      for (int j = 0; j < 2; ++j) noisy(j) += s_tok * normal(rng);
    s.row(n) = (Q * noisy).transpose();
  }
  std::vector<std::vector<double>> edges(o.L);
  Dataset ds;
  ds.kind = FeatureKind::tokens;
  ds.vocab = o.V;
  ds.positions = o.L;
  ds.features.resize(o.N, o.L);
  ds.labels = comp;
  for (int l = 0; l < o.L; ++l) {
    std::vector<double> col(s.col(l).begin(), s.col(l).end());
    std::sort(col.begin(), col.end());
    for (int k = 1; k < o.V; ++k) edges[l].push_back(linear_quantile(col, static_cast<double>(k) / o.V));
    for (int n = 0; n < o.N; ++n) ds.features(n, l) = quantile_bin(s(n, l), edges[l]);
  }
  ds.names = numbered("t", o.L);
  ds.meta = {{"kind", "setting1"}, {"seed", o.seed},   {"N", o.N},
             {"K", o.K},           {"lattice", {rows, cols}}, {"sigma_star2", o.sigma_star2},
             {"sigma_tok2", o.sigma_tok2}, {"vocab", o.V}, {"positions", o.L},
             {"spacing", o.spacing}, {"means", matrix_json(means)}, {"basis", matrix_json(Q)},
             {"edges", edges},     {"latent", matrix_json(z)}};
  return ds;
}

void minmax_scale(Dataset& ds) {
  if (ds.kind == FeatureKind::tokens) throw InvalidArgument("cannot scale token features");
  std::vector<double> lo, hi;
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
    const double a = ds.features.col(j).minCoeff(), b = ds.features.col(j).maxCoeff();
    lo.push_back(a);
    hi.push_back(b);
    if (b > a) ds.features.col(j) = (ds.features.col(j).array() - a) / (b - a);
    else ds.features.col(j).setZero();
  }
  ds.meta["scaling"] = {{"method", "minmax"}, {"min", lo}, {"max", hi}};
}

void zscore(Dataset& ds) {
  if (ds.kind == FeatureKind::tokens) throw InvalidArgument("cannot scale token features");
  std::vector<double> mean, sd;
  const double N = static_cast<double>(ds.features.rows());
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
    const double m = ds.features.col(j).mean();
    const double v = (ds.features.col(j).array() - m).square().sum() / N;
    const double s = std::sqrt(v);
    mean.push_back(m);
    sd.push_back(s);
    ds.features.col(j) = (ds.features.col(j).array() - m) / (s > 0.0 ? s : 1.0);
  }
  ds.meta["scaling"] = {{"method", "zscore"}, {"mean", mean}, {"sd", sd}};
}

void write_csv(std::ostream& out, const Dataset& ds) {
  const std::string kind = ds.kind == FeatureKind::tokens ? "token"
                           : ds.kind == FeatureKind::binary ? "binary"
                                                            : "continuous";
  const bool has_labels = !ds.labels.empty();
  for (int j = 0; j < ds.D(); ++j) {
    if (j) out << ',';
    out << kind << ':' << (j < static_cast<int>(ds.names.size()) ? ds.names[j] : "x" + std::to_string(j));
  }
  if (has_labels) out << ",label:class";
  out << '\n';
  for (int n = 0; n < ds.N(); ++n) {
    for (int j = 0; j < ds.D(); ++j) {
      if (j) out << ',';
      if (ds.kind == FeatureKind::tokens) out << static_cast<long long>(ds.features(n, j));
      else out << format_double(ds.features(n, j));
    }
    if (has_labels) out << ',' << ds.labels[n];
    out << '\n';
  }
}

namespace {

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string position(const std::string& src, std::size_t line, std::size_t col) {
  return src + ":" + std::to_string(line) + ":" + std::to_string(col) + ": ";
}

}  // namespace

Dataset read_csv(std::istream& in, const std::string& src) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(src + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_cells(line);
  Dataset ds;
  std::string feature_kind;
  int label_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto colon = header[c].find(':');
    if (colon == std::string::npos) throw FormatError(position(src, 1, c + 1) + "header cell lacks 'kind:name'");
    const std::string kind = header[c].substr(0, colon);
    const std::string name = header[c].substr(colon + 1);
    if (kind == "label") {
      if (label_col >= 0) throw FormatError(position(src, 1, c + 1) + "more than one label column");
      label_col = static_cast<int>(c);
      continue;
    }
    if (kind != "continuous" && kind != "binary" && kind != "token")
      throw FormatError(position(src, 1, c + 1) + "unknown column kind '" + kind + "'");
    if (!feature_kind.empty() && feature_kind != kind)
      throw FormatError(position(src, 1, c + 1) + "mixed feature kinds");
    feature_kind = kind;
    ds.names.push_back(name);
  }
  if (ds.names.empty()) throw FormatError(src + ": no feature columns");
  ds.kind = feature_kind == "token" ? FeatureKind::tokens
            : feature_kind == "binary" ? FeatureKind::binary
                                       : FeatureKind::continuous;
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != header.size())
      throw FormatError(position(src, lineno, 1) + "expected " + std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    std::vector<double> row;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[c].size() || !std::isfinite(v))
        throw FormatError(position(src, lineno, c + 1) + "not a finite number: '" + cells[c] + "'");
      const bool integral = static_cast<int>(c) == label_col || ds.kind == FeatureKind::tokens;
      if (integral && (v != std::floor(v) || v < 0))
        throw FormatError(position(src, lineno, c + 1) + "expected a non-negative integer");
      if (ds.kind == FeatureKind::binary && static_cast<int>(c) != label_col && v != 0.0 && v != 1.0)
        throw FormatError(position(src, lineno, c + 1) + "binary column holds a value other than 0/1");
      if (static_cast<int>(c) == label_col) ds.labels.push_back(static_cast<int>(v));
      else row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(src + ": no data rows");
  ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.names.size()));
  for (std::size_t n = 0; n < rows.size(); ++n)
    for (std::size_t j = 0; j < rows[n].size(); ++j) ds.features(n, j) = rows[n][j];
  if (ds.kind == FeatureKind::tokens) {
    ds.positions = ds.D();
    ds.vocab = static_cast<int>(ds.features.maxCoeff()) + 1;
  }
  return ds;
}

void write_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
  write_csv(out, ds);
  nlohmann::json meta = ds.meta;
  meta["feature_kind"] = to_string(ds.kind);
  if (ds.kind == FeatureKind::tokens) {
    meta["vocab"] = ds.vocab;
    meta["positions"] = ds.positions;
  }
  std::ofstream side(path + ".meta.json", std::ios::binary);
  if (!side) throw InvalidArgument("cannot open '" + path + ".meta.json' for writing");
  side << meta.dump(1) << '\n';
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open dataset '" + path + "'");
  Dataset ds = read_csv(in, path);
  const std::string side = path + ".meta.json";
  if (std::filesystem::exists(side)) {
    std::ifstream m(side);
    try {
      ds.meta = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(side + ": " + e.what());
    }
    if (ds.kind == FeatureKind::tokens && ds.meta.contains("vocab")) {
      const int V = ds.meta["vocab"].get<int>();
      if (V < ds.vocab) throw FormatError(side + ": vocab smaller than the largest token");
      ds.vocab = V;
    }
  }
  return ds;
}

}  // namespace codeaudit::synth
