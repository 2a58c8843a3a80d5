#include "codeaudit/vae.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "codeaudit/util.hpp"

namespace codeaudit::vae {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(Likelihood l) { return l == Likelihood::bernoulli ? "bernoulli" : "categorical"; }

namespace {

void validate_spec(const VaeSpec& s) {
  if (s.input_dim < 1 || s.latent_dim < 1) throw InvalidArgument("VAE needs positive input and latent sizes");
  if (!(s.beta >= 0.0)) throw InvalidArgument("VAE beta must be >= 0");
  if (!(s.epsilon > 0.0 && s.epsilon < 0.5)) throw InvalidArgument("VAE epsilon outside (0, 0.5)");
  if (s.likelihood == Likelihood::categorical &&
      (s.vocab < 2 || s.positions < 1 || s.vocab * s.positions != s.input_dim))
    throw InvalidArgument("categorical VAE needs vocab >= 2 and positions * vocab == input_dim");
}

std::vector<int> layer_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// Softmax of each V-wide block of a row-major logits row.
MatrixXd block_softmax(const MatrixXd& A, int V) {
  MatrixXd P(A.rows(), A.cols());
  const Eigen::Index L = A.cols() / V;
  for (Eigen::Index n = 0; n < A.rows(); ++n)
    for (Eigen::Index l = 0; l < L; ++l) {
      const auto blk = A.row(n).segment(l * V, V);
      const double m = blk.maxCoeff();
      const Eigen::RowVectorXd e = (blk.array() - m).exp();
      P.row(n).segment(l * V, V) = e / e.sum();
    }
  return P;
}

struct BatchEval {
  double loss = 0.0;
  double recon = 0.0;
  double rate = 0.0;
};

}  // namespace

VaeModel::VaeModel(const VaeSpec& spec, std::uint64_t seed) : spec_(spec) {
  validate_spec(spec_);
  auto rng = stream_rng(seed, 0x5EED);
  enc_ = Mlp(layer_sizes(spec_.input_dim, spec_.hidden, 2 * spec_.latent_dim), rng);
  dec_ = Mlp(layer_sizes(spec_.latent_dim, spec_.hidden, spec_.input_dim), rng);
}

VaeModel::VaeModel(const VaeSpec& spec, Mlp encoder, Mlp decoder)
    : spec_(spec), enc_(std::move(encoder)), dec_(std::move(decoder)) {
  validate_spec(spec_);
  if (enc_.input_dim() != spec_.input_dim || enc_.output_dim() != 2 * spec_.latent_dim ||
      dec_.input_dim() != spec_.latent_dim || dec_.output_dim() != spec_.input_dim)
    throw InvalidArgument("VAE layer shapes do not match the model configuration");
}

void VaeModel::encode(const MatrixXd& X, MatrixXd& mu, MatrixXd& logvar) const {
  const MatrixXd out = enc_.forward(X);
  mu = out.leftCols(spec_.latent_dim);
  logvar = out.rightCols(spec_.latent_dim);
}

MatrixXd VaeModel::output_probs(const MatrixXd& A) const {
  MatrixXd P;
  if (spec_.likelihood == Likelihood::bernoulli) {
    P = A.unaryExpr([](double t) { return sigmoid(t); });
  } else {
    P = block_softmax(A, spec_.vocab);
  }
  return P.cwiseMax(spec_.epsilon).cwiseMin(1.0 - spec_.epsilon);
}

MatrixXd VaeModel::decode(const MatrixXd& Z) const { return output_probs(dec_.forward(Z)); }

MatrixXd VaeModel::log_likelihood(const MatrixXd& X, const MatrixXd& Z) const {
  if (X.cols() != spec_.input_dim) throw InvalidArgument("VAE input width mismatch");
  const MatrixXd P = decode(Z);
  const MatrixXd logP = P.array().log();
  if (spec_.likelihood == Likelihood::categorical) return X * logP.transpose();
  const MatrixXd log1mP = (1.0 - P.array()).log();
  return X * logP.transpose() + (1.0 - X.array()).matrix() * log1mP.transpose();
}

codemaps::BregmanGenerator VaeModel::generator() const {
  return spec_.likelihood == Likelihood::bernoulli
             ? codemaps::BregmanGenerator::bernoulli()
             : codemaps::BregmanGenerator::categorical(spec_.positions, spec_.vocab);
}

std::optional<MatrixXd> VaeModel::decoder_jacobian(const VectorXd& z) const {
  const MatrixXd Jl = dec_.jacobian(z);  // d logits / dz
  const VectorXd a = dec_.forward(z.transpose()).row(0).transpose();
  const double eps = spec_.epsilon;
  MatrixXd J(Jl.rows(), Jl.cols());
  if (spec_.likelihood == Likelihood::bernoulli) {
    for (Eigen::Index k = 0; k < a.size(); ++k) {
      const double s = sigmoid(a(k));
      const bool clipped = s < eps || s > 1.0 - eps;
      J.row(k) = clipped ? Eigen::RowVectorXd::Zero(Jl.cols()) : Eigen::RowVectorXd(s * (1.0 - s) * Jl.row(k));
    }
    return J;
  }
  const int V = spec_.vocab;
  const MatrixXd P = block_softmax(a.transpose(), V);
  for (int l = 0; l < spec_.positions; ++l) {
    const VectorXd s = P.row(0).segment(l * V, V).transpose();
    MatrixXd S = MatrixXd(s.asDiagonal()) - s * s.transpose();
    for (int v = 0; v < V; ++v)
      if (s(v) < eps || s(v) > 1.0 - eps) S.row(v).setZero();
    J.middleRows(l * V, V) = S * Jl.middleRows(l * V, V);
  }
  return J;
}

void VaeModel::check_inputs(const MatrixXd& X) const {
  if (X.cols() != spec_.input_dim)
    throw InvalidArgument("data width " + std::to_string(X.cols()) + " != model input width " +
                          std::to_string(spec_.input_dim));
  if (!X.allFinite()) throw InvalidArgument("data holds non-finite values");
  if (spec_.likelihood != Likelihood::categorical) return;
  const int V = spec_.vocab;
  for (Eigen::Index n = 0; n < X.rows(); ++n)
    for (int l = 0; l < spec_.positions; ++l) {
      const auto blk = X.row(n).segment(l * V, V);
      const bool binary = ((blk.array() == 0.0) || (blk.array() == 1.0)).all();
      if (!binary || blk.sum() != 1.0)
        throw InvalidArgument("categorical data must be one-hot per position (row " + std::to_string(n) + ")");
    }
}

ElboTerms VaeModel::elbo_terms(const MatrixXd& X, const MatrixXd& Z, double beta) const {
  if (Z.rows() != X.rows() || Z.cols() != spec_.latent_dim) throw InvalidArgument("elbo_terms: shape mismatch");
  MatrixXd mu, lv;
  encode(X, mu, lv);
  const MatrixXd P = decode(Z);
  ElboTerms t;
  if (spec_.likelihood == Likelihood::categorical) {
    t.recon = (X.array() * P.array().log()).rowwise().sum();
  } else {
    t.recon = (X.array() * P.array().log() + (1.0 - X.array()) * (1.0 - P.array()).log()).rowwise().sum();
  }
  t.rate = 0.5 * (mu.array().square() + lv.array().exp() - 1.0 - lv.array()).rowwise().sum();
  t.elbo = t.recon - beta * t.rate;
  return t;
}

namespace {

BatchEval evaluate(const VaeModel& m, const Mlp& enc, const Mlp& dec, const MatrixXd& X, const MatrixXd& noise,
                   double beta, VectorXd* grad) {
  const VaeSpec& spec = m.spec();
  const int d = spec.latent_dim;
  const double N = static_cast<double>(X.rows());
  if (noise.rows() != X.rows() || noise.cols() != d) throw InvalidArgument("noise shape mismatch");
  Mlp::Cache ec, dc;
  const MatrixXd E = enc.forward(X, grad ? &ec : nullptr);
  const MatrixXd mu = E.leftCols(d), lv = E.rightCols(d);
  const MatrixXd sd = (0.5 * lv.array()).exp();
  const MatrixXd Z = mu + sd.cwiseProduct(noise);
  const MatrixXd A = dec.forward(Z, grad ? &dc : nullptr);
  const double eps = spec.epsilon;

  MatrixXd P;
  if (spec.likelihood == Likelihood::bernoulli) P = A.unaryExpr([](double t) { return sigmoid(t); });
  else P = block_softmax(A, spec.vocab);
  const MatrixXd Pc = P.cwiseMax(eps).cwiseMin(1.0 - eps);

  double recon = 0.0;
  if (spec.likelihood == Likelihood::categorical) recon = (X.array() * Pc.array().log()).sum();
  else recon = (X.array() * Pc.array().log() + (1.0 - X.array()) * (1.0 - Pc.array()).log()).sum();
  const double rate = 0.5 * (mu.array().square() + lv.array().exp() - 1.0 - lv.array()).sum();
  BatchEval ev;
  ev.recon = recon / N;
  ev.rate = rate / N;
  ev.loss = -ev.recon + beta * ev.rate;
  if (!grad) return ev;

  // dLoss / dlogits, already divided by N.
  MatrixXd dA(A.rows(), A.cols());
  if (spec.likelihood == Likelihood::bernoulli) {
    for (Eigen::Index n = 0; n < A.rows(); ++n)
      for (Eigen::Index k = 0; k < A.cols(); ++k) {
        const double s = P(n, k);
        const bool clipped = s < eps || s > 1.0 - eps;
        dA(n, k) = clipped ? 0.0 : (s - X(n, k)) / N;
      }
  } else {
    const int V = spec.vocab;
    for (Eigen::Index n = 0; n < A.rows(); ++n)
      for (int l = 0; l < spec.positions; ++l) {
        double cs = 0.0;
        std::vector<double> c(V);
        for (int v = 0; v < V; ++v) {
          const double s = P(n, l * V + v);
          const bool clipped = s < eps || s > 1.0 - eps;
          c[v] = clipped ? 0.0 : X(n, l * V + v) / s;
          cs += c[v] * s;
        }
        for (int u = 0; u < V; ++u) {
          const double s = P(n, l * V + u);
          dA(n, l * V + u) = -(c[u] * s - s * cs) / N;
        }
      }
  }
  auto dgrads = dec.zero_like();
  const MatrixXd dZ = dec.backward(dc, dA, dgrads);
  MatrixXd dE(X.rows(), 2 * d);
  dE.leftCols(d) = dZ + (beta / N) * mu;
  dE.rightCols(d) = (dZ.array() * 0.5 * sd.array() * noise.array() + (beta / N) * 0.5 * (lv.array().exp() - 1.0)).matrix();
  auto egrads = enc.zero_like();
  enc.backward(ec, dE, egrads);
  grad->resize(static_cast<Eigen::Index>(enc.parameter_count() + dec.parameter_count()));
  std::size_t off = 0;
  flatten_grads(egrads, *grad, off);
  flatten_grads(dgrads, *grad, off);
  return ev;
}

}  // namespace

double VaeModel::loss(const MatrixXd& X, const MatrixXd& noise, double beta) const {
  return evaluate(*this, enc_, dec_, X, noise, beta, nullptr).loss;
}

double VaeModel::loss_and_gradient(const MatrixXd& X, const MatrixXd& noise, double beta, VectorXd& grad) const {
  return evaluate(*this, enc_, dec_, X, noise, beta, &grad).loss;
}

VectorXd VaeModel::parameters() const {
  VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  std::size_t off = 0;
  enc_.flatten_into(theta, off);
  dec_.flatten_into(theta, off);
  return theta;
}

void VaeModel::set_parameters(const VectorXd& theta) {
  if (static_cast<std::size_t>(theta.size()) != parameter_count()) throw InvalidArgument("parameter vector size mismatch");
  std::size_t off = 0;
  enc_.assign_from(theta, off);
  dec_.assign_from(theta, off);
}

int active_units(const VaeModel& model, const MatrixXd& X, double threshold) {
  if (X.rows() == 0) throw InvalidArgument("active_units: no data");
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  int au = 0;
  for (Eigen::Index j = 0; j < mu.cols(); ++j) {
    const double m = mu.col(j).mean();
    const double var = (mu.col(j).array() - m).square().sum() / static_cast<double>(mu.rows());
    au += var > threshold;
  }
  return au;
}

double mean_rate(const VaeModel& model, const MatrixXd& X) {
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  return 0.5 * (mu.array().square() + lv.array().exp() - 1.0 - lv.array()).sum() / static_cast<double>(X.rows());
}

TrainResult train(VaeModel model, const MatrixXd& X, const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0)) throw InvalidArgument("learning rate must be >= 0");
  if (cfg.epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (X.rows() < 1) throw InvalidArgument("training data is empty");
  model.check_inputs(X);
  const int d = model.latent_dim();
  const Eigen::Index N = X.rows();
  const Eigen::Index B = cfg.batch_size > 0 ? std::min<Eigen::Index>(cfg.batch_size, N) : N;
  auto rng = stream_rng(cfg.seed, 0xA0A0);
  std::normal_distribution<double> normal(0.0, 1.0);

  VectorXd theta = model.parameters();
  VectorXd m = VectorXd::Zero(theta.size()), v = VectorXd::Zero(theta.size());
  double b1t = 1.0, b2t = 1.0;
  std::vector<Eigen::Index> order(N);
  std::iota(order.begin(), order.end(), 0);
  TrainResult out{model, {}};
  const int eval_every = std::max(1, cfg.eval_every);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double beta =
        cfg.warmup_epochs > 0 ? cfg.beta * std::min(1.0, static_cast<double>(epoch + 1) / cfg.warmup_epochs) : cfg.beta;
    if (B < N)
      for (Eigen::Index i = N - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(i + 1))]);
    double epoch_loss = 0.0, epoch_recon = 0.0, epoch_rate = 0.0;
    for (Eigen::Index start = 0; start < N; start += B) {
      const Eigen::Index count = std::min(B, N - start);
      MatrixXd Xb(count, X.cols());
      if (B == N) Xb = X;
      else
        for (Eigen::Index r = 0; r < count; ++r) Xb.row(r) = X.row(order[start + r]);
      MatrixXd noise(count, d);
      for (Eigen::Index r = 0; r < count; ++r)
        for (int j = 0; j < d; ++j) noise(r, j) = normal(rng);
      VectorXd g;
      const BatchEval ev = evaluate(model, model.encoder(), model.decoder(), Xb, noise, beta, &g);
      if (!std::isfinite(ev.loss) || !g.allFinite())
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      const double w = static_cast<double>(count) / static_cast<double>(N);
      epoch_loss += w * ev.loss;
      epoch_recon += w * ev.recon;
      epoch_rate += w * ev.rate;
      b1t *= cfg.adam_beta1;
      b2t *= cfg.adam_beta2;
      m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
      v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
      const VectorXd mhat = m / (1.0 - b1t);
      const VectorXd vhat = v / (1.0 - b2t);
      theta -= (cfg.lr * mhat.array() / (vhat.array().sqrt() + cfg.adam_eps)).matrix();
      model.set_parameters(theta);
    }
    if (epoch % eval_every == 0 || epoch + 1 == cfg.epochs) {
      out.curve.push_back({epoch, epoch_loss, epoch_recon, epoch_rate, active_units(model, X)});
    }
  }
  out.model = std::move(model);
  return out;
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "epoch,loss,recon,rate,AU\n";
  for (const auto& c : curve)
    out << c.epoch << ',' << format_double(c.loss) << ',' << format_double(c.recon) << ','
        << format_double(c.rate) << ',' << c.active_units << '\n';
}

// ---------------------------------------------------------------------------
// Snapshots: JSON header with little-endian f64 blocks in base64.

namespace {

void append_le(std::vector<std::uint8_t>& bytes, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

std::vector<std::uint8_t> matrix_bytes(const MatrixXd& W) {
  std::vector<std::uint8_t> b;
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c) append_le(b, W(r, c));
  return b;
}

std::vector<double> decode_block(const std::string& text, std::size_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != expected * 8) throw FormatError("snapshot: block size mismatch");
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t u = 0;
    for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(bytes[i * 8 + k]) << (8 * k);
    out[i] = std::bit_cast<double>(u);
  }
  return out;
}

nlohmann::json net_json(const Mlp& net, std::vector<std::uint8_t>& all) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    const auto wb = matrix_bytes(l.W);
    const auto bb = matrix_bytes(l.b);
    all.insert(all.end(), wb.begin(), wb.end());
    all.insert(all.end(), bb.begin(), bb.end());
    layers.push_back({{"rows", l.W.rows()}, {"cols", l.W.cols()}, {"W", base64_encode(wb)}, {"b", base64_encode(bb)}});
  }
  return layers;
}

Mlp net_from_json(const nlohmann::json& j, std::vector<std::uint8_t>& all) {
  std::vector<Dense> layers;
  for (const auto& lj : j) {
    const auto rows = lj.at("rows").get<Eigen::Index>(), cols = lj.at("cols").get<Eigen::Index>();
    if (rows < 1 || cols < 1) throw FormatError("snapshot: bad layer shape");
    const auto w = decode_block(lj.at("W").get<std::string>(), static_cast<std::size_t>(rows * cols));
    const auto b = decode_block(lj.at("b").get<std::string>(), static_cast<std::size_t>(rows));
    Dense d{MatrixXd(rows, cols), VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) d.W(r, c) = w[static_cast<std::size_t>(r * cols + c)];
    for (Eigen::Index r = 0; r < rows; ++r) d.b(r) = b[static_cast<std::size_t>(r)];
    const auto wb = matrix_bytes(d.W), bb = matrix_bytes(d.b);
    all.insert(all.end(), wb.begin(), wb.end());
    all.insert(all.end(), bb.begin(), bb.end());
    layers.push_back(std::move(d));
  }
  try {
    return Mlp(std::move(layers));
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("snapshot: ") + e.what());
  }
}

}  // namespace

std::string snapshot_string(const VaeModel& model, const nlohmann::json& training) {
  const VaeSpec& s = model.spec();
  std::vector<std::uint8_t> all;
  nlohmann::json j;
  j["format"] = "codeaudit-vae";
  j["version"] = kSnapshotVersion;
  j["likelihood"] = to_string(s.likelihood);
  j["input_dim"] = s.input_dim;
  j["latent_dim"] = s.latent_dim;
  j["hidden"] = s.hidden;
  j["vocab"] = s.vocab;
  j["positions"] = s.positions;
  j["beta"] = s.beta;
  j["epsilon"] = s.epsilon;
  j["activation"] = "tanh";
  j["encoder"] = net_json(model.encoder(), all);
  j["decoder"] = net_json(model.decoder(), all);
  j["checksum"] = "fnv1a64:" + hex64(fnv1a64(all));
  j["training"] = training;
  return j.dump(1) + "\n";
}

void save_snapshot(const VaeModel& model, const std::string& path, const nlohmann::json& training) {
  const std::string text = snapshot_string(model, training);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw InvalidArgument("failed writing '" + path + "'");
}

VaeModel restore_snapshot_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("snapshot: not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "codeaudit-vae") throw FormatError("snapshot: unknown format");
    const int version = j.at("version").get<int>();
    if (version != kSnapshotVersion)
      throw FormatError("snapshot: unsupported version " + std::to_string(version));
    VaeSpec s;
    const auto lik = j.at("likelihood").get<std::string>();
    if (lik == "bernoulli") s.likelihood = Likelihood::bernoulli;
    else if (lik == "categorical") s.likelihood = Likelihood::categorical;
    else throw FormatError("snapshot: unknown likelihood '" + lik + "'");
    s.input_dim = j.at("input_dim").get<int>();
    s.latent_dim = j.at("latent_dim").get<int>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.vocab = j.at("vocab").get<int>();
    s.positions = j.at("positions").get<int>();
    s.beta = j.at("beta").get<double>();
    s.epsilon = j.at("epsilon").get<double>();
    std::vector<std::uint8_t> all;
    Mlp enc = net_from_json(j.at("encoder"), all);
    Mlp dec = net_from_json(j.at("decoder"), all);
    if (j.at("checksum").get<std::string>() != "fnv1a64:" + hex64(fnv1a64(all)))
      throw FormatError("snapshot: checksum mismatch");
    try {
      return VaeModel(s, std::move(enc), std::move(dec));
    } catch (const InvalidArgument& e) {
      throw FormatError(std::string("snapshot: ") + e.what());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("snapshot: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("snapshot: ") + e.what());
  }
}

VaeModel restore_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open snapshot '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return restore_snapshot_string(ss.str());
}

}  // namespace codeaudit::vae
