#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "codeaudit/channel.hpp"
#include "codeaudit/estimators.hpp"
#include "codeaudit/gibbs.hpp"
#include "codeaudit/pipeline.hpp"
#include "codeaudit/synth.hpp"
#include "codeaudit/util.hpp"
#include "codeaudit/vae.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace codeaudit;
using nlohmann::json;
using Eigen::MatrixXd;

namespace {

constexpr const char* kToolVersion = "0.3.0";
constexpr int kManifestSchema = 1;

enum Exit { kOk = 0, kInvalid = 1, kUsage = 2, kNumerical = 3 };

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json matrix_rows(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

// "2,3,4", "2-6" or a mix of both.
std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      const auto dash = item.find('-', 1);
      if (dash == std::string::npos) {
        out.push_back(std::stoi(item));
      } else {
        const int a = std::stoi(item.substr(0, dash)), b = std::stoi(item.substr(dash + 1));
        if (b < a) throw InvalidArgument("descending range '" + item + "'");
        for (int v = a; v <= b; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw InvalidArgument("cannot parse integer list '" + text + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("empty integer list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    try {
      out.push_back(std::stod(item));
    } catch (const std::logic_error&) {
      throw InvalidArgument("cannot parse number list '" + text + "'");
    }
  return out;
}

// key=value pairs separated by commas.
std::map<std::string, std::string> parse_params(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& group : items) {
    std::stringstream ss(group);
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) throw InvalidArgument("parameter '" + kv + "' is not key=value");
      out[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
  }
  return out;
}

class Params {
 public:
  explicit Params(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}
  double number(const std::string& key, double fallback) {
    used_.push_back(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::logic_error&) {
      throw InvalidArgument("parameter " + key + "='" + it->second + "' is not a number");
    }
  }
  int integer(const std::string& key, int fallback) {
    const double v = number(key, fallback);
    if (v != std::floor(v)) throw InvalidArgument("parameter " + key + " must be an integer");
    return static_cast<int>(v);
  }
  std::string text(const std::string& key, const std::string& fallback) {
    used_.push_back(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  void reject_unused() const {
    for (const auto& [k, v] : kv_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end())
        throw InvalidArgument("unknown parameter '" + k + "' for this kind");
  }

 private:
  std::map<std::string, std::string> kv_;
  std::vector<std::string> used_;
};

// One manifest per invocation; every artifact is listed in it and JSON
// artifacts point back to it.
struct Manifest {
  std::string path;
  json body;

  Manifest(const std::string& command, std::string manifest_path) : path(std::move(manifest_path)) {
    body = {{"schema_version", kManifestSchema},
            {"tool", "codeaudit"},
            {"tool_version", kToolVersion},
            {"command", command},
            {"params", json::object()},
            {"seeds", json::array()},
            {"inputs", json::object()},
            {"outputs", json::array()},
            {"started", utc_now()}};
  }
  void input(const std::string& role, const std::string& file) {
    body["inputs"][role] = {{"path", file}, {"fingerprint", file_fingerprint(file)}};
  }
  void output(const std::string& file) { body["outputs"].push_back(file); }
  void finish(int exit_code, const std::string& status) {
    body["finished"] = utc_now();
    body["exit_code"] = exit_code;
    body["status"] = status;
    std::ofstream out(path);
    out << body.dump(2) << "\n";
    if (!out) throw InvalidArgument("cannot write manifest '" + path + "'");
  }
};

void write_json(Manifest& m, const std::string& file, json j) {
  j["manifest"] = m.path;
  std::ofstream out(file);
  if (!out) throw InvalidArgument("cannot open '" + file + "' for writing");
  out << j.dump(2) << "\n";
  m.output(file);
}

template <class Fn>
void write_text(Manifest& m, const std::string& file, Fn&& fn) {
  std::ofstream out(file);
  if (!out) throw InvalidArgument("cannot open '" + file + "' for writing");
  fn(out);
  m.output(file);
}

std::string in_dir(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InvalidArgument("cannot create directory '" + dir + "': " + ec.message());
}

struct Loaded {
  synth::Dataset data;
  MatrixXd X;
};

Loaded load_data(const std::string& path) {
  Loaded l{synth::read_dataset(path), {}};
  l.X = synth::model_inputs(l.data);
  return l;
}

vae::VaeModel load_model(const std::string& path, const MatrixXd& X) {
  vae::VaeModel m = vae::restore_snapshot(path);
  m.check_inputs(X);
  return m;
}

pipeline::CodeMaps obtain_maps(const vae::VaeModel& model, const MatrixXd& X, int K, std::uint64_t gmm_seed,
                               const std::string& load_path) {
  if (!load_path.empty()) {
    std::ifstream in(load_path);
    if (!in) throw InvalidArgument("cannot open code-map file '" + load_path + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw FormatError("code-map file '" + load_path + "': " + e.what());
    }
    auto maps = pipeline::code_maps_from_json(j);
    if (maps.enc.K() != maps.dec.K()) throw FormatError("code-map file: encoder and decoder K differ");
    return maps;
  }
  codemaps::GmmOptions g;
  g.K = K;
  g.seed = gmm_seed;
  return pipeline::fit_code_maps(model, X, g);
}

pipeline::GridAuditOptions grid_options(int resolution, const std::string& weighting, const std::string& rule,
                                        int jobs) {
  pipeline::GridAuditOptions o;
  o.resolution = resolution;
  o.weighting = gridaudit::parse_weighting(weighting);
  o.rule = gridaudit::parse_quadrature(rule);
  o.jobs = jobs;
  return o;
}

// ---------------------------------------------------------------- commands

struct GenerateArgs {
  std::string kind;
  std::vector<std::string> params;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a) {
  Params p(parse_params(a.params));
  synth::Dataset ds;
  std::string scale = "none";
  if (a.kind == "moons") {
    ds = synth::gen_moons(p.integer("N", 500), p.number("noise", 0.1), a.seed);
    scale = p.text("scale", "minmax");
  } else if (a.kind == "blobs") {
    const int K = p.integer("K", 3), D = p.integer("D", 2);
    if (K < 1 || D < 1) throw InvalidArgument("blobs need K >= 1 and D >= 1");
    const double spread = p.number("spread", 3.0);
    auto rng = stream_rng(a.seed, 5);
    std::normal_distribution<double> normal(0.0, spread);
    MatrixXd centers(K, D);
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = normal(rng);
    ds = synth::gen_blobs(p.integer("N", 500), centers, p.number("sigma", 1.0), a.seed);
    scale = p.text("scale", "minmax");
  } else if (a.kind == "wine" || a.kind == "cancer" || a.kind == "digits") {
    ds = synth::blob_preset(a.kind, p.integer("N", 0), a.seed);
  } else if (a.kind == "setting1") {
    synth::Setting1Options o;
    o.N = p.integer("N", o.N);
    o.K = p.integer("K", o.K);
    o.V = p.integer("V", o.V);
    o.L = p.integer("L", o.L);
    o.sigma_star2 = p.number("sigma_star2", o.sigma_star2);
    o.sigma_tok2 = p.number("sigma_tok2", o.sigma_tok2);
    o.spacing = p.number("spacing", o.spacing);
    o.seed = a.seed;
    ds = synth::gen_setting1(o);
  } else {
    throw InvalidArgument("unknown data kind '" + a.kind + "' (moons, blobs, wine, cancer, digits, setting1)");
  }
  p.reject_unused();
  if (scale == "minmax") synth::minmax_scale(ds);
  else if (scale == "zscore") synth::zscore(ds);
  else if (scale != "none") throw InvalidArgument("scale must be minmax, zscore or none");

  const fs::path parent = fs::path(a.out).parent_path();
  if (!parent.empty()) make_dir(parent.string());
  Manifest m("generate-data", a.out + ".manifest.json");
  m.body["params"] = {{"kind", a.kind}, {"params", parse_params(a.params)}, {"scale", scale}};
  m.body["seeds"] = {a.seed};
  ds.meta["manifest"] = m.path;
  synth::write_dataset(a.out, ds);
  m.output(a.out);
  m.output(a.out + ".meta.json");
  m.body["dataset_fingerprint"] = file_fingerprint(a.out);
  m.finish(kOk, "ok");
  std::cout << "wrote " << a.out << " (" << ds.N() << " rows, " << synth::to_string(ds.kind) << ")\n";
  return kOk;
}

struct TrainArgs {
  std::string data, config, seeds = "0-4", out_dir;
  int epochs = -1;
  int jobs = 1;
};

void apply_config(const json& c, vae::VaeSpec& spec, vae::TrainConfig& tc) {
  static const std::vector<std::string> known = {"latent_dim", "hidden", "epochs", "lr", "batch_size", "beta",
                                                 "warmup_epochs", "eval_every"};
  for (const auto& [k, v] : c.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw InvalidArgument("unknown training config key '" + k + "'");
  try {
    spec.latent_dim = c.value("latent_dim", spec.latent_dim);
    spec.hidden = c.value("hidden", spec.hidden);
    tc.epochs = c.value("epochs", tc.epochs);
    tc.lr = c.value("lr", tc.lr);
    tc.batch_size = c.value("batch_size", tc.batch_size);
    tc.beta = c.value("beta", tc.beta);
    tc.warmup_epochs = c.value("warmup_epochs", tc.warmup_epochs);
    tc.eval_every = c.value("eval_every", tc.eval_every);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("training config: ") + e.what());
  }
  spec.beta = tc.beta;
}

int cmd_train(const TrainArgs& a) {
  const Loaded d = load_data(a.data);
  vae::VaeSpec spec;
  spec.input_dim = static_cast<int>(d.X.cols());
  if (d.data.kind == synth::FeatureKind::tokens) {
    spec.likelihood = vae::Likelihood::categorical;
    spec.vocab = d.data.vocab;
    spec.positions = d.data.positions;
  }
  vae::TrainConfig base;
  json config = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw InvalidArgument("cannot open config '" + a.config + "'");
    try {
      in >> config;
    } catch (const json::exception& e) {
      throw InvalidArgument("config '" + a.config + "': " + e.what());
    }
    apply_config(config, spec, base);
  }
  if (a.epochs > 0) base.epochs = a.epochs;
  const std::vector<int> seeds = parse_int_list(a.seeds);
  make_dir(a.out_dir);

  Manifest m("train", in_dir(a.out_dir, "manifest.json"));
  m.input("data", a.data);
  if (!a.config.empty()) m.input("config", a.config);
  m.body["dataset_fingerprint"] = m.body["inputs"]["data"]["fingerprint"];
  m.body["seeds"] = seeds;
  m.body["params"] = {{"likelihood", vae::to_string(spec.likelihood)}, {"latent_dim", spec.latent_dim},
                      {"hidden", spec.hidden},  {"epochs", base.epochs}, {"lr", base.lr},
                      {"batch_size", base.batch_size}, {"beta", base.beta}, {"warmup_epochs", base.warmup_epochs},
                      {"eval_every", base.eval_every}, {"jobs", a.jobs}};

  std::vector<json> entries(seeds.size());
  std::vector<std::string> outputs(seeds.size() * 2);
  parallel_for(seeds.size(), a.jobs, [&](std::size_t i) {
    const int seed = seeds[i];
    const std::string dir = in_dir(a.out_dir, "seed" + std::to_string(seed));
    json e = {{"seed", seed}};
    try {
      vae::TrainConfig tc = base;
      tc.seed = static_cast<std::uint64_t>(seed);
      auto r = vae::train(vae::VaeModel(spec, static_cast<std::uint64_t>(seed)), d.X, tc);
      make_dir(dir);
      const std::string snap = in_dir(dir, "model.json"), curve = in_dir(dir, "curve.csv");
      json training = {{"seed", seed}, {"epochs", tc.epochs}, {"lr", tc.lr}, {"beta", tc.beta},
                       {"batch_size", tc.batch_size}, {"warmup_epochs", tc.warmup_epochs},
                       {"data_fingerprint", m.body["dataset_fingerprint"]}};
      vae::save_snapshot(r.model, snap, training);
      std::ofstream c(curve);
      vae::write_curve_csv(c, r.curve);
      const auto& last = r.curve.back();
      e.update({{"status", "ok"}, {"snapshot", snap}, {"curve", curve}, {"final_loss", last.loss},
                {"rate", last.rate}, {"AU", last.active_units}});
      outputs[2 * i] = snap;
      outputs[2 * i + 1] = curve;
    } catch (const NumericalError& ex) {
      e.update({{"status", "failed"}, {"failure", "numerical"}, {"message", ex.what()}});
    } catch (const InvalidArgument& ex) {
      e.update({{"status", "failed"}, {"failure", "invalid_argument"}, {"message", ex.what()}});
    }
    entries[i] = std::move(e);
  });
  int failed = 0;
  for (const auto& e : entries) failed += e["status"] != "ok";
  for (const auto& o : outputs)
    if (!o.empty()) m.output(o);
  write_json(m, in_dir(a.out_dir, "train.json"), {{"runs", entries}, {"failed", failed}});
  const int code = failed ? kNumerical : kOk;
  m.finish(code, failed ? "seed failures recorded" : "ok");
  for (const auto& e : entries)
    std::cout << "seed " << e["seed"] << ": " << e["status"].get<std::string>()
              << (e.contains("failure") ? " (" + e["failure"].get<std::string>() + ")" : "") << "\n";
  return code;
}

struct AuditArgs {
  std::string model, data, out, code_maps, save_code_maps;
  std::string weighting = "prior", rule = "volume";
  int resolution = 41, K = 2, mc_samples = 100, jobs = 1;
  std::uint64_t seed = 0, gmm_seed = 0;
};

json package_json(const MatrixXd& K_ed, double A_q, double A_mu, double r_eff, const pipeline::LatentSummary& l) {
  return {{"K_ed", matrix_rows(K_ed)}, {"A_q", A_q}, {"A_mu", A_mu}, {"R_eff", r_eff}, {"R", l.rate},
          {"AU", l.active_units}};
}

int cmd_audit_grid(const AuditArgs& a) {
  const Loaded d = load_data(a.data);
  const vae::VaeModel model = load_model(a.model, d.X);
  const auto maps = obtain_maps(model, d.X, a.K, a.gmm_seed, a.code_maps);
  make_dir(a.out);
  Manifest m("audit-grid", in_dir(a.out, "manifest.json"));
  m.input("data", a.data);
  m.input("model", a.model);
  if (!a.code_maps.empty()) m.input("code_maps", a.code_maps);
  m.body["dataset_fingerprint"] = m.body["inputs"]["data"]["fingerprint"];
  m.body["seeds"] = {{"gmm", a.gmm_seed}, {"mc", a.seed}};
  m.body["params"] = {{"resolution", a.resolution}, {"weighting", a.weighting}, {"quadrature", a.rule},
                      {"K", maps.enc.K()},          {"mc_samples", a.mc_samples}, {"jobs", a.jobs}};

  const auto audit = pipeline::grid_audit(model, d.X, maps, grid_options(a.resolution, a.weighting, a.rule, a.jobs));
  const auto mc = estimators::mc_agreement(model, d.X, maps.enc, maps.dec, a.mc_samples, a.seed, a.jobs);
  json report = pipeline::to_json(audit);
  report["A_q_mc"] = estimators::to_json(mc);
  report["package"]["A_q_grid"] = audit.report.A_q;
  report["package"]["A_q_mc"] = mc.A;
  report["training_beta"] = model.spec().beta;
  report["gap_beta"] = 1.0;

  const std::string maps_out = a.save_code_maps.empty() ? in_dir(a.out, "code_maps.json") : a.save_code_maps;
  write_json(m, maps_out, pipeline::to_json(maps));
  write_json(m, in_dir(a.out, "report.json"), report);
  write_text(m, in_dir(a.out, "per_example.csv"),
             [&](std::ostream& o) { gridaudit::write_per_example_csv(o, audit.report); });
  write_text(m, in_dir(a.out, "k_ed.csv"), [&](std::ostream& o) {
    channel::write_matrix_csv(o, channel::row_normalize(channel::JointCodeTable::from_weights(audit.report.table_q, 0))
                                     .matrix);
  });

  const auto& r = audit.report;
  std::cout << (r.valid ? "valid" : "invalid") << ": d_bin ≤ Δ̄_G (" << format_double(r.d_bin)
            << (r.valid ? " ≤ " : " > ") << format_double(r.delta_bar) << ")\n";
  std::cout << "A_mu=" << format_double(r.A_mu) << " A_q(grid)=" << format_double(r.A_q)
            << " A_q(mc)=" << format_double(mc.A) << " closure=" << format_double(r.closure_residual) << "\n";
  int code = kOk;
  std::string status = "ok";
  if (r.ac_violation) {
    code = kNumerical;
    status = "absolute-continuity violation on " + std::to_string(r.ac_violation_count) + " examples";
    std::cerr << status << "\n";
  } else if (!r.valid) {
    code = kInvalid;
    status = "certificate invalid";
  }
  m.finish(code, status);
  return code;
}

int cmd_audit_snis(const AuditArgs& a, int k_samples) {
  const Loaded d = load_data(a.data);
  const vae::VaeModel model = load_model(a.model, d.X);
  const auto maps = obtain_maps(model, d.X, a.K, a.gmm_seed, a.code_maps);
  make_dir(a.out);
  Manifest m("audit-snis", in_dir(a.out, "manifest.json"));
  m.input("data", a.data);
  m.input("model", a.model);
  if (!a.code_maps.empty()) m.input("code_maps", a.code_maps);
  m.body["dataset_fingerprint"] = m.body["inputs"]["data"]["fingerprint"];
  m.body["seeds"] = {{"gmm", a.gmm_seed}, {"snis", a.seed}};
  m.body["params"] = {{"k_samples", k_samples}, {"K", maps.enc.K()}, {"mc_samples", a.mc_samples},
                      {"jobs", a.jobs}};

  const auto snis = estimators::snis_eta_p(model, d.X, maps.enc, maps.dec, k_samples, a.seed, a.jobs);
  const auto iwae = estimators::iwae_gap_diagnostic(model, d.X, k_samples, a.seed, a.jobs);
  const auto table = pipeline::sampled_code_table(model, d.X, maps, a.mc_samples, a.seed, a.jobs);
  const auto summary = channel::summarize(table);
  const double A_mu = gridaudit::mean_code_agreement(model, d.X, maps.enc, maps.dec);
  json report = {{"audit", estimators::snis_audit_json(snis, iwae)},
                 {"snis", estimators::to_json(snis)},
                 {"iwae", estimators::to_json(iwae)},
                 {"package", package_json(channel::row_normalize(table).matrix, table.cells().trace(), A_mu,
                                          summary.r_eff, pipeline::latent_summary(model, d.X))},
                 {"channel", channel::to_json(summary)},
                 {"training_beta", model.spec().beta}};
  write_json(m, in_dir(a.out, "code_maps.json"), pipeline::to_json(maps));
  write_json(m, in_dir(a.out, "snis.json"), report);
  write_text(m, in_dir(a.out, "snis_per_example.csv"), [&](std::ostream& o) {
    o << "n,eta_q_mc,eta_p,ess,excluded\n";
    for (std::size_t n = 0; n < snis.eta_p.size(); ++n)
      o << n << ',' << format_double(snis.eta_q_mc[n]) << ',' << format_double(snis.eta_p[n]) << ','
        << format_double(snis.ess[n]) << ',' << (snis.excluded[n] ? 1 : 0) << '\n';
  });
  const bool all_excluded = snis.excluded_count == static_cast<int>(snis.eta_p.size());
  std::cout << "heuristic: eta_p=" << format_double(snis.eta_p_mean) << " ± " << format_double(snis.eta_p_se)
            << " ESS/K=" << format_double(snis.ess_mean / k_samples) << " delta_iwae=" << format_double(iwae.gap)
            << " excluded=" << snis.excluded_count << "\n";
  const int code = all_excluded ? kNumerical : kOk;
  m.finish(code, all_excluded ? "every example underflowed" : "ok");
  return code;
}

int cmd_sweep(const AuditArgs& a, const std::string& k_list) {
  const Loaded d = load_data(a.data);
  const vae::VaeModel model = load_model(a.model, d.X);
  const std::vector<int> Ks = parse_int_list(k_list);
  make_dir(a.out);
  Manifest m("sweep-k", in_dir(a.out, "manifest.json"));
  m.input("data", a.data);
  m.input("model", a.model);
  m.body["dataset_fingerprint"] = m.body["inputs"]["data"]["fingerprint"];
  m.body["seeds"] = {{"gmm", a.gmm_seed}};
  m.body["params"] = {{"k_list", Ks},          {"resolution", a.resolution}, {"weighting", a.weighting},
                      {"quadrature", a.rule}, {"jobs", a.jobs}};
  codemaps::GmmOptions g;
  g.seed = a.gmm_seed;
  const auto rows = pipeline::sweep_k(model, d.X, Ks, g, grid_options(a.resolution, a.weighting, a.rule, a.jobs));
  json jr = json::array();
  for (const auto& r : rows) jr.push_back(pipeline::to_json(r));
  write_json(m, in_dir(a.out, "sweep.json"), {{"rows", jr}});
  write_text(m, in_dir(a.out, "sweep.csv"), [&](std::ostream& o) { pipeline::write_sweep_csv(o, rows); });
  std::cout << "K   A_mu     A_q      R_eff    valid\n";
  int failed = 0;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++failed;
      std::cout << r.K << "   " << r.failure << "\n";
      continue;
    }
    std::cout << std::left << std::setw(4) << r.K << std::setw(9) << std::setprecision(4) << r.A_mu << std::setw(9)
              << r.A_q << std::setw(9) << r.R_eff << (r.valid ? "yes" : "no") << "\n";
  }
  m.finish(kOk, failed ? std::to_string(failed) + " K values failed (recorded)" : "ok");
  return kOk;
}

struct StressArgs {
  std::string kind = "derangement", weights, perm, out;
  int K = 5, jobs = 1;
};

int cmd_stress(const StressArgs& a) {
  channel::StressSpec spec;
  spec.kind = channel::parse_stress_kind(a.kind);
  spec.K = a.K;
  if (!a.weights.empty()) spec.weights = parse_double_list(a.weights);
  if (!a.perm.empty()) spec.perm = parse_int_list(a.perm);
  // The reference table is the matching identity: uniform or weighted.
  channel::StressSpec ref = spec;
  const bool weighted = spec.kind == channel::StressKind::weighted_identity ||
                        spec.kind == channel::StressKind::weighted_permutation;
  ref.kind = weighted ? channel::StressKind::weighted_identity : channel::StressKind::identity;
  if (spec.kind == channel::StressKind::identity) spec.kind = channel::StressKind::derangement;
  if (spec.kind == channel::StressKind::weighted_identity) spec.kind = channel::StressKind::weighted_permutation;
  const auto ta = channel::stress_table(ref), tb = channel::stress_table(spec);
  const auto sa = channel::summarize(ta), sb = channel::summarize(tb);
  auto sorted = [](const Eigen::VectorXd& v) {
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end());
    return s;
  };
  const json same = {
      {"enc_marginal", sa.enc_marginal == sb.enc_marginal},
      {"dec_marginal_multiset", sorted(sa.dec_marginal) == sorted(sb.dec_marginal)},
      {"h_enc", sa.h_enc == sb.h_enc},
      {"h_dec", sa.h_dec == sb.h_dec},
      {"active_enc", sa.active_enc == sb.active_enc},
      {"active_dec", sa.active_dec == sb.active_dec},
      {"r_eff", sa.r_eff == sb.r_eff},
  };
  bool all_same = true;
  for (const auto& [k, v] : same.items()) all_same = all_same && v.get<bool>();

  make_dir(a.out);
  Manifest m("stress", in_dir(a.out, "manifest.json"));
  m.body["params"] = {{"kind", a.kind}, {"K", a.K}, {"weights", spec.weights}, {"perm", spec.perm}};
  write_text(m, in_dir(a.out, "table_" + channel::to_string(ref.kind) + ".csv"),
             [&](std::ostream& o) { channel::write_table_csv(o, ta); });
  write_text(m, in_dir(a.out, "table_" + channel::to_string(spec.kind) + ".csv"),
             [&](std::ostream& o) { channel::write_table_csv(o, tb); });
  write_json(m, in_dir(a.out, "stress.json"),
             {{"reference", {{"kind", channel::to_string(ref.kind)}, {"summary", channel::to_json(sa)}}},
              {"stressed", {{"kind", channel::to_string(spec.kind)}, {"summary", channel::to_json(sb)}}},
              {"marginal_summaries_identical", same},
              {"all_identical", all_same},
              {"A", {sa.agreement, sb.agreement}}});
  std::cout << channel::to_string(ref.kind) << " A=" << sa.agreement << "  " << channel::to_string(spec.kind)
            << " A=" << sb.agreement << "  marginal summaries " << (all_same ? "identical" : "DIFFER") << "\n";
  m.finish(kOk, "ok");
  return kOk;
}

struct GibbsArgs {
  std::string model, data, out, code_maps, weighting = "prior", rule = "volume";
  int resolution = 5, horizon = 4, K = 2, jobs = 1;
  std::uint64_t gmm_seed = 0;
};

int cmd_gibbs(const GibbsArgs& a) {
  const Loaded d = load_data(a.data);
  const vae::VaeModel model = load_model(a.model, d.X);
  const auto maps = obtain_maps(model, d.X, a.K, a.gmm_seed, a.code_maps);
  if (a.horizon < 1) throw InvalidArgument("--horizon must be >= 1");
  make_dir(a.out);
  Manifest m("gibbs", in_dir(a.out, "manifest.json"));
  m.input("data", a.data);
  m.input("model", a.model);
  m.body["dataset_fingerprint"] = m.body["inputs"]["data"]["fingerprint"];
  m.body["seeds"] = {{"gmm", a.gmm_seed}};
  m.body["params"] = {{"resolution", a.resolution}, {"horizon", a.horizon}, {"K", maps.enc.K()},
                      {"weighting", a.weighting},   {"quadrature", a.rule}, {"jobs", a.jobs}};

  MatrixXd mu, lv;
  model.encode(d.X, mu, lv);
  const auto grid = gridaudit::build_grid(gridaudit::auto_bounds(mu),
                                          std::vector<int>(static_cast<std::size_t>(model.latent_dim()), a.resolution),
                                          gridaudit::parse_weighting(a.weighting));
  const auto post = gridaudit::grid_posteriors(model, d.X, grid, gridaudit::parse_quadrature(a.rule), a.jobs);
  const auto labels = gridaudit::grid_labels(grid, maps.enc, maps.dec, model);
  const auto q = gibbs::q_joint(post), p = gibbs::p_joint(post);
  const auto k = gibbs::build_kernels(q, p);
  const double dbar = gibbs::joint_delta_bar(q, p), klm = gibbs::marginal_kl(q, p);
  const double lifted = gibbs::lifted_kl_average(q, p);
  const auto one = gibbs::one_step_mismatch(k, q.marginal, dbar, klm);
  const auto path = gibbs::path_mismatch(k, q.marginal, a.horizon, dbar, klm);
  json horizon = json::array();
  bool all_hold = one.holds && path.holds;
  for (int H = 0; H <= a.horizon; ++H) {
    const auto h = gibbs::horizon_agreement(k, q.marginal, labels, H, dbar, klm);
    all_hold = all_hold && h.holds;
    horizon.push_back(gibbs::to_json(h));
  }
  const double identity_gap = std::abs(lifted - (2 * dbar - klm));
  write_json(m, in_dir(a.out, "gibbs.json"),
             {{"grid_size", grid.size()},
              {"delta_bar", num(dbar)},
              {"kl_marginals", num(klm)},
              {"lifted_kl_average", num(lifted)},
              {"lifted_identity_gap", num(identity_gap)},
              {"zero_rows_q", k.zero_rows_q},
              {"zero_rows_p", k.zero_rows_p},
              {"one_step", gibbs::to_json(one)},
              {"path", gibbs::to_json(path)},
              {"horizon", horizon},
              {"all_hold", all_hold}});
  std::cout << "one-step " << (one.holds ? "holds" : "FAILS") << ", path H=" << a.horizon << " "
            << (path.holds ? "holds" : "FAILS") << ", horizon agreement " << (all_hold ? "holds" : "FAILS") << "\n";
  int code = kOk;
  std::string status = "ok";
  if (one.ac_violation || post.any_violation()) code = kNumerical, status = "absolute-continuity violation";
  else if (!all_hold) code = kInvalid, status = "bound check failed";
  m.finish(code, status);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"codeaudit: encoder/decoder code-map audits for small VAEs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  std::function<int()> run;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "write a synthetic dataset CSV with a metadata sidecar");
  g->add_option("--kind", gen.kind, "moons, blobs, wine, cancer, digits, setting1")->required();
  g->add_option("--params", gen.params, "key=value[,key=value...]");
  g->add_option("--seed", gen.seed);
  g->add_option("--out", gen.out)->required();
  int gen_jobs = 1;
  g->add_option("--jobs", gen_jobs, "accepted for uniformity; generation is sequential");
  g->callback([&] { run = [&] { return cmd_generate(gen); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train one VAE per seed");
  t->add_option("--data", tr.data)->required();
  t->add_option("--config", tr.config, "JSON training config");
  t->add_option("--seeds", tr.seeds, "list such as 0-4 or 0,3,7");
  t->add_option("--out-dir", tr.out_dir)->required();
  t->add_option("--epochs", tr.epochs, "override the config epoch count");
  t->add_option("--jobs", tr.jobs, "seeds trained in parallel");
  t->callback([&] { run = [&] { return cmd_train(tr); }; });

  auto add_audit_flags = [](CLI::App* c, AuditArgs& a) {
    c->add_option("--model", a.model)->required();
    c->add_option("--data", a.data)->required();
    c->add_option("--out", a.out, "output directory")->required();
    c->add_option("--K", a.K, "number of codes");
    c->add_option("--gmm-seed", a.gmm_seed);
    c->add_option("--code-maps", a.code_maps, "load code maps instead of fitting");
    c->add_option("--mc-samples", a.mc_samples, "draws per example for the sampled A_q");
    c->add_option("--seed", a.seed, "sampling seed");
    c->add_option("--jobs", a.jobs);
  };
  AuditArgs ag;
  auto* ga = app.add_subcommand("audit-grid", "exact finite-grid certificate");
  add_audit_flags(ga, ag);
  ga->add_option("--resolution", ag.resolution, "points per latent axis");
  ga->add_option("--weighting", ag.weighting, "prior or uniform");
  ga->add_option("--quadrature", ag.rule, "volume or grid_weight");
  ga->add_option("--save-code-maps", ag.save_code_maps);
  ga->callback([&] { run = [&] { return cmd_audit_grid(ag); }; });

  AuditArgs as;
  int k_samples = 1000;
  auto* sa = app.add_subcommand("audit-snis", "sampling-based audit (heuristic)");
  add_audit_flags(sa, as);
  sa->add_option("--k-samples", k_samples, "importance samples per example");
  sa->callback([&] { run = [&] { return cmd_audit_snis(as, k_samples); }; });

  AuditArgs sw;
  std::string k_list = "2-6";
  auto* sk = app.add_subcommand("sweep-k", "refit code maps for each K");
  sk->add_option("--model", sw.model)->required();
  sk->add_option("--data", sw.data)->required();
  sk->add_option("--out", sw.out)->required();
  sk->add_option("--k-list", k_list);
  sk->add_option("--resolution", sw.resolution);
  sk->add_option("--weighting", sw.weighting);
  sk->add_option("--quadrature", sw.rule);
  sk->add_option("--gmm-seed", sw.gmm_seed);
  sk->add_option("--jobs", sw.jobs);
  sk->callback([&] { run = [&] { return cmd_sweep(sw, k_list); }; });

  StressArgs st;
  auto* s = app.add_subcommand("stress", "identity vs stressed analytic table pair");
  s->add_option("--kind", st.kind, "derangement, many_to_one, collapse, weighted_permutation, ...");
  s->add_option("--K", st.K);
  s->add_option("--weights", st.weights, "comma-separated row masses for weighted kinds");
  s->add_option("--perm", st.perm, "comma-separated permutation");
  s->add_option("--out", st.out)->required();
  s->add_option("--jobs", st.jobs);
  s->callback([&] { run = [&] { return cmd_stress(st); }; });

  GibbsArgs gb;
  auto* gc = app.add_subcommand("gibbs", "posterior-Gibbs kernel bound checks on a grid");
  gc->add_option("--model", gb.model)->required();
  gc->add_option("--data", gb.data)->required();
  gc->add_option("--out", gb.out)->required();
  gc->add_option("--resolution", gb.resolution);
  gc->add_option("--horizon", gb.horizon);
  gc->add_option("--K", gb.K);
  gc->add_option("--code-maps", gb.code_maps);
  gc->add_option("--gmm-seed", gb.gmm_seed);
  gc->add_option("--weighting", gb.weighting);
  gc->add_option("--quadrature", gb.rule);
  gc->add_option("--jobs", gb.jobs);
  gc->callback([&] { run = [&] { return cmd_gibbs(gb); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  try {
    return run();
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
