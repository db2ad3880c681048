// Command-line surface for the counterfactual engine: dataset synthesis,
// training, constrained fine-tuning, counterfactual queries, mediation
// effects, the soundness suite, and the closed-form latent GLM pipeline.
//
// Exit codes: 0 ok, 2 usage/config, 3 data/IO, 4 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cfscm/cf_train.hpp"
#include "cfscm/ladder.hpp"
#include "cfscm/serialize.hpp"
#include "cfscm/soundness.hpp"
#include "cfscm/synthpop.hpp"
#include "cfscm/vq_glm.hpp"

namespace fs = std::filesystem;
using cfscm::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config handling.
// ---------------------------------------------------------------------------

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw UsageError("config: unknown key \"" + it.key() + "\" in " + ctx);
}

json load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config parse error: ") + e.what());
  }
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           const json* cfg, std::uint64_t fallback = 42) {
  if (flag) return *flag;  // flag wins
  if (const char* env = std::getenv("CFSCM_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("CFSCM_SEED is not an unsigned integer");
    }
  }
  if (cfg && cfg->contains("seed")) return cfg->at("seed").get<std::uint64_t>();
  return fallback;
}

// ---------------------------------------------------------------------------
// --do grammar: comma-separated name=value; class labels allowed for y.
// ---------------------------------------------------------------------------

std::map<std::string, double> parse_do(const std::string& text) {
  std::map<std::string, double> out;
  if (text.empty()) return out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
      throw UsageError("--do: cannot parse \"" + item + "\" (want name=value)");
    std::string name = item.substr(0, eq), value = item.substr(eq + 1);
    if (name != "y" && name != "t" && name != "i")
      throw DataError("--do: unknown variable \"" + name + "\"");
    double v;
    if (name == "y" && (value == "bar" || value == "cross" || value == "ring")) {
      v = value == "bar" ? 0.0 : (value == "cross" ? 1.0 : 2.0);
    } else {
      try {
        std::size_t used = 0;
        v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        throw UsageError("--do: cannot parse value \"" + value + "\"");
      }
    }
    if (!out.emplace(name, v).second)
      throw UsageError("--do: duplicate target \"" + name + "\"");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model directory (ladder + attribute SCM + predictors).
// ---------------------------------------------------------------------------

struct ModelDir {
  cfscm::LadderModel ladder;
  cfscm::AttributeModel attrs;
  std::vector<cfscm::ParentPredictor> preds;
  double pi = 0.0;
  double constraint_c = 0.0;
};

void save_model_dir(const std::string& dir, const ModelDir& m,
                    std::uint64_t seed) {
  fs::create_directories(dir);
  json manifest{{"kind", "cfscm-model"},
                {"variant", m.ladder.variant == cfscm::LadderVariant::LatentMediator
                                ? "mediator"
                                : "exogenous"},
                {"pi", m.pi},
                {"constraint_c", m.constraint_c},
                {"seed", seed}};
  cfscm::write_json_file(dir + "/model.json", manifest);
  cfscm::save_ladder(dir + "/ladder", m.ladder);
  cfscm::save_attribute_model(dir, m.attrs);
  cfscm::save_predictors(dir, m.preds);
}

ModelDir load_model_dir(const std::string& dir) {
  if (!fs::exists(dir + "/model.json"))
    throw DataError("not a model directory (missing model.json): " + dir);
  json manifest = cfscm::read_json_file(dir + "/model.json");
  if (manifest.at("kind") != "cfscm-model")
    throw DataError("not a cfscm model directory: " + dir);
  ModelDir m;
  m.ladder = cfscm::load_ladder(dir + "/ladder");
  m.attrs = cfscm::load_attribute_model(dir);
  m.preds = cfscm::load_predictors(dir);
  m.pi = manifest.at("pi");
  m.constraint_c = manifest.at("constraint_c");
  return m;
}

cfscm::Dataset load_data(const std::string& dir) {
  if (!fs::exists(dir + "/images.cft"))
    throw DataError("not a dataset directory (missing images.cft): " + dir);
  return cfscm::load_dataset(dir);
}

std::vector<std::vector<double>> encode_rows(const cfscm::Dataset& d,
                                             const cfscm::PaScaler& s) {
  std::vector<std::vector<double>> rows;
  rows.reserve(d.size());
  for (std::size_t r = 0; r < d.size(); ++r)
    rows.push_back(s.encode(d.y[r], d.t[r], d.i[r]));
  return rows;
}

void write_fe_trace(const std::string& path, const std::vector<double>& trace) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path);
  os.precision(17);
  os << "epoch,f_fe\n";
  for (std::size_t e = 0; e < trace.size(); ++e)
    os << e << "," << trace[e] << "\n";
}

// CSV matrix of plain numbers (no header).
cfscm::Tensor read_csv_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("bad number \"" + cell + "\" in " + path);
      }
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw DataError("ragged CSV in " + path);
    rows.push_back(std::move(row));
  }
  cfscm::Tensor t({rows.size(), rows.empty() ? 0 : rows[0].size()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.at2(r, c) = rows[r][c];
  return t;
}

std::vector<std::vector<double>> tensor_rows(const cfscm::Tensor& t) {
  std::vector<std::vector<double>> rows;
  for (std::size_t r = 0; r < t.shape[0]; ++r) {
    std::vector<double> row(t.shape[1]);
    for (std::size_t c = 0; c < t.shape[1]; ++c) row[c] = t.at2(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

cfscm::Tensor image_tensor(const std::vector<double>& x, std::size_t rows,
                           std::size_t cols) {
  return cfscm::Tensor({rows, cols}, x);
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, std::size_t n,
              const std::optional<std::uint64_t>& seed_flag) {
  std::uint64_t seed = resolve_seed(seed_flag, nullptr);
  cfscm::synthpop::Generated g = cfscm::synthpop::generate(seed, n);
  fs::create_directories(out);
  cfscm::save_dataset(out, g.data, &g.noises);
  std::cout << json{{"command", "synth"}, {"out", out}, {"n", n}, {"seed", seed}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out,
              const std::optional<std::uint64_t>& seed_flag) {
  json cfg = config_path.empty() ? json::object() : load_config(config_path);
  check_keys(cfg, {"seed", "variant", "pi", "dims", "ladder", "predictor",
                   "attributes"},
             "train config");
  std::uint64_t seed = resolve_seed(seed_flag, &cfg);
  std::string variant_str = cfg.value("variant", std::string("mediator"));
  cfscm::LadderVariant variant;
  try {
    variant = cfscm::parse_variant(variant_str);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  cfscm::LadderDims dims;
  if (cfg.contains("dims")) {
    const json& d = cfg.at("dims");
    check_keys(d, {"z", "h_dim", "hidden"}, "dims");
    if (d.contains("z")) dims.z = d.at("z").get<std::vector<std::size_t>>();
    dims.h_dim = d.value("h_dim", dims.h_dim);
    dims.hidden = d.value("hidden", dims.hidden);
  }
  cfscm::Dataset data = load_data(data_dir);
  if (data.size() == 0) throw DataError("train: dataset is empty");
  dims.x_dim = data.pixels();

  cfscm::PaScaler scaler = cfscm::PaScaler::fit(data);
  auto pa_rows = encode_rows(data, scaler);

  cfscm::FitConfig attr_cfg;
  if (cfg.contains("attributes")) {
    const json& a = cfg.at("attributes");
    check_keys(a, {"epochs", "lr"}, "attributes");
    attr_cfg.epochs = a.value("epochs", attr_cfg.epochs);
    attr_cfg.adam.lr = a.value("lr", attr_cfg.adam.lr);
  }
  attr_cfg.init_seed = seed;
  cfscm::AttributeModel attrs = cfscm::AttributeModel::fit(data, scaler, attr_cfg);

  cfscm::PredictorFitConfig pred_cfg;
  if (cfg.contains("predictor")) {
    const json& p = cfg.at("predictor");
    check_keys(p, {"epochs", "lr", "hidden"}, "predictor");
    pred_cfg.epochs = p.value("epochs", pred_cfg.epochs);
    pred_cfg.adam.lr = p.value("lr", pred_cfg.adam.lr);
    pred_cfg.hidden = p.value("hidden", pred_cfg.hidden);
  }
  pred_cfg.init_seed = seed;
  cfscm::PredictorSet preds = cfscm::fit_predictors(data, pred_cfg);

  cfscm::LadderTrainConfig ladder_cfg;
  if (cfg.contains("ladder")) {
    const json& l = cfg.at("ladder");
    check_keys(l, {"epochs", "lr"}, "ladder");
    ladder_cfg.epochs = l.value("epochs", ladder_cfg.epochs);
    ladder_cfg.adam.lr = l.value("lr", ladder_cfg.adam.lr);
  }
  ladder_cfg.seed = seed;
  cfscm::LadderModel ladder = cfscm::LadderModel::create(variant, dims, seed);
  cfscm::LadderTrainResult res =
      cfscm::train(ladder, data, pa_rows, ladder_cfg);

  ModelDir m;
  m.ladder = std::move(ladder);
  m.attrs = std::move(attrs);
  m.preds = std::move(preds.items);
  m.pi = cfg.value("pi", 0.0);
  m.constraint_c = res.constraint_c;
  save_model_dir(out, m, seed);
  write_fe_trace(out + "/fe_trace.csv", res.free_energy_trace);
  std::cout << json{{"command", "train"},
                    {"out", out},
                    {"variant", variant_str},
                    {"constraint_c", res.constraint_c},
                    {"epochs", res.free_energy_trace.size()},
                    {"seed", seed}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_finetune(const std::string& model_dir, const std::string& config_path,
                 const std::string& data_dir, const std::string& out,
                 const std::optional<std::uint64_t>& seed_flag) {
  json cfg = config_path.empty() ? json::object() : load_config(config_path);
  check_keys(cfg, {"seed", "epochs", "lr", "lambda", "pi"}, "finetune config");
  std::uint64_t seed = resolve_seed(seed_flag, &cfg);
  ModelDir m = load_model_dir(model_dir);
  cfscm::Dataset data = load_data(data_dir);
  auto pa_rows = encode_rows(data, m.attrs.scaler);

  cfscm::FinetuneConfig fcfg;
  fcfg.seed = seed;
  fcfg.epochs = cfg.value("epochs", fcfg.epochs);
  fcfg.adam.lr = cfg.value("lr", fcfg.adam.lr);
  fcfg.pi = cfg.value("pi", m.pi);
  if (cfg.contains("lambda")) {
    const json& l = cfg.at("lambda");
    check_keys(l, {"lr", "init", "damping"}, "lambda");
    fcfg.lambda_lr = l.value("lr", fcfg.lambda_lr);
    fcfg.lambda_init = l.value("init", fcfg.lambda_init);
    fcfg.damping = l.value("damping", fcfg.damping);
  }
  cfscm::FinetuneTrace trace = cfscm::finetune_constrained(
      m.ladder, m.preds, m.attrs, data, pa_rows, m.constraint_c, fcfg);
  save_model_dir(out, m, seed);
  cfscm::write_finetune_trace_csv(out + "/finetune_trace.csv", trace);
  std::cout << json{{"command", "finetune"},
                    {"out", out},
                    {"constraint_c", m.constraint_c},
                    {"final_f_fe", trace.f_fe.empty() ? 0.0 : trace.f_fe.back()},
                    {"final_l_ct", trace.l_ct.empty() ? 0.0 : trace.l_ct.back()},
                    {"final_lambda",
                     trace.lambda.empty() ? 0.0 : trace.lambda.back()},
                    {"seed", seed}}
                   .dump()
            << "\n";
  return 0;
}

struct Observation {
  std::vector<double> x;
  cfscm::AttrTriple attrs;
  std::size_t row = 0;
  std::size_t image_rows = 16, image_cols = 16;
};

Observation resolve_obs(const std::string& obs, const std::string& data_dir) {
  Observation o;
  bool numeric = !obs.empty() &&
                 obs.find_first_not_of("0123456789") == std::string::npos;
  if (numeric) {
    if (data_dir.empty())
      throw UsageError("--obs <id> requires --data pointing at a dataset");
    cfscm::Dataset d = load_data(data_dir);
    std::size_t id = std::stoul(obs);
    if (id >= d.size())
      throw DataError("--obs: sample id " + obs + " out of range");
    o.x = d.image_vec(id);
    o.attrs = {d.y[id], d.t[id], d.i[id]};
    o.row = id;
    o.image_rows = d.image_rows;
    o.image_cols = d.image_cols;
    return o;
  }
  // JSON observation file: {"image": "x.cft", "y": 0, "t": 1.2, "i": 110.0}
  if (!fs::exists(obs)) throw DataError("--obs: no such file " + obs);
  json j = cfscm::read_json_file(obs);
  check_keys(j, {"image", "y", "t", "i"}, "observation file");
  fs::path img_path = fs::path(obs).parent_path() / j.at("image").get<std::string>();
  cfscm::Tensor img = cfscm::load_cft1(img_path.string());
  if (img.rank() != 2) throw DataError("--obs: image tensor must be rank 2");
  o.image_rows = img.shape[0];
  o.image_cols = img.shape[1];
  o.x = img.data;
  o.attrs = {j.at("y").get<std::size_t>(), j.at("t").get<double>(),
             j.at("i").get<double>()};
  return o;
}

int cmd_counterfactual(const std::string& model_dir, const std::string& obs,
                       const std::string& data_dir, const std::string& do_str,
                       std::optional<double> pi_flag, const std::string& out,
                       const std::string& pgm_dir,
                       const std::optional<std::uint64_t>& seed_flag) {
  std::uint64_t seed = resolve_seed(seed_flag, nullptr);
  ModelDir m = load_model_dir(model_dir);
  Observation o = resolve_obs(obs, data_dir);
  auto do_map = parse_do(do_str);
  cfscm::AttrTriple cf = m.attrs.counterfactual(o.attrs, do_map);
  std::vector<double> pa =
      m.attrs.scaler.encode(o.attrs.y, o.attrs.t, o.attrs.i);
  std::vector<double> pa_cf = m.attrs.scaler.encode(cf.y, cf.t, cf.i);
  double pi = pi_flag.value_or(m.pi);
  std::vector<double> x_cf;
  if (m.ladder.variant == cfscm::LadderVariant::LatentMediator)
    x_cf = cfscm::counterfactual_mediator(m.ladder, o.x, pa, pa_cf, pi, seed).x_cf;
  else
    x_cf = cfscm::counterfactual_exogenous(m.ladder, o.x, pa, pa_cf, seed);
  cfscm::Tensor out_img = image_tensor(x_cf, o.image_rows, o.image_cols);
  if (!out_img.all_finite()) throw cfscm::NonFinite("counterfactual not finite");
  cfscm::save_cft1(out, out_img);
  double l1 = 0.0;
  for (std::size_t j = 0; j < o.x.size(); ++j) l1 += std::abs(x_cf[j] - o.x[j]);
  if (!pgm_dir.empty()) {
    fs::create_directories(pgm_dir);
    cfscm::save_pgm(pgm_dir + "/factual.pgm",
                    image_tensor(o.x, o.image_rows, o.image_cols));
    cfscm::save_pgm(pgm_dir + "/counterfactual.pgm", out_img);
    cfscm::Tensor diff = out_img;
    for (std::size_t j = 0; j < diff.numel(); ++j) diff[j] -= o.x[j];
    cfscm::save_pgm_signed(pgm_dir + "/difference.pgm", diff);
  }
  json summary{{"command", "counterfactual"},
               {"null_intervention", do_map.empty()},
               {"do", json::object()},
               {"factual", {{"y", o.attrs.y}, {"t", o.attrs.t}, {"i", o.attrs.i}}},
               {"counterfactual", {{"y", cf.y}, {"t", cf.t}, {"i", cf.i}}},
               {"pi", pi},
               {"l1_change", l1},
               {"out", out},
               {"seed", seed}};
  for (const auto& [k, v] : do_map) summary["do"][k] = v;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_effects(const std::string& model_dir, const std::string& obs,
                const std::string& data_dir, const std::string& do_str,
                std::optional<double> pi_flag, const std::string& out,
                const std::optional<std::uint64_t>& seed_flag) {
  std::uint64_t seed = resolve_seed(seed_flag, nullptr);
  ModelDir m = load_model_dir(model_dir);
  if (m.ladder.variant != cfscm::LadderVariant::LatentMediator)
    throw UsageError("effects: model is not the latent-mediator variant");
  Observation o = resolve_obs(obs, data_dir);
  auto do_map = parse_do(do_str);
  cfscm::AttrTriple cf = m.attrs.counterfactual(o.attrs, do_map);
  std::vector<double> pa =
      m.attrs.scaler.encode(o.attrs.y, o.attrs.t, o.attrs.i);
  std::vector<double> pa_cf = m.attrs.scaler.encode(cf.y, cf.t, cf.i);
  double pi = pi_flag.value_or(m.pi);
  cfscm::EffectReport rep = cfscm::effects(m.ladder, o.x, pa, pa_cf, pi, seed);
  if (rep.telescoping_residual > 1e-9)
    throw cfscm::NonFinite("effects: telescoping identity violated (internal bug)");
  fs::create_directories(out);
  cfscm::save_cft1(out + "/de.cft", rep.de);
  cfscm::save_cft1(out + "/ie.cft", rep.ie);
  cfscm::save_cft1(out + "/te.cft", rep.te);
  json norms{{"de", rep.de_l1},
             {"ie", rep.ie_l1},
             {"te", rep.te_l1},
             {"telescoping_residual", rep.telescoping_residual},
             {"pi", pi},
             {"seed", seed}};
  cfscm::write_json_file(out + "/norms.json", norms);
  std::cout << norms.dump() << "\n";
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& model_dirs,
                 const std::string& data_dir, const std::string& suite,
                 const std::string& out,
                 const std::optional<std::uint64_t>& seed_flag,
                 std::size_t limit) {
  if (suite != "soundness") throw UsageError("--suite: unknown suite " + suite);
  std::uint64_t seed = resolve_seed(seed_flag, nullptr);
  cfscm::Dataset data = load_data(data_dir);
  if (limit > 0 && limit < data.size()) {
    cfscm::Dataset sub;
    sub.image_rows = data.image_rows;
    sub.image_cols = data.image_cols;
    sub.images = cfscm::Tensor({limit, data.pixels()});
    for (std::size_t r = 0; r < limit; ++r) {
      for (std::size_t c = 0; c < data.pixels(); ++c)
        sub.images.at2(r, c) = data.images.at2(r, c);
      sub.y.push_back(data.y[r]);
      sub.t.push_back(data.t[r]);
      sub.i.push_back(data.i[r]);
    }
    data = std::move(sub);
  }
  cfscm::Tensor noises;
  bool have_noises = fs::exists(data_dir + "/noises.cft");
  if (have_noises) noises = cfscm::load_cft1(data_dir + "/noises.cft");

  // Keep every loaded model alive for the adapters.
  std::vector<std::unique_ptr<ModelDir>> models;
  std::vector<std::unique_ptr<cfscm::VqGlmModel>> vq_models;
  std::vector<std::unique_ptr<cfscm::CounterfactualAdapter>> adapters;
  const std::vector<cfscm::ParentPredictor>* preds = nullptr;
  for (const auto& dir : model_dirs) {
    if (fs::exists(dir + "/model.json")) {
      models.push_back(std::make_unique<ModelDir>(load_model_dir(dir)));
      ModelDir& m = *models.back();
      if (!preds) preds = &m.preds;
      if (m.ladder.variant == cfscm::LadderVariant::LatentMediator)
        adapters.push_back(std::make_unique<cfscm::LadderMediatorAdapter>(
            &m.ladder, &m.attrs.scaler, m.pi,
            "mediator:" + fs::path(dir).filename().string()));
      else
        adapters.push_back(std::make_unique<cfscm::LadderExogenousAdapter>(
            &m.ladder, &m.attrs.scaler));
    } else if (fs::exists(dir + "/manifest.json")) {
      vq_models.push_back(
          std::make_unique<cfscm::VqGlmModel>(cfscm::load_vq_glm(dir)));
      adapters.push_back(
          std::make_unique<cfscm::VqGlmAdapter>(vq_models.back().get()));
    } else {
      throw DataError("evaluate: unrecognized model directory " + dir);
    }
  }
  if (!preds) throw DataError("evaluate: need at least one trained model with predictors");

  cfscm::AttrCfFn attr_cf = cfscm::ground_truth_attr_cf();
  std::unique_ptr<cfscm::OracleAdapter> oracle;
  if (have_noises) oracle = std::make_unique<cfscm::OracleAdapter>(&noises);
  cfscm::IgnoreInterventionAdapter control;

  std::vector<cfscm::SoundnessReport> reports;
  if (oracle)
    reports.push_back(cfscm::evaluate_adapter(*oracle, data, *preds, attr_cf,
                                              seed, oracle.get()));
  reports.push_back(cfscm::evaluate_adapter(control, data, *preds, attr_cf,
                                            seed, oracle.get()));
  for (const auto& a : adapters)
    reports.push_back(
        cfscm::evaluate_adapter(*a, data, *preds, attr_cf, seed, oracle.get()));

  fs::create_directories(out);
  cfscm::write_reports_json(out + "/report.json", reports);
  cfscm::write_reports_csv(out + "/report.csv", reports);
  std::cout << json{{"command", "evaluate"},
                    {"out", out},
                    {"models", reports.size()},
                    {"rows", data.size()},
                    {"seed", seed}}
                   .dump()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// glm subcommands.
// ---------------------------------------------------------------------------

cfscm::DesignMatrix design_from_stats(const json& stats,
                                      const std::vector<std::vector<double>>& rows) {
  cfscm::DesignMatrix d;
  d.col_mean = stats.at("mean").get<std::vector<double>>();
  d.col_std = stats.at("std").get<std::vector<double>>();
  d.P = d.encode_rows(rows);
  return d;
}

int cmd_glm_fit(const std::string& data_dir, const std::string& z_path,
                const std::string& p_path, const std::string& out, double delta,
                bool no_standardize, const json& cfg,
                const std::optional<std::uint64_t>& seed_flag) {
  std::uint64_t seed = resolve_seed(seed_flag, &cfg);
  if (!data_dir.empty()) {
    // Full latent pipeline: autoencoder + codebook + GLM on a dataset.
    check_keys(cfg, {"seed", "latent_dim", "codebook_entries",
                     "codebook_iterations", "delta"},
               "glm fit config");
    std::size_t latent_dim = cfg.value("latent_dim", 16);
    std::size_t n_entries = cfg.value("codebook_entries", 64);
    std::size_t iters = cfg.value("codebook_iterations", 25);
    if (latent_dim % 2) throw UsageError("glm fit: latent_dim must be even");
    cfscm::Dataset data = load_data(data_dir);
    if (data.size() <= latent_dim)
      throw DataError("glm fit: need more rows than latent dimensions");
    cfscm::VqGlmModel m;
    m.ae = cfscm::fit_linear_autoencoder(data.images, latent_dim, seed);
    std::vector<std::vector<double>> halves, latents;
    for (std::size_t r = 0; r < data.size(); ++r) {
      std::vector<double> z = m.ae.encode(data.image_vec(r));
      halves.emplace_back(z.begin(), z.begin() + latent_dim / 2);
      halves.emplace_back(z.begin() + latent_dim / 2, z.end());
      latents.push_back(std::move(z));
    }
    m.codebook = cfscm::fit_codebook(halves, n_entries, iters, seed);
    std::vector<std::vector<double>> parents;
    cfscm::Tensor Z({data.size(), latent_dim});
    for (std::size_t r = 0; r < data.size(); ++r) {
      parents.push_back(cfscm::vq_parent_row({data.y[r], data.t[r], data.i[r]}));
      std::vector<double> q = cfscm::quantize_latent(m.codebook, latents[r]);
      for (std::size_t c = 0; c < latent_dim; ++c) Z.at2(r, c) = q[c];
    }
    m.design = cfscm::DesignMatrix::build(parents);
    m.glm.delta = cfg.value("delta", delta);
    m.glm.B = cfscm::glm_fit(Z, m.design.P, m.glm.delta);
    cfscm::save_vq_glm(out, m);
    std::cout << json{{"command", "glm fit"},
                      {"out", out},
                      {"latent_dim", latent_dim},
                      {"codebook_entries", m.codebook.size()},
                      {"seed", seed}}
                     .dump()
              << "\n";
    return 0;
  }
  if (z_path.empty() || p_path.empty())
    throw UsageError("glm fit: need either --data or both --z and --p");
  cfscm::Tensor Z = cfscm::load_cft1(z_path);
  auto rows = tensor_rows(read_csv_matrix(p_path));
  cfscm::DesignMatrix d = cfscm::DesignMatrix::build(rows);
  if (no_standardize) {
    d.col_mean.assign(d.col_mean.size(), 0.0);
    d.col_std.assign(d.col_std.size(), 1.0);
    d.P = d.encode_rows(rows);
  }
  cfscm::Tensor B = cfscm::glm_fit(Z, d.P, delta);
  fs::create_directories(out);
  cfscm::save_cft1(out + "/b.cft", B);
  cfscm::write_json_file(out + "/p_stats.json",
                         json{{"mean", d.col_mean}, {"std", d.col_std}});
  std::cout << json{{"command", "glm fit"}, {"out", out}, {"delta", delta}}.dump()
            << "\n";
  return 0;
}

int cmd_glm_abduct(const std::string& b_path, const std::string& z_path,
                   const std::string& p_path, const std::string& stats_path,
                   const std::string& out) {
  cfscm::Tensor B = cfscm::load_cft1(b_path);
  cfscm::Tensor Z = cfscm::load_cft1(z_path);
  json stats = cfscm::read_json_file(stats_path);
  cfscm::DesignMatrix d = design_from_stats(stats, tensor_rows(read_csv_matrix(p_path)));
  cfscm::Tensor U = cfscm::glm_abduct(B, Z, d.P);
  cfscm::save_cft1(out, U);
  std::cout << json{{"command", "glm abduct"}, {"out", out}}.dump() << "\n";
  return 0;
}

int cmd_glm_predict(const std::string& b_path, const std::string& u_path,
                    const std::string& p_path, const std::string& stats_path,
                    const std::string& out) {
  cfscm::Tensor B = cfscm::load_cft1(b_path);
  cfscm::Tensor U = cfscm::load_cft1(u_path);
  json stats = cfscm::read_json_file(stats_path);
  cfscm::DesignMatrix d = design_from_stats(stats, tensor_rows(read_csv_matrix(p_path)));
  cfscm::Tensor Zcf = cfscm::glm_predict(B, U, d.P);
  cfscm::save_cft1(out, Zcf);
  std::cout << json{{"command", "glm predict"}, {"out", out}}.dump() << "\n";
  return 0;
}

int cmd_glm_counterfactual(const std::string& model_dir, const std::string& obs,
                           const std::string& data_dir, const std::string& do_str,
                           const std::string& out, const std::string& pgm_dir) {
  cfscm::VqGlmModel m = cfscm::load_vq_glm(model_dir);
  Observation o = resolve_obs(obs, data_dir);
  auto do_map = parse_do(do_str);
  // Downstream attribute recompute uses the ground-truth graph shape via
  // the synthetic mechanisms (the GLM has no attribute model of its own).
  cfscm::AttrTriple cf = cfscm::ground_truth_attr_cf()(o.attrs, do_map);
  std::vector<double> x_cf = cfscm::latent_counterfactual(
      m, o.x, cfscm::vq_parent_row(o.attrs), cfscm::vq_parent_row(cf));
  cfscm::Tensor out_img = image_tensor(x_cf, o.image_rows, o.image_cols);
  if (!out_img.all_finite()) throw cfscm::NonFinite("counterfactual not finite");
  cfscm::save_cft1(out, out_img);
  if (!pgm_dir.empty()) {
    fs::create_directories(pgm_dir);
    cfscm::save_pgm(pgm_dir + "/factual.pgm",
                    image_tensor(o.x, o.image_rows, o.image_cols));
    cfscm::save_pgm(pgm_dir + "/counterfactual.pgm", out_img);
  }
  json summary{{"command", "glm counterfactual"},
               {"null_intervention", do_map.empty()},
               {"counterfactual", {{"y", cf.y}, {"t", cf.t}, {"i", cf.i}}},
               {"out", out}};
  std::cout << summary.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual engine: synthetic data, hierarchical "
               "counterfactual models, constrained fine-tuning, and the "
               "closed-form latent GLM pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed_flag;
  app.add_option("--seed", seed_flag,
                 "Seed (precedence: this flag > CFSCM_SEED > config)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  std::size_t synth_n = 1000;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--n", synth_n, "Number of samples");

  // train
  auto* train = app.add_subcommand("train", "Train attribute SCM, predictors, and ladder model");
  std::string train_cfg, train_data, train_out;
  train->add_option("--config", train_cfg, "JSON config");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Output model directory")->required();

  // finetune
  auto* finetune = app.add_subcommand("finetune", "Constrained counterfactual fine-tuning");
  std::string ft_model, ft_cfg, ft_data, ft_out;
  finetune->add_option("--model", ft_model, "Pretrained model directory")->required();
  finetune->add_option("--config", ft_cfg, "JSON config");
  finetune->add_option("--data", ft_data, "Dataset directory")->required();
  finetune->add_option("--out", ft_out, "Output model directory")->required();

  // counterfactual
  auto* cfc = app.add_subcommand("counterfactual", "Generate a counterfactual image");
  std::string cf_model, cf_obs, cf_data, cf_do, cf_out, cf_pgm;
  std::optional<double> cf_pi;
  cfc->add_option("--model", cf_model, "Model directory")->required();
  cfc->add_option("--obs", cf_obs, "Sample id (with --data) or observation JSON file")->required();
  cfc->add_option("--data", cf_data, "Dataset directory for --obs <id>");
  cfc->add_option("--do", cf_do, "Interventions: name=value[,name=value]");
  cfc->add_option("--pi", cf_pi, "Mediator mixing weight in [0,1]");
  cfc->add_option("--out", cf_out, "Output CFT1 path")->required();
  cfc->add_option("--pgm", cf_pgm, "Optional directory for PGM renderings");

  // effects
  auto* eff = app.add_subcommand("effects", "Direct/indirect/total effects (mediator models)");
  std::string ef_model, ef_obs, ef_data, ef_do, ef_out;
  std::optional<double> ef_pi;
  eff->add_option("--model", ef_model, "Model directory")->required();
  eff->add_option("--obs", ef_obs, "Sample id or observation JSON file")->required();
  eff->add_option("--data", ef_data, "Dataset directory for --obs <id>");
  eff->add_option("--do", ef_do, "Interventions");
  eff->add_option("--pi", ef_pi, "Mediator mixing weight");
  eff->add_option("--out", ef_out, "Output directory")->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run the soundness suite over models and controls");
  std::vector<std::string> ev_models;
  std::string ev_data, ev_suite = "soundness", ev_out;
  std::size_t ev_limit = 0;
  ev->add_option("--models", ev_models, "Model directories")->required();
  ev->add_option("--dataset", ev_data, "Dataset directory")->required();
  ev->add_option("--suite", ev_suite, "Suite name (soundness)");
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--limit", ev_limit, "Evaluate only the first N rows (0 = all)");

  // glm
  auto* glm = app.add_subcommand("glm", "Closed-form latent GLM pipeline");
  glm->require_subcommand(1);
  auto* gfit = glm->add_subcommand("fit", "Fit B from tensors, or the full latent model from a dataset");
  std::string gf_data, gf_z, gf_p, gf_out, gf_cfg;
  double gf_delta = 1e-8;
  gfit->add_option("--data", gf_data, "Dataset directory (full pipeline mode)");
  gfit->add_option("--z", gf_z, "Latents CFT1 (tensor mode)");
  gfit->add_option("--p", gf_p, "Raw parent CSV (tensor mode)");
  gfit->add_option("--config", gf_cfg, "JSON config (full pipeline mode)");
  gfit->add_option("--delta", gf_delta, "Ridge jitter on P^T P");
  bool gf_raw = false;
  gfit->add_flag("--no-standardize", gf_raw,
                 "Use raw parent columns (tensor mode)");
  gfit->add_option("--out", gf_out, "Output directory")->required();
  auto* gab = glm->add_subcommand("abduct", "U = Z - P B");
  std::string ga_b, ga_z, ga_p, ga_stats, ga_out;
  gab->add_option("--b", ga_b, "Coefficients CFT1")->required();
  gab->add_option("--z", ga_z, "Latents CFT1")->required();
  gab->add_option("--p", ga_p, "Raw parent CSV")->required();
  gab->add_option("--stats", ga_stats, "Standardization sidecar JSON")->required();
  gab->add_option("--out", ga_out, "Output CFT1 path")->required();
  auto* gpr = glm->add_subcommand("predict", "Z_cf = U + P_cf B");
  std::string gp_b, gp_u, gp_p, gp_stats, gp_out;
  gpr->add_option("--b", gp_b, "Coefficients CFT1")->required();
  gpr->add_option("--u", gp_u, "Residuals CFT1")->required();
  gpr->add_option("--p", gp_p, "Counterfactual raw parent CSV")->required();
  gpr->add_option("--stats", gp_stats, "Standardization sidecar JSON")->required();
  gpr->add_option("--out", gp_out, "Output CFT1 path")->required();
  auto* gcf = glm->add_subcommand("counterfactual", "End-to-end latent counterfactual");
  std::string gc_model, gc_obs, gc_data, gc_do, gc_out, gc_pgm;
  gcf->add_option("--model", gc_model, "vq-glm model directory")->required();
  gcf->add_option("--obs", gc_obs, "Sample id or observation JSON file")->required();
  gcf->add_option("--data", gc_data, "Dataset directory for --obs <id>");
  gcf->add_option("--do", gc_do, "Interventions");
  gcf->add_option("--out", gc_out, "Output CFT1 path")->required();
  gcf->add_option("--pgm", gc_pgm, "Optional directory for PGM renderings");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(synth_out, synth_n, seed_flag);
    if (*train) return cmd_train(train_cfg, train_data, train_out, seed_flag);
    if (*finetune)
      return cmd_finetune(ft_model, ft_cfg, ft_data, ft_out, seed_flag);
    if (*cfc)
      return cmd_counterfactual(cf_model, cf_obs, cf_data, cf_do, cf_pi, cf_out,
                                cf_pgm, seed_flag);
    if (*eff)
      return cmd_effects(ef_model, ef_obs, ef_data, ef_do, ef_pi, ef_out,
                         seed_flag);
    if (*ev)
      return cmd_evaluate(ev_models, ev_data, ev_suite, ev_out, seed_flag,
                          ev_limit);
    if (*glm) {
      json gcfg = gf_cfg.empty() ? json::object() : load_config(gf_cfg);
      if (*gfit)
        return cmd_glm_fit(gf_data, gf_z, gf_p, gf_out, gf_delta, gf_raw, gcfg,
                           seed_flag);
      if (*gab) return cmd_glm_abduct(ga_b, ga_z, ga_p, ga_stats, ga_out);
      if (*gpr) return cmd_glm_predict(gp_b, gp_u, gp_p, gp_stats, gp_out);
      if (*gcf)
        return cmd_glm_counterfactual(gc_model, gc_obs, gc_data, gc_do, gc_out,
                                      gc_pgm);
    }
    std::cerr << "error: no command\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cfscm::VariantMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const cfscm::NonFinite& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const cfscm::DivergenceError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const cfscm::SingularMatrix& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const cfscm::RankDeficient& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const cfscm::ZeroVariance& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
