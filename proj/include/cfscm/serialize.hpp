#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfscm/cf_train.hpp"
#include "cfscm/dataset.hpp"
#include "cfscm/ladder.hpp"
#include "cfscm/tensor.hpp"
#include "cfscm/vq_glm.hpp"

namespace cfscm {

using json = nlohmann::json;

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_json_file: cannot open " + path);
  os << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_json_file: cannot open " + path);
  return json::parse(is);
}

inline Tensor vec_tensor(const std::vector<double>& v) {
  return Tensor({v.size()}, v);
}

// ---------------------------------------------------------------------------
// PaScaler
// ---------------------------------------------------------------------------

inline json scaler_to_json(const PaScaler& s) {
  return json{{"t_mean", s.t_mean},
              {"t_std", s.t_std},
              {"i_mean", s.i_mean},
              {"i_std", s.i_std}};
}

inline PaScaler scaler_from_json(const json& j) {
  PaScaler s;
  s.t_mean = j.at("t_mean");
  s.t_std = j.at("t_std");
  s.i_mean = j.at("i_mean");
  s.i_std = j.at("i_std");
  return s;
}

// ---------------------------------------------------------------------------
// Ladder model directory: manifest.json + ladder_params.cft.
// ---------------------------------------------------------------------------

inline void save_ladder(const std::string& dir, const LadderModel& m) {
  std::filesystem::create_directories(dir);
  json j{{"kind", "ladder"},
         {"variant", m.variant == LadderVariant::LatentMediator ? "mediator"
                                                                : "exogenous"},
         {"x_dim", m.dims.x_dim},
         {"pa_dim", m.dims.pa_dim},
         {"z", m.dims.z},
         {"h_dim", m.dims.h_dim},
         {"hidden", m.dims.hidden}};
  write_json_file(dir + "/manifest.json", j);
  save_cft1(dir + "/ladder_params.cft", vec_tensor(m.flat_params()));
}

inline LadderVariant parse_variant(const std::string& s) {
  if (s == "exogenous") return LadderVariant::ExogenousPrior;
  if (s == "mediator") return LadderVariant::LatentMediator;
  throw std::invalid_argument("unknown ladder variant: " + s);
}

inline LadderModel load_ladder(const std::string& dir) {
  json j = read_json_file(dir + "/manifest.json");
  if (j.at("kind") != "ladder")
    throw std::runtime_error("load_ladder: not a ladder model directory");
  LadderDims d;
  d.x_dim = j.at("x_dim");
  d.pa_dim = j.at("pa_dim");
  d.z = j.at("z").get<std::vector<std::size_t>>();
  d.h_dim = j.at("h_dim");
  d.hidden = j.at("hidden");
  LadderModel m = LadderModel::create(parse_variant(j.at("variant")), d, 0);
  Tensor flat = load_cft1(dir + "/ladder_params.cft");
  m.set_flat_params(flat.data);
  return m;
}

// ---------------------------------------------------------------------------
// Parent predictors.
// ---------------------------------------------------------------------------

inline void save_predictors(const std::string& dir,
                            const std::vector<ParentPredictor>& preds) {
  std::filesystem::create_directories(dir);
  json list = json::array();
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto& p = preds[k];
    list.push_back(json{
        {"name", p.name},
        {"kind", p.kind == ParentKind::Categorical ? "categorical" : "continuous"},
        {"parent_index", p.parent_index},
        {"in", p.net.in_dim()},
        {"out", p.net.out_dim()},
        {"hidden", p.net.hidden_dim()},
        {"file", "predictor_" + std::to_string(k) + ".cft"}});
    save_cft1(dir + "/predictor_" + std::to_string(k) + ".cft",
              vec_tensor(p.net.params()));
  }
  write_json_file(dir + "/predictors.json", json{{"predictors", list}});
}

inline std::vector<ParentPredictor> load_predictors(const std::string& dir) {
  json j = read_json_file(dir + "/predictors.json");
  std::vector<ParentPredictor> preds;
  for (const auto& e : j.at("predictors")) {
    ParentPredictor p;
    p.name = e.at("name");
    p.kind = e.at("kind") == "categorical" ? ParentKind::Categorical
                                           : ParentKind::Continuous;
    p.parent_index = e.at("parent_index");
    p.net = ParamFn(e.at("in"), e.at("out"), e.at("hidden"));
    Tensor flat = load_cft1(dir + "/" + e.at("file").get<std::string>());
    if (flat.numel() != p.net.param_count())
      throw std::runtime_error("load_predictors: parameter blob size mismatch");
    p.net.params() = flat.data;
    preds.push_back(std::move(p));
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Attribute SCM.
// ---------------------------------------------------------------------------

inline void save_attribute_model(const std::string& dir,
                                 const AttributeModel& m) {
  std::filesystem::create_directories(dir);
  json j{{"kind", "attributes"},
         {"scaler", scaler_to_json(m.scaler)},
         {"y_logits", m.y_logits},
         {"i_hidden", m.i_mech.loc_net().hidden_dim()}};
  write_json_file(dir + "/attributes.json", j);
  save_cft1(dir + "/attr_t_loc.cft", vec_tensor(m.t_mech.loc_net().params()));
  save_cft1(dir + "/attr_t_logscale.cft",
            vec_tensor(m.t_mech.logscale_net().params()));
  save_cft1(dir + "/attr_i_loc.cft", vec_tensor(m.i_mech.loc_net().params()));
  save_cft1(dir + "/attr_i_logscale.cft",
            vec_tensor(m.i_mech.logscale_net().params()));
}

inline AttributeModel load_attribute_model(const std::string& dir) {
  json j = read_json_file(dir + "/attributes.json");
  AttributeModel m;
  m.scaler = scaler_from_json(j.at("scaler"));
  m.y_logits = j.at("y_logits").get<std::vector<double>>();
  std::size_t i_hidden = j.at("i_hidden");
  m.i_mech = AffineFlowMechanism(1, i_hidden);
  m.t_mech.loc_net().params() = load_cft1(dir + "/attr_t_loc.cft").data;
  m.t_mech.logscale_net().params() = load_cft1(dir + "/attr_t_logscale.cft").data;
  m.i_mech.loc_net().params() = load_cft1(dir + "/attr_i_loc.cft").data;
  m.i_mech.logscale_net().params() = load_cft1(dir + "/attr_i_logscale.cft").data;
  return m;
}

// ---------------------------------------------------------------------------
// VQ+GLM model.
// ---------------------------------------------------------------------------

inline void save_vq_glm(const std::string& dir, const VqGlmModel& m) {
  std::filesystem::create_directories(dir);
  json j{{"kind", "vq-glm"},
         {"codebook_dim", m.codebook.dim},
         {"design_mean", m.design.col_mean},
         {"design_std", m.design.col_std},
         {"gamma", m.glm.gamma},
         {"delta", m.glm.delta}};
  write_json_file(dir + "/manifest.json", j);
  save_cft1(dir + "/encoder.cft", m.ae.enc);
  save_cft1(dir + "/decoder.cft", m.ae.dec);
  Tensor cb({m.codebook.entries.size(), m.codebook.dim});
  for (std::size_t k = 0; k < m.codebook.entries.size(); ++k)
    for (std::size_t d = 0; d < m.codebook.dim; ++d)
      cb.at2(k, d) = m.codebook.entries[k][d];
  save_cft1(dir + "/codebook.cft", cb);
  save_cft1(dir + "/glm_b.cft", m.glm.B);
  if (m.glm.B_momentum.numel() > 0)
    save_cft1(dir + "/glm_b_momentum.cft", m.glm.B_momentum);
}

inline VqGlmModel load_vq_glm(const std::string& dir) {
  json j = read_json_file(dir + "/manifest.json");
  if (j.at("kind") != "vq-glm")
    throw std::runtime_error("load_vq_glm: not a vq-glm model directory");
  VqGlmModel m;
  m.ae.enc = load_cft1(dir + "/encoder.cft");
  m.ae.dec = load_cft1(dir + "/decoder.cft");
  Tensor cb = load_cft1(dir + "/codebook.cft");
  m.codebook.dim = j.at("codebook_dim");
  for (std::size_t k = 0; k < cb.shape[0]; ++k) {
    std::vector<double> e(m.codebook.dim);
    for (std::size_t d = 0; d < m.codebook.dim; ++d) e[d] = cb.at2(k, d);
    m.codebook.entries.push_back(std::move(e));
  }
  m.design.col_mean = j.at("design_mean").get<std::vector<double>>();
  m.design.col_std = j.at("design_std").get<std::vector<double>>();
  m.glm.B = load_cft1(dir + "/glm_b.cft");
  m.glm.gamma = j.at("gamma");
  m.glm.delta = j.at("delta");
  if (std::filesystem::exists(dir + "/glm_b_momentum.cft"))
    m.glm.B_momentum = load_cft1(dir + "/glm_b_momentum.cft");
  return m;
}

}  // namespace cfscm
