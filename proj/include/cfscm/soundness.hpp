#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfscm/cf_train.hpp"
#include "cfscm/dataset.hpp"
#include "cfscm/ladder.hpp"
#include "cfscm/rng.hpp"
#include "cfscm/synthpop.hpp"
#include "cfscm/vq_glm.hpp"

namespace cfscm {

struct ZeroVariance : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Adapter contract: any counterfactual image generator plugs into the same
// harness. `row` identifies the observation for exact-abduction adapters
// (the oracle keeps per-row noise records); learned adapters ignore it.
// ---------------------------------------------------------------------------

class CounterfactualAdapter {
 public:
  virtual ~CounterfactualAdapter() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> counterfactual(std::size_t row,
                                             const std::vector<double>& x,
                                             const AttrTriple& fact,
                                             const AttrTriple& cf,
                                             std::uint64_t seed) const = 0;
};

// Recomputes the full counterfactual attribute triple for an intervention
// map; the ground truth and the learned attribute SCM both fit this shape.
using AttrCfFn = std::function<AttrTriple(
    const AttrTriple&, const std::map<std::string, double>&)>;

inline AttrCfFn ground_truth_attr_cf() {
  return [](const AttrTriple& fact, const std::map<std::string, double>& do_map) {
    // The ground-truth downstream recompute needs the noise u_i; recover it
    // by inverting the intensity mechanism at the factual attributes.
    double s = (fact.i - 64.0) / 191.0;
    double u_i = (std::log(s / (1.0 - s)) - (2.0 * fact.t - 5.0)) / 0.5;
    AttrTriple cf = fact;
    auto it = do_map.find("y");
    if (it != do_map.end()) cf.y = static_cast<std::size_t>(it->second);
    it = do_map.find("t");
    bool t_changed = it != do_map.end();
    if (t_changed) cf.t = it->second;
    it = do_map.find("i");
    if (it != do_map.end())
      cf.i = it->second;
    else if (t_changed)
      cf.i = synthpop::mech_i(cf.t, u_i);
    return cf;
  };
}

inline AttrCfFn attr_cf_from_model(const AttributeModel& m) {
  return [&m](const AttrTriple& fact, const std::map<std::string, double>& do_map) {
    return m.counterfactual(fact, do_map);
  };
}

// ---------------------------------------------------------------------------
// Concrete adapters.
// ---------------------------------------------------------------------------

class OracleAdapter final : public CounterfactualAdapter {
 public:
  explicit OracleAdapter(const Tensor* noises) : noises_(noises) {}
  std::string name() const override { return "oracle"; }
  std::vector<double> counterfactual(std::size_t row, const std::vector<double>&,
                                     const AttrTriple&, const AttrTriple& cf,
                                     std::uint64_t) const override {
    synthpop::Noises n = synthpop::unpack_noises(*noises_, row);
    Tensor img = synthpop::image_under(
        n, {{"y", static_cast<double>(cf.y)}, {"t", cf.t}, {"i", cf.i}});
    return img.data;
  }

 private:
  const Tensor* noises_;
};

// Negative control: pretends to intervene but returns the observation.
class IgnoreInterventionAdapter final : public CounterfactualAdapter {
 public:
  std::string name() const override { return "ignore-control"; }
  std::vector<double> counterfactual(std::size_t, const std::vector<double>& x,
                                     const AttrTriple&, const AttrTriple&,
                                     std::uint64_t) const override {
    return x;
  }
};

class LadderExogenousAdapter final : public CounterfactualAdapter {
 public:
  LadderExogenousAdapter(const LadderModel* m, const PaScaler* s)
      : m_(m), s_(s) {}
  std::string name() const override { return "ladder-exogenous"; }
  std::vector<double> counterfactual(std::size_t, const std::vector<double>& x,
                                     const AttrTriple& fact, const AttrTriple& cf,
                                     std::uint64_t seed) const override {
    return counterfactual_exogenous(*m_, x, s_->encode(fact.y, fact.t, fact.i),
                                    s_->encode(cf.y, cf.t, cf.i), seed);
  }

 private:
  const LadderModel* m_;
  const PaScaler* s_;
};

class LadderMediatorAdapter final : public CounterfactualAdapter {
 public:
  LadderMediatorAdapter(const LadderModel* m, const PaScaler* s, double pi,
                        std::string label = "ladder-mediator")
      : m_(m), s_(s), pi_(pi), label_(std::move(label)) {}
  std::string name() const override { return label_; }
  std::vector<double> counterfactual(std::size_t, const std::vector<double>& x,
                                     const AttrTriple& fact, const AttrTriple& cf,
                                     std::uint64_t seed) const override {
    return counterfactual_mediator(*m_, x, s_->encode(fact.y, fact.t, fact.i),
                                   s_->encode(cf.y, cf.t, cf.i), pi_, seed)
        .x_cf;
  }

 private:
  const LadderModel* m_;
  const PaScaler* s_;
  double pi_;
  std::string label_;
};

// Raw parent row for the GLM design: two class indicators (bar is the
// reference level, keeping the design full-rank next to the intercept),
// thickness, intensity.
inline std::vector<double> vq_parent_row(const AttrTriple& a) {
  return {a.y == 1 ? 1.0 : 0.0, a.y == 2 ? 1.0 : 0.0, a.t, a.i};
}

class VqGlmAdapter final : public CounterfactualAdapter {
 public:
  explicit VqGlmAdapter(const VqGlmModel* m) : m_(m) {}
  std::string name() const override { return "vq-glm"; }
  std::vector<double> counterfactual(std::size_t, const std::vector<double>& x,
                                     const AttrTriple& fact, const AttrTriple& cf,
                                     std::uint64_t) const override {
    return latent_counterfactual(*m_, x, vq_parent_row(fact), vq_parent_row(cf));
  }

 private:
  const VqGlmModel* m_;
};

// ---------------------------------------------------------------------------
// Intervention sampling shared by the metrics.
// ---------------------------------------------------------------------------

inline const char* parent_name(std::size_t k) {
  static const char* kNames[3] = {"y", "t", "i"};
  if (k > 2) throw std::out_of_range("parent_name: unknown parent index");
  return kNames[k];
}

struct InterventionDraw {
  std::map<std::string, double> do_map;
  AttrTriple cf;
  double target = 0.0;  // the intervened raw value
};

// New value for parent k resampled from the empirical marginal (a uniformly
// drawn training row); downstream attributes recomputed through attr_cf.
inline InterventionDraw sample_intervention(const Dataset& data, std::size_t row,
                                            std::size_t k, const AttrCfFn& attr_cf,
                                            std::uint64_t seed) {
  const std::size_t n = data.size();
  NoiseKey key{seed, 0x50FD + k, row};
  auto j = static_cast<std::size_t>(key.uniform(0) * static_cast<double>(n));
  j = std::min(j, n - 1);
  InterventionDraw d;
  d.target = k == 0 ? static_cast<double>(data.y[j])
                    : (k == 1 ? data.t[j] : data.i[j]);
  d.do_map = {{parent_name(k), d.target}};
  d.cf = attr_cf({data.y[row], data.t[row], data.i[row]}, d.do_map);
  return d;
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

// Mean per-sample L1 between x and its m-fold null counterfactual.
inline double composition_metric(const CounterfactualAdapter& adapter,
                                 const Dataset& data, std::size_t m,
                                 std::uint64_t seed = 0) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    AttrTriple a{data.y[r], data.t[r], data.i[r]};
    std::vector<double> x = data.image_vec(r);
    std::vector<double> cur = x;
    for (std::size_t step = 0; step < m; ++step)
      cur = adapter.counterfactual(r, cur, a, a, seed);
    double l1 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) l1 += std::abs(cur[j] - x[j]);
    total += l1;
  }
  return total / static_cast<double>(data.size());
}

// Continuous parent: median |psi_k(x~) - pa~_k|. Categorical: accuracy.
inline double effectiveness_metric(const CounterfactualAdapter& adapter,
                                   const ParentPredictor& pred,
                                   const Dataset& data, std::size_t k,
                                   const AttrCfFn& attr_cf, std::uint64_t seed) {
  if (data.size() == 0)
    throw std::invalid_argument("effectiveness_metric: empty dataset");
  std::vector<double> errs;
  double hits = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    InterventionDraw d = sample_intervention(data, r, k, attr_cf, seed);
    AttrTriple fact{data.y[r], data.t[r], data.i[r]};
    std::vector<double> x_cf =
        adapter.counterfactual(r, data.image_vec(r), fact, d.cf, seed);
    double p = pred.predict(x_cf);
    if (pred.kind == ParentKind::Categorical)
      hits += p == d.target ? 1.0 : 0.0;
    else
      errs.push_back(std::abs(p - d.target));
  }
  if (pred.kind == ParentKind::Categorical)
    return hits / static_cast<double>(data.size());
  std::sort(errs.begin(), errs.end());
  std::size_t n = errs.size();
  return n % 2 ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
}

// Cycle diagnostic: do(pa~) then do(pa) and compare with x (mean L1).
inline double reversibility_metric(const CounterfactualAdapter& adapter,
                                   const Dataset& data, std::size_t k,
                                   const AttrCfFn& attr_cf, std::uint64_t seed) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    InterventionDraw d = sample_intervention(data, r, k, attr_cf, seed);
    AttrTriple fact{data.y[r], data.t[r], data.i[r]};
    std::vector<double> x = data.image_vec(r);
    std::vector<double> fwd = adapter.counterfactual(r, x, fact, d.cf, seed);
    std::vector<double> back = adapter.counterfactual(r, fwd, d.cf, fact, seed);
    double l1 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) l1 += std::abs(back[j] - x[j]);
    total += l1;
  }
  return total / static_cast<double>(data.size());
}

// Mean per-sample L1 between the adapter's counterfactuals and a reference
// adapter's (typically the oracle) under the same interventions.
inline double oracle_error_metric(const CounterfactualAdapter& adapter,
                                  const CounterfactualAdapter& reference,
                                  const Dataset& data, std::size_t k,
                                  const AttrCfFn& attr_cf, std::uint64_t seed) {
  if (data.size() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    InterventionDraw d = sample_intervention(data, r, k, attr_cf, seed);
    AttrTriple fact{data.y[r], data.t[r], data.i[r]};
    std::vector<double> x = data.image_vec(r);
    std::vector<double> a = adapter.counterfactual(r, x, fact, d.cf, seed);
    std::vector<double> b = reference.counterfactual(r, x, fact, d.cf, seed);
    double l1 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) l1 += std::abs(a[j] - b[j]);
    total += l1;
  }
  return total / static_cast<double>(data.size());
}

inline double cohens_d(const std::vector<double>& a,
                       const std::vector<double>& b) {
  const std::size_t na = a.size(), nb = b.size();
  if (na < 2 || nb < 2)
    throw std::invalid_argument("cohens_d: need at least 2 samples per group");
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto ssq = [&](const std::vector<double>& v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
  };
  double ma = mean(a), mb = mean(b);
  double pooled = (ssq(a, ma) + ssq(b, mb)) / static_cast<double>(na + nb - 2);
  if (pooled <= 0.0) throw ZeroVariance("cohens_d: pooled variance is zero");
  return (ma - mb) / std::sqrt(pooled);
}

// Predictor-extracted attribute distributions of the adapter's and the
// reference's counterfactual populations under identical interventions.
inline double cohens_d_attribute(const CounterfactualAdapter& adapter,
                                 const CounterfactualAdapter& reference,
                                 const ParentPredictor& pred, const Dataset& data,
                                 std::size_t k, const AttrCfFn& attr_cf,
                                 std::uint64_t seed) {
  std::vector<double> pa, pb;
  for (std::size_t r = 0; r < data.size(); ++r) {
    InterventionDraw d = sample_intervention(data, r, k, attr_cf, seed);
    AttrTriple fact{data.y[r], data.t[r], data.i[r]};
    std::vector<double> x = data.image_vec(r);
    pa.push_back(pred.predict(adapter.counterfactual(r, x, fact, d.cf, seed)));
    pb.push_back(pred.predict(reference.counterfactual(r, x, fact, d.cf, seed)));
  }
  return cohens_d(pa, pb);
}

// ---------------------------------------------------------------------------
// Report.
// ---------------------------------------------------------------------------

struct SoundnessReport {
  std::string model;
  std::map<std::size_t, double> composition;     // m -> mean L1
  std::map<std::string, double> effectiveness;   // parent -> metric
  std::map<std::string, std::string> eff_kind;   // parent -> "mae" | "accuracy"
  double reversibility = 0.0;
  bool has_oracle_error = false;
  double oracle_l1 = 0.0;
  std::map<std::string, double> cohens;  // attribute -> d vs reference
};

inline SoundnessReport evaluate_adapter(
    const CounterfactualAdapter& adapter, const Dataset& data,
    const std::vector<ParentPredictor>& preds, const AttrCfFn& attr_cf,
    std::uint64_t seed, const CounterfactualAdapter* reference = nullptr,
    const std::vector<std::size_t>& comp_m = {1, 5, 10}) {
  SoundnessReport rep;
  rep.model = adapter.name();
  for (std::size_t m : comp_m)
    rep.composition[m] = composition_metric(adapter, data, m, seed);
  for (std::size_t k = 0; k < preds.size(); ++k) {
    rep.effectiveness[preds[k].name] =
        effectiveness_metric(adapter, preds[k], data, k, attr_cf, seed);
    rep.eff_kind[preds[k].name] =
        preds[k].kind == ParentKind::Categorical ? "accuracy" : "mae";
  }
  rep.reversibility = reversibility_metric(adapter, data, 1, attr_cf, seed);
  if (reference) {
    rep.has_oracle_error = true;
    rep.oracle_l1 =
        oracle_error_metric(adapter, *reference, data, 1, attr_cf, seed);
    for (std::size_t k = 0; k < preds.size(); ++k) {
      if (preds[k].kind != ParentKind::Continuous) continue;
      rep.cohens[preds[k].name] = cohens_d_attribute(
          adapter, *reference, preds[k], data, k, attr_cf, seed);
    }
  }
  return rep;
}

inline void write_reports_json(const std::string& path,
                               const std::vector<SoundnessReport>& reports) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_reports_json: cannot open " + path);
  os.precision(17);
  os << "[\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    os << "  {\n    \"model\": \"" << r.model << "\",\n    \"composition\": {";
    bool first = true;
    for (const auto& [m, v] : r.composition) {
      os << (first ? "" : ", ") << "\"" << m << "\": " << v;
      first = false;
    }
    os << "},\n    \"effectiveness\": {";
    first = true;
    for (const auto& [k, v] : r.effectiveness) {
      os << (first ? "" : ", ") << "\"" << k << "\": " << v;
      first = false;
    }
    os << "},\n    \"effectiveness_kind\": {";
    first = true;
    for (const auto& [k, v] : r.eff_kind) {
      os << (first ? "" : ", ") << "\"" << k << "\": \"" << v << "\"";
      first = false;
    }
    os << "},\n    \"reversibility\": " << r.reversibility;
    if (r.has_oracle_error) {
      os << ",\n    \"oracle_l1\": " << r.oracle_l1 << ",\n    \"cohens_d\": {";
      first = true;
      for (const auto& [k, v] : r.cohens) {
        os << (first ? "" : ", ") << "\"" << k << "\": " << v;
        first = false;
      }
      os << "}";
    }
    os << "\n  }" << (i + 1 < reports.size() ? "," : "") << "\n";
  }
  os << "]\n";
}

inline void write_reports_csv(const std::string& path,
                              const std::vector<SoundnessReport>& reports) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_reports_csv: cannot open " + path);
  os.precision(17);
  os << "model,metric,key,value\n";
  for (const auto& r : reports) {
    for (const auto& [m, v] : r.composition)
      os << r.model << ",composition," << m << "," << v << "\n";
    for (const auto& [k, v] : r.effectiveness)
      os << r.model << ",effectiveness," << k << "," << v << "\n";
    os << r.model << ",reversibility,t," << r.reversibility << "\n";
    if (r.has_oracle_error) {
      os << r.model << ",oracle_l1,t," << r.oracle_l1 << "\n";
      for (const auto& [k, v] : r.cohens)
        os << r.model << ",cohens_d," << k << "," << v << "\n";
    }
  }
}

}  // namespace cfscm
