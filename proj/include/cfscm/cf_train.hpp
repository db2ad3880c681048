#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfscm/dataset.hpp"
#include "cfscm/ladder.hpp"
#include "cfscm/mechanisms.hpp"
#include "cfscm/optimizer.hpp"
#include "cfscm/paramfn.hpp"
#include "cfscm/rng.hpp"

namespace cfscm {

// ---------------------------------------------------------------------------
// Parent predictors q_psi(pa_k | x).
// ---------------------------------------------------------------------------

enum class ParentKind { Continuous, Categorical };

struct ParentPredictor {
  ParentKind kind = ParentKind::Continuous;
  std::size_t parent_index = 0;
  std::string name;
  ParamFn net;  // x -> (mean, logscale) or k logits

  double log_likelihood(const std::vector<double>& x, double value) const {
    std::vector<double> out = net.eval(x);
    if (kind == ParentKind::Continuous) {
      double ls = clamp_logscale(out[1]);
      double z = (value - out[0]) / std::exp(ls);
      return -0.5 * z * z - ls - 0.5 * kLogTwoPi;
    }
    auto c = static_cast<std::size_t>(value);
    if (c >= out.size())
      throw std::out_of_range("ParentPredictor: class out of support");
    double m = out[0];
    for (double l : out) m = std::max(m, l);
    double s = 0.0;
    for (double l : out) s += std::exp(l - m);
    return out[c] - (m + std::log(s));
  }

  // Point prediction: posterior mean (continuous) or argmax class.
  double predict(const std::vector<double>& x) const {
    std::vector<double> out = net.eval(x);
    if (kind == ParentKind::Continuous) return out[0];
    std::size_t best = 0;
    for (std::size_t j = 1; j < out.size(); ++j)
      if (out[j] > out[best]) best = j;
    return static_cast<double>(best);
  }
};

struct PredictorFitConfig {
  AdamConfig adam{.lr = 1e-2};
  std::size_t epochs = 150;
  std::size_t hidden = 16;
  std::uint64_t init_seed = 3;
};

namespace cf_detail {

inline double val(double x) { return x; }
inline double val(const Ad& a) { return a.v; }

template <class T>
T gauss_loglik(const T& mu, const T& logscale_raw, double value) {
  using std::exp;
  T ls = clamp_logscale(logscale_raw);
  T z = (value - mu) / exp(ls);
  return -0.5 * (z * z) - ls - 0.5 * kLogTwoPi;
}

template <class T>
T categorical_loglik(const std::vector<T>& logits, std::size_t c) {
  using std::exp;
  using std::log;
  double m = val(logits[0]);
  for (const T& l : logits) m = std::max(m, val(l));
  T s = logits[0] - logits[0];  // zero of type T on the right tape
  for (const T& l : logits) s = s + exp(l - m);
  return logits[c] - (log(s) + m);
}

}  // namespace cf_detail

inline ParentPredictor fit_continuous_predictor(
    const std::string& name, std::size_t parent_index,
    const Dataset& data, const std::vector<double>& targets,
    const PredictorFitConfig& cfg, FitResult* fit = nullptr) {
  if (data.size() == 0)
    throw std::invalid_argument("fit_continuous_predictor: empty dataset");
  ParentPredictor pred;
  pred.kind = ParentKind::Continuous;
  pred.parent_index = parent_index;
  pred.name = name;
  pred.net = ParamFn(data.pixels(), 2, cfg.hidden);
  pred.net.init_random(NoiseKey{cfg.init_seed, 0x9500 + parent_index, 0});
  // Start the likelihood at the target moments so the first epochs are
  // stable regardless of the attribute's scale.
  double mean = 0.0;
  for (double v : targets) mean += v;
  mean /= static_cast<double>(targets.size());
  double var = 0.0;
  for (double v : targets) var += (v - mean) * (v - mean);
  var /= static_cast<double>(targets.size());
  pred.net.params()[pred.net.bias_index(0)] += mean;
  pred.net.params()[pred.net.bias_index(1)] +=
      0.5 * std::log(std::max(var, 1e-12));
  const std::size_t n = data.size();
  auto mean_nll = [&] {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      s += -pred.log_likelihood(data.image_vec(r), targets[r]);
    return s / static_cast<double>(n);
  };
  auto mean_grad = [&] {
    std::vector<double> g(pred.net.param_count(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      Tape tape;
      std::vector<Ad> pv;
      auto out = pred.net.eval_ad_params(tape, data.image_vec(r), pv);
      Ad nll = -cf_detail::gauss_loglik(out[0], out[1], targets[r]);
      auto adj = tape.gradient(nll.id);
      for (std::size_t k = 0; k < pv.size(); ++k)
        g[k] += adj[pv[k].id] / static_cast<double>(n);
    }
    return g;
  };
  FitConfig fc{cfg.adam, cfg.epochs, cfg.init_seed};
  FitResult r = detail::fit_loop({&pred.net.params()}, mean_nll, mean_grad, fc);
  if (fit) *fit = r;
  return pred;
}

inline ParentPredictor fit_categorical_predictor(
    const std::string& name, std::size_t parent_index,
    const Dataset& data, const std::vector<std::size_t>& classes,
    std::size_t k, const PredictorFitConfig& cfg, FitResult* fit = nullptr) {
  if (data.size() == 0)
    throw std::invalid_argument("fit_categorical_predictor: empty dataset");
  ParentPredictor pred;
  pred.kind = ParentKind::Categorical;
  pred.parent_index = parent_index;
  pred.name = name;
  pred.net = ParamFn(data.pixels(), k, cfg.hidden);
  pred.net.init_random(NoiseKey{cfg.init_seed, 0x9500 + parent_index, 0});
  const std::size_t n = data.size();
  auto mean_nll = [&] {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      s += -pred.log_likelihood(data.image_vec(r),
                                static_cast<double>(classes[r]));
    return s / static_cast<double>(n);
  };
  auto mean_grad = [&] {
    std::vector<double> g(pred.net.param_count(), 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      Tape tape;
      std::vector<Ad> pv;
      auto logits = pred.net.eval_ad_params(tape, data.image_vec(r), pv);
      Ad nll = -cf_detail::categorical_loglik(logits, classes[r]);
      auto adj = tape.gradient(nll.id);
      for (std::size_t kk = 0; kk < pv.size(); ++kk)
        g[kk] += adj[pv[kk].id] / static_cast<double>(n);
    }
    return g;
  };
  FitConfig fc{cfg.adam, cfg.epochs, cfg.init_seed};
  FitResult r = detail::fit_loop({&pred.net.params()}, mean_nll, mean_grad, fc);
  if (fit) *fit = r;
  return pred;
}

struct PredictorSet {
  std::vector<ParentPredictor> items;  // y, t, i
  std::vector<FitResult> fits;
};

// Predictors for the synthetic attribute set: class y, thickness t,
// intensity i, all read off the image alone.
inline PredictorSet fit_predictors(const Dataset& data,
                                   const PredictorFitConfig& cfg = {}) {
  if (data.size() == 0) throw std::invalid_argument("fit_predictors: empty dataset");
  PredictorSet set;
  set.fits.resize(3);
  set.items.push_back(fit_categorical_predictor("y", 0, data, data.y, kNumClasses,
                                                cfg, &set.fits[0]));
  set.items.push_back(
      fit_continuous_predictor("t", 1, data, data.t, cfg, &set.fits[1]));
  set.items.push_back(
      fit_continuous_predictor("i", 2, data, data.i, cfg, &set.fits[2]));
  return set;
}

// ---------------------------------------------------------------------------
// MI lower bound.
// ---------------------------------------------------------------------------

// I(pa; x) >= E[log q(pa | x)] + H(pa). `entropy` is H(pa) >= 0; the bound
// is 0 when the predictor ignores x and outputs the marginal, and reaches
// the true MI for a perfect predictor on a deterministic channel.
inline double mi_lower_bound(double mean_log_q, double entropy) {
  return mean_log_q + entropy;
}

inline double mi_lower_bound(const ParentPredictor& pred,
                             const std::vector<std::vector<double>>& xs,
                             const std::vector<double>& targets,
                             double entropy) {
  if (xs.empty() || xs.size() != targets.size())
    throw std::invalid_argument("mi_lower_bound: empty or mismatched samples");
  double s = 0.0;
  for (std::size_t r = 0; r < xs.size(); ++r)
    s += pred.log_likelihood(xs[r], targets[r]);
  return mi_lower_bound(s / static_cast<double>(xs.size()), entropy);
}

inline double empirical_entropy(const std::vector<std::size_t>& classes,
                                std::size_t k) {
  std::vector<double> counts(k, 0.0);
  for (std::size_t c : classes) counts.at(c) += 1.0;
  double h = 0.0;
  const double n = static_cast<double>(classes.size());
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

// ---------------------------------------------------------------------------
// Learned attribute SCM (y marginal; t; i given t), used to recompute
// downstream attributes under an intervention. Mechanisms act on
// standardized scalars; raw values cross the boundary.
// ---------------------------------------------------------------------------

struct AttrTriple {
  std::size_t y = 0;
  double t = 0.0, i = 0.0;
};

struct AttributeModel {
  PaScaler scaler;
  std::vector<double> y_logits = std::vector<double>(kNumClasses, 0.0);
  AffineFlowMechanism t_mech{0};
  AffineFlowMechanism i_mech{1, 4};
  FitResult t_fit, i_fit;

  static AttributeModel fit(const Dataset& d, const PaScaler& scaler,
                            const FitConfig& cfg = {}) {
    if (d.size() == 0) throw std::invalid_argument("AttributeModel: empty dataset");
    AttributeModel m;
    m.scaler = scaler;
    std::vector<double> counts(kNumClasses, 1.0);  // +1 smoothing
    for (std::size_t c : d.y) counts.at(c) += 1.0;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      m.y_logits[c] = std::log(counts[c] / (static_cast<double>(d.size()) + 3.0));
    const std::size_t n = d.size();
    std::vector<std::vector<double>> no_pa(n), t_pa(n);
    std::vector<double> ts(n), is(n);
    for (std::size_t r = 0; r < n; ++r) {
      ts[r] = (d.t[r] - scaler.t_mean) / scaler.t_std;
      is[r] = (d.i[r] - scaler.i_mean) / scaler.i_std;
      t_pa[r] = {ts[r]};
    }
    FitConfig c1 = cfg;
    c1.init_seed = rng::splitmix(cfg.init_seed ^ 0xA771);
    m.t_mech.loc_net().init_random(NoiseKey{c1.init_seed, 1, 0});
    m.t_mech.logscale_net().init_random(NoiseKey{c1.init_seed, 2, 0});
    m.t_fit = fit_mle(m.t_mech, no_pa, ts, c1);
    FitConfig c2 = cfg;
    c2.init_seed = rng::splitmix(cfg.init_seed ^ 0xA772);
    m.i_mech.loc_net().init_random(NoiseKey{c2.init_seed, 1, 0});
    m.i_mech.logscale_net().init_random(NoiseKey{c2.init_seed, 2, 0});
    m.i_fit = fit_mle(m.i_mech, t_pa, is, c2);
    return m;
  }

  // Abduct (u_t, u_i) from factual attributes, apply the intervention map,
  // re-evaluate. do(t) flows into i through the fitted mechanism; do(i)
  // and do(y) are local.
  AttrTriple counterfactual(const AttrTriple& fact,
                            const std::map<std::string, double>& do_map) const {
    NoiseKey dummy{0, 0, 0};
    double ts = (fact.t - scaler.t_mean) / scaler.t_std;
    double is = (fact.i - scaler.i_mean) / scaler.i_std;
    double u_i = i_mech.abduct({ts}, Tensor::scalar(is), dummy).as_scalar();
    AttrTriple cf = fact;
    auto it = do_map.find("y");
    if (it != do_map.end()) {
      auto c = static_cast<std::size_t>(it->second);
      if (c >= kNumClasses)
        throw std::out_of_range("AttributeModel: do(y) class out of support");
      cf.y = c;
    }
    it = do_map.find("t");
    bool t_changed = it != do_map.end();
    if (t_changed) {
      cf.t = it->second;
      ts = (cf.t - scaler.t_mean) / scaler.t_std;
    }
    it = do_map.find("i");
    if (it != do_map.end()) {
      cf.i = it->second;
    } else if (t_changed) {
      double is_cf = i_mech.forward({ts}, Tensor::scalar(u_i)).as_scalar();
      cf.i = is_cf * scaler.i_std + scaler.i_mean;
    }
    return cf;
  }
};

// ---------------------------------------------------------------------------
// Counterfactual loss L_CT = -sum_k E[log q_psi_k(pa~_k | x~)].
// ---------------------------------------------------------------------------

// One precomputed loss term: an observed row, an intervened parent value
// drawn from the training marginal, and the resulting full counterfactual
// parent vector. Sampling is factored out so the loss is a pure function of
// the model parameters (finite-difference checkable).
struct CfItem {
  std::vector<double> x;      // factual image
  std::vector<double> pa;     // factual encoded parents
  std::vector<double> pa_cf;  // counterfactual encoded parents
  std::size_t predictor = 0;  // index into the predictor list
  double target = 0.0;        // raw intervened value (class index for y)
  std::uint64_t sample = 0;   // posterior noise id
};

// Draws one intervention per (row, parent): the new value is resampled from
// the empirical marginal (a uniformly chosen training row), and downstream
// attributes are recomputed through the attribute SCM.
inline std::vector<CfItem> build_cf_batch(const Dataset& data,
                                          const std::vector<std::vector<double>>& pa_rows,
                                          const AttributeModel& attrs,
                                          std::uint64_t seed) {
  const std::size_t n = data.size();
  static const char* kNames[3] = {"y", "t", "i"};
  std::vector<CfItem> items;
  items.reserve(3 * n);
  for (std::size_t r = 0; r < n; ++r) {
    AttrTriple fact{data.y[r], data.t[r], data.i[r]};
    for (std::size_t k = 0; k < 3; ++k) {
      NoiseKey key{seed, 0xCF00 + k, r};
      auto j = static_cast<std::size_t>(key.uniform(0) * static_cast<double>(n));
      j = std::min(j, n - 1);
      double value = k == 0 ? static_cast<double>(data.y[j])
                            : (k == 1 ? data.t[j] : data.i[j]);
      AttrTriple cf = attrs.counterfactual(fact, {{kNames[k], value}});
      CfItem item;
      item.x = data.image_vec(r);
      item.pa = pa_rows[r];
      item.pa_cf = attrs.scaler.encode(cf.y, cf.t, cf.i);
      item.predictor = k;
      item.target = value;
      item.sample = r;
      items.push_back(std::move(item));
    }
  }
  return items;
}

namespace cf_detail {

using ladder_detail::Pack;

// Counterfactual image under the model's own procedure, generic over the
// scalar type so the same path serves evaluation and backprop.
template <class T, class Ctx>
std::vector<T> counterfactual_image_core(
    const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
    const std::vector<T>& x, const std::vector<T>& pa,
    const std::vector<T>& pa_cf,
    const std::vector<std::vector<double>>& eps, double pi) {
  using namespace ladder_detail;
  auto zs = posterior_sample(m, ctx, p, x, pa, eps);
  std::vector<T> mu, sig, mu_cf, sig_cf;
  decode_core(m, ctx, p, zs, pa, mu, sig);
  if (m.variant == LadderVariant::LatentMediator) {
    auto feats = bottom_up(m, ctx, p, x);
    std::vector<std::vector<T>> u_z;
    for (const auto& e : eps) u_z.push_back(lift_vec<T>(ctx, e));
    auto z_cf = mediator_cf_stack(m, ctx, p, zs, u_z, feats, pa, pa_cf, pi);
    decode_core(m, ctx, p, z_cf, pa_cf, mu_cf, sig_cf);
  } else {
    decode_core(m, ctx, p, zs, pa_cf, mu_cf, sig_cf);
  }
  std::vector<T> x_cf;
  x_cf.reserve(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    x_cf.push_back(mu_cf[j] + sig_cf[j] * ((x[j] - mu[j]) / sig[j]));
  return x_cf;
}

template <class T, class Ctx>
T cf_term_core(const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
               const CfItem& item, const ParentPredictor& pred,
               const std::vector<T>& pred_params,
               const std::vector<std::vector<double>>& eps, double pi) {
  using namespace ladder_detail;
  std::vector<T> x = lift_vec<T>(ctx, item.x);
  std::vector<T> pa = lift_vec<T>(ctx, item.pa);
  std::vector<T> pa_cf = lift_vec<T>(ctx, item.pa_cf);
  std::vector<T> x_cf = counterfactual_image_core(m, ctx, p, x, pa, pa_cf, eps, pi);
  std::vector<T> out = ctx.apply(pred.net, pred_params, x_cf);
  if (pred.kind == ParentKind::Continuous)
    return -gauss_loglik(out[0], out[1], item.target);
  return -categorical_loglik(out, static_cast<std::size_t>(item.target));
}

}  // namespace cf_detail

inline double counterfactual_loss(const LadderModel& m,
                                  const std::vector<ParentPredictor>& preds,
                                  const std::vector<CfItem>& items, double pi,
                                  std::uint64_t noise_seed) {
  using namespace ladder_detail;
  if (items.empty()) return 0.0;
  ScalarCtx ctx;
  auto p = pack_plain(m);
  double s = 0.0;
  std::size_t per_row = 0;
  for (const auto& item : items)
    per_row = std::max(per_row, item.predictor + 1);
  for (const auto& item : items) {
    auto eps = draw_layer_noise(m, noise_seed ^ (item.predictor * 0x9E3779B97F4A7C15ULL),
                                item.sample);
    s += cf_detail::cf_term_core(m, ctx, p, item, preds.at(item.predictor),
                                 preds.at(item.predictor).net.params(), eps, pi);
  }
  // Mean over rows; the sum over parents k is kept (the loss sums over k).
  return s * static_cast<double>(per_row) / static_cast<double>(items.size());
}

// Gradient with respect to the ladder parameters (visit_params order).
// Predictor parameters enter as constants: psi stays frozen.
inline std::vector<double> counterfactual_loss_gradient(
    const LadderModel& m, const std::vector<ParentPredictor>& preds,
    const std::vector<CfItem>& items, double pi, std::uint64_t noise_seed,
    double* value = nullptr) {
  using namespace ladder_detail;
  std::vector<double> grad(m.flat_params().size(), 0.0);
  double s = 0.0;
  std::size_t per_row = 0;
  for (const auto& item : items)
    per_row = std::max(per_row, item.predictor + 1);
  const double scale = items.empty() ? 0.0
                                     : static_cast<double>(per_row) /
                                           static_cast<double>(items.size());
  for (const auto& item : items) {
    Tape tape;
    TapeCtx ctx{&tape};
    std::vector<Ad> flat;
    auto p = pack_vars(m, tape, flat);
    std::vector<Ad> pred_params =
        lift_vec<Ad>(ctx, preds.at(item.predictor).net.params());
    auto eps = draw_layer_noise(m, noise_seed ^ (item.predictor * 0x9E3779B97F4A7C15ULL),
                                item.sample);
    Ad term = cf_detail::cf_term_core(m, ctx, p, item, preds.at(item.predictor),
                                      pred_params, eps, pi);
    if (!std::isfinite(term.v))
      throw DivergenceError("counterfactual_loss: term not finite");
    s += term.v;
    auto adj = tape.gradient(term.id);
    for (std::size_t k = 0; k < flat.size(); ++k)
      grad[k] += adj[flat[k].id] * scale;
  }
  if (value) *value = s * scale;
  return grad;
}

// ---------------------------------------------------------------------------
// Constrained fine-tuning (differential method of multipliers).
// ---------------------------------------------------------------------------

struct LagrangianState {
  double lambda = 0.0;
  double c = 0.0;
  double damping = 0.1;
};

struct FinetuneConfig {
  AdamConfig adam{.lr = 1e-3};
  std::size_t epochs = 30;
  double lambda_lr = 0.01;
  double lambda_init = 0.0;
  double damping = 0.1;
  double pi = 0.0;  // mediator mixing used when generating x~
  std::uint64_t seed = 42;
};

struct FinetuneTrace {
  std::vector<double> l_ct, f_fe, lambda;
};

inline void write_finetune_trace_csv(const std::string& path,
                                     const FinetuneTrace& tr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_finetune_trace_csv: cannot open " + path);
  os.precision(17);
  os << "epoch,l_ct,f_fe,lambda\n";
  for (std::size_t e = 0; e < tr.l_ct.size(); ++e)
    os << e << "," << tr.l_ct[e] << "," << tr.f_fe[e] << "," << tr.lambda[e] << "\n";
}

// Minimize L_CT subject to mean free energy <= c. Per epoch: descend
// {theta, phi} on grad L_CT + (lambda + damping*(F - c)) * grad F, then
// ascend lambda by lambda_lr * (F - c), projected to lambda >= 0.
// Predictors and the attribute model are read-only throughout.
inline FinetuneTrace finetune_constrained(
    LadderModel& m, const std::vector<ParentPredictor>& preds,
    const AttributeModel& attrs, const Dataset& data,
    const std::vector<std::vector<double>>& pa_rows, double c,
    const FinetuneConfig& cfg) {
  FinetuneTrace trace;
  LagrangianState lag{cfg.lambda_init, c, cfg.damping};
  Adam opt(cfg.adam);
  std::vector<double> flat = m.flat_params();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::uint64_t epoch_seed = rng::splitmix(cfg.seed ^ (0xF17E + e));
    auto items = build_cf_batch(data, pa_rows, attrs, epoch_seed);
    double fe = 0.0, lct = 0.0;
    std::vector<double> g_fe =
        elbo_mean_gradient(m, data, pa_rows, rng::splitmix(epoch_seed ^ 0xFE), &fe);
    std::vector<double> g_ct = counterfactual_loss_gradient(
        m, preds, items, cfg.pi, rng::splitmix(epoch_seed ^ 0xC7), &lct);
    double mult = lag.lambda + lag.damping * (fe - lag.c);
    std::vector<double> g(flat.size());
    for (std::size_t k = 0; k < flat.size(); ++k)
      g[k] = g_ct[k] + mult * g_fe[k];
    opt.step(flat, g);
    m.set_flat_params(flat);
    lag.lambda = std::max(0.0, lag.lambda + cfg.lambda_lr * (fe - lag.c));
    trace.l_ct.push_back(lct);
    trace.f_fe.push_back(fe);
    trace.lambda.push_back(lag.lambda);
  }
  return trace;
}

}  // namespace cfscm
