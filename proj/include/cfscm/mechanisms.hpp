#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "cfscm/optimizer.hpp"
#include "cfscm/paramfn.hpp"
#include "cfscm/scm.hpp"

namespace cfscm {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Invertible location-scale mechanism for a continuous scalar attribute:
//   x = loc(pa) + exp(logscale(pa)) * u,  u ~ N(0, 1).
// exp(logscale) is clamped to [e^-5, e^2].
class AffineFlowMechanism final : public Mechanism {
 public:
  AffineFlowMechanism(std::size_t parent_dim, std::size_t hidden = 0)
      : loc_(parent_dim, 1, hidden), logscale_(parent_dim, 1, hidden) {}

  std::size_t parent_dim() const override { return loc_.in_dim(); }

  Tensor sample_noise(const NoiseKey& key) const override {
    return Tensor::scalar(key.normal(0));
  }

  Tensor forward(const std::vector<double>& pa, const Tensor& u) const override {
    double loc = loc_.eval(pa)[0];
    double scale = std::exp(clamp_logscale(logscale_.eval(pa)[0]));
    return Tensor::scalar(loc + scale * u.as_scalar());
  }

  Tensor abduct(const std::vector<double>& pa, const Tensor& x,
                const NoiseKey&) const override {
    double loc = loc_.eval(pa)[0];
    double scale = std::exp(clamp_logscale(logscale_.eval(pa)[0]));
    double u = (x.as_scalar() - loc) / scale;
    if (!std::isfinite(u)) throw NonFinite("AffineFlowMechanism: inverse not finite");
    return Tensor::scalar(u);
  }

  double nll(const std::vector<double>& pa, double x) const {
    double loc = loc_.eval(pa)[0];
    double ls = clamp_logscale(logscale_.eval(pa)[0]);
    double z = (x - loc) / std::exp(ls);
    return 0.5 * z * z + ls + 0.5 * kLogTwoPi;
  }

  ParamFn& loc_net() { return loc_; }
  ParamFn& logscale_net() { return logscale_; }
  const ParamFn& loc_net() const { return loc_; }
  const ParamFn& logscale_net() const { return logscale_; }

 private:
  ParamFn loc_, logscale_;
};

// Discrete mechanism: class = argmax(logits(pa) + g), g ~ Gumbel(0,1)^k.
// Abduction samples posterior Gumbels conditioned on the observed argmax
// (top-down truncated-Gumbel construction), so re-forwarding reproduces the
// observed category exactly.
class CategoricalMechanism final : public Mechanism {
 public:
  CategoricalMechanism(std::size_t parent_dim, std::size_t k,
                       std::size_t hidden = 0)
      : logits_(parent_dim, k, hidden), k_(k) {}

  std::size_t parent_dim() const override { return logits_.in_dim(); }
  std::size_t categories() const { return k_; }

  Tensor sample_noise(const NoiseKey& key) const override {
    Tensor g({k_});
    for (std::size_t j = 0; j < k_; ++j) g[j] = key.gumbel(j);
    return g;
  }

  Tensor forward(const std::vector<double>& pa, const Tensor& g) const override {
    if (g.numel() != k_)
      throw std::invalid_argument("CategoricalMechanism: noise arity mismatch");
    std::vector<double> logits = logits_.eval(pa);
    std::size_t best = 0;
    for (std::size_t j = 1; j < k_; ++j)
      if (logits[j] + g[j] > logits[best] + g[best]) best = j;
    return Tensor::scalar(static_cast<double>(best));
  }

  Tensor abduct(const std::vector<double>& pa, const Tensor& x,
                const NoiseKey& key) const override {
    auto c = static_cast<std::size_t>(x.as_scalar());
    if (c >= k_)
      throw std::out_of_range("CategoricalMechanism: observed class out of support");
    std::vector<double> logits = logits_.eval(pa);
    double log_z = logsumexp(logits);
    // Max of all perturbed logits, then truncate the non-argmax ones below it.
    double vmax = log_z + key.gumbel(k_);
    Tensor g({k_});
    for (std::size_t j = 0; j < k_; ++j) {
      if (j == c) {
        g[j] = vmax - logits[j];
      } else {
        double gj = logits[j] + key.gumbel(j);
        g[j] = truncated(gj, vmax) - logits[j];
      }
    }
    return g;
  }

  double nll(const std::vector<double>& pa, std::size_t c) const {
    std::vector<double> logits = logits_.eval(pa);
    return logsumexp(logits) - logits[c];
  }

  ParamFn& logits_net() { return logits_; }
  const ParamFn& logits_net() const { return logits_; }

 private:
  static double logsumexp(const std::vector<double>& v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
  }
  // Truncate a Gumbel sample below the bound: -log(exp(-g) + exp(-bound)).
  static double truncated(double g, double bound) {
    double lo = std::min(g, bound), hi = std::max(g, bound);
    return lo - std::log1p(std::exp(lo - hi));
  }

  ParamFn logits_;
  std::size_t k_;
};

// ---------------------------------------------------------------------------
// Maximum-likelihood fitting.
// ---------------------------------------------------------------------------

struct FitConfig {
  AdamConfig adam;
  std::size_t epochs = 300;
  std::uint64_t init_seed = 1;
};

struct FitResult {
  std::vector<double> nll_trace;  // accepted epochs only; non-increasing
  double final_nll = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Full-batch Adam with step acceptance: a step that raises the NLL beyond
// 1e-6 is rolled back, so the recorded trace is monotone within tolerance.
template <class NllFn, class GradFn>
FitResult fit_loop(std::vector<std::vector<double>*> param_blocks,
                   NllFn mean_nll, GradFn mean_grad, const FitConfig& cfg) {
  Adam opt(cfg.adam);
  FitResult res;
  double nll = mean_nll();
  if (!std::isfinite(nll)) throw DivergenceError("fit_mle: initial NLL not finite");
  res.nll_trace.push_back(nll);
  auto flatten = [&] {
    std::vector<double> flat;
    for (auto* b : param_blocks) flat.insert(flat.end(), b->begin(), b->end());
    return flat;
  };
  auto scatter = [&](const std::vector<double>& flat) {
    std::size_t k = 0;
    for (auto* b : param_blocks)
      for (double& p : *b) p = flat[k++];
  };
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::vector<double> backup = flatten();
    std::vector<double> grads = mean_grad();
    std::vector<double> flat = backup;
    opt.step(flat, grads);
    scatter(flat);
    double next = mean_nll();
    if (!std::isfinite(next)) throw DivergenceError("fit_mle: NLL diverged");
    if (next > nll + 1e-6) {
      scatter(backup);  // reject step, keep optimizer moments
      res.nll_trace.push_back(nll);
    } else {
      nll = next;
      res.nll_trace.push_back(nll);
    }
  }
  res.final_nll = nll;
  return res;
}

}  // namespace detail

inline FitResult fit_mle(AffineFlowMechanism& mech,
                         const std::vector<std::vector<double>>& pa_rows,
                         const std::vector<double>& x_rows,
                         const FitConfig& cfg = {}) {
  const std::size_t n = x_rows.size();
  const std::size_t np = mech.loc_net().param_count() +
                         mech.logscale_net().param_count();
  if (n < 2 * np)
    throw std::invalid_argument("fit_mle: need at least 2x parameter count rows");
  auto mean_nll = [&] {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += mech.nll(pa_rows[r], x_rows[r]);
    return s / static_cast<double>(n);
  };
  auto mean_grad = [&] {
    Tape tape;
    std::vector<Ad> pl, ps;
    pl.reserve(mech.loc_net().param_count());
    for (double p : mech.loc_net().params()) pl.push_back(make_var(tape, p));
    for (double p : mech.logscale_net().params()) ps.push_back(make_var(tape, p));
    Ad total = make_const(tape, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<Ad> in;
      for (double v : pa_rows[r]) in.push_back(make_const(tape, v));
      Ad loc = mech.loc_net().eval_ad(pl, in)[0];
      Ad ls = clamp_logscale(mech.logscale_net().eval_ad(ps, in)[0]);
      Ad z = (make_const(tape, x_rows[r]) - loc) / exp(ls);
      total = total + 0.5 * sqr(z) + ls;
    }
    total = total / static_cast<double>(n);
    auto adj = tape.gradient(total.id);
    std::vector<double> g;
    g.reserve(np);
    for (const Ad& p : pl) g.push_back(adj[p.id]);
    for (const Ad& p : ps) g.push_back(adj[p.id]);
    return g;
  };
  return detail::fit_loop({&mech.loc_net().params(), &mech.logscale_net().params()},
                          mean_nll, mean_grad, cfg);
}

inline FitResult fit_mle(CategoricalMechanism& mech,
                         const std::vector<std::vector<double>>& pa_rows,
                         const std::vector<std::size_t>& class_rows,
                         const FitConfig& cfg = {}) {
  const std::size_t n = class_rows.size();
  const std::size_t np = mech.logits_net().param_count();
  if (n < 2 * np)
    throw std::invalid_argument("fit_mle: need at least 2x parameter count rows");
  auto mean_nll = [&] {
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += mech.nll(pa_rows[r], class_rows[r]);
    return s / static_cast<double>(n);
  };
  auto mean_grad = [&] {
    Tape tape;
    std::vector<Ad> pv;
    for (double p : mech.logits_net().params()) pv.push_back(make_var(tape, p));
    Ad total = make_const(tape, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<Ad> in;
      for (double v : pa_rows[r]) in.push_back(make_const(tape, v));
      std::vector<Ad> logits = mech.logits_net().eval_ad(pv, in);
      // stable logsumexp on tape
      double m = logits[0].v;
      for (const Ad& l : logits) m = std::max(m, l.v);
      Ad s = make_const(tape, 0.0);
      for (const Ad& l : logits) s = s + exp(l - m);
      total = total + (log(s) + m) - logits[class_rows[r]];
    }
    total = total / static_cast<double>(n);
    auto adj = tape.gradient(total.id);
    std::vector<double> g;
    for (const Ad& p : pv) g.push_back(adj[p.id]);
    return g;
  };
  return detail::fit_loop({&mech.logits_net().params()}, mean_nll, mean_grad, cfg);
}

}  // namespace cfscm
