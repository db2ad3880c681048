#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfscm/autodiff.hpp"
#include "cfscm/dataset.hpp"
#include "cfscm/mechanisms.hpp"
#include "cfscm/optimizer.hpp"
#include "cfscm/paramfn.hpp"
#include "cfscm/rng.hpp"
#include "cfscm/scm.hpp"

namespace cfscm {

struct VariantMismatch : std::logic_error {
  using std::logic_error::logic_error;
};

enum class LadderVariant { ExogenousPrior, LatentMediator };

struct LadderDims {
  std::size_t x_dim = 256;
  std::size_t pa_dim = kPaDim;
  std::vector<std::size_t> z = {16, 8, 4};  // bottom (nearest x) to top
  std::size_t h_dim = 32;
  std::size_t hidden = 16;  // tanh hidden width of every net

  std::size_t layers() const { return z.size(); }
  // Width of the concatenated z_{>i} context feeding layer i.
  std::size_t above_dim(std::size_t i) const {
    std::size_t s = 0;
    for (std::size_t j = i + 1; j < z.size(); ++j) s += z[j];
    return s;
  }
};

// L-layer hierarchical latent model for x. Top-down generative pass:
//   h_{i} = h_{i+1} + f_i(z_i, pa),  h_{L+1} = h_init,
//   x ~ N(mu(h_1), sigma(h_1)).
// The ExogenousPrior variant keeps every prior net blind to pa (the prior
// nets' inputs structurally exclude it); the LatentMediator variant
// conditions each prior on pa as well.
struct LadderModel {
  LadderVariant variant = LadderVariant::ExogenousPrior;
  LadderDims dims;

  std::vector<ParamFn> prior;  // layer i: z_{>i} (+pa) -> 2*d_i
  std::vector<ParamFn> post;   // layer i: z_{>i}, bu_i, pa -> 2*d_i
  std::vector<ParamFn> res;    // layer i: z_i, pa -> h_dim
  std::vector<ParamFn> bu;     // bottom-up: x -> h, h -> h, ...
  ParamFn dec_mu, dec_sig;     // h_1 -> x
  std::vector<double> h_init;

  std::size_t layers() const { return dims.layers(); }
  bool prior_reads_pa() const { return variant == LadderVariant::LatentMediator; }

  static LadderModel create(LadderVariant variant, const LadderDims& dims,
                            std::uint64_t init_seed) {
    LadderModel m;
    m.variant = variant;
    m.dims = dims;
    const std::size_t L = dims.layers(), pa = dims.pa_dim;
    const bool med = variant == LadderVariant::LatentMediator;
    for (std::size_t i = 0; i < L; ++i) {
      std::size_t above = dims.above_dim(i);
      m.prior.emplace_back(above + (med ? pa : 0), 2 * dims.z[i], dims.hidden);
      m.post.emplace_back(above + dims.h_dim + pa, 2 * dims.z[i], dims.hidden);
      m.res.emplace_back(dims.z[i] + pa, dims.h_dim, dims.hidden);
      m.bu.emplace_back(i == 0 ? dims.x_dim : dims.h_dim, dims.h_dim, dims.hidden);
    }
    m.dec_mu = ParamFn(dims.h_dim, dims.x_dim, dims.hidden);
    m.dec_sig = ParamFn(dims.h_dim, dims.x_dim, dims.hidden);
    m.h_init.assign(dims.h_dim, 0.0);
    std::uint64_t tag = 0;
    auto init = [&](ParamFn& f) { f.init_random(NoiseKey{init_seed, ++tag, 0}); };
    for (auto* group : {&m.prior, &m.post, &m.res, &m.bu})
      for (auto& f : *group) init(f);
    init(m.dec_mu);
    init(m.dec_sig);
    // Start the likelihood moderately sharp.
    for (std::size_t o = 0; o < dims.x_dim; ++o)
      m.dec_sig.params()[m.dec_sig.bias_index(o)] -= 1.0;
    NoiseKey hk{init_seed, ++tag, 0};
    for (std::size_t j = 0; j < dims.h_dim; ++j) m.h_init[j] = 0.1 * hk.normal(j);
    return m;
  }

  // All parameter blocks in a fixed order ({theta, phi} jointly).
  template <class Fn>
  void visit_params(Fn&& fn) {
    for (auto* group : {&prior, &post, &res, &bu})
      for (auto& f : *group) fn(f.params());
    fn(dec_mu.params());
    fn(dec_sig.params());
    fn(h_init);
  }
  template <class Fn>
  void visit_params(Fn&& fn) const {
    for (auto* group : {&prior, &post, &res, &bu})
      for (const auto& f : *group) fn(f.params());
    fn(dec_mu.params());
    fn(dec_sig.params());
    fn(h_init);
  }

  std::vector<double> flat_params() const {
    std::vector<double> flat;
    visit_params([&](const std::vector<double>& b) {
      flat.insert(flat.end(), b.begin(), b.end());
    });
    return flat;
  }
  void set_flat_params(const std::vector<double>& flat) {
    std::size_t k = 0;
    visit_params([&](std::vector<double>& b) {
      for (double& p : b) p = flat[k++];
    });
    if (k != flat.size())
      throw std::invalid_argument("LadderModel: flat parameter size mismatch");
  }
};

// Abducted latent stack: z per layer, the posterior noise that produced it,
// and the parent vector in effect when it was inferred.
struct LatentStack {
  std::vector<std::vector<double>> z;    // bottom to top
  std::vector<std::vector<double>> u_z;  // posterior reparameterization noise
  std::vector<double> parents_used;
};

struct EffectReport {
  Tensor de, ie, te;
  double de_l1 = 0.0, ie_l1 = 0.0, te_l1 = 0.0;
  // max |(TE - IE) - (g(pa', z~) - g(pa, z~))|: zero up to rounding by
  // construction, kept as an internal bug guard.
  double telescoping_residual = 0.0;
};

// ---------------------------------------------------------------------------
// Generic evaluation core, shared by the plain and tape paths.
// ---------------------------------------------------------------------------

namespace ladder_detail {

struct ScalarCtx {
  double lift(double v) const { return v; }
  std::vector<double> apply(const ParamFn& f, const std::vector<double>&,
                            const std::vector<double>& in) const {
    return f.eval(in);
  }
};

struct TapeCtx {
  Tape* tape;
  Ad lift(double v) const { return make_const(*tape, v); }
  std::vector<Ad> apply(const ParamFn& f, const std::vector<Ad>& params,
                        const std::vector<Ad>& in) const {
    return f.eval_ad(params, in);
  }
};

template <class T>
struct Pack {
  std::vector<std::vector<T>> prior, post, res, bu;
  std::vector<T> dec_mu, dec_sig, h_init;
};

inline Pack<double> pack_plain(const LadderModel& m) {
  Pack<double> p;
  for (const auto& f : m.prior) p.prior.push_back(f.params());
  for (const auto& f : m.post) p.post.push_back(f.params());
  for (const auto& f : m.res) p.res.push_back(f.params());
  for (const auto& f : m.bu) p.bu.push_back(f.params());
  p.dec_mu = m.dec_mu.params();
  p.dec_sig = m.dec_sig.params();
  p.h_init = m.h_init;
  return p;
}

// Parameters as tape variables, in visit_params order, collected into
// `flat_vars` for gradient extraction.
inline Pack<Ad> pack_vars(const LadderModel& m, Tape& tape,
                          std::vector<Ad>& flat_vars) {
  Pack<Ad> p;
  flat_vars.clear();
  auto liftv = [&](const std::vector<double>& src) {
    std::vector<Ad> out;
    out.reserve(src.size());
    for (double v : src) {
      out.push_back(make_var(tape, v));
      flat_vars.push_back(out.back());
    }
    return out;
  };
  for (const auto& f : m.prior) p.prior.push_back(liftv(f.params()));
  for (const auto& f : m.post) p.post.push_back(liftv(f.params()));
  for (const auto& f : m.res) p.res.push_back(liftv(f.params()));
  for (const auto& f : m.bu) p.bu.push_back(liftv(f.params()));
  p.dec_mu = liftv(m.dec_mu.params());
  p.dec_sig = liftv(m.dec_sig.params());
  p.h_init = liftv(m.h_init);
  return p;
}

template <class T, class Ctx>
std::vector<T> lift_vec(const Ctx& ctx, const std::vector<double>& v) {
  std::vector<T> out;
  out.reserve(v.size());
  for (double x : v) out.push_back(ctx.lift(x));
  return out;
}

// Bottom-up deterministic features, one per layer.
template <class T, class Ctx>
std::vector<std::vector<T>> bottom_up(const LadderModel& m, const Ctx& ctx,
                                      const Pack<T>& p, const std::vector<T>& x) {
  std::vector<std::vector<T>> feats;
  feats.push_back(ctx.apply(m.bu[0], p.bu[0], x));
  for (std::size_t i = 1; i < m.layers(); ++i)
    feats.push_back(ctx.apply(m.bu[i], p.bu[i], feats.back()));
  return feats;
}

template <class T>
void split_mu_sig(const std::vector<T>& out, std::vector<T>& mu,
                  std::vector<T>& sig) {
  using std::exp;
  const std::size_t d = out.size() / 2;
  mu.assign(out.begin(), out.begin() + d);
  sig.clear();
  sig.reserve(d);
  for (std::size_t j = 0; j < d; ++j) sig.push_back(exp(clamp_logscale(out[d + j])));
}

template <class T, class Ctx>
void posterior_params(const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
                      std::size_t i, const std::vector<T>& z_above,
                      const std::vector<T>& bu_feat, const std::vector<T>& pa,
                      std::vector<T>& mu, std::vector<T>& sig) {
  std::vector<T> in = z_above;
  in.insert(in.end(), bu_feat.begin(), bu_feat.end());
  in.insert(in.end(), pa.begin(), pa.end());
  split_mu_sig(ctx.apply(m.post[i], p.post[i], in), mu, sig);
}

template <class T, class Ctx>
void prior_params(const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
                  std::size_t i, const std::vector<T>& z_above,
                  const std::vector<T>& pa, std::vector<T>& mu,
                  std::vector<T>& sig) {
  std::vector<T> in = z_above;
  if (m.prior_reads_pa()) in.insert(in.end(), pa.begin(), pa.end());
  split_mu_sig(ctx.apply(m.prior[i], p.prior[i], in), mu, sig);
}

template <class T>
void split_mu_sig_decoder(const std::vector<T>& mu_raw,
                          const std::vector<T>& sig_raw, std::vector<T>& mu,
                          std::vector<T>& sig) {
  using std::exp;
  mu = mu_raw;
  sig.clear();
  sig.reserve(sig_raw.size());
  for (const T& s : sig_raw) sig.push_back(exp(clamp_logscale(s)));
}

// Top-down decode of a complete stack (bottom-to-top layout).
template <class T, class Ctx>
void decode_core(const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
                 const std::vector<std::vector<T>>& z, const std::vector<T>& pa,
                 std::vector<T>& mu, std::vector<T>& sig) {
  std::vector<T> h = p.h_init;
  for (std::size_t ii = m.layers(); ii-- > 0;) {
    std::vector<T> in = z[ii];
    in.insert(in.end(), pa.begin(), pa.end());
    std::vector<T> delta = ctx.apply(m.res[ii], p.res[ii], in);
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = h[j] + delta[j];
  }
  split_mu_sig_decoder(ctx.apply(m.dec_mu, p.dec_mu, h),
                       ctx.apply(m.dec_sig, p.dec_sig, h), mu, sig);
}

struct ElboParts {
  double elbo = 0.0;
  std::vector<double> layer_kl;
};

// ELBO with one posterior sample per layer; the per-layer noise is supplied
// so the plain and tape paths agree bit-for-bit.
template <class T, class Ctx>
T elbo_core(const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
            const std::vector<T>& x, const std::vector<T>& pa,
            const std::vector<std::vector<double>>& eps,
            std::vector<T>* layer_kls = nullptr) {
  using std::log;
  const std::size_t L = m.layers();
  auto feats = bottom_up(m, ctx, p, x);
  std::vector<T> z_above;
  T total_kl = ctx.lift(0.0);
  if (layer_kls) layer_kls->clear();
  std::vector<std::vector<T>> zs(L);
  for (std::size_t ii = L; ii-- > 0;) {
    std::vector<T> mq, sq, mp, sp;
    posterior_params(m, ctx, p, ii, z_above, feats[ii], pa, mq, sq);
    prior_params(m, ctx, p, ii, z_above, pa, mp, sp);
    std::vector<T> z;
    z.reserve(mq.size());
    T kl = ctx.lift(0.0);
    for (std::size_t j = 0; j < mq.size(); ++j) {
      z.push_back(mq[j] + sq[j] * eps[ii][j]);
      T dm = mq[j] - mp[j];
      kl = kl + log(sp[j] / sq[j]) +
           (sq[j] * sq[j] + dm * dm) / (2.0 * sp[j] * sp[j]) - 0.5;
    }
    if (layer_kls) layer_kls->push_back(kl);
    total_kl = total_kl + kl;
    zs[ii] = z;
    z_above.insert(z_above.end(), z.begin(), z.end());
  }
  std::vector<T> mu, sig;
  decode_core(m, ctx, p, zs, pa, mu, sig);
  T recon = ctx.lift(0.0);
  for (std::size_t j = 0; j < mu.size(); ++j) {
    T d = (x[j] - mu[j]) / sig[j];
    recon = recon - 0.5 * (d * d) - log(sig[j]) - 0.5 * kLogTwoPi;
  }
  return recon - total_kl;
}

inline std::vector<std::vector<double>> draw_layer_noise(const LadderModel& m,
                                                         std::uint64_t seed,
                                                         std::uint64_t sample) {
  std::vector<std::vector<double>> eps;
  for (std::size_t i = 0; i < m.layers(); ++i) {
    NoiseKey key{seed, 0x4c00 + i, sample};
    std::vector<double> e(m.dims.z[i]);
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = key.normal(j);
    eps.push_back(std::move(e));
  }
  return eps;
}

// Posterior top-down sample; returns the stack and the noise used.
template <class T, class Ctx>
std::vector<std::vector<T>> posterior_sample(
    const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
    const std::vector<T>& x, const std::vector<T>& pa,
    const std::vector<std::vector<double>>& eps) {
  const std::size_t L = m.layers();
  auto feats = bottom_up(m, ctx, p, x);
  std::vector<T> z_above;
  std::vector<std::vector<T>> zs(L);
  for (std::size_t ii = L; ii-- > 0;) {
    std::vector<T> mq, sq;
    posterior_params(m, ctx, p, ii, z_above, feats[ii], pa, mq, sq);
    std::vector<T> z;
    for (std::size_t j = 0; j < mq.size(); ++j)
      z.push_back(mq[j] + sq[j] * eps[ii][j]);
    zs[ii] = z;
    z_above.insert(z_above.end(), z.begin(), z.end());
  }
  return zs;
}

// Counterfactual mediator stack: top-down moment-matched mixture of the
// counterfactual prior and the factual posterior, re-sampled with the
// abducted noise.
template <class T, class Ctx>
std::vector<std::vector<T>> mediator_cf_stack(
    const LadderModel& m, const Ctx& ctx, const Pack<T>& p,
    const std::vector<std::vector<T>>& z_fact,
    const std::vector<std::vector<T>>& u_z,
    const std::vector<std::vector<T>>& feats, const std::vector<T>& pa,
    const std::vector<T>& pa_cf, double pi) {
  const std::size_t L = m.layers();
  std::vector<T> z_above_cf, z_above_f;
  std::vector<std::vector<T>> zs(L);
  for (std::size_t ii = L; ii-- > 0;) {
    std::vector<T> mp, sp, mq, sq;
    prior_params(m, ctx, p, ii, z_above_cf, pa_cf, mp, sp);
    posterior_params(m, ctx, p, ii, z_above_f, feats[ii], pa, mq, sq);
    std::vector<T> z;
    using std::sqrt;
    for (std::size_t j = 0; j < mp.size(); ++j) {
      // pi = 0 and pi = 1 collapse to the exact component, so composition
      // holds bit-for-bit at the boundaries.
      if (pi == 0.0) {
        z.push_back(mq[j] + sq[j] * u_z[ii][j]);
      } else if (pi == 1.0) {
        z.push_back(mp[j] + sp[j] * u_z[ii][j]);
      } else {
        T mr = pi * mp[j] + (1.0 - pi) * mq[j];
        T second = pi * (sp[j] * sp[j] + mp[j] * mp[j]) +
                   (1.0 - pi) * (sq[j] * sq[j] + mq[j] * mq[j]);
        T sr = sqrt(second - mr * mr + 1e-12);
        z.push_back(mr + sr * u_z[ii][j]);
      }
    }
    zs[ii] = z;
    z_above_cf.insert(z_above_cf.end(), z.begin(), z.end());
    z_above_f.insert(z_above_f.end(), z_fact[ii].begin(), z_fact[ii].end());
  }
  return zs;
}

}  // namespace ladder_detail

// ---------------------------------------------------------------------------
// Public operations (plain-double path).
// ---------------------------------------------------------------------------

struct ElboResult {
  double elbo = 0.0;
  std::vector<double> layer_kl;  // bottom to top
};

inline ElboResult elbo(const LadderModel& m, const std::vector<double>& x,
                       const std::vector<double>& pa, std::uint64_t seed,
                       std::uint64_t sample = 0) {
  using namespace ladder_detail;
  ScalarCtx ctx;
  auto p = pack_plain(m);
  auto eps = draw_layer_noise(m, seed, sample);
  std::vector<double> kls;
  double v = elbo_core(m, ctx, p, x, pa, eps, &kls);
  if (!std::isfinite(v)) throw NonFinite("elbo: not finite");
  ElboResult r;
  r.elbo = v;
  // layer_kls come out top-to-bottom; store bottom-to-top
  r.layer_kl.assign(kls.rbegin(), kls.rend());
  return r;
}

inline void decode(const LadderModel& m, const LatentStack& stack,
                   const std::vector<double>& pa, std::vector<double>& mu,
                   std::vector<double>& sig) {
  using namespace ladder_detail;
  ScalarCtx ctx;
  auto p = pack_plain(m);
  decode_core(m, ctx, p, stack.z, pa, mu, sig);
}

inline std::vector<double> abduct_epsilon(const LadderModel& m,
                                          const std::vector<double>& x,
                                          const LatentStack& stack,
                                          const std::vector<double>& pa) {
  std::vector<double> mu, sig;
  decode(m, stack, pa, mu, sig);
  std::vector<double> eps(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    eps[j] = (x[j] - mu[j]) / sig[j];
    if (!std::isfinite(eps[j])) throw NonFinite("abduct_epsilon: not finite");
  }
  return eps;
}

inline LatentStack sample_posterior_stack(const LadderModel& m,
                                          const std::vector<double>& x,
                                          const std::vector<double>& pa,
                                          std::uint64_t seed) {
  using namespace ladder_detail;
  ScalarCtx ctx;
  auto p = pack_plain(m);
  auto eps = draw_layer_noise(m, seed, 0);
  LatentStack s;
  s.z = posterior_sample(m, ctx, p, x, pa, eps);
  s.u_z = eps;
  s.parents_used = pa;
  return s;
}

inline std::vector<double> counterfactual_exogenous(
    const LadderModel& m, const std::vector<double>& x,
    const std::vector<double>& pa, const std::vector<double>& pa_cf,
    std::uint64_t seed) {
  if (m.variant != LadderVariant::ExogenousPrior)
    throw VariantMismatch("counterfactual_exogenous: model is not the exogenous-prior variant");
  LatentStack stack = sample_posterior_stack(m, x, pa, seed);
  std::vector<double> mu, sig, mu_cf, sig_cf;
  decode(m, stack, pa, mu, sig);
  decode(m, stack, pa_cf, mu_cf, sig_cf);
  std::vector<double> x_cf(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    x_cf[j] = mu_cf[j] + sig_cf[j] * (x[j] - mu[j]) / sig[j];
  return x_cf;
}

inline LatentStack abduct_mediator(const LadderModel& m,
                                   const std::vector<double>& x,
                                   const std::vector<double>& pa,
                                   std::uint64_t seed) {
  if (m.variant != LadderVariant::LatentMediator)
    throw VariantMismatch("abduct_mediator: model is not the latent-mediator variant");
  return sample_posterior_stack(m, x, pa, seed);
}

// Moment-matched Gaussian surrogate of the two-component mixture
// pi * p + (1 - pi) * q at one layer.
inline void mixture_params(const std::vector<double>& mu_p,
                           const std::vector<double>& sig_p,
                           const std::vector<double>& mu_q,
                           const std::vector<double>& sig_q, double pi,
                           std::vector<double>& mu_r,
                           std::vector<double>& sig_r) {
  if (pi < 0.0 || pi > 1.0)
    throw std::invalid_argument("mixture_params: pi must be in [0, 1]");
  const std::size_t d = mu_p.size();
  mu_r.resize(d);
  sig_r.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    if (pi == 0.0) {
      mu_r[j] = mu_q[j];
      sig_r[j] = sig_q[j];
      continue;
    }
    if (pi == 1.0) {
      mu_r[j] = mu_p[j];
      sig_r[j] = sig_p[j];
      continue;
    }
    mu_r[j] = pi * mu_p[j] + (1.0 - pi) * mu_q[j];
    double second = pi * (sig_p[j] * sig_p[j] + mu_p[j] * mu_p[j]) +
                    (1.0 - pi) * (sig_q[j] * sig_q[j] + mu_q[j] * mu_q[j]);
    sig_r[j] = std::sqrt(std::max(second - mu_r[j] * mu_r[j], 0.0));
  }
}

struct MediatorCounterfactual {
  std::vector<double> x_cf;
  LatentStack cf_stack;
  LatentStack factual_stack;
};

inline MediatorCounterfactual counterfactual_mediator(
    const LadderModel& m, const std::vector<double>& x,
    const std::vector<double>& pa, const std::vector<double>& pa_cf, double pi,
    std::uint64_t seed) {
  using namespace ladder_detail;
  if (m.variant != LadderVariant::LatentMediator)
    throw VariantMismatch("counterfactual_mediator: model is not the latent-mediator variant");
  if (pi < 0.0 || pi > 1.0)
    throw std::invalid_argument("counterfactual_mediator: pi must be in [0, 1]");
  ScalarCtx ctx;
  auto p = pack_plain(m);
  MediatorCounterfactual out;
  out.factual_stack = abduct_mediator(m, x, pa, seed);
  auto feats = bottom_up(m, ctx, p, x);
  out.cf_stack.z = mediator_cf_stack(m, ctx, p, out.factual_stack.z,
                                     out.factual_stack.u_z, feats, pa, pa_cf, pi);
  out.cf_stack.u_z = out.factual_stack.u_z;
  out.cf_stack.parents_used = pa_cf;
  std::vector<double> mu, sig, mu_cf, sig_cf;
  decode(m, out.factual_stack, pa, mu, sig);
  decode(m, out.cf_stack, pa_cf, mu_cf, sig_cf);
  out.x_cf.resize(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    out.x_cf[j] = mu_cf[j] + sig_cf[j] * (x[j] - mu[j]) / sig[j];
  return out;
}

// Mediation effects. g(pa, z) is the decoder mean/std composed with the
// fixed abducted U_x.
inline EffectReport effects(const LadderModel& m, const std::vector<double>& x,
                            const std::vector<double>& pa,
                            const std::vector<double>& pa_cf, double pi,
                            std::uint64_t seed) {
  MediatorCounterfactual cf = counterfactual_mediator(m, x, pa, pa_cf, pi, seed);
  std::vector<double> mu, sig;
  decode(m, cf.factual_stack, pa, mu, sig);
  std::vector<double> u_x(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) u_x[j] = (x[j] - mu[j]) / sig[j];
  auto g = [&](const LatentStack& stack, const std::vector<double>& parents) {
    std::vector<double> gm, gs, out(x.size());
    decode(m, stack, parents, gm, gs);
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = gm[j] + gs[j] * u_x[j];
    return out;
  };
  std::vector<double> g_pp_z = g(cf.factual_stack, pa_cf);
  std::vector<double> g_p_z = g(cf.factual_stack, pa);
  std::vector<double> g_p_zt = g(cf.cf_stack, pa);
  std::vector<double> g_pp_zt = g(cf.cf_stack, pa_cf);
  EffectReport rep;
  std::vector<std::size_t> shape = {m.dims.x_dim};
  rep.de = Tensor(shape);
  rep.ie = Tensor(shape);
  rep.te = Tensor(shape);
  for (std::size_t j = 0; j < x.size(); ++j) {
    rep.de[j] = g_pp_z[j] - g_p_z[j];
    rep.ie[j] = g_p_zt[j] - g_p_z[j];
    rep.te[j] = g_pp_zt[j] - g_p_z[j];
    rep.telescoping_residual =
        std::max(rep.telescoping_residual,
                 std::abs((rep.te[j] - rep.ie[j]) - (g_pp_zt[j] - g_p_zt[j])));
  }
  rep.de_l1 = l1_norm(rep.de);
  rep.ie_l1 = l1_norm(rep.ie);
  rep.te_l1 = l1_norm(rep.te);
  return rep;
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct LadderTrainConfig {
  AdamConfig adam{.lr = 3e-3};
  std::size_t epochs = 50;
  std::uint64_t seed = 42;
};

struct LadderTrainResult {
  std::vector<double> free_energy_trace;  // per epoch
  double constraint_c = 0.0;              // final-epoch mean free energy
};

// Mean ELBO gradient over the dataset at the current parameters; noise per
// (row, epoch) is deterministic.
inline std::vector<double> elbo_mean_gradient(
    const LadderModel& m, const Dataset& data,
    const std::vector<std::vector<double>>& pa_rows, std::uint64_t noise_seed,
    double* mean_fe = nullptr) {
  using namespace ladder_detail;
  std::vector<double> grad;
  double fe_sum = 0.0;
  const std::size_t n = data.size();
  for (std::size_t r = 0; r < n; ++r) {
    Tape tape;
    TapeCtx ctx{&tape};
    std::vector<Ad> flat;
    auto p = pack_vars(m, tape, flat);
    std::vector<Ad> x = lift_vec<Ad>(ctx, data.image_vec(r));
    std::vector<Ad> pa = lift_vec<Ad>(ctx, pa_rows[r]);
    auto eps = draw_layer_noise(m, noise_seed, r);
    Ad e = elbo_core(m, ctx, p, x, pa, eps);
    if (!std::isfinite(e.v)) throw DivergenceError("train: ELBO diverged");
    fe_sum += -e.v;
    Ad loss = -e / static_cast<double>(n);
    auto adj = tape.gradient(loss.id);
    if (grad.empty()) grad.assign(flat.size(), 0.0);
    for (std::size_t k = 0; k < flat.size(); ++k) grad[k] += adj[flat[k].id];
  }
  if (mean_fe) *mean_fe = fe_sum / static_cast<double>(n);
  return grad;
}

inline LadderTrainResult train(LadderModel& m, const Dataset& data,
                               const std::vector<std::vector<double>>& pa_rows,
                               const LadderTrainConfig& cfg) {
  if (!data.images.all_finite())
    throw DivergenceError("train: non-finite value in dataset");
  LadderTrainResult res;
  if (cfg.epochs == 0 || data.size() == 0) {
    double fe = 0.0;
    for (std::size_t r = 0; r < data.size(); ++r)
      fe += -elbo(m, data.image_vec(r), pa_rows[r], cfg.seed, r).elbo;
    res.constraint_c = data.size() ? fe / static_cast<double>(data.size()) : 0.0;
    res.free_energy_trace.push_back(res.constraint_c);
    return res;
  }
  Adam opt(cfg.adam);
  std::vector<double> flat = m.flat_params();
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::uint64_t noise_seed = rng::splitmix(cfg.seed ^ (0xE000 + e));
    double fe = 0.0;
    std::vector<double> grad = elbo_mean_gradient(m, data, pa_rows, noise_seed, &fe);
    res.free_energy_trace.push_back(fe);
    opt.step(flat, grad);
    m.set_flat_params(flat);
  }
  // Constraint level: mean free energy at the final parameters.
  double fe = 0.0;
  std::uint64_t noise_seed = rng::splitmix(cfg.seed ^ 0xC0DA);
  for (std::size_t r = 0; r < data.size(); ++r) {
    using namespace ladder_detail;
    ScalarCtx ctx;
    auto p = pack_plain(m);
    auto eps = draw_layer_noise(m, noise_seed, r);
    fe += -elbo_core(m, ctx, p, data.image_vec(r), pa_rows[r], eps);
  }
  res.constraint_c = fe / static_cast<double>(data.size());
  return res;
}

}  // namespace cfscm
