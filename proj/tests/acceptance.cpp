// Acceptance gate: ten independent criteria covering composition exactness,
// abduction round-trips, the closed-form GLM, residual quantization,
// gradient correctness, the MI bound, constrained fine-tuning dynamics,
// the soundness harness, mediation algebra, and CLI determinism. One
// pass/fail line per criterion; nonzero exit if any fail.
//
// Usage: acceptance [path-to-cli]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cfscm/cf_train.hpp"
#include "cfscm/dataset.hpp"
#include "cfscm/ladder.hpp"
#include "cfscm/linalg.hpp"
#include "cfscm/mechanisms.hpp"
#include "cfscm/scm.hpp"
#include "cfscm/soundness.hpp"
#include "cfscm/synthpop.hpp"
#include "cfscm/vq_glm.hpp"

using namespace cfscm;
namespace sp = cfscm::synthpop;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Problem scales. The tolerances themselves are part of the contract and
// are written inline at each check.
constexpr std::size_t kCompositionSamples = 1000;
constexpr std::size_t kRoundtripInstances = 10000;
constexpr std::size_t kGlmProblems = 100;
constexpr std::size_t kQuantVectors = 10000;
constexpr std::size_t kGradModels = 100;
constexpr std::size_t kMiScms = 50;
constexpr std::size_t kMediationQueries = 50;

// Fine-tuning study (criteria 7 and 8): fixed dataset seed 42, desk-scale
// ladder, full-batch training.
constexpr std::size_t kStudyRows = 240;
constexpr std::size_t kPretrainEpochs = 30;
constexpr std::size_t kFinetuneEpochs = 25;
constexpr std::size_t kPredictorEpochs = 600;
constexpr std::size_t kPredictorHidden = 16;

int g_failed_checks = 0;

bool check(bool ok, const std::string& what) {
  if (!ok) {
    std::cout << "    check failed: " << what << "\n";
    ++g_failed_checks;
  }
  return ok;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> random_vec(std::size_t n, const NoiseKey& key,
                               double scale = 1.0) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = scale * key.normal(i);
  return v;
}

// ---------------------------------------------------------------------------
// Criterion 1: null-intervention composition across all four model families.
// ---------------------------------------------------------------------------

ScmGraph attribute_graph() {
  auto y = std::make_shared<CategoricalMechanism>(0, 3);
  y->logits_net().init_random(NoiseKey{21, 1, 0});
  auto t = std::make_shared<AffineFlowMechanism>(0);
  t->loc_net().params()[t->loc_net().bias_index(0)] = 0.4;
  t->logscale_net().params()[t->logscale_net().bias_index(0)] = -1.2;
  auto i = std::make_shared<AffineFlowMechanism>(4);
  i->loc_net().init_random(NoiseKey{21, 2, 0});
  i->logscale_net().params()[i->logscale_net().bias_index(0)] = -1.0;
  ScmGraph g;
  g.add_node({"y", VarKind::Categorical, 3}, {}, y);
  g.add_node({"t"}, {}, t);
  g.add_node({"i"}, {"y", "t"}, i);
  return g;
}

bool criterion1() {
  auto start = Clock::now();
  bool ok = true;

  ScmGraph g = attribute_graph();
  double scm_err = 0.0;
  for (std::size_t s = 0; s < kCompositionSamples; ++s) {
    World w = g.forward_world(7, s);
    World cf = counterfactual(g, w.endogenous, Intervention::none(), 7);
    for (const auto& [name, v] : w.endogenous) {
      const Tensor& c = cf.endogenous.at(name);
      for (std::size_t j = 0; j < v.numel(); ++j)
        scm_err = std::max(scm_err, std::abs(c[j] - v[j]));
    }
  }
  ok &= check(scm_err <= 1e-6, "attribute-scm composition err " +
                                   std::to_string(scm_err));

  sp::Generated gen = sp::generate(101, kCompositionSamples);
  PaScaler scaler = PaScaler::fit(gen.data);
  LadderDims dims;
  dims.z = {8, 4};
  dims.h_dim = 16;
  dims.hidden = 8;
  LadderModel exo = LadderModel::create(LadderVariant::ExogenousPrior, dims, 3);
  LadderModel med = LadderModel::create(LadderVariant::LatentMediator, dims, 4);
  double exo_err = 0.0, med_err = 0.0;
  for (std::size_t r = 0; r < gen.data.size(); ++r) {
    std::vector<double> x = gen.data.image_vec(r);
    std::vector<double> pa =
        scaler.encode(gen.data.y[r], gen.data.t[r], gen.data.i[r]);
    exo_err = std::max(exo_err,
                       max_abs_diff(counterfactual_exogenous(exo, x, pa, pa, r), x));
    med_err = std::max(
        med_err,
        max_abs_diff(counterfactual_mediator(med, x, pa, pa, 0.0, r).x_cf, x));
  }
  ok &= check(exo_err <= 1e-6, "exogenous-ladder composition err " +
                                   std::to_string(exo_err));
  ok &= check(med_err <= 1e-6, "mediator-ladder (pi=0) composition err " +
                                   std::to_string(med_err));

  // vq-glm: null counterfactual against the quantized-reconstruction floor
  const std::size_t latent_dim = 16;
  VqGlmModel vq;
  vq.ae = fit_linear_autoencoder(gen.data.images, latent_dim, 9);
  std::vector<std::vector<double>> halves, latents, parents;
  for (std::size_t r = 0; r < gen.data.size(); ++r) {
    std::vector<double> z = vq.ae.encode(gen.data.image_vec(r));
    halves.emplace_back(z.begin(), z.begin() + latent_dim / 2);
    halves.emplace_back(z.begin() + latent_dim / 2, z.end());
    latents.push_back(std::move(z));
    parents.push_back(
        vq_parent_row({gen.data.y[r], gen.data.t[r], gen.data.i[r]}));
  }
  vq.codebook = fit_codebook(halves, 32, 25, 9);
  vq.design = DesignMatrix::build(parents);
  Tensor Z({gen.data.size(), latent_dim});
  for (std::size_t r = 0; r < gen.data.size(); ++r) {
    std::vector<double> q = quantize_latent(vq.codebook, latents[r]);
    for (std::size_t c = 0; c < latent_dim; ++c) Z.at2(r, c) = q[c];
  }
  vq.glm.B = glm_fit(Z, vq.design.P, vq.glm.delta);
  bool vq_ok = true;
  for (std::size_t r = 0; r < gen.data.size(); ++r) {
    std::vector<double> x = gen.data.image_vec(r);
    std::vector<double> x_cf = latent_counterfactual(vq, x, parents[r], parents[r]);
    std::vector<double> recon =
        vq.ae.decode(quantize_latent(vq.codebook, vq.ae.encode(x)));
    if (max_abs_diff(x_cf, x) > max_abs_diff(recon, x) + 1e-9) vq_ok = false;
  }
  ok &= check(vq_ok, "vq-glm null counterfactual above reconstruction floor");

  double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::cout << "    composition runtime " << secs << " s\n";
  ok &= check(secs < 60.0, "criterion 1 runtime under one minute");
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 2: reparameterization round-trips (epsilon, U_x, U_z).
// ---------------------------------------------------------------------------

bool criterion2() {
  LadderDims dims;
  dims.x_dim = 8;
  dims.pa_dim = 3;
  dims.z = {3, 2};
  dims.h_dim = 4;
  dims.hidden = 3;
  LadderModel m = LadderModel::create(LadderVariant::ExogenousPrior, dims, 11);
  AffineFlowMechanism mech(2, 3);
  mech.loc_net().init_random(NoiseKey{12, 1, 0});
  mech.logscale_net().init_random(NoiseKey{12, 2, 0});

  double eps_err = 0.0, uz_err = 0.0, ux_err = 0.0;
  for (std::size_t inst = 0; inst < kRoundtripInstances; ++inst) {
    NoiseKey key{5, 1, inst};
    std::vector<double> x = random_vec(dims.x_dim, key);
    NoiseKey key2{5, 2, inst};
    std::vector<double> pa = random_vec(dims.pa_dim, key2);

    // epsilon / U_x at the decoder: x reassembles from mu + sig * eps
    LatentStack stack = sample_posterior_stack(m, x, pa, inst);
    std::vector<double> eps = abduct_epsilon(m, x, stack, pa);
    std::vector<double> mu, sig;
    decode(m, stack, pa, mu, sig);
    for (std::size_t j = 0; j < x.size(); ++j)
      eps_err = std::max(eps_err, std::abs(mu[j] + sig[j] * eps[j] - x[j]));

    // U_z at each layer: recompute the posterior moments independently
    std::vector<std::vector<double>> feats;
    feats.push_back(m.bu[0].eval(x));
    for (std::size_t i = 1; i < m.layers(); ++i)
      feats.push_back(m.bu[i].eval(feats[i - 1]));
    std::vector<double> z_above;
    for (std::size_t ii = m.layers(); ii-- > 0;) {
      std::vector<double> in = z_above;
      in.insert(in.end(), feats[ii].begin(), feats[ii].end());
      in.insert(in.end(), pa.begin(), pa.end());
      std::vector<double> out = m.post[ii].eval(in);
      const std::size_t d = out.size() / 2;
      for (std::size_t j = 0; j < d; ++j) {
        double s = std::exp(clamp_logscale(out[d + j]));
        double z_re = out[j] + s * stack.u_z[ii][j];
        uz_err = std::max(uz_err, std::abs(z_re - stack.z[ii][j]));
      }
      z_above.insert(z_above.end(), stack.z[ii].begin(), stack.z[ii].end());
    }

    // U_x at the mechanism level: forward(abduct(x)) == x
    NoiseKey key3{5, 3, inst};
    std::vector<double> mpa = {key3.normal(0), key3.normal(1)};
    double xv = 3.0 * key3.normal(2);
    NoiseKey dummy{0, 0, 0};
    Tensor u = mech.abduct(mpa, Tensor::scalar(xv), dummy);
    ux_err = std::max(ux_err,
                      std::abs(mech.forward(mpa, u).as_scalar() - xv));
  }
  bool ok = true;
  ok &= check(eps_err <= 1e-9, "epsilon roundtrip err " + std::to_string(eps_err));
  ok &= check(uz_err <= 1e-9, "U_z roundtrip err " + std::to_string(uz_err));
  ok &= check(ux_err <= 1e-9, "U_x roundtrip err " + std::to_string(ux_err));
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 3: GLM against an independent least-squares oracle.
// ---------------------------------------------------------------------------

// Gauss-Jordan with partial pivoting; deliberately unrelated to the
// library's Cholesky path.
Tensor gauss_solve(Tensor A, Tensor R) {
  const std::size_t n = A.shape[0], k = R.shape[1];
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(A.at2(r, col)) > std::abs(A.at2(piv, col))) piv = r;
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(A.at2(col, c), A.at2(piv, c));
      for (std::size_t c = 0; c < k; ++c) std::swap(R.at2(col, c), R.at2(piv, c));
    }
    double d = A.at2(col, col);
    for (std::size_t c = 0; c < n; ++c) A.at2(col, c) /= d;
    for (std::size_t c = 0; c < k; ++c) R.at2(col, c) /= d;
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = A.at2(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) A.at2(r, c) -= f * A.at2(col, c);
      for (std::size_t c = 0; c < k; ++c) R.at2(r, c) -= f * R.at2(col, c);
    }
  }
  return R;
}

bool criterion3() {
  bool ok = true;
  double fit_err = 0.0, ortho_rel = 0.0;
  for (std::size_t prob = 0; prob < kGlmProblems; ++prob) {
    NoiseKey key{31, prob, 0};
    auto pick = [&](double lo, double hi, std::uint64_t slot) {
      return lo + key.uniform(slot) * (hi - lo);
    };
    std::size_t m = 1 + static_cast<std::size_t>(pick(0, 7.999, 1));
    std::size_t N = m + 2 + static_cast<std::size_t>(pick(0, 190, 2));
    N = std::min<std::size_t>(N, 200);
    std::size_t K = 1 + static_cast<std::size_t>(pick(0, 30.999, 3));

    std::vector<std::vector<double>> parents(N);
    for (std::size_t r = 0; r < N; ++r)
      parents[r] = random_vec(m, NoiseKey{31, 1000 + prob, r});
    Tensor Z({N, K});
    for (std::size_t i = 0; i < Z.numel(); ++i)
      Z[i] = NoiseKey{31, 2000 + prob, 0}.normal(i);

    DesignMatrix d = DesignMatrix::build(parents);
    const double delta = 1e-8;
    Tensor B = glm_fit(Z, d.P, delta);

    Tensor Pt = linalg::transpose(d.P);
    Tensor G = linalg::matmul(Pt, d.P);
    for (std::size_t i = 0; i < G.shape[0]; ++i) G.at2(i, i) += delta;
    Tensor PtZ = linalg::matmul(Pt, Z);
    Tensor B_oracle = gauss_solve(G, PtZ);
    for (std::size_t i = 0; i < B.numel(); ++i)
      fit_err = std::max(fit_err, std::abs(B[i] - B_oracle[i]));

    Tensor U = glm_abduct(B, Z, d.P);
    Tensor PtU = linalg::matmul(Pt, U);
    double num = 0.0, den = 1.0;
    for (std::size_t i = 0; i < PtU.numel(); ++i)
      num = std::max(num, std::abs(PtU[i]));
    for (std::size_t i = 0; i < PtZ.numel(); ++i)
      den = std::max(den, std::abs(PtZ[i]));
    ortho_rel = std::max(ortho_rel, num / den);
  }
  ok &= check(fit_err <= 1e-8, "B vs oracle err " + std::to_string(fit_err));
  ok &= check(ortho_rel <= 1e-6,
              "P^T U relative magnitude " + std::to_string(ortho_rel));

  Tensor P({2, 2}, {1.0, 0.0, 1.0, 1.0});
  Tensor Zh({2, 1}, {2.0, 4.0});
  Tensor Bh = glm_fit(Zh, P, 0.0);
  ok &= check(Bh.at2(0, 0) == 2.0 && Bh.at2(1, 0) == 2.0,
              "hand example B == [2, 2] exactly");
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 4: residual quantization never hurts; quantize matches a scan.
// ---------------------------------------------------------------------------

bool criterion4() {
  const std::size_t dim = 4;
  std::vector<std::vector<double>> entries;
  for (std::size_t k = 0; k < 23; ++k)
    entries.push_back(random_vec(dim, NoiseKey{41, k + 1, 0}, 1.5));
  Codebook cb = Codebook::with_entries(dim, entries);

  auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };

  std::size_t scan_mismatches = 0, violations = 0;
  for (std::size_t inst = 0; inst < kQuantVectors; ++inst) {
    NoiseKey key{43, 7, inst};
    double scale = 0.25 + 3.0 * key.uniform(99);
    std::vector<double> z = random_vec(dim, key, scale);
    std::size_t got = quantize(cb, z);
    std::size_t want = 0;
    double best = dist2(z, cb.entries[0]);
    for (std::size_t k = 1; k < cb.size(); ++k) {
      double d = dist2(z, cb.entries[k]);
      if (d < best) {
        best = d;
        want = k;
      }
    }
    if (got != want) ++scan_mismatches;
    std::vector<double> q = quantize_residual(cb, z);
    if (dist2(z, q) > dist2(z, cb.entries[got])) ++violations;
  }
  bool ok = true;
  ok &= check(scan_mismatches == 0, "quantize matches exhaustive scan");
  ok &= check(violations == 0, "residual stage never increases the error");
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 5: gradients against central finite differences.
// ---------------------------------------------------------------------------

Dataset tiny_dataset(std::size_t n, std::size_t x_dim, std::uint64_t seed) {
  Dataset d;
  d.image_rows = 1;
  d.image_cols = x_dim;
  d.images = Tensor({n, x_dim});
  for (std::size_t i = 0; i < d.images.numel(); ++i)
    d.images[i] = NoiseKey{seed, 8, 0}.normal(i);
  d.y.assign(n, 0);
  d.t.assign(n, 1.0);
  d.i.assign(n, 100.0);
  return d;
}

bool fd_matches(const std::vector<double>& grad,
                const std::function<double(const std::vector<double>&)>& loss,
                const std::vector<double>& flat0) {
  const double h = 1e-5;
  double max_g = 0.0;
  for (double g : grad) max_g = std::max(max_g, std::abs(g));
  double tol = 1e-4 * std::max(1.0, max_g);
  for (std::size_t k = 0; k < flat0.size(); ++k) {
    std::vector<double> up = flat0, dn = flat0;
    up[k] += h;
    dn[k] -= h;
    double fd = (loss(up) - loss(dn)) / (2.0 * h);
    if (std::abs(fd - grad[k]) > tol) return false;
  }
  return true;
}

bool criterion5() {
  std::size_t elbo_fail = 0, cf_fail = 0;
  for (std::size_t t = 0; t < kGradModels; ++t) {
    NoiseKey key{77, t, 0};
    LadderDims dims;
    dims.x_dim = 3 + static_cast<std::size_t>(key.uniform(1) * 3.0);
    dims.pa_dim = 1 + static_cast<std::size_t>(key.uniform(2) * 2.0);
    dims.z.assign(1 + t % 2, 0);
    for (auto& zd : dims.z)
      zd = 1 + static_cast<std::size_t>(key.uniform(3) * 2.0);
    dims.h_dim = 2 + static_cast<std::size_t>(key.uniform(4) * 2.0);
    dims.hidden = (t % 3 == 0) ? 0 : 2;
    LadderVariant variant = t % 2 ? LadderVariant::LatentMediator
                                  : LadderVariant::ExogenousPrior;
    LadderModel m = LadderModel::create(variant, dims, 1000 + t);

    const std::size_t n = 2;
    Dataset d = tiny_dataset(n, dims.x_dim, 500 + t);
    std::vector<std::vector<double>> pa_rows;
    for (std::size_t r = 0; r < n; ++r)
      pa_rows.push_back(random_vec(dims.pa_dim, NoiseKey{600 + t, r, 0}));

    const std::uint64_t noise_seed = 555 + t;
    std::vector<double> flat0 = m.flat_params();
    std::vector<double> g_elbo = elbo_mean_gradient(m, d, pa_rows, noise_seed);
    auto elbo_loss = [&](const std::vector<double>& flat) {
      LadderModel m2 = m;
      m2.set_flat_params(flat);
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r)
        s += -elbo(m2, d.image_vec(r), pa_rows[r], noise_seed, r).elbo;
      return s / static_cast<double>(n);
    };
    if (!fd_matches(g_elbo, elbo_loss, flat0)) ++elbo_fail;

    std::vector<ParentPredictor> preds(3);
    preds[0].kind = ParentKind::Categorical;
    preds[0].net = ParamFn(dims.x_dim, 3, 0);
    preds[1].net = ParamFn(dims.x_dim, 2, 0);
    preds[2].net = ParamFn(dims.x_dim, 2, 0);
    for (std::size_t k = 0; k < 3; ++k)
      preds[k].net.init_random(NoiseKey{700 + t, k, 0});
    std::vector<CfItem> items;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < 3; ++k) {
        CfItem item;
        item.x = d.image_vec(r);
        item.pa = pa_rows[r];
        item.pa_cf = random_vec(dims.pa_dim, NoiseKey{800 + t, 3 * r + k, 0});
        item.predictor = k;
        item.target = k == 0 ? static_cast<double>((r + k) % 3)
                             : NoiseKey{900 + t, r, k}.normal(0);
        item.sample = r;
        items.push_back(std::move(item));
      }
    }
    double pi = variant == LadderVariant::LatentMediator ? key.uniform(6) : 0.0;
    double val = 0.0;
    std::vector<double> g_cf =
        counterfactual_loss_gradient(m, preds, items, pi, noise_seed, &val);
    if (std::abs(val - counterfactual_loss(m, preds, items, pi, noise_seed)) >
        1e-12)
      ++cf_fail;
    auto cf_loss = [&](const std::vector<double>& flat) {
      LadderModel m2 = m;
      m2.set_flat_params(flat);
      return counterfactual_loss(m2, preds, items, pi, noise_seed);
    };
    if (!fd_matches(g_cf, cf_loss, flat0)) ++cf_fail;
  }
  bool ok = true;
  ok &= check(elbo_fail == 0,
              "elbo gradient FD failures: " + std::to_string(elbo_fail));
  ok &= check(cf_fail == 0,
              "cf-loss gradient FD failures: " + std::to_string(cf_fail));
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 6: MI lower bound vs brute-force MI on discrete channels.
// ---------------------------------------------------------------------------

bool criterion6() {
  bool ok = true;
  std::size_t violations = 0;
  for (std::size_t t = 0; t < kMiScms; ++t) {
    NoiseKey key{88, t, 0};
    const std::size_t K = 2 + t % 3;            // parent outcomes
    const std::size_t M = 2 + (t / 3) % 3;      // observation outcomes
    if (K * M > 16) continue;
    // random joint p(a, x)
    std::vector<double> p(K * M);
    double tot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = 0.05 + key.uniform(i);
      tot += p[i];
    }
    for (double& v : p) v /= tot;
    // arbitrary conditional model q(a | x) from random logits
    std::vector<double> q(K * M);
    for (std::size_t x = 0; x < M; ++x) {
      double z = 0.0;
      for (std::size_t a = 0; a < K; ++a) {
        q[a * M + x] = std::exp(1.5 * NoiseKey{89, t, x}.normal(a));
        z += q[a * M + x];
      }
      for (std::size_t a = 0; a < K; ++a) q[a * M + x] /= z;
    }
    std::vector<double> pa(K, 0.0), px(M, 0.0);
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t x = 0; x < M; ++x) {
        pa[a] += p[a * M + x];
        px[x] += p[a * M + x];
      }
    double mi = 0.0, mean_log_q = 0.0, entropy = 0.0;
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t x = 0; x < M; ++x) {
        double pax = p[a * M + x];
        if (pax > 0.0) {
          mi += pax * std::log(pax / (pa[a] * px[x]));
          mean_log_q += pax * std::log(q[a * M + x]);
        }
      }
    for (double v : pa) entropy -= v * std::log(v);
    if (mi_lower_bound(mean_log_q, entropy) > mi + 1e-9) ++violations;
  }
  ok &= check(violations == 0,
              "bound exceeded brute-force MI on " + std::to_string(violations) +
                  " channels");

  // copy world: a perfect predictor saturates the bound at ln 2
  ParentPredictor pred;
  pred.kind = ParentKind::Categorical;
  pred.net = ParamFn(1, 2, 0);
  pred.net.params()[0] = -60.0;  // class-0 weight on x
  pred.net.params()[pred.net.bias_index(0)] = 30.0;
  pred.net.params()[1] = 60.0;
  pred.net.params()[pred.net.bias_index(1)] = -30.0;
  std::vector<std::vector<double>> xs = {{0.0}, {1.0}};
  std::vector<double> targets = {0.0, 1.0};
  double bound = mi_lower_bound(pred, xs, targets, std::log(2.0));
  ok &= check(std::abs(bound - std::log(2.0)) <= 1e-9,
              "copy-world bound " + std::to_string(bound));
  ok &= check(bound <= std::log(2.0) + 1e-9, "copy-world bound soundness");
  return ok;
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8 share one train-then-finetune study.
// ---------------------------------------------------------------------------

struct Study {
  bool ready = false;
  sp::Generated gen;
  PaScaler scaler;
  std::vector<std::vector<double>> pa_rows;
  LadderModel model_pre, model_post;
  PredictorSet preds;
  AttributeModel attrs;
  double c = 0.0;
  FinetuneTrace trace;
  double pre_mae = 0.0, post_mae = 0.0;
  double seconds = 0.0;
};

Study run_study() {
  auto start = Clock::now();
  Study s;
  s.gen = sp::generate(42, kStudyRows);
  const Dataset& data = s.gen.data;
  s.scaler = PaScaler::fit(data);
  for (std::size_t r = 0; r < data.size(); ++r)
    s.pa_rows.push_back(s.scaler.encode(data.y[r], data.t[r], data.i[r]));

  LadderDims dims;
  dims.z = {8, 4};
  dims.h_dim = 16;
  dims.hidden = 8;
  LadderModel m = LadderModel::create(LadderVariant::LatentMediator, dims, 42);
  LadderTrainConfig tc;
  tc.epochs = kPretrainEpochs;
  tc.seed = 42;
  LadderTrainResult res = train(m, data, s.pa_rows, tc);
  s.c = res.constraint_c;

  PredictorFitConfig pc;
  pc.epochs = kPredictorEpochs;
  pc.hidden = kPredictorHidden;
  pc.adam.lr = 5e-3;
  s.preds = fit_predictors(data, pc);
  s.attrs = AttributeModel::fit(data, s.scaler);

  s.model_pre = m;
  AttrCfFn gt = ground_truth_attr_cf();
  LadderMediatorAdapter pre_adapter(&s.model_pre, &s.scaler, 0.0, "pre");
  s.pre_mae = effectiveness_metric(pre_adapter, s.preds.items[1], data, 1, gt, 42);

  FinetuneConfig fc;
  fc.epochs = kFinetuneEpochs;
  fc.pi = 0.0;
  fc.seed = 42;
  s.trace = finetune_constrained(m, s.preds.items, s.attrs, data, s.pa_rows,
                                 s.c, fc);
  s.model_post = m;
  LadderMediatorAdapter post_adapter(&s.model_post, &s.scaler, 0.0, "post");
  s.post_mae =
      effectiveness_metric(post_adapter, s.preds.items[1], data, 1, gt, 42);
  s.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  s.ready = true;
  return s;
}

bool criterion7(const Study& s) {
  if (!s.ready) return check(false, "study did not complete");
  bool ok = true;

  // multiplier ascends iff the free-energy constraint is violated
  bool sign_ok = true;
  double prev = 0.0;  // lambda_init
  for (std::size_t e = 0; e < s.trace.lambda.size(); ++e) {
    double d = s.trace.lambda[e] - prev;
    if (s.trace.f_fe[e] > s.c && d <= 0.0) sign_ok = false;
    if (s.trace.f_fe[e] < s.c && d > 0.0) sign_ok = false;
    prev = s.trace.lambda[e];
  }
  ok &= check(sign_ok, "lambda update sign matches (F_FE - c)");

  double final_fe = s.trace.f_fe.back();
  std::cout << "    constraint c " << s.c << ", final F_FE " << final_fe
            << ", pre t-MAE " << s.pre_mae << ", post t-MAE " << s.post_mae
            << ", runtime " << s.seconds << " s\n";
  // "within 2% of the budget"; the band is |c|-scaled so a negative free
  // energy does not flip the slack into an extra-strict requirement
  ok &= check(final_fe <= s.c + 0.02 * std::abs(s.c),
              "final mean F_FE within a 2% band of c");
  ok &= check(s.post_mae < s.pre_mae,
              "t effectiveness strictly improves after fine-tuning");
  ok &= check(s.seconds < 900.0, "study runtime under 15 minutes");
  return ok;
}

bool criterion8(const Study& s) {
  if (!s.ready) return check(false, "study did not complete");
  bool ok = true;
  const Dataset& data = s.gen.data;
  OracleAdapter oracle(&s.gen.noises);
  IgnoreInterventionAdapter ignore;
  AttrCfFn gt = ground_truth_attr_cf();

  double acc_o = effectiveness_metric(oracle, s.preds.items[0], data, 0, gt, 42);
  double acc_i = effectiveness_metric(ignore, s.preds.items[0], data, 0, gt, 42);
  ok &= check(acc_o > acc_i, "oracle beats control on y (accuracy " +
                                 std::to_string(acc_o) + " vs " +
                                 std::to_string(acc_i) + ")");
  for (std::size_t k = 1; k < 3; ++k) {
    double err_o = effectiveness_metric(oracle, s.preds.items[k], data, k, gt, 42);
    double err_i = effectiveness_metric(ignore, s.preds.items[k], data, k, gt, 42);
    ok &= check(err_o < err_i,
                std::string("oracle beats control on ") + parent_name(k));
  }

  LadderMediatorAdapter post_adapter(&s.model_post, &s.scaler, 0.0, "post");
  double d = cohens_d_attribute(post_adapter, oracle, s.preds.items[1], data, 1,
                                gt, 42);
  std::cout << "    Cohen's d (t, fine-tuned mediator vs oracle) " << d << "\n";
  ok &= check(std::abs(d) <= 0.5, "|Cohen's d| within 0.5");
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 9: mediation algebra.
// ---------------------------------------------------------------------------

bool criterion9() {
  LadderDims dims;
  dims.x_dim = 6;
  dims.pa_dim = 3;
  dims.z = {3, 2};
  dims.h_dim = 4;
  dims.hidden = 3;
  double residual = 0.0, null_l1 = 0.0;
  for (std::size_t q = 0; q < kMediationQueries; ++q) {
    LadderModel m =
        LadderModel::create(LadderVariant::LatentMediator, dims, 300 + q);
    NoiseKey key{91, q, 0};
    std::vector<double> x = random_vec(dims.x_dim, key);
    std::vector<double> pa = random_vec(dims.pa_dim, NoiseKey{92, q, 0});
    std::vector<double> pa_cf = random_vec(dims.pa_dim, NoiseKey{93, q, 0});
    double pi = static_cast<double>(q % 5) / 4.0;
    EffectReport rep = effects(m, x, pa, pa_cf, pi, q);
    residual = std::max(residual, rep.telescoping_residual);
    // exact null effects hold for the pure-abduction setting (pi = 0);
    // pi > 0 resamples latents toward the prior by design
    EffectReport null_rep = effects(m, x, pa, pa, 0.0, q);
    null_l1 = std::max({null_l1, null_rep.de_l1, null_rep.ie_l1,
                        null_rep.te_l1});
  }
  bool ok = true;
  ok &= check(residual <= 1e-9,
              "telescoping residual " + std::to_string(residual));
  ok &= check(null_l1 <= 1e-9,
              "null-query effect mass " + std::to_string(null_l1));
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 10: CLI pipeline determinism.
// ---------------------------------------------------------------------------

bool run_cli(const std::string& cli, const std::string& args) {
  std::string cmd = cli + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str()) == 0;
}

bool dirs_bit_identical(const fs::path& a, const fs::path& b) {
  std::map<std::string, fs::path> fa, fb;
  for (auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa[fs::relative(e.path(), a).string()] = e.path();
  for (auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb[fs::relative(e.path(), b).string()] = e.path();
  if (fa.size() != fb.size()) return false;
  for (auto& [rel, pa] : fa) {
    auto it = fb.find(rel);
    if (it == fb.end()) return false;
    std::ifstream sa(pa, std::ios::binary), sb(it->second, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(sa)),
                   std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(sb)),
                   std::istreambuf_iterator<char>());
    if (ca != cb) return false;
  }
  return true;
}

bool criterion10(const std::string& cli) {
  if (cli.empty()) return check(false, "no CLI path supplied");
  fs::path work = fs::temp_directory_path() / "cfscm_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  std::ofstream(work / "train.json")
      << R"({"variant":"mediator","pi":0.0,)"
      << R"("dims":{"z":[4,2],"h_dim":4,"hidden":3},)"
      << R"("ladder":{"epochs":2},"predictor":{"epochs":3,"hidden":3},)"
      << R"("attributes":{"epochs":40}})";
  std::ofstream(work / "glm.json") << R"({"latent_dim":8,"codebook_entries":16})";

  bool ok = true;
  for (const char* run : {"run1", "run2"}) {
    fs::path d = work / run;
    fs::create_directories(d);
    std::string ds = (d / "data").string(), md = (d / "model").string();
    ok &= run_cli(cli, "synth --out " + ds + " --n 60 --seed 5");
    ok &= run_cli(cli, "train --config " + (work / "train.json").string() +
                           " --data " + ds + " --out " + md + " --seed 5");
    ok &= run_cli(cli, "counterfactual --model " + md + " --obs 0 --data " + ds +
                           " --do t=2.0 --out " + (d / "cf.cft").string() +
                           " --seed 11");
    ok &= run_cli(cli, "effects --model " + md + " --obs 0 --data " + ds +
                           " --do t=2.0 --out " + (d / "fx").string() +
                           " --seed 11");
    ok &= run_cli(cli, "evaluate --models " + md + " --dataset " + ds +
                           " --out " + (d / "report").string() +
                           " --limit 6 --seed 5");
    ok &= run_cli(cli, "glm fit --data " + ds + " --config " +
                           (work / "glm.json").string() + " --out " +
                           (d / "glm").string() + " --seed 5");
    ok &= run_cli(cli, "glm counterfactual --model " + (d / "glm").string() +
                           " --obs 0 --data " + ds + " --do t=2.0 --out " +
                           (d / "glm_cf.cft").string());
  }
  ok = check(ok, "every CLI invocation exits 0") && ok;
  ok &= check(dirs_bit_identical(work / "run1", work / "run2"),
              "re-run outputs are bit-identical");
  fs::remove_all(work);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli = argc > 1 ? argv[1] : "";
  int failures = 0;
  auto report = [&](int n, bool ok) {
    std::cout << "criterion " << n << ": " << (ok ? "PASS" : "FAIL") << "\n";
    if (!ok) ++failures;
  };
  auto guarded = [&](int n, auto&& fn) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      std::cout << "    exception: " << e.what() << "\n";
    }
    report(n, ok);
  };

  guarded(1, criterion1);
  guarded(2, criterion2);
  guarded(3, criterion3);
  guarded(4, criterion4);
  guarded(5, criterion5);
  guarded(6, criterion6);

  Study study;
  try {
    study = run_study();
  } catch (const std::exception& e) {
    std::cout << "    study exception: " << e.what() << "\n";
  }
  guarded(7, [&] { return criterion7(study); });
  guarded(8, [&] { return criterion8(study); });

  guarded(9, criterion9);
  guarded(10, [&] { return criterion10(cli); });

  if (failures) {
    std::cout << failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
