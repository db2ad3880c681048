#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cfscm/linalg.hpp"
#include "cfscm/rng.hpp"
#include "cfscm/tensor.hpp"

namespace cfscm {

// ---------------------------------------------------------------------------
// Linear autoencoder (alternating least squares; PCA-equivalent subspace).
// ---------------------------------------------------------------------------

struct LinearAutoencoder {
  Tensor enc;  // D x K
  Tensor dec;  // K x D

  std::vector<double> encode(const std::vector<double>& x) const {
    const std::size_t d = enc.shape[0], k = enc.shape[1];
    std::vector<double> z(k, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < k; ++j) z[j] += x[i] * enc.at2(i, j);
    return z;
  }
  std::vector<double> decode(const std::vector<double>& z) const {
    const std::size_t k = dec.shape[0], d = dec.shape[1];
    std::vector<double> x(d, 0.0);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < d; ++i) x[i] += z[j] * dec.at2(j, i);
    return x;
  }
};

// Alternates Z = X W^T (W W^T)^-1 and W = (Z^T Z)^-1 Z^T X until the
// reconstruction loss decrease drops below 1e-8 (or 200 iterations).
inline LinearAutoencoder fit_linear_autoencoder(const Tensor& X, std::size_t K,
                                                std::uint64_t seed = 7,
                                                std::size_t max_iters = 200) {
  using namespace linalg;
  const std::size_t N = X.shape[0], D = X.shape[1];
  if (N <= K) throw std::invalid_argument("fit_linear_autoencoder: need N > K");
  Tensor W({K, D});
  NoiseKey key{seed, 0xAE, 0};
  for (std::size_t i = 0; i < W.numel(); ++i) W[i] = key.normal(i);
  double prev = std::numeric_limits<double>::infinity();
  Tensor E({D, K});
  // Rank deficiency shows up as a pivot collapsing relative to the Gram
  // diagonal, not necessarily as an exact zero.
  auto rel_tol = [](const Tensor& g) {
    double m = 0.0;
    for (std::size_t i = 0; i < g.shape[0]; ++i)
      m = std::max(m, g.at2(i, i));
    return 1e-10 * m;
  };
  for (std::size_t it = 0; it < max_iters; ++it) {
    Tensor Wt = transpose(W);
    Tensor G = matmul(W, Wt);  // K x K
    try {
      E = transpose(spd_solve(G, W, rel_tol(G)));  // D x K: W^T (W W^T)^-1
    } catch (const SingularMatrix&) {
      throw RankDeficient("fit_linear_autoencoder: decoder rows degenerate");
    }
    Tensor Z = matmul(X, E);  // N x K
    Tensor ZtZ = matmul(transpose(Z), Z);
    try {
      W = spd_solve(ZtZ, matmul(transpose(Z), X), rel_tol(ZtZ));
    } catch (const SingularMatrix&) {
      throw RankDeficient("fit_linear_autoencoder: data rank below K");
    }
    Tensor R = matmul(Z, W);
    double loss = 0.0;
    for (std::size_t i = 0; i < R.numel(); ++i) {
      double d = X[i] - R[i];
      loss += d * d;
    }
    loss /= static_cast<double>(N);
    if (prev - loss < 1e-8) {
      prev = loss;
      break;
    }
    prev = loss;
  }
  LinearAutoencoder ae;
  // Final consistent encoder for the last decoder.
  Tensor G = matmul(W, transpose(W));
  ae.enc = transpose(linalg::spd_solve(G, W, rel_tol(G)));
  ae.dec = W;
  return ae;
}

// ---------------------------------------------------------------------------
// Codebook with reserved zero entry and fine-grained residual quantization.
// ---------------------------------------------------------------------------

struct Codebook {
  std::size_t dim = 0;
  std::vector<std::vector<double>> entries;  // entry 0 is the zero vector

  static Codebook with_entries(std::size_t dim,
                               std::vector<std::vector<double>> rest) {
    Codebook cb;
    cb.dim = dim;
    cb.entries.push_back(std::vector<double>(dim, 0.0));
    for (auto& e : rest) {
      if (e.size() != dim) throw std::invalid_argument("Codebook: entry dim mismatch");
      cb.entries.push_back(std::move(e));
    }
    if (cb.entries.size() < 1) throw std::invalid_argument("Codebook: empty");
    return cb;
  }
  std::size_t size() const { return entries.size(); }
};

inline std::size_t quantize(const Codebook& cb, const std::vector<double>& z) {
  if (z.size() != cb.dim) throw std::invalid_argument("quantize: dim mismatch");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.entries.size(); ++k) {
    double d = 0.0;
    for (std::size_t j = 0; j < cb.dim; ++j) {
      double t = z[j] - cb.entries[k][j];
      d += t * t;
    }
    if (d < best_d) {  // ties keep the lowest index
      best_d = d;
      best = k;
    }
  }
  return best;
}

// Q(z) = e(I(z)) + e(I(z - e(I(z)))). The pinned zero entry guarantees the
// residual stage never increases the quantization error.
inline std::vector<double> quantize_residual(const Codebook& cb,
                                             const std::vector<double>& z) {
  std::size_t k1 = quantize(cb, z);
  std::vector<double> resid(cb.dim);
  for (std::size_t j = 0; j < cb.dim; ++j) resid[j] = z[j] - cb.entries[k1][j];
  std::size_t k2 = quantize(cb, resid);
  std::vector<double> q(cb.dim);
  for (std::size_t j = 0; j < cb.dim; ++j)
    q[j] = cb.entries[k1][j] + cb.entries[k2][j];
  return q;
}

// k-means over the non-zero entries; empty clusters re-seed from the point
// farthest from its assigned centroid.
inline Codebook fit_codebook(const std::vector<std::vector<double>>& latents,
                             std::size_t n_entries, std::size_t iterations = 25,
                             std::uint64_t seed = 11) {
  if (n_entries < 1) throw std::invalid_argument("fit_codebook: N_C >= 1 required");
  const std::size_t dim = latents.empty() ? 0 : latents[0].size();
  Codebook cb;
  cb.dim = dim;
  cb.entries.assign(1, std::vector<double>(dim, 0.0));
  const std::size_t k_free = n_entries - 1;
  if (k_free == 0 || latents.empty()) return cb;
  if (latents.size() < k_free)
    throw std::invalid_argument("fit_codebook: fewer latents than entries");
  // seeded init: distinct random data points
  NoiseKey key{seed, 0xCB, 0};
  std::vector<std::vector<double>> cents;
  for (std::size_t k = 0; k < k_free; ++k) {
    std::size_t pick = static_cast<std::size_t>(key.uniform(k) * latents.size());
    cents.push_back(latents[std::min(pick, latents.size() - 1)]);
  }
  std::vector<std::size_t> assign(latents.size(), 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t r = 0; r < latents.size(); ++r) {
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < k_free; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          double t = latents[r][j] - cents[k][j];
          d += t * t;
        }
        if (d < best_d) {
          best_d = d;
          assign[r] = k;
        }
      }
    }
    std::vector<std::vector<double>> sums(k_free, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k_free, 0);
    for (std::size_t r = 0; r < latents.size(); ++r) {
      for (std::size_t j = 0; j < dim; ++j) sums[assign[r]][j] += latents[r][j];
      ++counts[assign[r]];
    }
    for (std::size_t k = 0; k < k_free; ++k) {
      if (counts[k] == 0) {
        // farthest point from its centroid
        double worst = -1.0;
        std::size_t worst_r = 0;
        for (std::size_t r = 0; r < latents.size(); ++r) {
          double d = 0.0;
          for (std::size_t j = 0; j < dim; ++j) {
            double t = latents[r][j] - cents[assign[r]][j];
            d += t * t;
          }
          if (d > worst) {
            worst = d;
            worst_r = r;
          }
        }
        cents[k] = latents[worst_r];
      } else {
        for (std::size_t j = 0; j < dim; ++j)
          cents[k][j] = sums[k][j] / static_cast<double>(counts[k]);
      }
    }
  }
  for (auto& c : cents) cb.entries.push_back(std::move(c));
  return cb;
}

// Residual-quantize a long latent by consecutive chunks of the codebook dim.
inline std::vector<double> quantize_latent(const Codebook& cb,
                                           const std::vector<double>& z) {
  if (cb.dim == 0 || z.size() % cb.dim != 0)
    throw std::invalid_argument("quantize_latent: latent not divisible by codebook dim");
  std::vector<double> out;
  out.reserve(z.size());
  for (std::size_t o = 0; o < z.size(); o += cb.dim) {
    std::vector<double> chunk(z.begin() + o, z.begin() + o + cb.dim);
    auto q = quantize_residual(cb, chunk);
    out.insert(out.end(), q.begin(), q.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed-form GLM over the latent features.
// ---------------------------------------------------------------------------

// N x (m+1) design: leading ones column plus standardized parent columns.
// The stats are stored so a counterfactual row reuses them bit-exactly.
struct DesignMatrix {
  Tensor P;
  std::vector<double> col_mean, col_std;  // per raw parent column

  static DesignMatrix build(const std::vector<std::vector<double>>& parents) {
    DesignMatrix d;
    const std::size_t n = parents.size();
    const std::size_t m = n == 0 ? 0 : parents[0].size();
    d.col_mean.assign(m, 0.0);
    d.col_std.assign(m, 1.0);
    for (std::size_t j = 0; j < m; ++j) {
      double mean = 0.0;
      for (const auto& row : parents) mean += row[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (const auto& row : parents) var += (row[j] - mean) * (row[j] - mean);
      var /= static_cast<double>(n);
      d.col_mean[j] = mean;
      d.col_std[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    d.P = d.encode_rows(parents);
    return d;
  }

  Tensor encode_rows(const std::vector<std::vector<double>>& parents) const {
    const std::size_t n = parents.size(), m = col_mean.size();
    Tensor p({n, m + 1});
    for (std::size_t r = 0; r < n; ++r) {
      p.at2(r, 0) = 1.0;
      for (std::size_t j = 0; j < m; ++j)
        p.at2(r, j + 1) = (parents[r][j] - col_mean[j]) / col_std[j];
    }
    return p;
  }
};

struct GlmParams {
  Tensor B;           // (m+1) x K
  Tensor B_momentum;  // accumulated with decay gamma
  double gamma = 0.9;
  double delta = 1e-8;
};

// B = (P^T P + delta I)^-1 P^T Z.
inline Tensor glm_fit(const Tensor& Z, const Tensor& P, double delta = 1e-8) {
  using namespace linalg;
  if (Z.shape[0] != P.shape[0])
    throw std::invalid_argument("glm_fit: row count mismatch");
  if (Z.shape[0] < P.shape[1])
    throw std::invalid_argument("glm_fit: need N >= m + 1 rows");
  Tensor Pt = transpose(P);
  Tensor G = matmul(Pt, P);
  for (std::size_t i = 0; i < G.shape[0]; ++i) G.at2(i, i) += delta;
  return spd_solve(G, matmul(Pt, Z));  // SingularMatrix propagates
}

inline Tensor glm_abduct(const Tensor& B, const Tensor& Z, const Tensor& P) {
  Tensor fit = linalg::matmul(P, B);
  Tensor u = Z;
  for (std::size_t i = 0; i < u.numel(); ++i) u[i] -= fit[i];
  return u;
}

inline Tensor glm_predict(const Tensor& B, const Tensor& U_Z,
                          const Tensor& P_cf) {
  Tensor pred = linalg::matmul(P_cf, B);
  for (std::size_t i = 0; i < pred.numel(); ++i) pred[i] += U_Z[i];
  return pred;
}

inline void glm_momentum_update(GlmParams& params, const Tensor& Z_batch,
                                const Tensor& P_batch, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0)
    throw std::invalid_argument("glm_momentum_update: gamma in [0, 1) required");
  Tensor B_batch = glm_fit(Z_batch, P_batch, params.delta);
  if (params.B_momentum.numel() == 0) params.B_momentum = Tensor(B_batch.shape);
  for (std::size_t i = 0; i < B_batch.numel(); ++i)
    params.B_momentum[i] = gamma * params.B_momentum[i] + (1.0 - gamma) * B_batch[i];
  params.gamma = gamma;
}

// ---------------------------------------------------------------------------
// End-to-end latent counterfactual.
// ---------------------------------------------------------------------------

struct VqGlmModel {
  LinearAutoencoder ae;
  Codebook codebook;
  DesignMatrix design;  // stats only; P belongs to training data
  GlmParams glm;
};

inline std::vector<double> latent_counterfactual(
    const VqGlmModel& m, const std::vector<double>& x,
    const std::vector<double>& pa, const std::vector<double>& pa_cf) {
  std::vector<double> z = quantize_latent(m.codebook, m.ae.encode(x));
  Tensor Z({1, z.size()}, z);
  Tensor P = m.design.encode_rows({pa});
  Tensor P_cf = m.design.encode_rows({pa_cf});
  Tensor U = glm_abduct(m.glm.B, Z, P);
  Tensor Z_cf = glm_predict(m.glm.B, U, P_cf);
  return m.ae.decode(Z_cf.data);
}

}  // namespace cfscm
