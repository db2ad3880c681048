#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "cfscm/dataset.hpp"
#include "cfscm/rng.hpp"
#include "cfscm/tensor.hpp"

namespace cfscm {

struct UnknownId : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fixed ground-truth SCM over (class y, thickness t, intensity i, image x).
// Every constant of the generating process lives in this header; models are
// fit blind to them. The noise record gives exact abduction, so oracle
// counterfactuals are available for any intervention.
namespace synthpop {

inline constexpr std::size_t kRows = 16, kCols = 16, kPixels = kRows * kCols;
inline constexpr double kSigmaPx = 2.0 / 255.0;

// Per-sample exogenous record: u_y (uniform), u_t, u_i, u_x[256].
struct Noises {
  double u_y = 0.0, u_t = 0.0, u_i = 0.0;
  std::vector<double> u_x = std::vector<double>(kPixels, 0.0);
};

inline Noises draw_noises(std::uint64_t seed, std::uint64_t id) {
  Noises n;
  n.u_y = NoiseKey{seed, 0, id}.uniform(0);
  n.u_t = NoiseKey{seed, 1, id}.normal(0);
  n.u_i = NoiseKey{seed, 2, id}.normal(0);
  NoiseKey kx{seed, 3, id};
  for (std::size_t p = 0; p < kPixels; ++p) n.u_x[p] = kx.normal(p);
  return n;
}

inline std::size_t mech_y(double u_y) {
  auto c = static_cast<std::size_t>(u_y * 3.0);
  return c > 2 ? 2 : c;  // u in (0,1)
}
inline double mech_t(double u_t) { return std::exp(0.4 + 0.3 * u_t); }
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double mech_i(double t, double u_i) {
  return 64.0 + 191.0 * sigmoid(2.0 * t - 5.0 + 0.5 * u_i);
}

// Skeleton distance per class: 0 = bar, 1 = cross, 2 = ring.
inline double skeleton_distance(std::size_t y, double r, double c) {
  const double cr = 7.0, cc = 7.5;
  switch (y) {
    case 0: {  // horizontal bar, cols 2..13
      double dc = c < 2.0 ? 2.0 - c : (c > 13.0 ? c - 13.0 : 0.0);
      return std::hypot(r - cr, dc);
    }
    case 1: {  // cross: bar plus vertical stroke at col 7, rows 2..13
      double dc = c < 2.0 ? 2.0 - c : (c > 13.0 ? c - 13.0 : 0.0);
      double hbar = std::hypot(r - cr, dc);
      double dr = r < 2.0 ? 2.0 - r : (r > 13.0 ? r - 13.0 : 0.0);
      double vbar = std::hypot(c - 7.0, dr);
      return std::min(hbar, vbar);
    }
    case 2: {  // ring of radius 4.5 around the grid center
      double d = std::hypot(r - 7.5, c - 7.5);
      return std::abs(d - 4.5);
    }
    default:
      throw std::out_of_range("skeleton_distance: unknown class");
  }
}

inline double stroke_half_width(double t) { return 0.75 * t; }

// Binary template: lit pixels carry the peak value i/255.
inline Tensor render_template(std::size_t y, double t, double i) {
  if (t <= 0.0) throw std::out_of_range("render: t must be positive");
  if (i < 64.0 || i > 255.0) throw std::out_of_range("render: i out of range");
  Tensor img({kRows, kCols});
  const double peak = i / 255.0, hw = stroke_half_width(t);
  for (std::size_t r = 0; r < kRows; ++r)
    for (std::size_t c = 0; c < kCols; ++c)
      img.at2(r, c) = skeleton_distance(y, static_cast<double>(r),
                                        static_cast<double>(c)) <= hw
                          ? peak
                          : 0.0;
  return img;
}

// 3x3 binomial smoothing ([1 2 1] x [1 2 1] / 16), zero padded.
inline Tensor smooth3(const Tensor& img) {
  static const double k[3] = {0.25, 0.5, 0.25};
  Tensor out({kRows, kCols});
  for (std::size_t r = 0; r < kRows; ++r)
    for (std::size_t c = 0; c < kCols; ++c) {
      double acc = 0.0;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(kRows) ||
              cc >= static_cast<long>(kCols))
            continue;
          acc += k[dr + 1] * k[dc + 1] * img.at2(rr, cc);
        }
      out.at2(r, c) = acc;
    }
  return out;
}

inline Tensor render(std::size_t y, double t, double i) {
  return smooth3(render_template(y, t, i));
}

inline Tensor mech_x(std::size_t y, double t, double i,
                     const std::vector<double>& u_x) {
  Tensor img = render(y, t, i);
  for (std::size_t p = 0; p < kPixels; ++p) img[p] += kSigmaPx * u_x[p];
  return img;
}

// Forward pass of the whole ground truth under given noises, honoring an
// intervention map over {y, t, i}. Downstream attributes are recomputed
// (do(t) changes i through the sigmoid).
struct AttrValues {
  std::size_t y;
  double t, i;
};

inline AttrValues attrs_under(const Noises& n,
                              const std::map<std::string, double>& do_map) {
  AttrValues a{};
  auto it = do_map.find("y");
  a.y = it != do_map.end() ? static_cast<std::size_t>(it->second) : mech_y(n.u_y);
  if (a.y > 2) throw std::out_of_range("do(y): class out of support");
  it = do_map.find("t");
  a.t = it != do_map.end() ? it->second : mech_t(n.u_t);
  it = do_map.find("i");
  a.i = it != do_map.end() ? it->second : mech_i(a.t, n.u_i);
  return a;
}

inline Tensor image_under(const Noises& n,
                          const std::map<std::string, double>& do_map) {
  AttrValues a = attrs_under(n, do_map);
  return mech_x(a.y, a.t, a.i, n.u_x);
}

// ---------------------------------------------------------------------------
// Dataset generation and the oracle.
// ---------------------------------------------------------------------------

struct Generated {
  Dataset data;
  Tensor noises;  // N x (3 + 256): u_y, u_t, u_i, u_x
};

inline Tensor pack_noises(const std::vector<Noises>& ns) {
  Tensor t({ns.size(), 3 + kPixels});
  for (std::size_t r = 0; r < ns.size(); ++r) {
    t.at2(r, 0) = ns[r].u_y;
    t.at2(r, 1) = ns[r].u_t;
    t.at2(r, 2) = ns[r].u_i;
    for (std::size_t p = 0; p < kPixels; ++p) t.at2(r, 3 + p) = ns[r].u_x[p];
  }
  return t;
}

inline Noises unpack_noises(const Tensor& t, std::size_t r) {
  if (t.rank() != 2 || t.shape[1] != 3 + kPixels)
    throw std::runtime_error("unpack_noises: bad noise tensor shape");
  if (r >= t.shape[0]) throw UnknownId("unpack_noises: sample id out of range");
  Noises n;
  n.u_y = t.at2(r, 0);
  n.u_t = t.at2(r, 1);
  n.u_i = t.at2(r, 2);
  for (std::size_t p = 0; p < kPixels; ++p) n.u_x[p] = t.at2(r, 3 + p);
  return n;
}

inline Generated generate(std::uint64_t seed, std::size_t n) {
  Generated g;
  g.data.image_rows = kRows;
  g.data.image_cols = kCols;
  g.data.images = Tensor({n, kPixels});
  std::vector<Noises> ns;
  ns.reserve(n);
  for (std::size_t id = 0; id < n; ++id) {
    Noises nz = draw_noises(seed, id);
    AttrValues a = attrs_under(nz, {});
    Tensor img = mech_x(a.y, a.t, a.i, nz.u_x);
    for (std::size_t p = 0; p < kPixels; ++p) g.data.images.at2(id, p) = img[p];
    g.data.y.push_back(a.y);
    g.data.t.push_back(a.t);
    g.data.i.push_back(a.i);
    ns.push_back(std::move(nz));
  }
  g.noises = pack_noises(ns);
  return g;
}

struct OraclePair {
  AttrValues factual_attrs, cf_attrs;
  Tensor factual_image, cf_image;
};

inline OraclePair oracle_counterfactual(const Tensor& noises, std::size_t id,
                                        const std::map<std::string, double>& do_map) {
  Noises n = unpack_noises(noises, id);
  OraclePair p;
  p.factual_attrs = attrs_under(n, {});
  p.cf_attrs = attrs_under(n, do_map);
  p.factual_image = image_under(n, {});
  p.cf_image = image_under(n, do_map);
  return p;
}

}  // namespace synthpop
}  // namespace cfscm
