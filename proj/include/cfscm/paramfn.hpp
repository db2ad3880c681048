#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cfscm/autodiff.hpp"
#include "cfscm/rng.hpp"

namespace cfscm {

// Small learnable function: affine map, optionally through one tanh hidden
// layer of fixed width. Parameters live in a flat vector so optimizers and
// serialization can treat every net uniformly.
class ParamFn {
 public:
  ParamFn() = default;
  ParamFn(std::size_t in_dim, std::size_t out_dim, std::size_t hidden = 0)
      : in_(in_dim), out_(out_dim), hidden_(hidden),
        params_(param_count_of(in_dim, out_dim, hidden), 0.0) {}

  static std::size_t param_count_of(std::size_t in, std::size_t out,
                                    std::size_t hidden) {
    if (hidden == 0) return out * in + out;
    return hidden * in + hidden + out * hidden + out;
  }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  std::size_t hidden_dim() const { return hidden_; }
  std::size_t param_count() const { return params_.size(); }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void init_random(const NoiseKey& key, double scale = 0.1) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      params_[i] = scale * key.normal(i);
  }

  std::vector<double> eval(const std::vector<double>& in) const {
    check_arity(in.size());
    return eval_with(params_.data(), in);
  }

  std::vector<double> eval_params(const std::vector<double>& p,
                                  const std::vector<double>& in) const {
    check_arity(in.size());
    if (p.size() != params_.size())
      throw std::invalid_argument("ParamFn: parameter vector size mismatch");
    return eval_with(p.data(), in);
  }

  // Flat index of output o's bias entry.
  std::size_t bias_index(std::size_t o) const {
    if (hidden_ == 0) return out_ * in_ + o;
    return hidden_ * in_ + hidden_ + out_ * hidden_ + o;
  }

  // Tape evaluation with externally supplied parameter nodes (so one tape
  // can span many nets whose parameters are optimized jointly).
  std::vector<Ad> eval_ad(const std::vector<Ad>& params,
                          const std::vector<Ad>& in) const {
    check_arity(in.size());
    if (params.size() != params_.size())
      throw std::invalid_argument("ParamFn: parameter vector size mismatch");
    return eval_with(params.data(), in);
  }

  // Convenience: inputs as constants, parameters as fresh tape variables.
  // Returns the parameter nodes through `param_vars`.
  std::vector<Ad> eval_ad_params(Tape& tape, const std::vector<double>& in,
                                 std::vector<Ad>& param_vars) const {
    param_vars.clear();
    param_vars.reserve(params_.size());
    for (double p : params_) param_vars.push_back(make_var(tape, p));
    std::vector<Ad> in_ad;
    in_ad.reserve(in.size());
    for (double v : in) in_ad.push_back(make_const(tape, v));
    return eval_ad(param_vars, in_ad);
  }

 private:
  void check_arity(std::size_t n) const {
    if (n != in_) throw std::invalid_argument("ParamFn: input arity mismatch");
  }

  template <class S, class P>
  std::vector<S> eval_with(const P* w, const std::vector<S>& in) const {
    using std::tanh;
    std::size_t k = 0;
    if (hidden_ == 0) {
      std::vector<S> out;
      out.reserve(out_);
      const P* bias = w + out_ * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        S acc = bias[o] * 1.0;
        for (std::size_t i = 0; i < in_; ++i) acc = acc + w[o * in_ + i] * in[i];
        out.push_back(acc);
      }
      return out;
    }
    std::vector<S> h;
    h.reserve(hidden_);
    const P* w1 = w;
    const P* b1 = w + hidden_ * in_;
    for (std::size_t o = 0; o < hidden_; ++o) {
      S acc = b1[o] * 1.0;
      for (std::size_t i = 0; i < in_; ++i) acc = acc + w1[o * in_ + i] * in[i];
      h.push_back(tanh(acc));
    }
    k = hidden_ * in_ + hidden_;
    const P* w2 = w + k;
    const P* b2 = w + k + out_ * hidden_;
    std::vector<S> out;
    out.reserve(out_);
    for (std::size_t o = 0; o < out_; ++o) {
      S acc = b2[o] * 1.0;
      for (std::size_t i = 0; i < hidden_; ++i) acc = acc + w2[o * hidden_ + i] * h[i];
      out.push_back(acc);
    }
    return out;
  }

  std::size_t in_ = 0, out_ = 0, hidden_ = 0;
  std::vector<double> params_;
};

// Pre-activation clamp shared by every log-scale output in the project.
inline constexpr double kLogScaleMin = -5.0;
inline constexpr double kLogScaleMax = 2.0;

inline double clamp_logscale(double s) {
  return s < kLogScaleMin ? kLogScaleMin : (s > kLogScaleMax ? kLogScaleMax : s);
}
inline Ad clamp_logscale(const Ad& s) { return clamp(s, kLogScaleMin, kLogScaleMax); }

}  // namespace cfscm
