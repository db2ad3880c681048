#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cfscm {

// Minimal reverse-mode tape over scalars. Values are computed eagerly and
// local partials are stored at record time, so the backward sweep is a
// single pass of multiply-accumulate.
class Tape {
 public:
  struct Node {
    int a = -1, b = -1;
    double da = 0.0, db = 0.0;
  };

  int push(double value, int a = -1, double da = 0.0, int b = -1, double db = 0.0) {
    nodes_.push_back({a, b, da, db});
    vals_.push_back(value);
    return static_cast<int>(nodes_.size()) - 1;
  }

  double value(int i) const { return vals_[i]; }
  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    vals_.clear();
  }

  // Adjoints of every node w.r.t. node `output`.
  std::vector<double> gradient(int output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    adj[output] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      const double g = adj[i];
      if (g == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.a >= 0) adj[n.a] += n.da * g;
      if (n.b >= 0) adj[n.b] += n.db * g;
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<double> vals_;
};

// A differentiable scalar: a (tape, node) handle plus the cached value.
struct Ad {
  Tape* tape = nullptr;
  int id = -1;
  double v = 0.0;

  Ad() = default;
  Ad(Tape* t, int i, double value) : tape(t), id(i), v(value) {}
};

inline Ad make_var(Tape& t, double v) { return {&t, t.push(v), v}; }
inline Ad make_const(Tape& t, double v) { return {&t, t.push(v), v}; }

inline Ad operator+(const Ad& x, const Ad& y) {
  return {x.tape, x.tape->push(x.v + y.v, x.id, 1.0, y.id, 1.0), x.v + y.v};
}
inline Ad operator-(const Ad& x, const Ad& y) {
  return {x.tape, x.tape->push(x.v - y.v, x.id, 1.0, y.id, -1.0), x.v - y.v};
}
inline Ad operator*(const Ad& x, const Ad& y) {
  return {x.tape, x.tape->push(x.v * y.v, x.id, y.v, y.id, x.v), x.v * y.v};
}
inline Ad operator/(const Ad& x, const Ad& y) {
  double q = x.v / y.v;
  return {x.tape, x.tape->push(q, x.id, 1.0 / y.v, y.id, -q / y.v), q};
}
inline Ad operator-(const Ad& x) {
  return {x.tape, x.tape->push(-x.v, x.id, -1.0), -x.v};
}

inline Ad operator+(const Ad& x, double c) {
  return {x.tape, x.tape->push(x.v + c, x.id, 1.0), x.v + c};
}
inline Ad operator+(double c, const Ad& x) { return x + c; }
inline Ad operator-(const Ad& x, double c) { return x + (-c); }
inline Ad operator-(double c, const Ad& x) {
  return {x.tape, x.tape->push(c - x.v, x.id, -1.0), c - x.v};
}
inline Ad operator*(const Ad& x, double c) {
  return {x.tape, x.tape->push(x.v * c, x.id, c), x.v * c};
}
inline Ad operator*(double c, const Ad& x) { return x * c; }
inline Ad operator/(const Ad& x, double c) { return x * (1.0 / c); }
inline Ad operator/(double c, const Ad& x) {
  double q = c / x.v;
  return {x.tape, x.tape->push(q, x.id, -q / x.v), q};
}

inline Ad exp(const Ad& x) {
  double e = std::exp(x.v);
  return {x.tape, x.tape->push(e, x.id, e), e};
}
inline Ad log(const Ad& x) {
  return {x.tape, x.tape->push(std::log(x.v), x.id, 1.0 / x.v), std::log(x.v)};
}
inline Ad tanh(const Ad& x) {
  double t = std::tanh(x.v);
  return {x.tape, x.tape->push(t, x.id, 1.0 - t * t), t};
}
inline Ad sqrt(const Ad& x) {
  double s = std::sqrt(x.v);
  return {x.tape, x.tape->push(s, x.id, 0.5 / s), s};
}
inline Ad sqr(const Ad& x) { return x * x; }

// Smooth clamp is not needed; the nets clamp pre-activations with a hard
// min/max whose gradient is zero outside the interval.
inline Ad clamp(const Ad& x, double lo, double hi) {
  if (x.v < lo) return {x.tape, x.tape->push(lo, x.id, 0.0), lo};
  if (x.v > hi) return {x.tape, x.tape->push(hi, x.id, 0.0), hi};
  return x;
}

inline Ad sum(const std::vector<Ad>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum: empty");
  Ad s = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) s = s + xs[i];
  return s;
}

}  // namespace cfscm
