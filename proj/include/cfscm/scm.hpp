#pragma once

#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cfscm/rng.hpp"
#include "cfscm/tensor.hpp"

namespace cfscm {

struct CycleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownTarget : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingEvidence : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonInvertible : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class VarKind { Continuous, Categorical, TensorVar };

struct VariableSpec {
  std::string name;
  VarKind kind = VarKind::Continuous;
  std::size_t categories = 0;           // Categorical only
  std::vector<std::size_t> shape;       // TensorVar only
  std::string units;

  // Length of this variable's contribution to a child's encoded parent
  // vector (categoricals are one-hot encoded).
  std::size_t encoded_dim() const {
    switch (kind) {
      case VarKind::Continuous: return 1;
      case VarKind::Categorical: return categories;
      case VarKind::TensorVar: return Tensor::numel_of(shape);
    }
    return 0;
  }
};

// A mechanism binds one endogenous variable: value := f(parents, noise).
// Parents arrive as a flat encoded vector; the graph does the encoding.
class Mechanism {
 public:
  virtual ~Mechanism() = default;
  virtual std::size_t parent_dim() const = 0;
  virtual Tensor sample_noise(const NoiseKey& key) const = 0;
  virtual Tensor forward(const std::vector<double>& pa, const Tensor& u) const = 0;
  // Inverts forward for the observed value; stochastic mechanisms return a
  // seed-deterministic posterior noise sample instead.
  virtual Tensor abduct(const std::vector<double>& pa, const Tensor& x,
                        const NoiseKey& key) const = 0;
  virtual bool invertible() const { return true; }
};

using MechanismPtr = std::shared_ptr<const Mechanism>;

// Hard intervention target; also used to realize do(v := c) submodels.
class ConstantMechanism final : public Mechanism {
 public:
  explicit ConstantMechanism(Tensor value) : value_(std::move(value)) {}
  std::size_t parent_dim() const override { return 0; }
  Tensor sample_noise(const NoiseKey&) const override { return Tensor({0}); }
  Tensor forward(const std::vector<double>&, const Tensor&) const override {
    return value_;
  }
  Tensor abduct(const std::vector<double>&, const Tensor&,
                const NoiseKey&) const override {
    return Tensor({0});
  }
  const Tensor& value() const { return value_; }

 private:
  Tensor value_;
};

enum class Provenance { Observed, Sampled, Counterfactual };

// A realization <M, u>: observed endogenous values plus the exogenous
// values that produce them.
struct World {
  std::map<std::string, Tensor> endogenous;
  std::map<std::string, Tensor> exogenous;
  Provenance provenance = Provenance::Sampled;
};

struct Intervention {
  struct Soft {
    MechanismPtr mechanism;
  };
  using Action = std::variant<Tensor, Soft>;  // Tensor = hard constant

  std::map<std::string, Action> targets;

  static Intervention none() { return {}; }
  Intervention& set(const std::string& name, Tensor value) {
    insert(name, Action(std::move(value)));
    return *this;
  }
  Intervention& set(const std::string& name, double value) {
    return set(name, Tensor::scalar(value));
  }
  Intervention& set_soft(const std::string& name, MechanismPtr mech) {
    insert(name, Action(Soft{std::move(mech)}));
    return *this;
  }
  bool empty() const { return targets.empty(); }

 private:
  void insert(const std::string& name, Action a) {
    if (!targets.emplace(name, std::move(a)).second)
      throw std::invalid_argument("Intervention: duplicate target " + name);
  }
};

// DAG of named variables, each bound to one mechanism. Immutable after
// construction; interventions produce new graph values.
class ScmGraph {
 public:
  ScmGraph& add_node(VariableSpec spec, std::vector<std::string> parent_names,
                     MechanismPtr mechanism) {
    if (index_.count(spec.name))
      throw std::invalid_argument("ScmGraph: duplicate node " + spec.name);
    std::vector<int> pidx;
    std::size_t pa_dim = 0;
    for (const auto& p : parent_names) {
      auto it = index_.find(p);
      if (it == index_.end())
        throw CycleError("ScmGraph: parent " + p + " of " + spec.name +
                         " not declared before use (nodes must be added in a "
                         "topologically consistent order)");
      pidx.push_back(it->second);
      pa_dim += nodes_[it->second].encoded_dim();
    }
    if (mechanism->parent_dim() != pa_dim)
      throw std::invalid_argument("ScmGraph: mechanism arity for " + spec.name +
                                  " does not match encoded parent width");
    index_[spec.name] = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(spec));
    parents_.push_back(std::move(pidx));
    mechanisms_.push_back(std::move(mechanism));
    return *this;
  }

  std::size_t size() const { return nodes_.size(); }
  const VariableSpec& node(std::size_t i) const { return nodes_[i]; }
  const std::vector<int>& parents(std::size_t i) const { return parents_[i]; }
  const MechanismPtr& mechanism(std::size_t i) const { return mechanisms_[i]; }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  // Declaration order is a valid topological order by construction (parents
  // must be declared first), which also realizes the declaration-order
  // tie-break.
  std::vector<std::string> topological_order() const {
    std::vector<std::string> order;
    order.reserve(nodes_.size());
    for (const auto& n : nodes_) order.push_back(n.name);
    return order;
  }

  std::vector<double> encode_parents(std::size_t i, const World& w) const {
    std::vector<double> out;
    for (int p : parents_[i]) {
      const auto& spec = nodes_[p];
      auto it = w.endogenous.find(spec.name);
      if (it == w.endogenous.end())
        throw MissingEvidence("missing value for parent " + spec.name);
      append_encoded(spec, it->second, out);
    }
    return out;
  }

  static void append_encoded(const VariableSpec& spec, const Tensor& value,
                             std::vector<double>& out) {
    if (spec.kind == VarKind::Categorical) {
      auto c = static_cast<long>(value.as_scalar());
      if (c < 0 || c >= static_cast<long>(spec.categories))
        throw std::out_of_range("categorical value out of support for " +
                                spec.name);
      for (std::size_t k = 0; k < spec.categories; ++k)
        out.push_back(k == static_cast<std::size_t>(c) ? 1.0 : 0.0);
    } else {
      out.insert(out.end(), value.data.begin(), value.data.end());
    }
  }

  World forward_world(std::uint64_t seed, std::uint64_t sample) const {
    World w;
    w.provenance = Provenance::Sampled;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      NoiseKey key{seed, i, sample};
      Tensor u = mechanisms_[i]->sample_noise(key);
      Tensor v = mechanisms_[i]->forward(encode_parents(i, w), u);
      w.exogenous[nodes_[i].name] = std::move(u);
      w.endogenous[nodes_[i].name] = std::move(v);
    }
    return w;
  }

  // Re-evaluates all mechanisms under the given exogenous values. Nodes
  // without an exogenous entry (e.g. hard-intervened constants) forward
  // with an empty noise tensor.
  World evaluate(const std::map<std::string, Tensor>& exogenous,
                 Provenance prov) const {
    World w;
    w.provenance = prov;
    w.exogenous = exogenous;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto it = exogenous.find(nodes_[i].name);
      Tensor u = it == exogenous.end() ? Tensor({0}) : it->second;
      w.endogenous[nodes_[i].name] =
          mechanisms_[i]->forward(encode_parents(i, w), u);
    }
    return w;
  }

 private:
  std::vector<VariableSpec> nodes_;
  std::vector<std::vector<int>> parents_;
  std::vector<MechanismPtr> mechanisms_;
  std::map<std::string, int> index_;
};

inline std::vector<World> sample_observational(const ScmGraph& g,
                                               std::uint64_t seed,
                                               std::size_t n) {
  std::vector<World> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) out.push_back(g.forward_world(seed, s));
  return out;
}

inline ScmGraph intervene(const ScmGraph& g, const Intervention& iv) {
  for (const auto& [name, action] : iv.targets)
    if (g.index_of(name) < 0)
      throw UnknownTarget("intervene: unknown variable " + name);
  ScmGraph sub;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& spec = g.node(i);
    std::vector<std::string> pnames;
    for (int p : g.parents(i)) pnames.push_back(g.node(p).name);
    auto it = iv.targets.find(spec.name);
    if (it == iv.targets.end()) {
      sub.add_node(spec, pnames, g.mechanism(i));
    } else if (std::holds_alternative<Tensor>(it->second)) {
      sub.add_node(spec, {}, std::make_shared<ConstantMechanism>(
                                 std::get<Tensor>(it->second)));
    } else {
      sub.add_node(spec, pnames,
                   std::get<Intervention::Soft>(it->second).mechanism);
    }
  }
  return sub;
}

inline World abduct(const ScmGraph& g,
                    const std::map<std::string, Tensor>& evidence,
                    std::uint64_t seed = 0) {
  World w;
  w.provenance = Provenance::Observed;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& name = g.node(i).name;
    auto it = evidence.find(name);
    if (it == evidence.end())
      throw MissingEvidence("abduct: missing evidence for " + name);
    if (!g.mechanism(i)->invertible())
      throw NonInvertible("abduct: mechanism for " + name + " has no inverse");
    w.endogenous[name] = it->second;
    w.exogenous[name] = g.mechanism(i)->abduct(g.encode_parents(i, w),
                                               it->second, NoiseKey{seed, i, 0});
  }
  return w;
}

inline World counterfactual(const ScmGraph& g,
                            const std::map<std::string, Tensor>& evidence,
                            const Intervention& iv, std::uint64_t seed = 0) {
  World factual = abduct(g, evidence, seed);
  ScmGraph sub = intervene(g, iv);
  std::map<std::string, Tensor> exo = factual.exogenous;
  for (const auto& [name, action] : iv.targets)
    if (std::holds_alternative<Tensor>(action)) exo.erase(name);
  return sub.evaluate(exo, Provenance::Counterfactual);
}

inline std::vector<World> interventional_sample(const ScmGraph& g,
                                                const Intervention& iv,
                                                std::uint64_t seed,
                                                std::size_t n) {
  return sample_observational(intervene(g, iv), seed, n);
}

// Forward-consistency check for the World invariant.
inline double world_consistency_error(const ScmGraph& g, const World& w) {
  double err = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& name = g.node(i).name;
    auto ev = w.endogenous.find(name);
    auto ex = w.exogenous.find(name);
    if (ev == w.endogenous.end() || ex == w.exogenous.end()) continue;
    Tensor re = g.mechanism(i)->forward(g.encode_parents(i, w), ex->second);
    for (std::size_t k = 0; k < re.numel(); ++k) {
      double denom = std::max(1.0, std::abs(ev->second[k]));
      err = std::max(err, std::abs(re[k] - ev->second[k]) / denom);
    }
  }
  return err;
}

// Worlds as CSV: one row per world, endogenous columns then exogenous
// columns, tensor values flattened with an index suffix.
inline void write_worlds_csv(std::ostream& os, const ScmGraph& g,
                             const std::vector<World>& worlds) {
  auto emit_header = [&](const char* prefix) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& name = g.node(i).name;
      std::size_t n = 1;
      if (!worlds.empty()) {
        const auto& part =
            *prefix == 'u' ? worlds[0].exogenous : worlds[0].endogenous;
        auto it = part.find(name);
        if (it != part.end()) n = it->second.numel();
      }
      for (std::size_t k = 0; k < std::max<std::size_t>(n, 1); ++k) {
        os << "," << prefix << "_" << name;
        if (n > 1) os << "_" << k;
      }
    }
  };
  os << "id";
  emit_header("v");
  emit_header("u");
  os << "\n";
  os.precision(17);
  for (std::size_t r = 0; r < worlds.size(); ++r) {
    os << r;
    for (auto part : {&World::endogenous, &World::exogenous})
      for (std::size_t i = 0; i < g.size(); ++i) {
        auto it = (worlds[r].*part).find(g.node(i).name);
        if (it == (worlds[r].*part).end()) {
          os << ",";
          continue;
        }
        if (it->second.numel() == 0) os << ",";
        for (double v : it->second.data) os << "," << v;
      }
    os << "\n";
  }
}

}  // namespace cfscm
