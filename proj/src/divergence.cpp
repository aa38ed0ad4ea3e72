#include "cali/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "cali/losses.hpp"
#include "cali/metrics.hpp"
#include "cali/optim.hpp"

namespace cali {

namespace {

void require_nonempty(const FeatureSet& u_s, const FeatureSet& u_t, const char* op) {
  if (u_s.empty() || u_t.empty())
    throw UsageError(std::string(op) + ": feature sets must be non-empty");
  size_t dim = u_s[0].size();
  for (const FeatureSet* set : {&u_s, &u_t})
    for (const FeatureVec& v : *set)
      if (v.size() != dim)
        throw DimensionError(std::string(op) + ": inconsistent feature dimension");
}

DivergenceEstimate clamped(double raw, const char* mode, int m_s, int m_t, double bracket) {
  DivergenceEstimate est;
  est.raw = raw;
  est.value = std::clamp(raw, 0.0, 2.0);
  est.mode = mode;
  est.m_s = m_s;
  est.m_t = m_t;
  est.bracket = bracket;
  return est;
}

// fraction of the set where the predicate holds
template <typename Pred>
double rate(const FeatureSet& set, Pred pred) {
  int hits = 0;
  for (const FeatureVec& v : set) hits += pred(v) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

// All hypotheses of a stump class as closures, constants included.
std::vector<std::function<bool(const FeatureVec&)>> enumerate_class(const StumpClass& cls) {
  std::vector<std::function<bool(const FeatureVec&)>> hs;
  for (const Stump& s : cls.stumps)
    hs.push_back([s](const FeatureVec& x) { return stump_eval(s, x); });
  if (cls.include_constants) {
    hs.push_back([](const FeatureVec&) { return true; });
    hs.push_back([](const FeatureVec&) { return false; });
  }
  if (hs.empty()) throw ConfigError("stump class: empty hypothesis class");
  return hs;
}

}  // namespace

StumpClass make_stump_class(int dims, const std::vector<double>& thresholds,
                            bool include_constants) {
  if (dims < 1) throw ConfigError("stump class: need at least one dimension");
  StumpClass cls;
  cls.include_constants = include_constants;
  for (int d = 0; d < dims; ++d)
    for (double t : thresholds)
      for (bool pol : {true, false}) cls.stumps.push_back(Stump{d, t, pol});
  return cls;
}

bool stump_eval(const Stump& s, const FeatureVec& x) {
  if (s.dim < 0 || static_cast<size_t>(s.dim) >= x.size())
    throw DimensionError("stump: dimension " + std::to_string(s.dim) + " out of range for " +
                         std::to_string(x.size()) + "-dim features");
  return (x[static_cast<size_t>(s.dim)] <= s.threshold) == s.positive;
}

DivergenceEstimate h_divergence_oracle(const FeatureSet& u_s, const FeatureSet& u_t,
                                       const StumpClass& cls) {
  require_nonempty(u_s, u_t, "h_divergence_oracle");
  double best = 2.0;  // bracket is at most 2
  for (const auto& h : enumerate_class(cls)) {
    double b = rate(u_s, [&](const FeatureVec& x) { return !h(x); }) +
               rate(u_t, [&](const FeatureVec& x) { return h(x); });
    best = std::min(best, b);
  }
  return clamped(2.0 * (1.0 - best), "oracle", static_cast<int>(u_s.size()),
                 static_cast<int>(u_t.size()), best);
}

DivergenceEstimate hdh_divergence_oracle(const FeatureSet& u_s, const FeatureSet& u_t,
                                         const StumpClass& cls) {
  require_nonempty(u_s, u_t, "hdh_divergence_oracle");
  auto hs = enumerate_class(cls);
  double sup = 0.0;
  for (size_t i = 0; i < hs.size(); ++i)
    for (size_t j = i; j < hs.size(); ++j) {
      auto disagree = [&](const FeatureVec& x) { return hs[i](x) != hs[j](x); };
      double gap = std::abs(rate(u_s, disagree) - rate(u_t, disagree));
      sup = std::max(sup, gap);
    }
  return clamped(2.0 * sup, "oracle", static_cast<int>(u_s.size()),
                 static_cast<int>(u_t.size()), 1.0 - sup);
}

// --------------------------------------------------------------- neural ----

namespace {

// [C, 1, N] column stack of a feature subset
Tensor stack_features(const FeatureSet& set, size_t begin, size_t end) {
  int dim = static_cast<int>(set[0].size());
  int n = static_cast<int>(end - begin);
  std::vector<float> data(static_cast<size_t>(dim) * n);
  for (size_t i = begin; i < end; ++i)
    for (int c = 0; c < dim; ++c)
      data[static_cast<size_t>(c) * n + (i - begin)] = static_cast<float>(set[i][c]);
  return Tensor::from_data({dim, 1, n}, data);
}

struct MlpLayer {
  Tensor w, b;
};

std::vector<MlpLayer> init_mlp(int in_dim, const NeuralDivCfg& cfg) {
  std::vector<MlpLayer> layers;
  std::vector<int> widths = cfg.hidden;
  widths.push_back(1);
  int c_in = in_dim;
  for (size_t i = 0; i < widths.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, 40 + i));
    int c_out = widths[i];
    double bound = std::sqrt(6.0 / c_in);
    std::vector<float> w(static_cast<size_t>(c_out) * c_in);
    for (float& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
    layers.push_back(MlpLayer{
        Tensor::from_data({c_out, c_in, 1, 1}, w, true),
        Tensor::zeros({c_out}, true),
    });
    c_in = c_out;
  }
  return layers;
}

Tensor mlp_forward(const std::vector<MlpLayer>& layers, const Tensor& x, double slope) {
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = conv2d(h, layers[i].w, layers[i].b, 1, 0);
    if (i + 1 < layers.size()) h = leaky_relu(h, static_cast<float>(slope));
  }
  return sigmoid(h);
}

}  // namespace

DivergenceEstimate h_divergence_neural(const FeatureSet& u_s, const FeatureSet& u_t,
                                       const NeuralDivCfg& cfg) {
  require_nonempty(u_s, u_t, "h_divergence_neural");
  if (u_s.size() < 2 || u_t.size() < 2)
    throw UsageError("h_divergence_neural: need at least 2 samples per domain for a held-out split");
  if (cfg.iters < 1 || cfg.lr <= 0) throw ConfigError("h_divergence_neural: bad optimizer config");

  size_t half_s = u_s.size() / 2, half_t = u_t.size() / 2;
  Tensor train_s = stack_features(u_s, 0, half_s);
  Tensor train_t = stack_features(u_t, 0, half_t);

  auto layers = init_mlp(static_cast<int>(u_s[0].size()), cfg);
  std::vector<NamedParam> params;
  for (size_t i = 0; i < layers.size(); ++i) {
    params.push_back({"div.l" + std::to_string(i) + ".w", layers[i].w});
    params.push_back({"div.l" + std::to_string(i) + ".b", layers[i].b});
  }
  OptimizerConfig oc;
  oc.kind = OptKind::Adam;
  oc.lr = cfg.lr;
  oc.weight_decay = 0.0;
  Optimizer opt(oc);

  for (int it = 0; it < cfg.iters; ++it) {
    zero_grads(params);
    Tensor loss = add(domain_ce(mlp_forward(layers, train_s, cfg.slope), true),
                      domain_ce(mlp_forward(layers, train_t, cfg.slope), false));
    if (!all_finite(loss)) throw Error("h_divergence_neural: estimator diverged (non-finite loss)");
    loss.backward();
    opt.step(params);
  }

  // held-out bracket; the complement hypothesis is always available, so take
  // the better orientation
  auto held_rate = [&](const FeatureSet& set, size_t begin, bool want_source_side) {
    Tensor d = mlp_forward(layers, stack_features(set, begin, set.size()), cfg.slope);
    int hits = 0;
    for (float v : d.data()) hits += ((v > 0.5f) == want_source_side) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(d.size());
  };
  double b = (1.0 - held_rate(u_s, half_s, true)) + held_rate(u_t, half_t, true);
  double bc = (1.0 - held_rate(u_s, half_s, false)) + held_rate(u_t, half_t, false);
  double bracket = std::min(b, bc);
  return clamped(2.0 * (1.0 - bracket), "neural", static_cast<int>(u_s.size()),
                 static_cast<int>(u_t.size()), bracket);
}

DivergenceEstimate hdh_divergence_neural(const CaliModel& m, const Dataset& u_s,
                                         const Dataset& u_t) {
  if (u_s.samples.empty() || u_t.samples.empty())
    throw UsageError("hdh_divergence_neural: datasets must be non-empty");
  auto disagreement = [&](const Dataset& ds) {
    int64_t differ = 0, total = 0;
    for (const SegSample& s : ds.samples) {
      Tensor f = features(m, s.image);
      ClassMap a = argmax_channel(classify(m, Head::C1, f));
      ClassMap b = argmax_channel(classify(m, Head::C2, f));
      for (size_t i = 0; i < a.cells.size(); ++i) differ += a.cells[i] != b.cells[i] ? 1 : 0;
      total += static_cast<int64_t>(a.cells.size());
    }
    return static_cast<double>(differ) / static_cast<double>(total);
  };
  double gap = std::abs(disagreement(u_s) - disagreement(u_t));
  return clamped(2.0 * gap, "neural", static_cast<int>(u_s.samples.size()),
                 static_cast<int>(u_t.samples.size()), 1.0 - gap);
}

FeatureSet pooled_feature_set(const CaliModel& m, const Dataset& ds) {
  FeatureSet out;
  out.reserve(ds.samples.size());
  for (const SegSample& s : ds.samples) out.push_back(pooled_features(m, s.image));
  return out;
}

// ------------------------------------------------------ finite instances ---

namespace {

std::vector<uint8_t> complement_mask(const std::vector<uint8_t>& mask) {
  std::vector<uint8_t> out(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 0 : 1;
  return out;
}

std::vector<uint8_t> xor_mask(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  std::vector<uint8_t> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] != b[i] ? 1 : 0;
  return out;
}

void add_unique(std::vector<std::vector<uint8_t>>& set, std::vector<uint8_t> mask) {
  if (std::find(set.begin(), set.end(), mask) == set.end()) set.push_back(std::move(mask));
}

double point_rate(const std::vector<int>& multiset, const std::vector<uint8_t>& mask) {
  int hits = 0;
  for (int p : multiset) hits += mask[static_cast<size_t>(p)] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(multiset.size());
}

void validate_instance(const FiniteInstance& inst, const char* op) {
  if (inst.domain_size < 1) throw ConfigError(std::string(op) + ": empty domain");
  if (inst.u_s.empty() || inst.u_t.empty())
    throw UsageError(std::string(op) + ": empty sample multiset");
  auto check_points = [&](const std::vector<int>& pts) {
    for (int p : pts)
      if (p < 0 || p >= inst.domain_size)
        throw ValidationError(std::string(op) + ": point id out of range");
  };
  check_points(inst.u_s);
  check_points(inst.u_t);
  for (const auto& h : inst.seg_hypotheses)
    if (static_cast<int>(h.size()) != inst.domain_size)
      throw DimensionError(std::string(op) + ": hypothesis table size mismatch");
  for (const auto& h : inst.domain_class)
    if (static_cast<int>(h.size()) != inst.domain_size)
      throw DimensionError(std::string(op) + ": domain-class table size mismatch");
}

}  // namespace

FiniteInstance random_finite_instance(uint64_t seed) {
  Rng rng(derive_seed(seed, 50));
  FiniteInstance inst;
  inst.domain_size = rng.uniform_int(4, 8);
  inst.k = rng.uniform_int(2, 4);

  auto random_points = [&](bool skewed) {
    std::vector<int> pts(static_cast<size_t>(rng.uniform_int(6, 20)));
    for (int& p : pts) {
      p = rng.uniform_int(0, inst.domain_size - 1);
      // target skew: re-roll low points half the time to separate the domains
      if (skewed && p < inst.domain_size / 2 && rng.uniform() < 0.5)
        p = rng.uniform_int(inst.domain_size / 2, inst.domain_size - 1);
    }
    return pts;
  };
  inst.u_s = random_points(false);
  inst.u_t = random_points(true);

  int n_hyp = rng.uniform_int(3, 6);
  for (int i = 0; i < n_hyp; ++i) {
    std::vector<uint8_t> table(static_cast<size_t>(inst.domain_size));
    for (uint8_t& v : table) v = static_cast<uint8_t>(rng.uniform_int(0, inst.k - 1));
    inst.seg_hypotheses.push_back(std::move(table));
  }
  inst.truth.resize(static_cast<size_t>(inst.domain_size));
  for (uint8_t& v : inst.truth) v = static_cast<uint8_t>(rng.uniform_int(0, inst.k - 1));

  // symmetric closure of all pairwise disagreement masks, plus extras
  for (size_t i = 0; i < inst.seg_hypotheses.size(); ++i)
    for (size_t j = i; j < inst.seg_hypotheses.size(); ++j) {
      auto mask = xor_mask(inst.seg_hypotheses[i], inst.seg_hypotheses[j]);
      add_unique(inst.domain_class, complement_mask(mask));
      add_unique(inst.domain_class, std::move(mask));
    }
  int extras = rng.uniform_int(0, 4);
  for (int i = 0; i < extras; ++i) {
    std::vector<uint8_t> mask(static_cast<size_t>(inst.domain_size));
    for (uint8_t& v : mask) v = static_cast<uint8_t>(rng.uniform_int(0, 1));
    add_unique(inst.domain_class, mask);
    add_unique(inst.domain_class, complement_mask(mask));
  }
  return inst;
}

bool finite_containment(const FiniteInstance& inst) {
  validate_instance(inst, "finite_containment");
  for (size_t i = 0; i < inst.seg_hypotheses.size(); ++i)
    for (size_t j = i; j < inst.seg_hypotheses.size(); ++j) {
      auto mask = xor_mask(inst.seg_hypotheses[i], inst.seg_hypotheses[j]);
      if (std::find(inst.domain_class.begin(), inst.domain_class.end(), mask) ==
          inst.domain_class.end())
        return false;
    }
  return true;
}

double finite_h_divergence(const FiniteInstance& inst) {
  validate_instance(inst, "finite_h_divergence");
  if (inst.domain_class.empty()) throw ConfigError("finite_h_divergence: empty domain class");
  double best = 2.0;
  for (const auto& mask : inst.domain_class) {
    double b = (1.0 - point_rate(inst.u_s, mask)) + point_rate(inst.u_t, mask);
    best = std::min(best, b);
  }
  return std::clamp(2.0 * (1.0 - best), 0.0, 2.0);
}

double finite_hdh_divergence(const FiniteInstance& inst) {
  validate_instance(inst, "finite_hdh_divergence");
  double sup = 0.0;
  for (size_t i = 0; i < inst.seg_hypotheses.size(); ++i)
    for (size_t j = i; j < inst.seg_hypotheses.size(); ++j) {
      auto differ = xor_mask(inst.seg_hypotheses[i], inst.seg_hypotheses[j]);
      double gap = std::abs(point_rate(inst.u_s, differ) - point_rate(inst.u_t, differ));
      sup = std::max(sup, gap);
    }
  return std::clamp(2.0 * sup, 0.0, 2.0);
}

// ---------------------------------------------------------- bound probes ---

BoundReport bound_probe_oracle(const FiniteInstance& inst) {
  validate_instance(inst, "bound_probe_oracle");
  if (static_cast<int>(inst.truth.size()) != inst.domain_size)
    throw DimensionError("bound_probe_oracle: truth table size mismatch");
  if (!finite_containment(inst))
    throw ConfigError(
        "bound_probe_oracle: a pairwise disagreement mask is missing from the domain class "
        "(containment premise violated)");

  double best_err = 2.0;
  for (const auto& h : inst.seg_hypotheses) {
    int wrong = 0;
    for (int p : inst.u_s) wrong += h[static_cast<size_t>(p)] != inst.truth[static_cast<size_t>(p)];
    best_err = std::min(best_err, static_cast<double>(wrong) / inst.u_s.size());
  }

  BoundReport rep;
  rep.eps_s = best_err;
  rep.d_hd = finite_h_divergence(inst);
  rep.d_hdh = finite_hdh_divergence(inst);
  rep.ub1_part = rep.eps_s + rep.d_hd / 2.0;
  rep.ub2_part = rep.eps_s + rep.d_hdh / 2.0;
  return rep;
}

BoundReport bound_probe_neural(const CaliModel& m, const Dataset& src_labeled,
                               const Dataset& tgt, const NeuralDivCfg& cfg) {
  if (!src_labeled.labeled) throw UsageError("bound_probe_neural: source dataset must be labelled");
  ConfusionMatrix cm(src_labeled.k);
  for (const SegSample& s : src_labeled.samples) cm.add(s.label, predict_classes(m, s.image));

  BoundReport rep;
  rep.eps_s = 1.0 - pixel_accuracy(cm);
  rep.d_hd = h_divergence_neural(pooled_feature_set(m, src_labeled), pooled_feature_set(m, tgt),
                                 cfg).value;
  rep.d_hdh = hdh_divergence_neural(m, src_labeled, tgt).value;
  rep.ub1_part = rep.eps_s + rep.d_hd / 2.0;
  rep.ub2_part = rep.eps_s + rep.d_hdh / 2.0;
  return rep;
}

}  // namespace cali
