#pragma once

// Empirical domain-divergence estimators.
//
// Two routes are kept deliberately separate:
//  * oracle mode enumerates a finite hypothesis class exactly (axis-aligned
//    threshold stumps over feature vectors, or explicit truth tables over a
//    small discrete domain), and
//  * neural mode trains a small domain classifier on pooled extractor
//    features and plugs its held-out performance into the same formula.
//
// The classifier-induced divergence d_H uses the standard two-sample
// estimator d = 2 * (1 - min_eta bracket(eta)) with
// bracket(eta) = P_S[eta=0] + P_T[eta=1]; the symmetric-difference
// divergence d_HdH takes the supremum over hypothesis pairs of
// 2 * |P_S[h != h'] - P_T[h != h']|.

#include <cstdint>
#include <string>
#include <vector>

#include "cali/data.hpp"
#include "cali/models.hpp"

namespace cali {

using FeatureVec = std::vector<double>;
using FeatureSet = std::vector<FeatureVec>;

// ---------------------------------------------------------------- stumps ---

// eta(x) = 1 iff (x[dim] <= threshold) == positive; polarity pairs make the
// class symmetric (closed under complement).
struct Stump {
  int dim = 0;
  double threshold = 0.0;
  bool positive = true;
};

struct StumpClass {
  std::vector<Stump> stumps;
  bool include_constants = true;  // adds the constant-0 / constant-1 pair
};

// Both polarities of every (dim, threshold) combination.
StumpClass make_stump_class(int dims, const std::vector<double>& thresholds,
                            bool include_constants = true);

bool stump_eval(const Stump& s, const FeatureVec& x);

// ------------------------------------------------------------- estimates ---

struct DivergenceEstimate {
  double value = 0.0;  // clamped to [0, 2]
  double raw = 0.0;    // pre-clamp value, logged for diagnostics
  std::string mode;    // "oracle" | "neural"
  int m_s = 0, m_t = 0;
  double bracket = 0.0;  // the minimized bracket the value derives from
};

// Exact enumeration of the stump class.
DivergenceEstimate h_divergence_oracle(const FeatureSet& u_s, const FeatureSet& u_t,
                                       const StumpClass& cls);

// Exact supremum over ordered stump pairs of the disagreement-rate gap.
DivergenceEstimate hdh_divergence_oracle(const FeatureSet& u_s, const FeatureSet& u_t,
                                         const StumpClass& cls);

struct NeuralDivCfg {
  std::vector<int> hidden{16, 16};
  int iters = 300;
  double lr = 1e-2;
  double slope = 0.2;
  uint64_t seed = 1;
};

// Trains a small MLP domain classifier on the first half of each feature set
// (index split) and evaluates the bracket on the held-out second half.
// Throws Error if the optimizer diverges.
DivergenceEstimate h_divergence_neural(const FeatureSet& u_s, const FeatureSet& u_t,
                                       const NeuralDivCfg& cfg = {});

// Trained-pair proxy: disagreement rate of the two classifier heads' argmax
// maps, per domain.  A lower bound on the pair supremum, reported as such.
DivergenceEstimate hdh_divergence_neural(const CaliModel& m, const Dataset& u_s,
                                         const Dataset& u_t);

// Pooled (spatial-mean) extractor features for every sample.
FeatureSet pooled_feature_set(const CaliModel& m, const Dataset& ds);

// ------------------------------------------------------- finite instances ---

// A fully enumerable world: points 0..domain_size-1, hypotheses as explicit
// truth tables.  seg_hypotheses map points to class labels; domain_class is
// a symmetric set of binary tables playing the role of the domain-classifier
// space.
struct FiniteInstance {
  int domain_size = 0;
  int k = 2;
  std::vector<int> u_s, u_t;                         // multisets of point ids
  std::vector<std::vector<uint8_t>> seg_hypotheses;  // values in [0, k)
  std::vector<std::vector<uint8_t>> domain_class;    // values in {0, 1}
  std::vector<uint8_t> truth;                        // ground-truth labels, [0, k)
};

// Randomized small instance whose domain_class is built as the symmetric
// closure of all pairwise disagreement masks plus extras, so the containment
// premise holds by construction.
FiniteInstance random_finite_instance(uint64_t seed);

// Checks that every pairwise disagreement mask of seg_hypotheses appears in
// domain_class (the containment premise of the two-divergence comparison).
bool finite_containment(const FiniteInstance& inst);

double finite_h_divergence(const FiniteInstance& inst);    // Lemma-1 enumeration
double finite_hdh_divergence(const FiniteInstance& inst);  // pair supremum

// ------------------------------------------------------------ bound probe ---

// Estimable halves of the two target-error bounds for one hypothesis:
// part_i = eps_S + d_i / 2.  The non-estimable joint-error term is omitted
// and flagged; it is identical in both bounds and cancels in the comparison.
struct BoundReport {
  double eps_s = 0.0;
  double d_hd = 0.0;
  double d_hdh = 0.0;
  double ub1_part = 0.0;  // eps_s + d_hd  / 2
  double ub2_part = 0.0;  // eps_s + d_hdh / 2
  bool lambda_omitted = true;
};

// Oracle mode: picks the seg hypothesis with the best source error.
// Throws ConfigError when the containment premise fails.
BoundReport bound_probe_oracle(const FiniteInstance& inst);

// Neural mode: fused-head source error + the two neural estimates.
BoundReport bound_probe_neural(const CaliModel& m, const Dataset& src_labeled,
                               const Dataset& tgt, const NeuralDivCfg& cfg = {});

}  // namespace cali
