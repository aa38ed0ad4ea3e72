#pragma once

// Alternating adversarial trainer.  Every iteration runs a supervised core
// (segmentation descent on extractor + heads, then a signed-cosine descent on
// the head kernels).  Around that core the selected variant adds adversarial
// steps:
//   SO    supervised only
//   DA    domain alignment every iteration (extractor vs discriminator)
//   CA    class alignment every iteration (extractor vs classifier heads)
//   CALI  alternates DA and CA phases on a fixed interval
//
// Both adversarial families train the extractor first and the opponent
// second; the inverted order is available behind a flag purely as a
// diagnostic (it lets the discriminator win).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cali/data.hpp"
#include "cali/metrics.hpp"
#include "cali/models.hpp"
#include "cali/optim.hpp"

namespace cali {

enum class Baseline { SO, DA, CA, Cali };

Baseline parse_baseline(const std::string& text);
std::string baseline_to_string(Baseline b);

struct TrainConfig {
  int max_iters = 2000;  // M
  int interval = 50;     // I: phase length for the alternating variant
  Baseline baseline = Baseline::Cali;

  double lr_da = 2.5e-4;  // SGD rate for segmentation + domain-phase steps
  double lr_ca = 1e-3;    // SGD rate for class-phase steps
  double lr_d = 1e-4;     // Adam rate for the discriminator
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  double poly_power = 0.9;  // all rates decay as base*(1 - m/M)^power

  double w_seg = 1.0;  // loss weights
  double w_wr = 1.0;
  double w_adv_d = 0.02;  // domain adversarial weight (extractor objective only)
  double w_adv_c = 1.0;   // class adversarial weight (both alignment sub-steps)

  int batch_size = 1;
  uint64_t seed = 1;
  int eval_every = 100;  // held-out probe cadence
  int eval_count = 8;    // samples held out per domain
  bool invert_da_order = false;  // diagnostic: discriminator sub-step first
  // Diagnostic: for the first d_burn_in iterations the domain family trains
  // the discriminator alone, handing it a head start over the extractor.
  int d_burn_in = 0;

  ExtractorCfg ext;
  ClassifierCfg cls;    // num_classes is overridden from the source dataset
  DiscriminatorCfg disc;
};

// Phase schedule: starts in the domain phase, flips every `interval`
// iterations.  Pure function of the 1-based iteration index.
// Returns {is_domain, is_class}; exactly one is true.
std::pair<bool, bool> phase_flags(int m, int interval);

struct CurveRow {
  int iter = 0;
  std::string phase;  // "domain" | "class" | "none"
  std::optional<double> l_seg, wr, ce_s, ce_t, v2_target, src_miou;
};

// Header: iter,phase,l_seg,wr,ce_s,ce_t,v2_target,src_miou
// Missing fields stay empty; numbers use 6 significant digits.
std::string curves_csv(const std::vector<CurveRow>& rows);

struct TrainResult {
  CaliModel model;
  std::vector<CurveRow> curves;
};

struct TrainHooks {
  // invoked on every held-out evaluation iteration
  std::function<void(int iter, const CaliModel&)> on_eval;
};

using Batch = std::vector<const SegSample*>;

struct SupervisedLog {
  double l_seg = 0, wr = 0;
};
struct DomainLog {
  double ce_s = 0, ce_t = 0;
};
struct ClassLog {
  double v2 = 0;
};

class Trainer {
 public:
  // Copies the datasets and splits a held-out evaluation tail off each.
  // The source dataset must be labelled; target labels are never read.
  Trainer(const TrainConfig& cfg, const Dataset& source, const Dataset& target);

  // One supervised core step: descend seg loss on (G, C1, C2), then descend
  // the signed head-weight cosine on the head kernels alone.
  SupervisedLog step_supervised(const Batch& batch, double lr_scale = 1.0);

  // Domain alignment: extractor step against a frozen discriminator
  // (label-flipped cross entropy), then a discriminator step on detached
  // features.  Logged values come from the discriminator's own loss.
  DomainLog step_domain(const Batch& src, const Batch& tgt, double lr_scale = 1.0);

  // Discriminator-only half of the domain step (burn-in diagnostic).
  DomainLog step_discriminator(const Batch& src, const Batch& tgt, double lr_scale = 1.0);

  // Extractor-only half of the domain step (burn-in diagnostic): the
  // label-flipped confusion descent against the frozen discriminator.
  void step_extractor_adv(const Batch& src, const Batch& tgt, double lr_scale = 1.0);

  // Class alignment: extractor step shrinking the target head gap, then a
  // head step widening it on detached features.
  ClassLog step_class(const Batch& tgt, double lr_scale = 1.0);

  TrainResult run(const TrainHooks& hooks = {});

  CaliModel& model() { return model_; }
  const CaliModel& model() const { return model_; }
  const Dataset& eval_source() const { return eval_src_; }
  const Dataset& eval_target() const { return eval_tgt_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  Tensor batch_loss_supervised(const Batch& batch);
  const SegSample& next_sample(int domain_tag);

  TrainConfig cfg_;
  Dataset train_src_, train_tgt_, eval_src_, eval_tgt_;
  CaliModel model_;
  Optimizer opt_seg_, opt_wr_, opt_g_da_, opt_d_, opt_g_ca_, opt_heads_ca_;
  // per-domain cycling state
  std::vector<int> order_[2];
  size_t cursor_[2] = {0, 0};
  int epoch_[2] = {0, 0};
};

// Convenience wrapper: construct a Trainer and run it.
TrainResult train(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                  const TrainHooks& hooks = {});

// Held-out domain classification accuracy of the discriminator.  A sample
// counts as source when its mean discriminator output exceeds 0.5; identical
// source/target multisets therefore score exactly 0.5.
double discriminator_accuracy(const CaliModel& m, const Dataset& src_eval,
                              const Dataset& tgt_eval);

}  // namespace cali
