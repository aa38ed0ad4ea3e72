#include "cali/trainer.hpp"

#include <algorithm>
#include <sstream>

#include "cali/losses.hpp"

namespace cali {

namespace {

constexpr int kSrcTag = 0;
constexpr int kTgtTag = 1;

Tensor detach(const Tensor& t) { return Tensor::from_data(t.shape(), t.data()); }

Tensor batch_mean(std::vector<Tensor> terms) {
  Tensor sum = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) sum = add(sum, terms[i]);
  return scale_add(sum, 1.0f / static_cast<float>(terms.size()), 0.0f);
}

std::vector<Tensor> head_weight_tensors(CaliModel& m, Head h) {
  std::vector<Tensor> out;
  for (const NamedParam& p : m.c_weights(h)) out.push_back(p.tensor);
  return out;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.max_iters < 1)
    throw ConfigError("train: max_iters must be positive, got " + std::to_string(cfg.max_iters));
  if (cfg.interval < 1 || cfg.interval > cfg.max_iters)
    throw ConfigError("train: interval must lie in [1, max_iters], got " +
                      std::to_string(cfg.interval));
  if (cfg.lr_da < 0 || cfg.lr_ca < 0 || cfg.lr_d < 0)
    throw ConfigError("train: learning rates must be non-negative");
  if (cfg.batch_size < 1)
    throw ConfigError("train: batch_size must be positive, got " + std::to_string(cfg.batch_size));
  if (cfg.eval_every < 1)
    throw ConfigError("train: eval_every must be positive, got " + std::to_string(cfg.eval_every));
  if (cfg.eval_count < 1)
    throw ConfigError("train: eval_count must be positive, got " + std::to_string(cfg.eval_count));
  if (cfg.d_burn_in < 0)
    throw ConfigError("train: d_burn_in must be non-negative, got " +
                      std::to_string(cfg.d_burn_in));
}

// Splits the last `count` samples into an evaluation set.
void split_tail(const Dataset& full, int count, Dataset& train_part, Dataset& eval_part) {
  train_part = full;
  eval_part = full;
  train_part.samples.assign(full.samples.begin(), full.samples.end() - count);
  eval_part.samples.assign(full.samples.end() - count, full.samples.end());
  train_part.n = static_cast<int>(train_part.samples.size());
  eval_part.n = count;
}

}  // namespace

Baseline parse_baseline(const std::string& text) {
  if (text == "SO") return Baseline::SO;
  if (text == "DA") return Baseline::DA;
  if (text == "CA") return Baseline::CA;
  if (text == "CALI") return Baseline::Cali;
  throw ValidationError("unknown baseline '" + text + "' (expected SO, DA, CA, or CALI)");
}

std::string baseline_to_string(Baseline b) {
  switch (b) {
    case Baseline::SO: return "SO";
    case Baseline::DA: return "DA";
    case Baseline::CA: return "CA";
    case Baseline::Cali: return "CALI";
  }
  throw UsageError("baseline_to_string: bad enum value");
}

std::pair<bool, bool> phase_flags(int m, int interval) {
  if (m < 1 || interval < 1) throw UsageError("phase_flags: iteration and interval must be >= 1");
  bool is_domain = (m / interval) % 2 == 0;
  return {is_domain, !is_domain};
}

std::string curves_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream out;
  out << "iter,phase,l_seg,wr,ce_s,ce_t,v2_target,src_miou\n";
  auto cell = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << format_g6(*v);
  };
  for (const CurveRow& r : rows) {
    out << r.iter << ',' << r.phase;
    cell(r.l_seg);
    cell(r.wr);
    cell(r.ce_s);
    cell(r.ce_t);
    cell(r.v2_target);
    cell(r.src_miou);
    out << '\n';
  }
  return out.str();
}

Trainer::Trainer(const TrainConfig& cfg, const Dataset& source, const Dataset& target)
    : cfg_(cfg) {
  validate_config(cfg_);
  if (source.samples.empty() || target.samples.empty())
    throw ConfigError("train: both datasets must be non-empty");
  if (!source.labeled) throw UsageError("train: source dataset must be labelled");
  if (source.h != target.h || source.w != target.w)
    throw ConfigError("train: source and target image sizes differ");

  int n_src = static_cast<int>(source.samples.size());
  int n_tgt = static_cast<int>(target.samples.size());
  if (n_src < 2 || n_tgt < 2)
    throw ConfigError("train: need at least 2 samples per domain to hold out an eval split");
  int eval_src_n = std::min(cfg_.eval_count, n_src - 1);
  int eval_tgt_n = std::min(cfg_.eval_count, n_tgt - 1);
  split_tail(source, eval_src_n, train_src_, eval_src_);
  split_tail(target, eval_tgt_n, train_tgt_, eval_tgt_);

  cfg_.ext.input_h = source.h;
  cfg_.ext.input_w = source.w;
  cfg_.cls.num_classes = source.k;
  cfg_.cls.upsample = 0;  // rederive for this input size
  model_ = build_model(cfg_.ext, cfg_.cls, cfg_.disc, derive_seed(cfg_.seed, 10));

  OptimizerConfig sgd_da{OptKind::SgdMomentum, cfg_.lr_da, cfg_.momentum, cfg_.weight_decay,
                         cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};
  OptimizerConfig sgd_ca = sgd_da;
  sgd_ca.lr = cfg_.lr_ca;
  OptimizerConfig adam{OptKind::Adam, cfg_.lr_d, 0.0, 0.0,
                       cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};
  opt_seg_ = Optimizer(sgd_da);
  opt_wr_ = Optimizer(sgd_da);
  opt_g_da_ = Optimizer(sgd_da);
  opt_d_ = Optimizer(adam);
  opt_g_ca_ = Optimizer(sgd_ca);
  opt_heads_ca_ = Optimizer(sgd_ca);

  for (int tag : {kSrcTag, kTgtTag}) {
    const Dataset& d = tag == kSrcTag ? train_src_ : train_tgt_;
    order_[tag].resize(d.samples.size());
    for (size_t i = 0; i < order_[tag].size(); ++i) order_[tag][i] = static_cast<int>(i);
    Rng rng(derive_seed(derive_seed(cfg_.seed, 20 + tag), 0));
    rng.shuffle(order_[tag]);
  }
}

const SegSample& Trainer::next_sample(int tag) {
  const Dataset& d = tag == kSrcTag ? train_src_ : train_tgt_;
  if (cursor_[tag] >= order_[tag].size()) {
    ++epoch_[tag];
    Rng rng(derive_seed(derive_seed(cfg_.seed, 20 + tag), static_cast<uint64_t>(epoch_[tag])));
    rng.shuffle(order_[tag]);
    cursor_[tag] = 0;
  }
  return d.samples[static_cast<size_t>(order_[tag][cursor_[tag]++])];
}

Tensor Trainer::batch_loss_supervised(const Batch& batch) {
  std::vector<Tensor> terms;
  for (const SegSample* s : batch) {
    if (!s->has_label) throw UsageError("step_supervised: batch sample has no label");
    Tensor f = features(model_, s->image);
    Tensor y = one_hot(s->label, model_.cls_cfg.num_classes);
    terms.push_back(seg_loss(classify(model_, Head::C1, f), classify(model_, Head::C2, f), y));
  }
  return batch_mean(std::move(terms));
}

SupervisedLog Trainer::step_supervised(const Batch& batch, double lr_scale) {
  if (batch.empty()) throw UsageError("step_supervised: empty batch");
  SupervisedLog log;

  zero_grads(model_.all_params());
  Tensor l_seg = batch_loss_supervised(batch);
  log.l_seg = static_cast<double>(l_seg.item());
  Tensor weighted = scale_add(l_seg, static_cast<float>(cfg_.w_seg), 0.0f);
  weighted.backward();
  auto seg_params = model_.g_params();
  for (auto& p : model_.c_params(Head::C1)) seg_params.push_back(p);
  for (auto& p : model_.c_params(Head::C2)) seg_params.push_back(p);
  opt_seg_.step(seg_params, lr_scale);

  zero_grads(model_.all_params());
  Tensor wr = weight_reg(head_weight_tensors(model_, Head::C1),
                         head_weight_tensors(model_, Head::C2));
  log.wr = static_cast<double>(wr.item());
  Tensor wr_weighted = scale_add(wr, static_cast<float>(cfg_.w_wr), 0.0f);
  wr_weighted.backward();
  auto kernels = model_.c_weights(Head::C1);
  for (auto& p : model_.c_weights(Head::C2)) kernels.push_back(p);
  opt_wr_.step(kernels, lr_scale);
  return log;
}

DomainLog Trainer::step_domain(const Batch& src, const Batch& tgt, double lr_scale) {
  if (src.empty() || tgt.empty()) throw UsageError("step_domain: empty batch");
  DomainLog log;
  if (cfg_.invert_da_order) {
    log = step_discriminator(src, tgt, lr_scale);
    step_extractor_adv(src, tgt, lr_scale);
  } else {
    step_extractor_adv(src, tgt, lr_scale);
    log = step_discriminator(src, tgt, lr_scale);
  }
  return log;
}

// label-flipped cross entropy against a frozen discriminator
void Trainer::step_extractor_adv(const Batch& src, const Batch& tgt, double lr_scale) {
  if (src.empty() || tgt.empty()) throw UsageError("step_extractor_adv: empty batch");
  zero_grads(model_.all_params());
  std::vector<Tensor> s_terms, t_terms;
  for (const SegSample* s : src)
    s_terms.push_back(domain_ce(discriminate(model_, features(model_, s->image)), false));
  for (const SegSample* t : tgt)
    t_terms.push_back(domain_ce(discriminate(model_, features(model_, t->image)), true));
  Tensor loss = add(batch_mean(std::move(s_terms)), batch_mean(std::move(t_terms)));
  Tensor weighted = scale_add(loss, static_cast<float>(cfg_.w_adv_d), 0.0f);
  weighted.backward();
  opt_g_da_.step(model_.g_params(), lr_scale);
}

DomainLog Trainer::step_discriminator(const Batch& src, const Batch& tgt, double lr_scale) {
  if (src.empty() || tgt.empty()) throw UsageError("step_discriminator: empty batch");
  DomainLog log;
  zero_grads(model_.all_params());
  std::vector<Tensor> s_terms, t_terms;
  for (const SegSample* s : src)
    s_terms.push_back(domain_ce(discriminate(model_, detach(features(model_, s->image))), true));
  for (const SegSample* t : tgt)
    t_terms.push_back(domain_ce(discriminate(model_, detach(features(model_, t->image))), false));
  Tensor ce_s = batch_mean(std::move(s_terms));
  Tensor ce_t = batch_mean(std::move(t_terms));
  log.ce_s = static_cast<double>(ce_s.item());
  log.ce_t = static_cast<double>(ce_t.item());
  Tensor loss = add(ce_s, ce_t);
  loss.backward();
  opt_d_.step(model_.d_params(), lr_scale);
  return log;
}

ClassLog Trainer::step_class(const Batch& tgt, double lr_scale) {
  if (tgt.empty()) throw UsageError("step_class: empty batch");
  ClassLog log;

  // extractor step: shrink the head gap on target features
  zero_grads(model_.all_params());
  std::vector<Tensor> terms;
  for (const SegSample* t : tgt) {
    Tensor f = features(model_, t->image);
    terms.push_back(discrepancy(classify(model_, Head::C1, f), classify(model_, Head::C2, f)));
  }
  Tensor v2 = batch_mean(std::move(terms));
  log.v2 = static_cast<double>(v2.item());
  Tensor weighted = scale_add(v2, static_cast<float>(cfg_.w_adv_c), 0.0f);
  weighted.backward();
  opt_g_ca_.step(model_.g_params(), lr_scale);

  // head step: widen the gap on detached features of the updated extractor
  zero_grads(model_.all_params());
  std::vector<Tensor> terms_b;
  for (const SegSample* t : tgt) {
    Tensor f = detach(features(model_, t->image));
    terms_b.push_back(discrepancy(classify(model_, Head::C1, f), classify(model_, Head::C2, f)));
  }
  Tensor v2b = batch_mean(std::move(terms_b));
  Tensor ascent = scale_add(v2b, static_cast<float>(-cfg_.w_adv_c), 0.0f);
  ascent.backward();
  auto heads = model_.c_params(Head::C1);
  for (auto& p : model_.c_params(Head::C2)) heads.push_back(p);
  opt_heads_ca_.step(heads, lr_scale);
  return log;
}

TrainResult Trainer::run(const TrainHooks& hooks) {
  TrainResult result{model_, {}};
  result.curves.reserve(static_cast<size_t>(cfg_.max_iters));

  for (int m = 1; m <= cfg_.max_iters; ++m) {
    double scale = poly_lr(1.0, m - 1, cfg_.max_iters, cfg_.poly_power);

    Batch src, tgt;
    for (int i = 0; i < cfg_.batch_size; ++i) {
      src.push_back(&next_sample(kSrcTag));
      tgt.push_back(&next_sample(kTgtTag));
    }

    CurveRow row;
    row.iter = m;

    bool run_domain = false, run_class = false;
    switch (cfg_.baseline) {
      case Baseline::SO: break;
      case Baseline::DA: run_domain = true; break;
      case Baseline::CA: run_class = true; break;
      case Baseline::Cali: {
        auto [d, c] = phase_flags(m, cfg_.interval);
        run_domain = d;
        run_class = c;
        break;
      }
    }
    row.phase = run_domain ? "domain" : run_class ? "class" : "none";

    // The supervised anchor follows the active phase's SGD rate; otherwise the
    // class-phase head ascent (at lr_ca) overwhelms a slower anchor and the
    // heads collapse to a constant predictor.
    double sup_scale = scale;
    if (run_class && cfg_.lr_da > 0) sup_scale *= cfg_.lr_ca / cfg_.lr_da;
    SupervisedLog sup = step_supervised(src, sup_scale);
    row.l_seg = sup.l_seg;
    row.wr = sup.wr;

    if (run_domain) {
      DomainLog dl = m <= cfg_.d_burn_in ? step_discriminator(src, tgt, scale)
                                         : step_domain(src, tgt, scale);
      row.ce_s = dl.ce_s;
      row.ce_t = dl.ce_t;
    }
    if (run_class) {
      ClassLog cl = step_class(tgt, scale);
      row.v2_target = cl.v2;
    }

    if (m % cfg_.eval_every == 0 || m == cfg_.max_iters) {
      row.src_miou = evaluate_segmentation(model_, eval_src_).miou;
      row.v2_target = mean_head_discrepancy(model_, eval_tgt_);
      if (hooks.on_eval) hooks.on_eval(m, model_);
    }
    result.curves.push_back(std::move(row));
  }
  result.model = model_;
  return result;
}

TrainResult train(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                  const TrainHooks& hooks) {
  Trainer t(cfg, source, target);
  return t.run(hooks);
}

double discriminator_accuracy(const CaliModel& m, const Dataset& src_eval,
                              const Dataset& tgt_eval) {
  if (src_eval.samples.empty() || tgt_eval.samples.empty())
    throw UsageError("discriminator_accuracy: empty evaluation set");
  int correct = 0, total = 0;
  auto mean_output = [&](const SegSample& s) {
    Tensor d = discriminate(m, features(m, s.image));
    double sum = 0;
    for (float v : d.data()) sum += static_cast<double>(v);
    return sum / static_cast<double>(d.size());
  };
  for (const SegSample& s : src_eval.samples) {
    if (mean_output(s) > 0.5) ++correct;
    ++total;
  }
  for (const SegSample& s : tgt_eval.samples) {
    if (mean_output(s) <= 0.5) ++correct;
    ++total;
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace cali
