#pragma once
// Training objectives.  All losses are per-pixel means so values are
// comparable across image sizes, and every log is clamped at 1e-7.
// Templated over the scalar type: float for training, double for the
// finite-difference oracle.

#include <cstdio>
#include <vector>

#include "cali/tensor.hpp"

namespace cali {

constexpr double kLogEps = 1e-7;

namespace detail {

template <typename T>
void require_prob_map(const TensorT<T>& p, const char* op) {
  if (p.rank() != 3 && p.rank() != 1)
    throw DimensionError(std::string(op) + ": expected [K,H,W] or [K], got " + shape_str(p.shape()));
}

// y must be exactly one-hot along the class axis at every pixel.
template <typename T>
void require_one_hot(const TensorT<T>& y, const char* op) {
  require_prob_map(y, op);
  int64_t k = y.dim(0);
  int64_t pixels = y.size() / k;
  for (int64_t px = 0; px < pixels; ++px) {
    T total = T(0);
    for (int64_t c = 0; c < k; ++c) {
      T v = y.data()[static_cast<size_t>(c * pixels + px)];
      if (v != T(0) && v != T(1))
        throw ValidationError(std::string(op) + ": target is not one-hot (entry " +
                              std::to_string(static_cast<double>(v)) + ")");
      total += v;
    }
    if (total != T(1))
      throw ValidationError(std::string(op) + ": target pixel " + std::to_string(px) +
                            " does not sum to 1");
  }
}

}  // namespace detail

// Per-pixel-mean cross-entropy of one prediction map against one-hot targets.
template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& p, const TensorT<T>& y, T eps = T(kLogEps)) {
  detail::require_prob_map(p, "cross_entropy");
  if (p.shape() != y.shape())
    throw DimensionError("cross_entropy: prediction " + shape_str(p.shape()) + " vs target " +
                         shape_str(y.shape()));
  detail::require_one_hot(y, "cross_entropy");
  T inv_pixels = T(1) / static_cast<T>(p.size() / p.dim(0));
  return neg(scale_add(sum_all(mul(y, log_clamped(p, eps))), inv_pixels, T(0)));
}

// Joint supervised loss of the two heads: the per-pixel mean of
// -y . log(P1 * P2) halved, which equals the mean of the two cross-entropies
// when no probability hits the clamp.
template <typename T>
TensorT<T> seg_loss(const TensorT<T>& p1, const TensorT<T>& p2, const TensorT<T>& y,
                    T eps = T(kLogEps)) {
  detail::require_prob_map(p1, "seg_loss");
  if (p1.shape() != p2.shape() || p1.shape() != y.shape())
    throw DimensionError("seg_loss: mismatched shapes " + shape_str(p1.shape()) + ", " +
                         shape_str(p2.shape()) + ", " + shape_str(y.shape()));
  detail::require_one_hot(y, "seg_loss");
  T inv_pixels = T(1) / static_cast<T>(p1.size() / p1.dim(0));
  TensorT<T> joint = log_clamped(mul(p1, p2), eps);
  return neg(scale_add(sum_all(mul(y, joint)), inv_pixels / T(2), T(0)));
}

// Binary domain cross-entropy on a sigmoid map d: source samples are labeled
// 1 (loss -mean log d), target samples 0 (loss -mean log(1-d)).
template <typename T>
TensorT<T> domain_ce(const TensorT<T>& d_map, bool source_label, T eps = T(kLogEps)) {
  for (T v : d_map.data())
    if (v <= T(0) || v >= T(1))
      throw ValidationError("domain_ce: discriminator output outside (0,1)");
  TensorT<T> p = source_label ? d_map : scale_add(d_map, T(-1), T(1));
  return neg(mean_all(log_clamped(p, eps)));
}

// Mean per-pixel prediction distance between the two heads:
// d(p,q) = (1/K) * |p - q|_1, averaged over pixels.  Symmetric, bounded by
// 2/K <= 2, and zero iff the maps agree exactly.
template <typename T>
TensorT<T> discrepancy(const TensorT<T>& p, const TensorT<T>& q) {
  detail::require_prob_map(p, "discrepancy");
  if (p.shape() != q.shape())
    throw DimensionError("discrepancy: " + shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  T inv = T(1) / static_cast<T>(p.size());  // 1/(K * pixels)
  return scale_add(sum_all(abs_of(sub(p, q))), inv, T(0));
}

// Cosine similarity of the flattened head weight vectors.  Minimizing the raw
// signed value pushes the heads toward diverse (anti-aligned) weights.
// Zero-norm operands make the cosine undefined; the value is taken as 0 with
// a warning and no gradient flows.
template <typename T>
TensorT<T> weight_reg(const std::vector<TensorT<T>>& w1, const std::vector<TensorT<T>>& w2) {
  if (w1.empty() || w1.size() != w2.size())
    throw DimensionError("weight_reg: head weight lists differ in length");
  for (size_t i = 0; i < w1.size(); ++i)
    if (w1[i].shape() != w2[i].shape())
      throw DimensionError("weight_reg: weight " + std::to_string(i) + " shapes differ: " +
                           shape_str(w1[i].shape()) + " vs " + shape_str(w2[i].shape()));

  double n1 = 0.0, n2 = 0.0;
  for (size_t i = 0; i < w1.size(); ++i) {
    for (T v : w1[i].data()) n1 += static_cast<double>(v) * v;
    for (T v : w2[i].data()) n2 += static_cast<double>(v) * v;
  }
  if (n1 <= 0.0 || n2 <= 0.0) {
    std::fprintf(stderr, "warning: weight_reg on zero-norm weights, defining the cosine as 0\n");
    return TensorT<T>::scalar(T(0));
  }

  TensorT<T> dot12, dot11, dot22;
  for (size_t i = 0; i < w1.size(); ++i) {
    TensorT<T> d12 = sum_all(mul(w1[i], w2[i]));
    TensorT<T> d11 = sum_all(mul(w1[i], w1[i]));
    TensorT<T> d22 = sum_all(mul(w2[i], w2[i]));
    dot12 = i == 0 ? d12 : add(dot12, d12);
    dot11 = i == 0 ? d11 : add(dot11, d11);
    dot22 = i == 0 ? d22 : add(dot22, d22);
  }
  return div(dot12, sqrt_of(mul(dot11, dot22)));
}

}  // namespace cali
