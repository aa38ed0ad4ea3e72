#pragma once
// The network family: a shared convolutional feature extractor G, two
// classifier heads C1/C2 that decode features into per-pixel class
// distributions, and a convolutional domain discriminator D over features.
//
// All shapes are fixed at build time from the configured input size; the
// checkpoint format stores the configs next to the parameters so a model can
// be rebuilt from its file alone.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cali/data.hpp"
#include "cali/optim.hpp"
#include "cali/tensor.hpp"

namespace cali {

struct ExtractorCfg {
  int in_channels = 3;
  std::vector<int> channels{8, 16};  // output channels per stage
  int kernel = 3;                    // odd; padded to keep stride arithmetic exact
  std::vector<int> strides{2, 2};    // one per stage
  float slope = 0.2f;                // leaky-relu negative slope
  int input_h = 32, input_w = 32;
};

struct ClassifierCfg {
  int hidden = 16;
  int num_classes = 3;
  int kernel = 3;
  float slope = 0.2f;
  // nearest-neighbour upsampling factor restoring the input resolution;
  // 0 derives it from the extractor strides.
  int upsample = 0;
};

struct DiscriminatorCfg {
  // output channels per layer; the final entry must be 1 (domain map).
  std::vector<int> channels{16, 32, 64, 128, 1};
  int kernel = 4;
  int stride = 2;
  float slope = 0.2f;
};

struct ConvLayer {
  Tensor w;  // [out,in,k,k]
  Tensor b;  // [out]
  int kernel = 0, stride = 1, pad = 0;
};

enum class Head { C1, C2 };

struct CaliModel {
  ExtractorCfg ext_cfg;
  ClassifierCfg cls_cfg;
  DiscriminatorCfg disc_cfg;

  int feat_c = 0, feat_h = 0, feat_w = 0;  // extractor output shape
  int upsample = 1;

  std::vector<ConvLayer> g_layers;
  ConvLayer c1_hidden, c1_head;
  ConvLayer c2_hidden, c2_head;
  std::vector<ConvLayer> d_layers;

  std::vector<NamedParam> g_params() const;
  std::vector<NamedParam> c_params(Head head) const;
  std::vector<NamedParam> d_params() const;
  // kernel tensors only, the operands of the head-decorrelation term
  std::vector<NamedParam> c_weights(Head head) const;
  std::vector<NamedParam> all_params() const;
};

// Deterministic build: every parameter drawn from a sub-seeded uniform with
// fan-in bound sqrt(6/fan_in); biases zero.  C1 and C2 use distinct
// sub-streams and therefore start decorrelated.
CaliModel build_model(const ExtractorCfg& ext, const ClassifierCfg& cls,
                      const DiscriminatorCfg& disc, uint64_t seed);

// G: image [3,H,W] -> features [feat_c,feat_h,feat_w].
Tensor features(const CaliModel& m, const Tensor& image);

// C_head: features -> per-pixel class distribution [K,H,W] (softmax over K).
Tensor classify(const CaliModel& m, Head head, const Tensor& f);

// D: features -> sigmoid domain map [1,h',w'], values strictly inside (0,1).
Tensor discriminate(const CaliModel& m, const Tensor& f);

// Both heads on one image.
std::pair<Tensor, Tensor> predict_probs(const CaliModel& m, const Tensor& image);

// Deployment prediction: per-pixel argmax of the averaged head distributions.
ClassMap predict_classes(const CaliModel& m, const Tensor& image);

// Spatial-mean pooling of extractor features to a fixed-length vector.
std::vector<double> pooled_features(const CaliModel& m, const Tensor& image);

int64_t param_count(const std::vector<NamedParam>& params);
uint64_t params_hash(const std::vector<NamedParam>& params);

// Closed-form parameter count for a discriminator built on [in_c,in_h,in_w]
// features, following the same per-layer shape rule as build_model.
int64_t discriminator_param_count(const DiscriminatorCfg& cfg, int in_c, int in_h, int in_w);

// Per-layer output sizes of the discriminator stack (shape arithmetic only).
std::vector<std::pair<int, int>> discriminator_grid_sizes(const DiscriminatorCfg& cfg, int in_h,
                                                          int in_w);

// ---------------------------------------------------------------------------
// Checkpoints: a TensorPack holding a "config" text entry plus every named
// parameter tensor.  Loading rebuilds the model and overwrites its parameters
// with the stored values, so save -> load -> save is byte-identical.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const CaliModel& m);
CaliModel load_checkpoint(const std::string& path);

}  // namespace cali
