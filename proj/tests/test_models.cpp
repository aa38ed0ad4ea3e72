#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "cali/losses.hpp"
#include "cali/models.hpp"
#include "test_util.hpp"

using namespace cali;
namespace fs = std::filesystem;

namespace {

CaliModel toy_model(uint64_t seed = 7) {
  return build_model(ExtractorCfg{}, ClassifierCfg{}, DiscriminatorCfg{}, seed);
}

Tensor toy_image(uint64_t seed = 3) {
  Rng rng(seed);
  return testutil::random_tensor<float>({3, 32, 32}, rng, 0.0, 1.0);
}

// Independent shape oracle for the discriminator stack: floor arithmetic with
// 'same-halving' padding, degrading to a 1x1 unit layer when the kernel no
// longer fits.  Kept separate from the library's own plan on purpose.
std::vector<std::pair<int, int>> disc_shape_oracle(int h, int w, int kernel, int stride,
                                                   int layers) {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < layers; ++i) {
    int pad = std::max(0, (kernel - stride) / 2);
    int oh = (h + 2 * pad - kernel) / stride + 1;
    int ow = (w + 2 * pad - kernel) / stride + 1;
    if (h + 2 * pad < kernel || w + 2 * pad < kernel || oh < 1 || ow < 1) {
      oh = h;
      ow = w;
    }
    out.emplace_back(oh, ow);
    h = oh;
    w = ow;
  }
  return out;
}

}  // namespace

TEST_CASE("build_model: toy forward shapes") {
  CaliModel m = toy_model();
  CHECK(m.feat_c == 16);
  CHECK(m.feat_h == 8);
  CHECK(m.feat_w == 8);
  CHECK(m.upsample == 4);

  Tensor img = toy_image();
  Tensor f = features(m, img);
  REQUIRE(f.shape() == std::vector<int>{16, 8, 8});

  Tensor p = classify(m, Head::C1, f);
  REQUIRE(p.shape() == std::vector<int>{3, 32, 32});

  Tensor d = discriminate(m, f);
  REQUIRE(d.shape() == std::vector<int>{1, 1, 1});
}

TEST_CASE("discriminator: grid sizes follow the floor-arithmetic oracle") {
  DiscriminatorCfg cfg;
  SUBCASE("five stride-2 layers on a 32x32 grid") {
    auto got = discriminator_grid_sizes(cfg, 32, 32);
    auto want = disc_shape_oracle(32, 32, 4, 2, 5);
    CHECK(got == want);
    CHECK(got.back() == std::pair<int, int>{1, 1});
    CHECK(got[0] == std::pair<int, int>{16, 16});
  }
  SUBCASE("coarse 8x8 features degrade the tail layers") {
    auto got = discriminator_grid_sizes(cfg, 8, 8);
    CHECK(got == disc_shape_oracle(8, 8, 4, 2, 5));
    CHECK(got.back() == std::pair<int, int>{1, 1});
  }
  SUBCASE("non-square input") {
    CHECK(discriminator_grid_sizes(cfg, 16, 8) == disc_shape_oracle(16, 8, 4, 2, 5));
  }
}

TEST_CASE("discriminator: parameter count matches the closed form") {
  CaliModel m = toy_model();
  // by hand for the toy stack on 16ch 8x8 features:
  //   L0..L2 keep kernel 4 (4x4 -> 2x2 -> 1x1), L3/L4 degrade to 1x1
  int64_t by_hand = (16 * 16 * 16 + 16) + (32 * 16 * 16 + 32) + (64 * 32 * 16 + 64) +
                    (128 * 64 * 1 + 128) + (1 * 128 * 1 + 1);
  CHECK(discriminator_param_count(DiscriminatorCfg{}, 16, 8, 8) == by_hand);
  CHECK(param_count(m.d_params()) == by_hand);
}

TEST_CASE("build_model: deterministic per seed, distinct across seeds and heads") {
  CaliModel a = toy_model(11), b = toy_model(11), c = toy_model(12);
  CHECK(params_hash(a.all_params()) == params_hash(b.all_params()));
  CHECK(params_hash(a.all_params()) != params_hash(c.all_params()));

  // C1 and C2 start from different sub-streams
  CHECK(params_hash(a.c_params(Head::C1)) != params_hash(a.c_params(Head::C2)));
}

TEST_CASE("classifier heads: start decorrelated but not identical") {
  int disagree_pixels = 0, total_pixels = 0;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    CaliModel m = toy_model(seed);
    std::vector<Tensor> w1, w2;
    for (const NamedParam& p : m.c_weights(Head::C1)) w1.push_back(p.tensor);
    for (const NamedParam& p : m.c_weights(Head::C2)) w2.push_back(p.tensor);
    float cos = weight_reg(w1, w2).item();
    CAPTURE(seed);
    CHECK(std::abs(cos) < 0.2f);

    Tensor f = features(m, toy_image(seed));
    ClassMap o1 = argmax_channel(classify(m, Head::C1, f));
    ClassMap o2 = argmax_channel(classify(m, Head::C2, f));
    for (size_t i = 0; i < o1.cells.size(); ++i)
      if (o1.cells[i] != o2.cells[i]) ++disagree_pixels;
    total_pixels += static_cast<int>(o1.cells.size());
  }
  CHECK(disagree_pixels > total_pixels / 100);  // >= 1% disagreement at init
}

TEST_CASE("forward: outputs are proper distributions") {
  CaliModel m = toy_model();
  Tensor f = features(m, toy_image());
  Tensor p = classify(m, Head::C2, f);
  for (int px = 0; px < 32 * 32; ++px) {
    float total = 0;
    for (int c = 0; c < 3; ++c) total += p.data()[static_cast<size_t>(c) * 1024 + px];
    CHECK(total == doctest::Approx(1.0f).epsilon(1e-5));
  }
  Tensor d = discriminate(m, f);
  for (float v : d.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("forward: every input pixel reaches the features") {
  CaliModel m = toy_model();
  Tensor img = toy_image();
  Tensor f0 = features(m, img);
  Tensor img2 = Tensor::from_data(img.shape(), img.data());
  img2.data()[(1 * 32 + 16) * 32 + 16] += 0.5f;  // bump one channel of one pixel
  Tensor f1 = features(m, img2);
  bool changed = false;
  for (size_t i = 0; i < f0.data().size(); ++i)
    if (f0.data()[i] != f1.data()[i]) changed = true;
  CHECK(changed);
}

TEST_CASE("build_model: configuration errors") {
  ExtractorCfg ext;
  ClassifierCfg cls;
  DiscriminatorCfg disc;

  ExtractorCfg bad = ext;
  bad.channels.clear();
  bad.strides.clear();
  CHECK_THROWS_AS(build_model(bad, cls, disc, 1), ConfigError);

  bad = ext;
  bad.kernel = 4;  // even kernels break 'same' padding
  CHECK_THROWS_AS(build_model(bad, cls, disc, 1), ConfigError);

  bad = ext;
  bad.strides = {2};  // length mismatch
  CHECK_THROWS_AS(build_model(bad, cls, disc, 1), ConfigError);

  bad = ext;
  bad.input_h = 30;  // 30 -> 15 -> 8, not restorable by an integer factor
  CHECK_THROWS_AS(build_model(bad, cls, disc, 1), ConfigError);

  DiscriminatorCfg bad_d = disc;
  bad_d.channels.back() = 3;
  CHECK_THROWS_AS(build_model(ext, cls, bad_d, 1), ConfigError);

  ClassifierCfg bad_c = cls;
  bad_c.upsample = 2;  // conflicts with derived factor 4
  CHECK_THROWS_AS(build_model(ext, bad_c, disc, 1), ConfigError);
}

TEST_CASE("forward: dimension errors name the problem") {
  CaliModel m = toy_model();
  CHECK_THROWS_AS(features(m, Tensor::zeros({3, 16, 16})), DimensionError);
  CHECK_THROWS_AS(classify(m, Head::C1, Tensor::zeros({8, 8, 8})), DimensionError);
  CHECK_THROWS_AS(discriminate(m, Tensor::zeros({15, 8, 8})), DimensionError);
}

TEST_CASE("checkpoint: save/load round trip preserves every bit") {
  fs::path path = fs::temp_directory_path() / "cali_test_model.ct";
  CaliModel m = toy_model(21);
  save_checkpoint(path.string(), m);
  CaliModel back = load_checkpoint(path.string());

  CHECK(params_hash(back.all_params()) == params_hash(m.all_params()));
  CHECK(back.ext_cfg.channels == m.ext_cfg.channels);
  CHECK(back.cls_cfg.upsample == m.cls_cfg.upsample);

  // identical forward behaviour
  Tensor img = toy_image(5);
  CHECK(testutil::tensor_bits(features(back, img)) == testutil::tensor_bits(features(m, img)));

  // and a second save emits the same bytes
  fs::path path2 = fs::temp_directory_path() / "cali_test_model2.ct";
  save_checkpoint(path2.string(), back);
  CHECK(read_file_bytes(path.string()) == read_file_bytes(path2.string()));
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("pooled_features: spatial mean per channel") {
  CaliModel m = toy_model();
  Tensor img = toy_image();
  Tensor f = features(m, img);
  std::vector<double> pooled = pooled_features(m, img);
  REQUIRE(pooled.size() == 16);
  double want = 0;
  for (int i = 0; i < 64; ++i) want += f.data()[static_cast<size_t>(i)];
  want /= 64.0;
  CHECK(pooled[0] == doctest::Approx(want).epsilon(1e-6));
}
