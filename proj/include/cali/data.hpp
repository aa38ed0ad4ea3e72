#pragma once
// Data layer: the binary tensor container used for checkpoints/datasets, the
// synthetic segmentation-dataset generator with controllable appearance
// shifts, and label-space remapping.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cali/common.hpp"
#include "cali/tensor.hpp"

namespace cali {

// ---------------------------------------------------------------------------
// TensorPack: named-tensor container.
//
// Layout (all little-endian):
//   magic "CTEN" | u8 version=1 | u32 entry count
//   per entry: u16 name length | name bytes | u8 dtype | u8 rank |
//              rank x u32 dims | row-major payload | u32 CRC32(payload)
// dtypes: 1 = f32, 2 = u8, 3 = i32.
// Loads fail with a FormatError carrying the byte offset of the problem.
// ---------------------------------------------------------------------------

enum class PackDtype : uint8_t { F32 = 1, U8 = 2, I32 = 3 };

struct PackEntry {
  std::string name;
  PackDtype dtype = PackDtype::F32;
  std::vector<uint32_t> dims;
  std::vector<uint8_t> payload;

  int64_t numel() const;
  size_t elem_size() const;
};

class TensorPack {
 public:
  void add_f32(const std::string& name, const std::vector<int>& shape, const std::vector<float>& data);
  void add_u8(const std::string& name, const std::vector<int>& shape, const std::vector<uint8_t>& data);
  void add_i32(const std::string& name, const std::vector<int>& shape, const std::vector<int32_t>& data);

  bool has(const std::string& name) const;
  const PackEntry& entry(const std::string& name) const;
  const std::vector<PackEntry>& entries() const { return entries_; }

  std::vector<float> get_f32(const std::string& name) const;
  std::vector<uint8_t> get_u8(const std::string& name) const;
  std::vector<int32_t> get_i32(const std::string& name) const;
  std::vector<int> shape_of(const std::string& name) const;

  std::vector<uint8_t> serialize() const;
  void save(const std::string& path) const;
  static TensorPack parse(const std::vector<uint8_t>& bytes);
  static TensorPack load(const std::string& path);

 private:
  void add_raw(const std::string& name, PackDtype dtype, const std::vector<int>& shape,
               const void* data, size_t elem_size);
  std::vector<PackEntry> entries_;
};

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

enum class Domain { Source, Target };

struct SegSample {
  Tensor image;      // [3,H,W] float in [0,1]
  ClassMap label;    // per-pixel class ids (may be empty when unlabeled)
  bool has_label = false;
};

struct Dataset {
  int n = 0, h = 0, w = 0, k = 0;
  Domain domain = Domain::Source;
  bool labeled = false;              // whether labels may be consumed for training
  std::vector<uint8_t> navigable;    // per-class traversability, size k
  std::vector<SegSample> samples;
};

// Appearance-only distribution shift.  Applied at render time; never touches
// labels.  Stages run in a fixed order: palette swaps -> hue rotation ->
// per-channel gain/bias -> additive noise -> clamp to [0,1].
struct ShiftSpec {
  double hue = 0.0;                       // rotation about the gray axis, radians
  double noise = 0.0;                     // extra uniform noise amplitude
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
  std::vector<std::pair<int, int>> palette_swaps;

  bool is_identity() const;
};

// Parses "hue:0.5,noise:0.05,gain:1,0.9,1.1,bias:0,0,0.1,swap:1-2".
ShiftSpec parse_shift(const std::string& text);
std::string shift_to_string(const ShiftSpec& s);

struct GenConfig {
  int n = 100;
  int h = 32, w = 32;
  int k = 3;
  uint64_t layout_seed = 1;
  ShiftSpec shift;
  Domain domain = Domain::Source;
  bool store_labels = true;
  std::vector<uint8_t> navigable;  // defaults to alternating 1,0,1,... when empty
};

// Deterministic generator: sample i depends only on (layout_seed, i, shift),
// so growing n keeps existing samples bitwise identical.
Dataset generate_dataset(const GenConfig& cfg);

// Shared class palette (base colors before shift) used by the generator and
// the world renderer.  Index k (one past the last terrain class) is the sky.
std::array<float, 3> class_color(int cls);
std::array<float, 3> sky_color();

// Renders one label map to an image with textures, blur and shift, using the
// given per-sample seed.  Exposed so the simulator can share the exact
// appearance pipeline.  When sky_class >= 0, pixels of that class use the sky
// color instead of the terrain palette (the simulator labels above-horizon
// pixels with one class past the last terrain class).
Tensor render_label_map(const ClassMap& label, uint64_t sample_seed, const ShiftSpec& shift,
                        int sky_class = -1);

// ---------------------------------------------------------------------------
// Label remapping
// ---------------------------------------------------------------------------

// table[old_class] = new_class; every map value must index into table and all
// table entries must be < k_new.
ClassMap remap_labels(const ClassMap& labels, const std::vector<int>& table, int k_new);

// One-hot [K,H,W] float expansion; class ids must be < k.
Tensor one_hot(const ClassMap& labels, int k);

// ---------------------------------------------------------------------------
// Dataset directory I/O
//
// A dataset directory holds manifest.txt (key=value lines) plus one TensorPack
// per sample with entries "image" (f32 [3,H,W]) and optionally "label"
// (u8 [H,W]).
// ---------------------------------------------------------------------------

void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace cali
