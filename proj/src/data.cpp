#include "cali/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace cali {

// ---------------------------------------------------------------------------
// TensorPack
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'T', 'E', 'N'};
constexpr uint8_t kVersion = 1;
constexpr int kMaxRank = 16;
constexpr int64_t kMaxNumel = int64_t(1) << 31;

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::vector<uint8_t>& bytes;
  size_t off = 0;

  void need(size_t n, const char* what) const {
    if (off + n > bytes.size())
      throw FormatError(std::string("tensor pack truncated reading ") + what + " at byte " +
                        std::to_string(off));
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[off++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes[off] | (bytes[off + 1] << 8));
    off += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  const uint8_t* raw(size_t n, const char* what) {
    need(n, what);
    const uint8_t* p = bytes.data() + off;
    off += n;
    return p;
  }
};

}  // namespace

int64_t PackEntry::numel() const {
  int64_t n = 1;
  for (uint32_t d : dims) n *= static_cast<int64_t>(d);
  return n;
}

size_t PackEntry::elem_size() const {
  switch (dtype) {
    case PackDtype::F32:
      return 4;
    case PackDtype::U8:
      return 1;
    case PackDtype::I32:
      return 4;
  }
  throw FormatError("tensor pack entry has unknown dtype");
}

void TensorPack::add_raw(const std::string& name, PackDtype dtype, const std::vector<int>& shape,
                         const void* data, size_t elem_size) {
  if (name.empty() || name.size() > 0xffff) throw UsageError("tensor pack entry name invalid");
  if (has(name)) throw UsageError("tensor pack already contains entry '" + name + "'");
  PackEntry e;
  e.name = name;
  e.dtype = dtype;
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor pack entry '" + name + "' has non-positive dim");
    e.dims.push_back(static_cast<uint32_t>(d));
    n *= d;
  }
  if (static_cast<int>(e.dims.size()) > kMaxRank) throw DimensionError("tensor pack entry rank too large");
  e.payload.resize(static_cast<size_t>(n) * elem_size);
  std::memcpy(e.payload.data(), data, e.payload.size());
  entries_.push_back(std::move(e));
}

void TensorPack::add_f32(const std::string& name, const std::vector<int>& shape,
                         const std::vector<float>& data) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw DimensionError("tensor pack entry '" + name + "': data size does not match shape");
  add_raw(name, PackDtype::F32, shape, data.data(), 4);
}

void TensorPack::add_u8(const std::string& name, const std::vector<int>& shape,
                        const std::vector<uint8_t>& data) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw DimensionError("tensor pack entry '" + name + "': data size does not match shape");
  add_raw(name, PackDtype::U8, shape, data.data(), 1);
}

void TensorPack::add_i32(const std::string& name, const std::vector<int>& shape,
                         const std::vector<int32_t>& data) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw DimensionError("tensor pack entry '" + name + "': data size does not match shape");
  add_raw(name, PackDtype::I32, shape, data.data(), 4);
}

bool TensorPack::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const PackEntry& TensorPack::entry(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw Error("tensor pack has no entry '" + name + "'");
}

std::vector<float> TensorPack::get_f32(const std::string& name) const {
  const PackEntry& e = entry(name);
  if (e.dtype != PackDtype::F32) throw FormatError("entry '" + name + "' is not f32");
  std::vector<float> out(static_cast<size_t>(e.numel()));
  std::memcpy(out.data(), e.payload.data(), e.payload.size());
  return out;
}

std::vector<uint8_t> TensorPack::get_u8(const std::string& name) const {
  const PackEntry& e = entry(name);
  if (e.dtype != PackDtype::U8) throw FormatError("entry '" + name + "' is not u8");
  return e.payload;
}

std::vector<int32_t> TensorPack::get_i32(const std::string& name) const {
  const PackEntry& e = entry(name);
  if (e.dtype != PackDtype::I32) throw FormatError("entry '" + name + "' is not i32");
  std::vector<int32_t> out(static_cast<size_t>(e.numel()));
  std::memcpy(out.data(), e.payload.data(), e.payload.size());
  return out;
}

std::vector<int> TensorPack::shape_of(const std::string& name) const {
  const PackEntry& e = entry(name);
  std::vector<int> s;
  for (uint32_t d : e.dims) s.push_back(static_cast<int>(d));
  return s;
}

std::vector<uint8_t> TensorPack::serialize() const {
  std::vector<uint8_t> b;
  b.insert(b.end(), kMagic, kMagic + 4);
  b.push_back(kVersion);
  put_u32(b, static_cast<uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    put_u16(b, static_cast<uint16_t>(e.name.size()));
    b.insert(b.end(), e.name.begin(), e.name.end());
    b.push_back(static_cast<uint8_t>(e.dtype));
    b.push_back(static_cast<uint8_t>(e.dims.size()));
    for (uint32_t d : e.dims) put_u32(b, d);
    b.insert(b.end(), e.payload.begin(), e.payload.end());
    put_u32(b, crc32(e.payload.data(), e.payload.size()));
  }
  return b;
}

void TensorPack::save(const std::string& path) const { write_file_bytes(path, serialize()); }

TensorPack TensorPack::parse(const std::vector<uint8_t>& bytes) {
  Cursor c{bytes};
  c.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("tensor pack has bad magic at byte 0");
  c.off = 4;
  uint8_t version = c.u8("version");
  if (version != kVersion)
    throw FormatError("tensor pack has unsupported version " + std::to_string(version) +
                      " at byte 4");
  uint32_t count = c.u32("entry count");

  TensorPack pack;
  for (uint32_t i = 0; i < count; ++i) {
    PackEntry e;
    uint16_t name_len = c.u16("name length");
    const uint8_t* name_p = c.raw(name_len, "name");
    e.name.assign(reinterpret_cast<const char*>(name_p), name_len);

    size_t dtype_off = c.off;
    uint8_t dtype = c.u8("dtype");
    if (dtype < 1 || dtype > 3)
      throw FormatError("tensor pack entry '" + e.name + "' has unknown dtype " +
                        std::to_string(dtype) + " at byte " + std::to_string(dtype_off));
    e.dtype = static_cast<PackDtype>(dtype);

    size_t rank_off = c.off;
    uint8_t rank = c.u8("rank");
    if (rank > kMaxRank)
      throw FormatError("tensor pack entry '" + e.name + "' has rank " + std::to_string(rank) +
                        " at byte " + std::to_string(rank_off));
    int64_t numel = 1;
    for (uint8_t d = 0; d < rank; ++d) {
      uint32_t dim = c.u32("dim");
      if (dim == 0)
        throw FormatError("tensor pack entry '" + e.name + "' has zero dim at byte " +
                          std::to_string(c.off - 4));
      e.dims.push_back(dim);
      numel *= dim;
      if (numel > kMaxNumel)
        throw FormatError("tensor pack entry '" + e.name + "' is implausibly large at byte " +
                          std::to_string(c.off - 4));
    }
    size_t payload_bytes = static_cast<size_t>(numel) * e.elem_size();
    size_t payload_off = c.off;
    const uint8_t* p = c.raw(payload_bytes, "payload");
    e.payload.assign(p, p + payload_bytes);
    size_t crc_off = c.off;
    uint32_t want_crc = c.u32("checksum");
    uint32_t got_crc = crc32(e.payload.data(), e.payload.size());
    if (want_crc != got_crc)
      throw FormatError("tensor pack entry '" + e.name + "' failed checksum (payload at byte " +
                        std::to_string(payload_off) + ", checksum at byte " +
                        std::to_string(crc_off) + ")");
    if (pack.has(e.name))
      throw FormatError("tensor pack has duplicate entry '" + e.name + "'");
    pack.entries_.push_back(std::move(e));
  }
  if (c.off != bytes.size())
    throw FormatError("tensor pack has " + std::to_string(bytes.size() - c.off) +
                      " trailing bytes at byte " + std::to_string(c.off));
  return pack;
}

TensorPack TensorPack::load(const std::string& path) { return parse(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Shifts
// ---------------------------------------------------------------------------

bool ShiftSpec::is_identity() const {
  return hue == 0.0 && noise == 0.0 && gain == std::array<double, 3>{1.0, 1.0, 1.0} &&
         bias == std::array<double, 3>{0.0, 0.0, 0.0} && palette_swaps.empty();
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_num(const std::string& s, const std::string& ctx) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("shift spec: bad number '" + s + "' in " + ctx);
  }
}

}  // namespace

ShiftSpec parse_shift(const std::string& text) {
  ShiftSpec spec;
  if (text.empty() || text == "none") return spec;
  for (const std::string& tok : split(text, ',')) {
    if (tok.empty()) continue;
    size_t colon = tok.find(':');
    if (colon == std::string::npos)
      throw ValidationError("shift spec: token '" + tok + "' is not key:value");
    std::string key = tok.substr(0, colon);
    std::string val = tok.substr(colon + 1);
    if (key == "hue") {
      spec.hue = parse_num(val, "hue");
    } else if (key == "noise") {
      spec.noise = parse_num(val, "noise");
      if (spec.noise < 0) throw ValidationError("shift spec: noise must be >= 0");
    } else if (key == "gain" || key == "bias") {
      auto parts = split(val, '/');
      if (parts.size() != 3)
        throw ValidationError("shift spec: " + key + " needs 3 values separated by '/'");
      for (int i = 0; i < 3; ++i) {
        double v = parse_num(parts[static_cast<size_t>(i)], key);
        if (key == "gain")
          spec.gain[static_cast<size_t>(i)] = v;
        else
          spec.bias[static_cast<size_t>(i)] = v;
      }
    } else if (key == "swap") {
      auto parts = split(val, '-');
      if (parts.size() != 2) throw ValidationError("shift spec: swap needs a-b");
      int a = static_cast<int>(parse_num(parts[0], "swap"));
      int b = static_cast<int>(parse_num(parts[1], "swap"));
      if (a < 0 || b < 0) throw ValidationError("shift spec: swap classes must be >= 0");
      spec.palette_swaps.emplace_back(a, b);
    } else {
      throw ValidationError("shift spec: unknown key '" + key + "'");
    }
  }
  return spec;
}

std::string shift_to_string(const ShiftSpec& s) {
  if (s.is_identity()) return "none";
  std::ostringstream out;
  bool first = true;
  auto sep = [&]() {
    if (!first) out << ",";
    first = false;
  };
  if (s.hue != 0.0) {
    sep();
    out << "hue:" << format_g6(s.hue);
  }
  if (s.noise != 0.0) {
    sep();
    out << "noise:" << format_g6(s.noise);
  }
  if (s.gain != std::array<double, 3>{1.0, 1.0, 1.0}) {
    sep();
    out << "gain:" << format_g6(s.gain[0]) << "/" << format_g6(s.gain[1]) << "/" << format_g6(s.gain[2]);
  }
  if (s.bias != std::array<double, 3>{0.0, 0.0, 0.0}) {
    sep();
    out << "bias:" << format_g6(s.bias[0]) << "/" << format_g6(s.bias[1]) << "/" << format_g6(s.bias[2]);
  }
  for (auto [a, b] : s.palette_swaps) {
    sep();
    out << "swap:" << a << "-" << b;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Palette and rendering
// ---------------------------------------------------------------------------

std::array<float, 3> class_color(int cls) {
  static const std::array<std::array<float, 3>, 8> kPalette = {{
      {0.20f, 0.55f, 0.20f},  // 0 grass
      {0.50f, 0.12f, 0.12f},  // 1 brick
      {0.72f, 0.65f, 0.20f},  // 2 sand
      {0.15f, 0.25f, 0.60f},  // 3 water
      {0.55f, 0.55f, 0.55f},  // 4 pavement
      {0.80f, 0.35f, 0.10f},  // 5 clay
      {0.35f, 0.20f, 0.50f},  // 6 heather
      {0.10f, 0.60f, 0.60f},  // 7 moss
  }};
  if (cls < 0) throw ValidationError("class_color: negative class");
  return kPalette[static_cast<size_t>(cls) % kPalette.size()];
}

std::array<float, 3> sky_color() { return {0.58f, 0.76f, 0.93f}; }

namespace {

// Smooth value-noise field: coarse random grid, bilinear interpolation.
struct NoiseField {
  int grid = 4;
  std::vector<double> values;  // (grid+1)^2

  NoiseField(Rng& rng, int g = 4) : grid(g), values(static_cast<size_t>((g + 1) * (g + 1))) {
    for (auto& v : values) v = rng.uniform(-1.0, 1.0);
  }

  double at(double fy, double fx) const {  // fy, fx in [0,1]
    double gy = fy * grid, gx = fx * grid;
    int y0 = std::min(static_cast<int>(gy), grid - 1);
    int x0 = std::min(static_cast<int>(gx), grid - 1);
    double ty = gy - y0, tx = gx - x0;
    auto v = [&](int y, int x) { return values[static_cast<size_t>(y * (grid + 1) + x)]; };
    double top = v(y0, x0) * (1 - tx) + v(y0, x0 + 1) * tx;
    double bot = v(y0 + 1, x0) * (1 - tx) + v(y0 + 1, x0 + 1) * tx;
    return top * (1 - ty) + bot * ty;
  }
};

struct HueMatrix {
  double m[3][3];

  explicit HueMatrix(double theta) {
    // Rodrigues rotation about the gray axis (1,1,1)/sqrt(3).
    double c = std::cos(theta), s = std::sin(theta);
    double one_c = (1.0 - c) / 3.0;
    double ss = s / std::sqrt(3.0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = one_c + (i == j ? c : 0.0);
    m[0][1] -= ss;
    m[0][2] += ss;
    m[1][0] += ss;
    m[1][2] -= ss;
    m[2][0] -= ss;
    m[2][1] += ss;
  }
};

}  // namespace

Tensor render_label_map(const ClassMap& label, uint64_t sample_seed, const ShiftSpec& shift,
                        int sky_class) {
  const int h = label.rows, w = label.cols;
  if (h <= 0 || w <= 0) throw DimensionError("render_label_map: empty label map");

  // Palette with shift swaps applied.
  int max_cls = 0;
  for (uint8_t c : label.cells) max_cls = std::max(max_cls, static_cast<int>(c));
  std::vector<std::array<float, 3>> pal(static_cast<size_t>(max_cls) + 1);
  for (int c = 0; c <= max_cls; ++c) pal[static_cast<size_t>(c)] = class_color(c);
  for (auto [a, b] : shift.palette_swaps) {
    if (a > max_cls || b > max_cls) continue;  // swap of classes absent from this map is a no-op
    std::swap(pal[static_cast<size_t>(a)], pal[static_cast<size_t>(b)]);
  }
  // The sky index sits outside the terrain palette and is exempt from swaps;
  // every later stage (texture, blur, shift) treats it like any other class so
  // the RNG stream is identical with or without sky pixels.
  if (sky_class >= 0 && sky_class <= max_cls) pal[static_cast<size_t>(sky_class)] = sky_color();

  Rng texture_rng(derive_seed(sample_seed, 2));
  NoiseField field(texture_rng);

  std::vector<float> img(3u * h * w);
  auto px = [&](int c, int y, int x) -> float& {
    return img[(static_cast<size_t>(c) * h + y) * w + x];
  };

  // Base colors with smooth brightness texture plus fine grain.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto& base = pal[label.at(y, x)];
      double tex = 1.0 + 0.22 * field.at((y + 0.5) / h, (x + 0.5) / w);
      for (int c = 0; c < 3; ++c) {
        double grain = 0.02 * texture_rng.uniform(-1.0, 1.0);
        px(c, y, x) = static_cast<float>(base[static_cast<size_t>(c)] * tex + grain);
      }
    }
  }

  // One 3x3 box-blur pass softens class boundaries (labels stay crisp).
  std::vector<float> blurred(img.size());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += px(c, yy, xx);
            ++cnt;
          }
        }
        blurred[(static_cast<size_t>(c) * h + y) * w + x] = static_cast<float>(acc / cnt);
      }
    }
  }
  img.swap(blurred);

  // Appearance shift: hue rotation, per-channel affine, additive noise, clamp.
  const bool do_hue = shift.hue != 0.0;
  HueMatrix hue(shift.hue);
  Rng noise_rng(derive_seed(sample_seed, 3));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v[3];
      for (int c = 0; c < 3; ++c) v[c] = px(c, y, x);
      if (do_hue) {
        double r[3];
        for (int i = 0; i < 3; ++i)
          r[i] = hue.m[i][0] * v[0] + hue.m[i][1] * v[1] + hue.m[i][2] * v[2];
        for (int i = 0; i < 3; ++i) v[i] = r[i];
      }
      for (int c = 0; c < 3; ++c) {
        v[c] = v[c] * shift.gain[static_cast<size_t>(c)] + shift.bias[static_cast<size_t>(c)];
        if (shift.noise > 0.0) v[c] += noise_rng.uniform(-shift.noise, shift.noise);
        px(c, y, x) = static_cast<float>(std::clamp(v[c], 0.0, 1.0));
      }
    }
  }

  return Tensor::from_data({3, h, w}, std::move(img));
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace {

ClassMap generate_label_map(int h, int w, int k, Rng& rng) {
  ClassMap label(h, w, 0);
  int blobs = rng.uniform_int(3, 6);
  for (int bi = 0; bi < blobs; ++bi) {
    int cls = rng.uniform_int(0, k - 1);
    double cy = rng.uniform(0.0, h);
    double cx = rng.uniform(0.0, w);
    double ry = rng.uniform(0.12 * h, 0.34 * h);
    double rx = rng.uniform(0.12 * w, 0.34 * w);
    double phi = rng.uniform(0.0, M_PI);
    double cphi = std::cos(phi), sphi = std::sin(phi);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        double u = (dx * cphi + dy * sphi) / rx;
        double v = (-dx * sphi + dy * cphi) / ry;
        if (u * u + v * v <= 1.0) label.at(y, x) = static_cast<uint8_t>(cls);
      }
    }
  }
  return label;
}

std::vector<uint8_t> default_navigable(int k) {
  std::vector<uint8_t> nav(static_cast<size_t>(k));
  for (int c = 0; c < k; ++c) nav[static_cast<size_t>(c)] = (c % 2 == 0) ? 1 : 0;
  return nav;
}

}  // namespace

Dataset generate_dataset(const GenConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("generate_dataset: n must be >= 1");
  if (cfg.h < 8 || cfg.w < 8) throw ConfigError("generate_dataset: image size must be >= 8");
  if (cfg.k < 2 || cfg.k > 8) throw ConfigError("generate_dataset: k must be in [2,8]");
  for (auto [a, b] : cfg.shift.palette_swaps)
    if (a >= cfg.k || b >= cfg.k)
      throw ValidationError("generate_dataset: shift swaps class outside [0,k)");

  Dataset ds;
  ds.n = cfg.n;
  ds.h = cfg.h;
  ds.w = cfg.w;
  ds.k = cfg.k;
  ds.domain = cfg.domain;
  ds.labeled = cfg.store_labels;
  ds.navigable = cfg.navigable.empty() ? default_navigable(cfg.k) : cfg.navigable;
  if (static_cast<int>(ds.navigable.size()) != cfg.k)
    throw ConfigError("generate_dataset: navigable table size must equal k");

  ds.samples.reserve(static_cast<size_t>(cfg.n));
  for (int i = 0; i < cfg.n; ++i) {
    uint64_t sample_seed = derive_seed(cfg.layout_seed, static_cast<uint64_t>(i));
    Rng layout_rng(derive_seed(sample_seed, 1));
    SegSample s;
    ClassMap label = generate_label_map(cfg.h, cfg.w, cfg.k, layout_rng);
    s.image = render_label_map(label, sample_seed, cfg.shift);
    if (cfg.store_labels) {
      s.label = std::move(label);
      s.has_label = true;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Label remapping / one-hot
// ---------------------------------------------------------------------------

ClassMap remap_labels(const ClassMap& labels, const std::vector<int>& table, int k_new) {
  if (k_new < 1) throw ConfigError("remap_labels: k_new must be >= 1");
  for (int v : table)
    if (v < 0 || v >= k_new)
      throw ValidationError("remap_labels: table entry " + std::to_string(v) +
                            " outside [0," + std::to_string(k_new) + ")");
  ClassMap out(labels.rows, labels.cols);
  for (size_t i = 0; i < labels.cells.size(); ++i) {
    uint8_t v = labels.cells[i];
    if (v >= table.size())
      throw ValidationError("remap_labels: class id " + std::to_string(v) +
                            " has no table entry (table covers " + std::to_string(table.size()) +
                            " classes)");
    out.cells[i] = static_cast<uint8_t>(table[v]);
  }
  return out;
}

Tensor one_hot(const ClassMap& labels, int k) {
  if (k < 1) throw ConfigError("one_hot: k must be >= 1");
  const int h = labels.rows, w = labels.cols;
  std::vector<float> data(static_cast<size_t>(k) * h * w, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      uint8_t c = labels.at(y, x);
      if (c >= k)
        throw ValidationError("one_hot: class id " + std::to_string(c) + " at pixel (" +
                              std::to_string(y) + "," + std::to_string(x) + ") exceeds k=" +
                              std::to_string(k));
      data[(static_cast<size_t>(c) * h + y) * w + x] = 1.0f;
    }
  }
  return Tensor::from_data({k, h, w}, std::move(data));
}

// ---------------------------------------------------------------------------
// Dataset directory I/O
// ---------------------------------------------------------------------------

namespace {

std::string sample_file_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d.ct", i);
  return buf;
}

std::string join_navigable(const std::vector<uint8_t>& nav) {
  std::string s;
  for (size_t i = 0; i < nav.size(); ++i) {
    if (i) s += ",";
    s += nav[i] ? "1" : "0";
  }
  return s;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "n=" << ds.n << "\n";
  manifest << "h=" << ds.h << "\n";
  manifest << "w=" << ds.w << "\n";
  manifest << "k=" << ds.k << "\n";
  manifest << "domain=" << (ds.domain == Domain::Source ? "source" : "target") << "\n";
  manifest << "labeled=" << (ds.labeled ? 1 : 0) << "\n";
  manifest << "navigable=" << join_navigable(ds.navigable) << "\n";
  for (int i = 0; i < ds.n; ++i) {
    manifest << "sample_" << i << "=" << sample_file_name(i) << "\n";
    const SegSample& s = ds.samples[static_cast<size_t>(i)];
    TensorPack pack;
    pack.add_f32("image", {3, ds.h, ds.w}, s.image.data());
    if (s.has_label) pack.add_u8("label", {ds.h, ds.w}, s.label.cells);
    pack.save((fs::path(dir) / sample_file_name(i)).string());
  }
  write_text_file((fs::path(dir) / "manifest.txt").string(), manifest.str());
}

Dataset load_dataset(const std::string& dir) {
  fs::path root(dir);
  std::string manifest = read_text_file((root / "manifest.txt").string());

  std::map<std::string, std::string> kv;
  std::istringstream lines(manifest);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError("dataset manifest line " + std::to_string(line_no) + " is not key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("dataset manifest missing key '" + key + "'");
    return it->second;
  };

  Dataset ds;
  ds.n = std::stoi(need("n"));
  ds.h = std::stoi(need("h"));
  ds.w = std::stoi(need("w"));
  ds.k = std::stoi(need("k"));
  std::string domain = need("domain");
  if (domain == "source")
    ds.domain = Domain::Source;
  else if (domain == "target")
    ds.domain = Domain::Target;
  else
    throw FormatError("dataset manifest has unknown domain '" + domain + "'");
  ds.labeled = need("labeled") == "1";
  for (const std::string& tok : split(need("navigable"), ','))
    ds.navigable.push_back(tok == "1" ? 1 : 0);
  if (static_cast<int>(ds.navigable.size()) != ds.k)
    throw FormatError("dataset manifest navigable table size does not match k");
  if (ds.n < 1) throw FormatError("dataset manifest has n < 1");

  ds.samples.reserve(static_cast<size_t>(ds.n));
  for (int i = 0; i < ds.n; ++i) {
    std::string file = need("sample_" + std::to_string(i));
    TensorPack pack = TensorPack::load((root / file).string());
    SegSample s;
    std::vector<int> ishape = pack.shape_of("image");
    if (ishape != std::vector<int>{3, ds.h, ds.w})
      throw ValidationError("dataset sample " + std::to_string(i) + " image shape " +
                            shape_str(ishape) + " does not match manifest");
    s.image = Tensor::from_data(ishape, pack.get_f32("image"));
    if (pack.has("label")) {
      std::vector<int> lshape = pack.shape_of("label");
      if (lshape != std::vector<int>{ds.h, ds.w})
        throw ValidationError("dataset sample " + std::to_string(i) + " label shape mismatch");
      s.label.rows = ds.h;
      s.label.cols = ds.w;
      s.label.cells = pack.get_u8("label");
      for (uint8_t c : s.label.cells)
        if (c >= ds.k)
          throw ValidationError("dataset sample " + std::to_string(i) + " has class id " +
                                std::to_string(c) + " >= k");
      s.has_label = true;
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace cali
