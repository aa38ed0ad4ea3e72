#include "cali/models.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace cali {

namespace {

// Discriminator layers use 'same-halving' padding; when the incoming grid is
// too small for the configured kernel the layer degrades to a 1x1 channel
// mixer so deep stacks stay well-defined on coarse feature maps.
struct LayerPlan {
  int kernel, stride, pad, out_h, out_w;
};

LayerPlan plan_disc_layer(int h, int w, int kernel, int stride) {
  int pad = std::max(0, (kernel - stride) / 2);
  int oh = (h + 2 * pad - kernel) / stride + 1;
  int ow = (w + 2 * pad - kernel) / stride + 1;
  if (h + 2 * pad < kernel || w + 2 * pad < kernel || oh < 1 || ow < 1)
    return {1, 1, 0, h, w};
  return {kernel, stride, pad, oh, ow};
}

Tensor init_kernel(int out_c, int in_c, int k, Rng& rng) {
  double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * k * k));
  std::vector<float> data(static_cast<size_t>(out_c) * in_c * k * k);
  for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from_data({out_c, in_c, k, k}, std::move(data), true);
}

ConvLayer make_layer(int in_c, int out_c, int kernel, int stride, int pad, Rng& rng) {
  ConvLayer layer;
  layer.w = init_kernel(out_c, in_c, kernel, rng);
  layer.b = Tensor::zeros({out_c}, true);
  layer.kernel = kernel;
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

void validate_ext(const ExtractorCfg& ext) {
  if (ext.in_channels < 1) throw ConfigError("extractor: in_channels must be >= 1");
  if (ext.channels.empty()) throw ConfigError("extractor: channel list is empty");
  for (int c : ext.channels)
    if (c < 1) throw ConfigError("extractor: channels must be >= 1");
  if (ext.strides.size() != ext.channels.size())
    throw ConfigError("extractor: strides list must match channels list");
  for (int s : ext.strides)
    if (s < 1) throw ConfigError("extractor: strides must be >= 1");
  if (ext.kernel < 1 || ext.kernel % 2 == 0)
    throw ConfigError("extractor: kernel must be odd and >= 1");
  if (ext.input_h < 1 || ext.input_w < 1) throw ConfigError("extractor: input size must be >= 1");
}

void validate_cls(const ClassifierCfg& cls) {
  if (cls.hidden < 1) throw ConfigError("classifier: hidden channels must be >= 1");
  if (cls.num_classes < 2) throw ConfigError("classifier: num_classes must be >= 2");
  if (cls.kernel < 1 || cls.kernel % 2 == 0)
    throw ConfigError("classifier: kernel must be odd and >= 1");
}

void validate_disc(const DiscriminatorCfg& disc) {
  if (disc.channels.empty()) throw ConfigError("discriminator: channel list is empty");
  for (int c : disc.channels)
    if (c < 1) throw ConfigError("discriminator: channels must be >= 1");
  if (disc.channels.back() != 1)
    throw ConfigError("discriminator: final layer must have 1 output channel");
  if (disc.kernel < 1) throw ConfigError("discriminator: kernel must be >= 1");
  if (disc.stride < 1) throw ConfigError("discriminator: stride must be >= 1");
}

std::vector<NamedParam> layer_params(const std::string& prefix, const ConvLayer& layer) {
  return {{prefix + ".w", layer.w}, {prefix + ".b", layer.b}};
}

void append(std::vector<NamedParam>& out, std::vector<NamedParam> more) {
  for (auto& p : more) out.push_back(std::move(p));
}

}  // namespace

std::vector<NamedParam> CaliModel::g_params() const {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < g_layers.size(); ++i)
    append(out, layer_params("G.conv" + std::to_string(i), g_layers[i]));
  return out;
}

std::vector<NamedParam> CaliModel::c_params(Head head) const {
  std::string tag = head == Head::C1 ? "C1" : "C2";
  const ConvLayer& hidden = head == Head::C1 ? c1_hidden : c2_hidden;
  const ConvLayer& top = head == Head::C1 ? c1_head : c2_head;
  std::vector<NamedParam> out;
  append(out, layer_params(tag + ".hidden", hidden));
  append(out, layer_params(tag + ".head", top));
  return out;
}

std::vector<NamedParam> CaliModel::c_weights(Head head) const {
  std::string tag = head == Head::C1 ? "C1" : "C2";
  const ConvLayer& hidden = head == Head::C1 ? c1_hidden : c2_hidden;
  const ConvLayer& top = head == Head::C1 ? c1_head : c2_head;
  return {{tag + ".hidden.w", hidden.w}, {tag + ".head.w", top.w}};
}

std::vector<NamedParam> CaliModel::d_params() const {
  std::vector<NamedParam> out;
  for (size_t i = 0; i < d_layers.size(); ++i)
    append(out, layer_params("D.conv" + std::to_string(i), d_layers[i]));
  return out;
}

std::vector<NamedParam> CaliModel::all_params() const {
  std::vector<NamedParam> out = g_params();
  append(out, c_params(Head::C1));
  append(out, c_params(Head::C2));
  append(out, d_params());
  return out;
}

CaliModel build_model(const ExtractorCfg& ext, const ClassifierCfg& cls,
                      const DiscriminatorCfg& disc, uint64_t seed) {
  validate_ext(ext);
  validate_cls(cls);
  validate_disc(disc);

  CaliModel m;
  m.ext_cfg = ext;
  m.cls_cfg = cls;
  m.disc_cfg = disc;

  // Extractor stages; 'same' padding so spatial arithmetic is h -> ceil(h/s).
  int pad = ext.kernel / 2;
  int h = ext.input_h, w = ext.input_w, in_c = ext.in_channels;
  Rng g_rng(derive_seed(seed, 1));
  for (size_t i = 0; i < ext.channels.size(); ++i) {
    int stride = ext.strides[i];
    m.g_layers.push_back(make_layer(in_c, ext.channels[i], ext.kernel, stride, pad, g_rng));
    h = (h + 2 * pad - ext.kernel) / stride + 1;
    w = (w + 2 * pad - ext.kernel) / stride + 1;
    if (h < 1 || w < 1)
      throw ConfigError("extractor: stage " + std::to_string(i) +
                        " collapses the input below 1x1");
    in_c = ext.channels[i];
  }
  m.feat_c = in_c;
  m.feat_h = h;
  m.feat_w = w;

  // Upsampling factor must restore the configured input size exactly.
  if (m.feat_h == 0 || ext.input_h % m.feat_h != 0 || ext.input_w % m.feat_w != 0 ||
      ext.input_h / m.feat_h != ext.input_w / m.feat_w)
    throw ConfigError("classifier: extractor output " + std::to_string(m.feat_h) + "x" +
                      std::to_string(m.feat_w) + " cannot be upsampled to " +
                      std::to_string(ext.input_h) + "x" + std::to_string(ext.input_w));
  int factor = ext.input_h / m.feat_h;
  if (cls.upsample != 0 && cls.upsample != factor)
    throw ConfigError("classifier: configured upsample " + std::to_string(cls.upsample) +
                      " conflicts with derived factor " + std::to_string(factor));
  m.upsample = factor;
  m.cls_cfg.upsample = factor;

  int cpad = cls.kernel / 2;
  Rng c1_rng(derive_seed(seed, 2));
  m.c1_hidden = make_layer(m.feat_c, cls.hidden, cls.kernel, 1, cpad, c1_rng);
  m.c1_head = make_layer(cls.hidden, cls.num_classes, 1, 1, 0, c1_rng);
  Rng c2_rng(derive_seed(seed, 3));
  m.c2_hidden = make_layer(m.feat_c, cls.hidden, cls.kernel, 1, cpad, c2_rng);
  m.c2_head = make_layer(cls.hidden, cls.num_classes, 1, 1, 0, c2_rng);

  Rng d_rng(derive_seed(seed, 4));
  int dh = m.feat_h, dw = m.feat_w, dc = m.feat_c;
  for (size_t i = 0; i < disc.channels.size(); ++i) {
    LayerPlan plan = plan_disc_layer(dh, dw, disc.kernel, disc.stride);
    m.d_layers.push_back(make_layer(dc, disc.channels[i], plan.kernel, plan.stride, plan.pad, d_rng));
    dh = plan.out_h;
    dw = plan.out_w;
    dc = disc.channels[i];
  }
  return m;
}

std::vector<std::pair<int, int>> discriminator_grid_sizes(const DiscriminatorCfg& cfg, int in_h,
                                                          int in_w) {
  validate_disc(cfg);
  std::vector<std::pair<int, int>> sizes;
  int h = in_h, w = in_w;
  for (size_t i = 0; i < cfg.channels.size(); ++i) {
    LayerPlan plan = plan_disc_layer(h, w, cfg.kernel, cfg.stride);
    h = plan.out_h;
    w = plan.out_w;
    sizes.emplace_back(h, w);
  }
  return sizes;
}

int64_t discriminator_param_count(const DiscriminatorCfg& cfg, int in_c, int in_h, int in_w) {
  validate_disc(cfg);
  int64_t total = 0;
  int h = in_h, w = in_w, c = in_c;
  for (size_t i = 0; i < cfg.channels.size(); ++i) {
    LayerPlan plan = plan_disc_layer(h, w, cfg.kernel, cfg.stride);
    int out_c = cfg.channels[i];
    total += static_cast<int64_t>(out_c) * c * plan.kernel * plan.kernel + out_c;
    h = plan.out_h;
    w = plan.out_w;
    c = out_c;
  }
  return total;
}

Tensor features(const CaliModel& m, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != m.ext_cfg.in_channels ||
      image.dim(1) != m.ext_cfg.input_h || image.dim(2) != m.ext_cfg.input_w)
    throw DimensionError("features: expected image [" + std::to_string(m.ext_cfg.in_channels) +
                         "x" + std::to_string(m.ext_cfg.input_h) + "x" +
                         std::to_string(m.ext_cfg.input_w) + "], got " + shape_str(image.shape()));
  Tensor x = image;
  for (const ConvLayer& layer : m.g_layers)
    x = leaky_relu(conv2d(x, layer.w, layer.b, layer.stride, layer.pad), m.ext_cfg.slope);
  return x;
}

Tensor classify(const CaliModel& m, Head head, const Tensor& f) {
  if (f.rank() != 3 || f.dim(0) != m.feat_c)
    throw DimensionError("classify: expected features with " + std::to_string(m.feat_c) +
                         " channels, got " + shape_str(f.shape()));
  const ConvLayer& hidden = head == Head::C1 ? m.c1_hidden : m.c2_hidden;
  const ConvLayer& top = head == Head::C1 ? m.c1_head : m.c2_head;
  Tensor x = leaky_relu(conv2d(f, hidden.w, hidden.b, hidden.stride, hidden.pad), m.cls_cfg.slope);
  x = upsample_nearest(x, m.upsample);
  x = conv2d(x, top.w, top.b, top.stride, top.pad);
  return softmax(x, 0);
}

Tensor discriminate(const CaliModel& m, const Tensor& f) {
  if (f.rank() != 3 || f.dim(0) != m.feat_c)
    throw DimensionError("discriminate: expected features with " + std::to_string(m.feat_c) +
                         " channels, got " + shape_str(f.shape()));
  Tensor x = f;
  for (size_t i = 0; i < m.d_layers.size(); ++i) {
    const ConvLayer& layer = m.d_layers[i];
    x = conv2d(x, layer.w, layer.b, layer.stride, layer.pad);
    if (i + 1 < m.d_layers.size()) x = leaky_relu(x, m.disc_cfg.slope);
  }
  return sigmoid(x);
}

std::pair<Tensor, Tensor> predict_probs(const CaliModel& m, const Tensor& image) {
  Tensor f = features(m, image);
  return {classify(m, Head::C1, f), classify(m, Head::C2, f)};
}

ClassMap predict_classes(const CaliModel& m, const Tensor& image) {
  auto [p1, p2] = predict_probs(m, image);
  return argmax_channel(scale_add(add(p1, p2), 0.5f, 0.0f));
}

std::vector<double> pooled_features(const CaliModel& m, const Tensor& image) {
  Tensor f = features(m, image);
  std::vector<double> pooled(static_cast<size_t>(m.feat_c), 0.0);
  int64_t plane = static_cast<int64_t>(m.feat_h) * m.feat_w;
  for (int c = 0; c < m.feat_c; ++c) {
    double acc = 0.0;
    for (int64_t i = 0; i < plane; ++i) acc += f.data()[static_cast<size_t>(c * plane + i)];
    pooled[static_cast<size_t>(c)] = acc / static_cast<double>(plane);
  }
  return pooled;
}

int64_t param_count(const std::vector<NamedParam>& params) {
  int64_t total = 0;
  for (const NamedParam& p : params) total += p.tensor.size();
  return total;
}

uint64_t params_hash(const std::vector<NamedParam>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const NamedParam& p : params) {
    h = fnv1a(p.name.data(), p.name.size(), h);
    h = fnv1a(p.tensor.data().data(), p.tensor.data().size() * sizeof(float), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(std::stoi(cur));
  return out;
}

std::string config_text(const CaliModel& m) {
  std::ostringstream out;
  out << "ext.in_channels=" << m.ext_cfg.in_channels << "\n";
  out << "ext.channels=" << join_ints(m.ext_cfg.channels) << "\n";
  out << "ext.kernel=" << m.ext_cfg.kernel << "\n";
  out << "ext.strides=" << join_ints(m.ext_cfg.strides) << "\n";
  out << "ext.slope=" << format_g6(m.ext_cfg.slope) << "\n";
  out << "ext.input_h=" << m.ext_cfg.input_h << "\n";
  out << "ext.input_w=" << m.ext_cfg.input_w << "\n";
  out << "cls.hidden=" << m.cls_cfg.hidden << "\n";
  out << "cls.num_classes=" << m.cls_cfg.num_classes << "\n";
  out << "cls.kernel=" << m.cls_cfg.kernel << "\n";
  out << "cls.slope=" << format_g6(m.cls_cfg.slope) << "\n";
  out << "cls.upsample=" << m.cls_cfg.upsample << "\n";
  out << "disc.channels=" << join_ints(m.disc_cfg.channels) << "\n";
  out << "disc.kernel=" << m.disc_cfg.kernel << "\n";
  out << "disc.stride=" << m.disc_cfg.stride << "\n";
  out << "disc.slope=" << format_g6(m.disc_cfg.slope) << "\n";
  return out.str();
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint config line is not key=value: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

void save_checkpoint(const std::string& path, const CaliModel& m) {
  TensorPack pack;
  std::string cfg = config_text(m);
  std::vector<uint8_t> cfg_bytes(cfg.begin(), cfg.end());
  pack.add_u8("config", {static_cast<int>(cfg_bytes.size())}, cfg_bytes);
  for (const NamedParam& p : m.all_params())
    pack.add_f32(p.name, p.tensor.shape(), p.tensor.data());
  pack.save(path);
}

CaliModel load_checkpoint(const std::string& path) {
  TensorPack pack = TensorPack::load(path);
  std::vector<uint8_t> cfg_bytes = pack.get_u8("config");
  auto kv = parse_config_text(std::string(cfg_bytes.begin(), cfg_bytes.end()));
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("checkpoint config missing key '" + key + "'");
    return it->second;
  };

  ExtractorCfg ext;
  ext.in_channels = std::stoi(need("ext.in_channels"));
  ext.channels = parse_ints(need("ext.channels"));
  ext.kernel = std::stoi(need("ext.kernel"));
  ext.strides = parse_ints(need("ext.strides"));
  ext.slope = std::stof(need("ext.slope"));
  ext.input_h = std::stoi(need("ext.input_h"));
  ext.input_w = std::stoi(need("ext.input_w"));
  ClassifierCfg cls;
  cls.hidden = std::stoi(need("cls.hidden"));
  cls.num_classes = std::stoi(need("cls.num_classes"));
  cls.kernel = std::stoi(need("cls.kernel"));
  cls.slope = std::stof(need("cls.slope"));
  cls.upsample = std::stoi(need("cls.upsample"));
  DiscriminatorCfg disc;
  disc.channels = parse_ints(need("disc.channels"));
  disc.kernel = std::stoi(need("disc.kernel"));
  disc.stride = std::stoi(need("disc.stride"));
  disc.slope = std::stof(need("disc.slope"));

  CaliModel m = build_model(ext, cls, disc, /*seed=*/0);
  for (NamedParam& p : m.all_params()) {
    if (!pack.has(p.name)) throw FormatError("checkpoint missing parameter '" + p.name + "'");
    std::vector<int> shape = pack.shape_of(p.name);
    if (shape != p.tensor.shape())
      throw FormatError("checkpoint parameter '" + p.name + "' has shape " + shape_str(shape) +
                        ", model expects " + shape_str(p.tensor.shape()));
    p.tensor.data() = pack.get_f32(p.name);
  }
  return m;
}

}  // namespace cali
