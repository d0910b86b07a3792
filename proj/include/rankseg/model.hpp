#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankseg/nn_blocks.hpp"
#include "rankseg/rankseg_head.hpp"
#include "rankseg/synth_data.hpp"

namespace rankseg {

enum class Scheme { kJoint, kIndependent };

inline const char* scheme_name(Scheme s) {
  return s == Scheme::kJoint ? "joint" : "independent";
}
inline Scheme scheme_from_name(const std::string& s) {
  if (s == "joint") return Scheme::kJoint;
  if (s == "independent") return Scheme::kIndependent;
  throw std::invalid_argument("unknown scheme: " + s);
}

// Shape and wiring of one model (shared backbone plus optional heads).
struct ModelHyper {
  int64_t num_classes = 64;
  int64_t channels = 8;
  int64_t height = 32;
  int64_t width = 32;
  int64_t patch = 4;
  int64_t dim = 64;
  int64_t depth = 2;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  MultiLabelHeadVariant variant = MultiLabelHeadVariant::kTranEnc1;
  bool has_ml_head = true;
  bool has_seg_head = true;
  bool shared_tau = true;
  int64_t kappa_max = 64;
  int64_t downsample_factor = 2;
  bool score_original = false;

  int64_t mlp_hidden() const { return dim * mlp_ratio; }
  bool needs_category_embeddings() const {
    return has_seg_head || (has_ml_head && variant != MultiLabelHeadVariant::kGapLinear);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"num_classes", num_classes},
                          {"channels", channels},
                          {"height", height},
                          {"width", width},
                          {"patch", patch},
                          {"dim", dim},
                          {"depth", depth},
                          {"heads", heads},
                          {"mlp_ratio", mlp_ratio},
                          {"variant", head_variant_name(variant)},
                          {"has_ml_head", has_ml_head},
                          {"has_seg_head", has_seg_head},
                          {"shared_tau", shared_tau},
                          {"kappa_max", kappa_max},
                          {"downsample_factor", downsample_factor},
                          {"score_original", score_original}};
  }
  static ModelHyper from_json(const nlohmann::json& j) {
    ModelHyper h;
    h.num_classes = j.at("num_classes");
    h.channels = j.at("channels");
    h.height = j.at("height");
    h.width = j.at("width");
    h.patch = j.at("patch");
    h.dim = j.at("dim");
    h.depth = j.at("depth");
    h.heads = j.at("heads");
    h.mlp_ratio = j.at("mlp_ratio");
    h.variant = head_variant_from_name(j.at("variant"));
    h.has_ml_head = j.at("has_ml_head");
    h.has_seg_head = j.at("has_seg_head");
    h.shared_tau = j.at("shared_tau");
    h.kappa_max = j.at("kappa_max");
    h.downsample_factor = j.at("downsample_factor");
    h.score_original = j.at("score_original");
    return h;
  }
};

// One trainable model: tiny backbone plus the heads selected by the hyper.
template <typename T>
struct SegModelT {
  ModelHyper hyper;
  ParameterRegistryT<T> reg;
  PatchBackboneT<T> backbone;
  CategoryTableT<T> table;
  std::optional<MultiLabelHeadT<T>> ml_head;
  std::optional<EncoderLayerT<T>> psi1, psi2;
  std::optional<RankTemperaturesT<T>> temps;

  static SegModelT create(const ModelHyper& hyper, uint64_t init_seed) {
    SegModelT m;
    m.hyper = hyper;
    Rng rng(Rng::derive(init_seed, 0x10de1ull));
    m.backbone = PatchBackboneT<T>::create(m.reg, "backbone", hyper.channels, hyper.height,
                                           hyper.width, hyper.patch, hyper.dim, hyper.depth,
                                           hyper.heads, hyper.mlp_hidden(), ParamGroup::kBackbone,
                                           rng);
    m.table.num_classes = hyper.num_classes;
    m.table.dim = hyper.dim;
    if (hyper.needs_category_embeddings()) {
      m.table.w = m.reg.add("table.w", normal_init<T>(rng, {hyper.num_classes, hyper.dim}),
                            hyper.has_seg_head ? ParamGroup::kSegHead : ParamGroup::kMlHead);
    }
    if (hyper.has_ml_head) {
      m.table.h = m.reg.add("table.h", normal_init<T>(rng, {hyper.num_classes, hyper.dim}),
                            ParamGroup::kMlHead);
      m.table.bias = m.reg.add("table.bias", TensorT<T>::zeros({hyper.num_classes}),
                               ParamGroup::kMlHead);
      m.ml_head = MultiLabelHeadT<T>::create(m.reg, "ml_head", hyper.variant, hyper.dim,
                                             hyper.heads, hyper.mlp_hidden(), rng);
    }
    if (hyper.has_seg_head) {
      m.psi1 = EncoderLayerT<T>::create(m.reg, "psi1", hyper.dim, hyper.heads, hyper.mlp_hidden(),
                                        ParamGroup::kSegHead, rng);
      m.psi2 = EncoderLayerT<T>::create(m.reg, "psi2", hyper.dim, hyper.heads, hyper.mlp_hidden(),
                                        ParamGroup::kSegHead, rng);
      m.temps = RankTemperaturesT<T>::create(m.reg, "temps", hyper.kappa_max, hyper.shared_tau);
    }
    return m;
  }

  TensorT<T> image_tensor(const SyntheticSample& sample) const {
    std::vector<T> data(sample.image.begin(), sample.image.end());
    return TensorT<T>::from_data({hyper.channels, hyper.height, hyper.width}, std::move(data));
  }

  TensorT<T> tokens(const SyntheticSample& sample) const {
    return backbone.forward(image_tensor(sample));
  }

  MultiLabelOutput<T> ml_forward(const TensorT<T>& toks) const {
    if (!ml_head.has_value()) throw std::runtime_error("model has no multi-label head");
    return multilabel_forward(toks, backbone.grid_h(), backbone.grid_w(), table, *ml_head,
                              hyper.downsample_factor, hyper.score_original);
  }

  PixelClassifyOutput<T> seg_forward(const TensorT<T>& toks, const SelectionResult& sel) const {
    if (!psi1.has_value()) throw std::runtime_error("model has no segmentation head");
    return rank_adaptive_pixel_classify(toks, table, sel, *temps, *psi1, *psi2);
  }

  PixelClassifyOutput<T> seg_complete(const TensorT<T>& toks) const {
    if (!psi1.has_value()) throw std::runtime_error("model has no segmentation head");
    return complete_label_classify(toks, table, *temps, *psi1, *psi2);
  }

  long long ml_eval_count() const { return ml_head.has_value() ? ml_head->eval_count : 0; }
};

template <typename T>
struct ModelBundleT {
  Scheme scheme = Scheme::kJoint;
  std::optional<SegModelT<T>> ml_model;  // independent scheme phase 1
  SegModelT<T> seg_model;
};

// --- model file I/O ---------------------------------------------------------
// "RSMD1" magic, u32 json header length, json header, then per parameter:
// u16 name length, name, u32 element count, f64 little-endian values.

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
void append_params(std::string& out, const std::string& prefix, const ParameterRegistryT<T>& reg) {
  for (const auto& p : reg.all()) {
    std::string name = prefix + p.name;
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(p.tensor.numel()));
    for (T v : p.tensor.data()) put_f64(out, static_cast<double>(v));
  }
}

class ModelReader {
 public:
  explicit ModelReader(std::string buf) : buf_(std::move(buf)) {}
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf_[pos_]) |
                 (static_cast<uint16_t>(static_cast<uint8_t>(buf_[pos_ + 1])) << 8);
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("model file truncated");
  }
  std::string buf_;
  size_t pos_ = 0;
};

template <typename T>
void fill_params(ModelReader& r, const std::string& prefix, ParameterRegistryT<T>& reg,
                 size_t count) {
  size_t filled = 0;
  for (size_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    uint32_t numel = r.u32();
    if (name.rfind(prefix, 0) != 0) throw std::runtime_error("model file: unexpected section for " + name);
    std::string local = name.substr(prefix.size());
    auto& p = reg.find(local);
    if (p.tensor.numel() != static_cast<int64_t>(numel)) {
      throw std::runtime_error("model file: size mismatch for " + name);
    }
    for (auto& v : p.tensor.data()) v = static_cast<T>(r.f64());
    ++filled;
  }
  if (filled != reg.all().size()) throw std::runtime_error("model file: missing parameters");
}

}  // namespace detail

template <typename T>
void save_bundle(const ModelBundleT<T>& bundle, const std::string& path) {
  nlohmann::json header;
  header["scheme"] = scheme_name(bundle.scheme);
  header["precision"] = std::is_same_v<T, float> ? "f32" : "f64";
  header["seg_hyper"] = bundle.seg_model.hyper.to_json();
  header["seg_param_count"] = bundle.seg_model.reg.all().size();
  if (bundle.ml_model.has_value()) {
    header["ml_hyper"] = bundle.ml_model->hyper.to_json();
    header["ml_param_count"] = bundle.ml_model->reg.all().size();
  }
  std::string out = "RSMD1";
  std::string head_str = header.dump();
  detail::put_u32(out, static_cast<uint32_t>(head_str.size()));
  out += head_str;
  if (bundle.ml_model.has_value()) detail::append_params(out, "ml/", bundle.ml_model->reg);
  detail::append_params(out, "seg/", bundle.seg_model.reg);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

template <typename T>
ModelBundleT<T> load_bundle(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  detail::ModelReader r(ss.str());
  if (r.str(5) != "RSMD1") throw std::runtime_error("bad model magic: " + path);
  auto header = nlohmann::json::parse(r.str(r.u32()));

  ModelBundleT<T> bundle;
  bundle.scheme = scheme_from_name(header.at("scheme"));
  if (header.contains("ml_hyper")) {
    bundle.ml_model = SegModelT<T>::create(ModelHyper::from_json(header.at("ml_hyper")), 0);
    detail::fill_params(r, "ml/", bundle.ml_model->reg, header.at("ml_param_count").get<size_t>());
  }
  bundle.seg_model = SegModelT<T>::create(ModelHyper::from_json(header.at("seg_hyper")), 0);
  detail::fill_params(r, "seg/", bundle.seg_model.reg, header.at("seg_param_count").get<size_t>());
  if (!r.done()) throw std::runtime_error("model file has trailing bytes: " + path);
  return bundle;
}

}  // namespace rankseg
