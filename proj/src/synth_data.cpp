#include "rankseg/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rankseg {

namespace {

constexpr char kMagic[5] = {'R', 'S', 'E', 'G', '1'};
constexpr uint16_t kVersion = 1;
constexpr int kRenderRetryBound = 64;
constexpr uint64_t kSignatureStream = 0xf00d5eedull;

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}
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
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void raw(char* dst, size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("dataset file truncated: " + path_);
  }
  const std::string& buf_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<double> SyntheticConfig::effective_count_distribution() const {
  if (!class_count_distribution.empty()) return class_count_distribution;
  return std::vector<double>(static_cast<size_t>(max_classes_per_image),
                             1.0 / static_cast<double>(max_classes_per_image));
}

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("synth config: num_classes must be >= 2");
  if (height < 1 || width < 1 || channels < 1) {
    throw std::invalid_argument("synth config: non-positive extents");
  }
  if (max_classes_per_image < 1 || max_classes_per_image > num_classes) {
    throw std::invalid_argument("synth config: max_classes_per_image outside [1,K]");
  }
  auto dist = effective_count_distribution();
  if (static_cast<int64_t>(dist.size()) != max_classes_per_image) {
    throw std::invalid_argument("synth config: class_count_distribution length must equal max_classes_per_image");
  }
  double sum = 0.0;
  for (double p : dist) {
    if (p < 0) throw std::invalid_argument("synth config: negative probability in class_count_distribution");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("synth config: class_count_distribution must sum to 1");
  }
  if (class_frequency_skew < 0) throw std::invalid_argument("synth config: negative Zipf skew");
  if (signature_group_size < 1) {
    throw std::invalid_argument("synth config: signature_group_size must be >= 1");
  }
  if (signature_contrast <= 0) {
    throw std::invalid_argument("synth config: signature_contrast must be positive");
  }
  if (blobs_min < 1 || blobs_max < blobs_min) {
    throw std::invalid_argument("synth config: invalid blobs_per_class range");
  }
  if (noise_sigma < 0) throw std::invalid_argument("synth config: negative noise sigma");
}

std::vector<float> class_signature(const SyntheticConfig& cfg, int64_t class_id) {
  uint64_t sig_seed = Rng::derive(cfg.seed, kSignatureStream);
  std::vector<float> sig(static_cast<size_t>(cfg.channels));
  if (cfg.signature_group_size <= 1) {
    Rng rng(Rng::derive(sig_seed, static_cast<uint64_t>(class_id)));
    for (auto& v : sig) v = static_cast<float>(rng.next_normal());
    return sig;
  }
  Rng base_rng(Rng::derive(sig_seed, 0x6badull + static_cast<uint64_t>(class_id / cfg.signature_group_size)));
  Rng unique_rng(Rng::derive(sig_seed, 0x0ddull + static_cast<uint64_t>(class_id)));
  for (auto& v : sig) {
    v = static_cast<float>(base_rng.next_normal() +
                           cfg.signature_contrast * unique_rng.next_normal());
  }
  return sig;
}

std::vector<int64_t> sample_class_subset(const SyntheticConfig& cfg, Rng& rng) {
  cfg.validate();
  auto dist = cfg.effective_count_distribution();
  double u = rng.next_double();
  int64_t count = 1;
  double acc = 0.0;
  for (size_t i = 0; i < dist.size(); ++i) {
    acc += dist[i];
    if (u < acc) {
      count = static_cast<int64_t>(i) + 1;
      break;
    }
    if (i + 1 == dist.size()) count = static_cast<int64_t>(dist.size());
  }

  std::vector<double> weights(static_cast<size_t>(cfg.num_classes));
  double wsum = 0.0;
  for (int64_t k = 0; k < cfg.num_classes; ++k) {
    weights[static_cast<size_t>(k)] = std::pow(static_cast<double>(k + 1), -cfg.class_frequency_skew);
    wsum += weights[static_cast<size_t>(k)];
  }

  std::vector<int64_t> classes;
  std::vector<bool> taken(static_cast<size_t>(cfg.num_classes), false);
  while (static_cast<int64_t>(classes.size()) < count) {
    double target = rng.next_double() * wsum;
    double cum = 0.0;
    int64_t pick = cfg.num_classes - 1;
    for (int64_t k = 0; k < cfg.num_classes; ++k) {
      cum += weights[static_cast<size_t>(k)];
      if (target < cum) {
        pick = k;
        break;
      }
    }
    if (taken[static_cast<size_t>(pick)]) continue;
    taken[static_cast<size_t>(pick)] = true;
    classes.push_back(pick);
  }
  return classes;
}

SyntheticSample render_sample(const std::vector<int64_t>& classes, const SyntheticConfig& cfg,
                              Rng& rng) {
  cfg.validate();
  if (classes.empty()) throw std::invalid_argument("render_sample: empty class list");
  for (int64_t c : classes) {
    if (c < 0 || c >= cfg.num_classes) {
      throw std::invalid_argument("render_sample: class id out of range");
    }
  }
  int64_t h = cfg.height, w = cfg.width;

  std::vector<uint16_t> seg;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kRenderRetryBound) {
      throw std::runtime_error("render_sample: retry bound exceeded; rectangles keep occluding a "
                               "listed class (config error)");
    }
    seg.assign(static_cast<size_t>(h * w), static_cast<uint16_t>(classes[0]));
    for (size_t ci = 1; ci < classes.size(); ++ci) {
      int64_t blobs = rng.next_range(cfg.blobs_min, cfg.blobs_max);
      for (int64_t b = 0; b < blobs; ++b) {
        int64_t rh = rng.next_range(std::max<int64_t>(1, h / 8), std::max<int64_t>(1, h / 2));
        int64_t rw = rng.next_range(std::max<int64_t>(1, w / 8), std::max<int64_t>(1, w / 2));
        int64_t y0 = rng.next_range(0, h - rh);
        int64_t x0 = rng.next_range(0, w - rw);
        for (int64_t y = y0; y < y0 + rh; ++y) {
          for (int64_t x = x0; x < x0 + rw; ++x) {
            seg[static_cast<size_t>(y * w + x)] = static_cast<uint16_t>(classes[ci]);
          }
        }
      }
    }
    std::vector<bool> present(static_cast<size_t>(cfg.num_classes), false);
    for (uint16_t v : seg) present[v] = true;
    bool ok = true;
    for (int64_t c : classes) ok = ok && present[static_cast<size_t>(c)];
    if (ok) break;
  }

  SyntheticSample sample;
  sample.seg_map = seg;
  sample.image.assign(static_cast<size_t>(cfg.channels * h * w), 0.0f);
  std::vector<std::vector<float>> signatures(classes.size());
  std::vector<int64_t> sig_of(static_cast<size_t>(cfg.num_classes), -1);
  for (size_t ci = 0; ci < classes.size(); ++ci) {
    signatures[ci] = class_signature(cfg, classes[ci]);
    sig_of[static_cast<size_t>(classes[ci])] = static_cast<int64_t>(ci);
  }
  for (int64_t c = 0; c < cfg.channels; ++c) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        int64_t cls = seg[static_cast<size_t>(y * w + x)];
        float base = signatures[static_cast<size_t>(sig_of[static_cast<size_t>(cls)])]
                               [static_cast<size_t>(c)];
        float noise = cfg.noise_sigma > 0
                          ? static_cast<float>(cfg.noise_sigma * rng.next_normal())
                          : 0.0f;
        sample.image[static_cast<size_t>(c * h * w + y * w + x)] = base + noise;
      }
    }
  }

  sample.multilabel.assign(static_cast<size_t>(cfg.num_classes), 0);
  for (uint16_t v : sample.seg_map) sample.multilabel[v] = 1;
  return sample;
}

Dataset generate_dataset(const SyntheticConfig& cfg, int64_t n, uint64_t stream_offset) {
  cfg.validate();
  if (n < 0) throw std::invalid_argument("generate_dataset: negative sample count");
  Dataset dataset;
  dataset.num_classes = cfg.num_classes;
  dataset.channels = cfg.channels;
  dataset.height = cfg.height;
  dataset.width = cfg.width;
  dataset.samples.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Rng rng(Rng::derive(cfg.seed, stream_offset + static_cast<uint64_t>(i)));
    auto classes = sample_class_subset(cfg, rng);
    dataset.samples.push_back(render_sample(classes, cfg, rng));
  }
  return dataset;
}

void write_dataset(const Dataset& dataset, const std::string& path) {
  std::string out;
  out.reserve(64 + dataset.samples.size() *
                       static_cast<size_t>(dataset.height * dataset.width * 2 +
                                           dataset.channels * dataset.height * dataset.width * 4));
  out.append(kMagic, 5);
  put_u16(out, kVersion);
  put_u32(out, static_cast<uint32_t>(dataset.num_classes));
  put_u32(out, static_cast<uint32_t>(dataset.samples.size()));
  put_u16(out, static_cast<uint16_t>(dataset.channels));
  put_u16(out, static_cast<uint16_t>(dataset.height));
  put_u16(out, static_cast<uint16_t>(dataset.width));
  for (const auto& s : dataset.samples) {
    for (uint16_t v : s.seg_map) put_u16(out, v);
    for (float v : s.image) put_f32(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();
  Reader r(buf, path);

  char magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, kMagic, 5) != 0) throw std::runtime_error("bad dataset magic: " + path);
  if (r.u16() != kVersion) throw std::runtime_error("unsupported dataset version: " + path);

  Dataset dataset;
  dataset.num_classes = r.u32();
  uint32_t n = r.u32();
  dataset.channels = r.u16();
  dataset.height = r.u16();
  dataset.width = r.u16();

  size_t seg_n = static_cast<size_t>(dataset.height * dataset.width);
  size_t img_n = static_cast<size_t>(dataset.channels) * seg_n;
  dataset.samples.resize(n);
  for (auto& s : dataset.samples) {
    s.seg_map.resize(seg_n);
    for (auto& v : s.seg_map) v = r.u16();
    s.image.resize(img_n);
    for (auto& v : s.image) v = r.f32();
    s.multilabel.assign(static_cast<size_t>(dataset.num_classes), 0);
    for (uint16_t v : s.seg_map) {
      if (v > dataset.num_classes) throw std::runtime_error("dataset class id out of range: " + path);
      if (v < dataset.num_classes) s.multilabel[v] = 1;
    }
  }
  if (r.remaining() != 0) throw std::runtime_error("dataset has trailing bytes: " + path);
  return dataset;
}

std::vector<std::pair<int64_t, double>> distribution_report(const Dataset& dataset) {
  std::vector<std::pair<int64_t, double>> report;
  if (dataset.samples.empty()) return report;
  int64_t max_count = 0;
  std::vector<int64_t> counts;
  counts.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    int64_t c = static_cast<int64_t>(
        std::count(s.multilabel.begin(), s.multilabel.end(), static_cast<uint8_t>(1)));
    counts.push_back(c);
    max_count = std::max(max_count, c);
  }
  for (int64_t c = 1; c <= max_count; ++c) {
    int64_t at_most = static_cast<int64_t>(
        std::count_if(counts.begin(), counts.end(), [&](int64_t v) { return v <= c; }));
    report.push_back({c, 100.0 * static_cast<double>(at_most) /
                             static_cast<double>(dataset.samples.size())});
  }
  return report;
}

std::string distribution_report_csv(const Dataset& dataset) {
  std::ostringstream out;
  out << "classes,cum_percent\n";
  out.precision(6);
  out << std::fixed;
  for (const auto& [c, pct] : distribution_report(dataset)) {
    out << c << "," << pct << "\n";
  }
  return out.str();
}

}  // namespace rankseg
