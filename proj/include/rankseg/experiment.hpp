#pragma once
#include <mutex>

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rankseg/losses.hpp"
#include "rankseg/metrics.hpp"
#include "rankseg/model.hpp"
#include "rankseg/rankseg_head.hpp"
#include "rankseg/synth_data.hpp"

namespace rankseg {

enum class Mode { kBaseline, kMt, kMtLs, kMtLsRa };
enum class OracleMode { kNone, kGtEval, kGtTrainEval };
enum class EvalSelection { kPredicted, kOracleGt, kComplete };
enum class Precision { kF32, kF64 };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kBaseline: return "baseline";
    case Mode::kMt: return "mt";
    case Mode::kMtLs: return "mt_ls";
    case Mode::kMtLsRa: return "mt_ls_ra";
  }
  return "?";
}
inline Mode mode_from_name(const std::string& s) {
  if (s == "baseline") return Mode::kBaseline;
  if (s == "mt") return Mode::kMt;
  if (s == "mt_ls") return Mode::kMtLs;
  if (s == "mt_ls_ra") return Mode::kMtLsRa;
  throw std::invalid_argument("unknown mode: " + s);
}

inline const char* oracle_name(OracleMode o) {
  switch (o) {
    case OracleMode::kNone: return "none";
    case OracleMode::kGtEval: return "gt_eval";
    case OracleMode::kGtTrainEval: return "gt_train_eval";
  }
  return "?";
}
inline OracleMode oracle_from_name(const std::string& s) {
  if (s == "none") return OracleMode::kNone;
  if (s == "gt_eval") return OracleMode::kGtEval;
  if (s == "gt_train_eval") return OracleMode::kGtTrainEval;
  throw std::invalid_argument("unknown oracle mode: " + s);
}

inline const char* eval_selection_name(EvalSelection e) {
  switch (e) {
    case EvalSelection::kPredicted: return "predicted";
    case EvalSelection::kOracleGt: return "oracle_gt";
    case EvalSelection::kComplete: return "complete";
  }
  return "?";
}
inline EvalSelection eval_selection_from_name(const std::string& s) {
  if (s == "predicted") return EvalSelection::kPredicted;
  if (s == "oracle_gt") return EvalSelection::kOracleGt;
  if (s == "complete") return EvalSelection::kComplete;
  throw std::invalid_argument("unknown eval selection: " + s);
}

inline const char* precision_name(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }
inline Precision precision_from_name(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw std::invalid_argument("unknown precision: " + s);
}

// configuration mistakes exit differently from runtime failures in the CLI
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  Mode mode = Mode::kMtLsRa;
  Scheme scheme = Scheme::kJoint;
  OracleMode oracle = OracleMode::kNone;
  int64_t kappa = 16;
  int64_t kappa_eval = -1;  // -1: use kappa
  SelectionMode selection_mode = SelectionMode::kFixedK;
  double dynamic_threshold = 0.05;
  MultiLabelHeadVariant head_variant = MultiLabelHeadVariant::kTranEnc1;
  LossWeights loss_weights;
  AsymmetricLossParams asym;
  double base_lr = 1e-3;
  double ml_head_lr_multiplier = 3.0;
  int64_t epochs = 12;
  int64_t batch_size = 16;
  int64_t eval_every = 0;  // 0: evaluate only after training
  Precision precision = Precision::kF32;
  uint64_t seed = 0;

  // dataset: either explicit files or inline synthesis
  std::string train_data;
  std::string test_data;
  bool synth = false;
  SyntheticConfig synth_cfg;
  int64_t synth_train_n = 1000;
  int64_t synth_test_n = 200;

  // model shape
  int64_t patch = 4;
  int64_t dim = 64;
  int64_t depth = 2;
  int64_t heads = 4;
  int64_t mlp_ratio = 4;
  int64_t downsample_factor = 2;
  bool score_original_embeddings = false;

  bool has_ml_head() const { return mode != Mode::kBaseline; }
  bool uses_selection() const { return mode == Mode::kMtLs || mode == Mode::kMtLsRa; }
  bool rank_adaptive() const { return mode == Mode::kMtLsRa; }
  int64_t effective_kappa_eval() const { return kappa_eval < 0 ? kappa : kappa_eval; }

  EvalSelection default_eval_selection() const {
    if (oracle != OracleMode::kNone) return EvalSelection::kOracleGt;
    return uses_selection() ? EvalSelection::kPredicted : EvalSelection::kComplete;
  }

  void validate(int64_t num_classes) const {
    if (kappa < 1 || kappa > num_classes) throw ConfigError("kappa must lie in [1,K]");
    if (kappa_eval > num_classes) throw ConfigError("kappa_eval must lie in [1,K]");
    if (base_lr <= 0) throw ConfigError("base_lr must be positive");
    if (ml_head_lr_multiplier <= 0) throw ConfigError("ml_head_lr_multiplier must be positive");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (loss_weights.seg_weight < 0 || loss_weights.ml_weight < 0) {
      throw ConfigError("loss weights must be non-negative");
    }
    if (selection_mode == SelectionMode::kDynamicThreshold &&
        (dynamic_threshold <= 0 || dynamic_threshold >= 1)) {
      throw ConfigError("dynamic_threshold must lie in (0,1)");
    }
    if (selection_mode == SelectionMode::kOracleGt) {
      throw ConfigError("selection must be fixed or dynamic; oracle is controlled by the oracle key");
    }
    if (scheme == Scheme::kIndependent && !uses_selection()) {
      throw ConfigError("scheme independent requires mode mt_ls or mt_ls_ra");
    }
  }

  ModelHyper seg_hyper(int64_t num_classes, int64_t channels, int64_t height, int64_t width) const {
    ModelHyper h;
    h.num_classes = num_classes;
    h.channels = channels;
    h.height = height;
    h.width = width;
    h.patch = patch;
    h.dim = dim;
    h.depth = depth;
    h.heads = heads;
    h.mlp_ratio = mlp_ratio;
    h.variant = head_variant;
    h.has_ml_head = scheme == Scheme::kJoint && has_ml_head();
    h.has_seg_head = true;
    h.shared_tau = !rank_adaptive();
    h.kappa_max = num_classes;
    h.downsample_factor = downsample_factor;
    h.score_original = score_original_embeddings;
    return h;
  }

  ModelHyper ml_hyper(int64_t num_classes, int64_t channels, int64_t height, int64_t width) const {
    ModelHyper h = seg_hyper(num_classes, channels, height, width);
    h.has_ml_head = true;
    h.has_seg_head = false;
    return h;
  }

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  double seg_loss = 0.0;
  double ml_loss = 0.0;
  double total_loss = 0.0;
};

struct EvalMetrics {
  double miou = 0.0;
  std::vector<double> per_class_iou;
  bool has_map = false;
  double map = 0.0;
};

struct EvalCurvePoint {
  int64_t epoch = 0;
  double miou = 0.0;
  bool has_map = false;
  double map = 0.0;
};

struct RunReport {
  nlohmann::json config_echo;
  std::vector<EpochStats> epochs;
  std::vector<EvalCurvePoint> eval_curve;
  double miou = 0.0;
  std::vector<double> per_class_iou;
  bool has_map = false;
  double map = 0.0;
  std::vector<double> inv_tau;  // empty when the model has no segmentation head
  bool shared_tau = true;
  bool has_spearman = false;
  double spearman_rank_inv_tau = 0.0;
  long long ml_head_evals = 0;
  int64_t params_total = 0;
  int64_t params_backbone = 0;
  int64_t params_ml_head = 0;
  int64_t params_seg_head = 0;
  long long flops_per_image_forward = 0;
  double wallclock_sec = 0.0;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

// majority vote per patch cell; ties go to the lower class id, all-ignore
// cells stay ignore
inline std::vector<int64_t> token_majority_seg(const SyntheticSample& sample, int64_t height,
                                               int64_t width, int64_t patch, int64_t num_classes) {
  int64_t gh = height / patch, gw = width / patch;
  std::vector<int64_t> out(static_cast<size_t>(gh * gw), num_classes);
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  for (int64_t gy = 0; gy < gh; ++gy) {
    for (int64_t gx = 0; gx < gw; ++gx) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int64_t dy = 0; dy < patch; ++dy) {
        for (int64_t dx = 0; dx < patch; ++dx) {
          uint16_t v = sample.seg_map[static_cast<size_t>((gy * patch + dy) * width + gx * patch + dx)];
          if (v < num_classes) ++counts[v];
        }
      }
      int64_t best = -1, best_count = 0;
      for (int64_t c = 0; c < num_classes; ++c) {
        if (counts[static_cast<size_t>(c)] > best_count) {
          best = c;
          best_count = counts[static_cast<size_t>(c)];
        }
      }
      if (best >= 0) out[static_cast<size_t>(gy * gw + gx)] = best;
    }
  }
  return out;
}

inline std::vector<int64_t> upsample_token_pred(const std::vector<int64_t>& token_pred,
                                                int64_t grid_h, int64_t grid_w, int64_t patch) {
  std::vector<int64_t> out(static_cast<size_t>(grid_h * patch * grid_w * patch));
  int64_t width = grid_w * patch;
  for (int64_t gy = 0; gy < grid_h; ++gy) {
    for (int64_t gx = 0; gx < grid_w; ++gx) {
      int64_t v = token_pred[static_cast<size_t>(gy * grid_w + gx)];
      for (int64_t dy = 0; dy < patch; ++dy) {
        for (int64_t dx = 0; dx < patch; ++dx) {
          out[static_cast<size_t>((gy * patch + dy) * width + gx * patch + dx)] = v;
        }
      }
    }
  }
  return out;
}

namespace detail {

// per-token argmax mapped back to original category ids; exact ties go to
// the lower original id so the result is stable under selection reordering
template <typename T>
std::vector<int64_t> argmax_original_ids(const TensorT<T>& z, const SelectionResult& sel) {
  int64_t n = z.dim(0), kp = z.dim(1);
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    T best = z.data()[static_cast<size_t>(i * kp)];
    int64_t best_id = sel.indices[0];
    for (int64_t k = 1; k < kp; ++k) {
      T v = z.data()[static_cast<size_t>(i * kp + k)];
      int64_t id = sel.indices[static_cast<size_t>(k)];
      if (v > best || (v == best && id < best_id)) {
        best = v;
        best_id = id;
      }
    }
    out[static_cast<size_t>(i)] = best_id;
  }
  return out;
}

template <typename T>
std::vector<double> ml_probs_for_sample(const ModelBundleT<T>& bundle,
                                        const SyntheticSample& sample) {
  const SegModelT<T>* source = nullptr;
  if (bundle.ml_model.has_value()) {
    source = &*bundle.ml_model;
  } else if (bundle.seg_model.ml_head.has_value()) {
    source = &bundle.seg_model;
  } else {
    throw std::runtime_error("predicted selection requested but the model has no multi-label head");
  }
  auto out = source->ml_forward(source->tokens(sample));
  return std::vector<double>(out.probs.data().begin(), out.probs.data().end());
}

}  // namespace detail

template <typename T>
SelectionResult eval_selection_for_sample(const ModelBundleT<T>& bundle,
                                          const SyntheticSample& sample, EvalSelection how,
                                          int64_t kappa_eval, SelectionMode selection_mode,
                                          double dynamic_threshold) {
  int64_t num_classes = bundle.seg_model.hyper.num_classes;
  switch (how) {
    case EvalSelection::kComplete:
      return SelectionResult::identity(num_classes);
    case EvalSelection::kOracleGt: {
      std::vector<double> probs(static_cast<size_t>(num_classes), 0.5);
      if (bundle.ml_model.has_value() || bundle.seg_model.ml_head.has_value()) {
        probs = detail::ml_probs_for_sample(bundle, sample);
      }
      return top_k_select(probs, 0, SelectionMode::kOracleGt, {}, &sample.multilabel);
    }
    case EvalSelection::kPredicted: {
      auto probs = detail::ml_probs_for_sample(bundle, sample);
      if (selection_mode == SelectionMode::kDynamicThreshold) {
        return top_k_select(probs, 0, SelectionMode::kDynamicThreshold, dynamic_threshold);
      }
      return top_k_select(probs, kappa_eval, SelectionMode::kFixedK);
    }
  }
  throw std::logic_error("unreachable");
}

// Per-pixel prediction over a dataset: argmax of z mapped to original ids,
// upsampled to image resolution, scored against the full-resolution ground
// truth. Pixels whose class the selection dropped count as errors.
template <typename T>
EvalMetrics evaluate_model(const ModelBundleT<T>& bundle, const Dataset& data, EvalSelection how,
                           int64_t kappa_eval, SelectionMode selection_mode = SelectionMode::kFixedK,
                           double dynamic_threshold = 0.05) {
  const auto& model = bundle.seg_model;
  int64_t num_classes = model.hyper.num_classes;
  ConfusionMatrix cm(num_classes);
  bool ml_available = bundle.ml_model.has_value() || model.ml_head.has_value();
  std::vector<double> scores;
  std::vector<int> targets;

  for (const auto& sample : data.samples) {
    auto sel = eval_selection_for_sample(bundle, sample, how, kappa_eval, selection_mode,
                                         dynamic_threshold);
    auto toks = model.tokens(sample);
    auto out = sel.realized() == num_classes && how == EvalSelection::kComplete
                   ? model.seg_complete(toks)
                   : model.seg_forward(toks, sel);
    auto token_pred = detail::argmax_original_ids(out.z, sel);
    auto pred = upsample_token_pred(token_pred, model.backbone.grid_h(), model.backbone.grid_w(),
                                    model.hyper.patch);
    std::vector<int64_t> gt(sample.seg_map.begin(), sample.seg_map.end());
    cm.accumulate(pred, gt, num_classes);

    if (ml_available) {
      auto probs = detail::ml_probs_for_sample(bundle, sample);
      scores.insert(scores.end(), probs.begin(), probs.end());
      for (uint8_t v : sample.multilabel) targets.push_back(v);
    }
  }

  auto res = miou_from_confusion(cm);
  EvalMetrics metrics;
  metrics.miou = res.miou;
  metrics.per_class_iou = res.per_class_iou;
  if (ml_available && !data.samples.empty()) {
    metrics.has_map = true;
    metrics.map = mean_average_precision(scores, targets,
                                         static_cast<int64_t>(data.samples.size()), num_classes);
  }
  return metrics;
}

template <typename T>
struct TrainOutcome {
  ModelBundleT<T> bundle;
  RunReport report;
};

namespace detail {

template <typename T>
TensorT<T> mean_of(std::vector<TensorT<T>>& parts) {
  if (parts.empty()) return TensorT<T>::scalar(T(0));
  TensorT<T> sum = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) sum = add(sum, parts[i]);
  return scalar_mul(sum, 1.0 / static_cast<double>(parts.size()));
}

template <typename T>
std::vector<TensorT<T>> batch_images(const SegModelT<T>& model, const Dataset& data,
                                     const std::vector<int64_t>& order, int64_t start,
                                     int64_t stop) {
  std::vector<TensorT<T>> images;
  images.reserve(static_cast<size_t>(stop - start));
  for (int64_t i = start; i < stop; ++i) {
    images.push_back(model.image_tensor(data.samples[static_cast<size_t>(order[static_cast<size_t>(i)])]));
  }
  return images;
}

// flattened multi-label targets for a batch
inline std::vector<uint8_t> batch_targets(const Dataset& data, const std::vector<int64_t>& order,
                                          int64_t start, int64_t stop) {
  std::vector<uint8_t> targets;
  for (int64_t i = start; i < stop; ++i) {
    const auto& m = data.samples[static_cast<size_t>(order[static_cast<size_t>(i)])].multilabel;
    targets.insert(targets.end(), m.begin(), m.end());
  }
  return targets;
}

// standalone multi-label model training (independent scheme phase 1)
template <typename T>
void train_ml_phase(SegModelT<T>& model, const Dataset& train, const ExperimentConfig& cfg) {
  AdamT<T> adam;
  int64_t n = static_cast<int64_t>(train.samples.size());
  long long step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(Rng::derive(cfg.seed, 0xa11ull + static_cast<uint64_t>(epoch)));
    auto order = erng.permutation(n);
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      int64_t stop = std::min(n, start + cfg.batch_size);
      int64_t bsz = stop - start;
      TapeT<T> tape;
      typename TapeT<T>::Scope scope(tape);
      try {
        auto toks = model.backbone.forward_batched(batch_images(model, train, order, start, stop));
        auto out = multilabel_forward_batched(toks, model.backbone.grid_h(), model.backbone.grid_w(),
                                              model.table, *model.ml_head,
                                              model.hyper.downsample_factor, bsz,
                                              model.hyper.score_original);
        auto loss = asymmetric_loss(out.probs, batch_targets(train, order, start, stop), cfg.asym);
        tape.backward(loss);
        adam.step(model.reg, cfg.base_lr);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("multi-label training diverged at step " + std::to_string(step) +
                                 ": " + e.what());
      }
      ++step;
    }
  }
}

}  // namespace detail

// Deterministic training: one optimizer step per batch; the combined loss is
// seg_weight * mean(selected CE) + ml_weight * mean(asymmetric loss).
template <typename T>
TrainOutcome<T> train_model(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test) {
  cfg.validate(train.num_classes);
  auto t_start = std::chrono::steady_clock::now();

  TrainOutcome<T> outcome;
  auto& bundle = outcome.bundle;
  bundle.scheme = cfg.scheme;

  bool oracle_train = cfg.oracle == OracleMode::kGtTrainEval;
  bool independent_ml = cfg.scheme == Scheme::kIndependent && !oracle_train;

  bundle.seg_model = SegModelT<T>::create(
      cfg.seg_hyper(train.num_classes, train.channels, train.height, train.width), cfg.seed);
  if (independent_ml) {
    bundle.ml_model = SegModelT<T>::create(
        cfg.ml_hyper(train.num_classes, train.channels, train.height, train.width),
        Rng::derive(cfg.seed, 0x9e1ull));
  }

  auto& model = bundle.seg_model;
  int64_t n = static_cast<int64_t>(train.samples.size());
  int64_t num_classes = train.num_classes;

  // phase 1: standalone multi-label model, then freeze it
  if (independent_ml) detail::train_ml_phase(*bundle.ml_model, train, cfg);

  // cached per-image artifacts
  std::vector<std::vector<int64_t>> token_gt(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    token_gt[static_cast<size_t>(i)] = token_majority_seg(train.samples[static_cast<size_t>(i)],
                                                          train.height, train.width, cfg.patch,
                                                          num_classes);
  }
  std::vector<SelectionResult> frozen_sel;
  if (independent_ml && cfg.uses_selection()) {
    frozen_sel.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      auto probs = detail::ml_probs_for_sample(bundle, train.samples[static_cast<size_t>(i)]);
      if (cfg.selection_mode == SelectionMode::kDynamicThreshold) {
        frozen_sel.push_back(
            top_k_select(probs, 0, SelectionMode::kDynamicThreshold, cfg.dynamic_threshold));
      } else {
        frozen_sel.push_back(top_k_select(probs, cfg.kappa, SelectionMode::kFixedK));
      }
    }
  }

  AdamT<T> adam;
  std::map<ParamGroup, double> multipliers;
  if (cfg.ml_head_lr_multiplier != 1.0) multipliers[ParamGroup::kMlHead] = cfg.ml_head_lr_multiplier;

  auto& report = outcome.report;
  long long step = 0;
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(Rng::derive(cfg.seed, 0xe90cull + static_cast<uint64_t>(epoch)));
    auto order = erng.permutation(n);
    EpochStats stats;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      int64_t stop = std::min(n, start + cfg.batch_size);
      int64_t bsz = stop - start;
      int64_t n_tok = model.backbone.num_tokens();
      TapeT<T> tape;
      typename TapeT<T>::Scope scope(tape);
      std::vector<TensorT<T>> seg_losses, ml_losses;
      try {
        // one graph per batch: backbone and heads run over stacked tokens
        auto toks = model.backbone.forward_batched(detail::batch_images(model, train, order, start, stop));

        std::vector<std::vector<double>> probs(static_cast<size_t>(bsz));
        if (model.ml_head.has_value()) {
          auto ml_out = multilabel_forward_batched(toks, model.backbone.grid_h(),
                                                   model.backbone.grid_w(), model.table,
                                                   *model.ml_head, model.hyper.downsample_factor,
                                                   bsz, model.hyper.score_original);
          ml_losses.push_back(asymmetric_loss(
              ml_out.probs, detail::batch_targets(train, order, start, stop), cfg.asym));
          for (int64_t b = 0; b < bsz; ++b) {
            probs[static_cast<size_t>(b)].assign(ml_out.probs.data().begin() + b * num_classes,
                                                 ml_out.probs.data().begin() + (b + 1) * num_classes);
          }
        }

        // per-image selections, then images grouped by realized size
        std::vector<SelectionResult> sels(static_cast<size_t>(bsz));
        for (int64_t b = 0; b < bsz; ++b) {
          int64_t idx = order[static_cast<size_t>(start + b)];
          const auto& sample = train.samples[static_cast<size_t>(idx)];
          if (oracle_train) {
            std::vector<double> order_probs = probs[static_cast<size_t>(b)].empty()
                                                  ? std::vector<double>(static_cast<size_t>(num_classes), 0.5)
                                                  : probs[static_cast<size_t>(b)];
            sels[static_cast<size_t>(b)] =
                top_k_select(order_probs, 0, SelectionMode::kOracleGt, {}, &sample.multilabel);
          } else if (cfg.uses_selection()) {
            if (independent_ml) {
              sels[static_cast<size_t>(b)] = frozen_sel[static_cast<size_t>(idx)];
            } else if (cfg.selection_mode == SelectionMode::kDynamicThreshold) {
              sels[static_cast<size_t>(b)] = top_k_select(probs[static_cast<size_t>(b)], 0,
                                                          SelectionMode::kDynamicThreshold,
                                                          cfg.dynamic_threshold);
            } else {
              sels[static_cast<size_t>(b)] =
                  top_k_select(probs[static_cast<size_t>(b)], cfg.kappa, SelectionMode::kFixedK);
            }
          } else {
            sels[static_cast<size_t>(b)] = SelectionResult::identity(num_classes);
          }
        }
        std::map<int64_t, std::vector<int64_t>> groups;  // realized size -> batch positions
        for (int64_t b = 0; b < bsz; ++b) groups[sels[static_cast<size_t>(b)].realized()].push_back(b);

        for (const auto& [kp, members] : groups) {
          (void)kp;
          std::vector<int64_t> row_idx;
          std::vector<SelectionResult> group_sels;
          for (int64_t b : members) {
            for (int64_t r = 0; r < n_tok; ++r) row_idx.push_back(b * n_tok + r);
            group_sels.push_back(sels[static_cast<size_t>(b)]);
          }
          auto group_tokens = gather_rows(toks, std::move(row_idx));
          RankTemperaturesT<T> temps = cfg.uses_selection() || oracle_train
                                           ? *model.temps
                                           : model.temps->shared_view();
          auto out = rank_adaptive_pixel_classify_batched(group_tokens, model.table, group_sels,
                                                          temps, *model.psi1, *model.psi2);
          for (size_t g = 0; g < members.size(); ++g) {
            int64_t idx = order[static_cast<size_t>(start + members[g])];
            auto z_rows = gather_rows(out.z, detail::tiled_indices(n_tok, 1, static_cast<int64_t>(g) * n_tok));
            seg_losses.push_back(selected_ce(z_rows, token_gt[static_cast<size_t>(idx)],
                                             group_sels[g], num_classes)
                                     .loss);
          }
        }

        auto seg_mean = detail::mean_of(seg_losses);
        auto ml_mean = detail::mean_of(ml_losses);
        auto total = add(scalar_mul(seg_mean, cfg.loss_weights.seg_weight),
                         scalar_mul(ml_mean, cfg.loss_weights.ml_weight));
        tape.backward(total);
        adam.step(model.reg, cfg.base_lr, multipliers);

        double seg_item = static_cast<double>(seg_mean.item());
        double ml_item = static_cast<double>(ml_mean.item());
        stats.seg_loss += seg_item;
        stats.ml_loss += ml_item;
        stats.total_loss += cfg.loss_weights.seg_weight * seg_item +
                            cfg.loss_weights.ml_weight * ml_item;
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at step " + std::to_string(step) + ": " +
                                 e.what());
      }
      ++step;
      ++batches;
    }
    if (batches > 0) {
      stats.seg_loss /= static_cast<double>(batches);
      stats.ml_loss /= static_cast<double>(batches);
      stats.total_loss /= static_cast<double>(batches);
    }
    report.epochs.push_back(stats);
    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && epoch + 1 < cfg.epochs) {
      auto mid = evaluate_model(bundle, test, cfg.default_eval_selection(),
                                cfg.effective_kappa_eval(), cfg.selection_mode,
                                cfg.dynamic_threshold);
      report.eval_curve.push_back({epoch + 1, mid.miou, mid.has_map, mid.map});
    }
  }

  // evaluation
  EvalSelection eval_how = cfg.default_eval_selection();
  auto metrics = evaluate_model(bundle, test, eval_how, cfg.effective_kappa_eval(),
                                cfg.selection_mode, cfg.dynamic_threshold);
  report.miou = metrics.miou;
  report.per_class_iou = metrics.per_class_iou;
  report.has_map = metrics.has_map;
  report.map = metrics.map;
  if (cfg.eval_every > 0) {
    report.eval_curve.push_back({cfg.epochs, metrics.miou, metrics.has_map, metrics.map});
  }

  // learned temperatures
  if (model.temps.has_value()) {
    report.inv_tau = model.temps->inverse_tau_values();
    report.shared_tau = model.temps->shared;
    if (!model.temps->shared) {
      int64_t ranks = std::min(cfg.kappa, model.temps->kappa_max);
      std::vector<double> rank_idx(static_cast<size_t>(ranks));
      std::vector<double> values(static_cast<size_t>(ranks));
      for (int64_t r = 0; r < ranks; ++r) {
        rank_idx[static_cast<size_t>(r)] = static_cast<double>(r);
        values[static_cast<size_t>(r)] = report.inv_tau[static_cast<size_t>(r)];
      }
      report.has_spearman = true;
      report.spearman_rank_inv_tau = spearman_correlation(rank_idx, values);
    }
  }

  report.ml_head_evals = model.ml_eval_count() +
                         (bundle.ml_model.has_value() ? bundle.ml_model->ml_eval_count() : 0);
  report.params_total = model.reg.total_count();
  report.params_backbone = model.reg.group_count(ParamGroup::kBackbone);
  report.params_ml_head = model.reg.group_count(ParamGroup::kMlHead);
  report.params_seg_head = model.reg.group_count(ParamGroup::kSegHead);
  if (bundle.ml_model.has_value()) {
    report.params_total += bundle.ml_model->reg.total_count();
    report.params_backbone += bundle.ml_model->reg.group_count(ParamGroup::kBackbone);
    report.params_ml_head += bundle.ml_model->reg.group_count(ParamGroup::kMlHead);
  }

  // forward-cost estimate measured on one sample; the counter is global, so
  // concurrent sweep trials serialize this small section
  if (!test.samples.empty() || !train.samples.empty()) {
    static std::mutex flop_mutex;
    std::lock_guard<std::mutex> lock(flop_mutex);
    const auto& probe = test.samples.empty() ? train.samples.front() : test.samples.front();
    reset_flop_counter();
    auto sel = eval_selection_for_sample(bundle, probe, eval_how, cfg.effective_kappa_eval(),
                                         cfg.selection_mode, cfg.dynamic_threshold);
    auto toks = model.tokens(probe);
    if (eval_how == EvalSelection::kComplete) {
      model.seg_complete(toks);
    } else {
      model.seg_forward(toks, sel);
    }
    report.flops_per_image_forward = read_flop_counter();
    reset_flop_counter();
  }

  report.seed = cfg.seed;
  report.config_echo = cfg.to_json();
  report.wallclock_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return outcome;
}

// tau dump rows; a shared-temperature model yields one row flagged "shared"
struct TauRow {
  std::string rank;  // "0", "1", ... or "shared"
  double inv_tau;
};

template <typename T>
std::vector<TauRow> dump_tau(const SegModelT<T>& model) {
  if (!model.temps.has_value()) throw std::runtime_error("dump_tau: model has no temperatures");
  auto values = model.temps->inverse_tau_values();
  std::vector<TauRow> rows;
  if (model.temps->shared) {
    rows.push_back({"shared", values[0]});
  } else {
    for (size_t r = 0; r < values.size(); ++r) rows.push_back({std::to_string(r), values[r]});
  }
  return rows;
}

std::string tau_rows_csv(const std::vector<TauRow>& rows);
std::vector<TauRow> parse_tau_csv(const std::string& text);

}  // namespace rankseg
