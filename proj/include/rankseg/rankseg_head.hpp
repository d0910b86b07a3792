#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rankseg/nn_blocks.hpp"
#include "rankseg/params.hpp"
#include "rankseg/tensor.hpp"

namespace rankseg {

enum class SelectionMode { kFixedK, kDynamicThreshold, kOracleGt };

inline const char* selection_mode_name(SelectionMode m) {
  switch (m) {
    case SelectionMode::kFixedK: return "fixed_k";
    case SelectionMode::kDynamicThreshold: return "dynamic_threshold";
    case SelectionMode::kOracleGt: return "oracle_gt";
  }
  return "?";
}

// Top-k selection output: original category ids in descending score order.
struct SelectionResult {
  std::vector<int64_t> indices;
  std::vector<double> scores;
  SelectionMode mode = SelectionMode::kFixedK;

  int64_t realized() const { return static_cast<int64_t>(indices.size()); }

  static SelectionResult identity(int64_t num_classes) {
    SelectionResult sel;
    sel.indices.resize(static_cast<size_t>(num_classes));
    std::iota(sel.indices.begin(), sel.indices.end(), int64_t{0});
    sel.scores.assign(static_cast<size_t>(num_classes), 0.0);
    sel.mode = SelectionMode::kFixedK;
    return sel;
  }

  void validate(int64_t num_classes) const {
    if (indices.empty()) throw std::invalid_argument("selection: empty");
    if (indices.size() != scores.size()) throw std::invalid_argument("selection: indices/scores size mismatch");
    std::vector<bool> seen(static_cast<size_t>(num_classes), false);
    for (size_t i = 0; i < indices.size(); ++i) {
      int64_t id = indices[i];
      if (id < 0 || id >= num_classes) throw std::invalid_argument("selection: id out of range");
      if (seen[static_cast<size_t>(id)]) throw std::invalid_argument("selection: duplicate id");
      seen[static_cast<size_t>(id)] = true;
      if (i > 0 && scores[i] > scores[i - 1]) throw std::invalid_argument("selection: scores increase");
    }
  }
};

enum class MultiLabelHeadVariant { kGapLinear, kTranEnc1, kTranDec2 };

inline const char* head_variant_name(MultiLabelHeadVariant v) {
  switch (v) {
    case MultiLabelHeadVariant::kGapLinear: return "gap_linear";
    case MultiLabelHeadVariant::kTranEnc1: return "tranenc1";
    case MultiLabelHeadVariant::kTranDec2: return "trandec2";
  }
  return "?";
}

inline MultiLabelHeadVariant head_variant_from_name(const std::string& s) {
  if (s == "gap_linear") return MultiLabelHeadVariant::kGapLinear;
  if (s == "tranenc1") return MultiLabelHeadVariant::kTranEnc1;
  if (s == "trandec2") return MultiLabelHeadVariant::kTranDec2;
  throw std::invalid_argument("unknown head variant: " + s);
}

// The category-indexed weight tables: w doubles as the category embeddings
// fed to the heads, h/bias score the multi-label logits per class.
template <typename T>
struct CategoryTableT {
  TensorT<T> w;     // [K, d]
  TensorT<T> h;     // [K, d]
  TensorT<T> bias;  // [K]
  int64_t num_classes = 0;
  int64_t dim = 0;

  static CategoryTableT create(ParameterRegistryT<T>& reg, const std::string& name, int64_t K,
                               int64_t d, Rng& rng) {
    if (K < 2) throw std::invalid_argument("category table: need at least two classes");
    CategoryTableT table;
    table.num_classes = K;
    table.dim = d;
    table.w = reg.add(name + ".w", normal_init<T>(rng, {K, d}), ParamGroup::kSegHead);
    table.h = reg.add(name + ".h", normal_init<T>(rng, {K, d}), ParamGroup::kMlHead);
    table.bias = reg.add(name + ".bias", TensorT<T>::zeros({K}), ParamGroup::kMlHead);
    return table;
  }
};

constexpr double kInitInverseTau = 10.0;

// Learnable per-rank inverse temperatures, tau_k = exp(-log_inverse_tau[k]).
// Shared mode reads index 0 for every rank.
template <typename T>
struct RankTemperaturesT {
  TensorT<T> log_inverse_tau;  // [kappa_max]
  bool shared = false;
  int64_t kappa_max = 0;

  static RankTemperaturesT create(ParameterRegistryT<T>& reg, const std::string& name,
                                  int64_t kappa_max, bool shared,
                                  double init_inverse_tau = kInitInverseTau) {
    if (kappa_max < 1) throw std::invalid_argument("rank temperatures: kappa_max must be >= 1");
    RankTemperaturesT temps;
    temps.kappa_max = kappa_max;
    temps.shared = shared;
    temps.log_inverse_tau = reg.add(
        name + ".log_inverse_tau",
        TensorT<T>::full({kappa_max}, static_cast<T>(std::log(init_inverse_tau))), ParamGroup::kSegHead);
    return temps;
  }

  RankTemperaturesT shared_view() const {
    RankTemperaturesT view = *this;
    view.shared = true;
    return view;
  }

  // [kappa'] inverse temperatures for ranks 0..kappa'-1
  TensorT<T> inverse_tau(int64_t kappa_prime) const {
    if (kappa_prime < 1 || kappa_prime > kappa_max) {
      throw std::invalid_argument("rank temperatures: kappa' " + std::to_string(kappa_prime) +
                                  " outside [1," + std::to_string(kappa_max) + "]");
    }
    std::vector<int64_t> ranks(static_cast<size_t>(kappa_prime));
    if (!shared) std::iota(ranks.begin(), ranks.end(), int64_t{0});
    return rankseg::exp(gather_rows(log_inverse_tau, std::move(ranks)));
  }

  std::vector<double> inverse_tau_values() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(kappa_max));
    for (T v : log_inverse_tau.data()) out.push_back(std::exp(static_cast<double>(v)));
    return out;
  }
};

// y^gt from the ground-truth segmentation map: entry k is 1 iff some pixel
// carries class k.
inline std::vector<uint8_t> build_multilabel_target(const std::vector<int64_t>& seg_map,
                                                    int64_t num_classes, int64_t ignore_index) {
  std::vector<uint8_t> target(static_cast<size_t>(num_classes), 0);
  for (int64_t v : seg_map) {
    if (v == ignore_index) continue;
    if (v < 0 || v >= num_classes) {
      throw std::invalid_argument("build_multilabel_target: class id " + std::to_string(v) +
                                  " out of range [0," + std::to_string(num_classes) + ")");
    }
    target[static_cast<size_t>(v)] = 1;
  }
  return target;
}

// Multi-label prediction head over the shared backbone tokens.
template <typename T>
struct MultiLabelHeadT {
  MultiLabelHeadVariant variant = MultiLabelHeadVariant::kTranEnc1;
  std::optional<EncoderLayerT<T>> enc;      // tranenc1
  std::vector<DecoderLayerT<T>> decoders;   // trandec2
  mutable long long eval_count = 0;         // instrumentation

  static MultiLabelHeadT create(ParameterRegistryT<T>& reg, const std::string& name,
                                MultiLabelHeadVariant variant, int64_t d, int64_t heads,
                                int64_t mlp_hidden, Rng& rng) {
    MultiLabelHeadT head;
    head.variant = variant;
    if (variant == MultiLabelHeadVariant::kTranEnc1) {
      head.enc = EncoderLayerT<T>::create(reg, name + ".enc", d, heads, mlp_hidden,
                                          ParamGroup::kMlHead, rng);
    } else if (variant == MultiLabelHeadVariant::kTranDec2) {
      head.decoders.push_back(DecoderLayerT<T>::create(reg, name + ".dec0", d, heads, mlp_hidden,
                                                       ParamGroup::kMlHead, rng));
      head.decoders.push_back(DecoderLayerT<T>::create(reg, name + ".dec1", d, heads, mlp_hidden,
                                                       ParamGroup::kMlHead, rng));
    }
    return head;
  }
};

template <typename T>
struct MultiLabelOutput {
  TensorT<T> probs;   // [K]
  TensorT<T> logits;  // [K]
};

// Eq-style per-class scoring: logit_k = dot(cat_k, h_k) + bias_k, probs by
// sigmoid. The category embeddings fed in are the refined ones unless
// score_original is set.
template <typename T>
MultiLabelOutput<T> multilabel_forward(const TensorT<T>& pixel_tokens, int64_t grid_h,
                                       int64_t grid_w, const CategoryTableT<T>& table,
                                       const MultiLabelHeadT<T>& head, int64_t downsample_factor,
                                       bool score_original = false) {
  if (pixel_tokens.rank() != 2 || pixel_tokens.dim(1) != table.dim) {
    throw std::invalid_argument("multilabel_forward: tokens " + shape_str(pixel_tokens.shape()) +
                                " incompatible with category dim " + std::to_string(table.dim));
  }
  ++head.eval_count;
  TensorT<T> cats;
  if (head.variant == MultiLabelHeadVariant::kGapLinear) {
    auto pooled = global_average_pool(pixel_tokens);                       // [d]
    auto pooled_col = reshape(pooled, {table.dim, 1});                     // [d,1]
    auto logits = add(reshape(matmul(table.h, pooled_col), {table.num_classes}), table.bias);
    return {sigmoid(logits), logits};
  }
  auto down = downsample_tokens(pixel_tokens, grid_h, grid_w, downsample_factor);
  if (head.variant == MultiLabelHeadVariant::kTranEnc1) {
    auto tokens = concat_rows<T>({table.w, down});
    auto refined = head.enc->forward(tokens);
    std::vector<int64_t> cat_rows(static_cast<size_t>(table.num_classes));
    std::iota(cat_rows.begin(), cat_rows.end(), int64_t{0});
    cats = gather_rows(refined, std::move(cat_rows));
  } else {
    auto queries = table.w;
    for (const auto& dec : head.decoders) queries = dec.forward(queries, down);
    cats = queries;
  }
  if (score_original) cats = table.w;
  auto logits = add(reduce_sum(mul(cats, table.h), 1), table.bias);
  return {sigmoid(logits), logits};
}

// Eq. 2: sort the complete label set by predicted presence and keep a subset.
inline SelectionResult top_k_select(const std::vector<double>& probs, int64_t kappa,
                                    SelectionMode mode, std::optional<double> threshold = {},
                                    const std::vector<uint8_t>* gt_target = nullptr) {
  int64_t num_classes = static_cast<int64_t>(probs.size());
  std::vector<int64_t> order(static_cast<size_t>(num_classes));
  std::iota(order.begin(), order.end(), int64_t{0});
  // descending probability, ties to the lower original id
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (probs[static_cast<size_t>(a)] != probs[static_cast<size_t>(b)])
      return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
    return a < b;
  });

  SelectionResult sel;
  sel.mode = mode;
  switch (mode) {
    case SelectionMode::kFixedK: {
      if (kappa < 1 || kappa > num_classes) {
        throw std::invalid_argument("top_k_select: kappa " + std::to_string(kappa) +
                                    " outside [1," + std::to_string(num_classes) + "]");
      }
      for (int64_t i = 0; i < kappa; ++i) {
        sel.indices.push_back(order[static_cast<size_t>(i)]);
        sel.scores.push_back(probs[static_cast<size_t>(order[static_cast<size_t>(i)])]);
      }
      break;
    }
    case SelectionMode::kDynamicThreshold: {
      if (!threshold.has_value() || *threshold <= 0.0 || *threshold >= 1.0) {
        throw std::invalid_argument("top_k_select: dynamic mode needs threshold in (0,1)");
      }
      for (int64_t id : order) {
        if (probs[static_cast<size_t>(id)] > *threshold) {
          sel.indices.push_back(id);
          sel.scores.push_back(probs[static_cast<size_t>(id)]);
        }
      }
      if (sel.indices.empty()) {
        // nothing clears the threshold: fall back to the single argmax
        sel.indices.push_back(order[0]);
        sel.scores.push_back(probs[static_cast<size_t>(order[0])]);
      }
      break;
    }
    case SelectionMode::kOracleGt: {
      if (gt_target == nullptr || static_cast<int64_t>(gt_target->size()) != num_classes) {
        throw std::invalid_argument("top_k_select: oracle mode needs a ground-truth target");
      }
      for (int64_t id : order) {
        if ((*gt_target)[static_cast<size_t>(id)] != 0) {
          sel.indices.push_back(id);
          sel.scores.push_back(probs[static_cast<size_t>(id)]);
        }
      }
      if (sel.indices.empty()) {
        throw std::invalid_argument("top_k_select: oracle mode with all-zero ground truth");
      }
      break;
    }
  }
  sel.validate(num_classes);
  return sel;
}

template <typename T>
SelectionResult top_k_select(const TensorT<T>& probs, int64_t kappa, SelectionMode mode,
                             std::optional<double> threshold = {},
                             const std::vector<uint8_t>* gt_target = nullptr) {
  std::vector<double> p(probs.data().begin(), probs.data().end());
  return top_k_select(p, kappa, mode, threshold, gt_target);
}

// Eq. 3: scale column k of the raw similarity logits by 1/tau_k, then
// softmax each row.
template <typename T>
TensorT<T> rank_scaled_softmax(const TensorT<T>& raw_logits, const RankTemperaturesT<T>& temps,
                               int64_t kappa_prime) {
  auto inv = temps.inverse_tau(kappa_prime);                     // [k']
  auto inv_row = reshape(inv, {1, kappa_prime});                 // [1,k']
  auto ones = TensorT<T>::full({raw_logits.dim(0), 1}, T(1));    // [n,1]
  auto scaled = mul(raw_logits, matmul(ones, inv_row));          // [n,k']
  return softmax_last_dim(scaled, /*orderfree=*/true);
}

template <typename T>
struct PixelClassifyOutput {
  TensorT<T> z;           // [n, kappa'] row-stochastic
  TensorT<T> raw_logits;  // [n, kappa'] normalized scalar products
};

// The selected-label pixel classifier: gather the selected classifier
// weights, refine them jointly with the pixel tokens through the two psi
// encoder layers, l2-normalize both sides, and softmax the temperature-scaled
// scalar products (Eq. 3).
template <typename T>
PixelClassifyOutput<T> rank_adaptive_pixel_classify(const TensorT<T>& pixel_tokens,
                                                    const CategoryTableT<T>& table,
                                                    const SelectionResult& sel,
                                                    const RankTemperaturesT<T>& temps,
                                                    const EncoderLayerT<T>& psi1,
                                                    const EncoderLayerT<T>& psi2) {
  sel.validate(table.num_classes);
  int64_t kp = sel.realized();
  int64_t n = pixel_tokens.dim(0);
  auto w_bar = gather_rows(table.w, sel.indices);
  auto tokens = concat_rows<T>({w_bar, pixel_tokens});
  tokens = psi2.forward(psi1.forward(tokens));
  std::vector<int64_t> cat_rows(static_cast<size_t>(kp));
  std::iota(cat_rows.begin(), cat_rows.end(), int64_t{0});
  std::vector<int64_t> pix_rows(static_cast<size_t>(n));
  std::iota(pix_rows.begin(), pix_rows.end(), kp);
  auto cats = l2_normalize_last_dim(gather_rows(tokens, std::move(cat_rows)));
  auto pix = l2_normalize_last_dim(gather_rows(tokens, std::move(pix_rows)));
  auto raw = matmul(pix, transpose(cats));  // [n, k']
  return {rank_scaled_softmax(raw, temps, kp), raw};
}

// Complete-label baseline: identity selection over all K categories with a
// shared temperature.
template <typename T>
PixelClassifyOutput<T> complete_label_classify(const TensorT<T>& pixel_tokens,
                                               const CategoryTableT<T>& table,
                                               const RankTemperaturesT<T>& temps,
                                               const EncoderLayerT<T>& psi1,
                                               const EncoderLayerT<T>& psi2) {
  return rank_adaptive_pixel_classify(pixel_tokens, table,
                                      SelectionResult::identity(table.num_classes),
                                      temps.shared_view(), psi1, psi2);
}

// --- batched variants for training -----------------------------------------
// Several images share one graph; all selections in a batch must have the
// same realized size so the stacked shapes stay rectangular.

template <typename T>
struct MultiLabelBatchOutput {
  TensorT<T> probs;   // [batch, K]
  TensorT<T> logits;  // [batch, K]
};

namespace detail {

inline std::vector<int64_t> tiled_indices(int64_t rows, int64_t batch, int64_t offset = 0,
                                          int64_t stride = 0) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(rows * batch));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t r = 0; r < rows; ++r) idx.push_back(offset + b * stride + r);
  }
  return idx;
}

// rows of a [oh*ow, n] average-pooling matrix tiled into [batch, oh*ow, n]
template <typename T>
TensorT<T> tiled_pool_matrix(int64_t grid_h, int64_t grid_w, int64_t factor, int64_t batch) {
  int64_t oh = grid_h / factor, ow = grid_w / factor;
  int64_t n = grid_h * grid_w;
  std::vector<T> pool(static_cast<size_t>(oh * ow * n), T(0));
  T weight = T(1) / static_cast<T>(factor * factor);
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      for (int64_t dy = 0; dy < factor; ++dy) {
        for (int64_t dx = 0; dx < factor; ++dx) {
          int64_t src = (oy * factor + dy) * grid_w + (ox * factor + dx);
          pool[static_cast<size_t>((oy * ow + ox) * n + src)] = weight;
        }
      }
    }
  }
  std::vector<T> tiled;
  tiled.reserve(pool.size() * static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) tiled.insert(tiled.end(), pool.begin(), pool.end());
  return TensorT<T>::from_data({batch, oh * ow, n}, std::move(tiled));
}

}  // namespace detail

template <typename T>
MultiLabelBatchOutput<T> multilabel_forward_batched(const TensorT<T>& pixel_tokens, int64_t grid_h,
                                                    int64_t grid_w, const CategoryTableT<T>& table,
                                                    const MultiLabelHeadT<T>& head,
                                                    int64_t downsample_factor, int64_t batch,
                                                    bool score_original = false) {
  int64_t n = grid_h * grid_w;
  int64_t K = table.num_classes;
  int64_t d = table.dim;
  if (pixel_tokens.rank() != 2 || pixel_tokens.dim(0) != batch * n || pixel_tokens.dim(1) != d) {
    throw std::invalid_argument("multilabel_forward: tokens " + shape_str(pixel_tokens.shape()) +
                                " incompatible with batch " + std::to_string(batch) + " grid " +
                                std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  head.eval_count += batch;

  auto bias_rows = matmul(TensorT<T>::full({batch, 1}, T(1)), reshape(table.bias, {1, K}));

  if (head.variant == MultiLabelHeadVariant::kGapLinear) {
    std::vector<T> mean_rows(static_cast<size_t>(batch * n), T(1) / static_cast<T>(n));
    auto pool = TensorT<T>::from_data({batch, 1, n}, std::move(mean_rows));
    auto pooled = reshape(matmul(pool, reshape(pixel_tokens, {batch, n, d})), {batch, d});
    auto logits = add(matmul(pooled, transpose(table.h)), bias_rows);
    return {sigmoid(logits), logits};
  }

  auto pool = detail::tiled_pool_matrix<T>(grid_h, grid_w, downsample_factor, batch);
  int64_t m = pool.dim(1);
  auto down = reshape(matmul(pool, reshape(pixel_tokens, {batch, n, d})), {batch * m, d});

  TensorT<T> cats;  // [batch*K, d]
  if (head.variant == MultiLabelHeadVariant::kTranEnc1) {
    // interleave [w; down_b] per image out of one concatenated stack
    auto stack = concat_rows<T>({table.w, down});
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(batch * (K + m)));
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t r = 0; r < K; ++r) idx.push_back(r);
      for (int64_t r = 0; r < m; ++r) idx.push_back(K + b * m + r);
    }
    auto refined = head.enc->forward_batched(gather_rows(stack, std::move(idx)), batch);
    cats = gather_rows(refined, detail::tiled_indices(K, batch, 0, K + m));
  } else {
    auto queries = gather_rows(table.w, detail::tiled_indices(K, batch));
    for (const auto& dec : head.decoders) queries = dec.forward_batched(queries, down, batch);
    cats = queries;
  }
  if (score_original) cats = gather_rows(table.w, detail::tiled_indices(K, batch));
  auto h_tiled = gather_rows(table.h, detail::tiled_indices(K, batch));
  auto logits = add(reshape(reduce_sum(mul(cats, h_tiled), 1), {batch, K}), bias_rows);
  return {sigmoid(logits), logits};
}

// Batched Eq. 3 classifier: selections must share one realized size kappa'.
// Returns z as [batch*n, kappa'] rows aligned with the pixel token stack.
template <typename T>
PixelClassifyOutput<T> rank_adaptive_pixel_classify_batched(
    const TensorT<T>& pixel_tokens, const CategoryTableT<T>& table,
    const std::vector<SelectionResult>& sels, const RankTemperaturesT<T>& temps,
    const EncoderLayerT<T>& psi1, const EncoderLayerT<T>& psi2) {
  int64_t batch = static_cast<int64_t>(sels.size());
  int64_t kp = sels.front().realized();
  int64_t n = pixel_tokens.dim(0) / batch;
  int64_t d = table.dim;
  std::vector<int64_t> all_sel;
  for (const auto& sel : sels) {
    sel.validate(table.num_classes);
    if (sel.realized() != kp) {
      throw std::invalid_argument("batched classify: selections must share one realized size");
    }
    all_sel.insert(all_sel.end(), sel.indices.begin(), sel.indices.end());
  }
  auto w_bar = gather_rows(table.w, std::move(all_sel));  // [batch*kp, d]
  // interleave [w_bar_b; pixels_b]
  auto stack = concat_rows<T>({w_bar, pixel_tokens});
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(batch * (kp + n)));
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t r = 0; r < kp; ++r) idx.push_back(b * kp + r);
    for (int64_t r = 0; r < n; ++r) idx.push_back(batch * kp + b * n + r);
  }
  auto tokens = psi2.forward_batched(psi1.forward_batched(gather_rows(stack, std::move(idx)), batch), batch);
  auto cats = l2_normalize_last_dim(gather_rows(tokens, detail::tiled_indices(kp, batch, 0, kp + n)));
  auto pix = l2_normalize_last_dim(gather_rows(tokens, detail::tiled_indices(n, batch, kp, kp + n)));
  auto raw = reshape(matmul(reshape(pix, {batch, n, d}), transpose(reshape(cats, {batch, kp, d}), {0, 2, 1})),
                     {batch * n, kp});
  return {rank_scaled_softmax(raw, temps, kp), raw};
}

}  // namespace rankseg
