#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rankseg/rankseg_head.hpp"
#include "rankseg/tensor.hpp"

namespace rankseg {

struct LossWeights {
  double seg_weight = 1.0;
  double ml_weight = 10.0;
};

struct AsymmetricLossParams {
  double gamma_pos = 0.0;
  double gamma_neg = 4.0;
  double clip_margin = 0.05;
};

constexpr double kProbGuard = 1e-8;

namespace detail {

// constant-mask clamp: in-range entries keep gradient 1, clamped entries get
// gradient 0
template <typename T>
TensorT<T> clamp_const(const TensorT<T>& x, double lo, double hi) {
  std::vector<T> mask(x.data().size());
  std::vector<T> fill(x.data().size());
  bool any_clamped = false;
  for (size_t i = 0; i < mask.size(); ++i) {
    double v = static_cast<double>(x.data()[i]);
    if (v < lo) {
      mask[i] = T(0);
      fill[i] = static_cast<T>(lo);
      any_clamped = true;
    } else if (v > hi) {
      mask[i] = T(0);
      fill[i] = static_cast<T>(hi);
      any_clamped = true;
    } else {
      mask[i] = T(1);
      fill[i] = T(0);
    }
  }
  if (!any_clamped) return x;
  return add(mul(x, TensorT<T>::from_data(x.shape(), std::move(mask))),
             TensorT<T>::from_data(x.shape(), std::move(fill)));
}

}  // namespace detail

// Asymmetric multi-label loss: positives -(1-p)^{g+} log p, negatives
// -(p_m)^{g-} log(1-p_m) with p_m = max(p - m, 0), mean over classes. The
// margin clip is a zero-gradient branch at p <= m.
template <typename T>
TensorT<T> asymmetric_loss(const TensorT<T>& probs, const std::vector<uint8_t>& target,
                           const AsymmetricLossParams& params) {
  if (static_cast<int64_t>(target.size()) != probs.numel()) {
    throw std::invalid_argument("asymmetric_loss: target length does not match probabilities");
  }
  if (params.gamma_pos < 0 || params.gamma_neg < 0 || params.clip_margin < 0 ||
      params.clip_margin >= 1) {
    throw std::invalid_argument("asymmetric_loss: invalid parameters");
  }

  auto p = detail::clamp_const(probs, kProbGuard, 1.0 - kProbGuard);
  auto one = TensorT<T>::scalar(T(1));

  // positive branch
  auto log_p = rankseg::log(p);
  TensorT<T> pos;
  if (params.gamma_pos == 0.0) {
    pos = scalar_mul(log_p, -1.0);
  } else {
    auto focus = rankseg::exp(scalar_mul(rankseg::log(sub(one, p)), params.gamma_pos));
    pos = scalar_mul(mul(focus, log_p), -1.0);
  }

  // negative branch with margin clip
  TensorT<T> neg;
  {
    auto shifted = sub(p, TensorT<T>::scalar(static_cast<T>(params.clip_margin)));
    std::vector<T> mask(p.data().size());
    std::vector<T> off(p.data().size());
    for (size_t i = 0; i < mask.size(); ++i) {
      bool active = static_cast<double>(p.data()[i]) > params.clip_margin;
      mask[i] = active ? T(1) : T(0);
      off[i] = active ? T(0) : T(0.5);  // safe placeholder, gated off below
    }
    auto mask_t = TensorT<T>::from_data(p.shape(), std::move(mask));
    auto pm = mul(shifted, mask_t);
    auto log_one_minus = rankseg::log(sub(one, pm));
    if (params.gamma_neg == 0.0) {
      neg = scalar_mul(log_one_minus, -1.0);
    } else {
      auto pm_safe = add(pm, TensorT<T>::from_data(p.shape(), std::move(off)));
      auto focus = mul(rankseg::exp(scalar_mul(rankseg::log(pm_safe), params.gamma_neg)), mask_t);
      neg = scalar_mul(mul(focus, log_one_minus), -1.0);
    }
  }

  std::vector<T> y(target.size()), ny(target.size());
  for (size_t i = 0; i < target.size(); ++i) {
    y[i] = target[i] != 0 ? T(1) : T(0);
    ny[i] = target[i] != 0 ? T(0) : T(1);
  }
  auto y_t = TensorT<T>::from_data(probs.shape(), std::move(y));
  auto ny_t = TensorT<T>::from_data(probs.shape(), std::move(ny));
  return reduce_mean(add(mul(y_t, pos), mul(ny_t, neg)));
}

template <typename T>
struct SelectedCeResult {
  TensorT<T> loss;          // exact zero scalar when nothing is included
  int64_t included = 0;
};

// Cross-entropy over the selected label set: each pixel's ground-truth id is
// remapped to its selection rank; pixels whose class was not selected, or
// whose class is the ignore index, are excluded.
template <typename T>
SelectedCeResult<T> selected_ce(const TensorT<T>& z, const std::vector<int64_t>& seg_tokens,
                                const SelectionResult& sel, int64_t ignore_index) {
  if (z.rank() != 2 || static_cast<int64_t>(seg_tokens.size()) != z.dim(0)) {
    throw std::invalid_argument("selected_ce: z " + shape_str(z.shape()) + " vs " +
                                std::to_string(seg_tokens.size()) + " pixels");
  }
  int64_t kp = z.dim(1);
  if (kp != sel.realized()) {
    throw std::invalid_argument("selected_ce: z columns do not match the selection size");
  }
  std::vector<int64_t> rank_of(static_cast<size_t>(ignore_index) + 1, -1);
  for (int64_t r = 0; r < kp; ++r) {
    int64_t id = sel.indices[static_cast<size_t>(r)];
    if (id >= 0 && id < static_cast<int64_t>(rank_of.size())) rank_of[static_cast<size_t>(id)] = r;
  }
  std::vector<int64_t> flat;
  flat.reserve(seg_tokens.size());
  for (size_t i = 0; i < seg_tokens.size(); ++i) {
    int64_t gt = seg_tokens[i];
    if (gt == ignore_index || gt < 0) continue;
    int64_t r = gt < static_cast<int64_t>(rank_of.size()) ? rank_of[static_cast<size_t>(gt)] : -1;
    if (r < 0) continue;
    flat.push_back(static_cast<int64_t>(i) * kp + r);
  }
  if (flat.empty()) return {TensorT<T>::scalar(T(0)), 0};
  int64_t included = static_cast<int64_t>(flat.size());
  auto picked = gather_rows(reshape(z, {z.dim(0) * kp}), std::move(flat));
  return {scalar_mul(reduce_mean(rankseg::log(picked)), -1.0), included};
}

}  // namespace rankseg
