#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "rankseg/grad_check.hpp"
#include "rankseg/losses.hpp"
#include "rankseg/metrics.hpp"
#include "rankseg/rankseg_head.hpp"
#include "rankseg/rng.hpp"

using namespace rankseg;

namespace {

// independent per-class evaluation of the asymmetric loss
double brute_force_asymmetric(const std::vector<double>& probs, const std::vector<uint8_t>& y,
                              const AsymmetricLossParams& p) {
  double sum = 0.0;
  for (size_t k = 0; k < probs.size(); ++k) {
    double pk = std::min(std::max(probs[k], 1e-8), 1.0 - 1e-8);
    if (y[k]) {
      sum += -std::pow(1.0 - pk, p.gamma_pos) * std::log(pk);
    } else {
      double pm = std::max(pk - p.clip_margin, 0.0);
      sum += -std::pow(pm, p.gamma_neg) * std::log(1.0 - pm);
    }
  }
  return sum / static_cast<double>(probs.size());
}

// per-pixel remap-and-log oracle for the selected cross entropy
std::pair<double, int64_t> brute_force_selected_ce(const std::vector<double>& z, int64_t n,
                                                   int64_t kp,
                                                   const std::vector<int64_t>& seg_tokens,
                                                   const SelectionResult& sel,
                                                   int64_t ignore_index) {
  double sum = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t gt = seg_tokens[static_cast<size_t>(i)];
    if (gt == ignore_index) continue;
    for (int64_t r = 0; r < kp; ++r) {
      if (sel.indices[static_cast<size_t>(r)] == gt) {
        sum += -std::log(z[static_cast<size_t>(i * kp + r)]);
        ++count;
        break;
      }
    }
  }
  if (count == 0) return {0.0, 0};
  return {sum / static_cast<double>(count), count};
}

// brute-force IoU via per-class set intersections
double brute_force_miou(const std::vector<int64_t>& pred, const std::vector<int64_t>& gt,
                        int64_t num_classes, int64_t ignore_index) {
  double sum = 0.0;
  int64_t evaluated = 0;
  for (int64_t c = 0; c < num_classes; ++c) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] == ignore_index) continue;
      bool in_pred = pred[i] == c;
      bool in_gt = gt[i] == c;
      if (in_pred && in_gt) ++inter;
      if (in_pred || in_gt) ++uni;
    }
    if (uni == 0) continue;
    sum += static_cast<double>(inter) / static_cast<double>(uni);
    ++evaluated;
  }
  return sum / static_cast<double>(evaluated);
}

// threshold-sweep AP over the index-tie-broken ranking
double brute_force_map(const std::vector<double>& scores, const std::vector<int>& targets,
                       int64_t n, int64_t k) {
  double ap_sum = 0.0;
  int64_t classes = 0;
  for (int64_t c = 0; c < k; ++c) {
    std::vector<std::pair<double, int64_t>> ranked;
    int64_t positives = 0;
    for (int64_t i = 0; i < n; ++i) {
      ranked.push_back({scores[static_cast<size_t>(i * k + c)], i});
      positives += targets[static_cast<size_t>(i * k + c)] != 0;
    }
    if (positives == 0) continue;
    std::sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double ap = 0.0;
    int64_t hits = 0;
    for (size_t rank = 0; rank < ranked.size(); ++rank) {
      if (targets[static_cast<size_t>(ranked[rank].second * k + c)] != 0) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap_sum += ap / static_cast<double>(positives);
    ++classes;
  }
  return ap_sum / static_cast<double>(classes);
}

Tensor64 random_row_stochastic(Rng& rng, int64_t n, int64_t kp) {
  std::vector<double> data(static_cast<size_t>(n * kp));
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < kp; ++j) {
      double v = 0.05 + rng.next_double();
      data[static_cast<size_t>(i * kp + j)] = v;
      s += v;
    }
    for (int64_t j = 0; j < kp; ++j) data[static_cast<size_t>(i * kp + j)] /= s;
  }
  return Tensor64::from_data({n, kp}, std::move(data));
}

}  // namespace

TEST_CASE("asymmetric loss with zero gammas and margin is binary cross entropy") {
  AsymmetricLossParams plain{0.0, 0.0, 0.0};
  auto probs = Tensor64::from_data({2}, {0.5, 0.5});
  auto loss = asymmetric_loss(probs, {1, 0}, plain);
  // both classes contribute ln 2
  CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Rng rng(91);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(8);
    std::vector<uint8_t> y(8);
    for (size_t i = 0; i < 8; ++i) {
      p[i] = 0.02 + 0.96 * rng.next_double();
      y[i] = rng.next_below(2) != 0;
    }
    double bce = 0.0;
    for (size_t i = 0; i < 8; ++i) bce += y[i] ? -std::log(p[i]) : -std::log(1.0 - p[i]);
    bce /= 8.0;
    auto l = asymmetric_loss(Tensor64::from_data({8}, p), y, plain);
    CHECK(std::abs(l.item() - bce) < 1e-12);
  }
}

TEST_CASE("asymmetric loss clips low-probability negatives to zero") {
  AsymmetricLossParams params{0.0, 4.0, 0.05};
  auto probs = Tensor64::from_data({1}, {0.03});
  auto loss = asymmetric_loss(probs, {0}, params);
  CHECK(loss.item() == 0.0);
}

TEST_CASE("asymmetric loss matches the brute-force evaluation") {
  AsymmetricLossParams params{0.0, 4.0, 0.05};
  Rng rng(92);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(12);
    std::vector<uint8_t> y(12);
    for (size_t i = 0; i < 12; ++i) {
      p[i] = rng.next_double();
      y[i] = rng.next_below(3) == 0;
    }
    auto loss = asymmetric_loss(Tensor64::from_data({12}, p), y, params);
    CHECK(std::abs(loss.item() - brute_force_asymmetric(p, y, params)) < 1e-12);
  }
}

TEST_CASE("asymmetric loss parameter validation") {
  auto probs = Tensor64::from_data({2}, {0.5, 0.5});
  CHECK_THROWS_AS(asymmetric_loss(probs, {1}, AsymmetricLossParams{}), std::invalid_argument);
  CHECK_THROWS_AS(asymmetric_loss(probs, {1, 0}, AsymmetricLossParams{-1.0, 0.0, 0.0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(asymmetric_loss(probs, {1, 0}, AsymmetricLossParams{0.0, 0.0, 1.0}),
                  std::invalid_argument);
}

TEST_CASE("selected_ce uniform and exclusion cases") {
  SelectionResult sel;
  sel.indices = {3, 1, 7, 5};
  sel.scores = {0.9, 0.8, 0.7, 0.6};

  auto z = Tensor64::full({6, 4}, 0.25);
  std::vector<int64_t> gt = {3, 1, 7, 5, 3, 1};
  auto res = selected_ce(z, gt, sel, 8);
  CHECK(res.included == 6);
  CHECK(res.loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  std::vector<int64_t> absent = {0, 2, 4, 6, 0, 2};
  auto res2 = selected_ce(z, absent, sel, 8);
  CHECK(res2.included == 0);
  CHECK(res2.loss.item() == 0.0);

  std::vector<int64_t> ignored(6, 8);
  auto res3 = selected_ce(z, ignored, sel, 8);
  CHECK(res3.included == 0);
}

TEST_CASE("selected_ce matches the brute-force remap oracle") {
  Rng rng(93);
  for (int trial = 0; trial < 100; ++trial) {
    int64_t kp = 2 + static_cast<int64_t>(rng.next_below(5));
    int64_t n = 4 + static_cast<int64_t>(rng.next_below(12));
    int64_t num_classes = 10;
    auto perm = rng.permutation(num_classes);
    SelectionResult sel;
    for (int64_t r = 0; r < kp; ++r) {
      sel.indices.push_back(perm[static_cast<size_t>(r)]);
      sel.scores.push_back(1.0 - 0.05 * static_cast<double>(r));
    }
    auto z = random_row_stochastic(rng, n, kp);
    std::vector<int64_t> gt(static_cast<size_t>(n));
    for (auto& g : gt) g = static_cast<int64_t>(rng.next_below(11));  // 10 = ignore
    auto res = selected_ce(z, gt, sel, 10);
    auto [expect, count] = brute_force_selected_ce(z.data(), n, kp, gt, sel, 10);
    CHECK(res.included == count);
    CHECK(std::abs(res.loss.item() - expect) < 1e-12);
  }
}

TEST_CASE("selected_ce with oracle selection includes every non-ignored pixel") {
  Rng rng(94);
  for (int trial = 0; trial < 50; ++trial) {
    int64_t num_classes = 12;
    int64_t n = 20;
    std::vector<int64_t> gt(static_cast<size_t>(n));
    for (auto& g : gt) g = static_cast<int64_t>(rng.next_below(13));  // 12 = ignore
    auto target = build_multilabel_target(gt, num_classes, 12);
    if (std::count(target.begin(), target.end(), 1) == 0) continue;
    std::vector<double> probs(static_cast<size_t>(num_classes));
    for (auto& p : probs) p = rng.next_double();
    auto sel = top_k_select(probs, 0, SelectionMode::kOracleGt, {}, &target);
    auto z = random_row_stochastic(rng, n, sel.realized());
    auto res = selected_ce(z, gt, sel, 12);
    int64_t non_ignored = n - std::count(gt.begin(), gt.end(), 12);
    CHECK(res.included == non_ignored);
  }
}

TEST_CASE("combined loss is differentiable end to end") {
  Rng rng(95);
  ParameterRegistryT<double> reg;
  auto logits = reg.add("logits", Tensor64::from_data({4}, {0.3, -0.5, 1.2, -0.1}),
                        ParamGroup::kMlHead);
  auto raw = reg.add("raw", Tensor64::from_data({6}, {0.4, -0.2, 0.8, 0.1, -0.6, 0.3}),
                     ParamGroup::kSegHead);
  auto temps = RankTemperaturesT<double>::create(reg, "temps", 2, false);
  SelectionResult sel;
  sel.indices = {2, 0};
  sel.scores = {0.9, 0.5};
  std::vector<uint8_t> target = {1, 0, 1, 0};
  std::vector<int64_t> gt = {2, 0, 2};
  AsymmetricLossParams params{1.0, 4.0, 0.05};

  auto report = grad_check(
      [&] {
        auto ml = asymmetric_loss(sigmoid(logits), target, params);
        auto z = rank_scaled_softmax(reshape(raw, {3, 2}), temps, 2);
        auto seg = selected_ce(z, gt, sel, 4).loss;
        return add(scalar_mul(seg, 1.0), scalar_mul(ml, 10.0));
      },
      reg.all());
  CHECK(report.worst() < 1e-4);
}

TEST_CASE("miou trivial cases") {
  std::vector<int64_t> a = {0, 1, 1, 0};
  CHECK(miou(a, a, 2, 2).miou == 1.0);

  std::vector<int64_t> gt = {0, 0, 1, 1};
  std::vector<int64_t> pred = {1, 1, 0, 0};
  CHECK(miou(pred, gt, 2, 2).miou == 0.0);

  std::vector<int64_t> all_ignored(4, 2);
  CHECK_THROWS_AS(miou(pred, all_ignored, 2, 2), std::runtime_error);
}

TEST_CASE("miou matches brute-force set intersections on random maps") {
  Rng rng(96);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int64_t> pred(256), gt(256);
    for (auto& v : pred) v = static_cast<int64_t>(rng.next_below(8));
    for (auto& v : gt) v = static_cast<int64_t>(rng.next_below(9));  // 8 = ignore
    auto res = miou(pred, gt, 8, 8);
    CHECK(std::abs(res.miou - brute_force_miou(pred, gt, 8, 8)) < 1e-12);
    CHECK(res.cm.total() == 256 - std::count(gt.begin(), gt.end(), int64_t{8}));
  }
}

TEST_CASE("miou is invariant under a joint class relabeling") {
  Rng rng(97);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int64_t> pred(64), gt(64);
    for (auto& v : pred) v = static_cast<int64_t>(rng.next_below(6));
    for (auto& v : gt) v = static_cast<int64_t>(rng.next_below(6));
    auto perm = rng.permutation(6);
    std::vector<int64_t> pred2(64), gt2(64);
    for (size_t i = 0; i < 64; ++i) {
      pred2[i] = perm[static_cast<size_t>(pred[i])];
      gt2[i] = perm[static_cast<size_t>(gt[i])];
    }
    CHECK(miou(pred, gt, 6, 6).miou == doctest::Approx(miou(pred2, gt2, 6, 6).miou).epsilon(1e-12));
  }
}

TEST_CASE("average precision closed forms") {
  // single class: positive ranked first
  CHECK(mean_average_precision({0.9, 0.1}, {1, 0}, 2, 1) == 1.0);
  // positive ranked second: precision 1/2 at the hit
  CHECK(mean_average_precision({0.9, 0.1}, {0, 1}, 2, 1) == 0.5);
  // no positives anywhere is an error
  CHECK_THROWS_AS(mean_average_precision({0.9, 0.1}, {0, 0}, 2, 1), std::runtime_error);
}

TEST_CASE("mAP is invariant under strictly increasing score transforms") {
  Rng rng(98);
  for (int trial = 0; trial < 50; ++trial) {
    int64_t n = 8, k = 4;
    std::vector<double> scores(static_cast<size_t>(n * k));
    std::vector<int> targets(static_cast<size_t>(n * k));
    for (auto& s : scores) s = rng.next_double();
    bool any = false;
    for (auto& t : targets) {
      t = rng.next_below(3) == 0;
      any = any || t;
    }
    if (!any) targets[0] = 1;
    auto transformed = scores;
    for (auto& s : transformed) s = std::exp(3.0 * s) + 1.0;
    CHECK(mean_average_precision(scores, targets, n, k) ==
          mean_average_precision(transformed, targets, n, k));
  }
}

TEST_CASE("mAP matches the brute-force oracle on random small instances") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    int64_t n = 2 + static_cast<int64_t>(rng.next_below(31));
    int64_t k = 1 + static_cast<int64_t>(rng.next_below(8));
    std::vector<double> scores(static_cast<size_t>(n * k));
    std::vector<int> targets(static_cast<size_t>(n * k));
    for (auto& s : scores) s = rng.next_double();
    bool any = false;
    for (auto& t : targets) {
      t = rng.next_below(4) == 0;
      any = any || t;
    }
    if (!any) targets[static_cast<size_t>(rng.next_below(static_cast<uint64_t>(n * k)))] = 1;
    CHECK(std::abs(mean_average_precision(scores, targets, n, k) -
                   brute_force_map(scores, targets, n, k)) < 1e-12);
  }
}

TEST_CASE("spearman correlation basics") {
  CHECK(spearman_correlation({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman_correlation({1, 2, 3, 4}, {40, 30, 20, 10}) == doctest::Approx(-1.0));
  CHECK(std::abs(spearman_correlation({1, 2, 3, 4}, {10, 10, 10, 10})) < 1e-12);
}
