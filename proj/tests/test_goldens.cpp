// Fixed-seed snapshots recorded after the gradient checks validated each
// block. They pin the composed forward semantics: any change to layer
// wiring, initialization, or kernel evaluation order shows up here.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "rankseg/rankseg_head.hpp"
#include "rankseg/rng.hpp"

using namespace rankseg;

namespace {

Tensor64 random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = lo + (hi - lo) * rng.next_double();
  return Tensor64::from_data(std::move(shape), std::move(data));
}

void check_snapshot(const Tensor64& out, const std::vector<double>& head, double sum) {
  for (size_t i = 0; i < head.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(head[i]).epsilon(1e-9));
  }
  double total = std::accumulate(out.data().begin(), out.data().end(), 0.0);
  CHECK(total == doctest::Approx(sum).epsilon(1e-9));
}

}  // namespace

TEST_CASE("patch backbone depth-2 snapshot") {
  Rng rng(12345);
  ParameterRegistryT<double> reg;
  auto bb = PatchBackboneT<double>::create(reg, "bb", 2, 8, 8, 4, 8, 2, 2, 16,
                                           ParamGroup::kBackbone, rng);
  auto image = random_tensor(rng, {2, 8, 8});
  auto tokens = bb.forward(image);
  REQUIRE(tokens.shape() == Shape{4, 8});
  check_snapshot(tokens,
                 {-0.14066852994365808, -0.066179309044698501, -0.035933136385164648,
                  0.11210883642749506, -0.022459057468015048, -0.060791906071273653,
                  0.021387966297225662, -0.022913475891951082},
                 -0.082469104658009829);
}

TEST_CASE("decoder layer snapshot") {
  Rng rng(777);
  ParameterRegistryT<double> reg;
  auto dec = DecoderLayerT<double>::create(reg, "dec", 8, 2, 16, ParamGroup::kSegHead, rng);
  auto queries = random_tensor(rng, {3, 8});
  auto context = random_tensor(rng, {5, 8});
  auto out = dec.forward(queries, context);
  check_snapshot(out,
                 {0.54503079464983961, 0.45582820514140138, 0.86529127984086218,
                  0.66724151200416237, -0.33616733000289695, 0.12451588655094362,
                  0.60589559569556117, -0.53679187407208684},
                 -0.4277108649742225);
}

TEST_CASE("tranenc1 multilabel snapshot") {
  Rng rng(4242);
  ParameterRegistryT<double> reg;
  auto table = CategoryTableT<double>::create(reg, "t", 6, 8, rng);
  auto head = MultiLabelHeadT<double>::create(reg, "h", MultiLabelHeadVariant::kTranEnc1, 8, 2, 16,
                                              rng);
  auto tokens = random_tensor(rng, {16, 8});
  auto out = multilabel_forward(tokens, 4, 4, table, head, 2);
  check_snapshot(out.logits,
                 {-0.00089322047959090444, -0.00057963505976066137, -0.00081053029247398888,
                  0.0020204149623281493, 0.00019073487513745767, -4.0005119535173556e-05},
                 -0.00011224111389512135);
}

TEST_CASE("complete-label classifier snapshot") {
  Rng rng(999);
  ParameterRegistryT<double> reg;
  auto table = CategoryTableT<double>::create(reg, "t", 6, 8, rng);
  auto temps = RankTemperaturesT<double>::create(reg, "temps", 6, true);
  auto psi1 = EncoderLayerT<double>::create(reg, "p1", 8, 2, 16, ParamGroup::kSegHead, rng);
  auto psi2 = EncoderLayerT<double>::create(reg, "p2", 8, 2, 16, ParamGroup::kSegHead, rng);
  auto tokens = random_tensor(rng, {9, 8});
  auto out = complete_label_classify(tokens, table, temps, psi1, psi2);
  REQUIRE(out.z.shape() == Shape{9, 6});
  check_snapshot(out.z,
                 {0.00253997292912404, 0.00037627594192286021, 0.004469079799434535,
                  0.76632963223997708, 0.22602810411064933, 0.00025693497889216568,
                  0.00030197606195484585, 0.00025435175403168273},
                 9.0);
}
