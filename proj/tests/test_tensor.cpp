#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "rankseg/grad_check.hpp"
#include "rankseg/params.hpp"
#include "rankseg/rng.hpp"
#include "rankseg/tensor.hpp"

using namespace rankseg;

namespace {

Tensor64 random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = lo + (hi - lo) * rng.next_double();
  return Tensor64::from_data(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("tensor construction validates shape against data") {
  CHECK_THROWS_AS(Tensor64::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor64::from_data({0, 2}, {}), std::invalid_argument);
  auto t = Tensor64::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
}

TEST_CASE("sigmoid at zero is one half") {
  auto y = sigmoid(Tensor64::scalar(0.0));
  CHECK(y.item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax of a constant row is uniform") {
  auto y = softmax_last_dim(Tensor64::from_data({3}, {0.0, 0.0, 0.0}));
  for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("matmul hand example") {
  auto a = Tensor64::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor64::from_data({2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c.data()[0] == 3.0);
  CHECK(c.data()[1] == 7.0);
}

TEST_CASE("batched matmul matches per-slice products") {
  Rng rng(7);
  auto a = random_tensor(rng, {2, 3, 4});
  auto b = random_tensor(rng, {2, 4, 5});
  auto c = matmul(a, b);
  for (int64_t bi = 0; bi < 2; ++bi) {
    auto as = Tensor64::from_data({3, 4}, std::vector<double>(a.data().begin() + bi * 12,
                                                              a.data().begin() + (bi + 1) * 12));
    auto bs = Tensor64::from_data({4, 5}, std::vector<double>(b.data().begin() + bi * 20,
                                                              b.data().begin() + (bi + 1) * 20));
    auto cs = matmul(as, bs);
    for (int64_t i = 0; i < 15; ++i) {
      CHECK(c.data()[static_cast<size_t>(bi * 15 + i)] == cs.data()[static_cast<size_t>(i)]);
    }
  }
}

TEST_CASE("shape mismatch error names the kind and both shapes") {
  auto a = Tensor64::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor64::from_data({3}, {1, 2, 3});
  try {
    add(a, b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2,2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
}

TEST_CASE("non-finite output error names the kind") {
  auto x = Tensor64::scalar(-1.0);
  try {
    log(x);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
}

TEST_CASE("scalar broadcast works both ways and nothing else") {
  auto a = Tensor64::from_data({2, 2}, {1, 2, 3, 4});
  auto s = Tensor64::scalar(10.0);
  auto y1 = add(a, s);
  auto y2 = sub(s, a);
  CHECK(y1.data()[3] == 14.0);
  CHECK(y2.data()[0] == 9.0);
  auto row = Tensor64::from_data({2}, {1, 1});
  CHECK_THROWS_AS(add(a, row), std::invalid_argument);
}

TEST_CASE("backward of sum gives unit gradients") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::from_data({3}, {1, 2, 3}), ParamGroup::kBackbone);
  Tape64 tape;
  {
    Tape64::Scope scope(tape);
    auto loss = reduce_sum(p);
    tape.backward(loss);
  }
  REQUIRE(p.has_grad());
  for (double g : p.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum of sigmoid at zero gives quarter gradients") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::zeros({4}), ParamGroup::kBackbone);
  Tape64 tape;
  {
    Tape64::Scope scope(tape);
    tape.backward(reduce_sum(sigmoid(p)));
  }
  for (double g : p.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward of sum of softmax vanishes") {
  // analytically zero because the rows sum to one; floating point leaves
  // only rounding residue
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::from_data({4}, {0.3, -1.2, 2.0, 0.4}), ParamGroup::kBackbone);
  Tape64 tape;
  {
    Tape64::Scope scope(tape);
    tape.backward(reduce_sum(softmax_last_dim(p)));
  }
  for (double g : p.grad()) CHECK(std::abs(g) < 1e-14);
}

TEST_CASE("backward rejects non-scalar loss, foreign loss, and reuse") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::from_data({2}, {1, 2}), ParamGroup::kBackbone);
  Tape64 tape;
  Tensor64 loss;
  {
    Tape64::Scope scope(tape);
    auto y = sigmoid(p);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    loss = reduce_sum(y);
  }
  CHECK_THROWS_AS(tape.backward(Tensor64::scalar(1.0)), std::invalid_argument);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);
}

TEST_CASE("ops do not record without an active tape") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::from_data({2}, {1, 2}), ParamGroup::kBackbone);
  auto y = sigmoid(p);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("softmax rows sum to one within 1e-12") {
  Rng rng(3);
  auto x = random_tensor(rng, {8, 16}, -30.0, 30.0);
  auto y = softmax_last_dim(x);
  for (int64_t r = 0; r < 8; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 16; ++j) s += y.data()[static_cast<size_t>(r * 16 + j)];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("l2 normalize produces unit rows and rejects zero rows") {
  Rng rng(4);
  auto x = random_tensor(rng, {5, 8});
  auto y = l2_normalize_last_dim(x);
  for (int64_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 8; ++j) {
      double v = y.data()[static_cast<size_t>(r * 8 + j)];
      s += v * v;
    }
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-10);
  }
  CHECK_THROWS_AS(l2_normalize_last_dim(Tensor64::zeros({2, 3})), std::runtime_error);
}

TEST_CASE("gather_rows duplicates accumulate gradients") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::from_data({3, 2}, {1, 2, 3, 4, 5, 6}), ParamGroup::kBackbone);
  Tape64 tape;
  {
    Tape64::Scope scope(tape);
    auto g = gather_rows(p, {0, 0, 2});
    tape.backward(reduce_sum(g));
  }
  CHECK(p.grad()[0] == 2.0);
  CHECK(p.grad()[1] == 2.0);
  CHECK(p.grad()[2] == 0.0);
  CHECK(p.grad()[4] == 1.0);
}

TEST_CASE("forward is deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(99);
    auto x = random_tensor(rng, {6, 6});
    auto w = random_tensor(rng, {6, 6});
    auto y = softmax_last_dim(matmul(gelu(x), w));
    return y.data();
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
}

TEST_CASE("adam first step on unit scalar") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::scalar(1.0), ParamGroup::kBackbone);
  p.ensure_grad();
  p.grad()[0] = 1.0;
  AdamT<double> adam(0.9, 0.999, 1e-8);
  adam.step(reg, 0.1);
  CHECK(p.item() == doctest::Approx(0.9).epsilon(1e-7));
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("adam group multipliers do not leak across groups") {
  ParameterRegistryT<double> reg;
  auto a = reg.add("backbone_p", Tensor64::scalar(1.0), ParamGroup::kBackbone);
  auto b = reg.add("ml_p", Tensor64::scalar(1.0), ParamGroup::kMlHead);
  a.ensure_grad();
  a.grad()[0] = 1.0;
  b.ensure_grad();
  b.grad()[0] = 1.0;
  AdamT<double> adam;
  adam.step(reg, 0.1, {{ParamGroup::kMlHead, 0.1}});
  CHECK(a.item() == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(b.item() == doctest::Approx(0.99).epsilon(1e-7));
}

TEST_CASE("adam with zero grads leaves parameters unchanged") {
  ParameterRegistryT<double> reg;
  auto p = reg.add("p", Tensor64::from_data({2}, {1.5, -2.5}), ParamGroup::kSegHead);
  p.ensure_grad();
  AdamT<double> adam;
  adam.step(reg, 0.1);
  CHECK(p.data()[0] == 1.5);
  CHECK(p.data()[1] == -2.5);
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam requires populated grads") {
  ParameterRegistryT<double> reg;
  reg.add("p", Tensor64::scalar(1.0), ParamGroup::kBackbone);
  AdamT<double> adam;
  CHECK_THROWS_AS(adam.step(reg, 0.1), std::runtime_error);
}

TEST_CASE("parameter names must be unique and groups stay fixed") {
  ParameterRegistryT<double> reg;
  reg.add("w", Tensor64::scalar(1.0), ParamGroup::kBackbone);
  CHECK_THROWS_AS(reg.add("w", Tensor64::scalar(2.0), ParamGroup::kMlHead), std::invalid_argument);
  CHECK(reg.find("w").group == ParamGroup::kBackbone);
}

TEST_CASE("grad_check on matmul plus sum is tight") {
  Rng rng(11);
  ParameterRegistryT<double> reg;
  auto w = reg.add("w", random_tensor(rng, {4, 3}), ParamGroup::kBackbone);
  auto x = random_tensor(rng, {5, 4});
  auto report = grad_check([&] { return reduce_sum(matmul(x, w)); }, {reg.find("w")});
  CHECK(report.worst() < 1e-6);
}

TEST_CASE("grad_check of a constant fragment is empty") {
  auto report = grad_check([] { return Tensor64::scalar(3.0); }, {});
  CHECK(report.empty());
}

// Property: every OpKind passes a finite-difference check at randomized
// inputs in [-2, 2], h = 1e-5, tolerance 1e-4, 64-bit, 20 seeds per kind.
TEST_CASE("all op kinds pass finite-difference gradient checks") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(static_cast<uint64_t>(1000 + seed));
    ParameterRegistryT<double> reg;
    auto a = reg.add("a", random_tensor(rng, {3, 4}), ParamGroup::kBackbone);
    auto b = reg.add("b", random_tensor(rng, {3, 4}), ParamGroup::kBackbone);
    auto w = reg.add("w", random_tensor(rng, {4, 3}), ParamGroup::kBackbone);
    auto gamma = reg.add("gamma", random_tensor(rng, {4}, 0.5, 1.5), ParamGroup::kBackbone);
    auto beta = reg.add("beta", random_tensor(rng, {4}), ParamGroup::kBackbone);
    // keep log/l2 inputs away from their singular points
    auto pos = reg.add("pos", random_tensor(rng, {3, 4}, 0.5, 2.0), ParamGroup::kBackbone);
    auto s = reg.add("s", random_tensor(rng, {1}, 0.5, 1.5), ParamGroup::kBackbone);
    auto batched = reg.add("batched", random_tensor(rng, {2, 3, 4}), ParamGroup::kBackbone);
    auto batched2 = reg.add("batched2", random_tensor(rng, {2, 4, 3}), ParamGroup::kBackbone);

    auto leaves = std::vector<ParameterT<double>>{reg.find("a"), reg.find("b"), reg.find("w"),
                                                  reg.find("gamma"), reg.find("beta"),
                                                  reg.find("pos"), reg.find("s"),
                                                  reg.find("batched"), reg.find("batched2")};

    struct Fragment {
      const char* name;
      std::function<Tensor64()> fn;
    };
    std::vector<Fragment> fragments = {
        {"add", [&] { return reduce_sum(mul(add(a, b), b)); }},
        {"add_scalar", [&] { return reduce_sum(mul(add(a, s), a)); }},
        {"sub", [&] { return reduce_sum(mul(sub(a, b), a)); }},
        {"elementwise_mul", [&] { return reduce_sum(mul(a, b)); }},
        {"scalar_mul", [&] { return reduce_sum(scalar_mul(mul(a, a), -1.7)); }},
        {"matmul", [&] { return reduce_sum(mul(matmul(a, w), matmul(b, w))); }},
        {"matmul_batched", [&] { return reduce_sum(matmul(batched, batched2)); }},
        {"transpose", [&] { return reduce_sum(mul(transpose(a), transpose(b))); }},
        {"transpose3",
         [&] {
           return reduce_sum(mul(transpose(batched, {1, 2, 0}), transpose(batched, {1, 2, 0})));
         }},
        {"reshape", [&] { return reduce_sum(mul(reshape(a, {4, 3}), reshape(b, {4, 3}))); }},
        {"concat", [&] { return reduce_sum(mul(concat_rows<double>({a, b}), concat_rows<double>({b, a}))); }},
        {"gather_rows", [&] { return reduce_sum(mul(gather_rows(a, {2, 0, 0}), gather_rows(b, {1, 1, 2}))); }},
        {"reduce_sum_rows", [&] { return reduce_sum(mul(reduce_sum(a, 0), reduce_sum(b, 0))); }},
        {"reduce_sum_cols", [&] { return reduce_sum(mul(reduce_sum(a, 1), reduce_sum(b, 1))); }},
        {"reduce_mean", [&] { return reduce_mean(mul(reduce_mean(a, 0), reduce_mean(b, 0))); }},
        {"sigmoid", [&] { return reduce_sum(mul(sigmoid(a), b)); }},
        {"exp", [&] { return reduce_sum(mul(rankseg::exp(a), b)); }},
        {"log", [&] { return reduce_sum(mul(rankseg::log(pos), b)); }},
        {"softmax_last_dim", [&] { return reduce_sum(mul(softmax_last_dim(a), b)); }},
        {"softmax_orderfree", [&] { return reduce_sum(mul(softmax_last_dim(a, true), b)); }},
        {"layer_norm_last_dim", [&] { return reduce_sum(mul(layer_norm_last_dim(a, gamma, beta), b)); }},
        {"gelu", [&] { return reduce_sum(mul(gelu(a), b)); }},
        {"l2_normalize_last_dim", [&] { return reduce_sum(mul(l2_normalize_last_dim(pos), b)); }},
    };

    for (auto& frag : fragments) {
      auto report = grad_check(frag.fn, leaves);
      INFO("fragment ", frag.name, " seed ", seed);
      CHECK(report.worst() < 1e-4);
    }
  }
}
