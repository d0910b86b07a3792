#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rankseg/grad_check.hpp"
#include "rankseg/nn_blocks.hpp"
#include "rankseg/rng.hpp"

using namespace rankseg;

namespace {

Tensor64 random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = lo + (hi - lo) * rng.next_double();
  return Tensor64::from_data(std::move(shape), std::move(data));
}

Tensor64 permute_rows(const Tensor64& t, const std::vector<int64_t>& perm) {
  int64_t d = t.dim(1);
  std::vector<double> data(t.data().size());
  for (size_t r = 0; r < perm.size(); ++r) {
    for (int64_t j = 0; j < d; ++j) {
      data[r * static_cast<size_t>(d) + static_cast<size_t>(j)] =
          t.data()[static_cast<size_t>(perm[r] * d + j)];
    }
  }
  return Tensor64::from_data(t.shape(), std::move(data));
}

void zero_fill(Tensor64 t) { std::fill(t.data().begin(), t.data().end(), 0.0); }

// plain-loop oracle for one token through a pre-norm encoder layer
std::vector<double> single_token_encoder_oracle(const EncoderLayerT<double>& layer,
                                                const std::vector<double>& x) {
  int64_t d = static_cast<int64_t>(x.size());
  auto layer_norm = [&](const std::vector<double>& v, const Tensor64& gamma, const Tensor64& beta) {
    double mu = 0.0;
    for (double e : v) mu += e;
    mu /= static_cast<double>(v.size());
    double var = 0.0;
    for (double e : v) var += (e - mu) * (e - mu);
    var /= static_cast<double>(v.size());
    double inv = 1.0 / std::sqrt(var + 1e-5);
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mu) * inv * gamma.data()[i] + beta.data()[i];
    return out;
  };
  auto linear = [&](const std::vector<double>& v, const LinearLayerT<double>& lin) {
    int64_t din = lin.weight.dim(0), dout = lin.weight.dim(1);
    std::vector<double> out(static_cast<size_t>(dout));
    for (int64_t j = 0; j < dout; ++j) {
      double s = 0.0;
      for (int64_t i = 0; i < din; ++i) s += v[static_cast<size_t>(i)] * lin.weight.data()[static_cast<size_t>(i * dout + j)];
      out[static_cast<size_t>(j)] = s + lin.bias.data()[static_cast<size_t>(j)];
    }
    return out;
  };
  // with one token, attention over a single key is the value path
  auto h = layer_norm(x, layer.ln_attn.gamma, layer.ln_attn.beta);
  auto attn = linear(linear(h, layer.v), layer.o);
  std::vector<double> x1(static_cast<size_t>(d));
  for (int64_t i = 0; i < d; ++i) x1[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] + attn[static_cast<size_t>(i)];
  auto h2 = layer_norm(x1, layer.ln_mlp.gamma, layer.ln_mlp.beta);
  auto mid = linear(h2, layer.mlp_in);
  for (auto& v : mid) v = v * 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
  auto mlp = linear(mid, layer.mlp_out);
  std::vector<double> out(static_cast<size_t>(d));
  for (int64_t i = 0; i < d; ++i) out[static_cast<size_t>(i)] = x1[static_cast<size_t>(i)] + mlp[static_cast<size_t>(i)];
  return out;
}

}  // namespace

TEST_CASE("encoder layer is exactly permutation equivariant") {
  Rng rng(21);
  ParameterRegistryT<double> reg;
  auto layer = EncoderLayerT<double>::create(reg, "enc", 8, 2, 16, ParamGroup::kBackbone, rng);
  auto tokens = random_tensor(rng, {6, 8});
  auto out = encoder_forward(tokens, layer);

  Rng prng(5);
  auto perm = prng.permutation(6);
  auto out_perm = encoder_forward(permute_rows(tokens, perm), layer);
  auto expect = permute_rows(out, perm);
  CHECK(out_perm.data() == expect.data());
}

TEST_CASE("single-token encoder matches the hand-rolled oracle") {
  Rng rng(22);
  ParameterRegistryT<double> reg;
  auto layer = EncoderLayerT<double>::create(reg, "enc", 6, 3, 12, ParamGroup::kBackbone, rng);
  auto token = random_tensor(rng, {1, 6});
  auto out = encoder_forward(token, layer);
  auto oracle = single_token_encoder_oracle(layer, token.data());
  for (size_t i = 0; i < oracle.size(); ++i) CHECK(out.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
}

TEST_CASE("degenerate encoder layer with zero output projections is the identity") {
  Rng rng(23);
  ParameterRegistryT<double> reg;
  auto layer = EncoderLayerT<double>::create(reg, "enc", 8, 2, 16, ParamGroup::kBackbone, rng);
  zero_fill(layer.o.weight);
  zero_fill(layer.o.bias);
  zero_fill(layer.mlp_out.weight);
  zero_fill(layer.mlp_out.bias);
  auto tokens = random_tensor(rng, {5, 8});
  auto out = encoder_forward(tokens, layer);
  CHECK(out.data() == tokens.data());
}

TEST_CASE("encoder rejects mismatched dimensions") {
  Rng rng(24);
  ParameterRegistryT<double> reg;
  auto layer = EncoderLayerT<double>::create(reg, "enc", 8, 2, 16, ParamGroup::kBackbone, rng);
  CHECK_THROWS_AS(encoder_forward(random_tensor(rng, {4, 6}), layer), std::invalid_argument);
  CHECK_THROWS_AS(EncoderLayerT<double>::create(reg, "bad", 8, 3, 16, ParamGroup::kBackbone, rng),
                  std::invalid_argument);
}

TEST_CASE("decoder output is exactly invariant to context row order") {
  Rng rng(31);
  ParameterRegistryT<double> reg;
  auto layer = DecoderLayerT<double>::create(reg, "dec", 8, 2, 16, ParamGroup::kBackbone, rng);
  auto queries = random_tensor(rng, {3, 8});
  auto context = random_tensor(rng, {7, 8});
  auto out = decoder_forward(queries, context, layer);

  Rng prng(6);
  auto perm = prng.permutation(7);
  auto out_perm = decoder_forward(queries, permute_rows(context, perm), layer);
  CHECK(out.data() == out_perm.data());
}

TEST_CASE("decoder with zero context and zero value bias reduces to the self path") {
  Rng rng(32);
  ParameterRegistryT<double> reg;
  auto layer = DecoderLayerT<double>::create(reg, "dec", 8, 2, 16, ParamGroup::kBackbone, rng);
  auto queries = random_tensor(rng, {4, 8});
  auto context = Tensor64::zeros({5, 8});
  auto out = decoder_forward(queries, context, layer);

  // self path alone, composed from the same parameters
  auto h = layer.ln_self.apply(queries);
  auto x1 = add(queries, layer.so.apply(multihead_attention(layer.sq.apply(h), h, layer.sk,
                                                            layer.sv, layer.heads)));
  auto h3 = layer.ln_mlp.apply(x1);
  auto expect = add(x1, layer.mlp_out.apply(gelu(layer.mlp_in.apply(h3))));
  CHECK(out.data() == expect.data());
}

TEST_CASE("global average pool examples") {
  auto two = Tensor64::from_data({2, 2}, {1, 3, 3, 1});
  auto pooled = global_average_pool(two);
  CHECK(pooled.data()[0] == 2.0);
  CHECK(pooled.data()[1] == 2.0);

  auto one = Tensor64::from_data({1, 3}, {4, 5, 6});
  auto p1 = global_average_pool(one);
  CHECK(p1.data() == std::vector<double>{4, 5, 6});

  Rng rng(41);
  auto many = random_tensor(rng, {100, 7});
  auto pm = global_average_pool(many);
  for (int64_t j = 0; j < 7; ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < 100; ++i) s += many.data()[static_cast<size_t>(i * 7 + j)];
    CHECK(std::abs(pm.data()[static_cast<size_t>(j)] - s / 100.0) < 1e-12);
  }
}

TEST_CASE("downsample_tokens pooling") {
  Rng rng(42);
  auto t4 = random_tensor(rng, {4, 3});
  auto same = downsample_tokens(t4, 2, 2, 1);
  CHECK(same.data() == t4.data());

  auto one = downsample_tokens(t4, 2, 2, 2);
  for (int64_t j = 0; j < 3; ++j) {
    double s = (t4.data()[static_cast<size_t>(j)] + t4.data()[static_cast<size_t>(3 + j)] +
                t4.data()[static_cast<size_t>(6 + j)] + t4.data()[static_cast<size_t>(9 + j)]) /
               4.0;
    CHECK(one.data()[static_cast<size_t>(j)] == doctest::Approx(s).epsilon(1e-15));
  }

  auto t16 = random_tensor(rng, {16, 5});
  auto pooled = downsample_tokens(t16, 4, 4, 2);
  for (int64_t oy = 0; oy < 2; ++oy) {
    for (int64_t ox = 0; ox < 2; ++ox) {
      for (int64_t j = 0; j < 5; ++j) {
        double s = 0.0;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx)
            s += t16.data()[static_cast<size_t>(((oy * 2 + dy) * 4 + ox * 2 + dx) * 5 + j)];
        CHECK(std::abs(pooled.data()[static_cast<size_t>((oy * 2 + ox) * 5 + j)] - s / 4.0) < 1e-12);
      }
    }
  }

  CHECK_THROWS_AS(downsample_tokens(t16, 4, 4, 3), std::invalid_argument);
}

TEST_CASE("depth-0 backbone is patch projection plus positional add") {
  Rng rng(51);
  ParameterRegistryT<double> reg;
  auto bb = PatchBackboneT<double>::create(reg, "bb", 1, 8, 8, 4, 8, 0, 2, 16,
                                           ParamGroup::kBackbone, rng);
  auto image = random_tensor(rng, {1, 8, 8});
  auto tokens = patch_embed(image, bb);
  REQUIRE(tokens.shape() == Shape{4, 8});

  // manual affine map of each 16-pixel patch
  for (int64_t t = 0; t < 4; ++t) {
    int64_t gy = t / 2, gx = t % 2;
    for (int64_t j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int64_t dy = 0; dy < 4; ++dy) {
        for (int64_t dx = 0; dx < 4; ++dx) {
          double pix = image.data()[static_cast<size_t>((gy * 4 + dy) * 8 + gx * 4 + dx)];
          s += pix * bb.proj.weight.data()[static_cast<size_t>((dy * 4 + dx) * 8 + j)];
        }
      }
      s += bb.proj.bias.data()[static_cast<size_t>(j)] + bb.pos.data()[static_cast<size_t>(t * 8 + j)];
      CHECK(tokens.data()[static_cast<size_t>(t * 8 + j)] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero image with zero positions and depth zero gives zero tokens") {
  Rng rng(52);
  ParameterRegistryT<double> reg;
  auto bb = PatchBackboneT<double>::create(reg, "bb", 1, 8, 8, 4, 8, 0, 2, 16,
                                           ParamGroup::kBackbone, rng);
  zero_fill(bb.pos);
  auto tokens = patch_embed(Tensor64::zeros({1, 8, 8}), bb);
  for (double v : tokens.data()) CHECK(v == 0.0);
}

TEST_CASE("backbone validates patch divisibility") {
  Rng rng(53);
  ParameterRegistryT<double> reg;
  CHECK_THROWS_AS(PatchBackboneT<double>::create(reg, "bb", 1, 10, 8, 4, 8, 0, 2, 16,
                                                 ParamGroup::kBackbone, rng),
                  std::invalid_argument);
}

TEST_CASE("all blocks pass gradient checks") {
  Rng rng(61);
  ParameterRegistryT<double> reg;
  auto enc = EncoderLayerT<double>::create(reg, "enc", 4, 2, 8, ParamGroup::kBackbone, rng);
  auto dec = DecoderLayerT<double>::create(reg, "dec", 4, 2, 8, ParamGroup::kSegHead, rng);
  auto bb = PatchBackboneT<double>::create(reg, "bb", 1, 4, 4, 2, 4, 1, 2, 8,
                                           ParamGroup::kBackbone, rng);

  // finite differences need gradients well above rounding noise, so the
  // checks run at an O(1) weight scale rather than the 0.02 init
  for (auto& p : reg.all()) {
    for (auto& v : p.tensor.data()) v = rng.next_double() - 0.5;
  }

  auto tokens = random_tensor(rng, {3, 4});
  auto queries = random_tensor(rng, {2, 4});
  auto context = random_tensor(rng, {3, 4});
  auto image = random_tensor(rng, {1, 4, 4});
  auto probe = random_tensor(rng, {3, 4});
  auto probe_bb = random_tensor(rng, {4, 4});
  auto probe_q = random_tensor(rng, {2, 4});

  auto report_enc = grad_check([&] { return reduce_sum(mul(enc.forward(tokens), probe)); }, reg.all());
  CHECK(report_enc.worst() < 1e-4);

  auto report_dec = grad_check(
      [&] { return reduce_sum(mul(dec.forward(queries, context), probe_q)); }, reg.all());
  CHECK(report_dec.worst() < 1e-4);

  auto report_bb = grad_check([&] { return reduce_sum(mul(bb.forward(image), probe_bb)); }, reg.all());
  CHECK(report_bb.worst() < 1e-4);
}
