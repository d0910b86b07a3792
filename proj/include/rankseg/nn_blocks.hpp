#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rankseg/params.hpp"
#include "rankseg/rng.hpp"
#include "rankseg/tensor.hpp"

namespace rankseg {

constexpr double kInitStd = 0.02;

template <typename T>
TensorT<T> normal_init(Rng& rng, Shape shape, double stddev = kInitStd) {
  std::vector<double> raw = rng.normal_vector(static_cast<size_t>(shape_numel(shape)), stddev);
  std::vector<T> data(raw.begin(), raw.end());
  return TensorT<T>::from_data(std::move(shape), std::move(data));
}

// y = x W + b, bias broadcast over rows via a ones-column product so it stays
// inside the scalar-only broadcasting rules.
template <typename T>
struct LinearLayerT {
  TensorT<T> weight;  // [d_in, d_out]
  TensorT<T> bias;    // [d_out], absent for key projections (softmax cancels
                      // a constant key shift, leaving a structurally dead
                      // parameter)

  static LinearLayerT create(ParameterRegistryT<T>& reg, const std::string& name, int64_t d_in,
                             int64_t d_out, ParamGroup group, Rng& rng, bool with_bias = true) {
    LinearLayerT layer;
    layer.weight = reg.add(name + ".weight", normal_init<T>(rng, {d_in, d_out}), group);
    if (with_bias) layer.bias = reg.add(name + ".bias", TensorT<T>::zeros({d_out}), group);
    return layer;
  }

  TensorT<T> apply(const TensorT<T>& x) const {
    auto y = matmul(x, weight);
    if (!bias.valid()) return y;
    auto ones = TensorT<T>::full({x.dim(0), 1}, T(1));
    return add(y, matmul(ones, reshape(bias, {1, bias.dim(0)})));
  }
};

template <typename T>
struct LayerNormParamsT {
  TensorT<T> gamma;
  TensorT<T> beta;

  static LayerNormParamsT create(ParameterRegistryT<T>& reg, const std::string& name, int64_t d,
                                 ParamGroup group) {
    LayerNormParamsT ln;
    ln.gamma = reg.add(name + ".gamma", TensorT<T>::full({d}, T(1)), group);
    ln.beta = reg.add(name + ".beta", TensorT<T>::zeros({d}), group);
    return ln;
  }

  TensorT<T> apply(const TensorT<T>& x) const { return layer_norm_last_dim(x, gamma, beta); }
};

// Canonical ordering of token rows by lexicographic content. Reductions over
// the key axis performed in this order depend only on the multiset of rows,
// never on their incoming layout; rows with bitwise-equal content are
// interchangeable, so every reduction result is exactly permutation-invariant.
// Per-block canonical row order for a [batch*n, d] stack of independent
// token sets.
template <typename T>
std::vector<int64_t> canonical_block_order(const TensorT<T>& tokens, int64_t batch) {
  int64_t rows = tokens.dim(0) / batch;
  int64_t d = tokens.dim(1);
  const T* data = tokens.data().data();
  std::vector<int64_t> order(static_cast<size_t>(tokens.dim(0)));
  for (int64_t b = 0; b < batch; ++b) {
    int64_t off = b * rows;
    auto begin = order.begin() + off;
    for (int64_t i = 0; i < rows; ++i) begin[i] = off + i;
    std::sort(begin, begin + rows, [&](int64_t x, int64_t y) {
      const T* rx = data + x * d;
      const T* ry = data + y * d;
      for (int64_t j = 0; j < d; ++j) {
        if (rx[j] != ry[j]) return rx[j] < ry[j];
      }
      return false;
    });
  }
  return order;
}

// Multi-head scaled dot-product attention over `batch` independent token
// sets stacked row-wise: queries [batch*m, d], key/value source [batch*n, d].
// The key/value rows of each set are gathered into canonical row order
// first, so softmax normalizers and the attention-times-value contraction
// run over a layout-independent sequence: outputs are exactly invariant to
// key/value row order within each set.
template <typename T>
TensorT<T> multihead_attention_batched(const TensorT<T>& queries, const TensorT<T>& kv_source,
                                       const LinearLayerT<T>& k_proj, const LinearLayerT<T>& v_proj,
                                       int64_t heads, int64_t batch) {
  int64_t m = queries.dim(0) / batch;
  int64_t n = kv_source.dim(0) / batch;
  int64_t d = queries.dim(1);
  int64_t dh = d / heads;
  auto kv = gather_rows(kv_source, canonical_block_order(kv_source, batch));
  auto keys = k_proj.apply(kv);
  auto values = v_proj.apply(kv);
  // [batch*rows, d] -> [batch*heads, rows, dh]
  auto split = [&](const TensorT<T>& t, int64_t rows) {
    return reshape(transpose(reshape(t, {batch, rows, heads, dh}), {0, 2, 1, 3}),
                   {batch * heads, rows, dh});
  };
  auto qh = split(queries, m);
  auto kh = split(keys, n);
  auto vh = split(values, n);
  auto scores = scalar_mul(matmul(qh, transpose(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
  auto attn = softmax_last_dim(scores);  // [batch*heads, m, n]
  auto mixed = matmul(attn, vh);         // [batch*heads, m, dh]
  return reshape(transpose(reshape(mixed, {batch, heads, m, dh}), {0, 2, 1, 3}), {batch * m, d});
}

template <typename T>
TensorT<T> multihead_attention(const TensorT<T>& queries, const TensorT<T>& kv_source,
                               const LinearLayerT<T>& k_proj, const LinearLayerT<T>& v_proj,
                               int64_t heads) {
  return multihead_attention_batched(queries, kv_source, k_proj, v_proj, heads, 1);
}

// Pre-norm transformer encoder layer. No positional information is injected
// here, so the layer is exactly permutation-equivariant over tokens.
template <typename T>
struct EncoderLayerT {
  LinearLayerT<T> q, k, v, o;
  LinearLayerT<T> mlp_in, mlp_out;
  LayerNormParamsT<T> ln_attn, ln_mlp;
  int64_t heads = 1;

  static EncoderLayerT create(ParameterRegistryT<T>& reg, const std::string& name, int64_t d,
                              int64_t heads, int64_t mlp_hidden, ParamGroup group, Rng& rng) {
    if (heads < 1 || d % heads != 0) {
      throw std::invalid_argument("encoder layer: embedding dim " + std::to_string(d) +
                                  " not divisible by head count " + std::to_string(heads));
    }
    EncoderLayerT layer;
    layer.q = LinearLayerT<T>::create(reg, name + ".q", d, d, group, rng);
    layer.k = LinearLayerT<T>::create(reg, name + ".k", d, d, group, rng, /*with_bias=*/false);
    layer.v = LinearLayerT<T>::create(reg, name + ".v", d, d, group, rng);
    layer.o = LinearLayerT<T>::create(reg, name + ".o", d, d, group, rng);
    layer.mlp_in = LinearLayerT<T>::create(reg, name + ".mlp_in", d, mlp_hidden, group, rng);
    layer.mlp_out = LinearLayerT<T>::create(reg, name + ".mlp_out", mlp_hidden, d, group, rng);
    layer.ln_attn = LayerNormParamsT<T>::create(reg, name + ".ln_attn", d, group);
    layer.ln_mlp = LayerNormParamsT<T>::create(reg, name + ".ln_mlp", d, group);
    layer.heads = heads;
    return layer;
  }

  TensorT<T> forward(const TensorT<T>& tokens) const { return forward_batched(tokens, 1); }

  // `batch` independent token sets stacked row-wise
  TensorT<T> forward_batched(const TensorT<T>& tokens, int64_t batch) const {
    if (tokens.rank() != 2 || tokens.dim(1) != q.weight.dim(0) || tokens.dim(0) % batch != 0) {
      throw std::invalid_argument("encoder_forward: expected [n," + std::to_string(q.weight.dim(0)) +
                                  "], got " + shape_str(tokens.shape()));
    }
    auto h = ln_attn.apply(tokens);
    auto attn = o.apply(multihead_attention_batched(q.apply(h), h, k, v, heads, batch));
    auto x1 = add(tokens, attn);
    auto h2 = ln_mlp.apply(x1);
    auto mlp = mlp_out.apply(gelu(mlp_in.apply(h2)));
    return add(x1, mlp);
  }
};

// Pre-norm transformer decoder layer: self-attention over the query stream,
// cross-attention into a context stream, then the MLP. Output is exactly
// invariant to context row order.
template <typename T>
struct DecoderLayerT {
  LinearLayerT<T> sq, sk, sv, so;  // self-attention
  LinearLayerT<T> cq, ck, cv, co;  // cross-attention
  LinearLayerT<T> mlp_in, mlp_out;
  LayerNormParamsT<T> ln_self, ln_cross, ln_mlp;
  int64_t heads = 1;

  static DecoderLayerT create(ParameterRegistryT<T>& reg, const std::string& name, int64_t d,
                              int64_t heads, int64_t mlp_hidden, ParamGroup group, Rng& rng) {
    if (heads < 1 || d % heads != 0) {
      throw std::invalid_argument("decoder layer: embedding dim " + std::to_string(d) +
                                  " not divisible by head count " + std::to_string(heads));
    }
    DecoderLayerT layer;
    layer.sq = LinearLayerT<T>::create(reg, name + ".sq", d, d, group, rng);
    layer.sk = LinearLayerT<T>::create(reg, name + ".sk", d, d, group, rng, /*with_bias=*/false);
    layer.sv = LinearLayerT<T>::create(reg, name + ".sv", d, d, group, rng);
    layer.so = LinearLayerT<T>::create(reg, name + ".so", d, d, group, rng);
    layer.cq = LinearLayerT<T>::create(reg, name + ".cq", d, d, group, rng);
    layer.ck = LinearLayerT<T>::create(reg, name + ".ck", d, d, group, rng, /*with_bias=*/false);
    layer.cv = LinearLayerT<T>::create(reg, name + ".cv", d, d, group, rng);
    layer.co = LinearLayerT<T>::create(reg, name + ".co", d, d, group, rng);
    layer.mlp_in = LinearLayerT<T>::create(reg, name + ".mlp_in", d, mlp_hidden, group, rng);
    layer.mlp_out = LinearLayerT<T>::create(reg, name + ".mlp_out", mlp_hidden, d, group, rng);
    layer.ln_self = LayerNormParamsT<T>::create(reg, name + ".ln_self", d, group);
    layer.ln_cross = LayerNormParamsT<T>::create(reg, name + ".ln_cross", d, group);
    layer.ln_mlp = LayerNormParamsT<T>::create(reg, name + ".ln_mlp", d, group);
    layer.heads = heads;
    return layer;
  }

  TensorT<T> forward(const TensorT<T>& queries, const TensorT<T>& context) const {
    return forward_batched(queries, context, 1);
  }

  TensorT<T> forward_batched(const TensorT<T>& queries, const TensorT<T>& context,
                             int64_t batch) const {
    int64_t d = sq.weight.dim(0);
    if (queries.rank() != 2 || queries.dim(1) != d || context.rank() != 2 || context.dim(1) != d) {
      throw std::invalid_argument("decoder_forward: dimension mismatch, queries " +
                                  shape_str(queries.shape()) + " context " + shape_str(context.shape()));
    }
    auto h = ln_self.apply(queries);
    auto x1 = add(queries, so.apply(multihead_attention_batched(sq.apply(h), h, sk, sv, heads, batch)));
    auto h2 = ln_cross.apply(x1);
    auto x2 = add(x1, co.apply(multihead_attention_batched(cq.apply(h2), context, ck, cv, heads, batch)));
    auto h3 = ln_mlp.apply(x2);
    return add(x2, mlp_out.apply(gelu(mlp_in.apply(h3))));
  }
};

// Tiny ViT-style backbone: patchify, project, add positional embeddings,
// run `depth` encoder layers. Positions are added to patch tokens only.
template <typename T>
struct PatchBackboneT {
  int64_t patch = 4;
  int64_t channels = 0;
  int64_t height = 0;
  int64_t width = 0;
  int64_t dim = 0;
  LinearLayerT<T> proj;
  TensorT<T> pos;  // [num_patches, d]
  std::vector<EncoderLayerT<T>> layers;

  int64_t grid_h() const { return height / patch; }
  int64_t grid_w() const { return width / patch; }
  int64_t num_tokens() const { return grid_h() * grid_w(); }

  static PatchBackboneT create(ParameterRegistryT<T>& reg, const std::string& name, int64_t channels,
                               int64_t height, int64_t width, int64_t patch, int64_t d, int64_t depth,
                               int64_t heads, int64_t mlp_hidden, ParamGroup group, Rng& rng) {
    if (patch < 1 || height % patch != 0 || width % patch != 0) {
      throw std::invalid_argument("patch_embed: image " + std::to_string(height) + "x" +
                                  std::to_string(width) + " not divisible by patch " +
                                  std::to_string(patch));
    }
    PatchBackboneT bb;
    bb.patch = patch;
    bb.channels = channels;
    bb.height = height;
    bb.width = width;
    bb.dim = d;
    bb.proj = LinearLayerT<T>::create(reg, name + ".proj", channels * patch * patch, d, group, rng);
    bb.pos = reg.add(name + ".pos", normal_init<T>(rng, {bb.num_tokens(), d}), group);
    for (int64_t i = 0; i < depth; ++i) {
      bb.layers.push_back(
          EncoderLayerT<T>::create(reg, name + ".enc" + std::to_string(i), d, heads, mlp_hidden, group, rng));
    }
    return bb;
  }

  // image is data, not a differentiable input; patch extraction happens
  // outside the graph
  TensorT<T> patch_tokens(const TensorT<T>& image) const {
    if (image.rank() != 3 || image.dim(0) != channels || image.dim(1) != height ||
        image.dim(2) != width) {
      throw std::invalid_argument("patch_embed: expected image [" + std::to_string(channels) + "," +
                                  std::to_string(height) + "," + std::to_string(width) + "], got " +
                                  shape_str(image.shape()));
    }
    int64_t gh = grid_h(), gw = grid_w();
    int64_t in_dim = channels * patch * patch;
    std::vector<T> patches(static_cast<size_t>(gh * gw * in_dim));
    const auto& img = image.data();
    for (int64_t gy = 0; gy < gh; ++gy) {
      for (int64_t gx = 0; gx < gw; ++gx) {
        T* row = patches.data() + (gy * gw + gx) * in_dim;
        for (int64_t c = 0; c < channels; ++c) {
          for (int64_t dy = 0; dy < patch; ++dy) {
            for (int64_t dx = 0; dx < patch; ++dx) {
              row[c * patch * patch + dy * patch + dx] =
                  img[static_cast<size_t>(c * height * width + (gy * patch + dy) * width +
                                          (gx * patch + dx))];
            }
          }
        }
      }
    }
    return TensorT<T>::from_data({gh * gw, in_dim}, std::move(patches));
  }

  TensorT<T> forward(const TensorT<T>& image) const {
    auto tokens = add(proj.apply(patch_tokens(image)), pos);
    for (const auto& layer : layers) tokens = layer.forward(tokens);
    return tokens;
  }

  // stack of images processed as one graph: returns [batch*num_tokens, d]
  TensorT<T> forward_batched(const std::vector<TensorT<T>>& images) const {
    int64_t batch = static_cast<int64_t>(images.size());
    std::vector<TensorT<T>> patches;
    patches.reserve(images.size());
    std::vector<TensorT<T>> pos_tiles(images.size(), pos);
    for (const auto& image : images) patches.push_back(patch_tokens(image));
    auto tokens = add(proj.apply(concat_rows(patches)), concat_rows(pos_tiles));
    for (const auto& layer : layers) tokens = layer.forward_batched(tokens, batch);
    return tokens;
  }
};

template <typename T>
TensorT<T> encoder_forward(const TensorT<T>& tokens, const EncoderLayerT<T>& layer) {
  return layer.forward(tokens);
}

template <typename T>
TensorT<T> decoder_forward(const TensorT<T>& queries, const TensorT<T>& context,
                           const DecoderLayerT<T>& layer) {
  return layer.forward(queries, context);
}

template <typename T>
TensorT<T> patch_embed(const TensorT<T>& image, const PatchBackboneT<T>& backbone) {
  return backbone.forward(image);
}

template <typename T>
TensorT<T> global_average_pool(const TensorT<T>& tokens) {
  if (tokens.rank() != 2 || tokens.dim(0) < 1) {
    throw std::invalid_argument("global_average_pool: expected non-empty [n,d], got " +
                                shape_str(tokens.shape()));
  }
  return reduce_mean(tokens, 0);
}

// Non-overlapping factor x factor average pooling on the token grid,
// expressed as one constant pooling matrix so it stays differentiable.
template <typename T>
TensorT<T> downsample_tokens(const TensorT<T>& tokens, int64_t grid_h, int64_t grid_w,
                             int64_t factor) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid_h * grid_w) {
    throw std::invalid_argument("downsample_tokens: token count " + shape_str(tokens.shape()) +
                                " does not match grid " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w));
  }
  if (factor < 1 || grid_h % factor != 0 || grid_w % factor != 0) {
    throw std::invalid_argument("downsample_tokens: grid " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w) + " not divisible by factor " +
                                std::to_string(factor));
  }
  if (factor == 1) return tokens;
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
  auto pool_matrix = TensorT<T>::from_data({oh * ow, n}, std::move(pool));
  return matmul(pool_matrix, tokens);
}

}  // namespace rankseg
