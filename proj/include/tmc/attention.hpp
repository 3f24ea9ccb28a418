#pragma once

#include "tmc/nn.hpp"
#include "tmc/tensor.hpp"

namespace tmc {

// softmax(Q K^T / sqrt(d_k)) V with full (unmasked) visibility.
// Q: [n, d_k] or [N, n, d_k]; K: [m, d_k]/[N, m, d_k]; V: [m, d_v]/[N, m, d_v].
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Self-attention with h parallel heads on learned projections of x.
struct MultiHeadAttention {
    std::int64_t d_model = 0;
    std::int64_t num_heads = 0;
    Dense wq, wk, wv, wo;

    MultiHeadAttention() = default;
    MultiHeadAttention(std::int64_t d_model, std::int64_t num_heads, Rng& rng);

    // x: [N, T, d_model] (or [T, d_model], treated as batch of one).
    Tensor operator()(const Tensor& x) const;

    void collect(const std::string& prefix, std::vector<StateEntry>& out);
};

// Post-norm transformer encoder block (Add & Norm ordering):
//   y = LN(x + Dropout(MHA(x)));  z = LN(y + Dropout(FFN(y)))
// with FFN(y) = relu(y W1 + b1) W2 + b2.
struct EncoderBlock {
    MultiHeadAttention mha;
    Dense ff1, ff2;
    LayerNormLayer ln1, ln2;
    double residual_dropout = 0.0;

    EncoderBlock() = default;
    EncoderBlock(std::int64_t d_model, std::int64_t num_heads, std::int64_t d_ff,
                 double residual_dropout, Rng& rng);

    Tensor operator()(const Tensor& x, Mode mode, Rng& rng) const;

    void collect(const std::string& prefix, std::vector<StateEntry>& out);
};

}  // namespace tmc
