#include "tmc/attention.hpp"

#include <cmath>

#include "tmc/errors.hpp"

namespace tmc {

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    const int r = q.ndim();
    if (r != 2 && r != 3)
        throw ConfigError("attention: expected rank 2 or 3 queries, got " +
                          shape_str(q.shape()));
    if (k.ndim() != r || v.ndim() != r)
        throw ConfigError("attention: Q/K/V rank mismatch");
    const std::int64_t d_k = q.dim(-1);
    if (d_k == 0) throw ConfigError("attention: d_k = 0");
    if (k.dim(-1) != d_k)
        throw ConfigError("attention: key width " + std::to_string(k.dim(-1)) +
                          " != query width " + std::to_string(d_k));
    if (v.dim(-2) != k.dim(-2))
        throw ConfigError("attention: value rows " + std::to_string(v.dim(-2)) +
                          " != key rows " + std::to_string(k.dim(-2)));
    auto scores = scale(matmul(q, transpose(k, -1, -2)), 1.0 / std::sqrt(static_cast<double>(d_k)));
    return matmul(softmax_lastaxis(scores), v);
}

MultiHeadAttention::MultiHeadAttention(std::int64_t d_model_, std::int64_t num_heads_, Rng& rng)
    : d_model(d_model_), num_heads(num_heads_) {
    if (num_heads <= 0 || d_model <= 0 || d_model % num_heads != 0)
        throw ConfigError("multi-head attention: d_model " + std::to_string(d_model) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    wq = Dense(d_model, d_model, rng);
    wk = Dense(d_model, d_model, rng);
    wv = Dense(d_model, d_model, rng);
    wo = Dense(d_model, d_model, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& x) const {
    const bool batched = x.ndim() == 3;
    if (!batched && x.ndim() != 2)
        throw ConfigError("multi-head attention: expected [N,T,d] or [T,d], got " +
                          shape_str(x.shape()));
    Tensor in = batched ? x : reshape(x, {1, x.dim(0), x.dim(1)});
    if (in.dim(2) != d_model)
        throw ConfigError("multi-head attention: input width " + std::to_string(in.dim(2)) +
                          " != d_model " + std::to_string(d_model));
    const std::int64_t d_k = d_model / num_heads;
    Tensor q = wq(in), k = wk(in), v = wv(in);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(num_heads));
    for (std::int64_t h = 0; h < num_heads; ++h) {
        auto qh = slice(q, 2, h * d_k, d_k);
        auto kh = slice(k, 2, h * d_k, d_k);
        auto vh = slice(v, 2, h * d_k, d_k);
        heads.push_back(scaled_dot_product_attention(qh, kh, vh));
    }
    Tensor out = wo(concat(heads, 2));
    return batched ? out : reshape(out, {out.dim(1), out.dim(2)});
}

void MultiHeadAttention::collect(const std::string& prefix, std::vector<StateEntry>& out) {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
}

EncoderBlock::EncoderBlock(std::int64_t d_model, std::int64_t num_heads, std::int64_t d_ff,
                           double residual_dropout_, Rng& rng)
    : mha(d_model, num_heads, rng),
      ff1(d_model, d_ff, rng),
      ff2(d_ff, d_model, rng),
      ln1(d_model),
      ln2(d_model),
      residual_dropout(residual_dropout_) {}

Tensor EncoderBlock::operator()(const Tensor& x, Mode mode, Rng& rng) const {
    Tensor y = ln1(add(x, dropout(mha(x), residual_dropout, mode, rng)));
    Tensor ff = ff2(relu(ff1(y)));
    return ln2(add(y, dropout(ff, residual_dropout, mode, rng)));
}

void EncoderBlock::collect(const std::string& prefix, std::vector<StateEntry>& out) {
    mha.collect(prefix + ".mha", out);
    ff1.collect(prefix + ".ff1", out);
    ff2.collect(prefix + ".ff2", out);
    ln1.collect(prefix + ".ln1", out);
    ln2.collect(prefix + ".ln2", out);
}

}  // namespace tmc
