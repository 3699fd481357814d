#include "sedeg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace sedeg {

int64_t param_count(const ParamMap& params) {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

void set_trainable(ParamMap& params, bool trainable) {
    for (auto& [name, t] : params) t.set_requires_grad(trainable);
}

void zero_grads(ParamMap& params) {
    for (auto& [name, t] : params) t.zero_grad();
}

std::vector<std::string> params_with_grad(const ParamMap& params) {
    std::vector<std::string> out;
    for (const auto& [name, t] : params)
        if (t.has_grad()) out.push_back(name);
    return out;
}

// ---------------------------------------------------------------------------

void LinearLayer::init(int in, int out, Rng& rng, double stddev) {
    weight = Tensor::param({in, out}, rng, stddev);
    bias = Tensor::zeros({out});
    bias.set_requires_grad(true);
}

void LinearLayer::collect(const std::string& prefix, ParamMap& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

LinearLayer LinearLayer::clone() const { return {weight.clone(), bias.clone()}; }

void LayerNormLayer::init(int dim) {
    gamma = Tensor::full({dim}, 1.0);
    gamma.set_requires_grad(true);
    beta = Tensor::zeros({dim});
    beta.set_requires_grad(true);
}

void LayerNormLayer::collect(const std::string& prefix, ParamMap& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

LayerNormLayer LayerNormLayer::clone() const { return {gamma.clone(), beta.clone()}; }

void MlpBlock::init(int dim, int hidden, Rng& rng) {
    fc1.init(dim, hidden, rng);
    fc2.init(hidden, dim, rng);
}

void MlpBlock::collect(const std::string& prefix, ParamMap& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
}

MlpBlock MlpBlock::clone() const { return {fc1.clone(), fc2.clone()}; }

// ---------------------------------------------------------------------------

namespace {

// [B,T,E] -> [B*H, T, D]
Tensor split_heads(const Tensor& x, int heads) {
    const int B = x.dim(0), T = x.dim(1), E = x.dim(2);
    const int D = E / heads;
    Tensor y = swap_dims_1_2(reshape(x, {B, T, heads, D}));  // [B,H,T,D]
    return reshape(y, {B * heads, T, D});
}

// [B*H, T, D] -> [B,T,E]
Tensor merge_heads(const Tensor& x, int batch, int heads) {
    const int T = x.dim(1), D = x.dim(2);
    Tensor y = swap_dims_1_2(reshape(x, {batch, heads, T, D}));  // [B,T,H,D]
    return reshape(y, {batch, T, heads * D});
}

}  // namespace

void SelfAttention::init(int dim, int heads, Rng& rng) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    num_heads = heads;
    qkv.init(dim, 3 * dim, rng);
    proj.init(dim, dim, rng);
}

Tensor SelfAttention::forward(const Tensor& x) const {
    const int B = x.dim(0), T = x.dim(1), E = x.dim(2);
    const int D = E / num_heads;
    Tensor qkv_out = qkv.forward(x);  // [B,T,3E]
    Tensor q = split_heads(slice_last(qkv_out, 0, E), num_heads);
    Tensor k = split_heads(slice_last(qkv_out, E, 2 * E), num_heads);
    Tensor v = split_heads(slice_last(qkv_out, 2 * E, 3 * E), num_heads);
    Tensor attn = softmax_last(scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(D))));
    Tensor out = merge_heads(bmm(attn, v), B, num_heads);  // [B,T,E]
    return proj.forward(out);
}

void SelfAttention::collect(const std::string& prefix, ParamMap& out) const {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
}

SelfAttention SelfAttention::clone() const { return {qkv.clone(), proj.clone(), num_heads}; }

void CrossAttention::init(int dim, int heads, Rng& rng) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    num_heads = heads;
    q.init(dim, dim, rng);
    kv.init(dim, 2 * dim, rng);
    proj.init(dim, dim, rng);
}

Tensor CrossAttention::forward(const Tensor& query, const Tensor& tokens) const {
    const int B = tokens.dim(0), E = tokens.dim(2);
    const int D = E / num_heads;
    Tensor qh = split_heads(q.forward(query), num_heads);  // [B*H, 1, D]
    Tensor kv_out = kv.forward(tokens);                    // [B,T,2E]
    Tensor k = split_heads(slice_last(kv_out, 0, E), num_heads);
    Tensor v = split_heads(slice_last(kv_out, E, 2 * E), num_heads);
    Tensor attn = softmax_last(scale(bmm_nt(qh, k), 1.0 / std::sqrt(static_cast<double>(D))));
    Tensor out = merge_heads(bmm(attn, v), B, num_heads);  // [B,1,E]
    return proj.forward(out);
}

void CrossAttention::collect(const std::string& prefix, ParamMap& out) const {
    q.collect(prefix + ".q", out);
    kv.collect(prefix + ".kv", out);
    proj.collect(prefix + ".proj", out);
}

CrossAttention CrossAttention::clone() const {
    return {q.clone(), kv.clone(), proj.clone(), num_heads};
}

// ---------------------------------------------------------------------------

void SelfAttentionBlock::init(int dim, int heads, int mlp_hidden, Rng& rng) {
    norm1.init(dim);
    attn.init(dim, heads, rng);
    norm2.init(dim);
    mlp.init(dim, mlp_hidden, rng);
}

Tensor SelfAttentionBlock::forward(const Tensor& x) const {
    Tensor h = add(x, attn.forward(norm1.forward(x)));
    return add(h, mlp.forward(norm2.forward(h)));
}

void SelfAttentionBlock::collect(const std::string& prefix, ParamMap& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
}

SelfAttentionBlock SelfAttentionBlock::clone() const {
    return {norm1.clone(), attn.clone(), norm2.clone(), mlp.clone()};
}

void TaskAttentionBlock::init(int dim, int heads, int mlp_hidden, Rng& rng) {
    norm_q.init(dim);
    norm_kv.init(dim);
    attn.init(dim, heads, rng);
    norm2.init(dim);
    mlp.init(dim, mlp_hidden, rng);
}

Tensor TaskAttentionBlock::forward(const Tensor& token, const Tensor& tokens) const {
    const int B = tokens.dim(0);
    const int E = tokens.dim(2);
    Tensor query = expand_leading(reshape(token, {1, 1, E}), B);  // [B,1,E]
    Tensor h = add(query, attn.forward(norm_q.forward(query), norm_kv.forward(tokens)));
    h = add(h, mlp.forward(norm2.forward(h)));
    return reshape(h, {B, E});
}

void TaskAttentionBlock::collect(const std::string& prefix, ParamMap& out) const {
    norm_q.collect(prefix + ".norm_q", out);
    norm_kv.collect(prefix + ".norm_kv", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
}

TaskAttentionBlock TaskAttentionBlock::clone() const {
    return {norm_q.clone(), norm_kv.clone(), attn.clone(), norm2.clone(), mlp.clone()};
}

}  // namespace sedeg
