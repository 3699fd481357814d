#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sedeg/tensor.hpp"

namespace sedeg {

// Ordered (canonical name, parameter) pairs. Order is the serialization order.
using ParamMap = std::vector<std::pair<std::string, Tensor>>;

int64_t param_count(const ParamMap& params);
void set_trainable(ParamMap& params, bool trainable);
void zero_grads(ParamMap& params);
// names of parameters that currently hold a gradient
std::vector<std::string> params_with_grad(const ParamMap& params);

struct LinearLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    void init(int in, int out, Rng& rng, double stddev = 0.02);
    Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
    void collect(const std::string& prefix, ParamMap& out) const;
    LinearLayer clone() const;
    bool initialized() const { return weight.defined(); }
};

struct LayerNormLayer {
    Tensor gamma;
    Tensor beta;

    void init(int dim);
    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
    void collect(const std::string& prefix, ParamMap& out) const;
    LayerNormLayer clone() const;
};

struct MlpBlock {
    LinearLayer fc1;
    LinearLayer fc2;

    void init(int dim, int hidden, Rng& rng);
    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
    void collect(const std::string& prefix, ParamMap& out) const;
    MlpBlock clone() const;
};

// Multi-head scaled dot-product self-attention over [batch, tokens, dim].
struct SelfAttention {
    LinearLayer qkv;  // [E, 3E]
    LinearLayer proj;
    int num_heads = 0;

    void init(int dim, int heads, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    SelfAttention clone() const;
};

// One query token attends over a token sequence: [B,1,E] x [B,T,E] -> [B,1,E].
struct CrossAttention {
    LinearLayer q;   // [E, E]
    LinearLayer kv;  // [E, 2E]
    LinearLayer proj;
    int num_heads = 0;

    void init(int dim, int heads, Rng& rng);
    Tensor forward(const Tensor& query, const Tensor& tokens) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    CrossAttention clone() const;
};

// Pre-norm transformer encoder block (SAB): x + attn(LN(x)), then MLP.
struct SelfAttentionBlock {
    LayerNormLayer norm1;
    SelfAttention attn;
    LayerNormLayer norm2;
    MlpBlock mlp;

    void init(int dim, int heads, int mlp_hidden, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    SelfAttentionBlock clone() const;
};

// Pre-norm cross-attention block (TAB): a task token queries the patch
// tokens and is read out as that task's embedding.
struct TaskAttentionBlock {
    LayerNormLayer norm_q;
    LayerNormLayer norm_kv;
    CrossAttention attn;
    LayerNormLayer norm2;
    MlpBlock mlp;

    void init(int dim, int heads, int mlp_hidden, Rng& rng);
    // token: [E], tokens: [B,P,E] -> [B,E]
    Tensor forward(const Tensor& token, const Tensor& tokens) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    TaskAttentionBlock clone() const;
};

}  // namespace sedeg
