#pragma once

#include <utility>
#include <vector>

#include "sedeg/nn.hpp"

namespace sedeg {

struct ModelConfig {
    int num_sab = 2;
    int num_tab = 1;
    int num_heads = 4;
    int embed_dim = 64;
    int input_size = 32;
    int patch_size = 4;
    int channels = 3;

    static constexpr int kMlpRatio = 4;

    // full-scale configuration the architecture family is built around
    static ModelConfig paper_scale() { return {5, 1, 12, 384, 32, 4, 3}; }

    void validate() const;
    int num_patches() const { return (input_size / patch_size) * (input_size / patch_size); }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int mlp_hidden() const { return kMlpRatio * embed_dim; }

    bool operator==(const ModelConfig&) const = default;
};

// expected trainable-value count of one encoder, derived from the config alone
int64_t encoder_param_count(const ModelConfig& cfg);

// [B,H,W,C] images -> [B,P,patch_dim] rows, row-major over (py,px,dy,dx,c).
// Pure data movement; images carry no gradient.
Tensor extract_patches(const Tensor& images, const ModelConfig& cfg);

struct Encoder {
    ModelConfig config;
    LinearLayer patch_embed;  // [patch_dim, E]
    Tensor pos_embed;         // [P, E]
    std::vector<SelfAttentionBlock> sabs;

    void init(const ModelConfig& cfg, Rng& rng);
    // images [B, input, input, channels] -> patch tokens [B, P, E]
    Tensor forward(const Tensor& images) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    ParamMap parameters() const;
    int64_t param_count() const;
    Encoder clone() const;
    void set_trainable(bool trainable);
};

struct Decoder {
    TaskAttentionBlock tab;
    std::vector<Tensor> task_tokens;    // task i at index i-1, each [E]
    std::vector<LinearLayer> heads;     // heads[i-1]: E -> classes introduced by task i
    std::vector<int> classes_per_task;  // class-introduction order
    int embed_dim = 0;
    int num_heads = 0;

    void init(const ModelConfig& cfg, Rng& rng);
    void add_task(int classes, Rng& rng);
    int tasks() const { return static_cast<int>(task_tokens.size()); }
    int total_classes() const;
    // TAB readout for task i over patch tokens z: (embedding [B,E], logits [B,k_i])
    std::pair<Tensor, Tensor> decode_task(const Tensor& z, int task_index) const;
    Tensor task_embedding(const Tensor& z, int task_index) const;
    // concatenated per-task logits in class-introduction order: [B, total_classes]
    Tensor full_logits_from(const Tensor& z) const;
    void collect(const std::string& prefix, ParamMap& out) const;
    Decoder clone() const;
    void set_trainable(bool trainable);
    // decoder-enhancement regime: TAB and the current task's token/head are
    // trainable, every older token/head is frozen
    void configure_stage1(int current_task);
};

// Deployable model: one encoder + the shared decoder.
struct SedegModel {
    Encoder encoder;
    Decoder decoder;

    void init(const ModelConfig& cfg, Rng& rng);
    Tensor full_logits(const Tensor& images) const;
    ParamMap parameters() const;
    SedegModel clone() const;
};

// Stage-1 feature boosting: frozen copy of the previous encoder plus a
// trainable supplementary encoder, fused by channel-wise addition, with an
// auxiliary all-seen-classes head on the supplementary branch.
struct EnsembledEncoder {
    Encoder old_encoder;  // frozen
    Encoder sup_encoder;  // trainable
    LinearLayer aux_head;  // [P*E, total_classes]

    void init(const Encoder& previous, int total_classes, bool warm_start, Rng& rng);
    // fused features [B,P,E]
    Tensor features(const Tensor& images) const;
    ParamMap parameters() const;
    int64_t encoder_value_count() const;  // both encoders, aux head excluded
};

// Stage-1 model as deployed for evaluation: ensembled features + decoder.
struct EnsembledModel {
    EnsembledEncoder ens;
    Decoder decoder;

    Tensor full_logits(const Tensor& images) const;
    ParamMap parameters() const;
};

// --- spec operations -------------------------------------------------------

Tensor encode(const Encoder& encoder, const Tensor& images);
// channel-wise addition of two feature maps of identical shape
Tensor fuse(const Tensor& z_old, const Tensor& z_sup);
std::pair<Tensor, Tensor> decode_task(const Decoder& decoder, const Tensor& z, int task_index);
Tensor full_logits(const SedegModel& model, const Tensor& images);
// flatten supplementary features over (patch, channel) and apply the linear head
Tensor aux_logits(const EnsembledEncoder& ens, const Tensor& images);
Encoder clone_frozen(const Encoder& encoder);

}  // namespace sedeg
