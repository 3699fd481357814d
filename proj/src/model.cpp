#include "sedeg/model.hpp"

#include <string>

#include "sedeg/errors.hpp"

namespace sedeg {

void ModelConfig::validate() const {
    if (num_sab < 1) throw ConfigError("ModelConfig: num_sab must be >= 1");
    if (num_tab != 1) throw ConfigError("ModelConfig: num_tab must be 1");
    if (num_heads < 1 || embed_dim < 1) throw ConfigError("ModelConfig: bad dims");
    if (input_size < 1 || patch_size < 1 || channels < 1) throw ConfigError("ModelConfig: bad sizes");
    if (input_size % patch_size != 0)
        throw ConfigError("ModelConfig: input_size " + std::to_string(input_size) +
                          " not divisible by patch_size " + std::to_string(patch_size));
    if (embed_dim % num_heads != 0)
        throw ConfigError("ModelConfig: embed_dim " + std::to_string(embed_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
}

int64_t encoder_param_count(const ModelConfig& cfg) {
    const int64_t e = cfg.embed_dim;
    const int64_t hidden = cfg.mlp_hidden();
    const int64_t patch_embed = static_cast<int64_t>(cfg.patch_dim()) * e + e;
    const int64_t pos = static_cast<int64_t>(cfg.num_patches()) * e;
    const int64_t per_sab = 2 * e                  // norm1
                            + e * 3 * e + 3 * e    // qkv
                            + e * e + e            // proj
                            + 2 * e                // norm2
                            + e * hidden + hidden  // fc1
                            + hidden * e + e;      // fc2
    return patch_embed + pos + cfg.num_sab * per_sab;
}

Tensor extract_patches(const Tensor& images, const ModelConfig& cfg) {
    if (images.ndim() != 4)
        throw ConfigError("extract_patches: expected [batch,H,W,C], got " +
                          shape_str(images.shape()));
    const int B = images.dim(0), H = images.dim(1), W = images.dim(2), C = images.dim(3);
    if (H != cfg.input_size || W != cfg.input_size || C != cfg.channels)
        throw ConfigError("extract_patches: image " + shape_str(images.shape()) +
                          " does not match config input_size=" + std::to_string(cfg.input_size) +
                          " channels=" + std::to_string(cfg.channels));
    const int ps = cfg.patch_size;
    const int side = H / ps;
    const int P = side * side;
    const int pd = ps * ps * C;
    const auto& iv = images.values();
    std::vector<double> v(static_cast<size_t>(B) * P * pd);
    for (int b = 0; b < B; ++b)
        for (int py = 0; py < side; ++py)
            for (int px = 0; px < side; ++px) {
                const int p = py * side + px;
                double* dst = &v[(static_cast<int64_t>(b) * P + p) * pd];
                for (int dy = 0; dy < ps; ++dy) {
                    const int y = py * ps + dy;
                    const double* src = &iv[((static_cast<int64_t>(b) * H + y) * W + px * ps) * C];
                    std::copy(src, src + static_cast<int64_t>(ps) * C, dst + static_cast<int64_t>(dy) * ps * C);
                }
            }
    return Tensor::from({B, P, pd}, std::move(v));
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

void Encoder::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    config = cfg;
    patch_embed.init(cfg.patch_dim(), cfg.embed_dim, rng);
    pos_embed = Tensor::param({cfg.num_patches(), cfg.embed_dim}, rng);
    sabs.assign(static_cast<size_t>(cfg.num_sab), {});
    for (auto& sab : sabs) sab.init(cfg.embed_dim, cfg.num_heads, cfg.mlp_hidden(), rng);
}

Tensor Encoder::forward(const Tensor& images) const {
    Tensor patches = extract_patches(images, config);
    Tensor x = add_broadcast(patch_embed.forward(patches), pos_embed);
    for (const auto& sab : sabs) x = sab.forward(x);
    return x;
}

void Encoder::collect(const std::string& prefix, ParamMap& out) const {
    patch_embed.collect(prefix + ".patch_embed", out);
    out.emplace_back(prefix + ".pos_embed", pos_embed);
    for (size_t i = 0; i < sabs.size(); ++i)
        sabs[i].collect(prefix + ".sab." + std::to_string(i), out);
}

ParamMap Encoder::parameters() const {
    ParamMap out;
    collect("encoder", out);
    return out;
}

int64_t Encoder::param_count() const { return sedeg::param_count(parameters()); }

Encoder Encoder::clone() const {
    Encoder copy;
    copy.config = config;
    copy.patch_embed = patch_embed.clone();
    copy.pos_embed = pos_embed.clone();
    copy.sabs.reserve(sabs.size());
    for (const auto& sab : sabs) copy.sabs.push_back(sab.clone());
    return copy;
}

void Encoder::set_trainable(bool trainable) {
    ParamMap p = parameters();
    sedeg::set_trainable(p, trainable);
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

void Decoder::init(const ModelConfig& cfg, Rng& rng) {
    embed_dim = cfg.embed_dim;
    num_heads = cfg.num_heads;
    tab.init(cfg.embed_dim, cfg.num_heads, cfg.mlp_hidden(), rng);
    task_tokens.clear();
    heads.clear();
    classes_per_task.clear();
}

void Decoder::add_task(int classes, Rng& rng) {
    if (classes < 1) throw ConfigError("Decoder::add_task: classes must be >= 1");
    task_tokens.push_back(Tensor::param({embed_dim}, rng));
    heads.emplace_back();
    heads.back().init(embed_dim, classes, rng);
    classes_per_task.push_back(classes);
}

int Decoder::total_classes() const {
    int n = 0;
    for (int c : classes_per_task) n += c;
    return n;
}

Tensor Decoder::task_embedding(const Tensor& z, int task_index) const {
    if (task_index < 1 || task_index > tasks())
        throw ConfigError("decode_task: task index " + std::to_string(task_index) +
                          " outside [1," + std::to_string(tasks()) + "]");
    return tab.forward(task_tokens[static_cast<size_t>(task_index - 1)], z);
}

std::pair<Tensor, Tensor> Decoder::decode_task(const Tensor& z, int task_index) const {
    Tensor e = task_embedding(z, task_index);
    Tensor logits = heads[static_cast<size_t>(task_index - 1)].forward(e);
    return {e, logits};
}

Tensor Decoder::full_logits_from(const Tensor& z) const {
    if (tasks() == 0) throw ConfigError("full_logits: model has no tasks");
    std::vector<Tensor> parts;
    parts.reserve(static_cast<size_t>(tasks()));
    for (int i = 1; i <= tasks(); ++i) parts.push_back(decode_task(z, i).second);
    return concat_last(parts);
}

void Decoder::collect(const std::string& prefix, ParamMap& out) const {
    tab.collect(prefix + ".tab", out);
    for (size_t i = 0; i < task_tokens.size(); ++i) {
        out.emplace_back(prefix + ".task_token." + std::to_string(i + 1), task_tokens[i]);
        heads[i].collect(prefix + ".head." + std::to_string(i + 1), out);
    }
}

Decoder Decoder::clone() const {
    Decoder copy;
    copy.embed_dim = embed_dim;
    copy.num_heads = num_heads;
    copy.tab = tab.clone();
    copy.classes_per_task = classes_per_task;
    copy.task_tokens.reserve(task_tokens.size());
    for (const auto& t : task_tokens) copy.task_tokens.push_back(t.clone());
    copy.heads.reserve(heads.size());
    for (const auto& h : heads) copy.heads.push_back(h.clone());
    return copy;
}

void Decoder::set_trainable(bool trainable) {
    ParamMap p;
    collect("decoder", p);
    sedeg::set_trainable(p, trainable);
}

void Decoder::configure_stage1(int current_task) {
    ParamMap tab_params;
    tab.collect("tab", tab_params);
    sedeg::set_trainable(tab_params, true);
    for (int i = 1; i <= tasks(); ++i) {
        const bool trainable = (i == current_task);
        task_tokens[static_cast<size_t>(i - 1)].set_requires_grad(trainable);
        heads[static_cast<size_t>(i - 1)].weight.set_requires_grad(trainable);
        heads[static_cast<size_t>(i - 1)].bias.set_requires_grad(trainable);
    }
}

// ---------------------------------------------------------------------------
// composed models
// ---------------------------------------------------------------------------

void SedegModel::init(const ModelConfig& cfg, Rng& rng) {
    encoder.init(cfg, rng);
    decoder.init(cfg, rng);
}

Tensor SedegModel::full_logits(const Tensor& images) const {
    return decoder.full_logits_from(encoder.forward(images));
}

ParamMap SedegModel::parameters() const {
    ParamMap out;
    encoder.collect("encoder", out);
    decoder.collect("decoder", out);
    return out;
}

SedegModel SedegModel::clone() const { return {encoder.clone(), decoder.clone()}; }

void EnsembledEncoder::init(const Encoder& previous, int total_classes, bool warm_start,
                            Rng& rng) {
    old_encoder = clone_frozen(previous);
    if (warm_start) {
        sup_encoder = previous.clone();
        sup_encoder.set_trainable(true);
    } else {
        sup_encoder.init(previous.config, rng);
    }
    const int flat = previous.config.num_patches() * previous.config.embed_dim;
    aux_head.init(flat, total_classes, rng);
}

Tensor EnsembledEncoder::features(const Tensor& images) const {
    return fuse(old_encoder.forward(images), sup_encoder.forward(images));
}

ParamMap EnsembledEncoder::parameters() const {
    ParamMap out;
    old_encoder.collect("ens.old_encoder", out);
    sup_encoder.collect("ens.sup_encoder", out);
    aux_head.collect("ens.aux_head", out);
    return out;
}

int64_t EnsembledEncoder::encoder_value_count() const {
    return old_encoder.param_count() + sup_encoder.param_count();
}

Tensor EnsembledModel::full_logits(const Tensor& images) const {
    return decoder.full_logits_from(ens.features(images));
}

ParamMap EnsembledModel::parameters() const {
    ParamMap out = ens.parameters();
    decoder.collect("decoder", out);
    return out;
}

// ---------------------------------------------------------------------------
// spec operations
// ---------------------------------------------------------------------------

Tensor encode(const Encoder& encoder, const Tensor& images) { return encoder.forward(images); }

Tensor fuse(const Tensor& z_old, const Tensor& z_sup) {
    if (z_old.shape() != z_sup.shape())
        throw ConfigError("fuse: shape mismatch " + shape_str(z_old.shape()) + " vs " +
                          shape_str(z_sup.shape()));
    return add(z_old, z_sup);
}

std::pair<Tensor, Tensor> decode_task(const Decoder& decoder, const Tensor& z, int task_index) {
    return decoder.decode_task(z, task_index);
}

Tensor full_logits(const SedegModel& model, const Tensor& images) {
    return model.full_logits(images);
}

Tensor aux_logits(const EnsembledEncoder& ens, const Tensor& images) {
    Tensor z_sup = ens.sup_encoder.forward(images);
    const int B = z_sup.dim(0);
    const int flat = z_sup.dim(1) * z_sup.dim(2);
    if (flat != ens.aux_head.weight.dim(0))
        throw ConfigError("aux_logits: flattened features " + std::to_string(flat) +
                          " do not match head input " + std::to_string(ens.aux_head.weight.dim(0)));
    return ens.aux_head.forward(reshape(z_sup, {B, flat}));
}

Encoder clone_frozen(const Encoder& encoder) {
    Encoder copy = encoder.clone();
    copy.set_trainable(false);
    return copy;
}

}  // namespace sedeg
