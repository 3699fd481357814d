#include "sedeg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sedeg/errors.hpp"

namespace sedeg {

Method method_from_string(const std::string& name) {
    if (name == "sedeg") return Method::sedeg;
    if (name == "dytox") return Method::dytox_baseline;
    if (name == "finetune") return Method::finetune_baseline;
    throw ConfigError("unknown method '" + name + "' (expected sedeg|dytox|finetune)");
}

std::string method_name(Method method) {
    switch (method) {
        case Method::sedeg: return "sedeg";
        case Method::dytox_baseline: return "dytox";
        case Method::finetune_baseline: return "finetune";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (bootstrap_epochs < 1 || stage1_epochs < 1 || stage2_epochs < 1 || finetune_epochs < 1)
        throw ConfigError("TrainConfig: epochs must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("TrainConfig: learning_rate must be > 0");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (optimizer != "adamw") throw ConfigError("TrainConfig: unknown optimizer " + optimizer);
    loss.validate();
}

Trainer::Trainer(ModelConfig mc, TrainConfig tc, Method method, int memory_capacity)
    : mc_(mc), tc_(tc), method_(method), buffer_(memory_capacity, tc.seed) {
    mc_.validate();
    tc_.validate();
    if (memory_capacity < 0) throw ConfigError("Trainer: memory capacity must be >= 0");
}

int Trainer::total_classes() const {
    int n = 0;
    for (int c : classes_per_task_) n += c;
    return n;
}

Tensor Trainer::deployed_logits(const Tensor& images) const {
    NoGradGuard ng;
    return model_.full_logits(images);
}

Trainer::LogitsFn Trainer::deployed_fn() const {
    return [this](const Tensor& images) { return deployed_logits(images); };
}

void Trainer::check_task_input(const TaskInput& data, int expected_first_class) const {
    if (!data.train || data.train->size() == 0)
        throw ConfigError("task input: empty training set");
    if (data.num_classes < 1) throw ConfigError("task input: num_classes must be >= 1");
    if (data.first_class != expected_first_class)
        throw ConfigError("task input: first_class " + std::to_string(data.first_class) +
                          ", expected " + std::to_string(expected_first_class));
    for (int label : data.train->labels)
        if (label < data.first_class || label >= data.first_class + data.num_classes)
            throw ConfigError("task input: label " + std::to_string(label) +
                              " outside this task's class range");
}

// ---------------------------------------------------------------------------
// shared stage loop
// ---------------------------------------------------------------------------

void Trainer::train_stage(const std::string& stage, int task, int epochs, MergedLoader& loader,
                          ParamMap& params, const ParamMap& frozen, double alpha,
                          const LossBuilder& build_loss) {
    AdamW opt({tc_.learning_rate, 0.9, 0.999, 1e-8, tc_.weight_decay});
    FreezeAudit audit;
    audit.task = task;
    audit.stage = stage;
    std::vector<uint64_t> baseline;
    baseline.reserve(frozen.size());
    for (const auto& [name, p] : frozen) baseline.push_back(p.value_hash());

    const int total_steps = epochs * loader.batches_per_epoch();
    int gstep = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (const auto& batch : loader.epoch(epoch)) {
            for (int64_t id : batch.sample_ids) train_ids_.insert(id);

            StepTrace trace;
            trace.task = task;
            trace.stage = stage;
            trace.epoch = epoch;
            trace.step = gstep;
            trace.alpha = alpha;
            const double lr_scale = cosine_lr_scale(gstep, total_steps);
            trace.lr = tc_.learning_rate * lr_scale;

            Tensor total = build_loss(batch, trace);
            trace.total = total.item();
            if (!std::isfinite(trace.total))
                throw std::runtime_error(stage + ": non-finite loss at step " +
                                         std::to_string(gstep));

            zero_grads(params);
            backward(total);
            if (step_observer) step_observer(stage, gstep, params);
            opt.step(params, lr_scale);
            traces_.push_back(trace);
            ++gstep;
        }
        if (tc_.audit_freeze) {
            for (size_t i = 0; i < frozen.size(); ++i) {
                ++audit.checks;
                if (frozen[i].second.value_hash() != baseline[i])
                    audit.violations.push_back(frozen[i].first + " changed during " + stage +
                                               " epoch " + std::to_string(epoch));
            }
        }
    }
    // leave no stale gradients behind: anything appearing on these
    // parameters later means some other stage touched them
    zero_grads(params);
    audits_.push_back(std::move(audit));
}

// ---------------------------------------------------------------------------
// task 1 bootstrap
// ---------------------------------------------------------------------------

void Trainer::bootstrap_task1(const TaskInput& data) {
    if (tasks_seen_ != 0)
        throw ConfigError("bootstrap_task1: model already trained on " +
                          std::to_string(tasks_seen_) + " tasks");
    check_task_input(data, 0);

    Rng rng(tc_.seed);
    {
        Rng r = rng.child(1);
        model_.init(mc_, r);
    }
    {
        Rng r = rng.child(2);
        model_.decoder.add_task(data.num_classes, r);
    }
    model_.encoder.set_trainable(true);
    model_.decoder.set_trainable(true);

    ParamMap params = model_.parameters();
    MergedLoader loader(buffer_, *data.train, tc_.batch_size, rng.child(5).seed());
    const std::string stage = method_ == Method::finetune_baseline ? "train" : "bootstrap";
    train_stage(stage, 1, tc_.bootstrap_epochs, loader, params, {}, 0.0,
                [&](const MergedLoader::Batch& batch, StepTrace& trace) {
                    Tensor o = model_.full_logits(batch.images);
                    Tensor bce = loss_aux(o, batch.labels);
                    trace.bc = bce.item();
                    Stage1Parts parts;
                    parts.bc = bce;
                    LossConfig cfg = tc_.loss;
                    cfg.alpha = 0.0;
                    return stage1_loss(parts, cfg);
                });
    finish_task(1, data, method_ != Method::finetune_baseline);
}

// ---------------------------------------------------------------------------
// stage 1: encoder ensembling + decoder enhancement
// ---------------------------------------------------------------------------

EnsembledModel Trainer::stage1(const SedegModel& old_model, const TaskInput& data) {
    const int t = old_model.decoder.tasks() + 1;
    if (t < 2) throw ConfigError("stage1: old model has no tasks; task 1 uses bootstrap_task1");
    const int old_classes = old_model.decoder.total_classes();
    check_task_input(data, old_classes);
    const int total = old_classes + data.num_classes;

    Rng rng(tc_.seed);
    EnsembledModel ens_model;
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 3);
        ens_model.ens.init(old_model.encoder, total, tc_.warm_start_sup, r);
    }
    ens_model.decoder = old_model.decoder.clone();
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 2);
        ens_model.decoder.add_task(data.num_classes, r);
    }
    ens_model.decoder.configure_stage1(t);

    LinearLayer div_head;
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 4);
        div_head.init(mc_.embed_dim, data.num_classes + 1, r);
    }

    ParamMap params = ens_model.parameters();
    div_head.collect("div_head", params);

    ParamMap frozen;
    ens_model.ens.old_encoder.collect("ens.old_encoder", frozen);
    for (int i = 1; i < t; ++i) {
        frozen.emplace_back("decoder.task_token." + std::to_string(i),
                            ens_model.decoder.task_tokens[static_cast<size_t>(i - 1)]);
        ens_model.decoder.heads[static_cast<size_t>(i - 1)].collect(
            "decoder.head." + std::to_string(i), frozen);
    }

    const std::vector<int64_t> counts = dense_counts(class_counts(buffer_, *data.train), total);
    const double alpha = static_cast<double>(old_classes) / static_cast<double>(total);
    LossConfig loss_cfg = tc_.loss;
    loss_cfg.alpha = alpha;

    MergedLoader loader(buffer_, *data.train, tc_.batch_size,
                        rng.child(static_cast<uint64_t>(t) * 16 + 5).seed());
    train_stage(
        "stage1", t, tc_.stage1_epochs, loader, params, frozen, alpha,
        [&](const MergedLoader::Batch& batch, StepTrace& trace) {
            Tensor z_old = ens_model.ens.old_encoder.forward(batch.images);
            Tensor z_sup = ens_model.ens.sup_encoder.forward(batch.images);
            Tensor z_ens = fuse(z_old, z_sup);

            std::vector<Tensor> embeddings;  // e_i of the ensembled model
            std::vector<Tensor> logit_parts;
            embeddings.reserve(static_cast<size_t>(t));
            for (int i = 1; i <= t; ++i) {
                auto [e, logits] = ens_model.decoder.decode_task(z_ens, i);
                embeddings.push_back(e);
                logit_parts.push_back(logits);
            }
            Tensor o_ens = concat_last(logit_parts);

            Stage1Parts parts;
            parts.bc = tc_.ablation.balanced_classification
                           ? loss_bc(o_ens, batch.labels, counts, loss_cfg.tau)
                           : loss_aux(o_ens, batch.labels);
            trace.bc = parts.bc.item();

            Tensor o_old;
            std::vector<Tensor> old_embeddings;
            {
                NoGradGuard ng;  // previous model is a pure teacher
                o_old = old_model.decoder.full_logits_from(z_old);
                if (tc_.ablation.embeddings_kd) {
                    for (int i = 1; i < t; ++i)
                        old_embeddings.push_back(old_model.decoder.task_embedding(z_old, i));
                }
            }
            parts.kd = loss_kd(o_old, slice_last(o_ens, 0, old_classes));
            trace.kd = parts.kd.item();

            if (tc_.ablation.embeddings_kd) {
                std::vector<Tensor> ens_old_tasks(embeddings.begin(), embeddings.end() - 1);
                parts.ted = loss_ted(old_embeddings, ens_old_tasks, t);
                trace.ted = parts.ted.item();
            }

            if (tc_.ablation.aux_loss) {
                const int b = z_sup.dim(0);
                const int flat = z_sup.dim(1) * z_sup.dim(2);
                Tensor o_sup = ens_model.ens.aux_head.forward(reshape(z_sup, {b, flat}));
                parts.aux = loss_aux(o_sup, batch.labels);
                trace.aux = parts.aux.item();
            }

            Tensor div_logits = div_head.forward(embeddings.back());
            parts.div = loss_div(
                div_logits, divergence_labels(batch.labels, old_classes, data.num_classes));
            trace.div = parts.div.item();

            return stage1_loss(parts, loss_cfg);
        });
    return ens_model;
}

// ---------------------------------------------------------------------------
// stage 2: encoder compression by distillation
// ---------------------------------------------------------------------------

SedegModel Trainer::stage2(const EnsembledModel& ensembled, const SedegModel& old_model,
                           const TaskInput& data) {
    const int t = ensembled.decoder.tasks();
    if (t < 2) throw ConfigError("stage2: needs a stage-1 model covering >= 2 tasks");
    const int total = ensembled.decoder.total_classes();
    const int old_classes = total - data.num_classes;
    check_task_input(data, old_classes);

    Rng rng(tc_.seed);
    SedegModel student;
    if (tc_.warm_start_new) {
        student.encoder = old_model.encoder.clone();
    } else {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 8);
        student.encoder.init(mc_, r);
    }
    student.encoder.set_trainable(true);
    student.decoder = ensembled.decoder.clone();
    student.decoder.set_trainable(!tc_.ablation.distill_encoder_only);

    LinearLayer div_head;
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 7);
        div_head.init(mc_.embed_dim, data.num_classes + 1, r);
    }

    ParamMap params = student.parameters();
    div_head.collect("div_head", params);

    ParamMap frozen;
    if (tc_.ablation.distill_encoder_only) student.decoder.collect("decoder", frozen);

    std::vector<int64_t> counts = dense_counts(class_counts(buffer_, *data.train), total);
    std::vector<double> weights;
    if (tc_.ablation.balanced_kd) {
        // classes missing from the distillation set still get a finite weight
        std::vector<int64_t> clamped = counts;
        for (auto& c : clamped) c = std::max<int64_t>(c, 1);
        weights = per_class_weights(clamped, tc_.loss.gamma);
    } else {
        weights.assign(static_cast<size_t>(total), 1.0);
    }

    const double alpha = static_cast<double>(old_classes) / static_cast<double>(total);
    MergedLoader loader(buffer_, *data.train, tc_.batch_size,
                        rng.child(static_cast<uint64_t>(t) * 16 + 6).seed());
    train_stage(
        "stage2", t, tc_.stage2_epochs, loader, params, frozen, alpha,
        [&](const MergedLoader::Batch& batch, StepTrace& trace) {
            Tensor z_teacher;
            Tensor o_teacher;
            {
                NoGradGuard ng;  // the stage-1 model only ever teaches
                z_teacher = ensembled.ens.features(batch.images);
                o_teacher = ensembled.decoder.full_logits_from(z_teacher);
            }

            Tensor z_new = student.encoder.forward(batch.images);
            std::vector<Tensor> logit_parts;
            Tensor e_current;
            for (int i = 1; i <= t; ++i) {
                auto [e, logits] = student.decoder.decode_task(z_new, i);
                if (i == t) e_current = e;
                logit_parts.push_back(logits);
            }
            Tensor o_new = concat_last(logit_parts);

            Stage2Parts parts;
            parts.bld = loss_bld(o_new, o_teacher, weights, tc_.loss.tau,
                                 tc_.loss.bld_conventional);
            trace.bld = parts.bld.item();

            if (tc_.ablation.feature_kd) {
                parts.fd = loss_fd(z_new, z_teacher);
                trace.fd = parts.fd.item();
            }

            Tensor div_logits = div_head.forward(e_current);
            parts.div = loss_div(
                div_logits, divergence_labels(batch.labels, old_classes, data.num_classes));
            trace.div = parts.div.item();

            return stage2_loss(parts, tc_.loss);
        });
    return student;
}

// ---------------------------------------------------------------------------
// baseline stages
// ---------------------------------------------------------------------------

void Trainer::dytox_base_stage(const SedegModel& old_model, const TaskInput& data) {
    const int t = tasks_seen_ + 1;
    const int old_classes = old_model.decoder.total_classes();
    const int total = old_classes + data.num_classes;

    Rng rng(tc_.seed);
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 2);
        model_.decoder.add_task(data.num_classes, r);
    }
    model_.encoder.set_trainable(true);
    model_.decoder.configure_stage1(t);

    LinearLayer div_head;
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 4);
        div_head.init(mc_.embed_dim, data.num_classes + 1, r);
    }

    ParamMap params = model_.parameters();
    div_head.collect("div_head", params);

    ParamMap frozen;
    for (int i = 1; i < t; ++i) {
        frozen.emplace_back("decoder.task_token." + std::to_string(i),
                            model_.decoder.task_tokens[static_cast<size_t>(i - 1)]);
        model_.decoder.heads[static_cast<size_t>(i - 1)].collect(
            "decoder.head." + std::to_string(i), frozen);
    }

    const double alpha = static_cast<double>(old_classes) / static_cast<double>(total);
    LossConfig loss_cfg = tc_.loss;
    loss_cfg.alpha = alpha;

    MergedLoader loader(buffer_, *data.train, tc_.batch_size,
                        rng.child(static_cast<uint64_t>(t) * 16 + 5).seed());
    train_stage("base", t, tc_.stage1_epochs, loader, params, frozen, alpha,
                [&](const MergedLoader::Batch& batch, StepTrace& trace) {
                    Tensor z = model_.encoder.forward(batch.images);
                    std::vector<Tensor> logit_parts;
                    Tensor e_current;
                    for (int i = 1; i <= t; ++i) {
                        auto [e, logits] = model_.decoder.decode_task(z, i);
                        if (i == t) e_current = e;
                        logit_parts.push_back(logits);
                    }
                    Tensor o_full = concat_last(logit_parts);

                    Stage1Parts parts;
                    parts.bc = loss_aux(o_full, batch.labels);
                    trace.bc = parts.bc.item();

                    Tensor o_old;
                    {
                        NoGradGuard ng;
                        o_old = old_model.full_logits(batch.images);
                    }
                    parts.kd = loss_kd(o_old, slice_last(o_full, 0, old_classes));
                    trace.kd = parts.kd.item();

                    Tensor div_logits = div_head.forward(e_current);
                    parts.div = loss_div(div_logits, divergence_labels(batch.labels, old_classes,
                                                                       data.num_classes));
                    trace.div = parts.div.item();

                    return stage1_loss(parts, loss_cfg);
                });
}

void Trainer::dytox_finetune_stage(const TaskInput& data) {
    const int t = tasks_seen_ + 1;

    // balanced subset: every seen class downsampled to the rarest class's count
    const std::map<int, int64_t> counts = class_counts(buffer_, *data.train);
    int64_t floor_count = std::numeric_limits<int64_t>::max();
    for (const auto& [cls, n] : counts) floor_count = std::min(floor_count, n);

    Dataset balanced;
    balanced.image_size = data.train->image_size;
    balanced.channels = data.train->channels;
    for (const auto& [cls, exemplars] : buffer_.store)
        for (size_t i = 0; i < std::min<size_t>(exemplars.size(), static_cast<size_t>(floor_count));
             ++i)
            balanced.add(exemplars[i].image, exemplars[i].label, exemplars[i].sample_id);
    Rng pick_rng = Rng(tc_.seed).child(static_cast<uint64_t>(t) * 16 + 9);
    for (int cls = data.first_class; cls < data.first_class + data.num_classes; ++cls) {
        const std::vector<int> candidates = data.train->indices_of_class(cls);
        const int take = static_cast<int>(
            std::min<int64_t>(floor_count, static_cast<int64_t>(candidates.size())));
        for (int p : pick_rng.sample_without_replacement(static_cast<int>(candidates.size()), take)) {
            const int src = candidates[static_cast<size_t>(p)];
            balanced.add(data.train->images[static_cast<size_t>(src)],
                         data.train->labels[static_cast<size_t>(src)],
                         data.train->sample_ids[static_cast<size_t>(src)]);
        }
    }

    model_.encoder.set_trainable(true);
    model_.decoder.set_trainable(true);
    ParamMap params = model_.parameters();
    MemoryBuffer empty(0, 0);
    MergedLoader loader(empty, balanced, tc_.batch_size,
                        Rng(tc_.seed).child(static_cast<uint64_t>(t) * 16 + 10).seed());
    train_stage("finetune", t, tc_.finetune_epochs, loader, params, {}, 0.0,
                [&](const MergedLoader::Batch& batch, StepTrace& trace) {
                    Tensor o = model_.full_logits(batch.images);
                    Tensor bce = loss_aux(o, batch.labels);
                    trace.bc = bce.item();
                    Stage1Parts parts;
                    parts.bc = bce;
                    LossConfig cfg = tc_.loss;
                    cfg.alpha = 0.0;
                    return stage1_loss(parts, cfg);
                });
}

void Trainer::finetune_only_stage(const TaskInput& data) {
    const int t = tasks_seen_ + 1;
    Rng rng(tc_.seed);
    {
        Rng r = rng.child(static_cast<uint64_t>(t) * 16 + 2);
        model_.decoder.add_task(data.num_classes, r);
    }
    model_.encoder.set_trainable(true);
    model_.decoder.set_trainable(true);
    ParamMap params = model_.parameters();
    MemoryBuffer empty(0, 0);
    MergedLoader loader(empty, *data.train, tc_.batch_size,
                        rng.child(static_cast<uint64_t>(t) * 16 + 5).seed());
    train_stage("train", t, tc_.stage1_epochs, loader, params, {}, 0.0,
                [&](const MergedLoader::Batch& batch, StepTrace& trace) {
                    Tensor o = model_.full_logits(batch.images);
                    Tensor bce = loss_aux(o, batch.labels);
                    trace.bc = bce.item();
                    Stage1Parts parts;
                    parts.bc = bce;
                    LossConfig cfg = tc_.loss;
                    cfg.alpha = 0.0;
                    return stage1_loss(parts, cfg);
                });
}

// ---------------------------------------------------------------------------
// task orchestration
// ---------------------------------------------------------------------------

void Trainer::finish_task(int t, const TaskInput& data, bool update_memory) {
    classes_per_task_.push_back(data.num_classes);
    tasks_seen_ = t;
    encoder_params_.push_back(model_.encoder.param_count());
    if (update_memory) {
        std::vector<int> seen(static_cast<size_t>(total_classes()));
        for (size_t i = 0; i < seen.size(); ++i) seen[i] = static_cast<int>(i);
        buffer_.update(*data.train, t, seen);
    }
}

void Trainer::run_task(int t, const TaskInput& data, const StageCallback& on_stage) {
    if (t != tasks_seen_ + 1)
        throw ConfigError("run_task: got task " + std::to_string(t) + ", expected " +
                          std::to_string(tasks_seen_ + 1) + " (tasks must arrive in order)");
    if (t == 1) {
        bootstrap_task1(data);
        if (on_stage)
            on_stage({method_ == Method::finetune_baseline ? "train" : "bootstrap", t,
                      deployed_fn(), model_.parameters()});
        return;
    }

    switch (method_) {
        case Method::sedeg: {
            const SedegModel old_model = model_;
            EnsembledModel ens_model = stage1(old_model, data);
            if (on_stage) {
                on_stage({"stage1", t,
                          [&ens_model](const Tensor& images) {
                              NoGradGuard ng;
                              return ens_model.full_logits(images);
                          },
                          ens_model.parameters()});
            }
            model_ = stage2(ens_model, old_model, data);
            finish_task(t, data, true);
            if (on_stage) on_stage({"stage2", t, deployed_fn(), model_.parameters()});
            break;
        }
        case Method::dytox_baseline: {
            const SedegModel old_model = model_.clone();
            dytox_base_stage(old_model, data);
            if (on_stage) on_stage({"base", t, deployed_fn(), model_.parameters()});
            dytox_finetune_stage(data);
            finish_task(t, data, true);
            if (on_stage) on_stage({"finetune", t, deployed_fn(), model_.parameters()});
            break;
        }
        case Method::finetune_baseline: {
            finetune_only_stage(data);
            finish_task(t, data, false);
            if (on_stage) on_stage({"train", t, deployed_fn(), model_.parameters()});
            break;
        }
    }
}

}  // namespace sedeg
