#pragma once

#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "sedeg/losses.hpp"
#include "sedeg/memory.hpp"
#include "sedeg/model.hpp"
#include "sedeg/optim.hpp"

namespace sedeg {

enum class Method { sedeg, dytox_baseline, finetune_baseline };
Method method_from_string(const std::string& name);
std::string method_name(Method method);

// Structural switches for the two ablation grids. With
// balanced_classification off, stage 1 classifies with plain sigmoid BCE;
// with balanced_kd off, stage 2 distills with uniform per-class weights.
struct AblationFlags {
    bool aux_loss = true;
    bool embeddings_kd = true;
    bool balanced_classification = true;
    bool feature_kd = true;
    bool balanced_kd = true;
    bool distill_encoder_only = true;
};

struct TrainConfig {
    int bootstrap_epochs = 20;
    int stage1_epochs = 20;
    int stage2_epochs = 15;
    int finetune_epochs = 10;  // balanced fine-tuning stage of the DyTox baseline
    double learning_rate = 3e-3;
    double weight_decay = 1e-4;
    int batch_size = 32;
    std::string optimizer = "adamw";
    uint64_t seed = 0;
    LossConfig loss;
    AblationFlags ablation;
    bool warm_start_sup = true;  // supplementary encoder starts from the old weights
    bool warm_start_new = true;  // stage-2 encoder starts from the old weights
    bool audit_freeze = true;    // hash-check frozen parameters every epoch

    void validate() const;
};

// One optimizer step: every loss component actually computed (0 where a
// switch disabled the term), the stage total, and the weights in effect.
struct StepTrace {
    int task = 0;
    std::string stage;
    int epoch = 0;
    int step = 0;
    double lr = 0.0;
    double alpha = 0.0;
    double total = 0.0;
    double bc = 0.0, kd = 0.0, div = 0.0, aux = 0.0, ted = 0.0, bld = 0.0, fd = 0.0;
};

struct FreezeAudit {
    int task = 0;
    std::string stage;
    int checks = 0;  // parameter-epoch comparisons performed
    std::vector<std::string> violations;
};

struct TaskInput {
    const Dataset* train = nullptr;
    int first_class = 0;  // global id of the first class this task introduces
    int num_classes = 0;
};

// Orchestrates the two-stage protocol: DyTox-style bootstrap on the first
// task, then per task t >= 2 stage 1 (ensembled encoder + decoder
// enhancement) and stage 2 (encoder compression). Also runs the DyTox-style
// and naive fine-tuning baselines under the same bookkeeping.
class Trainer {
public:
    using LogitsFn = std::function<Tensor(const Tensor& images)>;

    // Stage handle passed to the callback right after a stage completes.
    // Valid only during the callback.
    struct StageProduct {
        std::string stage;
        int task = 0;
        LogitsFn logits;
        ParamMap params;
    };
    using StageCallback = std::function<void(const StageProduct&)>;

    Trainer(ModelConfig mc, TrainConfig tc, Method method, int memory_capacity);

    // Tasks must arrive in order 1, 2, ... The callback fires once per
    // completed stage (bootstrap: once; sedeg/dytox t>=2: twice).
    void run_task(int t, const TaskInput& data, const StageCallback& on_stage = {});

    // stage operations (run_task composes these; public for direct use)
    void bootstrap_task1(const TaskInput& data);
    EnsembledModel stage1(const SedegModel& old_model, const TaskInput& data);
    SedegModel stage2(const EnsembledModel& ensembled, const SedegModel& old_model,
                      const TaskInput& data);

    const SedegModel& model() const { return model_; }
    const MemoryBuffer& buffer() const { return buffer_; }
    int tasks_seen() const { return tasks_seen_; }
    int total_classes() const;
    const std::vector<int>& classes_per_task() const { return classes_per_task_; }
    Tensor deployed_logits(const Tensor& images) const;

    const std::vector<StepTrace>& traces() const { return traces_; }
    const std::vector<FreezeAudit>& freeze_audits() const { return audits_; }
    // deployed-encoder value count recorded after every completed task
    const std::vector<int64_t>& encoder_param_history() const { return encoder_params_; }
    // every sample id that entered a training batch
    const std::unordered_set<int64_t>& training_sample_ids() const { return train_ids_; }

    // test hook: runs after backward, before the optimizer step
    std::function<void(const std::string& stage, int step, const ParamMap& params)> step_observer;

private:
    using LossBuilder = std::function<Tensor(const MergedLoader::Batch& batch, StepTrace& trace)>;

    void train_stage(const std::string& stage, int task, int epochs, MergedLoader& loader,
                     ParamMap& params, const ParamMap& frozen, double alpha,
                     const LossBuilder& build_loss);
    void dytox_base_stage(const SedegModel& old_model, const TaskInput& data);
    void dytox_finetune_stage(const TaskInput& data);
    void finetune_only_stage(const TaskInput& data);
    void finish_task(int t, const TaskInput& data, bool update_memory);
    void check_task_input(const TaskInput& data, int expected_first_class) const;
    LogitsFn deployed_fn() const;

    ModelConfig mc_;
    TrainConfig tc_;
    Method method_;
    SedegModel model_;
    MemoryBuffer buffer_;
    int tasks_seen_ = 0;
    std::vector<int> classes_per_task_;
    std::vector<StepTrace> traces_;
    std::vector<FreezeAudit> audits_;
    std::vector<int64_t> encoder_params_;
    std::unordered_set<int64_t> train_ids_;
};

}  // namespace sedeg
