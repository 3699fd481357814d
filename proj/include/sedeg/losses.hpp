#pragma once

#include <cstdint>
#include <vector>

#include "sedeg/tensor.hpp"

namespace sedeg {

struct LossConfig {
    // Mixing weight between classification and logits KD. The trainer
    // resolves it per task as |old classes| / |all seen classes|.
    double alpha = 0.5;
    double lambda = 0.1;  // divergence head weight
    double mu = 1.0;      // auxiliary classification weight
    double xi = 0.1;      // task-embedding distillation weight
    double beta = 1.0;    // feature distillation weight
    double tau = 1.0;     // temperature
    double gamma = 1.0;   // per-class weight exponent
    // Swap the student/teacher roles inside the balanced logits
    // distillation (experimentation switch, off by default).
    bool bld_conventional = false;

    void validate() const;
};

// Auxiliary classification on the supplementary branch: per-class sigmoid
// binary cross-entropy against one-hot targets, mean over batch x classes.
// Also the plain (DyTox-style) classification loss used by the bootstrap
// task and by the balanced-classification ablation.
Tensor loss_aux(const Tensor& logits, const std::vector<int>& labels);

// Balanced softmax classification: cross-entropy on logits shifted by
// tau * log(s_j). counts[j] = number of training samples of class j; a zero
// count removes the class from the partition function, but every class
// present in the batch must have a positive count.
Tensor loss_bc(const Tensor& logits, const std::vector<int>& labels,
               const std::vector<int64_t>& counts, double tau);

// Task embedding distillation across tasks 1..t-1: mean squared distance
// between the previous model's TAB readouts and the current ones, averaged
// over tasks. Undefined for t <= 1.
Tensor loss_ted(const std::vector<Tensor>& old_embeddings,
                const std::vector<Tensor>& new_embeddings, int task_number);

// Logits KD over the old classes: per-class sigmoid BCE with the teacher's
// sigmoid probabilities as soft targets. The teacher side is a constant.
Tensor loss_kd(const Tensor& teacher_logits, const Tensor& student_logits);

// Divergence head: (new-task classes + 1)-way cross-entropy where every
// old-class sample is mapped to the extra index.
Tensor loss_div(const Tensor& div_logits, const std::vector<int>& labels);

// Remaps global labels for loss_div: labels in [new_class_begin,
// new_class_begin + new_classes) -> task-local 0..k-1, older labels -> k.
std::vector<int> divergence_labels(const std::vector<int>& labels, int new_class_begin,
                                   int new_classes);

// Inverse-frequency weights normalized to mean 1: w_j = C * s_j^-g / sum_k s_k^-g.
std::vector<double> per_class_weights(const std::vector<int64_t>& counts, double gamma);

// Balanced logits distillation: -(1/B) sum_b sum_j w_j * sigmoid(student/tau)
// * log sigmoid(teacher/tau). Gradients reach the student only; the
// conventional switch puts the student inside the log instead.
Tensor loss_bld(const Tensor& student_logits, const Tensor& teacher_logits,
                const std::vector<double>& weights, double tau, bool conventional = false);

// Feature distillation: per-sample Frobenius norm of (student - teacher),
// mean over the batch. The teacher side is a constant.
Tensor loss_fd(const Tensor& student_features, const Tensor& teacher_features);

// Stage totals. An undefined part contributes zero (ablation switches).
struct Stage1Parts {
    Tensor bc;   // balanced (or plain) classification
    Tensor kd;   // logits KD
    Tensor div;  // divergence head
    Tensor aux;  // auxiliary classification
    Tensor ted;  // task embedding distillation
};
// (1 - alpha) bc + alpha kd + lambda div + mu aux + xi ted
Tensor stage1_loss(const Stage1Parts& parts, const LossConfig& cfg);

struct Stage2Parts {
    Tensor bld;
    Tensor div;
    Tensor fd;
};
// bld + lambda div + beta fd
Tensor stage2_loss(const Stage2Parts& parts, const LossConfig& cfg);

}  // namespace sedeg
