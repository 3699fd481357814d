#include "sedeg/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "sedeg/errors.hpp"

namespace sedeg {

namespace {

void check_logits_2d(const Tensor& t, const char* op) {
    if (!t.defined() || t.ndim() != 2)
        throw ConfigError(std::string(op) + ": logits must be [batch, classes]");
}

std::vector<double> one_hot_targets(int batch, int classes, const std::vector<int>& labels,
                                    const char* op) {
    if (static_cast<int>(labels.size()) != batch)
        throw ConfigError(std::string(op) + ": batch/label count mismatch");
    std::vector<double> t(static_cast<size_t>(batch) * classes, 0.0);
    for (int b = 0; b < batch; ++b) {
        if (labels[b] < 0 || labels[b] >= classes)
            throw ConfigError(std::string(op) + ": label " + std::to_string(labels[b]) +
                              " out of range [0," + std::to_string(classes) + ")");
        t[static_cast<size_t>(b) * classes + labels[b]] = 1.0;
    }
    return t;
}

}  // namespace

void LossConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("LossConfig: alpha must be in [0,1]");
    if (lambda < 0.0 || mu < 0.0 || xi < 0.0 || beta < 0.0 || gamma < 0.0)
        throw ConfigError("LossConfig: weights must be >= 0");
    if (tau <= 0.0) throw ConfigError("LossConfig: tau must be > 0");
}

Tensor loss_aux(const Tensor& logits, const std::vector<int>& labels) {
    check_logits_2d(logits, "loss_aux");
    return bce_with_logits_mean(logits,
                                one_hot_targets(logits.dim(0), logits.dim(1), labels, "loss_aux"));
}

Tensor loss_bc(const Tensor& logits, const std::vector<int>& labels,
               const std::vector<int64_t>& counts, double tau) {
    check_logits_2d(logits, "loss_bc");
    const int C = logits.dim(1);
    if (static_cast<int>(counts.size()) != C)
        throw ConfigError("loss_bc: counts cover " + std::to_string(counts.size()) +
                          " classes, logits have " + std::to_string(C));
    std::vector<double> offsets(static_cast<size_t>(C));
    for (int j = 0; j < C; ++j) {
        if (counts[static_cast<size_t>(j)] < 0) throw ConfigError("loss_bc: negative count");
        // zero count: the class is absent from training and drops out of
        // the partition function
        offsets[static_cast<size_t>(j)] =
            counts[static_cast<size_t>(j)] == 0
                ? -std::numeric_limits<double>::infinity()
                : tau * std::log(static_cast<double>(counts[static_cast<size_t>(j)]));
    }
    for (int label : labels) {
        if (label < 0 || label >= C)
            throw ConfigError("loss_bc: label " + std::to_string(label) + " out of range");
        if (counts[static_cast<size_t>(label)] == 0)
            throw ConfigError("loss_bc: class " + std::to_string(label) +
                              " appears in the batch but has no sample count");
    }
    return cross_entropy_with_offsets(logits, labels, offsets);
}

Tensor loss_ted(const std::vector<Tensor>& old_embeddings,
                const std::vector<Tensor>& new_embeddings, int task_number) {
    if (task_number <= 1)
        throw ConfigError("loss_ted: undefined for task " + std::to_string(task_number) +
                          " (needs at least one previous task)");
    const size_t expected = static_cast<size_t>(task_number - 1);
    if (old_embeddings.size() != expected || new_embeddings.size() != expected)
        throw ConfigError("loss_ted: expected embeddings for tasks 1.." +
                          std::to_string(task_number - 1));
    Tensor acc = Tensor::scalar(0.0);
    for (size_t i = 0; i < expected; ++i) {
        if (old_embeddings[i].shape() != new_embeddings[i].shape())
            throw ConfigError("loss_ted: embedding shape mismatch at task " +
                              std::to_string(i + 1));
        Tensor d = sub(new_embeddings[i], old_embeddings[i]);
        acc = add(acc, mean_all(mul(d, d)));
    }
    return scale(acc, 1.0 / static_cast<double>(expected));
}

Tensor loss_kd(const Tensor& teacher_logits, const Tensor& student_logits) {
    check_logits_2d(teacher_logits, "loss_kd");
    check_logits_2d(student_logits, "loss_kd");
    if (teacher_logits.shape() != student_logits.shape())
        throw ConfigError("loss_kd: class sets differ, " + shape_str(teacher_logits.shape()) +
                          " vs " + shape_str(student_logits.shape()));
    const auto& tv = teacher_logits.values();
    std::vector<double> soft(tv.size());
    for (size_t i = 0; i < tv.size(); ++i) soft[i] = 1.0 / (1.0 + std::exp(-tv[i]));
    return bce_with_logits_mean(student_logits, soft);
}

Tensor loss_div(const Tensor& div_logits, const std::vector<int>& labels) {
    check_logits_2d(div_logits, "loss_div");
    const std::vector<double> offsets(static_cast<size_t>(div_logits.dim(1)), 0.0);
    return cross_entropy_with_offsets(div_logits, labels, offsets);
}

std::vector<int> divergence_labels(const std::vector<int>& labels, int new_class_begin,
                                   int new_classes) {
    if (new_class_begin < 0 || new_classes < 1)
        throw ConfigError("divergence_labels: bad new-class range");
    std::vector<int> out(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y >= new_class_begin + new_classes || y < 0)
            throw ConfigError("divergence_labels: label " + std::to_string(y) +
                              " outside seen classes");
        out[i] = y >= new_class_begin ? y - new_class_begin : new_classes;
    }
    return out;
}

std::vector<double> per_class_weights(const std::vector<int64_t>& counts, double gamma) {
    if (counts.empty()) throw ConfigError("per_class_weights: empty counts");
    const size_t C = counts.size();
    std::vector<double> w(C);
    double sum = 0.0;
    for (size_t j = 0; j < C; ++j) {
        if (counts[j] < 1)
            throw ConfigError("per_class_weights: class " + std::to_string(j) +
                              " has count " + std::to_string(counts[j]) + " (must be >= 1)");
        w[j] = std::pow(static_cast<double>(counts[j]), -gamma);
        sum += w[j];
    }
    for (double& x : w) x *= static_cast<double>(C) / sum;
    return w;
}

Tensor loss_bld(const Tensor& student_logits, const Tensor& teacher_logits,
                const std::vector<double>& weights, double tau, bool conventional) {
    check_logits_2d(student_logits, "loss_bld");
    check_logits_2d(teacher_logits, "loss_bld");
    if (student_logits.shape() != teacher_logits.shape())
        throw ConfigError("loss_bld: class sets differ, " + shape_str(student_logits.shape()) +
                          " vs " + shape_str(teacher_logits.shape()));
    const int B = student_logits.dim(0), C = student_logits.dim(1);
    if (static_cast<int>(weights.size()) != C)
        throw ConfigError("loss_bld: " + std::to_string(weights.size()) + " weights for " +
                          std::to_string(C) + " classes");
    for (double w : weights)
        if (!(w >= 0.0)) throw ConfigError("loss_bld: weights must be >= 0 and finite");
    if (tau <= 0.0) throw ConfigError("loss_bld: tau must be > 0");

    const auto& sv = student_logits.values();
    const std::vector<double> tv = teacher_logits.values();  // constant snapshot
    double total = 0.0;
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < C; ++j) {
            const int64_t i = static_cast<int64_t>(b) * C + j;
            const double s = sv[static_cast<size_t>(i)] / tau;
            const double t = tv[static_cast<size_t>(i)] / tau;
            if (!conventional) {
                // sigmoid(student) * -log sigmoid(teacher)
                total += weights[static_cast<size_t>(j)] * (1.0 / (1.0 + std::exp(-s))) *
                         (-log_sigmoid(t));
            } else {
                total += weights[static_cast<size_t>(j)] * (1.0 / (1.0 + std::exp(-t))) *
                         (-log_sigmoid(s));
            }
        }
    total /= B;

    auto ps = student_logits.node();
    return make_op({1}, {total}, {student_logits},
                   [ps, tv, weights, tau, conventional, B, C](TensorNode& out) {
                       if (!ps->requires_grad) return;
                       auto& g = ps->ensure_grad();
                       const double go = out.grad[0] / B;
                       for (int b = 0; b < B; ++b)
                           for (int j = 0; j < C; ++j) {
                               const int64_t i = static_cast<int64_t>(b) * C + j;
                               const double s = ps->value[static_cast<size_t>(i)] / tau;
                               const double t = tv[static_cast<size_t>(i)] / tau;
                               double d = 0.0;
                               if (!conventional) {
                                   const double sig = 1.0 / (1.0 + std::exp(-s));
                                   d = sig * (1.0 - sig) * (-log_sigmoid(t)) / tau;
                               } else {
                                   const double sig_t = 1.0 / (1.0 + std::exp(-t));
                                   // d/ds of -log sigmoid(s) = sigmoid(s) - 1
                                   d = sig_t * (1.0 / (1.0 + std::exp(-s)) - 1.0) / tau;
                               }
                               g[static_cast<size_t>(i)] += go * weights[static_cast<size_t>(j)] * d;
                           }
                   });
}

Tensor loss_fd(const Tensor& student_features, const Tensor& teacher_features) {
    if (!student_features.defined() || !teacher_features.defined())
        throw ConfigError("loss_fd: undefined input");
    if (student_features.shape() != teacher_features.shape())
        throw ConfigError("loss_fd: shape mismatch " + shape_str(student_features.shape()) +
                          " vs " + shape_str(teacher_features.shape()));
    if (student_features.ndim() < 2) throw ConfigError("loss_fd: need [batch, ...] input");
    const int B = student_features.dim(0);
    const int64_t inner = student_features.numel() / B;

    const auto& sv = student_features.values();
    const std::vector<double> tv = teacher_features.values();  // constant snapshot
    std::vector<double> norms(static_cast<size_t>(B), 0.0);
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        double sq = 0.0;
        for (int64_t i = 0; i < inner; ++i) {
            const double d = sv[static_cast<size_t>(b * inner + i)] -
                             tv[static_cast<size_t>(b * inner + i)];
            sq += d * d;
        }
        norms[static_cast<size_t>(b)] = std::sqrt(sq);
        total += norms[static_cast<size_t>(b)];
    }
    total /= B;

    auto ps = student_features.node();
    return make_op({1}, {total}, {student_features},
                   [ps, tv, norms = std::move(norms), B, inner](TensorNode& out) {
                       if (!ps->requires_grad) return;
                       auto& g = ps->ensure_grad();
                       const double go = out.grad[0] / B;
                       for (int b = 0; b < B; ++b) {
                           const double n = norms[static_cast<size_t>(b)];
                           if (n == 0.0) continue;
                           for (int64_t i = 0; i < inner; ++i) {
                               const size_t k = static_cast<size_t>(b * inner + i);
                               g[k] += go * (ps->value[k] - tv[k]) / n;
                           }
                       }
                   });
}

namespace {

Tensor accumulate_weighted(Tensor total, const Tensor& part, double weight) {
    if (!part.defined()) return total;
    if (part.numel() != 1) throw ConfigError("stage loss: parts must be scalars");
    return add(total, scale(part, weight));
}

}  // namespace

Tensor stage1_loss(const Stage1Parts& parts, const LossConfig& cfg) {
    cfg.validate();
    Tensor total = Tensor::scalar(0.0);
    total = accumulate_weighted(total, parts.bc, 1.0 - cfg.alpha);
    total = accumulate_weighted(total, parts.kd, cfg.alpha);
    total = accumulate_weighted(total, parts.div, cfg.lambda);
    total = accumulate_weighted(total, parts.aux, cfg.mu);
    total = accumulate_weighted(total, parts.ted, cfg.xi);
    return total;
}

Tensor stage2_loss(const Stage2Parts& parts, const LossConfig& cfg) {
    cfg.validate();
    Tensor total = Tensor::scalar(0.0);
    total = accumulate_weighted(total, parts.bld, 1.0);
    total = accumulate_weighted(total, parts.div, cfg.lambda);
    total = accumulate_weighted(total, parts.fd, cfg.beta);
    return total;
}

}  // namespace sedeg
