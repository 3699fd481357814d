#pragma once

// Test-side oracles, independent of the library's implementation paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "sedeg/losses.hpp"
#include "sedeg/tensor.hpp"

namespace oracle {

// central finite differences of a re-evaluated scalar function w.r.t. one input
inline std::vector<double> finite_difference(sedeg::Tensor& input,
                                             const std::function<double()>& eval,
                                             double h = 1e-4) {
    std::vector<double> fd(input.values().size());
    for (size_t i = 0; i < fd.size(); ++i) {
        const double saved = input.values()[i];
        input.values()[i] = saved + h;
        const double up = eval();
        input.values()[i] = saved - h;
        const double down = eval();
        input.values()[i] = saved;
        fd[i] = (up - down) / (2.0 * h);
    }
    return fd;
}

struct GradCheck {
    bool ok = true;
    double worst = 0.0;  // max normalized deviation, 1.0 == at tolerance
    size_t checked = 0;
};

inline GradCheck compare_gradients(const std::vector<double>& analytic,
                                   const std::vector<double>& fd, double rtol = 1e-3,
                                   double atol = 1e-7) {
    GradCheck result;
    result.checked = fd.size();
    if (analytic.size() != fd.size()) {
        result.ok = false;
        result.worst = 1e18;
        return result;
    }
    for (size_t i = 0; i < fd.size(); ++i) {
        const double tol = atol + rtol * std::max(std::abs(analytic[i]), std::abs(fd[i]));
        const double dev = std::abs(analytic[i] - fd[i]) / tol;
        result.worst = std::max(result.worst, dev);
        if (dev > 1.0) result.ok = false;
    }
    return result;
}

// differentiates `build` (which must rebuild the graph from the live inputs)
// w.r.t. every listed input and checks against central differences
inline GradCheck gradcheck(std::vector<sedeg::Tensor> inputs,
                           const std::function<sedeg::Tensor()>& build, double rtol = 1e-3,
                           double h = 1e-4) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    sedeg::Tensor loss = build();
    sedeg::backward(loss);
    GradCheck total;
    for (auto& t : inputs) {
        auto eval = [&build]() { return build().item(); };
        const std::vector<double> fd = finite_difference(t, eval, h);
        const std::vector<double> analytic =
            t.has_grad() ? t.grad() : std::vector<double>(t.values().size(), 0.0);
        const GradCheck one = compare_gradients(analytic, fd, rtol);
        total.ok = total.ok && one.ok;
        total.worst = std::max(total.worst, one.worst);
        total.checked += one.checked;
    }
    return total;
}

// plain softmax cross-entropy, naive evaluation
inline double softmax_ce(const std::vector<double>& logits, int label) {
    double denom = 0.0;
    for (double o : logits) denom += std::exp(o);
    return -std::log(std::exp(logits[static_cast<size_t>(label)]) / denom);
}

inline double softmax_ce_mean(const std::vector<double>& logits, const std::vector<int>& labels,
                              int classes) {
    double total = 0.0;
    for (size_t b = 0; b < labels.size(); ++b) {
        std::vector<double> row(logits.begin() + static_cast<long>(b) * classes,
                                logits.begin() + static_cast<long>(b + 1) * classes);
        total += softmax_ce(row, labels[b]);
    }
    return total / static_cast<double>(labels.size());
}

// running means of a per-phase accuracy sequence
inline std::vector<double> running_means(const std::vector<double>& xs) {
    std::vector<double> out;
    double sum = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sum += xs[i];
        out.push_back(sum / static_cast<double>(i + 1));
    }
    return out;
}

// ---------------------------------------------------------------------------
// randomized instances for the per-loss gradient suite
// ---------------------------------------------------------------------------

struct LossGradSuite {
    GradCheck aux, bc, ted, kd, div, bld, fd;
    bool ok() const {
        return aux.ok && bc.ok && ted.ok && kd.ok && div.ok && bld.ok && fd.ok;
    }
    double worst() const {
        double w = aux.worst;
        for (double x : {bc.worst, ted.worst, kd.worst, div.worst, bld.worst, fd.worst})
            w = std::max(w, x);
        return w;
    }
};

// `instances` random cases per loss, gradients checked w.r.t. every
// trainable input at rtol/h per the stated tolerances
inline LossGradSuite run_loss_gradient_suite(int instances, uint64_t seed, double rtol = 1e-3,
                                             double h = 1e-4) {
    using namespace sedeg;
    LossGradSuite suite;
    Rng rng(seed);
    auto merge = [](GradCheck& into, const GradCheck& one) {
        into.ok = into.ok && one.ok;
        into.worst = std::max(into.worst, one.worst);
        into.checked += one.checked;
    };

    for (int it = 0; it < instances; ++it) {
        const int B = 1 + static_cast<int>(rng.below(4));
        const int C = 2 + static_cast<int>(rng.below(5));
        std::vector<int> labels(static_cast<size_t>(B));
        for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<uint64_t>(C)));

        {  // auxiliary classification
            Tensor o = Tensor::randn({B, C}, rng, 2.0);
            merge(suite.aux, gradcheck({o}, [&] { return loss_aux(o, labels); }, rtol, h));
        }
        {  // balanced classification
            Tensor o = Tensor::randn({B, C}, rng, 2.0);
            std::vector<int64_t> counts(static_cast<size_t>(C));
            for (auto& s : counts) s = 1 + static_cast<int64_t>(rng.below(500));
            const double tau = 0.5 + rng.uniform();
            merge(suite.bc, gradcheck({o}, [&] { return loss_bc(o, labels, counts, tau); }, rtol, h));
        }
        {  // task embedding distillation, gradients flow through the new side
            const int t = 2 + static_cast<int>(rng.below(3));
            const int dim = 2 + static_cast<int>(rng.below(6));
            std::vector<Tensor> olds, news;
            std::vector<Tensor> inputs;
            for (int i = 0; i < t - 1; ++i) {
                olds.push_back(Tensor::randn({B, dim}, rng, 1.0));
                news.push_back(Tensor::randn({B, dim}, rng, 1.0));
                inputs.push_back(news.back());
            }
            merge(suite.ted, gradcheck(inputs, [&] { return loss_ted(olds, news, t); }, rtol, h));
        }
        {  // logits KD (teacher constant)
            Tensor teacher = Tensor::randn({B, C}, rng, 2.0);
            Tensor student = Tensor::randn({B, C}, rng, 2.0);
            merge(suite.kd, gradcheck({student}, [&] { return loss_kd(teacher, student); }, rtol, h));
        }
        {  // divergence head
            Tensor o = Tensor::randn({B, C + 1}, rng, 2.0);
            std::vector<int> div_labels(static_cast<size_t>(B));
            for (auto& y : div_labels) y = static_cast<int>(rng.below(static_cast<uint64_t>(C + 1)));
            merge(suite.div, gradcheck({o}, [&] { return loss_div(o, div_labels); }, rtol, h));
        }
        {  // balanced logits distillation (teacher constant)
            Tensor student = Tensor::randn({B, C}, rng, 2.0);
            Tensor teacher = Tensor::randn({B, C}, rng, 2.0);
            std::vector<double> w(static_cast<size_t>(C));
            for (auto& x : w) x = rng.uniform(0.1, 2.0);
            const double tau = 0.5 + rng.uniform();
            const bool conventional = rng.below(2) == 1;
            merge(suite.bld, gradcheck({student},
                                       [&] { return loss_bld(student, teacher, w, tau, conventional); },
                                       rtol, h));
        }
        {  // feature distillation (teacher constant)
            const int P = 1 + static_cast<int>(rng.below(4));
            const int D = 2 + static_cast<int>(rng.below(5));
            Tensor student = Tensor::randn({B, P, D}, rng, 1.0);
            Tensor teacher = Tensor::randn({B, P, D}, rng, 1.0);
            merge(suite.fd, gradcheck({student}, [&] { return loss_fd(student, teacher); }, rtol, h));
        }
    }
    return suite;
}

}  // namespace oracle
