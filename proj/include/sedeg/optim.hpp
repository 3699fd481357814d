#pragma once

#include <unordered_map>

#include "sedeg/nn.hpp"

namespace sedeg {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Adam with decoupled weight decay. Parameters without a gradient (frozen,
// or unused this step) are left untouched, decay included.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    void step(ParamMap& params, double lr_scale = 1.0);
    static void zero_grad(ParamMap& params) { zero_grads(params); }

private:
    struct State {
        std::vector<double> m, v;
        int64_t t = 0;
    };
    AdamWConfig cfg_;
    std::unordered_map<TensorNode*, State> state_;
};

// half-cosine decay from base to 0 across total_steps
double cosine_lr_scale(int step, int total_steps);

}  // namespace sedeg
