#include "sedeg/optim.hpp"

#include <cmath>

namespace sedeg {

void AdamW::step(ParamMap& params, double lr_scale) {
    const double lr = cfg_.lr * lr_scale;
    for (auto& [name, p] : params) {
        if (!p.requires_grad() || !p.has_grad()) continue;
        State& s = state_[p.raw()];
        auto& value = p.values();
        const auto& grad = p.grad();
        if (s.m.empty()) {
            s.m.assign(value.size(), 0.0);
            s.v.assign(value.size(), 0.0);
        }
        ++s.t;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
        for (size_t i = 0; i < value.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * grad[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * value[i]);
        }
    }
}

double cosine_lr_scale(int step, int total_steps) {
    if (total_steps <= 1) return 1.0;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace sedeg
