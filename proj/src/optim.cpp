#include "ivf/optim.hpp"

#include <cmath>

namespace ivf {

const char* opt_kind_name(OptKind k) {
    switch (k) {
        case OptKind::sgd: return "sgd";
        case OptKind::adam: return "adam";
        case OptKind::adamw: return "adamw";
    }
    return "?";
}

OptKind opt_kind_from(const std::string& s) {
    if (s == "sgd") return OptKind::sgd;
    if (s == "adam") return OptKind::adam;
    if (s == "adamw") return OptKind::adamw;
    throw ConfigError("unknown optimizer: " + s);
}

void OptimizerConfig::validate() const {
    if (lr < 0) throw ConfigError("optimizer lr must be >= 0");
    if (momentum < 0 || momentum >= 1) throw ConfigError("optimizer momentum must be in [0,1)");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ConfigError("optimizer betas must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("optimizer weight decay must be >= 0");
    if (!(eps > 0)) throw ConfigError("optimizer eps must be > 0");
}

void optimizer_step(const OptimizerConfig& cfg, std::vector<Parameter>& params,
                    const GradientMap& grads, OptimizerState& state) {
    cfg.validate();
    state.step += 1;
    for (auto& p : params) {
        auto it = grads.find(p.name);
        if (it == grads.end()) throw ContractError("missing gradient for parameter " + p.name);
        const Tensor& g = it->second;
        if (g.shape() != p.value.shape())
            throw ShapeError("gradient shape " + shape_str(g.shape()) +
                             " does not match parameter " + p.name);
        detail::dispatch(p.value.dtype(), [&]<class T>() {
            auto pv = p.value.span<T>();
            auto pg = g.span<T>();
            for (size_t i = 0; i < pg.size(); ++i)
                if (!std::isfinite(static_cast<double>(pg[i])))
                    throw NumericError("non-finite gradient in parameter " + p.name);
            if (cfg.kind == OptKind::sgd) {
                auto [vit, fresh] = state.m1.try_emplace(p.name);
                if (fresh) vit->second = Tensor::zeros(p.value.shape(), p.value.dtype());
                auto v = vit->second.span<T>();
                T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum);
                T wd = static_cast<T>(cfg.weight_decay);
                for (size_t i = 0; i < pv.size(); ++i) {
                    T grad = pg[i];
                    if (cfg.weight_decay != 0) grad += wd * pv[i];
                    v[i] = mu * v[i] + grad;
                    pv[i] -= lr * v[i];
                }
            } else {
                auto [mit, fresh_m] = state.m1.try_emplace(p.name);
                if (fresh_m) mit->second = Tensor::zeros(p.value.shape(), p.value.dtype());
                auto [vit, fresh_v] = state.m2.try_emplace(p.name);
                if (fresh_v) vit->second = Tensor::zeros(p.value.shape(), p.value.dtype());
                auto m = mit->second.span<T>();
                auto v = vit->second.span<T>();
                T lr = static_cast<T>(cfg.lr), b1 = static_cast<T>(cfg.beta1);
                T b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps);
                T wd = static_cast<T>(cfg.weight_decay);
                T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, double(state.step)));
                T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, double(state.step)));
                bool coupled = cfg.kind == OptKind::adam;
                for (size_t i = 0; i < pv.size(); ++i) {
                    T grad = pg[i];
                    if (coupled && cfg.weight_decay != 0) grad += wd * pv[i];
                    m[i] = b1 * m[i] + (static_cast<T>(1) - b1) * grad;
                    v[i] = b2 * v[i] + (static_cast<T>(1) - b2) * grad * grad;
                    T mhat = m[i] / c1;
                    T vhat = v[i] / c2;
                    T update = mhat / (std::sqrt(vhat) + eps);
                    if (!coupled && cfg.weight_decay != 0) update += wd * pv[i];
                    pv[i] -= lr * update;
                }
            }
        });
    }
}

}  // namespace ivf
