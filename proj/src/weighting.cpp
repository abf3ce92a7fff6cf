#include "ivf/weighting.hpp"

#include <cmath>
#include <iostream>

#include "ivf/errors.hpp"

namespace ivf {

const char* weight_kind_name(WeightKind k) {
    switch (k) {
        case WeightKind::fixed: return "static";
        case WeightKind::dwa: return "dwa";
        case WeightKind::dtp: return "dtp";
    }
    return "?";
}

WeightKind weight_kind_from(const std::string& s) {
    if (s == "static") return WeightKind::fixed;
    if (s == "dwa") return WeightKind::dwa;
    if (s == "dtp") return WeightKind::dtp;
    throw ConfigError("unknown loss weighting: " + s);
}

void WeighterConfig::validate() const {
    if (gamma < 0) throw ConfigError("weighter gamma must be >= 0");
    if (!(temperature > 0)) throw ConfigError("weighter temperature must be > 0");
    if (window == 0) throw ConfigError("weighter window must be positive");
}

std::vector<double> dwa_weights(const std::vector<std::pair<double, double>>& window_means,
                                double temperature) {
    size_t n = window_means.size();
    std::vector<double> w(n, 1.0);
    if (n == 0) return w;
    for (const auto& [recent, prev] : window_means) {
        if (!(recent > 0) || !(prev > 0)) {
            std::cerr << "warning: non-positive loss window mean, dwa falls back to w=1\n";
            return w;
        }
    }
    std::vector<double> e(n);
    double denom = 0;
    for (size_t i = 0; i < n; ++i) {
        double r = window_means[i].first / window_means[i].second;
        e[i] = std::exp(r / temperature);
        denom += e[i];
    }
    for (size_t i = 0; i < n; ++i) w[i] = double(n) * e[i] / denom;
    return w;
}

double dtp_weight(double kappa, double gamma) {
    if (gamma < 0) throw ContractError("dtp gamma must be >= 0");
    kappa = std::clamp(kappa, 1e-6, 1.0 - 1e-6);
    return -std::pow(1.0 - kappa, gamma) * std::log(kappa);
}

void LossWeighter::Ring::push(size_t capacity, double v) {
    if (values.size() < capacity) {
        values.push_back(v);
        sum += v;
        filled = values.size();
        return;
    }
    sum -= values[head];
    values[head] = v;
    sum += v;
    head = (head + 1) % capacity;
    filled = capacity;
}

LossWeighter::LossWeighter(WeighterConfig cfg, size_t num_datasets)
    : cfg_(cfg), per_(num_datasets) {
    cfg_.validate();
    if (num_datasets == 0) throw ConfigError("weighter needs at least one dataset");
}

void LossWeighter::update(size_t dataset, double loss, double top1) {
    if (dataset >= per_.size()) throw ContractError("weighter: dataset id out of range");
    if (!std::isfinite(loss) || !std::isfinite(top1))
        throw NumericError("weighter fed a non-finite metric");
    PerDataset& d = per_[dataset];
    d.count += 1;
    d.top1.push(cfg_.window, top1);
    d.loss_accum += loss;
    d.loss_open += 1;
    if (d.loss_open == cfg_.window) {
        d.mean_prev = d.mean_recent;
        d.mean_recent = d.loss_accum / double(cfg_.window);
        d.loss_windows += 1;
        d.loss_accum = 0;
        d.loss_open = 0;
    }
}

std::optional<std::pair<double, double>> LossWeighter::loss_window_means(size_t dataset) const {
    const PerDataset& d = per_[dataset];
    if (d.loss_windows < 2) return std::nullopt;
    return std::make_pair(d.mean_recent, d.mean_prev);
}

std::optional<double> LossWeighter::kappa(size_t dataset) const {
    const PerDataset& d = per_[dataset];
    if (d.count < cfg_.window) return std::nullopt;
    return d.top1.mean();
}

std::vector<double> LossWeighter::weights() const {
    std::vector<double> w(per_.size(), 1.0);
    switch (cfg_.kind) {
        case WeightKind::fixed:
            return w;
        case WeightKind::dwa: {
            std::vector<std::pair<double, double>> means;
            for (size_t i = 0; i < per_.size(); ++i) {
                auto m = loss_window_means(i);
                if (!m) return w;  // warm-up
                means.push_back(*m);
            }
            return dwa_weights(means, cfg_.temperature);
        }
        case WeightKind::dtp: {
            for (size_t i = 0; i < per_.size(); ++i) {
                auto k = kappa(i);
                if (k) w[i] = dtp_weight(*k, cfg_.gamma);
            }
            return w;
        }
    }
    return w;
}

double LossWeighter::weight(size_t dataset) const {
    if (dataset >= per_.size()) throw ContractError("weighter: dataset id out of range");
    return weights()[dataset];
}

}  // namespace ivf
