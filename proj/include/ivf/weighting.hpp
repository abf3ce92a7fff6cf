#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ivf {

enum class WeightKind { fixed, dwa, dtp };

const char* weight_kind_name(WeightKind k);
WeightKind weight_kind_from(const std::string& s);

struct WeighterConfig {
    WeightKind kind = WeightKind::fixed;
    double gamma = 1.0;        // dtp focusing parameter
    double temperature = 1.0;  // dwa temperature
    size_t window = 500;       // moving-window length, in per-dataset updates

    void validate() const;
};

/// w_i = D_N * exp(r_i / temp) / sum_n exp(r_n / temp) with
/// r_i = L_i(t-1) / L_i(t-2). `window_means[i]` = (L_i(t-1), L_i(t-2)).
/// Falls back to all ones (with a warning on stderr) if any mean is not
/// positive.
std::vector<double> dwa_weights(const std::vector<std::pair<double, double>>& window_means,
                                double temperature);

/// w = -(1-kappa)^gamma * log(kappa), kappa clamped to [1e-6, 1-1e-6].
double dtp_weight(double kappa, double gamma);

/// Per-dataset loss/top-1 histories and the weight schedules over them.
/// fixed: always 1. dwa: 1 until two loss windows have completed for every
/// dataset, then the ratio softmax above. dtp: 1 until the dataset's first
/// top-1 window completes, then -(1-kappa)^gamma log kappa with kappa the
/// mean of the most recent `window` top-1 values.
class LossWeighter {
  public:
    LossWeighter(WeighterConfig cfg, size_t num_datasets);

    double weight(size_t dataset) const;
    std::vector<double> weights() const;

    /// Call once per update of `dataset` with the unweighted batch loss and
    /// the batch top-1.
    void update(size_t dataset, double loss, double top1);

    // Introspection (tests, metrics).
    size_t updates(size_t dataset) const { return per_[dataset].count; }
    /// (L(t-1), L(t-2)) once two loss windows have completed.
    std::optional<std::pair<double, double>> loss_window_means(size_t dataset) const;
    std::optional<double> kappa(size_t dataset) const;
    const WeighterConfig& config() const { return cfg_; }

  private:
    struct Ring {
        std::vector<double> values;
        size_t head = 0, filled = 0;
        double sum = 0;
        void push(size_t capacity, double v);
        double mean() const { return filled ? sum / double(filled) : 0.0; }
    };
    struct PerDataset {
        size_t count = 0;
        Ring top1;
        double loss_accum = 0;
        size_t loss_open = 0;
        size_t loss_windows = 0;
        double mean_recent = 0, mean_prev = 0;  // completed loss-window means
    };

    WeighterConfig cfg_;
    std::vector<PerDataset> per_;
};

}  // namespace ivf
