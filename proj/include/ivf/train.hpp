#pragma once

#include <cstdint>
#include <vector>

#include "ivf/data.hpp"
#include "ivf/optim.hpp"
#include "ivf/vit.hpp"
#include "ivf/weighting.hpp"

namespace ivf {

/// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const std::vector<size_t>& labels);

/// Fraction of rows whose label ranks among the k largest logits. Ties are
/// broken toward the lowest class index.
double topk_rate(const Tensor& logits, const std::vector<size_t>& labels, size_t k);

struct EvalResult {
    double top1 = 0, top5 = 0;
    size_t samples = 0;
};

/// Deterministic whole-split evaluation (no augmentation).
EvalResult evaluate(const ViTModel& model, const Dataset& dataset, Split split,
                    const AugmentConfig& cfg, size_t batch_size);

struct MetricsRecord {
    uint64_t iteration = 0;
    size_t dataset = 0;
    double loss = 0, w = 1, top1 = 0, top5 = 0;
};

/// Shuffled epoch permutations, refilled on exhaustion; a batch may span an
/// epoch boundary but never repeats an index within one epoch.
class EpochSampler {
  public:
    EpochSampler(size_t n, uint64_t seed) : n_(n), rng_(seed) {}
    std::vector<size_t> next(size_t count);

  private:
    void refill();
    size_t n_;
    Rng rng_;
    std::vector<size_t> perm_;
    size_t pos_ = 0;
};

struct TrainSetup {
    std::vector<OptimizerConfig> optimizers;  // one per dataset
    WeighterConfig weighter;
    AugmentConfig augment;
    size_t batch_size = 6;
    uint64_t seed = 0;
};

/// Fixed-order multi-dataset training: one iteration samples a batch from
/// every dataset in id order and performs one parameter update per dataset.
/// Each dataset owns its optimizer moments; an update touches the shared
/// backbone plus that dataset's head only.
class MultiTrainer {
  public:
    MultiTrainer(ViTModel model, std::vector<Dataset>& datasets, TrainSetup setup);

    std::vector<MetricsRecord> train_iteration();

    uint64_t iteration() const { return iteration_; }
    ViTModel& model() { return model_; }
    const ViTModel& model() const { return model_; }
    const LossWeighter& weighter() const { return weighter_; }
    const OptimizerState& optimizer_state(size_t dataset) const { return states_[dataset]; }

  private:
    std::vector<Parameter> params_for(size_t dataset);

    ViTModel model_;
    std::vector<Dataset>& datasets_;
    TrainSetup setup_;
    LossWeighter weighter_;
    std::vector<OptimizerState> states_;
    std::vector<EpochSampler> samplers_;
    uint64_t iteration_ = 0;
};

}  // namespace ivf
