#include "ivf/train.hpp"

#include <algorithm>
#include <cmath>

#include "ivf/ops.hpp"

namespace ivf {

Tensor cross_entropy(const Tensor& logits, const std::vector<size_t>& labels) {
    if (logits.rank() != 2)
        throw ShapeError("cross_entropy expects (B,C) logits, got " + shape_str(logits.shape()));
    size_t B = logits.extent(0), C = logits.extent(1);
    if (labels.size() != B)
        throw ContractError("label count " + std::to_string(labels.size()) +
                            " does not match batch " + std::to_string(B));
    for (size_t y : labels)
        if (y >= C)
            throw ContractError("label " + std::to_string(y) + " out of range for " +
                                std::to_string(C) + " classes");

    Tensor loss = Tensor::empty({1}, logits.dtype());
    Tensor probs = Tensor::empty(logits.shape(), logits.dtype());
    detail::dispatch(logits.dtype(), [&]<class T>() {
        auto pl = logits.span<T>();
        auto pp = probs.span<T>();
        T total{};
        for (size_t r = 0; r < B; ++r) {
            const T* row = pl.data() + r * C;
            T mx = row[0];
            for (size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
            T sum{};
            for (size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
            T lse = mx + std::log(sum);
            for (size_t c = 0; c < C; ++c) pp[r * C + c] = std::exp(row[c] - lse);
            total += lse - row[labels[r]];
        }
        loss.span<T>()[0] = total / static_cast<T>(B);
    });

    if (!logits.traced()) return loss;
    Tape* tape = logits.tape();
    int il = logits.node_id();
    std::vector<size_t> lbl = labels;
    return tape->record(std::move(loss), {il}, [il, probs, lbl, B, C](Tape& t, const Tensor& g) {
        double gv = g.item();
        Tensor dl = Tensor::empty(probs.shape(), probs.dtype());
        detail::dispatch(probs.dtype(), [&]<class T>() {
            auto pp = probs.span<T>();
            auto pd = dl.span<T>();
            T f = static_cast<T>(gv / double(B));
            for (size_t r = 0; r < B; ++r)
                for (size_t c = 0; c < C; ++c) {
                    T onehot = lbl[r] == c ? static_cast<T>(1) : static_cast<T>(0);
                    pd[r * C + c] = f * (pp[r * C + c] - onehot);
                }
        });
        t.accumulate(il, dl);
    });
}

double topk_rate(const Tensor& logits, const std::vector<size_t>& labels, size_t k) {
    if (logits.rank() != 2) throw ShapeError("topk expects (B,C) logits");
    size_t B = logits.extent(0), C = logits.extent(1);
    if (labels.size() != B) throw ContractError("label count does not match batch");
    size_t hits = 0;
    for (size_t r = 0; r < B; ++r) {
        size_t y = labels[r];
        double ly = logits.at(r * C + y);
        size_t rank = 0;
        for (size_t c = 0; c < C; ++c) {
            double lc = logits.at(r * C + c);
            if (lc > ly || (lc == ly && c < y)) ++rank;
        }
        if (rank < k) ++hits;
    }
    return B ? double(hits) / double(B) : 0.0;
}

EvalResult evaluate(const ViTModel& model, const Dataset& dataset, Split split,
                    const AugmentConfig& cfg, size_t batch_size) {
    const Manifest& m = dataset.manifest(split);
    if (m.size() == 0) throw ContractError("evaluate on an empty split");
    if (batch_size == 0) throw ContractError("evaluate batch size must be positive");
    EvalResult res;
    double top1 = 0, top5 = 0;
    for (size_t at = 0; at < m.size(); at += batch_size) {
        size_t n = std::min(batch_size, m.size() - at);
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = at + i;
        SampleBatch batch = dataset.assemble(split, idx, cfg, nullptr);
        Tensor logits = forward_logits(model, batch, dataset.spec().id);
        top1 += topk_rate(logits, batch.labels, 1) * double(n);
        top5 += topk_rate(logits, batch.labels, 5) * double(n);
        res.samples += n;
    }
    res.top1 = top1 / double(res.samples);
    res.top5 = top5 / double(res.samples);
    return res;
}

std::vector<size_t> EpochSampler::next(size_t count) {
    std::vector<size_t> out;
    out.reserve(count);
    while (out.size() < count) {
        if (pos_ >= perm_.size()) refill();
        out.push_back(perm_[pos_++]);
    }
    return out;
}

void EpochSampler::refill() {
    if (n_ == 0) throw ContractError("sampler over an empty dataset");
    perm_.resize(n_);
    for (size_t i = 0; i < n_; ++i) perm_[i] = i;
    for (size_t i = n_; i > 1; --i) {
        size_t j = rng_.uniform_int(i);
        std::swap(perm_[i - 1], perm_[j]);
    }
    pos_ = 0;
}

MultiTrainer::MultiTrainer(ViTModel model, std::vector<Dataset>& datasets, TrainSetup setup)
    : model_(std::move(model)),
      datasets_(datasets),
      setup_(std::move(setup)),
      weighter_(setup_.weighter, datasets.size()) {
    if (datasets_.empty()) throw ConfigError("training needs at least one dataset");
    if (setup_.optimizers.size() != datasets_.size())
        throw ConfigError("optimizer count does not match dataset count");
    if (model_.heads.size() != datasets_.size())
        throw ConfigError("model head count " + std::to_string(model_.heads.size()) +
                          " does not match dataset count " + std::to_string(datasets_.size()));
    if (setup_.batch_size == 0) throw ConfigError("batch size must be positive");
    for (auto& o : setup_.optimizers) o.validate();
    states_.resize(datasets_.size());
    for (size_t i = 0; i < datasets_.size(); ++i) {
        if (datasets_[i].spec().id != i)
            throw ConfigError("dataset ids must be dense 0..N-1 in registration order");
        samplers_.emplace_back(datasets_[i].manifest(Split::train).size(),
                               mix_seed(setup_.seed, 0x54AB, i));
    }
}

std::vector<Parameter> MultiTrainer::params_for(size_t dataset) {
    std::vector<Parameter> out;
    std::string own = "head" + std::to_string(dataset) + ".";
    for (auto& p : model_.parameters()) {
        if (p.name.rfind("head", 0) == 0 && p.name.rfind(own, 0) != 0) continue;
        out.push_back(p);
    }
    return out;
}

std::vector<MetricsRecord> MultiTrainer::train_iteration() {
    std::vector<MetricsRecord> records;
    for (size_t ds = 0; ds < datasets_.size(); ++ds) {
        Rng rng(mix_seed(setup_.seed, 0xBA7C, ds, iteration_));
        std::vector<size_t> idx = samplers_[ds].next(setup_.batch_size);
        SampleBatch batch = datasets_[ds].assemble(Split::train, idx, setup_.augment, &rng);

        Tape tape;
        ViTModel traced = model_.traced(tape);
        Tensor logits = forward_logits(traced, batch, ds);
        Tensor loss = cross_entropy(logits, batch.labels);
        double loss_value = loss.item();
        if (!std::isfinite(loss_value))
            throw NumericError("non-finite loss at iteration " + std::to_string(iteration_) +
                               " on dataset " + std::to_string(ds));

        double w = weighter_.weight(ds);
        Tensor weighted = ops::scale(loss, w);
        tape.backward(weighted);
        GradientMap grads;
        for (auto& p : traced.parameters()) grads[p.name] = tape.grad(p.value);

        auto params = params_for(ds);
        try {
            optimizer_step(setup_.optimizers[ds], params, grads, states_[ds]);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at iteration " +
                               std::to_string(iteration_) + " on dataset " + std::to_string(ds));
        }

        double top1 = topk_rate(logits, batch.labels, 1);
        double top5 = topk_rate(logits, batch.labels, 5);
        weighter_.update(ds, loss_value, top1);
        records.push_back({iteration_, ds, loss_value, w, top1, top5});
    }
    iteration_ += 1;
    return records;
}

}  // namespace ivf
