#include "ivf/tape.hpp"

#include <algorithm>
#include <cmath>

namespace ivf {

Tensor Tape::watch(const Tensor& value) {
    if (!value.defined()) throw ContractError("watch() on undefined tensor");
    if (value.traced()) throw ContractError("tensor already belongs to a tape");
    Tensor alias = value;
    alias.tape_ = this;
    alias.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, nullptr, value.shape(), value.dtype()});
    return alias;
}

Tensor Tape::record(Tensor result, std::vector<int> parents, BackwardFn fn) {
    result.tape_ = this;
    result.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(parents), std::move(fn), result.shape(), result.dtype()});
    return result;
}

void Tape::accumulate(int node, const Tensor& g) {
    auto& slot = grads_[static_cast<size_t>(node)];
    if (!slot) {
        slot = g;
        return;
    }
    // Fan-out accumulates by summation.
    Tensor& acc = *slot;
    if (acc.shape() != g.shape())
        throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match " +
                         shape_str(acc.shape()));
    Tensor sum = Tensor::empty(acc.shape(), acc.dtype());
    detail::dispatch(acc.dtype(), [&]<class T>() {
        auto a = acc.span<T>();
        auto b = g.span<T>();
        auto d = sum.span<T>();
        for (size_t i = 0; i < d.size(); ++i) d[i] = a[i] + b[i];
    });
    slot = sum;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward() requires a scalar loss");
    if (loss.tape() != this) throw ContractError("loss is not attached to this tape");
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[static_cast<size_t>(loss.node_id())] = Tensor::full(loss.shape(), 1.0, loss.dtype());
    for (int id = loss.node_id(); id >= 0; --id) {
        auto& slot = grads_[static_cast<size_t>(id)];
        if (!slot || !nodes_[static_cast<size_t>(id)].backward) continue;
        nodes_[static_cast<size_t>(id)].backward(*this, *slot);
    }
}

Tensor Tape::grad(const Tensor& traced) const {
    if (traced.tape() != this) throw ContractError("tensor is not attached to this tape");
    size_t id = static_cast<size_t>(traced.node_id());
    if (id < grads_.size() && grads_[id]) return grads_[id]->detached();
    return Tensor::zeros(traced.shape(), traced.dtype());
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
}

GradientMap parameter_gradients(Tape& tape, const Tensor& loss,
                                const std::vector<std::pair<std::string, Tensor>>& traced) {
    tape.backward(loss);
    GradientMap out;
    for (const auto& [name, tensor] : traced) out[name] = tape.grad(tensor);
    return out;
}

double finite_diff_check(const std::function<double()>& f,
                         const std::function<GradientMap()>& analytic,
                         std::vector<Parameter>& params, double h) {
    if (h <= 0) throw ContractError("finite_diff_check requires h > 0");
    GradientMap grads = analytic();
    double worst = 0.0;
    for (auto& p : params) {
        auto it = grads.find(p.name);
        if (it == grads.end()) throw ContractError("no gradient for parameter " + p.name);
        const Tensor& g = it->second;
        for (size_t i = 0; i < p.value.numel(); ++i) {
            double saved = p.value.at(i);
            p.value.set(i, saved + h);
            double fp = f();
            p.value.set(i, saved - h);
            double fm = f();
            p.value.set(i, saved);
            double cd = (fp - fm) / (2.0 * h);
            double an = g.at(i);
            double denom = std::max({std::abs(an), std::abs(cd), 1e-8});
            worst = std::max(worst, std::abs(an - cd) / denom);
        }
    }
    return worst;
}

}  // namespace ivf
