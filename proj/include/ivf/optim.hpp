#pragma once

#include <map>
#include <string>
#include <vector>

#include "ivf/tape.hpp"
#include "ivf/tensor.hpp"

namespace ivf {

enum class OptKind { sgd, adam, adamw };

const char* opt_kind_name(OptKind k);
OptKind opt_kind_from(const std::string& s);

struct OptimizerConfig {
    OptKind kind = OptKind::adamw;
    double lr = 1e-5;
    double weight_decay = 5e-5;
    double momentum = 0.9;  // sgd
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// Moment buffers keyed by parameter name, plus the bias-correction step
/// counter. One state per (dataset, optimizer) pair; states never mix.
struct OptimizerState {
    uint64_t step = 0;
    std::map<std::string, Tensor> m1;  // sgd velocity / adam first moment
    std::map<std::string, Tensor> m2;  // adam second moment
};

/// In-place parameter update.
///   sgd:   g += wd*p; v = mu*v + g; p -= lr*v
///   adam:  g += wd*p; bias-corrected moments; p -= lr*mhat/(sqrt(vhat)+eps)
///   adamw: moments from raw g; p -= lr*(mhat/(sqrt(vhat)+eps) + wd*p)
/// Gradients must be finite; a NaN/inf raises NumericError naming the
/// parameter.
void optimizer_step(const OptimizerConfig& cfg, std::vector<Parameter>& params,
                    const GradientMap& grads, OptimizerState& state);

}  // namespace ivf
