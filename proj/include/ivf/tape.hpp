#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivf/tensor.hpp"

namespace ivf {

/// Named model parameter. The value keeps its storage for the life of the
/// model; trace() hands out a tape-attached alias for one forward pass.
struct Parameter {
    std::string name;
    Tensor value;
};

using GradientMap = std::map<std::string, Tensor>;

/// Wengert list for one forward/backward pass. Nodes are appended in
/// execution order, so parents always precede their consumers and a single
/// reverse sweep visits the DAG topologically. A tape is confined to one
/// thread; independent tapes may run concurrently.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Registers `value` as a leaf and returns an alias holding the node
    /// handle. The alias shares storage with `value`.
    Tensor watch(const Tensor& value);

    /// Used by ops: appends a node and returns `result` with the node
    /// handle attached.
    Tensor record(Tensor result, std::vector<int> parents, BackwardFn fn);

    /// Reverse sweep from a scalar loss. Populates per-node gradient
    /// buffers; query them with grad().
    void backward(const Tensor& loss);

    /// Gradient of the last backward() w.r.t. a traced tensor. Tensors the
    /// loss never reached get zeros of their own shape.
    Tensor grad(const Tensor& traced) const;

    void accumulate(int node, const Tensor& g);

    size_t size() const { return nodes_.size(); }
    void reset();

  private:
    struct Node {
        std::vector<int> parents;
        BackwardFn backward;
        Shape shape;
        DType dtype;
    };

    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
};

/// Gradients of a scalar loss for a set of named parameters, as traced on
/// `tape`. Unreached parameters map to zeros.
GradientMap parameter_gradients(Tape& tape, const Tensor& loss,
                                const std::vector<std::pair<std::string, Tensor>>& traced);

/// Max over all parameter elements of
/// |analytic - central difference| / max(|analytic|, |cd|, 1e-8).
/// `f` evaluates the scalar loss from the current parameter values and must
/// be deterministic; parameters are restored after probing.
double finite_diff_check(const std::function<double()>& f,
                         const std::function<GradientMap()>& analytic,
                         std::vector<Parameter>& params, double h);

}  // namespace ivf
