#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ivf/errors.hpp"

namespace ivf {

class Tape;

enum class DType { f32, f64 };

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

// Canonical row-major strides, in elements.
std::vector<size_t> row_major_strides(const Shape& s);

using Storage = std::variant<std::vector<float>, std::vector<double>>;

/// Dense n-dimensional array. Copying a Tensor is cheap: the buffer is
/// shared. Values that participate in a traced forward pass are never
/// mutated in place; optimizers write through `span()` between passes.
class Tensor {
  public:
    Tensor() = default;

    static Tensor empty(Shape shape, DType dt);
    static Tensor zeros(Shape shape, DType dt);
    static Tensor full(Shape shape, double value, DType dt);
    static Tensor scalar(double value, DType dt);
    static Tensor from(const std::vector<double>& values, Shape shape, DType dt);

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t numel() const;
    size_t extent(size_t axis) const;
    DType dtype() const { return dtype_; }
    std::vector<size_t> strides() const { return row_major_strides(shape_); }

    template <class T>
    std::span<T> span() {
        check_dtype<T>();
        return std::span<T>(std::get<std::vector<T>>(*storage_));
    }
    template <class T>
    std::span<const T> span() const {
        check_dtype<T>();
        return std::span<const T>(std::get<std::vector<T>>(*storage_));
    }

    double item() const;            // scalar tensors only
    double at(size_t flat) const;   // element read as double, any dtype
    void set(size_t flat, double v);

    std::vector<double> to_vector() const;
    Tensor astype(DType dt) const;  // copy; identity dtype still copies
    Tensor clone() const;

    /// Same storage, no tape node.
    Tensor detached() const;

    /// Same storage under a new shape with equal element count. Raw view;
    /// ops::reshape is the recorded variant.
    Tensor reshaped_view(Shape shape) const;

    bool traced() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node_id() const { return node_; }

    bool shares_storage(const Tensor& other) const { return storage_ == other.storage_; }

  private:
    friend class Tape;

    template <class T>
    void check_dtype() const {
        constexpr DType want = std::is_same_v<T, float> ? DType::f32 : DType::f64;
        if (!defined() || dtype_ != want)
            throw ContractError(std::string("tensor dtype is ") +
                                (defined() ? dtype_name(dtype_) : "undefined") + ", requested " +
                                dtype_name(want));
    }

    Shape shape_;
    DType dtype_ = DType::f32;
    std::shared_ptr<Storage> storage_;
    Tape* tape_ = nullptr;  // a traced tensor belongs to exactly one tape
    int node_ = -1;
};

namespace detail {

// Calls f.template operator()<T>() with T = float or double.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
    if (dt == DType::f32) return f.template operator()<float>();
    return f.template operator()<double>();
}

}  // namespace detail

}  // namespace ivf
