#include "ivf/tensor.hpp"

#include <numeric>
#include <sstream>

namespace ivf {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t e : s) n *= e;
    return n;
}

std::vector<size_t> row_major_strides(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

static void check_extents(const Shape& shape) {
    for (size_t e : shape)
        if (e == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
}

Tensor Tensor::empty(Shape shape, DType dt) {
    check_extents(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.dtype_ = dt;
    size_t n = shape_numel(t.shape_);
    if (dt == DType::f32)
        t.storage_ = std::make_shared<Storage>(std::vector<float>(n));
    else
        t.storage_ = std::make_shared<Storage>(std::vector<double>(n));
    return t;
}

Tensor Tensor::zeros(Shape shape, DType dt) { return empty(std::move(shape), dt); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
    Tensor t = empty(std::move(shape), dt);
    detail::dispatch(dt, [&]<class T>() {
        for (T& x : t.span<T>()) x = static_cast<T>(value);
    });
    return t;
}

Tensor Tensor::scalar(double value, DType dt) { return full({1}, value, dt); }

Tensor Tensor::from(const std::vector<double>& values, Shape shape, DType dt) {
    if (values.size() != shape_numel(shape))
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(shape));
    Tensor t = empty(std::move(shape), dt);
    detail::dispatch(dt, [&]<class T>() {
        auto dst = t.span<T>();
        for (size_t i = 0; i < values.size(); ++i) dst[i] = static_cast<T>(values[i]);
    });
    return t;
}

size_t Tensor::numel() const { return shape_numel(shape_); }

size_t Tensor::extent(size_t axis) const {
    if (axis >= shape_.size())
        throw IndexError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(shape_.size()));
    return shape_[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    return at(0);
}

double Tensor::at(size_t flat) const {
    return detail::dispatch(dtype_, [&]<class T>() -> double {
        return static_cast<double>(span<T>()[flat]);
    });
}

void Tensor::set(size_t flat, double v) {
    detail::dispatch(dtype_, [&]<class T>() { span<T>()[flat] = static_cast<T>(v); });
}

std::vector<double> Tensor::to_vector() const {
    std::vector<double> out(numel());
    detail::dispatch(dtype_, [&]<class T>() {
        auto src = span<T>();
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(src[i]);
    });
    return out;
}

Tensor Tensor::astype(DType dt) const {
    Tensor out = Tensor::empty(shape_, dt);
    detail::dispatch(dt, [&]<class U>() {
        auto dst = out.span<U>();
        detail::dispatch(dtype_, [&]<class T>() {
            auto src = span<T>();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<U>(src[i]);
        });
    });
    return out;
}

Tensor Tensor::clone() const { return astype(dtype_); }

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

Tensor Tensor::reshaped_view(Shape shape) const {
    if (shape_numel(shape) != numel())
        throw ShapeError("view " + shape_str(shape_) + " -> " + shape_str(shape) +
                         " changes element count");
    Tensor t = detached();
    t.shape_ = std::move(shape);
    return t;
}

}  // namespace ivf
