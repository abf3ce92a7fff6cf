#include "doctest.h"

#include <cmath>
#include <sstream>

#include "ivf/ops.hpp"
#include "ivf/rng.hpp"
#include "ivf/tensor.hpp"
#include "ivf/tensor_io.hpp"

using namespace ivf;

namespace {

// Independent naive triple-loop product, no batching.
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  size_t m, size_t k, size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j)
            for (size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

Tensor random_tensor(Shape shape, Rng& rng, DType dt = DType::f64) {
    Tensor t = Tensor::empty(std::move(shape), dt);
    for (size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(-1.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor i2 = Tensor::from({1, 0, 0, 1}, {2, 2}, DType::f64);
    Tensor b = Tensor::from({5, 6, 7, 8}, {2, 2}, DType::f64);
    Tensor c = ops::matmul(i2, b);
    CHECK(c.to_vector() == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("matmul matches the naive oracle") {
    std::vector<double> a{1, 2, 3, 4}, b{5, 6, 7, 8};
    auto expect = matmul_oracle(a, b, 2, 2, 2);
    CHECK(expect == std::vector<double>{19, 22, 43, 50});
    Tensor c = ops::matmul(Tensor::from(a, {2, 2}, DType::f64),
                           Tensor::from(b, {2, 2}, DType::f64));
    CHECK(c.to_vector() == expect);
}

TEST_CASE("matmul batched shapes and values") {
    Rng rng(11);
    Tensor a = random_tensor({2, 3, 4}, rng);
    Tensor b = random_tensor({2, 4, 5}, rng);
    Tensor c = ops::matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 5});
    auto av = a.to_vector(), bv = b.to_vector(), cv = c.to_vector();
    for (size_t batch = 0; batch < 2; ++batch) {
        auto expect = matmul_oracle({av.begin() + batch * 12, av.begin() + (batch + 1) * 12},
                                    {bv.begin() + batch * 20, bv.begin() + (batch + 1) * 20}, 3,
                                    4, 5);
        for (size_t i = 0; i < 15; ++i)
            CHECK(cv[batch * 15 + i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul broadcasts leading extents") {
    Rng rng(12);
    Tensor a = random_tensor({2, 3, 3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor c = ops::matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 3, 5});
    auto av = a.to_vector(), bv = b.to_vector(), cv = c.to_vector();
    auto expect = matmul_oracle({av.begin() + 5 * 12, av.begin() + 6 * 12}, bv, 3, 4, 5);
    for (size_t i = 0; i < 15; ++i)
        CHECK(cv[5 * 15 + i] == doctest::Approx(expect[i]).epsilon(1e-12));
}

TEST_CASE("matmul rejects mismatched inner extents naming both shapes") {
    Tensor a = Tensor::zeros({2, 3}, DType::f64);
    Tensor b = Tensor::zeros({4, 2}, DType::f64);
    try {
        ops::matmul(a, b);
        FAIL("no error thrown");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,2)") != std::string::npos);
    }
}

TEST_CASE("layer_norm zero variance maps to beta") {
    Tensor x = Tensor::from({5, 5, 5, 5}, {4}, DType::f64);
    Tensor gamma = Tensor::full({4}, 1.0, DType::f64);
    Tensor beta = Tensor::zeros({4}, DType::f64);
    Tensor y = ops::layer_norm(x, gamma, beta, 1e-5);
    for (double v : y.to_vector()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("layer_norm hand evaluation") {
    // mean 2, population std 1
    Tensor x = Tensor::from({1, 3}, {2}, DType::f64);
    Tensor y = ops::layer_norm(x, Tensor::full({2}, 1.0, DType::f64),
                               Tensor::zeros({2}, DType::f64), 0.0);
    CHECK(y.to_vector()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y.to_vector()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm with gamma zero returns beta") {
    Rng rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor beta = random_tensor({4}, rng);
    Tensor y = ops::layer_norm(x, Tensor::zeros({4}, DType::f64), beta, 1e-5);
    auto yv = y.to_vector();
    auto bv = beta.to_vector();
    for (size_t r = 0; r < 3; ++r)
        for (size_t d = 0; d < 4; ++d) CHECK(yv[r * 4 + d] == doctest::Approx(bv[d]));
}

TEST_CASE("softmax examples") {
    Tensor u = ops::softmax(Tensor::zeros({4}, DType::f64), 0);
    for (double v : u.to_vector()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

    Tensor x = Tensor::from({std::log(1.0), std::log(3.0)}, {2}, DType::f64);
    auto y = ops::softmax(x, 0).to_vector();
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-12));

    auto big = ops::softmax(Tensor::from({1000, 1000}, {2}, DType::f64), 0).to_vector();
    CHECK(big[0] == doctest::Approx(0.5));
    CHECK(big[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one at both dtypes") {
    Rng rng(17);
    for (DType dt : {DType::f64, DType::f32}) {
        Tensor x = random_tensor({4, 7, 3}, rng, dt);
        for (size_t axis = 0; axis < 3; ++axis) {
            Tensor y = ops::softmax(x, axis);
            Tensor s = ops::scale(ops::mean_axis(y, axis), double(x.shape()[axis]));
            double tol = dt == DType::f64 ? 1e-12 : 1e-5;
            for (double v : s.to_vector()) CHECK(std::abs(v - 1.0) < tol);
        }
    }
}

TEST_CASE("mean_axis hand evaluation") {
    Tensor x = Tensor::from({1, 2, 3, 4}, {2, 2}, DType::f64);
    CHECK(ops::mean_axis(x, 0).to_vector() == std::vector<double>{2, 3});
    CHECK(ops::mean_axis(x, 1).to_vector() == std::vector<double>{1.5, 3.5});
}

TEST_CASE("reshape preserves row-major element order and never copies") {
    Rng rng(3);
    Tensor x = random_tensor({2, 4, 3, 8, 8}, rng);
    Tensor y = ops::reshape(x, {8, 3, 8, 8});
    CHECK(y.to_vector() == x.to_vector());
    CHECK(y.shares_storage(x));
    Tensor back = ops::reshape(ops::reshape(x, {1536}), {2, 4, 3, 8, 8});
    CHECK(back.to_vector() == x.to_vector());
}

TEST_CASE("gelu fixed point and reflection") {
    CHECK(ops::gelu(Tensor::zeros({1}, DType::f64)).item() == 0.0);
    // erf form satisfies gelu(x) - gelu(-x) == x
    Rng rng(9);
    for (int i = 0; i < 20; ++i) {
        double x = rng.uniform(-3, 3);
        double a = ops::gelu(Tensor::scalar(x, DType::f64)).item();
        double b = ops::gelu(Tensor::scalar(-x, DType::f64)).item();
        CHECK(a - b == doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("permute matches a manual transpose") {
    Rng rng(21);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor y = ops::permute(x, {2, 0, 1});
    CHECK(y.shape() == Shape{4, 2, 3});
    for (size_t a = 0; a < 2; ++a)
        for (size_t b = 0; b < 3; ++b)
            for (size_t c = 0; c < 4; ++c)
                CHECK(y.at((c * 2 + a) * 3 + b) == x.at((a * 3 + b) * 4 + c));
}

TEST_CASE("slice and zero_pad_assign are inverse-shaped") {
    Rng rng(23);
    Tensor x = random_tensor({3, 5, 4}, rng);
    Tensor s = ops::slice(x, {1, 0, 2}, {3, 4, 4});
    CHECK(s.shape() == Shape{2, 4, 2});
    for (size_t i = 0; i < 2; ++i)
        for (size_t j = 0; j < 4; ++j)
            for (size_t k = 0; k < 2; ++k)
                CHECK(s.at((i * 4 + j) * 2 + k) == x.at(((i + 1) * 5 + j) * 4 + (k + 2)));
    Tensor p = ops::zero_pad_assign(s, {3, 5, 4}, {1, 0, 2});
    CHECK(p.shape() == x.shape());
    CHECK(ops::slice(p, {1, 0, 2}, {3, 4, 4}).to_vector() == s.to_vector());
    CHECK(p.at(0) == 0.0);
}

TEST_CASE("slice out of range raises an index error") {
    Tensor x = Tensor::zeros({3, 4}, DType::f64);
    CHECK_THROWS_AS(ops::slice_axis(x, 1, 2, 6), IndexError);
    CHECK_THROWS_AS(ops::slice_axis(x, 5, 0, 1), IndexError);
}

TEST_CASE("concat stitches along an axis") {
    Tensor a = Tensor::from({1, 2}, {1, 2}, DType::f64);
    Tensor b = Tensor::from({3, 4, 5, 6}, {2, 2}, DType::f64);
    Tensor c = ops::concat({a, b}, 0);
    CHECK(c.shape() == Shape{3, 2});
    CHECK(c.to_vector() == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(ops::concat({a, Tensor::zeros({1, 3}, DType::f64)}, 0), ShapeError);
}

TEST_CASE("broadcast add/sub/mul") {
    Tensor x = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3}, DType::f64);
    Tensor row = Tensor::from({10, 20, 30}, {3}, DType::f64);
    CHECK(ops::add(x, row).to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});
    Tensor col = Tensor::from({1, 2}, {2, 1}, DType::f64);
    CHECK(ops::mul(x, col).to_vector() == std::vector<double>{1, 2, 3, 8, 10, 12});
    CHECK(ops::sub(x, row).to_vector() == std::vector<double>{-9, -18, -27, -6, -15, -24});
    CHECK_THROWS_AS(ops::add(x, Tensor::zeros({4}, DType::f64)), ShapeError);
}

TEST_CASE("tensor file round trip") {
    Rng rng(31);
    Tensor t = random_tensor({2, 3, 5}, rng, DType::f32);
    std::stringstream buf;
    write_tensor(buf, t);
    Tensor back = read_tensor(buf, DType::f32, "buffer");
    CHECK(back.shape() == t.shape());
    for (size_t i = 0; i < t.numel(); ++i) CHECK(back.span<float>()[i] == t.span<float>()[i]);
}

TEST_CASE("tensor file rejects bad magic and truncation") {
    std::stringstream bad("XXXX????");
    CHECK_THROWS_AS(read_tensor(bad, DType::f32, "buffer"), IoError);

    Tensor t = Tensor::full({4}, 1.5, DType::f32);
    std::stringstream buf;
    write_tensor(buf, t);
    std::string bytes = buf.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_tensor(cut, DType::f32, "buffer"), IoError);
}

TEST_CASE("zero extents are rejected") {
    CHECK_THROWS_AS(Tensor::zeros({2, 0}, DType::f32), ShapeError);
}

TEST_CASE("layer_norm rejects mismatched affine widths") {
    Tensor x = Tensor::zeros({2, 6}, DType::f64);
    CHECK_THROWS_AS(ops::layer_norm(x, Tensor::zeros({4}, DType::f64),
                                    Tensor::zeros({6}, DType::f64), 1e-5),
                    ShapeError);
}

TEST_CASE("mixed dtypes are rejected") {
    Tensor a = Tensor::zeros({2}, DType::f32);
    Tensor b = Tensor::zeros({2}, DType::f64);
    CHECK_THROWS_AS(ops::add(a, b), ContractError);
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 2}, DType::f32),
                                Tensor::zeros({2, 2}, DType::f64)),
                    ContractError);
}
