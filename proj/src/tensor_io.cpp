#include "ivf/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ivf {

namespace {

constexpr char kMagic[4] = {'I', 'V', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "IVT1 serialization assumes a little-endian host");

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& in, const std::string& context) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw IoError("truncated tensor record in " + context);
    return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
    out.write(kMagic, 4);
    write_u32(out, static_cast<uint32_t>(t.rank()));
    for (size_t e : t.shape()) write_u32(out, static_cast<uint32_t>(e));
    if (t.dtype() == DType::f32) {
        auto s = t.span<float>();
        out.write(reinterpret_cast<const char*>(s.data()),
                  static_cast<std::streamsize>(s.size() * sizeof(float)));
    } else {
        auto s = t.span<double>();
        for (double v : s) {
            float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
    }
    if (!out) throw IoError("tensor write failed");
}

Shape read_tensor_header(std::istream& in, const std::string& context) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad tensor magic in " + context);
    uint32_t rank = read_u32(in, context);
    if (rank == 0 || rank > 8) throw IoError("implausible tensor rank in " + context);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) {
        shape[d] = read_u32(in, context);
        if (shape[d] == 0) throw IoError("zero extent in tensor header of " + context);
    }
    return shape;
}

Tensor read_tensor(std::istream& in, DType dt, const std::string& context) {
    Shape shape = read_tensor_header(in, context);
    size_t n = shape_numel(shape);
    std::vector<float> payload(n);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw IoError("truncated tensor payload in " + context);
    Tensor t = Tensor::empty(std::move(shape), dt);
    detail::dispatch(dt, [&]<class T>() {
        auto dst = t.span<T>();
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(payload[i]);
    });
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path, DType dt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_tensor(in, dt, path.string());
}

Shape peek_tensor_shape(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_tensor_header(in, path.string());
}

}  // namespace ivf
