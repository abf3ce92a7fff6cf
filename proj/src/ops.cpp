#include "ivf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace ivf::ops {

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->traced()) continue;
        if (tape && tape != t->tape())
            throw ContractError("operands belong to different tapes");
        tape = t->tape();
    }
    return tape;
}

int parent_of(const Tensor& t) { return t.traced() ? t.node_id() : -1; }

std::vector<int> parent_list(std::initializer_list<const Tensor*> ts) {
    std::vector<int> ids;
    for (const Tensor* t : ts)
        if (t->traced()) ids.push_back(t->node_id());
    return ids;
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype())
        throw ContractError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) +
                            " vs " + dtype_name(b.dtype()));
}

// Effective element strides of `in` aligned to a broadcast result shape.
std::vector<size_t> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<size_t> st(out.size(), 0);
    auto in_st = row_major_strides(in);
    size_t off = out.size() - in.size();
    for (size_t d = 0; d < in.size(); ++d) {
        if (in[d] == out[off + d])
            st[off + d] = in_st[d];
        else if (in[d] != 1)
            throw ShapeError("cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    }
    return st;
}

template <class T, class F>
void ew_binary_kernel(const Tensor& a, const Tensor& b, Tensor& out, F f) {
    auto pa = a.span<T>();
    auto pb = b.span<T>();
    auto po = out.span<T>();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < po.size(); ++i) po[i] = f(pa[i], pb[i]);
        return;
    }
    const Shape& os = out.shape();
    auto sa = bcast_strides(a.shape(), os);
    auto sb = bcast_strides(b.shape(), os);
    size_t rank = os.size();
    std::vector<size_t> idx(rank, 0);
    size_t oa = 0, ob = 0;
    for (size_t i = 0; i < po.size(); ++i) {
        po[i] = f(pa[oa], pb[ob]);
        for (size_t d = rank; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < os[d]) break;
            oa -= sa[d] * os[d];
            ob -= sb[d] * os[d];
            idx[d] = 0;
        }
    }
}

template <class F>
Tensor ew_binary(const Tensor& a, const Tensor& b, const char* name, F f) {
    check_same_dtype(a, b, name);
    Tensor out = Tensor::empty(broadcast_shapes(a.shape(), b.shape()), a.dtype());
    detail::dispatch(a.dtype(), [&]<class T>() { ew_binary_kernel<T>(a, b, out, f); });
    return out;
}

// Contiguous row-major region copy; runs along the innermost axis.
void copy_block(const Tensor& src, Tensor& dst, const std::vector<size_t>& src_origin,
                const std::vector<size_t>& dst_origin, const Shape& extents) {
    size_t rank = extents.size();
    auto sst = row_major_strides(src.shape());
    auto dst_strides = row_major_strides(dst.shape());
    size_t run = extents[rank - 1];
    size_t src_base = 0, dst_base = 0;
    for (size_t d = 0; d < rank; ++d) {
        src_base += src_origin[d] * sst[d];
        dst_base += dst_origin[d] * dst_strides[d];
    }
    size_t outer = shape_numel(extents) / run;
    detail::dispatch(src.dtype(), [&]<class T>() {
        auto ps = src.span<T>();
        auto pd = dst.span<T>();
        std::vector<size_t> idx(rank, 0);
        size_t so = src_base, don = dst_base;
        for (size_t i = 0; i < outer; ++i) {
            std::memcpy(pd.data() + don, ps.data() + so, run * sizeof(T));
            for (size_t d = rank - 1; d-- > 0;) {
                ++idx[d];
                so += sst[d];
                don += dst_strides[d];
                if (idx[d] < extents[d]) break;
                so -= sst[d] * extents[d];
                don -= dst_strides[d] * extents[d];
                idx[d] = 0;
            }
        }
    });
}

// outer * len * inner decomposition around `axis`.
struct Lanes {
    size_t outer, len, inner;
};

Lanes lanes_of(const Shape& s, size_t axis) {
    if (axis >= s.size())
        throw IndexError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    Lanes l{1, s[axis], 1};
    for (size_t d = 0; d < axis; ++d) l.outer *= s[d];
    for (size_t d = axis + 1; d < s.size(); ++d) l.inner *= s[d];
    return l;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (size_t i = 0; i < rank; ++i) {
        size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                             " are not broadcast-compatible");
        out[i] = std::max(ea, eb);
    }
    return out;
}

Tensor reduce_to(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out = Tensor::zeros(target, g.dtype());
    const Shape& gs = g.shape();
    auto ts = bcast_strides(target, gs);  // target broadcast onto g
    size_t rank = gs.size();
    detail::dispatch(g.dtype(), [&]<class T>() {
        auto pg = g.span<T>();
        auto po = out.span<T>();
        std::vector<size_t> idx(rank, 0);
        size_t to = 0;
        for (size_t i = 0; i < pg.size(); ++i) {
            po[to] += pg[i];
            for (size_t d = rank; d-- > 0;) {
                ++idx[d];
                to += ts[d];
                if (idx[d] < gs[d]) break;
                to -= ts[d] * gs[d];
                idx[d] = 0;
            }
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = ew_binary(a, b, "add", [](auto x, auto y) { return x + y; });
    Tape* tape = common_tape({&a, &b});
    if (!tape) return out;
    int ia = parent_of(a), ib = parent_of(b);
    Shape sa = a.shape(), sb = b.shape();
    return tape->record(std::move(out), parent_list({&a, &b}),
                        [ia, ib, sa, sb](Tape& t, const Tensor& g) {
                            if (ia >= 0) t.accumulate(ia, reduce_to(g, sa));
                            if (ib >= 0) t.accumulate(ib, reduce_to(g, sb));
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor out = ew_binary(a, b, "sub", [](auto x, auto y) { return x - y; });
    Tape* tape = common_tape({&a, &b});
    if (!tape) return out;
    int ia = parent_of(a), ib = parent_of(b);
    Shape sa = a.shape(), sb = b.shape();
    return tape->record(std::move(out), parent_list({&a, &b}),
                        [ia, ib, sa, sb](Tape& t, const Tensor& g) {
                            if (ia >= 0) t.accumulate(ia, reduce_to(g, sa));
                            if (ib >= 0) t.accumulate(ib, reduce_to(scale(g, -1.0), sb));
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    Tensor out = ew_binary(a, b, "mul", [](auto x, auto y) { return x * y; });
    Tape* tape = common_tape({&a, &b});
    if (!tape) return out;
    int ia = parent_of(a), ib = parent_of(b);
    Tensor ad = a.detached(), bd = b.detached();
    return tape->record(std::move(out), parent_list({&a, &b}),
                        [ia, ib, ad, bd](Tape& t, const Tensor& g) {
                            if (ia >= 0) t.accumulate(ia, reduce_to(mul(g, bd), ad.shape()));
                            if (ib >= 0) t.accumulate(ib, reduce_to(mul(g, ad), bd.shape()));
                        });
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto po = out.span<T>();
        T f = static_cast<T>(c);
        for (size_t i = 0; i < po.size(); ++i) po[i] = px[i] * f;
    });
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    return tape->record(std::move(out), {ix}, [ix, c](Tape& t, const Tensor& g) {
        t.accumulate(ix, scale(g, c));
    });
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto po = out.span<T>();
        const T inv_sqrt2 = static_cast<T>(0.7071067811865475244);
        for (size_t i = 0; i < po.size(); ++i)
            po[i] = static_cast<T>(0.5) * px[i] * (static_cast<T>(1) + std::erf(px[i] * inv_sqrt2));
    });
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    Tensor xd = x.detached();
    return tape->record(std::move(out), {ix}, [ix, xd](Tape& t, const Tensor& g) {
        Tensor dx = Tensor::empty(xd.shape(), xd.dtype());
        detail::dispatch(xd.dtype(), [&]<class T>() {
            auto px = xd.span<T>();
            auto pg = g.span<T>();
            auto pd = dx.span<T>();
            const T inv_sqrt2 = static_cast<T>(0.7071067811865475244);
            const T inv_sqrt_2pi = static_cast<T>(0.3989422804014326779);
            for (size_t i = 0; i < pd.size(); ++i) {
                T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(px[i] * inv_sqrt2));
                T pdf = inv_sqrt_2pi * std::exp(static_cast<T>(-0.5) * px[i] * px[i]);
                pd[i] = pg[i] * (cdf + px[i] * pdf);
            }
        });
        t.accumulate(ix, dx);
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "matmul");
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul requires rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    size_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
    size_t k2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
    if (k != k2)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    Shape la(a.shape().begin(), a.shape().end() - 2);
    Shape lb(b.shape().begin(), b.shape().end() - 2);
    Shape batch = broadcast_shapes(la, lb);
    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    Tensor out = Tensor::empty(os, a.dtype());

    size_t nbatch = shape_numel(batch);
    auto sa_all = row_major_strides(a.shape());
    auto sb_all = row_major_strides(b.shape());
    std::vector<size_t> sa(batch.size(), 0), sb(batch.size(), 0);
    for (size_t d = 0; d < batch.size(); ++d) {
        size_t ia = d + la.size() - batch.size();  // wraps when d < batch-la gap
        if (d >= batch.size() - la.size() && la[ia] == batch[d]) sa[d] = sa_all[ia];
        size_t ib = d + lb.size() - batch.size();
        if (d >= batch.size() - lb.size() && lb[ib] == batch[d]) sb[d] = sb_all[ib];
    }

    detail::dispatch(a.dtype(), [&]<class T>() {
        auto pa = a.span<T>();
        auto pb = b.span<T>();
        auto po = out.span<T>();
        std::vector<size_t> idx(batch.size(), 0);
        size_t oa = 0, ob = 0;
        for (size_t bi = 0; bi < nbatch; ++bi) {
            const T* A = pa.data() + oa;
            const T* B = pb.data() + ob;
            T* C = po.data() + bi * m * n;
            for (size_t i = 0; i < m; ++i) {
                T* crow = C + i * n;
                std::fill(crow, crow + n, T{});
                const T* arow = A + i * k;
                for (size_t p = 0; p < k; ++p) {
                    T av = arow[p];
                    const T* brow = B + p * n;
                    for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
                }
            }
            for (size_t d = batch.size(); d-- > 0;) {
                ++idx[d];
                oa += sa[d];
                ob += sb[d];
                if (idx[d] < batch[d]) break;
                oa -= sa[d] * batch[d];
                ob -= sb[d] * batch[d];
                idx[d] = 0;
            }
        }
    });

    Tape* tape = common_tape({&a, &b});
    if (!tape) return out;
    int ia = parent_of(a), ib = parent_of(b);
    Tensor ad = a.detached(), bd = b.detached();
    return tape->record(std::move(out), parent_list({&a, &b}),
                        [ia, ib, ad, bd](Tape& t, const Tensor& g) {
                            if (ia >= 0)
                                t.accumulate(ia, reduce_to(matmul(g, transpose_last2(bd)),
                                                           ad.shape()));
                            if (ib >= 0)
                                t.accumulate(ib, reduce_to(matmul(transpose_last2(ad), g),
                                                           bd.shape()));
                        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_same_dtype(x, gamma, "layer_norm");
    check_same_dtype(x, beta, "layer_norm");
    if (x.rank() < 1) throw ShapeError("layer_norm requires rank >= 1");
    size_t dim = x.shape().back();
    if (gamma.shape() != Shape{dim} || beta.shape() != Shape{dim})
        throw ShapeError("layer_norm affine shape mismatch: x " + shape_str(x.shape()) +
                         ", gamma " + shape_str(gamma.shape()) + ", beta " +
                         shape_str(beta.shape()));
    if (eps < 0) throw ContractError("layer_norm eps must be >= 0");
    size_t rows = x.numel() / dim;

    Tensor out = Tensor::empty(x.shape(), x.dtype());
    Tensor xhat = Tensor::empty(x.shape(), x.dtype());
    Tensor inv_std = Tensor::empty({rows}, x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto pg = gamma.span<T>();
        auto pb = beta.span<T>();
        auto po = out.span<T>();
        auto ph = xhat.span<T>();
        auto pi = inv_std.span<T>();
        for (size_t r = 0; r < rows; ++r) {
            const T* row = px.data() + r * dim;
            T mean{};
            for (size_t d = 0; d < dim; ++d) mean += row[d];
            mean /= static_cast<T>(dim);
            T var{};
            for (size_t d = 0; d < dim; ++d) {
                T c = row[d] - mean;
                var += c * c;
            }
            var /= static_cast<T>(dim);
            T inv = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
            pi[r] = inv;
            for (size_t d = 0; d < dim; ++d) {
                T h = (row[d] - mean) * inv;
                ph[r * dim + d] = h;
                po[r * dim + d] = pg[d] * h + pb[d];
            }
        }
    });

    Tape* tape = common_tape({&x, &gamma, &beta});
    if (!tape) return out;
    int ix = parent_of(x), ig = parent_of(gamma), ib = parent_of(beta);
    Tensor gammad = gamma.detached();
    Shape xs = x.shape();
    return tape->record(
        std::move(out), parent_list({&x, &gamma, &beta}),
        [ix, ig, ib, gammad, xhat, inv_std, xs, dim, rows](Tape& t, const Tensor& g) {
            Tensor dx = ix >= 0 ? Tensor::empty(xs, g.dtype()) : Tensor();
            Tensor dgamma = ig >= 0 ? Tensor::zeros({dim}, g.dtype()) : Tensor();
            Tensor dbeta = ib >= 0 ? Tensor::zeros({dim}, g.dtype()) : Tensor();
            detail::dispatch(g.dtype(), [&]<class T>() {
                auto pgrad = g.span<T>();
                auto ph = xhat.span<T>();
                auto pi = inv_std.span<T>();
                auto pgm = gammad.span<T>();
                for (size_t r = 0; r < rows; ++r) {
                    const T* grow = pgrad.data() + r * dim;
                    const T* hrow = ph.data() + r * dim;
                    if (ix >= 0) {
                        T m1{}, m2{};
                        for (size_t d = 0; d < dim; ++d) {
                            T gz = grow[d] * pgm[d];
                            m1 += gz;
                            m2 += gz * hrow[d];
                        }
                        m1 /= static_cast<T>(dim);
                        m2 /= static_cast<T>(dim);
                        T* drow = dx.span<T>().data() + r * dim;
                        for (size_t d = 0; d < dim; ++d) {
                            T gz = grow[d] * pgm[d];
                            drow[d] = pi[r] * (gz - m1 - hrow[d] * m2);
                        }
                    }
                    if (ig >= 0) {
                        T* dg = dgamma.span<T>().data();
                        for (size_t d = 0; d < dim; ++d) dg[d] += grow[d] * hrow[d];
                    }
                    if (ib >= 0) {
                        T* db = dbeta.span<T>().data();
                        for (size_t d = 0; d < dim; ++d) db[d] += grow[d];
                    }
                }
            });
            if (ix >= 0) t.accumulate(ix, dx);
            if (ig >= 0) t.accumulate(ig, dgamma);
            if (ib >= 0) t.accumulate(ib, dbeta);
        });
}

Tensor softmax(const Tensor& x, size_t axis) {
    Lanes l = lanes_of(x.shape(), axis);
    Tensor out = Tensor::empty(x.shape(), x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto po = out.span<T>();
        for (size_t o = 0; o < l.outer; ++o) {
            for (size_t i = 0; i < l.inner; ++i) {
                size_t base = o * l.len * l.inner + i;
                T mx = px[base];
                for (size_t j = 1; j < l.len; ++j)
                    mx = std::max(mx, px[base + j * l.inner]);
                T sum{};
                for (size_t j = 0; j < l.len; ++j) {
                    T e = std::exp(px[base + j * l.inner] - mx);
                    po[base + j * l.inner] = e;
                    sum += e;
                }
                T inv = static_cast<T>(1) / sum;
                for (size_t j = 0; j < l.len; ++j) po[base + j * l.inner] *= inv;
            }
        }
    });
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    Tensor y = out.detached();
    return tape->record(std::move(out), {ix}, [ix, y, l](Tape& t, const Tensor& g) {
        Tensor dx = Tensor::empty(y.shape(), y.dtype());
        detail::dispatch(y.dtype(), [&]<class T>() {
            auto py = y.span<T>();
            auto pg = g.span<T>();
            auto pd = dx.span<T>();
            for (size_t o = 0; o < l.outer; ++o) {
                for (size_t i = 0; i < l.inner; ++i) {
                    size_t base = o * l.len * l.inner + i;
                    T dot{};
                    for (size_t j = 0; j < l.len; ++j)
                        dot += pg[base + j * l.inner] * py[base + j * l.inner];
                    for (size_t j = 0; j < l.len; ++j) {
                        size_t k = base + j * l.inner;
                        pd[k] = py[k] * (pg[k] - dot);
                    }
                }
            }
        });
        t.accumulate(ix, dx);
    });
}

Tensor mean_axis(const Tensor& x, size_t axis) {
    Lanes l = lanes_of(x.shape(), axis);
    Shape os;
    for (size_t d = 0; d < x.rank(); ++d)
        if (d != axis) os.push_back(x.shape()[d]);
    if (os.empty()) os = {1};
    Tensor out = Tensor::zeros(os, x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto po = out.span<T>();
        T inv = static_cast<T>(1) / static_cast<T>(l.len);
        for (size_t o = 0; o < l.outer; ++o)
            for (size_t j = 0; j < l.len; ++j) {
                const T* src = px.data() + (o * l.len + j) * l.inner;
                T* dst = po.data() + o * l.inner;
                for (size_t i = 0; i < l.inner; ++i) dst[i] += src[i];
            }
        for (size_t i = 0; i < po.size(); ++i) po[i] *= inv;
    });
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    Shape xs = x.shape();
    return tape->record(std::move(out), {ix}, [ix, xs, l](Tape& t, const Tensor& g) {
        Tensor dx = Tensor::empty(xs, g.dtype());
        detail::dispatch(g.dtype(), [&]<class T>() {
            auto pg = g.span<T>();
            auto pd = dx.span<T>();
            T inv = static_cast<T>(1) / static_cast<T>(l.len);
            for (size_t o = 0; o < l.outer; ++o)
                for (size_t j = 0; j < l.len; ++j) {
                    const T* src = pg.data() + o * l.inner;
                    T* dst = pd.data() + (o * l.len + j) * l.inner;
                    for (size_t i = 0; i < l.inner; ++i) dst[i] = src[i] * inv;
                }
        });
        t.accumulate(ix, dx);
    });
}

Tensor sum_all(const Tensor& x) {
    Tensor out = Tensor::empty({1}, x.dtype());
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        T s{};
        for (size_t i = 0; i < px.size(); ++i) s += px[i];
        out.span<T>()[0] = s;
    });
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    Shape xs = x.shape();
    return tape->record(std::move(out), {ix}, [ix, xs](Tape& t, const Tensor& g) {
        t.accumulate(ix, Tensor::full(xs, g.item(), g.dtype()));
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    for (size_t e : shape)
        if (e == 0) throw ShapeError("zero extent in reshape target " + shape_str(shape));
    Tensor out = x.detached().reshaped_view(std::move(shape));
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    Shape xs = x.shape();
    return tape->record(std::move(out), {ix}, [ix, xs](Tape& t, const Tensor& g) {
        t.accumulate(ix, g.detached().reshaped_view(xs));
    });
}

Tensor permute(const Tensor& x, const std::vector<size_t>& perm) {
    if (perm.size() != x.rank()) throw ShapeError("permute rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (size_t p : perm) {
        if (p >= perm.size() || seen[p]) throw ShapeError("invalid permutation");
        seen[p] = true;
    }
    Shape os(x.rank());
    for (size_t d = 0; d < x.rank(); ++d) os[d] = x.shape()[perm[d]];
    Tensor out = Tensor::empty(os, x.dtype());
    auto xst = row_major_strides(x.shape());
    std::vector<size_t> step(x.rank());
    for (size_t d = 0; d < x.rank(); ++d) step[d] = xst[perm[d]];
    detail::dispatch(x.dtype(), [&]<class T>() {
        auto px = x.span<T>();
        auto po = out.span<T>();
        std::vector<size_t> idx(os.size(), 0);
        size_t src = 0;
        for (size_t i = 0; i < po.size(); ++i) {
            po[i] = px[src];
            for (size_t d = os.size(); d-- > 0;) {
                ++idx[d];
                src += step[d];
                if (idx[d] < os[d]) break;
                src -= step[d] * os[d];
                idx[d] = 0;
            }
        }
    });
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    std::vector<size_t> inv(perm.size());
    for (size_t d = 0; d < perm.size(); ++d) inv[perm[d]] = d;
    return tape->record(std::move(out), {ix}, [ix, inv](Tape& t, const Tensor& g) {
        t.accumulate(ix, permute(g, inv));
    });
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("transpose_last2 requires rank >= 2");
    std::vector<size_t> perm(x.rank());
    std::iota(perm.begin(), perm.end(), size_t{0});
    std::swap(perm[x.rank() - 2], perm[x.rank() - 1]);
    return permute(x, perm);
}

Tensor slice(const Tensor& x, const std::vector<size_t>& starts,
             const std::vector<size_t>& stops) {
    if (starts.size() != x.rank() || stops.size() != x.rank())
        throw IndexError("slice bounds rank mismatch for " + shape_str(x.shape()));
    Shape extents(x.rank());
    for (size_t d = 0; d < x.rank(); ++d) {
        if (starts[d] >= stops[d] || stops[d] > x.shape()[d])
            throw IndexError("slice range [" + std::to_string(starts[d]) + "," +
                             std::to_string(stops[d]) + ") out of bounds for axis " +
                             std::to_string(d) + " of " + shape_str(x.shape()));
        extents[d] = stops[d] - starts[d];
    }
    Tensor out = Tensor::empty(extents, x.dtype());
    copy_block(x, out, starts, std::vector<size_t>(x.rank(), 0), extents);
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    Shape xs = x.shape();
    std::vector<size_t> offs = starts;
    return tape->record(std::move(out), {ix}, [ix, xs, offs](Tape& t, const Tensor& g) {
        t.accumulate(ix, zero_pad_assign(g, xs, offs));
    });
}

Tensor slice_axis(const Tensor& x, size_t axis, size_t start, size_t stop) {
    if (axis >= x.rank())
        throw IndexError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    std::vector<size_t> starts(x.rank(), 0);
    std::vector<size_t> stops(x.shape());
    starts[axis] = start;
    stops[axis] = stop;
    return slice(x, starts, stops);
}

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Tensor& first = parts.front();
    if (axis >= first.rank()) throw IndexError("concat axis out of range");
    Shape os = first.shape();
    size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != first.rank() || p.dtype() != first.dtype())
            throw ShapeError("concat operands disagree in rank or dtype");
        for (size_t d = 0; d < os.size(); ++d)
            if (d != axis && p.shape()[d] != os[d])
                throw ShapeError("concat extent mismatch at axis " + std::to_string(d) + ": " +
                                 shape_str(p.shape()) + " vs " + shape_str(os));
        total += p.shape()[axis];
    }
    os[axis] = total;
    Tensor out = Tensor::empty(os, first.dtype());
    size_t cursor = 0;
    for (const Tensor& p : parts) {
        std::vector<size_t> dst_origin(os.size(), 0);
        dst_origin[axis] = cursor;
        copy_block(p, out, std::vector<size_t>(os.size(), 0), dst_origin, p.shape());
        cursor += p.shape()[axis];
    }
    std::vector<const Tensor*> ptrs;
    for (const Tensor& p : parts) ptrs.push_back(&p);
    Tape* tape = nullptr;
    for (const Tensor* p : ptrs) {
        if (!p->traced()) continue;
        if (tape && tape != p->tape()) throw ContractError("operands belong to different tapes");
        tape = p->tape();
    }
    if (!tape) return out;
    std::vector<int> ids;
    std::vector<size_t> offsets;
    std::vector<size_t> lens;
    size_t at = 0;
    std::vector<int> parents;
    for (const Tensor& p : parts) {
        ids.push_back(parent_of(p));
        offsets.push_back(at);
        lens.push_back(p.shape()[axis]);
        at += p.shape()[axis];
        if (p.traced()) parents.push_back(p.node_id());
    }
    return tape->record(std::move(out), std::move(parents),
                        [ids, offsets, lens, axis](Tape& t, const Tensor& g) {
                            for (size_t i = 0; i < ids.size(); ++i) {
                                if (ids[i] < 0) continue;
                                t.accumulate(ids[i], slice_axis(g, axis, offsets[i],
                                                                offsets[i] + lens[i]));
                            }
                        });
}

Tensor zero_pad_assign(const Tensor& x, Shape out_shape, const std::vector<size_t>& offsets) {
    if (offsets.size() != x.rank() || out_shape.size() != x.rank())
        throw ShapeError("zero_pad_assign rank mismatch");
    for (size_t d = 0; d < x.rank(); ++d)
        if (offsets[d] + x.shape()[d] > out_shape[d])
            throw IndexError("zero_pad_assign region exceeds target " + shape_str(out_shape) +
                             " at axis " + std::to_string(d));
    Tensor out = Tensor::zeros(out_shape, x.dtype());
    copy_block(x, out, std::vector<size_t>(x.rank(), 0), offsets, x.shape());
    Tape* tape = common_tape({&x});
    if (!tape) return out;
    int ix = x.node_id();
    std::vector<size_t> starts = offsets;
    Shape xs = x.shape();
    return tape->record(std::move(out), {ix}, [ix, starts, xs](Tape& t, const Tensor& g) {
        std::vector<size_t> stops(starts.size());
        for (size_t d = 0; d < stops.size(); ++d) stops[d] = starts[d] + xs[d];
        t.accumulate(ix, slice(g, starts, stops));
    });
}

Tensor debug_grad_scale(const Tensor& x, double factor) {
    if (!x.traced() || factor == 1.0) return x;
    Tape* tape = x.tape();
    int ix = x.node_id();
    return tape->record(x.detached(), {ix}, [ix, factor](Tape& t, const Tensor& g) {
        t.accumulate(ix, scale(g, factor));
    });
}

}  // namespace ivf::ops
