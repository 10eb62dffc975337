#include "tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace csts {

namespace {

using detail::make_result;
using detail::record;

// dst[c, r] = src[r, c] for a rows x cols matrix.
void transpose_into(std::vector<double>& dst, const double* src, Index rows, Index cols) {
    dst.resize(static_cast<std::size_t>(rows * cols));
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) dst[static_cast<std::size_t>(c * rows + r)] = src[r * cols + c];
}

double dot(const double* x, const double* y, Index n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    Index i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += x[i] * y[i];
        s1 += x[i + 1] * y[i + 1];
        s2 += x[i + 2] * y[i + 2];
        s3 += x[i + 3] * y[i + 3];
    }
    for (; i < n; ++i) s0 += x[i] * y[i];
    return (s0 + s1) + (s2 + s3);
}

// C[m, n] += A B with a(i, p) = A[i * sai + p * sap] and B row-major
// [k, n]. Every C element accumulates its products in ascending p, one
// multiply and one add at a time; the 4 x 4 tiles only keep C in registers.
void gemm_strided_acc(double* C, const double* A, Index sai, Index sap, const double* B, Index m, Index k, Index n) {
    constexpr Index mr = 4, nr = 4;
    const Index m4 = m - m % mr, n4 = n - n % nr;
    for (Index i0 = 0; i0 < m4; i0 += mr) {
        for (Index j0 = 0; j0 < n4; j0 += nr) {
            double c[mr][nr];
            for (Index i = 0; i < mr; ++i)
                for (Index j = 0; j < nr; ++j) c[i][j] = C[(i0 + i) * n + j0 + j];
            for (Index p = 0; p < k; ++p) {
                const double* b = B + p * n + j0;
                for (Index i = 0; i < mr; ++i) {
                    const double a = A[(i0 + i) * sai + p * sap];
                    for (Index j = 0; j < nr; ++j) c[i][j] += a * b[j];
                }
            }
            for (Index i = 0; i < mr; ++i)
                for (Index j = 0; j < nr; ++j) C[(i0 + i) * n + j0 + j] = c[i][j];
        }
        for (Index i = i0; i < i0 + mr; ++i)
            for (Index p = 0; p < k; ++p) {
                const double a = A[i * sai + p * sap];
                for (Index j = n4; j < n; ++j) C[i * n + j] += a * B[p * n + j];
            }
    }
    for (Index i = m4; i < m; ++i)
        for (Index p = 0; p < k; ++p) {
            const double a = A[i * sai + p * sap];
            for (Index j = 0; j < n; ++j) C[i * n + j] += a * B[p * n + j];
        }
}

// C[m, n] += A[m, k] B[k, n], all row-major. Narrow outputs use dot
// products against a transposed B so the inner loop runs over k.
void gemm_acc(double* C, const double* A, const double* B, Index m, Index k, Index n) {
    if (n >= 16 || k < 8) {
        gemm_strided_acc(C, A, k, 1, B, m, k, n);
        return;
    }
    std::vector<double> bt;
    transpose_into(bt, B, k, n);
    for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) C[i * n + j] += dot(A + i * k, bt.data() + j * k, k);
}

using detail::should_record;

std::vector<Index> contiguous_strides(const Shape& shape) {
    std::vector<Index> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
    return s;
}

int normalize_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                             std::to_string(rank));
    return a;
}

// Strides of `in` expressed along the dims of the broadcast result `out`
// (zero on broadcast dims).
std::vector<Index> broadcast_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    const std::size_t ri = in.size();
    const auto cs = contiguous_strides(in);
    std::vector<Index> s(r, 0);
    for (std::size_t i = 0; i < r; ++i) {
        if (i + ri < r) continue;
        const std::size_t k = i + ri - r;
        s[i] = (in[k] == 1 && out[i] != 1) ? 0 : cs[k];
    }
    return s;
}

// Calls f(i, ia, ib) for every flat output index with the matching input
// offsets. Innermost dimension runs as a tight loop.
template <class F>
void broadcast_loop(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, F&& f) {
    const std::size_t r = out.size();
    const Index inner = out[r - 1];
    const Index ia_step = sa[r - 1];
    const Index ib_step = sb[r - 1];
    const Index outer = shape_numel(out) / inner;
    std::vector<Index> idx(r, 0);
    Index oa = 0, ob = 0, i = 0;
    for (Index o = 0; o < outer; ++o) {
        for (Index j = 0; j < inner; ++j) f(i++, oa + j * ia_step, ob + j * ib_step);
        for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
            const auto du = static_cast<std::size_t>(d);
            ++idx[du];
            oa += sa[du];
            ob += sb[du];
            if (idx[du] < out[du]) break;
            oa -= sa[du] * out[du];
            ob -= sb[du] * out[du];
            idx[du] = 0;
        }
    }
}

enum class BinOp { add, sub, mul, div };

const char* bin_name(BinOp op) {
    switch (op) {
    case BinOp::add: return "add";
    case BinOp::sub: return "sub";
    case BinOp::mul: return "mul";
    case BinOp::div: return "div";
    }
    return "?";
}

Tensor binary(const Tensor& a, const Tensor& b, BinOp op) {
    const char* name = bin_name(op);
    Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    const bool same = a.shape() == b.shape();
    auto kernel = [&](auto fn) {
        if (same) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(pa[i], pb[i]);
        } else {
            broadcast_loop(out_shape, sa, sb, [&](Index i, Index ia, Index ib) { out[static_cast<std::size_t>(i)] = fn(pa[ia], pb[ib]); });
        }
    };
    switch (op) {
    case BinOp::add: kernel([](double x, double y) { return x + y; }); break;
    case BinOp::sub: kernel([](double x, double y) { return x - y; }); break;
    case BinOp::mul: kernel([](double x, double y) { return x * y; }); break;
    case BinOp::div: kernel([](double x, double y) { return x / y; }); break;
    }
    Tensor result = make_result(name, out_shape, std::move(out));
    if (should_record({&a, &b})) {
        auto* ia = a.impl().get();
        auto* ib = b.impl().get();
        auto* io = result.impl().get();
        record(name, result, {a, b}, [ia, ib, io, sa, sb, op, same]() {
            const double* g = io->grad.data();
            const double* va = ia->data.data();
            const double* vb = ib->data.data();
            double* ga = ia->requires_grad ? ia->grad.data() : nullptr;
            double* gb = ib->requires_grad ? ib->grad.data() : nullptr;
            auto step = [&](Index i, Index xa, Index xb) {
                const double gi = g[i];
                switch (op) {
                case BinOp::add:
                    if (ga) ga[xa] += gi;
                    if (gb) gb[xb] += gi;
                    break;
                case BinOp::sub:
                    if (ga) ga[xa] += gi;
                    if (gb) gb[xb] -= gi;
                    break;
                case BinOp::mul:
                    if (ga) ga[xa] += gi * vb[xb];
                    if (gb) gb[xb] += gi * va[xa];
                    break;
                case BinOp::div:
                    if (ga) ga[xa] += gi / vb[xb];
                    if (gb) gb[xb] -= gi * va[xa] / (vb[xb] * vb[xb]);
                    break;
                }
            };
            if (same) {
                const auto n = static_cast<Index>(io->data.size());
                for (Index i = 0; i < n; ++i) step(i, i, i);
            } else {
                broadcast_loop(io->shape, sa, sb, step);
            }
        });
    }
    return result;
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
    std::vector<double> out(x.data().begin(), x.data().end());
    for (double& v : out) v = fwd(v);
    Tensor result = make_result(name, x.shape(), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record(name, result, {x}, [ix, io, deriv]() {
            for (std::size_t i = 0; i < io->grad.size(); ++i)
                ix->grad[i] += io->grad[i] * deriv(ix->data[i], io->data[i]);
        });
    }
    return result;
}

struct AxisSplit {
    Index outer, n, inner;
};

AxisSplit split_at(const Shape& shape, int axis) {
    AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const Index da = i + a.size() >= r ? a[i + a.size() - r] : 1;
        const Index db = i + b.size() >= r ? b[i + b.size() - r] : 1;
        if (da != db && da != 1 && db != 1)
            throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                 " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div); }

Tensor add_scalar(const Tensor& x, double c) {
    return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
    return unary(x, "mul_scalar", [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data())
        if (!(v > 0.0)) throw NumericError("op 'log' received a non-positive input");
    return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v, double) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor result = make_result("sum", {1}, {s});
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("sum", result, {x}, [ix, io]() {
            const double g = io->grad[0];
            for (double& gi : ix->grad) gi += g;
        });
    }
    return result;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, int axis, bool keepdim) {
    const int a = normalize_axis(axis, x.rank(), "sum");
    const AxisSplit s = split_at(x.shape(), a);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[static_cast<std::size_t>(a)] = 1;
    } else {
        out_shape.erase(out_shape.begin() + a);
        if (out_shape.empty()) out_shape.push_back(1);
    }
    std::vector<double> out(static_cast<std::size_t>(s.outer * s.inner), 0.0);
    const double* px = x.data().data();
    for (Index o = 0; o < s.outer; ++o)
        for (Index k = 0; k < s.n; ++k) {
            const double* row = px + (o * s.n + k) * s.inner;
            double* dst = out.data() + o * s.inner;
            for (Index i = 0; i < s.inner; ++i) dst[i] += row[i];
        }
    Tensor result = make_result("sum_axis", std::move(out_shape), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("sum_axis", result, {x}, [ix, io, s]() {
            for (Index o = 0; o < s.outer; ++o)
                for (Index k = 0; k < s.n; ++k) {
                    double* dst = ix->grad.data() + (o * s.n + k) * s.inner;
                    const double* g = io->grad.data() + o * s.inner;
                    for (Index i = 0; i < s.inner; ++i) dst[i] += g[i];
                }
        });
    }
    return result;
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
    const int a = normalize_axis(axis, x.rank(), "mean");
    return mul_scalar(sum(x, a, keepdim), 1.0 / static_cast<double>(x.shape()[static_cast<std::size_t>(a)]));
}

Tensor reshape(const Tensor& x, Shape shape) {
    Index known = 1;
    int infer = -1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == -1) {
            if (infer >= 0) throw DimensionError("reshape: more than one inferred extent");
            infer = static_cast<int>(i);
        } else {
            known *= shape[i];
        }
    }
    if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor result = make_result("reshape", std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("reshape", result, {x}, [ix, io]() {
            for (std::size_t i = 0; i < io->grad.size(); ++i) ix->grad[i] += io->grad[i];
        });
    }
    return result;
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
    const int r = x.rank();
    if (static_cast<int>(dims.size()) != r) throw DimensionError("permute: wrong number of dims for " + shape_str(x.shape()));
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    Shape out_shape(static_cast<std::size_t>(r));
    const auto in_strides = contiguous_strides(x.shape());
    std::vector<Index> s(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) {
        const int d = normalize_axis(dims[static_cast<std::size_t>(i)], r, "permute");
        if (seen[static_cast<std::size_t>(d)]) throw DimensionError("permute: repeated axis");
        seen[static_cast<std::size_t>(d)] = true;
        out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(d)];
        s[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(d)];
    }
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* px = x.data().data();
    broadcast_loop(out_shape, s, s, [&](Index i, Index src, Index) { out[static_cast<std::size_t>(i)] = px[src]; });
    Tensor result = make_result("permute", out_shape, std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("permute", result, {x}, [ix, io, s, out_shape]() {
            broadcast_loop(out_shape, s, s, [&](Index i, Index src, Index) { ix->grad[static_cast<std::size_t>(src)] += io->grad[static_cast<std::size_t>(i)]; });
        });
    }
    return result;
}

Tensor transpose(const Tensor& x, int a, int b) {
    const int r = x.rank();
    std::vector<int> dims(static_cast<std::size_t>(r));
    std::iota(dims.begin(), dims.end(), 0);
    std::swap(dims[static_cast<std::size_t>(normalize_axis(a, r, "transpose"))],
              dims[static_cast<std::size_t>(normalize_axis(b, r, "transpose"))]);
    return permute(x, dims);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ContractError("concat: no inputs");
    const int r = xs[0].rank();
    const int a = normalize_axis(axis, r, "concat");
    Shape out_shape = xs[0].shape();
    out_shape[static_cast<std::size_t>(a)] = 0;
    for (const auto& t : xs) {
        if (t.rank() != r) throw DimensionError("concat: rank mismatch " + shape_str(xs[0].shape()) + " vs " + shape_str(t.shape()));
        for (int d = 0; d < r; ++d)
            if (d != a && t.shape()[static_cast<std::size_t>(d)] != xs[0].shape()[static_cast<std::size_t>(d)])
                throw DimensionError("concat: shapes " + shape_str(xs[0].shape()) + " and " + shape_str(t.shape()) +
                                     " differ off axis " + std::to_string(a));
        out_shape[static_cast<std::size_t>(a)] += t.shape()[static_cast<std::size_t>(a)];
    }
    const AxisSplit so = split_at(out_shape, a);
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    std::vector<Index> offsets;
    Index off = 0;
    for (const auto& t : xs) {
        offsets.push_back(off);
        const Index chunk = t.shape()[static_cast<std::size_t>(a)] * so.inner;
        const double* src = t.data().data();
        for (Index o = 0; o < so.outer; ++o)
            std::copy(src + o * chunk, src + (o + 1) * chunk, out.data() + o * so.n * so.inner + off);
        off += chunk;
    }
    Tensor result = make_result("concat", out_shape, std::move(out));
    if (should_record(xs)) {
        std::vector<TensorImpl*> impls;
        for (const auto& t : xs) impls.push_back(t.impl().get());
        auto* io = result.impl().get();
        record("concat", result, xs, [impls, io, offsets, a, so]() {
            for (std::size_t k = 0; k < impls.size(); ++k) {
                TensorImpl* in = impls[k];
                if (!in->requires_grad) continue;
                const Index chunk = in->shape[static_cast<std::size_t>(a)] * so.inner;
                for (Index o = 0; o < so.outer; ++o) {
                    const double* g = io->grad.data() + o * so.n * so.inner + offsets[k];
                    double* dst = in->grad.data() + o * chunk;
                    for (Index i = 0; i < chunk; ++i) dst[i] += g[i];
                }
            }
        });
    }
    return result;
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
    const int a = normalize_axis(axis, x.rank(), "slice");
    const AxisSplit s = split_at(x.shape(), a);
    if (start < 0 || length <= 0 || start + length > s.n)
        throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                             ") outside axis of extent " + std::to_string(s.n));
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(a)] = length;
    std::vector<double> out(static_cast<std::size_t>(s.outer * length * s.inner));
    const double* px = x.data().data();
    for (Index o = 0; o < s.outer; ++o)
        std::copy(px + (o * s.n + start) * s.inner, px + (o * s.n + start + length) * s.inner,
                  out.data() + o * length * s.inner);
    Tensor result = make_result("slice", std::move(out_shape), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("slice", result, {x}, [ix, io, s, start, length]() {
            for (Index o = 0; o < s.outer; ++o) {
                const double* g = io->grad.data() + o * length * s.inner;
                double* dst = ix->grad.data() + (o * s.n + start) * s.inner;
                for (Index i = 0; i < length * s.inner; ++i) dst[i] += g[i];
            }
        });
    }
    return result;
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<Index>& lengths) {
    const Index total = std::accumulate(lengths.begin(), lengths.end(), Index{0});
    if (total != x.size(axis))
        throw DimensionError("split: lengths sum to " + std::to_string(total) + " but axis has extent " +
                             std::to_string(x.size(axis)));
    std::vector<Tensor> parts;
    Index start = 0;
    for (Index len : lengths) {
        parts.push_back(slice(x, axis, start, len));
        start += len;
    }
    return parts;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    const Shape out_shape = broadcast_shapes(x.shape(), shape, "broadcast_to");
    if (out_shape != shape)
        throw DimensionError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    const auto s = broadcast_strides(x.shape(), out_shape);
    std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
    const double* px = x.data().data();
    broadcast_loop(out_shape, s, s, [&](Index i, Index src, Index) { out[static_cast<std::size_t>(i)] = px[src]; });
    Tensor result = make_result("broadcast_to", out_shape, std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("broadcast_to", result, {x}, [ix, io, s, out_shape]() {
            broadcast_loop(out_shape, s, s, [&](Index i, Index src, Index) { ix->grad[static_cast<std::size_t>(src)] += io->grad[static_cast<std::size_t>(i)]; });
        });
    }
    return result;
}

Tensor repeat_axis(const Tensor& x, int axis, Index factor) {
    const int a = normalize_axis(axis, x.rank(), "repeat_axis");
    if (factor < 1) throw ContractError("repeat_axis: factor must be >= 1");
    const AxisSplit s = split_at(x.shape(), a);
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(a)] *= factor;
    std::vector<double> out(static_cast<std::size_t>(x.numel() * factor));
    const double* px = x.data().data();
    for (Index o = 0; o < s.outer; ++o)
        for (Index k = 0; k < s.n; ++k)
            for (Index r = 0; r < factor; ++r)
                std::copy(px + (o * s.n + k) * s.inner, px + (o * s.n + k + 1) * s.inner,
                          out.data() + ((o * s.n + k) * factor + r) * s.inner);
    Tensor result = make_result("repeat_axis", std::move(out_shape), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("repeat_axis", result, {x}, [ix, io, s, factor]() {
            for (Index o = 0; o < s.outer; ++o)
                for (Index k = 0; k < s.n; ++k)
                    for (Index r = 0; r < factor; ++r) {
                        const double* g = io->grad.data() + ((o * s.n + k) * factor + r) * s.inner;
                        double* dst = ix->grad.data() + (o * s.n + k) * s.inner;
                        for (Index i = 0; i < s.inner; ++i) dst[i] += g[i];
                    }
        });
    }
    return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const Index m = a.size(-2), k = a.size(-1), k2 = b.size(-2), n = b.size(-1);
    if (k != k2)
        throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
    Shape ba(a.shape().begin(), a.shape().end() - 2);
    Shape bb(b.shape().begin(), b.shape().end() - 2);
    std::vector<std::pair<Index, Index>> pairs;
    Shape batch;
    if (ba.empty() && bb.empty()) {
        pairs.emplace_back(0, 0);
    } else {
        if (ba.empty()) ba = {1};
        if (bb.empty()) bb = {1};
        try {
            batch = broadcast_shapes(ba, bb, "matmul");
        } catch (const DimensionError&) {
            throw DimensionError("matmul: batch dimensions of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                                 " are not broadcastable");
        }
        auto sa = broadcast_strides(ba, batch);
        auto sb = broadcast_strides(bb, batch);
        for (auto& v : sa) v *= m * k;
        for (auto& v : sb) v *= k * n;
        broadcast_loop(batch, sa, sb, [&](Index, Index oa, Index ob) { pairs.emplace_back(oa, ob); });
    }
    Shape out_shape = batch;
    if (a.rank() == 2 && b.rank() == 2) out_shape.clear();
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(static_cast<std::size_t>(pairs.size()) * static_cast<std::size_t>(m * n), 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t bi = 0; bi < pairs.size(); ++bi)
        gemm_acc(out.data() + static_cast<Index>(bi) * m * n, pa + pairs[bi].first, pb + pairs[bi].second, m, k, n);
    Tensor result = make_result("matmul", std::move(out_shape), std::move(out));
    if (should_record({&a, &b})) {
        auto* ia = a.impl().get();
        auto* ib = b.impl().get();
        auto* io = result.impl().get();
        record("matmul", result, {a, b}, [ia, ib, io, pairs, m, k, n]() {
            std::vector<double> tmp;
            for (std::size_t bi = 0; bi < pairs.size(); ++bi) {
                const double* G = io->grad.data() + static_cast<Index>(bi) * m * n;
                const double* A = ia->data.data() + pairs[bi].first;
                const double* B = ib->data.data() + pairs[bi].second;
                if (ia->requires_grad) {
                    // dA += G B^T
                    transpose_into(tmp, B, k, n);
                    gemm_acc(ia->grad.data() + pairs[bi].first, G, tmp.data(), m, n, k);
                }
                if (ib->requires_grad) {
                    // dB += A^T G
                    transpose_into(tmp, A, m, k);
                    gemm_acc(ib->grad.data() + pairs[bi].second, tmp.data(), G, k, m, n);
                }
            }
        });
    }
    return result;
}

Tensor softmax_last(const Tensor& x) {
    const Index n = x.size(-1);
    const Index rows = x.numel() / n;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* px = x.data().data();
    for (Index r = 0; r < rows; ++r) {
        const double* row = px + r * n;
        double* dst = out.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (Index j = 0; j < n; ++j) {
            dst[j] = std::exp(row[j] - mx);
            s += dst[j];
        }
        const double inv = 1.0 / s;
        for (Index j = 0; j < n; ++j) dst[j] *= inv;
    }
    Tensor result = make_result("softmax_last", x.shape(), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("softmax_last", result, {x}, [ix, io, rows, n]() {
            for (Index r = 0; r < rows; ++r) {
                const double* y = io->data.data() + r * n;
                const double* g = io->grad.data() + r * n;
                double dot = 0.0;
                for (Index j = 0; j < n; ++j) dot += g[j] * y[j];
                double* dst = ix->grad.data() + r * n;
                for (Index j = 0; j < n; ++j) dst[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return result;
}

Tensor log_softmax_last(const Tensor& x) {
    const Index n = x.size(-1);
    const Index rows = x.numel() / n;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    const double* px = x.data().data();
    for (Index r = 0; r < rows; ++r) {
        const double* row = px + r * n;
        double* dst = out.data() + r * n;
        const double mx = *std::max_element(row, row + n);
        double s = 0.0;
        for (Index j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (Index j = 0; j < n; ++j) dst[j] = row[j] - lse;
    }
    Tensor result = make_result("log_softmax_last", x.shape(), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("log_softmax_last", result, {x}, [ix, io, rows, n]() {
            for (Index r = 0; r < rows; ++r) {
                const double* y = io->data.data() + r * n;
                const double* g = io->grad.data() + r * n;
                double gs = 0.0;
                for (Index j = 0; j < n; ++j) gs += g[j];
                double* dst = ix->grad.data() + r * n;
                for (Index j = 0; j < n; ++j) dst[j] += g[j] - std::exp(y[j]) * gs;
            }
        });
    }
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Index d = x.size(-1);
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layer_norm: feature dim " + std::to_string(d) + " vs gamma " + shape_str(gamma.shape()) +
                             " / beta " + shape_str(beta.shape()));
    const Index rows = x.numel() / d;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    std::vector<double> xhat(out.size());
    std::vector<double> inv(static_cast<std::size_t>(rows));
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    for (Index r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mu = 0.0;
        for (Index j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (Index j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double iv = 1.0 / std::sqrt(var + eps);
        inv[static_cast<std::size_t>(r)] = iv;
        for (Index j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * iv;
            xhat[static_cast<std::size_t>(r * d + j)] = h;
            out[static_cast<std::size_t>(r * d + j)] = h * pg[j] + pb[j];
        }
    }
    Tensor result = make_result("layer_norm", x.shape(), std::move(out));
    if (should_record({&x, &gamma, &beta})) {
        auto* ix = x.impl().get();
        auto* ig = gamma.impl().get();
        auto* ib = beta.impl().get();
        auto* io = result.impl().get();
        record("layer_norm", result, {x, gamma, beta},
               [ix, ig, ib, io, rows, d, xhat = std::move(xhat), inv = std::move(inv)]() {
                   std::vector<double> dxhat(static_cast<std::size_t>(d));
                   for (Index r = 0; r < rows; ++r) {
                       const double* g = io->grad.data() + r * d;
                       const double* h = xhat.data() + r * d;
                       if (ig->requires_grad)
                           for (Index j = 0; j < d; ++j) ig->grad[static_cast<std::size_t>(j)] += g[j] * h[j];
                       if (ib->requires_grad)
                           for (Index j = 0; j < d; ++j) ib->grad[static_cast<std::size_t>(j)] += g[j];
                       if (!ix->requires_grad) continue;
                       double m1 = 0.0, m2 = 0.0;
                       for (Index j = 0; j < d; ++j) {
                           dxhat[static_cast<std::size_t>(j)] = g[j] * ig->data[static_cast<std::size_t>(j)];
                           m1 += dxhat[static_cast<std::size_t>(j)];
                           m2 += dxhat[static_cast<std::size_t>(j)] * h[j];
                       }
                       m1 /= static_cast<double>(d);
                       m2 /= static_cast<double>(d);
                       double* dst = ix->grad.data() + r * d;
                       const double iv = inv[static_cast<std::size_t>(r)];
                       for (Index j = 0; j < d; ++j) dst[j] += iv * (dxhat[static_cast<std::size_t>(j)] - m1 - h[j] * m2);
                   }
               });
    }
    return result;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) throw DimensionError("linear: weight must be [in, out], got " + shape_str(weight.shape()));
    const Index in = weight.size(0), outd = weight.size(1);
    if (x.size(-1) != in)
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight.shape()));
    if (bias.defined() && bias.numel() != outd)
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(weight.shape()));
    const Index rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outd;
    std::vector<double> out(static_cast<std::size_t>(rows * outd), 0.0);
    const double* px = x.data().data();
    const double* pw = weight.data().data();
    if (bias.defined())
        for (Index r = 0; r < rows; ++r) std::copy(bias.data().begin(), bias.data().end(), out.data() + r * outd);
    gemm_strided_acc(out.data(), px, in, 1, pw, rows, in, outd);
    Tensor result = make_result("linear", std::move(out_shape), std::move(out));
    if (should_record({&x, &weight, &bias})) {
        auto* ix = x.impl().get();
        auto* iw = weight.impl().get();
        auto* ibias = bias.defined() ? bias.impl().get() : nullptr;
        auto* io = result.impl().get();
        std::vector<Tensor> inputs{x, weight};
        if (bias.defined()) inputs.push_back(bias);
        record("linear", result, std::move(inputs), [ix, iw, ibias, io, rows, in, outd]() {
            // dW += x^T g, rows accumulated in ascending order.
            if (iw->requires_grad) gemm_strided_acc(iw->grad.data(), ix->data.data(), 1, in, io->grad.data(), in, rows, outd);
            for (Index r = 0; r < rows; ++r) {
                const double* g = io->grad.data() + r * outd;
                if (ibias && ibias->requires_grad)
                    for (Index j = 0; j < outd; ++j) ibias->grad[static_cast<std::size_t>(j)] += g[j];
                if (ix->requires_grad) {
                    double* gx = ix->grad.data() + r * in;
                    for (Index p = 0; p < in; ++p) {
                        const double* wrow = iw->data.data() + p * outd;
                        double s = 0.0;
                        for (Index j = 0; j < outd; ++j) s += wrow[j] * g[j];
                        gx[p] += s;
                    }
                }
            }
        });
    }
    return result;
}

Tensor l2_normalize_last(const Tensor& x, double eps) {
    const Index d = x.size(-1);
    const Index rows = x.numel() / d;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    std::vector<double> norms(static_cast<std::size_t>(rows));
    const double* px = x.data().data();
    for (Index r = 0; r < rows; ++r) {
        double s = 0.0;
        for (Index j = 0; j < d; ++j) s += px[r * d + j] * px[r * d + j];
        const double nrm = std::sqrt(s);
        norms[static_cast<std::size_t>(r)] = nrm;
        const double inv = 1.0 / (nrm + eps);
        for (Index j = 0; j < d; ++j) out[static_cast<std::size_t>(r * d + j)] = px[r * d + j] * inv;
    }
    Tensor result = make_result("l2_normalize_last", x.shape(), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("l2_normalize_last", result, {x}, [ix, io, rows, d, eps, norms = std::move(norms)]() {
            for (Index r = 0; r < rows; ++r) {
                const double nrm = norms[static_cast<std::size_t>(r)];
                const double s = nrm + eps;
                const double* g = io->grad.data() + r * d;
                const double* xr = ix->data.data() + r * d;
                double dot = 0.0;
                for (Index j = 0; j < d; ++j) dot += g[j] * xr[j];
                const double coef = nrm > 0.0 ? dot / (s * s * nrm) : 0.0;
                double* dst = ix->grad.data() + r * d;
                for (Index j = 0; j < d; ++j) dst[j] += g[j] / s - xr[j] * coef;
            }
        });
    }
    return result;
}

Dims3 patch_grid(Dims3 input, Dims3 kernel, Dims3 stride, Dims3 padding) {
    auto one = [](Index n, Index k, Index s, Index p, const char* axis) {
        if (k < 1 || s < 1 || p < 0) throw ConfigError(std::string("extract_patches: invalid kernel/stride/padding on ") + axis);
        const Index span = n + 2 * p - k;
        if (span < 0 || n % s != 0)
            throw DimensionError(std::string("extract_patches: ") + axis + " extent " + std::to_string(n) +
                                 " must be divisible by stride " + std::to_string(s) + " and cover kernel " +
                                 std::to_string(k) + " with padding " + std::to_string(p));
        return span / s + 1;
    };
    return {one(input.t, kernel.t, stride.t, padding.t, "time"), one(input.h, kernel.h, stride.h, padding.h, "height"),
            one(input.w, kernel.w, stride.w, padding.w, "width")};
}

Tensor extract_patches(const Tensor& x, Dims3 kernel, Dims3 stride, Dims3 padding) {
    if (x.rank() != 4) throw DimensionError("extract_patches: expected [T,H,W,C], got " + shape_str(x.shape()));
    const Dims3 in{x.size(0), x.size(1), x.size(2)};
    const Index c = x.size(3);
    const Dims3 g = patch_grid(in, kernel, stride, padding);
    const Index feat = kernel.t * kernel.h * kernel.w * c;
    std::vector<double> out(static_cast<std::size_t>(g.t * g.h * g.w * feat), 0.0);
    // Source offset per (patch, feature-block) or -1 for padding.
    std::vector<Index> src;
    src.reserve(static_cast<std::size_t>(g.t * g.h * g.w * kernel.t * kernel.h * kernel.w));
    for (Index ot = 0; ot < g.t; ++ot)
        for (Index oh = 0; oh < g.h; ++oh)
            for (Index ow = 0; ow < g.w; ++ow)
                for (Index dt = 0; dt < kernel.t; ++dt)
                    for (Index dh = 0; dh < kernel.h; ++dh)
                        for (Index dw = 0; dw < kernel.w; ++dw) {
                            const Index t = ot * stride.t - padding.t + dt;
                            const Index h = oh * stride.h - padding.h + dh;
                            const Index w = ow * stride.w - padding.w + dw;
                            const bool inside = t >= 0 && t < in.t && h >= 0 && h < in.h && w >= 0 && w < in.w;
                            src.push_back(inside ? ((t * in.h + h) * in.w + w) * c : -1);
                        }
    const double* px = x.data().data();
    for (std::size_t b = 0; b < src.size(); ++b)
        if (src[b] >= 0) std::copy(px + src[b], px + src[b] + c, out.data() + static_cast<Index>(b) * c);
    Tensor result = make_result("extract_patches", {g.t, g.h, g.w, feat}, std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("extract_patches", result, {x}, [ix, io, c, src = std::move(src)]() {
            for (std::size_t b = 0; b < src.size(); ++b) {
                if (src[b] < 0) continue;
                const double* gsrc = io->grad.data() + static_cast<Index>(b) * c;
                double* dst = ix->grad.data() + src[b];
                for (Index i = 0; i < c; ++i) dst[i] += gsrc[i];
            }
        });
    }
    return result;
}

Tensor interp_linear_axis(const Tensor& x, int axis, Index out_size) {
    const int a = normalize_axis(axis, x.rank(), "interp_linear_axis");
    if (out_size < 1) throw ContractError("interp_linear_axis: output size must be positive");
    const AxisSplit s = split_at(x.shape(), a);
    struct Tap {
        Index i0, i1;
        double w1;
    };
    std::vector<Tap> taps(static_cast<std::size_t>(out_size));
    const double scale = static_cast<double>(s.n) / static_cast<double>(out_size);
    for (Index i = 0; i < out_size; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        if (src < 0.0) src = 0.0;
        Index i0 = static_cast<Index>(std::floor(src));
        if (i0 > s.n - 1) i0 = s.n - 1;
        const Index i1 = std::min(i0 + 1, s.n - 1);
        taps[static_cast<std::size_t>(i)] = {i0, i1, src - static_cast<double>(i0)};
    }
    Shape out_shape = x.shape();
    out_shape[static_cast<std::size_t>(a)] = out_size;
    std::vector<double> out(static_cast<std::size_t>(s.outer * out_size * s.inner));
    const double* px = x.data().data();
    for (Index o = 0; o < s.outer; ++o)
        for (Index i = 0; i < out_size; ++i) {
            const Tap& tp = taps[static_cast<std::size_t>(i)];
            const double* r0 = px + (o * s.n + tp.i0) * s.inner;
            const double* r1 = px + (o * s.n + tp.i1) * s.inner;
            double* dst = out.data() + (o * out_size + i) * s.inner;
            const double w0 = 1.0 - tp.w1;
            for (Index j = 0; j < s.inner; ++j) dst[j] = w0 * r0[j] + tp.w1 * r1[j];
        }
    Tensor result = make_result("interp_linear_axis", std::move(out_shape), std::move(out));
    if (should_record({&x})) {
        auto* ix = x.impl().get();
        auto* io = result.impl().get();
        record("interp_linear_axis", result, {x}, [ix, io, s, out_size, taps = std::move(taps)]() {
            for (Index o = 0; o < s.outer; ++o)
                for (Index i = 0; i < out_size; ++i) {
                    const Tap& tp = taps[static_cast<std::size_t>(i)];
                    const double* g = io->grad.data() + (o * out_size + i) * s.inner;
                    double* d0 = ix->grad.data() + (o * s.n + tp.i0) * s.inner;
                    double* d1 = ix->grad.data() + (o * s.n + tp.i1) * s.inner;
                    const double w0 = 1.0 - tp.w1;
                    for (Index j = 0; j < s.inner; ++j) {
                        d0[j] += w0 * g[j];
                        d1[j] += tp.w1 * g[j];
                    }
                }
        });
    }
    return result;
}

Tensor trilinear_resize(const Tensor& x, Dims3 out) {
    if (x.rank() < 3) throw DimensionError("trilinear_resize: expected [T,H,W,...], got " + shape_str(x.shape()));
    Tensor y = x;
    if (y.size(0) != out.t) y = interp_linear_axis(y, 0, out.t);
    if (y.size(1) != out.h) y = interp_linear_axis(y, 1, out.h);
    if (y.size(2) != out.w) y = interp_linear_axis(y, 2, out.w);
    return y;
}

} // namespace csts
