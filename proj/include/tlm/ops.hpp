#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tlm/autograd.hpp"
#include "tlm/rng.hpp"
#include "tlm/tensor.hpp"

namespace tlm {
namespace ops {

// ---------------------------------------------------------------------------
// Raw GEMM kernels (row-major). Loop orders chosen so the innermost loop
// streams contiguous memory; everything accumulates into C.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            const T* bp = b + p * n;
            for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc = T(0);
            for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T(0)) continue;
            T* cp = c + p * n;
            for (size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

namespace detail {

inline size_t leading_count(const std::vector<size_t>& shape, size_t trailing) {
    size_t n = 1;
    for (size_t i = 0; i + trailing < shape.size(); ++i) n *= shape[i];
    return n;
}

template <typename T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
    if (a.graph() != b.graph()) throw std::invalid_argument("operands belong to different graphs");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    detail::require_same_graph(a, b);
    Graph<T>& g = *a.graph();
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (!av.same_shape(bv))
        throw std::invalid_argument("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<T> out(av.shape);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    const bool needs = g.requires_grad(a.index()) || g.requires_grad(b.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [a, b, oi](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        if (gg.requires_grad(a.index())) {
                            Tensor<T>& da = gg.grad_ref(a.index());
                            for (size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i];
                        }
                        if (gg.requires_grad(b.index())) {
                            Tensor<T>& db = gg.grad_ref(b.index());
                            for (size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i];
                        }
                    },
                    "add");
}

/// y = x + b where b's shape is a trailing suffix of x's shape; the leading
/// dims broadcast. Covers bias adds ([N,D]+[D]) and position-embedding adds
/// ([B,S,D]+[S,D]).
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> b) {
    detail::require_same_graph(x, b);
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    const Tensor<T>& bv = b.value();
    if (bv.rank() > xv.rank() ||
        !std::equal(bv.shape.begin(), bv.shape.end(), xv.shape.end() - bv.rank()))
        throw std::invalid_argument("add_bias: " + bv.shape_str() + " is not a suffix of " + xv.shape_str());
    const size_t blen = bv.size();
    const size_t reps = xv.size() / blen;
    Tensor<T> out(xv.shape);
    for (size_t r = 0; r < reps; ++r)
        for (size_t i = 0; i < blen; ++i) out.data[r * blen + i] = xv.data[r * blen + i] + bv.data[i];
    const bool needs = g.requires_grad(x.index()) || g.requires_grad(b.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, b, oi, reps, blen](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        if (gg.requires_grad(x.index())) {
                            Tensor<T>& dx = gg.grad_ref(x.index());
                            for (size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i];
                        }
                        if (gg.requires_grad(b.index())) {
                            Tensor<T>& db = gg.grad_ref(b.index());
                            for (size_t r = 0; r < reps; ++r)
                                for (size_t i = 0; i < blen; ++i) db.data[i] += dy.data[r * blen + i];
                        }
                    },
                    "add_bias");
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    detail::require_same_graph(a, b);
    Graph<T>& g = *a.graph();
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (!av.same_shape(bv))
        throw std::invalid_argument("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<T> out(av.shape);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = av.data[i] * bv.data[i];
    const bool needs = g.requires_grad(a.index()) || g.requires_grad(b.index());
    const size_t oi = g.node_count();
    Tensor<T> saved_a = av;  // values needed in backward
    Tensor<T> saved_b = bv;
    return g.record(std::move(out), needs,
                    [a, b, oi, saved_a, saved_b](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        if (gg.requires_grad(a.index())) {
                            Tensor<T>& da = gg.grad_ref(a.index());
                            for (size_t i = 0; i < dy.size(); ++i) da.data[i] += dy.data[i] * saved_b.data[i];
                        }
                        if (gg.requires_grad(b.index())) {
                            Tensor<T>& db = gg.grad_ref(b.index());
                            for (size_t i = 0; i < dy.size(); ++i) db.data[i] += dy.data[i] * saved_a.data[i];
                        }
                    },
                    "mul");
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = xv.data[i] * c;
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, oi, c](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * c;
                    },
                    "scale");
}

template <typename T>
Var<T> reshape(Var<T> x, std::vector<size_t> new_shape) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    if (Tensor<T>::count(new_shape) != xv.size())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out(new_shape, xv.data);
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, oi](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i];
                    },
                    "reshape");
}

namespace detail {

inline std::vector<size_t> strides_of(const std::vector<size_t>& shape) {
    std::vector<size_t> st(shape.size(), 1);
    for (size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
    return st;
}

// Walks the output of an axis permutation in row-major order and visits the
// matching source offset. `fn(src_off, out_flat)` does the actual data move.
template <typename T, typename Fn>
void permute_walk(const Tensor<T>& in, const std::vector<size_t>& axes,
                  const std::vector<size_t>& out_shape, Fn fn) {
    const std::vector<size_t> in_strides = strides_of(in.shape);
    const size_t rank = in.shape.size();
    std::vector<size_t> idx(rank, 0);  // index in OUT coordinates
    const size_t total = in.size();
    for (size_t flat = 0; flat < total; ++flat) {
        size_t in_off = 0;
        for (size_t d = 0; d < rank; ++d) in_off += idx[d] * in_strides[axes[d]];
        fn(in_off, flat);
        for (size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace detail

/// out dims: out.shape[d] == x.shape[axes[d]].
template <typename T>
Var<T> permute(Var<T> x, std::vector<size_t> axes) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    if (axes.size() != xv.rank()) throw std::invalid_argument("permute: axes rank mismatch");
    std::vector<size_t> seen(xv.rank(), 0);
    std::vector<size_t> out_shape(xv.rank());
    for (size_t d = 0; d < axes.size(); ++d) {
        if (axes[d] >= xv.rank() || seen[axes[d]]++) throw std::invalid_argument("permute: invalid axes");
        out_shape[d] = xv.shape[axes[d]];
    }
    Tensor<T> out(out_shape);
    detail::permute_walk(xv, axes, out_shape,
                         [&](size_t src, size_t dst) { out.data[dst] = xv.data[src]; });
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, oi, axes, out_shape](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        detail::permute_walk(dx, axes, out_shape, [&](size_t src, size_t dst) {
                            dx.data[src] += dy.data[dst];
                        });
                    },
                    "permute");
}

/// Copy a contiguous slab [start, start+len) along `axis`.
template <typename T>
Var<T> slice_axis(Var<T> x, size_t axis, size_t start, size_t len) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    if (axis >= xv.rank()) throw std::invalid_argument("slice_axis: axis out of range");
    if (start + len > xv.shape[axis] || len == 0) throw std::invalid_argument("slice_axis: bad range");
    std::vector<size_t> out_shape = xv.shape;
    out_shape[axis] = len;
    size_t inner = 1;
    for (size_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.shape[d];
    size_t outer = 1;
    for (size_t d = 0; d < axis; ++d) outer *= xv.shape[d];
    const size_t x_axis = xv.shape[axis];
    Tensor<T> out(out_shape);
    for (size_t o = 0; o < outer; ++o)
        std::copy_n(xv.data.begin() + (o * x_axis + start) * inner, len * inner,
                    out.data.begin() + o * len * inner);
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, oi, outer, inner, x_axis, start, len](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t o = 0; o < outer; ++o) {
                            const T* src = dy.data.data() + o * len * inner;
                            T* dst = dx.data.data() + (o * x_axis + start) * inner;
                            for (size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                        }
                    },
                    "slice_axis");
}

// ---------------------------------------------------------------------------
// Matrix products (batched over leading dims)
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    detail::require_same_graph(a, b);
    Graph<T>& g = *a.graph();
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() < 2 || bv.rank() != av.rank())
        throw std::invalid_argument("matmul: operands must have equal rank >= 2");
    if (!std::equal(av.shape.begin(), av.shape.end() - 2, bv.shape.begin()))
        throw std::invalid_argument("matmul: batch dims differ");
    const size_t m = av.shape[av.rank() - 2], k = av.shape[av.rank() - 1];
    const size_t k2 = bv.shape[bv.rank() - 2], n = bv.shape[bv.rank() - 1];
    if (k != k2)
        throw std::invalid_argument("matmul: inner dims differ " + av.shape_str() + " vs " + bv.shape_str());
    const size_t batch = detail::leading_count(av.shape, 2);
    std::vector<size_t> out_shape(av.shape.begin(), av.shape.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape, T(0));
    for (size_t q = 0; q < batch; ++q)
        gemm_nn(av.ptr() + q * m * k, bv.ptr() + q * k * n, out.ptr() + q * m * n, m, k, n);
    const bool needs = g.requires_grad(a.index()) || g.requires_grad(b.index());
    const size_t oi = g.node_count();
    Tensor<T> sa = av, sb = bv;
    return g.record(std::move(out), needs,
                    [a, b, oi, sa, sb, batch, m, k, n](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        if (gg.requires_grad(a.index())) {
                            Tensor<T>& da = gg.grad_ref(a.index());
                            for (size_t q = 0; q < batch; ++q)
                                gemm_nt(dy.ptr() + q * m * n, sb.ptr() + q * k * n, da.ptr() + q * m * k, m, n, k);
                        }
                        if (gg.requires_grad(b.index())) {
                            Tensor<T>& db = gg.grad_ref(b.index());
                            for (size_t q = 0; q < batch; ++q)
                                gemm_tn(sa.ptr() + q * m * k, dy.ptr() + q * m * n, db.ptr() + q * k * n, m, k, n);
                        }
                    },
                    "matmul");
}

/// A @ B^T on the last two axes: a=[...,M,K], b=[...,N,K] -> [...,M,N].
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    detail::require_same_graph(a, b);
    Graph<T>& g = *a.graph();
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.rank() < 2 || bv.rank() != av.rank())
        throw std::invalid_argument("matmul_nt: operands must have equal rank >= 2");
    if (!std::equal(av.shape.begin(), av.shape.end() - 2, bv.shape.begin()))
        throw std::invalid_argument("matmul_nt: batch dims differ");
    const size_t m = av.shape[av.rank() - 2], k = av.shape[av.rank() - 1];
    const size_t n = bv.shape[bv.rank() - 2], k2 = bv.shape[bv.rank() - 1];
    if (k != k2)
        throw std::invalid_argument("matmul_nt: inner dims differ " + av.shape_str() + " vs " + bv.shape_str());
    const size_t batch = detail::leading_count(av.shape, 2);
    std::vector<size_t> out_shape(av.shape.begin(), av.shape.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor<T> out(out_shape, T(0));
    for (size_t q = 0; q < batch; ++q)
        gemm_nt(av.ptr() + q * m * k, bv.ptr() + q * n * k, out.ptr() + q * m * n, m, k, n);
    const bool needs = g.requires_grad(a.index()) || g.requires_grad(b.index());
    const size_t oi = g.node_count();
    Tensor<T> sa = av, sb = bv;
    return g.record(std::move(out), needs,
                    [a, b, oi, sa, sb, batch, m, k, n](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        if (gg.requires_grad(a.index())) {
                            Tensor<T>& da = gg.grad_ref(a.index());
                            for (size_t q = 0; q < batch; ++q)
                                gemm_nn(dy.ptr() + q * m * n, sb.ptr() + q * n * k, da.ptr() + q * m * k, m, n, k);
                        }
                        if (gg.requires_grad(b.index())) {
                            Tensor<T>& db = gg.grad_ref(b.index());
                            for (size_t q = 0; q < batch; ++q)
                                gemm_tn(dy.ptr() + q * m * n, sa.ptr() + q * m * k, db.ptr() + q * n * k, m, n, k);
                        }
                    },
                    "matmul_nt");
}

// ---------------------------------------------------------------------------
// Embedding lookup
// ---------------------------------------------------------------------------

/// rows of `table` ([V, D]) selected by `ids`; gradient scatters back.
template <typename T>
Var<T> gather_rows(Var<T> table, const std::vector<int32_t>& ids) {
    Graph<T>& g = *table.graph();
    const Tensor<T>& tv = table.value();
    if (tv.rank() != 2) throw std::invalid_argument("gather_rows: table must be [V, D]");
    const size_t v = tv.shape[0], d = tv.shape[1];
    for (int32_t id : ids)
        if (id < 0 || static_cast<size_t>(id) >= v)
            throw std::invalid_argument("gather_rows: id out of range: " + std::to_string(id));
    Tensor<T> out({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(tv.data.begin() + static_cast<size_t>(ids[i]) * d, d, out.data.begin() + i * d);
    const bool needs = g.requires_grad(table.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [table, oi, ids, d](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dt = gg.grad_ref(table.index());
                        for (size_t i = 0; i < ids.size(); ++i) {
                            T* dst = dt.data.data() + static_cast<size_t>(ids[i]) * d;
                            const T* src = dy.data.data() + i * d;
                            for (size_t j = 0; j < d; ++j) dst[j] += src[j];
                        }
                    },
                    "gather_rows");
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// Shift-stable softmax along `axis`.
template <typename T>
Var<T> softmax(Var<T> x, size_t axis) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    if (axis >= xv.rank()) throw std::invalid_argument("softmax: invalid axis");
    size_t inner = 1;
    for (size_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.shape[d];
    const size_t len = xv.shape[axis];
    const size_t outer = xv.size() / (inner * len);
    Tensor<T> out(xv.shape);
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            const size_t base = o * len * inner + in;
            T m = xv.data[base];
            for (size_t i = 1; i < len; ++i) m = std::max(m, xv.data[base + i * inner]);
            T s = T(0);
            for (size_t i = 0; i < len; ++i) {
                const T e = std::exp(xv.data[base + i * inner] - m);
                out.data[base + i * inner] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (size_t i = 0; i < len; ++i) out.data[base + i * inner] *= inv;
        }
    }
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    Tensor<T> y = out;
    return g.record(std::move(out), needs,
                    [x, oi, y, outer, inner, len](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t o = 0; o < outer; ++o) {
                            for (size_t in = 0; in < inner; ++in) {
                                const size_t base = o * len * inner + in;
                                T dot = T(0);
                                for (size_t i = 0; i < len; ++i)
                                    dot += dy.data[base + i * inner] * y.data[base + i * inner];
                                for (size_t i = 0; i < len; ++i)
                                    dx.data[base + i * inner] +=
                                        y.data[base + i * inner] * (dy.data[base + i * inner] - dot);
                            }
                        }
                    },
                    "softmax");
}

/// Attention-weight softmax over the last axis of `scores` [B, H, S, S],
/// restricted to key positions where key_mask[b, k] != 0. Masked-out keys
/// receive exactly zero weight; each row's surviving weights sum to 1.
template <typename T>
Var<T> masked_softmax_last(Var<T> scores, const Tensor<T>& key_mask) {
    Graph<T>& g = *scores.graph();
    const Tensor<T>& sv = scores.value();
    if (sv.rank() != 4) throw std::invalid_argument("masked_softmax_last: scores must be [B,H,S,S]");
    const size_t b = sv.shape[0], h = sv.shape[1], s = sv.shape[2], s2 = sv.shape[3];
    if (s != s2) throw std::invalid_argument("masked_softmax_last: last two dims must match");
    if (key_mask.shape != std::vector<size_t>{b, s})
        throw std::invalid_argument("masked_softmax_last: key_mask must be [B,S]");
    Tensor<T> out(sv.shape, T(0));
    for (size_t bi = 0; bi < b; ++bi) {
        const T* mrow = key_mask.ptr() + bi * s;
        for (size_t hi = 0; hi < h; ++hi) {
            for (size_t q = 0; q < s; ++q) {
                const size_t base = ((bi * h + hi) * s + q) * s;
                T m = -std::numeric_limits<T>::infinity();
                for (size_t k = 0; k < s; ++k)
                    if (mrow[k] != T(0)) m = std::max(m, sv.data[base + k]);
                if (m == -std::numeric_limits<T>::infinity()) continue;  // no valid key
                T sum = T(0);
                for (size_t k = 0; k < s; ++k) {
                    if (mrow[k] == T(0)) continue;
                    const T e = std::exp(sv.data[base + k] - m);
                    out.data[base + k] = e;
                    sum += e;
                }
                const T inv = T(1) / sum;
                for (size_t k = 0; k < s; ++k) out.data[base + k] *= inv;
            }
        }
    }
    const bool needs = g.requires_grad(scores.index());
    const size_t oi = g.node_count();
    Tensor<T> y = out;
    return g.record(std::move(out), needs,
                    [scores, oi, y, b, h, s](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(scores.index());
                        const size_t rows = b * h * s;
                        for (size_t r = 0; r < rows; ++r) {
                            const size_t base = r * s;
                            T dot = T(0);
                            for (size_t k = 0; k < s; ++k) dot += dy.data[base + k] * y.data[base + k];
                            for (size_t k = 0; k < s; ++k)
                                dx.data[base + k] += y.data[base + k] * (dy.data[base + k] - dot);
                        }
                    },
                    "masked_softmax_last");
}

// ---------------------------------------------------------------------------
// Normalization / activation
// ---------------------------------------------------------------------------

/// Per-vector normalization over the last axis with population variance:
/// y = (x - mean) / sqrt(var + eps) * gain + bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    detail::require_same_graph(x, gain);
    detail::require_same_graph(x, bias);
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    const Tensor<T>& gv = gain.value();
    const Tensor<T>& bv = bias.value();
    if (xv.rank() < 1) throw std::invalid_argument("layer_norm: rank must be >= 1");
    const size_t d = xv.shape.back();
    if (gv.shape != std::vector<size_t>{d} || bv.shape != std::vector<size_t>{d})
        throw std::invalid_argument("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    const size_t rows = xv.size() / d;
    Tensor<T> out(xv.shape);
    Tensor<T> xhat(xv.shape);        // saved for backward
    Tensor<T> inv_std({rows});
    for (size_t r = 0; r < rows; ++r) {
        const T* xr = xv.ptr() + r * d;
        T mean = T(0);
        for (size_t i = 0; i < d; ++i) mean += xr[i];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (size_t i = 0; i < d; ++i) {
            const T c = xr[i] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T istd = T(1) / std::sqrt(var + eps);
        inv_std.data[r] = istd;
        for (size_t i = 0; i < d; ++i) {
            const T xh = (xr[i] - mean) * istd;
            xhat.data[r * d + i] = xh;
            out.data[r * d + i] = xh * gv.data[i] + bv.data[i];
        }
    }
    const bool needs =
        g.requires_grad(x.index()) || g.requires_grad(gain.index()) || g.requires_grad(bias.index());
    const size_t oi = g.node_count();
    Tensor<T> sg = gv;
    return g.record(std::move(out), needs,
                    [x, gain, bias, oi, xhat, inv_std, sg, rows, d](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        const bool need_x = gg.requires_grad(x.index());
                        const bool need_g = gg.requires_grad(gain.index());
                        const bool need_b = gg.requires_grad(bias.index());
                        Tensor<T>* dx = need_x ? &gg.grad_ref(x.index()) : nullptr;
                        Tensor<T>* dg = need_g ? &gg.grad_ref(gain.index()) : nullptr;
                        Tensor<T>* db = need_b ? &gg.grad_ref(bias.index()) : nullptr;
                        for (size_t r = 0; r < rows; ++r) {
                            const T* dyr = dy.ptr() + r * d;
                            const T* xhr = xhat.ptr() + r * d;
                            if (need_g)
                                for (size_t i = 0; i < d; ++i) dg->data[i] += dyr[i] * xhr[i];
                            if (need_b)
                                for (size_t i = 0; i < d; ++i) db->data[i] += dyr[i];
                            if (need_x) {
                                // dxhat = dy * gain; dx = (dxhat - mean(dxhat)
                                //        - xhat * mean(dxhat * xhat)) * inv_std
                                T sum_dxh = T(0), sum_dxh_xh = T(0);
                                for (size_t i = 0; i < d; ++i) {
                                    const T dxh = dyr[i] * sg.data[i];
                                    sum_dxh += dxh;
                                    sum_dxh_xh += dxh * xhr[i];
                                }
                                const T inv_d = T(1) / static_cast<T>(d);
                                const T istd = inv_std.data[r];
                                for (size_t i = 0; i < d; ++i) {
                                    const T dxh = dyr[i] * sg.data[i];
                                    dx->data[r * d + i] +=
                                        (dxh - sum_dxh * inv_d - xhr[i] * sum_dxh_xh * inv_d) * istd;
                                }
                            }
                        }
                    },
                    "layer_norm");
}

/// GELU, tanh approximation (the BERT feed-forward activation).
template <typename T>
Var<T> gelu(Var<T> x) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    constexpr double kC = 0.7978845608028653558798921198687;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    Tensor<T> out(xv.shape);
    for (size_t i = 0; i < xv.size(); ++i) {
        const double v = static_cast<double>(xv.data[i]);
        const double t = std::tanh(kC * (v + kA * v * v * v));
        out.data[i] = static_cast<T>(0.5 * v * (1.0 + t));
    }
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    Tensor<T> sx = xv;
    return g.record(std::move(out), needs,
                    [x, oi, sx](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t i = 0; i < sx.size(); ++i) {
                            const double v = static_cast<double>(sx.data[i]);
                            const double u = kC * (v + kA * v * v * v);
                            const double t = std::tanh(u);
                            const double du = kC * (1.0 + 3.0 * kA * v * v);
                            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
                            dx.data[i] += dy.data[i] * static_cast<T>(d);
                        }
                    },
                    "gelu");
}

// ---------------------------------------------------------------------------
// 2-D convolution, stride 1, zero "same" padding. For even kernel extents the
// padding is floor((k-1)/2) before and ceil((k-1)/2) after, so spatial dims
// are always preserved.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d_same(Var<T> input, Var<T> filters, Var<T> bias) {
    detail::require_same_graph(input, filters);
    detail::require_same_graph(input, bias);
    Graph<T>& g = *input.graph();
    const Tensor<T>& iv = input.value();
    const Tensor<T>& fv = filters.value();
    const Tensor<T>& bv = bias.value();
    if (iv.rank() != 4) throw std::invalid_argument("conv2d_same: input must be [B,C,H,W]");
    if (fv.rank() != 4) throw std::invalid_argument("conv2d_same: filters must be [F,C,kh,kw]");
    const size_t nb = iv.shape[0], c = iv.shape[1], h = iv.shape[2], w = iv.shape[3];
    const size_t f = fv.shape[0], kh = fv.shape[2], kw = fv.shape[3];
    if (fv.shape[1] != c)
        throw std::invalid_argument("conv2d_same: channel mismatch (input " + std::to_string(c) +
                                    ", filters " + std::to_string(fv.shape[1]) + ")");
    if (bv.shape != std::vector<size_t>{f}) throw std::invalid_argument("conv2d_same: bias must be [F]");
    const long ph = static_cast<long>((kh - 1) / 2);
    const long pw = static_cast<long>((kw - 1) / 2);
    Tensor<T> out({nb, f, h, w});
    for (size_t b = 0; b < nb; ++b) {
        for (size_t fo = 0; fo < f; ++fo) {
            const T bias_v = bv.data[fo];
            for (size_t y = 0; y < h; ++y) {
                for (size_t xcol = 0; xcol < w; ++xcol) {
                    T acc = bias_v;
                    for (size_t ci = 0; ci < c; ++ci) {
                        const T* in_plane = iv.ptr() + (b * c + ci) * h * w;
                        const T* wgt = fv.ptr() + ((fo * c + ci) * kh) * kw;
                        for (size_t i = 0; i < kh; ++i) {
                            const long iy = static_cast<long>(y + i) - ph;
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            for (size_t j = 0; j < kw; ++j) {
                                const long ix = static_cast<long>(xcol + j) - pw;
                                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                acc += in_plane[iy * w + ix] * wgt[i * kw + j];
                            }
                        }
                    }
                    out.data[((b * f + fo) * h + y) * w + xcol] = acc;
                }
            }
        }
    }
    const bool needs = g.requires_grad(input.index()) || g.requires_grad(filters.index()) ||
                       g.requires_grad(bias.index());
    const size_t oi = g.node_count();
    Tensor<T> si = iv, sf = fv;
    return g.record(std::move(out), needs,
                    [input, filters, bias, oi, si, sf, nb, c, h, w, f, kh, kw, ph, pw](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        const bool need_i = gg.requires_grad(input.index());
                        const bool need_f = gg.requires_grad(filters.index());
                        const bool need_b = gg.requires_grad(bias.index());
                        Tensor<T>* di = need_i ? &gg.grad_ref(input.index()) : nullptr;
                        Tensor<T>* df = need_f ? &gg.grad_ref(filters.index()) : nullptr;
                        Tensor<T>* db = need_b ? &gg.grad_ref(bias.index()) : nullptr;
                        for (size_t b = 0; b < nb; ++b) {
                            for (size_t fo = 0; fo < f; ++fo) {
                                for (size_t y = 0; y < h; ++y) {
                                    for (size_t xcol = 0; xcol < w; ++xcol) {
                                        const T go = dy.data[((b * f + fo) * h + y) * w + xcol];
                                        if (go == T(0)) continue;
                                        if (need_b) db->data[fo] += go;
                                        for (size_t ci = 0; ci < c; ++ci) {
                                            const size_t in_base = (b * c + ci) * h * w;
                                            const size_t w_base = (fo * c + ci) * kh * kw;
                                            for (size_t i = 0; i < kh; ++i) {
                                                const long iy = static_cast<long>(y + i) - ph;
                                                if (iy < 0 || iy >= static_cast<long>(h)) continue;
                                                for (size_t j = 0; j < kw; ++j) {
                                                    const long ix = static_cast<long>(xcol + j) - pw;
                                                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                                                    if (need_f)
                                                        df->data[w_base + i * kw + j] +=
                                                            go * si.data[in_base + iy * w + ix];
                                                    if (need_i)
                                                        di->data[in_base + iy * w + ix] +=
                                                            go * sf.data[w_base + i * kw + j];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    },
                    "conv2d_same");
}

// ---------------------------------------------------------------------------
// Reductions / losses
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    T s = T(0);
    for (T v : xv.data) s += v;
    Tensor<T> out({size_t(1)});
    out.data[0] = s;
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, oi](Graph<T>& gg) {
                        const T d = gg.grad_ref(oi).data[0];
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += d;
                    },
                    "sum");
}

/// Marker for positions that contribute nothing to the loss.
constexpr int32_t kIgnoreLabel = -1;

template <typename T>
struct CrossEntropyResult {
    Var<T> loss;          // scalar; zero when nothing was active
    size_t active = 0;    // number of non-ignored positions
    bool all_ignored() const { return active == 0; }
};

/// Mean of -log softmax(logits)[target] over rows whose target is not
/// kIgnoreLabel. logits: [N, V].
template <typename T>
CrossEntropyResult<T> masked_cross_entropy(Var<T> logits, const std::vector<int32_t>& targets) {
    Graph<T>& g = *logits.graph();
    const Tensor<T>& lv = logits.value();
    if (lv.rank() != 2) throw std::invalid_argument("masked_cross_entropy: logits must be [N, V]");
    const size_t n = lv.shape[0], v = lv.shape[1];
    if (targets.size() != n)
        throw std::invalid_argument("masked_cross_entropy: target count mismatch");
    size_t active = 0;
    double total = 0.0;
    // per-row log-sum-exp, saved for backward
    Tensor<T> row_max({n}), row_lse({n});
    for (size_t r = 0; r < n; ++r) {
        const int32_t t = targets[r];
        if (t == kIgnoreLabel) continue;
        if (t < 0 || static_cast<size_t>(t) >= v)
            throw std::invalid_argument("masked_cross_entropy: target out of range: " + std::to_string(t));
        const T* row = lv.ptr() + r * v;
        T m = row[0];
        for (size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
        double se = 0.0;
        for (size_t j = 0; j < v; ++j) se += std::exp(static_cast<double>(row[j] - m));
        const double lse = std::log(se);
        row_max.data[r] = m;
        row_lse.data[r] = static_cast<T>(lse);
        total += lse - static_cast<double>(row[static_cast<size_t>(t)] - m);
        ++active;
    }
    Tensor<T> out({size_t(1)});
    out.data[0] = active ? static_cast<T>(total / static_cast<double>(active)) : T(0);
    const bool needs = g.requires_grad(logits.index()) && active > 0;
    const size_t oi = g.node_count();
    Tensor<T> sl = lv;
    const size_t active_n = active;
    Var<T> loss = g.record(std::move(out), needs,
                           [logits, oi, sl, targets, row_max, row_lse, n, v, active_n](Graph<T>& gg) {
                               const T dscale = gg.grad_ref(oi).data[0] / static_cast<T>(active_n);
                               Tensor<T>& dl = gg.grad_ref(logits.index());
                               for (size_t r = 0; r < n; ++r) {
                                   const int32_t t = targets[r];
                                   if (t == kIgnoreLabel) continue;
                                   const T* row = sl.ptr() + r * v;
                                   const T m = row_max.data[r];
                                   const T lse = row_lse.data[r];
                                   T* drow = dl.data.data() + r * v;
                                   for (size_t j = 0; j < v; ++j) {
                                       const T p = std::exp(row[j] - m - lse);  // softmax
                                       const T delta = (static_cast<size_t>(t) == j) ? T(1) : T(0);
                                       drow[j] += dscale * (p - delta);
                                   }
                               }
                           },
                           "masked_cross_entropy");
    return CrossEntropyResult<T>{loss, active};
}

/// Inverted dropout; identity when rate == 0. Pass the training Rng.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    Graph<T>& g = *x.graph();
    const Tensor<T>& xv = x.value();
    Tensor<T> mask(xv.shape);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (size_t i = 0; i < mask.size(); ++i)
        mask.data[i] = rng.next_bernoulli(rate) ? T(0) : keep_scale;
    Tensor<T> out(xv.shape);
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = xv.data[i] * mask.data[i];
    const bool needs = g.requires_grad(x.index());
    const size_t oi = g.node_count();
    return g.record(std::move(out), needs,
                    [x, oi, mask](Graph<T>& gg) {
                        const Tensor<T>& dy = gg.grad_ref(oi);
                        Tensor<T>& dx = gg.grad_ref(x.index());
                        for (size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i] * mask.data[i];
                    },
                    "dropout");
}

}  // namespace ops
}  // namespace tlm
