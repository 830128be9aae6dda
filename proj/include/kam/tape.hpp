#ifndef KAM_TAPE_HPP
#define KAM_TAPE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "kam/tensor.hpp"

namespace kam {

enum class Pad { same, valid };

/// Reverse-mode tape over Tensor-valued operations. Nodes are appended in
/// construction order, which is a valid topological order by construction.
/// Forward values are computed eagerly and cached; backward() walks the node
/// list in reverse, accumulating gradients (never overwriting, so shared
/// nodes sum contributions).
///
/// Broadcasting is limited on purpose: scalar <-> tensor in the elementwise
/// ops, plus the dedicated per-channel ops (add_rowvec, channel_gate,
/// spatial_gate, batchnorm). Anything else is a construction-time error.
template <class T>
class Tape {
public:
    using Id = int;

    Id leaf(Tensor<T> v, bool trainable = false) {
        return push(std::move(v), nullptr, trainable);
    }

    const Tensor<T>& val(Id id) const { return nodes_[check(id)].value; }
    const Tensor<T>& grad(Id id) const { return nodes_[check(id)].grad; }
    bool is_trainable(Id id) const { return nodes_[check(id)].trainable; }
    size_t size() const { return nodes_.size(); }

    void zero_grad() {
        for (auto& n : nodes_) n.grad.fill(T(0));
    }

    void backward(Id root) {
        const Tensor<T>& rv = val(root);
        if (!rv.is_scalar())
            throw std::invalid_argument("backward: root is not scalar and no cotangent given");
        Tensor<T> ct = rv;
        ct.fill(T(1));
        backward(root, ct);
    }

    void backward(Id root, const Tensor<T>& cotangent) {
        check(root);
        if (cotangent.shape != val(root).shape)
            throw std::invalid_argument("backward: cotangent shape mismatch");
        for (auto& n : nodes_) {
            if (n.grad.shape != n.value.shape) n.grad = Tensor<T>(n.value.shape, T(0));
            else n.grad.fill(T(0));
        }
        nodes_[root].grad = cotangent;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
            if (nodes_[i].back) nodes_[i].back(*this, i);
    }

    // ---- elementwise binary (same shape, or either side scalar) ----

    Id add(Id a, Id b) { return ew2(a, b, [](T x, T y) { return x + y; }, EwKind::add); }
    Id sub(Id a, Id b) { return ew2(a, b, [](T x, T y) { return x - y; }, EwKind::sub); }
    Id mul(Id a, Id b) { return ew2(a, b, [](T x, T y) { return x * y; }, EwKind::mul); }
    Id div(Id a, Id b) { return ew2(a, b, [](T x, T y) { return x / y; }, EwKind::div); }

    Id add_const(Id a, double c) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v += T(c);
        return push(std::move(out), [a](Tape& t, Id self) {
            t.axpy(t.g(a), t.g(self), T(1));
        });
    }

    Id mul_const(Id a, double c) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v *= T(c);
        return push(std::move(out), [a, c](Tape& t, Id self) {
            t.axpy(t.g(a), t.g(self), T(c));
        });
    }

    // ---- elementwise unary ----

    Id neg(Id a) { return mul_const(a, -1.0); }

    Id exp_(Id a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v = std::exp(v);
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& y = t.val(self);
            const auto& go = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < y.numel(); ++i) ga.data[i] += go.data[i] * y.data[i];
        });
    }

    Id square(Id a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v = v * v;
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& x = t.val(a);
            const auto& go = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < x.numel(); ++i) ga.data[i] += T(2) * go.data[i] * x.data[i];
        });
    }

    Id relu(Id a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v = v > T(0) ? v : T(0);
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& x = t.val(a);
            const auto& go = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < x.numel(); ++i)
                if (x.data[i] > T(0)) ga.data[i] += go.data[i];
        });
    }

    /// ELU with unit coefficient.
    Id elu(Id a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v = v > T(0) ? v : std::expm1(v);
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& x = t.val(a);
            const auto& y = t.val(self);
            const auto& go = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < x.numel(); ++i)
                ga.data[i] += go.data[i] * (x.data[i] > T(0) ? T(1) : y.data[i] + T(1));
        });
    }

    Id sigmoid(Id a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& y = t.val(self);
            const auto& go = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < y.numel(); ++i)
                ga.data[i] += go.data[i] * y.data[i] * (T(1) - y.data[i]);
        });
    }

    Id softplus(Id a) {
        Tensor<T> out = val(a);
        for (T& v : out.data) {
            double x = double(v);
            v = T(x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)));
        }
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& x = t.val(a);
            const auto& go = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < x.numel(); ++i)
                ga.data[i] += go.data[i] * T(1.0 / (1.0 + std::exp(-double(x.data[i]))));
        });
    }

    // ---- linear algebra ----

    Id matmul(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
            throw std::invalid_argument("matmul: incompatible shapes " + A.shape_str() +
                                        " x " + B.shape_str());
        size_t n = A.shape[0], m = A.shape[1], p = B.shape[1];
        Tensor<T> out({n, p}, T(0));
        for (size_t i = 0; i < n; ++i)
            for (size_t k = 0; k < m; ++k) {
                T aik = A(i, k);
                const T* brow = &B.data[k * p];
                T* orow = &out.data[i * p];
                for (size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
            }
        return push(std::move(out), [a, b, n, m, p](Tape& t, Id self) {
            const auto& A = t.val(a);
            const auto& B = t.val(b);
            const auto& G = t.g(self);
            auto& gA = t.g(a);
            auto& gB = t.g(b);
            // gA += G * B^T
            for (size_t i = 0; i < n; ++i)
                for (size_t k = 0; k < m; ++k) {
                    T acc = T(0);
                    const T* grow = &G.data[i * p];
                    const T* brow = &B.data[k * p];
                    for (size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                    gA.data[i * m + k] += acc;
                }
            // gB += A^T * G
            for (size_t k = 0; k < m; ++k)
                for (size_t i = 0; i < n; ++i) {
                    T aik = A(i, k);
                    const T* grow = &G.data[i * p];
                    T* gbrow = &gB.data[k * p];
                    for (size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
                }
        });
    }

    Id transpose2d(Id a) {
        const auto& A = val(a);
        if (A.rank() != 2) throw std::invalid_argument("transpose2d: rank must be 2");
        size_t n = A.shape[0], m = A.shape[1];
        Tensor<T> out({m, n});
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) out(j, i) = A(i, j);
        return push(std::move(out), [a, n, m](Tape& t, Id self) {
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) ga.data[i * m + j] += G(j, i);
        });
    }

    /// y[i][j] = a[i][j] + b[j]; the dense-layer bias broadcast.
    Id add_rowvec(Id a, Id b) {
        const auto& A = val(a);
        const auto& B = val(b);
        if (A.rank() != 2 || B.rank() != 1 || B.shape[0] != A.shape[1])
            throw std::invalid_argument("add_rowvec: shapes " + A.shape_str() + " + " +
                                        B.shape_str());
        size_t n = A.shape[0], m = A.shape[1];
        Tensor<T> out = A;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < m; ++j) out.data[i * m + j] += B.data[j];
        return push(std::move(out), [a, b, n, m](Tape& t, Id self) {
            const auto& G = t.g(self);
            t.axpy(t.g(a), G, T(1));
            auto& gb = t.g(b);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < m; ++j) gb.data[j] += G.data[i * m + j];
        });
    }

    /// Pairwise squared Euclidean distances between the rows of a, computed
    /// with the Gram identity and clamped at zero. Diagonal is exactly zero,
    /// result exactly symmetric.
    Id pairwise_sqdist(Id a) {
        const auto& X = val(a);
        if (X.rank() != 2) throw std::invalid_argument("pairwise_sqdist: rank must be 2");
        size_t n = X.shape[0], m = X.shape[1];
        std::vector<T> sq(n, T(0));
        for (size_t i = 0; i < n; ++i) {
            T s = T(0);
            const T* row = &X.data[i * m];
            for (size_t k = 0; k < m; ++k) s += row[k] * row[k];
            sq[i] = s;
        }
        Tensor<T> out({n, n}, T(0));
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) {
                T dot = T(0);
                const T* ri = &X.data[i * m];
                const T* rj = &X.data[j * m];
                for (size_t k = 0; k < m; ++k) dot += ri[k] * rj[k];
                T d = sq[i] + sq[j] - T(2) * dot;
                if (d < T(0)) d = T(0);
                out(i, j) = d;
                out(j, i) = d;
            }
        return push(std::move(out), [a, n, m](Tape& t, Id self) {
            const auto& X = t.val(a);
            const auto& G = t.g(self);
            auto& gx = t.g(a);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < n; ++j) {
                    if (i == j) continue;
                    T c = T(2) * (G(i, j) + G(j, i));
                    if (c == T(0)) continue;
                    const T* ri = &X.data[i * m];
                    const T* rj = &X.data[j * m];
                    T* gi = &gx.data[i * m];
                    for (size_t k = 0; k < m; ++k) gi[k] += c * (ri[k] - rj[k]);
                }
        });
    }

    // ---- convolutions (2-D cross-correlation, stride 1) ----

    Id conv2d(Id x, Id k, Pad pad) {
        const auto& X = val(x);
        const auto& K = val(k);
        if (X.rank() != 4 || K.rank() != 4)
            throw std::invalid_argument("conv2d: inputs must be rank 4");
        if (X.shape[1] != K.shape[1])
            throw std::invalid_argument("conv2d: channel mismatch, x " + X.shape_str() +
                                        " vs kernel " + K.shape_str());
        size_t N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
        size_t F = K.shape[0], kh = K.shape[2], kw = K.shape[3];
        auto [Ho, Wo, pt, pl] = conv_geom(H, W, kh, kw, pad);
        Tensor<T> out({N, F, Ho, Wo}, T(0));
        for (size_t n = 0; n < N; ++n)
            for (size_t f = 0; f < F; ++f)
                for (size_t oh = 0; oh < Ho; ++oh) {
                    T* orow = &out(n, f, oh, 0);
                    for (size_t c = 0; c < C; ++c)
                        for (size_t ki = 0; ki < kh; ++ki) {
                            long ih = long(oh) + long(ki) - long(pt);
                            if (ih < 0 || ih >= long(H)) continue;
                            const T* xrow = &X(n, c, size_t(ih), 0);
                            const T* krow = &K(f, c, ki, 0);
                            conv_row_fwd(orow, xrow, krow, kw, Wo, W, pl);
                        }
                }
        return push(std::move(out), [x, k, pad](Tape& t, Id self) {
            t.conv2d_back(x, k, self, pad);
        });
    }

    /// Depthwise cross-correlation: kernel (C, Dm, kh, kw), output channel
    /// c*Dm + d depends only on input channel c.
    Id depthwise_conv2d(Id x, Id k, Pad pad) {
        const auto& X = val(x);
        const auto& K = val(k);
        if (X.rank() != 4 || K.rank() != 4)
            throw std::invalid_argument("depthwise_conv2d: inputs must be rank 4");
        if (X.shape[1] != K.shape[0])
            throw std::invalid_argument("depthwise_conv2d: channel mismatch, x " +
                                        X.shape_str() + " vs kernel " + K.shape_str());
        size_t N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
        size_t Dm = K.shape[1], kh = K.shape[2], kw = K.shape[3];
        auto [Ho, Wo, pt, pl] = conv_geom(H, W, kh, kw, pad);
        Tensor<T> out({N, C * Dm, Ho, Wo}, T(0));
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c)
                for (size_t d = 0; d < Dm; ++d)
                    for (size_t oh = 0; oh < Ho; ++oh) {
                        T* orow = &out(n, c * Dm + d, oh, 0);
                        for (size_t ki = 0; ki < kh; ++ki) {
                            long ih = long(oh) + long(ki) - long(pt);
                            if (ih < 0 || ih >= long(H)) continue;
                            const T* xrow = &X(n, c, size_t(ih), 0);
                            const T* krow = &K(c, d, ki, 0);
                            conv_row_fwd(orow, xrow, krow, kw, Wo, W, pl);
                        }
                    }
        return push(std::move(out), [x, k, pad](Tape& t, Id self) {
            t.depthwise_back(x, k, self, pad);
        });
    }

    // ---- reductions ----

    Id reduce_sum(Id a, std::vector<size_t> axes, bool keepdims) {
        return reduce_linear(a, std::move(axes), keepdims, false);
    }

    Id reduce_mean(Id a, std::vector<size_t> axes, bool keepdims) {
        return reduce_linear(a, std::move(axes), keepdims, true);
    }

    Id reduce_max(Id a, std::vector<size_t> axes, bool keepdims) {
        const auto& A = val(a);
        auto [oshape, mask] = reduced_shape(A.shape, axes, keepdims);
        size_t on = Tensor<T>::count(oshape);
        Tensor<T> out(oshape, std::numeric_limits<T>::lowest());
        std::vector<size_t> arg(on, 0);
        std::vector<bool> seen(on, false);
        for_each_mapped(A.shape, mask, keepdims, [&](size_t ii, size_t oi) {
            if (!seen[oi] || A.data[ii] > out.data[oi]) {
                // strict > keeps the first max, deterministic tie-break
                if (!seen[oi] || A.data[ii] > out.data[oi]) {
                    out.data[oi] = A.data[ii];
                    arg[oi] = ii;
                    seen[oi] = true;
                }
            }
        });
        return push(std::move(out), [a, arg](Tape& t, Id self) {
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            for (size_t oi = 0; oi < arg.size(); ++oi) ga.data[arg[oi]] += G.data[oi];
        });
    }

    /// Softmax over the last axis.
    Id softmax_last(Id a) {
        const auto& A = val(a);
        if (A.rank() < 1) throw std::invalid_argument("softmax_last: rank 0");
        size_t K = A.shape.back();
        size_t rows = A.numel() / K;
        Tensor<T> out = A;
        for (size_t r = 0; r < rows; ++r) {
            T* row = &out.data[r * K];
            T mx = row[0];
            for (size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
            T s = T(0);
            for (size_t j = 0; j < K; ++j) {
                row[j] = std::exp(row[j] - mx);
                s += row[j];
            }
            for (size_t j = 0; j < K; ++j) row[j] /= s;
        }
        return push(std::move(out), [a, rows, K](Tape& t, Id self) {
            const auto& Y = t.val(self);
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            for (size_t r = 0; r < rows; ++r) {
                const T* y = &Y.data[r * K];
                const T* g = &G.data[r * K];
                T dot = T(0);
                for (size_t j = 0; j < K; ++j) dot += g[j] * y[j];
                T* gx = &ga.data[r * K];
                for (size_t j = 0; j < K; ++j) gx[j] += y[j] * (g[j] - dot);
            }
        });
    }

    // ---- shape ops ----

    Id reshape(Id a, std::vector<size_t> shape) {
        const auto& A = val(a);
        if (Tensor<T>::count(shape) != A.numel())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor<T> out(shape, A.data);
        return push(std::move(out), [a](Tape& t, Id self) {
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            for (size_t i = 0; i < G.numel(); ++i) ga.data[i] += G.data[i];
        });
    }

    Id flatten2d(Id a) {
        const auto& A = val(a);
        if (A.rank() < 2) throw std::invalid_argument("flatten2d: rank < 2");
        return reshape(a, {A.shape[0], A.numel() / A.shape[0]});
    }

    Id concat(const std::vector<Id>& parts, size_t axis) {
        if (parts.empty()) throw std::invalid_argument("concat: no inputs");
        const auto& first = val(parts[0]);
        size_t r = first.rank();
        if (axis >= r) throw std::invalid_argument("concat: axis out of range");
        std::vector<size_t> oshape = first.shape;
        for (size_t p = 1; p < parts.size(); ++p) {
            const auto& s = val(parts[p]).shape;
            if (s.size() != r) throw std::invalid_argument("concat: rank mismatch");
            for (size_t d = 0; d < r; ++d)
                if (d != axis && s[d] != oshape[d])
                    throw std::invalid_argument("concat: shape mismatch off-axis");
            oshape[axis] += s[axis];
        }
        size_t outer = 1, inner = 1;
        for (size_t d = 0; d < axis; ++d) outer *= oshape[d];
        for (size_t d = axis + 1; d < r; ++d) inner *= oshape[d];
        Tensor<T> out(oshape);
        size_t off = 0;
        std::vector<size_t> offsets;
        for (Id p : parts) {
            const auto& P = val(p);
            size_t pa = P.shape[axis];
            for (size_t o = 0; o < outer; ++o)
                std::copy(&P.data[o * pa * inner], &P.data[(o + 1) * pa * inner],
                          &out.data[(o * oshape[axis] + off) * inner]);
            offsets.push_back(off);
            off += pa;
        }
        std::vector<Id> ps = parts;
        size_t oaxis = oshape[axis];
        return push(std::move(out), [ps, offsets, outer, inner, oaxis, axis](Tape& t, Id self) {
            const auto& G = t.g(self);
            for (size_t pi = 0; pi < ps.size(); ++pi) {
                auto& gp = t.g(ps[pi]);
                size_t pa = t.val(ps[pi]).shape[axis];
                size_t off = offsets[pi];
                for (size_t o = 0; o < outer; ++o) {
                    const T* src = &G.data[(o * oaxis + off) * inner];
                    T* dst = &gp.data[o * pa * inner];
                    for (size_t i = 0; i < pa * inner; ++i) dst[i] += src[i];
                }
            }
        });
    }

    Id slice(Id a, size_t axis, size_t start, size_t len) {
        const auto& A = val(a);
        if (axis >= A.rank() || start + len > A.shape[axis] || len == 0)
            throw std::invalid_argument("slice: out of range");
        std::vector<size_t> oshape = A.shape;
        oshape[axis] = len;
        size_t outer = 1, inner = 1;
        for (size_t d = 0; d < axis; ++d) outer *= A.shape[d];
        for (size_t d = axis + 1; d < A.rank(); ++d) inner *= A.shape[d];
        size_t aaxis = A.shape[axis];
        Tensor<T> out(oshape);
        for (size_t o = 0; o < outer; ++o)
            std::copy(&A.data[(o * aaxis + start) * inner],
                      &A.data[(o * aaxis + start + len) * inner],
                      &out.data[o * len * inner]);
        return push(std::move(out), [a, axis, start, len, outer, inner, aaxis](Tape& t, Id self) {
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            for (size_t o = 0; o < outer; ++o) {
                const T* src = &G.data[o * len * inner];
                T* dst = &ga.data[(o * aaxis + start) * inner];
                for (size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        });
    }

    // ---- network-specific fused ops ----

    /// Non-overlapping average pooling, stride = window, floor division.
    Id avg_pool(Id x, size_t ph, size_t pw) {
        const auto& X = val(x);
        if (X.rank() != 4) throw std::invalid_argument("avg_pool: rank must be 4");
        size_t N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
        if (ph > H || pw > W)
            throw std::invalid_argument("avg_pool: window larger than axis");
        size_t Ho = H / ph, Wo = W / pw;
        Tensor<T> out({N, C, Ho, Wo}, T(0));
        T inv = T(1) / T(ph * pw);
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c)
                for (size_t oh = 0; oh < Ho; ++oh)
                    for (size_t ow = 0; ow < Wo; ++ow) {
                        T s = T(0);
                        for (size_t i = 0; i < ph; ++i)
                            for (size_t j = 0; j < pw; ++j)
                                s += X(n, c, oh * ph + i, ow * pw + j);
                        out(n, c, oh, ow) = s * inv;
                    }
        return push(std::move(out), [x, ph, pw, N, C, Ho, Wo, inv](Tape& t, Id self) {
            const auto& G = t.g(self);
            auto& gx = t.g(x);
            size_t H = t.val(x).shape[2], W = t.val(x).shape[3];
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c)
                    for (size_t oh = 0; oh < Ho; ++oh)
                        for (size_t ow = 0; ow < Wo; ++ow) {
                            T g = G.data[((n * C + c) * Ho + oh) * Wo + ow] * inv;
                            for (size_t i = 0; i < ph; ++i)
                                for (size_t j = 0; j < pw; ++j)
                                    gx.data[((n * C + c) * H + oh * ph + i) * W + ow * pw + j] += g;
                        }
        });
    }

    /// y[n,c,h,w] = x[n,c,h,w] * s[n,c]  (channel gating, SE/CBAM).
    Id channel_gate(Id x, Id s) {
        const auto& X = val(x);
        const auto& S = val(s);
        if (X.rank() != 4 || S.rank() != 2 || S.shape[0] != X.shape[0] ||
            S.shape[1] != X.shape[1])
            throw std::invalid_argument("channel_gate: shapes " + X.shape_str() + " vs " +
                                        S.shape_str());
        size_t N = X.shape[0], C = X.shape[1], HW = X.shape[2] * X.shape[3];
        Tensor<T> out = X;
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c) {
                T g = S(n, c);
                T* row = &out.data[(n * C + c) * HW];
                for (size_t i = 0; i < HW; ++i) row[i] *= g;
            }
        return push(std::move(out), [x, s, N, C, HW](Tape& t, Id self) {
            const auto& X = t.val(x);
            const auto& S = t.val(s);
            const auto& G = t.g(self);
            auto& gx = t.g(x);
            auto& gs = t.g(s);
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c) {
                    T gv = S.data[n * C + c];
                    T acc = T(0);
                    const T* xr = &X.data[(n * C + c) * HW];
                    const T* gr = &G.data[(n * C + c) * HW];
                    T* dr = &gx.data[(n * C + c) * HW];
                    for (size_t i = 0; i < HW; ++i) {
                        dr[i] += gr[i] * gv;
                        acc += gr[i] * xr[i];
                    }
                    gs.data[n * C + c] += acc;
                }
        });
    }

    /// y[n,c,h,w] = x[n,c,h,w] * s[n,0,h,w]  (spatial gating, CBAM).
    Id spatial_gate(Id x, Id s) {
        const auto& X = val(x);
        const auto& S = val(s);
        if (X.rank() != 4 || S.rank() != 4 || S.shape[0] != X.shape[0] || S.shape[1] != 1 ||
            S.shape[2] != X.shape[2] || S.shape[3] != X.shape[3])
            throw std::invalid_argument("spatial_gate: shapes " + X.shape_str() + " vs " +
                                        S.shape_str());
        size_t N = X.shape[0], C = X.shape[1], HW = X.shape[2] * X.shape[3];
        Tensor<T> out = X;
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c) {
                const T* sr = &S.data[n * HW];
                T* row = &out.data[(n * C + c) * HW];
                for (size_t i = 0; i < HW; ++i) row[i] *= sr[i];
            }
        return push(std::move(out), [x, s, N, C, HW](Tape& t, Id self) {
            const auto& X = t.val(x);
            const auto& S = t.val(s);
            const auto& G = t.g(self);
            auto& gx = t.g(x);
            auto& gs = t.g(s);
            for (size_t n = 0; n < N; ++n)
                for (size_t c = 0; c < C; ++c) {
                    const T* sr = &S.data[n * HW];
                    const T* xr = &X.data[(n * C + c) * HW];
                    const T* gr = &G.data[(n * C + c) * HW];
                    T* dxr = &gx.data[(n * C + c) * HW];
                    T* dsr = &gs.data[n * HW];
                    for (size_t i = 0; i < HW; ++i) {
                        dxr[i] += gr[i] * sr[i];
                        dsr[i] += gr[i] * xr[i];
                    }
                }
        });
    }

    /// Batch normalization over axis 1 of (N,C,H,W), training mode: batch
    /// statistics with biased variance. Batch mean/var are written to the
    /// caller so it can update running statistics.
    Id batchnorm_train(Id x, Id gamma, Id beta, double eps,
                       std::vector<double>* out_mean, std::vector<double>* out_var) {
        const auto& X = val(x);
        const auto& Gm = val(gamma);
        const auto& Bt = val(beta);
        if (X.rank() != 4) throw std::invalid_argument("batchnorm: rank must be 4");
        size_t N = X.shape[0], C = X.shape[1], HW = X.shape[2] * X.shape[3];
        if (N < 2) throw std::invalid_argument("batchnorm: batch size must be >= 2 in train mode");
        if (Gm.numel() != C || Bt.numel() != C)
            throw std::invalid_argument("batchnorm: scale/shift must have length C");
        size_t M = N * HW;
        std::vector<T> mean(C, T(0)), invstd(C, T(0));
        std::vector<double> var(C, 0.0);
        for (size_t c = 0; c < C; ++c) {
            double s = 0;
            for (size_t n = 0; n < N; ++n) {
                const T* row = &X.data[(n * C + c) * HW];
                for (size_t i = 0; i < HW; ++i) s += double(row[i]);
            }
            double m = s / double(M);
            double v = 0;
            for (size_t n = 0; n < N; ++n) {
                const T* row = &X.data[(n * C + c) * HW];
                for (size_t i = 0; i < HW; ++i) {
                    double d = double(row[i]) - m;
                    v += d * d;
                }
            }
            v /= double(M);
            mean[c] = T(m);
            var[c] = v;
            invstd[c] = T(1.0 / std::sqrt(v + eps));
        }
        if (out_mean) out_mean->assign(mean.begin(), mean.end());
        if (out_var) *out_var = var;
        Tensor<T> out(X.shape);
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c) {
                T g = Gm.data[c], b = Bt.data[c], m = mean[c], is = invstd[c];
                const T* xr = &X.data[(n * C + c) * HW];
                T* yr = &out.data[(n * C + c) * HW];
                for (size_t i = 0; i < HW; ++i) yr[i] = g * (xr[i] - m) * is + b;
            }
        return push(std::move(out),
                    [x, gamma, beta, mean, invstd, N, C, HW, M](Tape& t, Id self) {
            const auto& X = t.val(x);
            const auto& Gm = t.val(gamma);
            const auto& G = t.g(self);
            auto& gx = t.g(x);
            auto& gg = t.g(gamma);
            auto& gb = t.g(beta);
            for (size_t c = 0; c < C; ++c) {
                T m = mean[c], is = invstd[c], gam = Gm.data[c];
                double sum_g = 0, sum_gxh = 0;
                for (size_t n = 0; n < N; ++n) {
                    const T* xr = &X.data[(n * C + c) * HW];
                    const T* gr = &G.data[(n * C + c) * HW];
                    for (size_t i = 0; i < HW; ++i) {
                        sum_g += double(gr[i]);
                        sum_gxh += double(gr[i]) * double((xr[i] - m) * is);
                    }
                }
                gg.data[c] += T(sum_gxh);
                gb.data[c] += T(sum_g);
                T k1 = gam * is;
                T mg = T(sum_g / double(M));
                T mgxh = T(sum_gxh / double(M));
                for (size_t n = 0; n < N; ++n) {
                    const T* xr = &X.data[(n * C + c) * HW];
                    const T* gr = &G.data[(n * C + c) * HW];
                    T* dr = &gx.data[(n * C + c) * HW];
                    for (size_t i = 0; i < HW; ++i) {
                        T xh = (xr[i] - m) * is;
                        dr[i] += k1 * (gr[i] - mg - xh * mgxh);
                    }
                }
            }
        });
    }

    /// Batch normalization, inference mode: fixed running statistics.
    Id batchnorm_infer(Id x, Id gamma, Id beta, const std::vector<double>& run_mean,
                       const std::vector<double>& run_var, double eps) {
        const auto& X = val(x);
        const auto& Gm = val(gamma);
        const auto& Bt = val(beta);
        if (X.rank() != 4) throw std::invalid_argument("batchnorm: rank must be 4");
        size_t N = X.shape[0], C = X.shape[1], HW = X.shape[2] * X.shape[3];
        if (Gm.numel() != C || Bt.numel() != C || run_mean.size() != C || run_var.size() != C)
            throw std::invalid_argument("batchnorm: per-channel vector length mismatch");
        std::vector<T> mean(C), invstd(C);
        for (size_t c = 0; c < C; ++c) {
            mean[c] = T(run_mean[c]);
            invstd[c] = T(1.0 / std::sqrt(run_var[c] + eps));
        }
        Tensor<T> out(X.shape);
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c) {
                T g = Gm.data[c], b = Bt.data[c], m = mean[c], is = invstd[c];
                const T* xr = &X.data[(n * C + c) * HW];
                T* yr = &out.data[(n * C + c) * HW];
                for (size_t i = 0; i < HW; ++i) yr[i] = g * (xr[i] - m) * is + b;
            }
        return push(std::move(out), [x, gamma, beta, mean, invstd, N, C, HW](Tape& t, Id self) {
            const auto& X = t.val(x);
            const auto& Gm = t.val(gamma);
            const auto& G = t.g(self);
            auto& gx = t.g(x);
            auto& gg = t.g(gamma);
            auto& gb = t.g(beta);
            for (size_t c = 0; c < C; ++c) {
                T m = mean[c], is = invstd[c];
                T k = Gm.data[c] * is;
                double sum_g = 0, sum_gxh = 0;
                for (size_t n = 0; n < N; ++n) {
                    const T* xr = &X.data[(n * C + c) * HW];
                    const T* gr = &G.data[(n * C + c) * HW];
                    T* dr = &gx.data[(n * C + c) * HW];
                    for (size_t i = 0; i < HW; ++i) {
                        dr[i] += gr[i] * k;
                        sum_g += double(gr[i]);
                        sum_gxh += double(gr[i]) * double((xr[i] - m) * is);
                    }
                }
                gg.data[c] += T(sum_gxh);
                gb.data[c] += T(sum_g);
            }
        });
    }

    /// Mean categorical cross-entropy of logits against integer labels,
    /// computed with a stable log-sum-exp.
    Id cross_entropy(Id logits, std::vector<int> labels) {
        const auto& Z = val(logits);
        if (Z.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be rank 2");
        size_t N = Z.shape[0], K = Z.shape[1];
        if (labels.size() != N)
            throw std::invalid_argument("cross_entropy: label count mismatch");
        double loss = 0;
        for (size_t n = 0; n < N; ++n) {
            int y = labels[n];
            if (y < 0 || size_t(y) >= K)
                throw std::invalid_argument("cross_entropy: label out of range");
            const T* row = &Z.data[n * K];
            double mx = double(row[0]);
            for (size_t j = 1; j < K; ++j) mx = std::max(mx, double(row[j]));
            double s = 0;
            for (size_t j = 0; j < K; ++j) s += std::exp(double(row[j]) - mx);
            loss += mx + std::log(s) - double(row[size_t(y)]);
        }
        Tensor<T> out = Tensor<T>::scalar(T(loss / double(N)));
        return push(std::move(out), [logits, labels, N, K](Tape& t, Id self) {
            const auto& Z = t.val(logits);
            T g = t.g(self).data[0] / T(N);
            auto& gz = t.g(logits);
            for (size_t n = 0; n < N; ++n) {
                const T* row = &Z.data[n * K];
                T mx = row[0];
                for (size_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
                T s = T(0);
                for (size_t j = 0; j < K; ++j) s += std::exp(row[j] - mx);
                for (size_t j = 0; j < K; ++j) {
                    T p = std::exp(row[j] - mx) / s;
                    gz.data[n * K + j] += g * (p - (int(j) == labels[n] ? T(1) : T(0)));
                }
            }
        });
    }

private:
    enum class EwKind { add, sub, mul, div };

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Tape&, Id)> back;
        bool trainable = false;
    };

    std::vector<Node> nodes_;

    Id check(Id id) const {
        if (id < 0 || size_t(id) >= nodes_.size())
            throw std::invalid_argument("tape: invalid node id");
        return id;
    }

    Tensor<T>& g(Id id) { return nodes_[id].grad; }

    Id push(Tensor<T> v, std::function<void(Tape&, Id)> back, bool trainable = false) {
        nodes_.push_back(Node{std::move(v), Tensor<T>(), std::move(back), trainable});
        return Id(nodes_.size() - 1);
    }

    static void axpy(Tensor<T>& dst, const Tensor<T>& src, T a) {
        for (size_t i = 0; i < src.numel(); ++i) dst.data[i] += a * src.data[i];
    }

    template <class F>
    Id ew2(Id a, Id b, F f, EwKind kind) {
        const auto& A = val(a);
        const auto& B = val(b);
        bool as = A.is_scalar(), bs = B.is_scalar();
        if (!as && !bs && !A.same_shape(B))
            throw std::invalid_argument("elementwise op: shape mismatch " + A.shape_str() +
                                        " vs " + B.shape_str() +
                                        " (only scalar broadcast allowed)");
        const auto& big = (as && !bs) ? B : A;
        Tensor<T> out(big.shape);
        size_t n = out.numel();
        for (size_t i = 0; i < n; ++i)
            out.data[i] = f(A.data[as ? 0 : i], B.data[bs ? 0 : i]);
        return push(std::move(out), [a, b, as, bs, kind](Tape& t, Id self) {
            const auto& A = t.val(a);
            const auto& B = t.val(b);
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            auto& gb = t.g(b);
            size_t n = G.numel();
            for (size_t i = 0; i < n; ++i) {
                T gv = G.data[i];
                T av = A.data[as ? 0 : i], bv = B.data[bs ? 0 : i];
                T da, db;
                switch (kind) {
                    case EwKind::add: da = gv; db = gv; break;
                    case EwKind::sub: da = gv; db = -gv; break;
                    case EwKind::mul: da = gv * bv; db = gv * av; break;
                    case EwKind::div: da = gv / bv; db = -gv * av / (bv * bv); break;
                }
                ga.data[as ? 0 : i] += da;
                gb.data[bs ? 0 : i] += db;
            }
        });
    }

    // (Ho, Wo, pad_top, pad_left); 'same' pads (k-1)/2 before, rest after.
    static std::array<size_t, 4> conv_geom(size_t H, size_t W, size_t kh, size_t kw, Pad pad) {
        if (pad == Pad::valid) {
            if (kh > H || kw > W)
                throw std::invalid_argument("conv: kernel larger than input (valid padding)");
            return {H - kh + 1, W - kw + 1, 0, 0};
        }
        return {H, W, (kh - 1) / 2, (kw - 1) / 2};
    }

    static void conv_row_fwd(T* orow, const T* xrow, const T* krow, size_t kw, size_t Wo,
                             size_t W, size_t pl) {
        for (size_t kj = 0; kj < kw; ++kj) {
            T w = krow[kj];
            long shift = long(kj) - long(pl);
            size_t lo = shift < 0 ? size_t(-shift) : 0;
            long hi_l = std::min<long>(long(Wo), long(W) - shift);
            if (hi_l <= long(lo)) continue;
            size_t hi = size_t(hi_l);
            const T* xs = xrow + shift;
            for (size_t ow = lo; ow < hi; ++ow) orow[ow] += w * xs[ow];
        }
    }

    static void conv_row_bwd(const T* grow, const T* xrow, const T* krow, T* gxrow, T* gkrow,
                             size_t kw, size_t Wo, size_t W, size_t pl) {
        for (size_t kj = 0; kj < kw; ++kj) {
            T w = krow[kj];
            long shift = long(kj) - long(pl);
            size_t lo = shift < 0 ? size_t(-shift) : 0;
            long hi_l = std::min<long>(long(Wo), long(W) - shift);
            if (hi_l <= long(lo)) continue;
            size_t hi = size_t(hi_l);
            const T* xs = xrow + shift;
            T* gxs = gxrow + shift;
            T acc = T(0);
            for (size_t ow = lo; ow < hi; ++ow) {
                gxs[ow] += w * grow[ow];
                acc += grow[ow] * xs[ow];
            }
            gkrow[kj] += acc;
        }
    }

    void conv2d_back(Id x, Id k, Id self, Pad pad) {
        const auto& X = val(x);
        const auto& K = val(k);
        const auto& G = g(self);
        auto& gx = g(x);
        auto& gk = g(k);
        size_t N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
        size_t F = K.shape[0], kh = K.shape[2], kw = K.shape[3];
        auto [Ho, Wo, pt, pl] = conv_geom(H, W, kh, kw, pad);
        for (size_t n = 0; n < N; ++n)
            for (size_t f = 0; f < F; ++f)
                for (size_t oh = 0; oh < Ho; ++oh) {
                    const T* grow = &G.data[((n * F + f) * Ho + oh) * Wo];
                    for (size_t c = 0; c < C; ++c)
                        for (size_t ki = 0; ki < kh; ++ki) {
                            long ih = long(oh) + long(ki) - long(pt);
                            if (ih < 0 || ih >= long(H)) continue;
                            const T* xrow = &X.data[((n * C + c) * H + size_t(ih)) * W];
                            T* gxrow = &gx.data[((n * C + c) * H + size_t(ih)) * W];
                            const T* krow = &K.data[((f * C + c) * kh + ki) * kw];
                            T* gkrow = &gk.data[((f * C + c) * kh + ki) * kw];
                            conv_row_bwd(grow, xrow, krow, gxrow, gkrow, kw, Wo, W, pl);
                        }
                }
    }

    void depthwise_back(Id x, Id k, Id self, Pad pad) {
        const auto& X = val(x);
        const auto& K = val(k);
        const auto& G = g(self);
        auto& gx = g(x);
        auto& gk = g(k);
        size_t N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
        size_t Dm = K.shape[1], kh = K.shape[2], kw = K.shape[3];
        auto [Ho, Wo, pt, pl] = conv_geom(H, W, kh, kw, pad);
        size_t Co = C * Dm;
        for (size_t n = 0; n < N; ++n)
            for (size_t c = 0; c < C; ++c)
                for (size_t d = 0; d < Dm; ++d)
                    for (size_t oh = 0; oh < Ho; ++oh) {
                        const T* grow = &G.data[((n * Co + c * Dm + d) * Ho + oh) * Wo];
                        for (size_t ki = 0; ki < kh; ++ki) {
                            long ih = long(oh) + long(ki) - long(pt);
                            if (ih < 0 || ih >= long(H)) continue;
                            const T* xrow = &X.data[((n * C + c) * H + size_t(ih)) * W];
                            T* gxrow = &gx.data[((n * C + c) * H + size_t(ih)) * W];
                            const T* krow = &K.data[((c * Dm + d) * kh + ki) * kw];
                            T* gkrow = &gk.data[((c * Dm + d) * kh + ki) * kw];
                            conv_row_bwd(grow, xrow, krow, gxrow, gkrow, kw, Wo, W, pl);
                        }
                    }
    }

    // sum/mean reduction over axes
    Id reduce_linear(Id a, std::vector<size_t> axes, bool keepdims, bool mean) {
        const auto& A = val(a);
        auto [oshape, mask] = reduced_shape(A.shape, axes, keepdims);
        Tensor<T> out(oshape, T(0));
        for_each_mapped(A.shape, mask, keepdims,
                        [&](size_t ii, size_t oi) { out.data[oi] += A.data[ii]; });
        size_t cnt = A.numel() / out.numel();
        T scale = mean ? T(1) / T(cnt) : T(1);
        if (mean)
            for (T& v : out.data) v *= scale;
        auto mask_c = mask;
        return push(std::move(out), [a, mask_c, keepdims, scale](Tape& t, Id self) {
            const auto& G = t.g(self);
            auto& ga = t.g(a);
            for_each_mapped(t.val(a).shape, mask_c, keepdims,
                            [&](size_t ii, size_t oi) { ga.data[ii] += G.data[oi] * scale; });
        });
    }

    static std::pair<std::vector<size_t>, std::vector<bool>> reduced_shape(
        const std::vector<size_t>& shape, const std::vector<size_t>& axes, bool keepdims) {
        std::vector<bool> mask(shape.size(), false);
        for (size_t ax : axes) {
            if (ax >= shape.size()) throw std::invalid_argument("reduce: axis out of range");
            mask[ax] = true;
        }
        std::vector<size_t> oshape;
        for (size_t d = 0; d < shape.size(); ++d) {
            if (mask[d]) {
                if (keepdims) oshape.push_back(1);
            } else {
                oshape.push_back(shape[d]);
            }
        }
        if (oshape.empty()) oshape.push_back(1);
        return {oshape, mask};
    }

    /// Calls f(input_linear_index, output_linear_index) for every element.
    template <class F>
    static void for_each_mapped(const std::vector<size_t>& shape, const std::vector<bool>& mask,
                                bool /*keepdims*/, F f) {
        size_t r = shape.size();
        // output strides aligned to input dims (reduced dims contribute 0)
        std::vector<size_t> ostride(r, 0);
        size_t acc = 1;
        for (size_t d = r; d-- > 0;) {
            if (!mask[d]) {
                ostride[d] = acc;
                acc *= shape[d];
            }
        }
        std::vector<size_t> idx(r, 0);
        size_t total = 1;
        for (size_t d : shape) total *= d;
        size_t oi = 0;
        for (size_t ii = 0; ii < total; ++ii) {
            f(ii, oi);
            // odometer increment
            for (size_t d = r; d-- > 0;) {
                idx[d]++;
                oi += ostride[d];
                if (idx[d] < shape[d]) break;
                oi -= ostride[d] * shape[d];
                idx[d] = 0;
                if (d == 0) break;
            }
        }
    }
};

} // namespace kam

#endif
