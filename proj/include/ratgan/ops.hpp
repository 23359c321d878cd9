#pragma once

// Differentiable tensor operations.  All ops are generic over the scalar
// type (float, double, Dual<float>, Dual<double>).

#include <cmath>
#include <cstdint>
#include <vector>

#include "ratgan/autograd.hpp"
#include "ratgan/gemm.hpp"

namespace ratgan {

namespace detail {

template <class T>
Tensor<T>* grad_slot(Node<T>& self, std::size_t i) {
    Node<T>& p = *self.parents[i];
    return p.requires_grad ? &p.ensure_grad() : nullptr;
}

template <class T>
const Tensor<T>& parent_value(const Node<T>& self, std::size_t i) {
    return self.parents[i]->value;
}

}  // namespace detail

template <class T>
T sigmoid_scalar(T x) {
    using std::exp;
    if (x >= T(0)) return T(1) / (T(1) + exp(-x));
    const T e = exp(x);
    return e / (T(1) + e);
}

// ---- elementwise -------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    a.value().check_same(b.value(), "add");
    Tensor<T> out = a.value();
    out += b.value();
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = detail::grad_slot(self, k)) *g += self.grad;
    });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    a.value().check_same(b.value(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0)) *g += self.grad;
        if (auto* g = detail::grad_slot(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    a.value().check_same(b.value(), "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
        const auto& av = detail::parent_value(self, 0);
        const auto& bv = detail::parent_value(self, 1);
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (auto* g = detail::grad_slot(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

template <class T>
Var<T> scale(const Var<T>& a, double c) {
    Tensor<T> out = a.value();
    const T tc(c);
    for (auto& x : out.values()) x = x * tc;
    return make_result<T>(std::move(out), {a}, [tc](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * tc;
    });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, double c) {
    Tensor<T> out = a.value();
    const T tc(c);
    for (auto& x : out.values()) x = x + tc;
    return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0)) *g += self.grad;
    });
}

template <class T>
Var<T> neg(const Var<T>& a) {
    return scale(a, -1.0);
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, double slope = 0.2) {
    Tensor<T> out = x.value();
    const T ts(slope);
    if (auto* km = KinkMonitor::current())
        for (const auto& v : x.value().values()) km->record(v > T(0));
    for (auto& v : out.values())
        if (!(v > T(0))) v = v * ts;
    return make_result<T>(std::move(out), {x}, [ts](Node<T>& self) {
        const auto& xv = detail::parent_value(self, 0);
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += xv[i] > T(0) ? self.grad[i] : self.grad[i] * ts;
    });
}

template <class T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    if (auto* km = KinkMonitor::current())
        for (const auto& v : x.value().values()) km->record(v > T(0));
    for (auto& v : out.values())
        if (!(v > T(0))) v = T(0);
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        const auto& xv = detail::parent_value(self, 0);
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (xv[i] > T(0)) (*g)[i] += self.grad[i];
    });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
    using std::tanh;
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = tanh(x.value()[i]);
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T y = self.value[i];
                (*g)[i] += self.grad[i] * (T(1) - y * y);
            }
    });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x.value()[i]);
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const T y = self.value[i];
                (*g)[i] += self.grad[i] * y * (T(1) - y);
            }
    });
}

/// log(max(x, eps)); the clamp has zero gradient.
template <class T>
Var<T> log_clamped(const Var<T>& x, double eps) {
    using std::log;
    const T te(eps);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = log(x.value()[i] > te ? x.value()[i] : te);
    return make_result<T>(std::move(out), {x}, [te](Node<T>& self) {
        const auto& xv = detail::parent_value(self, 0);
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (xv[i] > te) (*g)[i] += self.grad[i] / xv[i];
    });
}

// ---- reductions --------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& a) {
    T s(0);
    for (const auto& v : a.value().values()) s += v;
    return make_result<T>(Tensor<T>({1}, s), {a}, [](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (auto& v : g->values()) v += self.grad[0];
    });
}

template <class T>
Var<T> mean(const Var<T>& a) {
    RATGAN_REQUIRE(a.size() > 0, "mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// [N, C, H, W] -> [N, C]
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
    RATGAN_REQUIRE(x.value().rank() == 4, "global_avg_pool expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out({n, c});
    const T inv(1.0 / static_cast<double>(hw));
    for (std::size_t i = 0; i < n * c; ++i) {
        T s(0);
        for (std::size_t p = 0; p < hw; ++p) s += x.value()[i * hw + p];
        out[i] = s * inv;
    }
    return make_result<T>(std::move(out), {x}, [hw, inv](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                for (std::size_t p = 0; p < hw; ++p) (*g)[i * hw + p] += self.grad[i] * inv;
    });
}

// ---- linear algebra ----------------------------------------------------

/// x [N, in], w [out, in], b [out] -> [N, out]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    RATGAN_REQUIRE(x.value().rank() == 2 && w.value().rank() == 2, "linear expects rank-2 input and weight");
    const std::size_t n = x.dim(0), in = x.dim(1), out_w = w.dim(0);
    if (w.dim(1) != in)
        throw InvalidInput("linear: input width " + std::to_string(in) + " does not match weight " +
                           shape_string(w.shape()));
    RATGAN_REQUIRE(b.value().rank() == 1 && b.dim(0) == out_w, "linear: bias width mismatch");
    Tensor<T> out({n, out_w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_w; ++j) out.at(i, j) = b.value()[j];
    gemm(false, true, n, out_w, in, 1.0, x.value().data(), w.value().data(), 1.0, out.data());
    return make_result<T>(std::move(out), {x, w, b}, [n, in, out_w](Node<T>& self) {
        const auto& xv = detail::parent_value(self, 0);
        const auto& wv = detail::parent_value(self, 1);
        if (auto* g = detail::grad_slot(self, 0))
            gemm(false, false, n, in, out_w, 1.0, self.grad.data(), wv.data(), 1.0, g->data());
        if (auto* g = detail::grad_slot(self, 1))
            gemm(true, false, out_w, in, n, 1.0, self.grad.data(), xv.data(), 1.0, g->data());
        if (auto* g = detail::grad_slot(self, 2))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < out_w; ++j) (*g)[j] += self.grad.at(i, j);
    });
}

/// a [n, k], b [m, k] -> a * b^T [n, m]
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    RATGAN_REQUIRE(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(1),
                   "matmul_nt: inner widths differ");
    const std::size_t n = a.dim(0), m = b.dim(0), k = a.dim(1);
    Tensor<T> out({n, m});
    gemm(false, true, n, m, k, 1.0, a.value().data(), b.value().data(), 0.0, out.data());
    return make_result<T>(std::move(out), {a, b}, [n, m, k](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            gemm(false, false, n, k, m, 1.0, self.grad.data(), detail::parent_value(self, 1).data(), 1.0, g->data());
        if (auto* g = detail::grad_slot(self, 1))
            gemm(true, false, m, k, n, 1.0, self.grad.data(), detail::parent_value(self, 0).data(), 1.0, g->data());
    });
}

template <class T>
Var<T> transpose2d(const Var<T>& a) {
    RATGAN_REQUIRE(a.value().rank() == 2, "transpose2d expects rank 2");
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.value().at(i, j);
    return make_result<T>(std::move(out), {a}, [r, c](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g->at(i, j) += self.grad.at(j, i);
    });
}

template <class T>
Var<T> diagonal(const Var<T>& a) {
    RATGAN_REQUIRE(a.value().rank() == 2 && a.dim(0) == a.dim(1), "diagonal expects a square matrix");
    const std::size_t n = a.dim(0);
    Tensor<T> out({n});
    for (std::size_t i = 0; i < n; ++i) out[i] = a.value().at(i, i);
    return make_result<T>(std::move(out), {a}, [n](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < n; ++i) g->at(i, i) += self.grad[i];
    });
}

// ---- convolution -------------------------------------------------------

struct ConvGeometry {
    std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;

    static ConvGeometry make(std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s,
                             std::size_t p) {
        if (h + 2 * p < k || w + 2 * p < k)
            throw InvalidInput("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                               std::to_string(h) + "x" + std::to_string(w));
        return {c, h, w, k, s, p, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1};
    }
    std::size_t col_rows() const { return channels * kernel * kernel; }
    std::size_t col_cols() const { return out_h * out_w; }
};

namespace detail {

/// Output columns [lo, hi) whose input column ow * stride + kw - pad lies inside the row.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kw) {
    const long s = static_cast<long>(g.stride), off = static_cast<long>(kw) - static_cast<long>(g.pad);
    const long w = static_cast<long>(g.width), ow = static_cast<long>(g.out_w);
    const long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    const long hi = w - off <= 0 ? 0 : std::min(ow, (w - off + s - 1) / s);
    return {static_cast<std::size_t>(std::min(lo, ow)), static_cast<std::size_t>(std::max(hi, std::min(lo, ow)))};
}

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
    const std::size_t ohw = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t kh = 0; kh < g.kernel; ++kh)
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                T* row = col + ((c * g.kernel + kh) * g.kernel + kw) * ohw;
                const auto [lo, hi] = valid_columns(g, kw);
                const long off = static_cast<long>(kw) - static_cast<long>(g.pad);
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
                    T* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= static_cast<long>(g.height)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
                    std::fill(dst, dst + lo, T(0));
                    if (g.stride == 1) {
                        std::copy(src + static_cast<long>(lo) + off, src + static_cast<long>(hi) + off, dst + lo);
                    } else {
                        for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = src[static_cast<long>(ow * g.stride) + off];
                    }
                    std::fill(dst + hi, dst + g.out_w, T(0));
                }
            }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
    const std::size_t ohw = g.col_cols();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t kh = 0; kh < g.kernel; ++kh)
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
                const T* row = col + ((c * g.kernel + kh) * g.kernel + kw) * ohw;
                const auto [lo, hi] = valid_columns(g, kw);
                const long off = static_cast<long>(kw) - static_cast<long>(g.pad);
                for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                    const long ih = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.pad);
                    if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
                    T* dst = x + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
                    const T* src = row + oh * g.out_w;
                    for (std::size_t ow = lo; ow < hi; ++ow) dst[static_cast<long>(ow * g.stride) + off] += src[ow];
                }
            }
}

}  // namespace detail

/// x [N, C, H, W], w [O, C, k, k], b [O] -> [N, O, Ho, Wo]
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride, std::size_t pad) {
    RATGAN_REQUIRE(x.value().rank() == 4 && w.value().rank() == 4, "conv2d expects [N,C,H,W] input and [O,C,k,k] weight");
    if (x.dim(1) != w.dim(1))
        throw InvalidInput("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                           std::to_string(w.dim(1)));
    RATGAN_REQUIRE(w.dim(2) == w.dim(3), "conv2d: square kernels only");
    const std::size_t n = x.dim(0), oc = w.dim(0);
    RATGAN_REQUIRE(b.value().rank() == 1 && b.dim(0) == oc, "conv2d: bias width mismatch");
    const ConvGeometry g = ConvGeometry::make(x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad);
    const std::size_t in_sz = g.channels * g.height * g.width, out_sz = oc * g.col_cols();
    Tensor<T> out({n, oc, g.out_h, g.out_w});
    std::vector<T> col(g.col_rows() * g.col_cols());
    for (std::size_t i = 0; i < n; ++i) {
        T* o = out.data() + i * out_sz;
        for (std::size_t c = 0; c < oc; ++c)
            for (std::size_t p = 0; p < g.col_cols(); ++p) o[c * g.col_cols() + p] = b.value()[c];
        detail::im2col(x.value().data() + i * in_sz, g, col.data());
        gemm(false, false, oc, g.col_cols(), g.col_rows(), 1.0, w.value().data(), col.data(), 1.0, o);
    }
    return make_result<T>(std::move(out), {x, w, b}, [g, n, oc, in_sz, out_sz](Node<T>& self) {
        const auto& xv = detail::parent_value(self, 0);
        const auto& wv = detail::parent_value(self, 1);
        auto* gx = detail::grad_slot(self, 0);
        auto* gw = detail::grad_slot(self, 1);
        auto* gb = detail::grad_slot(self, 2);
        std::vector<T> col(g.col_rows() * g.col_cols());
        for (std::size_t i = 0; i < n; ++i) {
            const T* go = self.grad.data() + i * out_sz;
            if (gw) {
                detail::im2col(xv.data() + i * in_sz, g, col.data());
                gemm(false, true, oc, g.col_rows(), g.col_cols(), 1.0, go, col.data(), 1.0, gw->data());
            }
            if (gx) {
                gemm(true, false, g.col_rows(), g.col_cols(), oc, 1.0, wv.data(), go, 0.0, col.data());
                detail::col2im_add(col.data(), g, gx->data() + i * in_sz);
            }
            if (gb)
                for (std::size_t c = 0; c < oc; ++c)
                    for (std::size_t p = 0; p < g.col_cols(); ++p) (*gb)[c] += go[c * g.col_cols() + p];
        }
    });
}

// ---- shape manipulation -------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

namespace detail {
inline void split_axis(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

/// Concatenates along `axis`; all other dimensions must agree.
template <class T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis = 1) {
    RATGAN_REQUIRE(!parts.empty(), "concat of nothing");
    Shape shape = parts[0].shape();
    RATGAN_REQUIRE(axis < shape.size(), "concat axis out of range");
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        RATGAN_REQUIRE(s.size() == shape.size(), "concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != shape[i])
                throw InvalidInput("concat: shape " + shape_string(s) + " incompatible with " + shape_string(shape));
        total += s[axis];
    }
    shape[axis] = total;
    std::size_t outer, inner;
    detail::split_axis(shape, axis, outer, inner);
    Tensor<T> out(shape);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.value().data() + o * w, w, out.data() + o * total * inner + offset);
        widths.push_back(w);
        offset += w;
    }
    return make_result<T>(std::move(out), parts, [widths, outer, total, inner](Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (auto* g = detail::grad_slot(self, k))
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < widths[k]; ++i)
                        (*g)[o * widths[k] + i] += self.grad[o * total * inner + off + i];
            off += widths[k];
        }
    });
}

/// Elements [begin, end) along `axis`.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    Shape shape = x.shape();
    RATGAN_REQUIRE(axis < shape.size() && begin < end && end <= shape[axis], "slice out of range");
    std::size_t outer, inner;
    detail::split_axis(shape, axis, outer, inner);
    const std::size_t full = shape[axis] * inner, w = (end - begin) * inner, off = begin * inner;
    shape[axis] = end - begin;
    Tensor<T> out(shape);
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.value().data() + o * full + off, w, out.data() + o * w);
    return make_result<T>(std::move(out), {x}, [outer, full, w, off](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < w; ++i) (*g)[o * full + off + i] += self.grad[o * w + i];
    });
}

/// Rows (first-axis entries) picked by index, with repetition allowed.
template <class T>
Var<T> gather_rows(const Var<T>& x, const std::vector<std::size_t>& idx) {
    Shape shape = x.shape();
    const std::size_t row = x.size() / shape[0];
    for (auto i : idx) RATGAN_REQUIRE(i < shape[0], "gather_rows index out of range");
    shape[0] = idx.size();
    Tensor<T> out(shape);
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy_n(x.value().data() + idx[r] * row, row, out.data() + r * row);
    return make_result<T>(std::move(out), {x}, [idx, row](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t i = 0; i < row; ++i) (*g)[idx[r] * row + i] += self.grad[r * row + i];
    });
}

/// Row n of the result is a[n] where mask[n] is set, b[n] otherwise.
template <class T>
Var<T> where_rows(const std::vector<std::uint8_t>& mask, const Var<T>& a, const Var<T>& b) {
    a.value().check_same(b.value(), "where_rows");
    RATGAN_REQUIRE(mask.size() == a.dim(0), "where_rows mask length mismatch");
    const std::size_t row = a.size() / a.dim(0);
    Tensor<T> out = b.value();
    for (std::size_t r = 0; r < mask.size(); ++r)
        if (mask[r]) std::copy_n(a.value().data() + r * row, row, out.data() + r * row);
    return make_result<T>(std::move(out), {a, b}, [mask, row](Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (auto* g = detail::grad_slot(self, k))
                for (std::size_t r = 0; r < mask.size(); ++r)
                    if ((mask[r] != 0) == (k == 0))
                        for (std::size_t i = 0; i < row; ++i) (*g)[r * row + i] += self.grad[r * row + i];
    });
}

/// Nearest-neighbour spatial upsampling of [N, C, H, W].
template <class T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t factor) {
    RATGAN_REQUIRE(x.value().rank() == 4 && factor >= 1, "upsample_nearest expects [N,C,H,W] and factor >= 1");
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), H = h * factor, W = w * factor;
    Tensor<T> out({x.dim(0), x.dim(1), H, W});
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                out[(p * H + i) * W + j] = x.value()[(p * h + i / factor) * w + j / factor];
    return make_result<T>(std::move(out), {x}, [nc, h, w, H, W, factor](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t p = 0; p < nc; ++p)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j)
                        (*g)[(p * h + i / factor) * w + j / factor] += self.grad[(p * H + i) * W + j];
    });
}

/// out[n,c,:,:] = gamma[n,c] * x[n,c,:,:] + beta[n,c]
template <class T>
Var<T> channel_affine(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
    RATGAN_REQUIRE(x.value().rank() == 4, "channel_affine expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (gamma.shape() != Shape{n, c} || beta.shape() != Shape{n, c})
        throw InvalidInput("affine parameters " + shape_string(gamma.shape()) + "/" + shape_string(beta.shape()) +
                           " do not match feature map channels " + shape_string(x.shape()));
    Tensor<T> out(x.shape());
    for (std::size_t k = 0; k < n * c; ++k) {
        const T ga = gamma.value()[k], be = beta.value()[k];
        const T* src = x.value().data() + k * hw;
        T* dst = out.data() + k * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] = ga * src[p] + be;
    }
    return make_result<T>(std::move(out), {x, gamma, beta}, [n, c, hw](Node<T>& self) {
        const auto& xv = detail::parent_value(self, 0);
        const auto& gv = detail::parent_value(self, 1);
        auto* gx = detail::grad_slot(self, 0);
        auto* gg = detail::grad_slot(self, 1);
        auto* gb = detail::grad_slot(self, 2);
        for (std::size_t k = 0; k < n * c; ++k) {
            const T* go = self.grad.data() + k * hw;
            const T* src = xv.data() + k * hw;
            T sg(0), sb(0);
            for (std::size_t p = 0; p < hw; ++p) {
                sg += go[p] * src[p];
                sb += go[p];
            }
            if (gx)
                for (std::size_t p = 0; p < hw; ++p) (*gx)[k * hw + p] += go[p] * gv[k];
            if (gg) (*gg)[k] += sg;
            if (gb) (*gb)[k] += sb;
        }
    });
}

/// s [N, D] -> [N, D, H, W] with every position a copy of s.
template <class T>
Var<T> broadcast_spatial(const Var<T>& s, std::size_t h, std::size_t w) {
    RATGAN_REQUIRE(s.value().rank() == 2, "broadcast_spatial expects [N,D]");
    const std::size_t nd = s.size(), hw = h * w;
    Tensor<T> out({s.dim(0), s.dim(1), h, w});
    for (std::size_t k = 0; k < nd; ++k) std::fill_n(out.data() + k * hw, hw, s.value()[k]);
    return make_result<T>(std::move(out), {s}, [nd, hw](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t k = 0; k < nd; ++k)
                for (std::size_t p = 0; p < hw; ++p) (*g)[k] += self.grad[k * hw + p];
    });
}

/// S[n, d, p] = s[n, d] * alpha[n, p]; alpha is [N, H*W].
template <class T>
Var<T> spatial_gate(const Var<T>& s, const Var<T>& alpha, std::size_t h, std::size_t w) {
    RATGAN_REQUIRE(s.value().rank() == 2 && alpha.value().rank() == 2 && s.dim(0) == alpha.dim(0) &&
                       alpha.dim(1) == h * w,
                   "spatial_gate: shapes inconsistent");
    const std::size_t n = s.dim(0), d = s.dim(1), hw = h * w;
    Tensor<T> out({n, d, h, w});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t p = 0; p < hw; ++p) out[(i * d + c) * hw + p] = s.value().at(i, c) * alpha.value().at(i, p);
    return make_result<T>(std::move(out), {s, alpha}, [n, d, hw](Node<T>& self) {
        const auto& sv = detail::parent_value(self, 0);
        const auto& av = detail::parent_value(self, 1);
        auto* gs = detail::grad_slot(self, 0);
        auto* ga = detail::grad_slot(self, 1);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t p = 0; p < hw; ++p) {
                    const T go = self.grad[(i * d + c) * hw + p];
                    if (gs) gs->at(i, c) += go * av.at(i, p);
                    if (ga) ga->at(i, p) += go * sv.at(i, c);
                }
    });
}

/// [N, C, H, W] -> [N*H*W, C], one row per spatial position.
template <class T>
Var<T> to_positions(const Var<T>& x) {
    RATGAN_REQUIRE(x.value().rank() == 4, "to_positions expects [N,C,H,W]");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out({n * hw, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < hw; ++p) out.at(i * hw + p, ch) = x.value()[(i * c + ch) * hw + p];
    return make_result<T>(std::move(out), {x}, [n, c, hw](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t p = 0; p < hw; ++p) (*g)[(i * c + ch) * hw + p] += self.grad.at(i * hw + p, ch);
    });
}

/// s [N, D] -> [N*k, D] with row n*k + j equal to s[n].
template <class T>
Var<T> repeat_rows(const Var<T>& s, std::size_t k) {
    RATGAN_REQUIRE(s.value().rank() == 2, "repeat_rows expects [N,D]");
    const std::size_t n = s.dim(0), d = s.dim(1);
    Tensor<T> out({n * k, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) std::copy_n(s.value().data() + i * d, d, out.data() + (i * k + j) * d);
    return make_result<T>(std::move(out), {s}, [n, d, k](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j)
                    for (std::size_t c = 0; c < d; ++c) (*g)[i * d + c] += self.grad[(i * k + j) * d + c];
    });
}

/// Table lookup: table [V, E], one row per index -> [M, E].
template <class T>
Var<T> embedding(const Var<T>& table, const std::vector<std::size_t>& idx) {
    return gather_rows(table, idx);
}

// ---- row normalizers ---------------------------------------------------

/// p_k = sigmoid(x_k) / sum_j sigmoid(x_j), per row of [N, K].
template <class T>
Var<T> soft_threshold_rows(const Var<T>& x) {
    RATGAN_REQUIRE(x.value().rank() == 2, "soft_threshold_rows expects [N,K]");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor<T> out({n, k});
    std::vector<T> q(n * k), denom(n);
    for (std::size_t i = 0; i < n; ++i) {
        T s(0);
        for (std::size_t j = 0; j < k; ++j) s += (q[i * k + j] = sigmoid_scalar(x.value().at(i, j)));
        denom[i] = s;
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = q[i * k + j] / s;
    }
    return make_result<T>(std::move(out), {x}, [n, k, q, denom](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < n; ++i) {
                T dot(0);
                for (std::size_t j = 0; j < k; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
                for (std::size_t j = 0; j < k; ++j) {
                    const T qj = q[i * k + j];
                    g->at(i, j) += qj * (T(1) - qj) / denom[i] * (self.grad.at(i, j) - dot);
                }
            }
    });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
    using std::exp;
    RATGAN_REQUIRE(x.value().rank() == 2, "softmax_rows expects [N,K]");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor<T> out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        T m = x.value().at(i, 0);
        for (std::size_t j = 1; j < k; ++j) m = x.value().at(i, j) > m ? x.value().at(i, j) : m;
        T s(0);
        for (std::size_t j = 0; j < k; ++j) s += (out.at(i, j) = exp(x.value().at(i, j) - m));
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = out.at(i, j) / s;
    }
    return make_result<T>(std::move(out), {x}, [n, k](Node<T>& self) {
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < n; ++i) {
                T dot(0);
                for (std::size_t j = 0; j < k; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
                for (std::size_t j = 0; j < k; ++j) g->at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
            }
    });
}

template <class T>
Var<T> log_softmax_rows(const Var<T>& x) {
    using std::exp;
    using std::log;
    RATGAN_REQUIRE(x.value().rank() == 2, "log_softmax_rows expects [N,K]");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor<T> out({n, k});
    for (std::size_t i = 0; i < n; ++i) {
        T m = x.value().at(i, 0);
        for (std::size_t j = 1; j < k; ++j) m = x.value().at(i, j) > m ? x.value().at(i, j) : m;
        T s(0);
        for (std::size_t j = 0; j < k; ++j) s += exp(x.value().at(i, j) - m);
        const T lse = m + log(s);
        for (std::size_t j = 0; j < k; ++j) out.at(i, j) = x.value().at(i, j) - lse;
    }
    return make_result<T>(std::move(out), {x}, [n, k](Node<T>& self) {
        using std::exp;
        if (auto* g = detail::grad_slot(self, 0))
            for (std::size_t i = 0; i < n; ++i) {
                T gs(0);
                for (std::size_t j = 0; j < k; ++j) gs += self.grad.at(i, j);
                for (std::size_t j = 0; j < k; ++j) g->at(i, j) += self.grad.at(i, j) - exp(self.value.at(i, j)) * gs;
            }
    });
}

}  // namespace ratgan
