#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "ratgan/dual.hpp"

namespace ratgan {

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void gemm_real(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
               const T* b, T beta, T* c) {
    using Map = Eigen::Map<const RowMatrix<T>>;
    const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
    Map A(a, trans_a ? K : M, trans_a ? M : K);
    Map B(b, trans_b ? N : K, trans_b ? K : N);
    Eigen::Map<RowMatrix<T>> C(c, M, N);
    if (beta == T(0)) C.setZero();
    else if (beta != T(1)) C *= beta;
    if (!trans_a && !trans_b) C.noalias() += alpha * A * B;
    else if (trans_a && !trans_b) C.noalias() += alpha * A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() += alpha * A * B.transpose();
    else C.noalias() += alpha * A.transpose() * B.transpose();
}

}  // namespace detail

/// C = alpha * op(A) * op(B) + beta * C, all row-major.  op(A) is m x k, op(B) is k x n.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const T* a,
          const T* b, double beta, T* c) {
    if (m == 0 || n == 0) return;
    if constexpr (is_dual_v<T>) {
        // Planar split: (Av + e Ad)(Bv + e Bd) = AvBv + e (Ad Bv + Av Bd).
        using R = real_t<T>;
        const std::size_t na = m * k, nb = k * n, nc = m * n;
        std::vector<R> av(na), ad(na), bv(nb), bd(nb), cv(nc), cd(nc);
        for (std::size_t i = 0; i < na; ++i) { av[i] = a[i].v; ad[i] = a[i].d; }
        for (std::size_t i = 0; i < nb; ++i) { bv[i] = b[i].v; bd[i] = b[i].d; }
        for (std::size_t i = 0; i < nc; ++i) { cv[i] = c[i].v; cd[i] = c[i].d; }
        const R al = static_cast<R>(alpha), be = static_cast<R>(beta);
        detail::gemm_real<R>(trans_a, trans_b, m, n, k, al, av.data(), bv.data(), be, cv.data());
        detail::gemm_real<R>(trans_a, trans_b, m, n, k, al, ad.data(), bv.data(), be, cd.data());
        detail::gemm_real<R>(trans_a, trans_b, m, n, k, al, av.data(), bd.data(), R(1), cd.data());
        for (std::size_t i = 0; i < nc; ++i) c[i] = T(cv[i], cd[i]);
    } else {
        if (k == 0) {
            for (std::size_t i = 0; i < m * n; ++i) c[i] = beta == 0.0 ? T(0) : static_cast<T>(beta) * c[i];
            return;
        }
        detail::gemm_real<T>(trans_a, trans_b, m, n, k, static_cast<T>(alpha), a, b, static_cast<T>(beta), c);
    }
}

}  // namespace ratgan
