#pragma once

// Forward-mode dual numbers.  Running the reverse-mode tape over Dual<T>
// yields Hessian-vector products, which is how the gradient penalty is
// differentiated with respect to discriminator parameters.

#include <cmath>
#include <concepts>
#include <type_traits>

namespace ratgan {

template <class T>
struct Dual {
    T v{};  // primal
    T d{};  // tangent

    constexpr Dual() = default;
    template <class U>
        requires std::is_arithmetic_v<U>
    constexpr Dual(U value) : v(static_cast<T>(value)), d(0) {}
    constexpr Dual(T value, T tangent) : v(value), d(tangent) {}

    constexpr Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    constexpr Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    constexpr Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    constexpr Dual& operator/=(const Dual& o) {
        const T inv = T(1) / o.v;
        d = (d - v * inv * o.d) * inv;
        v *= inv;
        return *this;
    }
    constexpr Dual operator-() const { return {-v, -d}; }

    friend constexpr Dual operator+(Dual a, const Dual& b) { return a += b; }
    friend constexpr Dual operator-(Dual a, const Dual& b) { return a -= b; }
    friend constexpr Dual operator*(Dual a, const Dual& b) { return a *= b; }
    friend constexpr Dual operator/(Dual a, const Dual& b) { return a /= b; }

    // Ordering looks at the primal only; branches in piecewise functions
    // select the same piece for the whole infinitesimal neighbourhood.
    friend constexpr bool operator==(const Dual& a, const Dual& b) { return a.v == b.v; }
    friend constexpr bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
    friend constexpr bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
    friend constexpr bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
    friend constexpr bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }
};

template <class T> Dual<T> exp(const Dual<T>& x) { const T e = std::exp(x.v); return {e, e * x.d}; }
template <class T> Dual<T> log(const Dual<T>& x) { return {std::log(x.v), x.d / x.v}; }
template <class T> Dual<T> sqrt(const Dual<T>& x) {
    const T r = std::sqrt(x.v);
    return {r, r > T(0) ? x.d / (T(2) * r) : T(0)};
}
template <class T> Dual<T> tanh(const Dual<T>& x) { const T t = std::tanh(x.v); return {t, (T(1) - t * t) * x.d}; }
template <class T> Dual<T> abs(const Dual<T>& x) { return x.v < T(0) ? -x : x; }
template <class T> Dual<T> pow(const Dual<T>& x, double p) {
    const T r = static_cast<T>(std::pow(x.v, p));
    return {r, x.v == T(0) ? T(0) : static_cast<T>(p * std::pow(x.v, p - 1.0)) * x.d};
}
template <class T> bool isfinite(const Dual<T>& x) { return std::isfinite(x.v) && std::isfinite(x.d); }

template <class T> struct is_dual : std::false_type {};
template <class T> struct is_dual<Dual<T>> : std::true_type {};
template <class T> inline constexpr bool is_dual_v = is_dual<T>::value;

/// Underlying real type: float for Dual<float>, float for float.
template <class T> struct real_of { using type = T; };
template <class T> struct real_of<Dual<T>> { using type = T; };
template <class T> using real_t = typename real_of<T>::type;

/// Primal value as double, for logging and control flow.
template <class T>
constexpr double primal(const T& x) {
    if constexpr (is_dual_v<T>) return static_cast<double>(x.v);
    else return static_cast<double>(x);
}

/// Converts between scalar kinds; dual -> real drops the tangent.
template <class To, class From>
constexpr To scalar_cast(const From& x) {
    if constexpr (std::is_same_v<To, From>) return x;
    else if constexpr (is_dual_v<From> && !is_dual_v<To>) return static_cast<To>(x.v);
    else if constexpr (is_dual_v<From> && is_dual_v<To>) return To(static_cast<real_t<To>>(x.v), static_cast<real_t<To>>(x.d));
    else return To(x);
}

}  // namespace ratgan
