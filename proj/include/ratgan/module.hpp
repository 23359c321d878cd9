#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ratgan/ops.hpp"

namespace ratgan {

using Rng = std::mt19937_64;

/// A trainable tensor bound to a persistent graph leaf.
template <class T>
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Tensor<T> init) : name_(std::move(name)), var_(Var<T>::leaf(std::move(init), true)) {}
    Parameter(const Parameter&) = delete;
    Parameter& operator=(const Parameter&) = delete;
    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;

    const std::string& name() const { return name_; }
    const Var<T>& var() const { return var_; }
    Tensor<T>& value() { return var_.mutable_value(); }
    const Tensor<T>& value() const { return var_.value(); }
    Tensor<T>& grad() { return var_.node().ensure_grad(); }
    void zero_grad() { var_.zero_grad(); }

private:
    std::string name_;
    Var<T> var_;
};

template <class T>
using ParamRefs = std::vector<Parameter<T>*>;

enum class Init { uniform, zeros };

namespace detail {
template <class T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = T(dist(rng));
    return t;
}
}  // namespace detail

/// Fully connected layer, weights [out, in].
template <class T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, Init init = Init::uniform)
        : in_(in), out_(out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        if (init == Init::zeros) {
            weight_ = Parameter<T>(name + ".weight", Tensor<T>({out, in}));
            bias_ = Parameter<T>(name + ".bias", Tensor<T>({out}));
        } else {
            weight_ = Parameter<T>(name + ".weight", detail::uniform_tensor<T>({out, in}, bound, rng));
            bias_ = Parameter<T>(name + ".bias", detail::uniform_tensor<T>({out}, bound, rng));
        }
    }

    Var<T> operator()(const Var<T>& x) const { return linear(x, weight_.var(), bias_.var()); }

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    void collect(ParamRefs<T>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    std::size_t in_ = 0, out_ = 0;
    Parameter<T> weight_, bias_;
};

/// Square-kernel convolution, weights [out, in, k, k].
template <class T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
           std::size_t pad, Rng& rng)
        : in_(in), out_(out), stride_(stride), pad_(pad) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
        weight_ = Parameter<T>(name + ".weight", detail::uniform_tensor<T>({out, in, kernel, kernel}, bound, rng));
        bias_ = Parameter<T>(name + ".bias", detail::uniform_tensor<T>({out}, bound, rng));
    }

    Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight_.var(), bias_.var(), stride_, pad_); }

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    Parameter<T>& weight() { return weight_; }
    Parameter<T>& bias() { return bias_; }
    void collect(ParamRefs<T>& out) {
        out.push_back(&weight_);
        out.push_back(&bias_);
    }

private:
    std::size_t in_ = 0, out_ = 0, stride_ = 1, pad_ = 0;
    Parameter<T> weight_, bias_;
};

/// One-hidden-layer perceptron with leaky-rectifier hidden activation.
template <class T>
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
        Init init = Init::uniform, Init last = Init::uniform)
        : fc1_(name + ".fc1", in, hidden, rng, init), fc2_(name + ".fc2", hidden, out, rng, last) {}

    Var<T> operator()(const Var<T>& x) const { return fc2_(leaky_relu(fc1_(x), 0.2)); }

    Linear<T>& first() { return fc1_; }
    Linear<T>& last() { return fc2_; }
    std::size_t in_features() const { return fc1_.in_features(); }
    void collect(ParamRefs<T>& out) {
        fc1_.collect(out);
        fc2_.collect(out);
    }

private:
    Linear<T> fc1_, fc2_;
};

template <class T>
struct LstmGates {
    Var<T> input, forget, output, candidate;
};

/// LSTM cell: one affine map of [x; h] supplies four gate slices in the
/// order input, forget, output, candidate.
template <class T>
class LstmCell {
public:
    LstmCell() = default;
    LstmCell(const std::string& name, std::size_t input_width, std::size_t hidden, Rng& rng,
             Init init = Init::uniform)
        : input_(input_width), hidden_(hidden), transform_(name + ".transform", input_width + hidden, 4 * hidden, rng, init) {}

    struct Output {
        Var<T> h, c;
        LstmGates<T> gates;
    };

    Output step(const Var<T>& x, const Var<T>& h, const Var<T>& c) const {
        if (x.value().rank() != 2 || x.dim(1) != input_)
            throw InvalidInput("lstm input width " + shape_string(x.shape()) + ", expected " + std::to_string(input_));
        if (h.shape() != c.shape() || h.value().rank() != 2 || h.dim(1) != hidden_ || h.dim(0) != x.dim(0))
            throw InvalidInput("lstm state shape " + shape_string(h.shape()) + "/" + shape_string(c.shape()) +
                               ", expected width " + std::to_string(hidden_));
        Var<T> pre = transform_(concat<T>({x, h}, 1));
        LstmGates<T> g{sigmoid(slice(pre, 1, 0, hidden_)), sigmoid(slice(pre, 1, hidden_, 2 * hidden_)),
                       sigmoid(slice(pre, 1, 2 * hidden_, 3 * hidden_)), tanh(slice(pre, 1, 3 * hidden_, 4 * hidden_))};
        Var<T> c_next = add(mul(g.forget, c), mul(g.input, g.candidate));
        Var<T> h_next = mul(g.output, tanh(c_next));
        return {h_next, c_next, g};
    }

    std::size_t input_width() const { return input_; }
    std::size_t hidden_width() const { return hidden_; }
    Linear<T>& transform() { return transform_; }
    void collect(ParamRefs<T>& out) { transform_.collect(out); }

private:
    std::size_t input_ = 0, hidden_ = 0;
    Linear<T> transform_;
};

template <class T>
void zero_grads(const ParamRefs<T>& ps) {
    for (auto* p : ps) p->zero_grad();
}

template <class T>
std::size_t parameter_count(const ParamRefs<T>& ps) {
    std::size_t n = 0;
    for (auto* p : ps) n += p->value().size();
    return n;
}

/// Copies values between parameter lists of matching layout (any scalar kinds).
template <class To, class From>
void copy_parameters(const ParamRefs<From>& src, const ParamRefs<To>& dst) {
    RATGAN_REQUIRE(src.size() == dst.size(), "copy_parameters: layout mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
        const auto& s = src[i]->value();
        auto& d = dst[i]->value();
        RATGAN_REQUIRE(s.shape() == d.shape(), "copy_parameters: shape mismatch at " + src[i]->name());
        for (std::size_t k = 0; k < s.size(); ++k) d[k] = scalar_cast<To>(s[k]);
    }
}

/// Rescales every convolution kernel (rank-4 parameter) not named in `keep`
/// from the default uniform(+-1/sqrt(fan_in)) to He-uniform, which keeps
/// activation variance roughly constant through rectifier stacks.
template <class T>
void he_scale_kernels(const ParamRefs<T>& ps, const std::vector<std::string>& keep = {}) {
    const double gain = std::sqrt(6.0);
    for (auto* p : ps) {
        if (p->value().rank() != 4 || std::find(keep.begin(), keep.end(), p->name()) != keep.end()) continue;
        for (auto& w : p->value().values()) w = w * T(gain);
    }
}

/// FNV-1a over the raw bytes of every parameter.
template <class T>
std::uint64_t parameter_hash(const ParamRefs<T>& ps) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto* p : ps) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value().data());
        for (std::size_t i = 0; i < p->value().size() * sizeof(T); ++i) h = (h ^ bytes[i]) * 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ratgan
