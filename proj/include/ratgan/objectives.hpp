#pragma once

// Matching-aware hinge loss for the discriminator, the matching-aware
// gradient penalty, and the generator's adversarial loss.

#include <cmath>
#include <span>
#include <vector>

#include "ratgan/module.hpp"
#include "ratgan/serialize.hpp"

namespace ratgan {

struct LossBreakdown {
    double real_match = 0;
    double fake_match = 0;
    double real_mismatch = 0;
    double gradient_penalty = 0;
    double total = 0;

    bool finite() const {
        return std::isfinite(real_match) && std::isfinite(fake_match) && std::isfinite(real_mismatch) &&
               std::isfinite(gradient_penalty) && std::isfinite(total);
    }

    Json to_json() const {
        return {{"real_match", real_match},
                {"fake_match", fake_match},
                {"real_mismatch", real_mismatch},
                {"gradient_penalty", gradient_penalty},
                {"total", total}};
    }
};

namespace detail {
inline double mean_hinge(std::span<const double> scores, double sign) {
    if (scores.empty()) throw InvalidInput("hinge loss of an empty score batch");
    double acc = 0;
    for (double v : scores) acc += std::max(0.0, 1.0 + sign * v);
    return acc / static_cast<double>(scores.size());
}
}  // namespace detail

/// E[max(0, 1 - r)] + 1/2 E[max(0, 1 + f)] + 1/2 E[max(0, 1 + m)]; penalty left at 0.
inline LossBreakdown d_hinge_loss(std::span<const double> real_match, std::span<const double> fake_match,
                                  std::span<const double> real_mismatch) {
    LossBreakdown b;
    b.real_match = detail::mean_hinge(real_match, -1.0);
    b.fake_match = 0.5 * detail::mean_hinge(fake_match, 1.0);
    b.real_mismatch = 0.5 * detail::mean_hinge(real_mismatch, 1.0);
    b.total = b.real_match + b.fake_match + b.real_mismatch;
    return b;
}

template <class T>
struct HingeTerms {
    Var<T> real_match, fake_match, real_mismatch, total;

    LossBreakdown breakdown() const {
        LossBreakdown b;
        b.real_match = primal(real_match.value()[0]);
        b.fake_match = primal(fake_match.value()[0]);
        b.real_mismatch = primal(real_mismatch.value()[0]);
        b.total = primal(total.value()[0]);
        return b;
    }
};

/// Differentiable version of d_hinge_loss over score batches [N].
template <class T>
HingeTerms<T> d_hinge_terms(const Var<T>& real_match, const Var<T>& fake_match, const Var<T>& real_mismatch) {
    for (const auto* v : {&real_match, &fake_match, &real_mismatch})
        if (v->value().empty()) throw InvalidInput("hinge loss of an empty score batch");
    HingeTerms<T> h;
    h.real_match = mean(relu(add_scalar(neg(real_match), 1.0)));
    h.fake_match = scale(mean(relu(add_scalar(fake_match, 1.0))), 0.5);
    h.real_mismatch = scale(mean(relu(add_scalar(real_mismatch, 1.0))), 0.5);
    h.total = add(add(h.real_match, h.fake_match), h.real_mismatch);
    return h;
}

/// -E[D(x_hat, s)].
inline double g_adv_loss(std::span<const double> fake_match) {
    if (fake_match.empty()) throw InvalidInput("generator loss of an empty score batch");
    double acc = 0;
    for (double v : fake_match) acc += v;
    return -acc / static_cast<double>(fake_match.size());
}

template <class T>
Var<T> g_adv_loss(const Var<T>& fake_match) {
    if (fake_match.value().empty()) throw InvalidInput("generator loss of an empty score batch");
    return neg(mean(fake_match));
}

/// Index i receives caption (i + 1) mod n, so no sample keeps its own caption.
inline std::vector<std::size_t> sample_mismatched_captions(const std::vector<std::size_t>& indices) {
    const std::size_t n = indices.size();
    if (n < 2) throw InvalidInput("mismatched captions need a batch of at least 2, got " + std::to_string(n));
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = indices[(i + 1) % n];
    return out;
}

struct PenaltyConfig {
    double weight = 2.0;  // k
    double power = 6.0;   // p

    void validate() const {
        if (!(weight >= 0) || !std::isfinite(weight)) throw InvalidConfig("gradient penalty weight must be >= 0");
        if (!(power >= 1) || !std::isfinite(power)) throw InvalidConfig("gradient penalty power must be >= 1");
    }
    Json to_json() const { return {{"weight", weight}, {"power", power}}; }
    static PenaltyConfig from_json(const Json& j) {
        PenaltyConfig c;
        c.weight = j.value("weight", c.weight);
        c.power = j.value("power", c.power);
        return c;
    }
};

/// Penalty value and its derivative with respect to the input gradients.
template <class T>
struct PenaltyEvaluation {
    double value = 0;
    std::vector<double> grad_x_norms, grad_s_norms;  // per sample
    Tensor<T> tangent_x, tangent_s;                  // d penalty / d grad_x, d grad_s
};

/// k/N sum_i (|grad_x D_i| + |grad_s D_i|)^p for a per-sample scorer
/// `d(x, s) -> [N]`.  Sample i's score may depend only on (x_i, s_i).
template <class T, class Disc>
PenaltyEvaluation<T> evaluate_penalty(Disc&& d, const Tensor<T>& x, const Tensor<T>& s,
                                      const PenaltyConfig& cfg = {}) {
    cfg.validate();
    const std::size_t n = x.empty() ? 0 : x.dim(0);
    if (n == 0 || s.rank() != 2 || s.dim(0) != n)
        throw InvalidInput("gradient penalty needs matching nonempty image and sentence batches, got " +
                           shape_string(x.shape()) + " and " + shape_string(s.shape()));
    EnableGradGuard eg;
    Var<T> xv = Var<T>::leaf(x), sv = Var<T>::leaf(s);
    Var<T> scores = d(xv, sv);
    if (scores.value().size() != n) throw InvalidInput("discriminator returned " + shape_string(scores.shape()));
    backward(sum(scores));
    const Tensor<T> gx = xv.grad(), gs = sv.grad();
    const std::size_t wx = x.size() / n, ws = s.dim(1);

    PenaltyEvaluation<T> pe;
    pe.tangent_x = Tensor<T>(x.shape());
    pe.tangent_s = Tensor<T>(s.shape());
    const double k = cfg.weight / static_cast<double>(n), p = cfg.power;
    for (std::size_t i = 0; i < n; ++i) {
        double a = 0, b = 0;
        for (std::size_t j = 0; j < wx; ++j) a += primal(gx[i * wx + j]) * primal(gx[i * wx + j]);
        for (std::size_t j = 0; j < ws; ++j) b += primal(gs[i * ws + j]) * primal(gs[i * ws + j]);
        a = std::sqrt(a);
        b = std::sqrt(b);
        pe.grad_x_norms.push_back(a);
        pe.grad_s_norms.push_back(b);
        const double total = a + b;
        pe.value += k * std::pow(total, p);
        if (total == 0) continue;
        const double outer = k * p * std::pow(total, p - 1);
        if (a > 0)
            for (std::size_t j = 0; j < wx; ++j) pe.tangent_x[i * wx + j] = T(outer * primal(gx[i * wx + j]) / a);
        if (b > 0)
            for (std::size_t j = 0; j < ws; ++j) pe.tangent_s[i * ws + j] = T(outer * primal(gs[i * ws + j]) / b);
    }
    if (!std::isfinite(pe.value)) throw NumericError("gradient penalty is not finite");
    return pe;
}

template <class T, class Disc>
double ma_gp_penalty(Disc&& d, const Tensor<T>& x, const Tensor<T>& s, const PenaltyConfig& cfg = {}) {
    return evaluate_penalty(std::forward<Disc>(d), x, s, cfg).value;
}

/// Adds d penalty / d theta into `params` grads.  `dual_d` is the same
/// discriminator over dual numbers with parameters `dual_params` holding the
/// current values; a reverse pass seeded at inputs with tangents equal to
/// the penalty's input-gradient derivatives yields the mixed second
/// derivative in the tangent part of the parameter gradients.
template <class T, class DualDisc>
void accumulate_penalty_gradient(DualDisc&& dual_d, const ParamRefs<Dual<T>>& dual_params, const ParamRefs<T>& params,
                                 const Tensor<T>& x, const Tensor<T>& s, const PenaltyEvaluation<T>& pe) {
    RATGAN_REQUIRE(dual_params.size() == params.size(), "penalty gradient: parameter layout mismatch");
    using D = Dual<T>;
    Tensor<D> xd(x.shape()), sd(s.shape());
    for (std::size_t i = 0; i < x.size(); ++i) xd[i] = D(x[i], pe.tangent_x[i]);
    for (std::size_t i = 0; i < s.size(); ++i) sd[i] = D(s[i], pe.tangent_s[i]);
    zero_grads(dual_params);
    EnableGradGuard eg;
    backward(sum(dual_d(Var<D>::constant(std::move(xd)), Var<D>::constant(std::move(sd)))));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& g = params[k]->grad();
        const auto& gd = dual_params[k]->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gd[i].d;
    }
}

}  // namespace ratgan
