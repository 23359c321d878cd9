#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ratgan/serialize.hpp"

namespace ratgan {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(ParamRefs<T> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        if (!(cfg_.lr > 0.0)) throw InvalidConfig("learning rate must be positive");
        for (auto* p : params_) {
            m_.emplace_back(p->value().shape());
            v_.emplace_back(p->value().shape());
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& w = params_[k]->value();
            const auto& g = params_[k]->grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
                const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                const double mh = bc1 > 0.0 ? mi / bc1 : mi;
                w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * mh / (std::sqrt(vi / bc2) + cfg_.eps));
            }
        }
    }

    void zero_grad() { zero_grads(params_); }

    const AdamConfig& config() const { return cfg_; }
    std::uint64_t steps() const { return t_; }
    void set_steps(std::uint64_t t) { t_ = t; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const ParamRefs<T>& parameters() const { return params_; }

private:
    ParamRefs<T> params_;
    AdamConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::uint64_t t_ = 0;
};

template <class T>
void store_optimizer(Container& c, const std::string& prefix, Adam<T>& opt) {
    c.meta()[prefix + ".steps"] = opt.steps();
    const auto& ps = opt.parameters();
    for (std::size_t k = 0; k < ps.size(); ++k) {
        c.put(prefix + ".m." + ps[k]->name(), opt.first_moments()[k]);
        c.put(prefix + ".v." + ps[k]->name(), opt.second_moments()[k]);
    }
}

template <class T>
void restore_optimizer(const Container& c, const std::string& prefix, Adam<T>& opt) {
    try {
        opt.set_steps(c.meta().at(prefix + ".steps").get<std::uint64_t>());
    } catch (const Json::exception&) {
        throw ParseError("checkpoint lacks optimizer '" + prefix + "'");
    }
    const auto& ps = opt.parameters();
    for (std::size_t k = 0; k < ps.size(); ++k) {
        auto m = c.get<T>(prefix + ".m." + ps[k]->name());
        auto v = c.get<T>(prefix + ".v." + ps[k]->name());
        if (m.shape() != ps[k]->value().shape() || v.shape() != ps[k]->value().shape())
            throw ParseError("optimizer state shape mismatch for " + ps[k]->name());
        opt.first_moments()[k] = std::move(m);
        opt.second_moments()[k] = std::move(v);
    }
}

}  // namespace ratgan
