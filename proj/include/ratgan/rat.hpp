#pragma once

// Recurrent affine transformation: one LSTM controller threaded through every
// fusion point, with per-layer heads turning its hidden state into channel-wise
// scale and shift.

#include <ostream>
#include <string>
#include <vector>

#include "ratgan/module.hpp"
#include "ratgan/serialize.hpp"

namespace ratgan {

template <class T>
struct ControllerState {
    Var<T> h, c;            // [N, D_hid]
    std::size_t steps = 0;  // controller steps taken since initialization
};

template <class T>
struct AffineParams {
    Var<T> gamma, beta;  // [N, C]
};

/// out[n, c, y, x] = gamma[n, c] * fm[n, c, y, x] + beta[n, c].
template <class T>
Var<T> affine_transform(const Var<T>& fm, const AffineParams<T>& p) {
    return channel_affine(fm, p.gamma, p.beta);
}

/// Gate activations of sample 0 at each controller step.
struct GateTrace {
    struct Step {
        std::vector<double> input, forget, output;
    };
    std::vector<Step> steps;

    template <class T>
    void record(const LstmGates<T>& g) {
        auto row0 = [](const Var<T>& v) {
            std::vector<double> out(v.dim(1));
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = primal(v.value().at(0, j));
            return out;
        };
        steps.push_back({row0(g.input), row0(g.forget), row0(g.output)});
    }
};

/// One JSON line {step, gate_kind, channel, value} per channel for the input
/// and output gates of every recorded step.
inline void log_gate_activations(const GateTrace* trace, std::ostream& sink) {
    if (!trace) return;
    for (std::size_t t = 0; t < trace->steps.size(); ++t)
        for (const auto& [kind, values] : {std::pair<const char*, const std::vector<double>*>{"input", &trace->steps[t].input},
                                           {"output", &trace->steps[t].output}})
            for (std::size_t ch = 0; ch < values->size(); ++ch)
                sink << Json{{"step", t}, {"gate_kind", kind}, {"channel", ch}, {"value", (*values)[ch]}}.dump() << '\n';
}

/// Noise-initialized LSTM whose input at every step is the sentence embedding.
template <class T>
class Controller {
public:
    Controller() = default;
    Controller(const std::string& name, std::size_t noise_width, std::size_t hidden_width, std::size_t sentence_width,
               Rng& rng, Init init = Init::uniform)
        : noise_(noise_width),
          init_h_(name + ".init_h", noise_width, hidden_width, hidden_width, rng, init, init),
          init_c_(name + ".init_c", noise_width, hidden_width, hidden_width, rng, init, init),
          cell_(name + ".cell", sentence_width, hidden_width, rng, init) {}

    /// (h0, c0) = (MLP3(z), MLP4(z)).
    ControllerState<T> init(const Var<T>& z) const {
        if (z.value().rank() != 2 || z.dim(1) != noise_)
            throw InvalidInput("controller noise has shape " + shape_string(z.shape()) + ", expected width " +
                               std::to_string(noise_));
        return {init_h_(z), init_c_(z), 0};
    }

    /// Gates from the affine map of [s; h_prev]; c = f*c_prev + i*u, h = o*tanh(c).
    ControllerState<T> step(const ControllerState<T>& state, const Var<T>& s, GateTrace* trace = nullptr) const {
        auto out = cell_.step(s, state.h, state.c);
        if (trace) trace->record(out.gates);
        return {out.h, out.c, state.steps + 1};
    }

    /// Like step(), also returning the gate activations.
    std::pair<ControllerState<T>, LstmGates<T>> step_with_gates(const ControllerState<T>& state, const Var<T>& s) const {
        auto out = cell_.step(s, state.h, state.c);
        return {{out.h, out.c, state.steps + 1}, out.gates};
    }

    std::size_t noise_width() const { return noise_; }
    std::size_t hidden_width() const { return cell_.hidden_width(); }
    std::size_t sentence_width() const { return cell_.input_width(); }
    LstmCell<T>& cell() { return cell_; }
    Mlp<T>& init_h() { return init_h_; }
    Mlp<T>& init_c() { return init_c_; }

    void collect(ParamRefs<T>& out) {
        init_h_.collect(out);
        init_c_.collect(out);
        cell_.collect(out);
    }

private:
    std::size_t noise_ = 0;
    Mlp<T> init_h_, init_c_;
    LstmCell<T> cell_;
};

/// identity: zero output weights with gamma bias 1 and beta bias 0, so every
/// affine layer starts as the identity map.
enum class HeadInit { identity, random, zeros };

inline HeadInit parse_head_init(const std::string& s) {
    if (s == "identity") return HeadInit::identity;
    if (s == "random") return HeadInit::random;
    if (s == "zeros") return HeadInit::zeros;
    throw InvalidConfig("unknown head init '" + s + "'");
}

/// Registry of per-layer (gamma, beta) heads, each a pair of one-hidden-layer
/// perceptrons with hidden width equal to the layer's channel count.
template <class T>
class AffineHeads {
public:
    AffineHeads() = default;
    explicit AffineHeads(std::string name, std::size_t input_width) : name_(std::move(name)), input_(input_width) {}

    std::size_t register_layer(std::size_t channels, Rng& rng, HeadInit init = HeadInit::identity) {
        const std::size_t idx = gamma_.size();
        const std::string base = name_ + "." + std::to_string(idx);
        const Init first = init == HeadInit::zeros ? Init::zeros : Init::uniform;
        const Init last = init == HeadInit::random ? Init::uniform : Init::zeros;
        gamma_.emplace_back(base + ".gamma", input_, channels, channels, rng, first, last);
        beta_.emplace_back(base + ".beta", input_, channels, channels, rng, first, last);
        if (init == HeadInit::identity) gamma_.back().last().bias().value().fill(T(1));
        channels_.push_back(channels);
        return idx;
    }

    AffineParams<T> predict(const Var<T>& h, std::size_t layer) const {
        if (layer >= gamma_.size())
            throw InvalidInput("affine head " + std::to_string(layer) + " is not registered (" +
                               std::to_string(gamma_.size()) + " heads)");
        if (h.value().rank() != 2 || h.dim(1) != input_)
            throw InvalidInput("affine head input has shape " + shape_string(h.shape()) + ", expected width " +
                               std::to_string(input_));
        return {gamma_[layer](h), beta_[layer](h)};
    }

    std::size_t size() const { return gamma_.size(); }
    std::size_t channels(std::size_t layer) const { return channels_.at(layer); }
    std::size_t input_width() const { return input_; }
    Mlp<T>& gamma_head(std::size_t layer) { return gamma_.at(layer); }
    Mlp<T>& beta_head(std::size_t layer) { return beta_.at(layer); }

    void collect(ParamRefs<T>& out) {
        for (std::size_t i = 0; i < gamma_.size(); ++i) {
            gamma_[i].collect(out);
            beta_[i].collect(out);
        }
    }

private:
    std::string name_;
    std::size_t input_ = 0;
    std::vector<Mlp<T>> gamma_, beta_;
    std::vector<std::size_t> channels_;
};

/// (gamma, beta) of one registered layer from a hidden state.
template <class T>
AffineParams<T> predict_affine_params(const AffineHeads<T>& heads, const Var<T>& h, std::size_t layer) {
    return heads.predict(h, layer);
}

struct RATBlockConfig {
    std::size_t channels = 64;
    std::size_t sub_units = 2;
    std::size_t hidden_width = 64;
    std::size_t sentence_width = 64;
    std::size_t kernel = 3;

    void validate() const {
        if (sub_units < 1) throw InvalidConfig("a RAT block needs at least one sub-unit");
        if (channels < 1 || hidden_width < 1 || sentence_width < 1) throw InvalidConfig("RAT block widths must be positive");
        if (kernel % 2 == 0) throw InvalidConfig("RAT block kernel must be odd");
    }
};

/// A stack of affine -> convolution -> leaky-rectifier sub-units.  Each
/// sub-unit owns one registered affine head.
template <class T>
class RATBlock {
public:
    RATBlock() = default;
    RATBlock(const std::string& name, const RATBlockConfig& cfg, AffineHeads<T>& heads, Rng& rng,
             HeadInit init = HeadInit::identity)
        : cfg_(cfg) {
        cfg_.validate();
        for (std::size_t u = 0; u < cfg.sub_units; ++u) {
            layers_.push_back(heads.register_layer(cfg.channels, rng, init));
            convs_.emplace_back(name + ".conv" + std::to_string(u), cfg.channels, cfg.channels, cfg.kernel, 1,
                                cfg.kernel / 2, rng);
        }
    }

    /// Applies the sub-units; `next_params(layer)` supplies each layer's (gamma, beta).
    template <class ParamSource>
    Var<T> apply(Var<T> fm, ParamSource&& next_params) const {
        if (fm.value().rank() != 4 || fm.dim(1) != cfg_.channels)
            throw InvalidInput("RAT block expects " + std::to_string(cfg_.channels) + " channels, got " +
                               shape_string(fm.shape()));
        for (std::size_t u = 0; u < layers_.size(); ++u)
            fm = leaky_relu(convs_[u](affine_transform(fm, next_params(layers_[u]))), 0.2);
        return fm;
    }

    const RATBlockConfig& config() const { return cfg_; }
    const std::vector<std::size_t>& layers() const { return layers_; }
    Conv2d<T>& conv(std::size_t u) { return convs_.at(u); }

    void collect(ParamRefs<T>& out) {
        for (auto& c : convs_) c.collect(out);
    }

private:
    RATBlockConfig cfg_;
    std::vector<std::size_t> layers_;
    std::vector<Conv2d<T>> convs_;
};

template <class T>
struct RATBlockOutput {
    Var<T> fm;
    ControllerState<T> state;
};

/// Per sub-unit: advance the controller on s, predict (gamma, beta) from the
/// new hidden state, then affine -> conv -> leaky rectifier.  The advanced
/// state is returned for the next block.
template <class T>
RATBlockOutput<T> rat_block_forward(const RATBlock<T>& block, const Var<T>& fm, ControllerState<T> state,
                                    const Var<T>& s, const Controller<T>& controller, const AffineHeads<T>& heads,
                                    GateTrace* trace = nullptr) {
    Var<T> out = block.apply(fm, [&](std::size_t layer) {
        state = controller.step(state, s, trace);
        return heads.predict(state.h, layer);
    });
    return {out, state};
}

}  // namespace ratgan
