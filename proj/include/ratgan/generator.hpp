#pragma once

// One-stage generator: noise seeds a 4x4 feature map and the controller;
// each up-sample block is followed by a RAT block; a 3-channel convolution
// and tanh produce the image.

#include <algorithm>
#include <memory>
#include <string>
#include <vector>

#include "ratgan/rat.hpp"

namespace ratgan {

/// How fusion parameters are produced: the recurrent controller (rat), the
/// same with one sub-unit per block (shallow), or isolated per-layer
/// perceptrons on [z; s] (stacked_mlp).
enum class Conditioning { rat, shallow, stacked_mlp };

inline std::string to_string(Conditioning c) {
    switch (c) {
        case Conditioning::rat: return "rat";
        case Conditioning::shallow: return "shallow";
        case Conditioning::stacked_mlp: return "stacked_mlp";
    }
    return "?";
}

inline Conditioning parse_conditioning(const std::string& s) {
    if (s == "rat") return Conditioning::rat;
    if (s == "shallow") return Conditioning::shallow;
    if (s == "stacked_mlp") return Conditioning::stacked_mlp;
    throw InvalidConfig("unknown conditioning / ablation '" + s + "' (expected rat, shallow or stacked_mlp)");
}

struct GeneratorConfig {
    std::size_t noise_width = 100;
    std::size_t block_count = 6;
    std::size_t base_channels = 512;
    std::size_t channel_floor = 32;
    std::size_t init_resolution = 4;
    std::size_t sentence_width = 256;
    std::size_t hidden_width = 256;
    std::size_t sub_units = 2;
    Conditioning conditioning = Conditioning::rat;
    HeadInit head_init = HeadInit::identity;

    std::size_t output_resolution() const { return init_resolution << block_count; }

    /// Channels after up-sample block i: base halved per block, never below the floor.
    std::size_t block_channels(std::size_t i) const {
        return std::max(channel_floor, base_channels >> std::min<std::size_t>(i, 62));
    }

    std::size_t effective_sub_units() const { return conditioning == Conditioning::shallow ? 1 : sub_units; }
    std::size_t affine_layer_count() const { return block_count * effective_sub_units(); }

    void validate() const {
        if (noise_width < 1) throw InvalidConfig("noise width must be at least 1");
        if (block_count < 1) throw InvalidConfig("generator needs at least one up-sample block");
        if (base_channels < 1 || channel_floor < 1) throw InvalidConfig("generator channel counts must be positive");
        if (init_resolution < 1) throw InvalidConfig("initial resolution must be positive");
        if (sentence_width < 1 || hidden_width < 1) throw InvalidConfig("generator widths must be positive");
        if (sub_units < 1) throw InvalidConfig("RAT blocks need at least one sub-unit");
    }

    Json to_json() const {
        return {{"noise_width", noise_width},       {"block_count", block_count},
                {"base_channels", base_channels},   {"channel_floor", channel_floor},
                {"init_resolution", init_resolution}, {"sentence_width", sentence_width},
                {"hidden_width", hidden_width},     {"sub_units", sub_units},
                {"conditioning", to_string(conditioning)},
                {"head_init", head_init == HeadInit::identity ? "identity"
                                                              : head_init == HeadInit::random ? "random" : "zeros"}};
    }

    static GeneratorConfig from_json(const Json& j) {
        GeneratorConfig c;
        c.noise_width = j.value("noise_width", c.noise_width);
        c.block_count = j.value("block_count", c.block_count);
        c.base_channels = j.value("base_channels", c.base_channels);
        c.channel_floor = j.value("channel_floor", c.channel_floor);
        c.init_resolution = j.value("init_resolution", c.init_resolution);
        c.sentence_width = j.value("sentence_width", c.sentence_width);
        c.hidden_width = j.value("hidden_width", c.hidden_width);
        c.sub_units = j.value("sub_units", c.sub_units);
        c.conditioning = parse_conditioning(j.value("conditioning", std::string("rat")));
        c.head_init = parse_head_init(j.value("head_init", std::string("identity")));
        return c;
    }

    static GeneratorConfig full() { return {}; }

    static GeneratorConfig desk() {
        GeneratorConfig c;
        c.noise_width = 16;
        c.block_count = 4;
        c.base_channels = 64;
        c.channel_floor = 16;
        c.sentence_width = 64;
        c.hidden_width = 64;
        return c;
    }
};

/// Nearest x2 -> 3x3 conv -> leaky rectifier, plus a residual path (1x1
/// convolution when the channel count changes).
template <class T>
class UpsampleBlock {
public:
    UpsampleBlock() = default;
    UpsampleBlock(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
        : in_(in), conv_(name + ".conv", in, out, 3, 1, 1, rng) {
        if (in != out) skip_ = std::make_unique<Conv2d<T>>(name + ".skip", in, out, 1, 1, 0, rng);
    }

    Var<T> operator()(const Var<T>& fm) const {
        if (fm.value().rank() != 4 || fm.dim(1) != in_)
            throw InvalidInput("up-sample block expects " + std::to_string(in_) + " channels, got " +
                               shape_string(fm.shape()));
        Var<T> up = upsample_nearest(fm, 2);
        Var<T> main = leaky_relu(conv_(up), 0.2);
        return add(main, skip_ ? (*skip_)(up) : up);
    }

    void collect(ParamRefs<T>& out) {
        conv_.collect(out);
        if (skip_) skip_->collect(out);
    }

private:
    std::size_t in_ = 0;
    Conv2d<T> conv_;
    std::unique_ptr<Conv2d<T>> skip_;
};

template <class T>
class Generator {
public:
    explicit Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t r0 = cfg.init_resolution;
        seed_ = Linear<T>("g.seed", cfg.noise_width, cfg.base_channels * r0 * r0, rng);
        const bool isolated = cfg.conditioning == Conditioning::stacked_mlp;
        if (!isolated) controller_ = Controller<T>("g.controller", cfg.noise_width, cfg.hidden_width, cfg.sentence_width, rng);
        heads_ = AffineHeads<T>("g.heads", isolated ? cfg.noise_width + cfg.sentence_width : cfg.hidden_width);
        std::size_t ch = cfg.base_channels;
        for (std::size_t i = 0; i < cfg.block_count; ++i) {
            const std::size_t out = cfg.block_channels(i);
            ups_.emplace_back("g.up" + std::to_string(i), ch, out, rng);
            RATBlockConfig bc{out, cfg.effective_sub_units(), cfg.hidden_width, cfg.sentence_width, 3};
            rats_.emplace_back("g.rat" + std::to_string(i), bc, heads_, rng, cfg.head_init);
            ch = out;
        }
        to_rgb_ = Conv2d<T>("g.to_rgb", ch, 3, 3, 1, 1, rng);
        he_scale_kernels(parameters(), {"g.to_rgb.weight"});
    }

    Generator(const Generator&) = delete;
    Generator& operator=(const Generator&) = delete;

    const GeneratorConfig& config() const { return cfg_; }

    /// Linear projection of z reshaped to [N, base, r0, r0].
    Var<T> seed_feature_map(const Var<T>& z) const {
        check_noise(z);
        const std::size_t r0 = cfg_.init_resolution;
        return reshape(seed_(z), {z.dim(0), cfg_.base_channels, r0, r0});
    }

    Var<T> upsample_block(std::size_t i, const Var<T>& fm) const { return ups_.at(i)(fm); }

    struct Output {
        Var<T> image;                   // [N, 3, R, R]
        std::size_t controller_steps;  // total recurrent steps taken
    };

    /// Image [N, 3, R, R] for noise z [N, noise] and sentences s [N, d].
    Output forward(const Var<T>& z, const Var<T>& s, GateTrace* trace = nullptr) const {
        check_noise(z);
        if (s.value().rank() != 2 || s.dim(1) != cfg_.sentence_width || s.dim(0) != z.dim(0))
            throw InvalidInput("generator sentence input has shape " + shape_string(s.shape()) + ", expected [" +
                               std::to_string(z.dim(0)) + "," + std::to_string(cfg_.sentence_width) + "]");
        Var<T> fm = seed_feature_map(z);
        if (cfg_.conditioning == Conditioning::stacked_mlp) {
            Var<T> zs = concat<T>({z, s}, 1);
            for (std::size_t i = 0; i < ups_.size(); ++i)
                fm = rats_[i].apply(ups_[i](fm), [&](std::size_t layer) { return heads_.predict(zs, layer); });
            return {tanh(to_rgb_(fm)), 0};
        }
        ControllerState<T> state = controller_.init(z);
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            auto out = rat_block_forward(rats_[i], ups_[i](fm), state, s, controller_, heads_, trace);
            fm = out.fm;
            state = out.state;
        }
        if (state.steps != cfg_.affine_layer_count())
            throw std::logic_error("controller took " + std::to_string(state.steps) + " steps, expected " +
                                   std::to_string(cfg_.affine_layer_count()));
        return {tanh(to_rgb_(fm)), state.steps};
    }

    Var<T> operator()(const Var<T>& z, const Var<T>& s, GateTrace* trace = nullptr) const {
        return forward(z, s, trace).image;
    }

    /// (gamma, beta) of every affine layer in order, for probing layer independence.
    std::vector<AffineParams<T>> affine_parameters(const Var<T>& z, const Var<T>& s) const {
        std::vector<AffineParams<T>> out;
        if (cfg_.conditioning == Conditioning::stacked_mlp) {
            Var<T> zs = concat<T>({z, s}, 1);
            for (std::size_t l = 0; l < heads_.size(); ++l) out.push_back(heads_.predict(zs, l));
            return out;
        }
        ControllerState<T> state = controller_.init(z);
        for (std::size_t l = 0; l < heads_.size(); ++l) {
            state = controller_.step(state, s);
            out.push_back(heads_.predict(state.h, l));
        }
        return out;
    }

    ParamRefs<T> parameters() {
        ParamRefs<T> p;
        seed_.collect(p);
        collect_controller(p);
        heads_.collect(p);
        for (std::size_t i = 0; i < ups_.size(); ++i) {
            ups_[i].collect(p);
            rats_[i].collect(p);
        }
        to_rgb_.collect(p);
        return p;
    }

    ParamRefs<T> controller_parameters() {
        ParamRefs<T> p;
        collect_controller(p);
        return p;
    }

    Linear<T>& seed() { return seed_; }
    AffineHeads<T>& heads() { return heads_; }
    Controller<T>& controller() { return controller_; }

private:
    void check_noise(const Var<T>& z) const {
        if (z.value().rank() != 2 || z.dim(1) != cfg_.noise_width)
            throw InvalidInput("generator noise has shape " + shape_string(z.shape()) + ", expected width " +
                               std::to_string(cfg_.noise_width));
    }

    void collect_controller(ParamRefs<T>& p) {
        if (cfg_.conditioning != Conditioning::stacked_mlp) controller_.collect(p);
    }

    GeneratorConfig cfg_;
    Linear<T> seed_;
    Controller<T> controller_;
    AffineHeads<T> heads_;
    std::vector<UpsampleBlock<T>> ups_;
    std::vector<RATBlock<T>> rats_;
    Conv2d<T> to_rgb_;
};

/// Generator image for given noise and sentence embeddings, without a graph.
template <class T>
Tensor<T> synthesize(const Generator<T>& g, const Tensor<T>& z, const Tensor<T>& s) {
    NoGradGuard ng;
    return g(Var<T>::constant(z), Var<T>::constant(s)).value();
}

/// Standard normal noise [n, width].
template <class T>
Tensor<T> sample_noise(std::size_t n, std::size_t width, Rng& rng) {
    Tensor<T> z({n, width});
    std::normal_distribution<double> nd;
    for (auto& v : z.values()) v = static_cast<T>(nd(rng));
    return z;
}

}  // namespace ratgan
