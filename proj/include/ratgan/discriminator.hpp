#pragma once

// Matching-aware discriminator with soft-threshold spatial attention.
//
//   image -> stem -> stride-2 blocks -> P (attention resolution)
//   alpha = normalize(MLP([P_pos; s]))  over all positions
//   S = s * alpha;  [P; S] -> 3x3 block -> stride-2 blocks to 4x4 -> 4x4 conv -> score

#include <cmath>
#include <string>
#include <vector>

#include "ratgan/module.hpp"
#include "ratgan/serialize.hpp"

namespace ratgan {

enum class AttentionMode { soft_threshold, softmax, off };

inline std::string to_string(AttentionMode m) {
    switch (m) {
        case AttentionMode::soft_threshold: return "soft_threshold";
        case AttentionMode::softmax: return "softmax";
        case AttentionMode::off: return "off";
    }
    return "?";
}

inline AttentionMode parse_attention_mode(const std::string& s) {
    if (s == "soft_threshold") return AttentionMode::soft_threshold;
    if (s == "softmax") return AttentionMode::softmax;
    if (s == "off") return AttentionMode::off;
    throw InvalidConfig("unknown attention mode '" + s + "' (expected soft_threshold, softmax or off)");
}

/// p_k = sigmoid(x_k) / sum_j sigmoid(x_j).
inline std::vector<double> soft_threshold(const std::vector<double>& x) {
    if (x.empty()) throw InvalidInput("soft_threshold of an empty vector");
    std::vector<double> p(x.size());
    double total = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        if (!std::isfinite(x[k])) throw InvalidInput("soft_threshold received a non-finite energy");
        total += (p[k] = sigmoid_scalar(x[k]));
    }
    for (auto& v : p) v /= total;
    return p;
}

struct DiscriminatorConfig {
    std::size_t image_size = 256;
    std::size_t base_channels = 32;
    std::size_t max_channels = 512;
    std::size_t attention_resolution = 8;
    std::size_t sentence_width = 256;
    std::size_t energy_hidden = 128;
    bool residual = false;
    AttentionMode attention = AttentionMode::soft_threshold;

    /// Stride-2 blocks between the stem and the attention stage.
    std::size_t encoder_blocks() const {
        std::size_t n = 0;
        for (std::size_t r = image_size; r > attention_resolution; r /= 2) ++n;
        return n;
    }

    std::size_t encoder_channels(std::size_t i) const {
        return std::min(max_channels, base_channels << std::min<std::size_t>(i + 1, 40));
    }

    void validate() const {
        auto pow2 = [](std::size_t v) { return v > 0 && (v & (v - 1)) == 0; };
        if (!pow2(image_size) || !pow2(attention_resolution))
            throw InvalidConfig("discriminator resolutions must be powers of two");
        if (attention_resolution < 4 || attention_resolution > image_size)
            throw InvalidConfig("attention resolution must lie between 4 and the image size");
        if (base_channels < 1 || max_channels < 1 || sentence_width < 1 || energy_hidden < 1)
            throw InvalidConfig("discriminator widths must be positive");
    }

    Json to_json() const {
        return {{"image_size", image_size},
                {"base_channels", base_channels},
                {"max_channels", max_channels},
                {"attention_resolution", attention_resolution},
                {"sentence_width", sentence_width},
                {"energy_hidden", energy_hidden},
                {"residual", residual},
                {"attention", to_string(attention)}};
    }

    static DiscriminatorConfig from_json(const Json& j) {
        DiscriminatorConfig c;
        c.image_size = j.value("image_size", c.image_size);
        c.base_channels = j.value("base_channels", c.base_channels);
        c.max_channels = j.value("max_channels", c.max_channels);
        c.attention_resolution = j.value("attention_resolution", c.attention_resolution);
        c.sentence_width = j.value("sentence_width", c.sentence_width);
        c.energy_hidden = j.value("energy_hidden", c.energy_hidden);
        c.residual = j.value("residual", c.residual);
        c.attention = parse_attention_mode(j.value("attention", std::string("soft_threshold")));
        return c;
    }

    static DiscriminatorConfig full() { return {}; }

    static DiscriminatorConfig desk() {
        DiscriminatorConfig c;
        c.image_size = 64;
        c.base_channels = 16;
        c.max_channels = 64;
        c.attention_resolution = 4;
        c.sentence_width = 64;
        c.energy_hidden = 32;
        return c;
    }
};

/// 4x4 stride-2 convolution + leaky rectifier, optionally with a strided 1x1 shortcut.
template <class T>
class DownBlock {
public:
    DownBlock() = default;
    DownBlock(const std::string& name, std::size_t in, std::size_t out, bool residual, Rng& rng)
        : conv_(name + ".conv", in, out, 4, 2, 1, rng), residual_(residual) {
        if (residual) skip_ = Conv2d<T>(name + ".skip", in, out, 1, 2, 0, rng);
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> y = leaky_relu(conv_(x), 0.2);
        return residual_ ? add(y, skip_(x)) : y;
    }

    void collect(ParamRefs<T>& out) {
        conv_.collect(out);
        if (residual_) skip_.collect(out);
    }

private:
    Conv2d<T> conv_, skip_;
    bool residual_ = false;
};

template <class T>
struct Attention {
    Var<T> alpha;  // [N, H*W]
    Var<T> gated;  // [N, d, H, W]
};

template <class T>
class Discriminator {
public:
    explicit Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        stem_ = Conv2d<T>("d.stem", 3, cfg.base_channels, 3, 1, 1, rng);
        std::size_t ch = cfg.base_channels;
        for (std::size_t i = 0; i < cfg.encoder_blocks(); ++i) {
            encoder_.emplace_back("d.down" + std::to_string(i), ch, cfg.encoder_channels(i), cfg.residual, rng);
            ch = cfg.encoder_channels(i);
        }
        feature_channels_ = ch;
        energy_ = Mlp<T>("d.energy", ch + cfg.sentence_width, cfg.energy_hidden, 1, rng);
        joint_ = Conv2d<T>("d.joint", ch + cfg.sentence_width, ch, 3, 1, 1, rng);
        for (std::size_t r = cfg.attention_resolution, i = 0; r > 4; r /= 2, ++i)
            latter_.emplace_back("d.latter" + std::to_string(i), ch, ch, cfg.residual, rng);
        head_ = Conv2d<T>("d.head", ch, 1, 4, 1, 0, rng);
        he_scale_kernels(parameters(), {"d.head.weight"});
    }

    Discriminator(const Discriminator&) = delete;
    Discriminator& operator=(const Discriminator&) = delete;

    const DiscriminatorConfig& config() const { return cfg_; }
    std::size_t feature_channels() const { return feature_channels_; }

    /// Image feature map P [N, C, a, a] at the attention resolution.
    Var<T> downsample_encode(const Var<T>& images) const {
        const auto& s = images.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
            throw InvalidInput("discriminator expects [N,3," + std::to_string(cfg_.image_size) + "," +
                               std::to_string(cfg_.image_size) + "], got " + shape_string(s));
        Var<T> x = leaky_relu(stem_(images), 0.2);
        for (const auto& b : encoder_) x = b(x);
        return x;
    }

    /// Energies [N, H*W] from the shared perceptron on [P_pos; s].
    Var<T> attention_energy(const Var<T>& p, const Var<T>& s) const {
        check_features(p, s);
        const std::size_t n = p.dim(0), hw = p.dim(2) * p.dim(3);
        Var<T> joint = concat<T>({to_positions(p), repeat_rows(s, hw)}, 1);
        return reshape(energy_(joint), {n, hw});
    }

    /// alpha over all positions (soft threshold or softmax) and S = s * alpha.
    Attention<T> spatial_attention(const Var<T>& p, const Var<T>& s, AttentionMode mode) const {
        if (mode == AttentionMode::off) throw InvalidInput("spatial_attention called with attention disabled");
        Var<T> e = attention_energy(p, s);
        Var<T> alpha = mode == AttentionMode::softmax ? softmax_rows(e) : soft_threshold_rows(e);
        return {alpha, spatial_gate(s, alpha, p.dim(2), p.dim(3))};
    }

    struct Output {
        Var<T> score;  // [N]
        Var<T> alpha;  // [N, H*W]; invalid when attention is off
    };

    /// Score of features P (from downsample_encode) with sentences s.
    Output score(const Var<T>& p, const Var<T>& s, AttentionMode mode) const {
        check_features(p, s);
        Var<T> gated, alpha;
        if (mode == AttentionMode::off) {
            gated = broadcast_spatial(s, p.dim(2), p.dim(3));
        } else {
            auto att = spatial_attention(p, s, mode);
            gated = att.gated;
            alpha = att.alpha;
        }
        Var<T> x = leaky_relu(joint_(concat<T>({p, gated}, 1)), 0.2);
        for (const auto& b : latter_) x = b(x);
        return {reshape(head_(x), {p.dim(0)}), alpha};
    }

    Output discriminate(const Var<T>& images, const Var<T>& s, AttentionMode mode) const {
        return score(downsample_encode(images), s, mode);
    }

    Output discriminate(const Var<T>& images, const Var<T>& s) const { return discriminate(images, s, cfg_.attention); }

    ParamRefs<T> parameters() {
        ParamRefs<T> p;
        stem_.collect(p);
        for (auto& b : encoder_) b.collect(p);
        energy_.collect(p);
        joint_.collect(p);
        for (auto& b : latter_) b.collect(p);
        head_.collect(p);
        return p;
    }

    Mlp<T>& energy_mlp() { return energy_; }

private:
    void check_features(const Var<T>& p, const Var<T>& s) const {
        if (p.value().rank() != 4 || p.dim(1) != feature_channels_)
            throw InvalidInput("discriminator features have shape " + shape_string(p.shape()) + ", expected " +
                               std::to_string(feature_channels_) + " channels");
        if (s.value().rank() != 2 || s.dim(0) != p.dim(0) || s.dim(1) != cfg_.sentence_width)
            throw InvalidInput("discriminator sentence input has shape " + shape_string(s.shape()) + ", expected [" +
                               std::to_string(p.dim(0)) + "," + std::to_string(cfg_.sentence_width) + "]");
    }

    DiscriminatorConfig cfg_;
    Conv2d<T> stem_;
    std::vector<DownBlock<T>> encoder_;
    std::size_t feature_channels_ = 0;
    Mlp<T> energy_;
    Conv2d<T> joint_;
    std::vector<DownBlock<T>> latter_;
    Conv2d<T> head_;
};

}  // namespace ratgan
