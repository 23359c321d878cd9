#pragma once

// Metrics (Frechet distance, inception score, caption consistency), the
// attribute probe used as the desk-scale feature extractor, and attention
// heatmap rendering.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ratgan/data.hpp"
#include "ratgan/encoders.hpp"
#include "ratgan/generator.hpp"
#include "ratgan/image.hpp"
#include "ratgan/optim.hpp"

namespace ratgan {

// ---- Frechet distance ---------------------------------------------------

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t count = 0;

    void validate() const {
        if (count < 2) throw InvalidInput("feature statistics need at least 2 samples, got " + std::to_string(count));
        if (cov.rows() != mean.size() || cov.cols() != mean.size())
            throw InvalidInput("covariance shape does not match the mean width");
        if (!cov.isApprox(cov.transpose(), 1e-9)) throw InvalidInput("covariance is not symmetric");
    }

    /// Mean and unbiased covariance of the rows of `features` [N, F].
    template <class T>
    static FeatureStats from_features(const Tensor<T>& features) {
        if (features.rank() != 2 || features.dim(0) < 2)
            throw InvalidInput("feature statistics need [N >= 2, F] features, got " + shape_string(features.shape()));
        const auto n = static_cast<Eigen::Index>(features.dim(0)), f = static_cast<Eigen::Index>(features.dim(1));
        Eigen::MatrixXd x(n, f);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < f; ++j) x(i, j) = primal(features[static_cast<std::size_t>(i * f + j)]);
        FeatureStats s;
        s.mean = x.colwise().mean().transpose();
        const Eigen::MatrixXd centred = x.rowwise() - s.mean.transpose();
        s.cov = centred.transpose() * centred / static_cast<double>(n - 1);
        s.count = static_cast<std::size_t>(n);
        return s;
    }
};

namespace detail {
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

/// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the trace of the root
/// taken from the symmetric form S1^(1/2) S2 S1^(1/2).
inline double fid(const FeatureStats& a, const FeatureStats& b) {
    a.validate();
    b.validate();
    if (a.mean.size() != b.mean.size())
        throw InvalidInput("fid: feature widths differ (" + std::to_string(a.mean.size()) + " vs " +
                           std::to_string(b.mean.size()) + ")");
    const Eigen::MatrixXd ra = detail::psd_sqrt(a.cov);
    const Eigen::MatrixXd inner = ra * b.cov * ra;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_root;
    return std::max(0.0, d);
}

// ---- inception score ------------------------------------------------------

/// exp(mean_i KL(p_i || p_bar)) over rows of class probabilities.
inline double inception_score(const std::vector<std::vector<double>>& probs) {
    if (probs.empty()) throw InvalidInput("inception score needs at least one row");
    const std::size_t k = probs[0].size();
    if (k == 0) throw InvalidInput("inception score rows must be nonempty");
    std::vector<double> marginal(k, 0.0);
    for (const auto& row : probs) {
        if (row.size() != k) throw InvalidInput("inception score rows differ in width");
        double total = 0;
        for (double v : row) {
            if (!(v >= 0) || !std::isfinite(v)) throw InvalidInput("class probabilities must be finite and >= 0");
            total += v;
        }
        if (std::abs(total - 1.0) > 1e-6) throw InvalidInput("class probability row sums to " + std::to_string(total));
        for (std::size_t j = 0; j < k; ++j) marginal[j] += row[j] / static_cast<double>(probs.size());
    }
    double kl = 0;
    for (const auto& row : probs)
        for (std::size_t j = 0; j < k; ++j)
            if (row[j] > 0) kl += row[j] * (std::log(row[j]) - std::log(marginal[j]));
    return std::exp(kl / static_cast<double>(probs.size()));
}

// ---- attention maps ------------------------------------------------------

struct AttentionMap {
    std::size_t height = 0, width = 0;
    std::vector<double> values;  // row-major

    AttentionMap() = default;
    AttentionMap(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}
    double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

    /// Row `row` of attention weights [N, H*W] laid out as an h x w map.
    template <class T>
    static AttentionMap from_weights(const Tensor<T>& alpha, std::size_t row, std::size_t h, std::size_t w) {
        if (alpha.rank() != 2 || row >= alpha.dim(0) || alpha.dim(1) != h * w)
            throw InvalidInput("attention weights " + shape_string(alpha.shape()) + " do not hold a " +
                               std::to_string(h) + "x" + std::to_string(w) + " map in row " + std::to_string(row));
        AttentionMap m(h, w);
        for (std::size_t i = 0; i < h * w; ++i) m.values[i] = primal(alpha.at(row, i));
        return m;
    }
};

/// (a - min) / (max - min); a constant map becomes all zeros with a warning.
inline AttentionMap normalize_attention(const AttentionMap& a, const WarningSink& warn = warn_stderr) {
    if (a.values.empty()) throw InvalidInput("cannot normalize an empty attention map");
    for (double v : a.values)
        if (!std::isfinite(v)) throw InvalidInput("attention map has non-finite entries");
    const auto [lo, hi] = std::minmax_element(a.values.begin(), a.values.end());
    AttentionMap out(a.height, a.width);
    if (*hi == *lo) {
        if (warn) warn("attention map is constant; rendering it as all zeros");
        return out;
    }
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < a.values.size(); ++i) out.values[i] = (a.values[i] - *lo) / range;
    return out;
}

/// Bilinear enlargement by an integer factor (pixel-centre aligned).
inline AttentionMap upsample_attention(const AttentionMap& a, std::size_t factor) {
    if (factor < 1) throw InvalidInput("upsample factor must be at least 1");
    if (a.values.empty()) throw InvalidInput("cannot upsample an empty attention map");
    const std::size_t h = a.height * factor, w = a.width * factor;
    AttentionMap out(h, w);
    const double f = static_cast<double>(factor);
    for (std::size_t y = 0; y < h; ++y) {
        const double fy = std::clamp((static_cast<double>(y) + 0.5) / f - 0.5, 0.0, static_cast<double>(a.height - 1));
        const auto y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, a.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
            const double fx = std::clamp((static_cast<double>(x) + 0.5) / f - 0.5, 0.0, static_cast<double>(a.width - 1));
            const auto x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, a.width - 1);
            const double tx = fx - static_cast<double>(x0);
            const double top = a.at(y0, x0) * (1 - tx) + a.at(y0, x1) * tx;
            const double bot = a.at(y1, x0) * (1 - tx) + a.at(y1, x1) * tx;
            out.at(y, x) = top * (1 - ty) + bot * ty;
        }
    }
    return out;
}

/// Jet colormap in [-1, 1] pixel units for t in [0, 1].
inline std::array<float, 3> jet(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto ramp = [](double v) { return std::clamp(1.5 - std::abs(v), 0.0, 1.0); };
    return {static_cast<float>(2 * ramp(4 * t - 3) - 1), static_cast<float>(2 * ramp(4 * t - 2) - 1),
            static_cast<float>(2 * ramp(4 * t - 1) - 1)};
}

/// Alpha-blend of the colorized normalized map over the image; the map is
/// resized bilinearly when its size differs from the image.
inline Image heatmap_overlay(const Image& img, const AttentionMap& normalized, double opacity = 0.5) {
    if (img.channels != 3) throw InvalidInput("heatmap overlay needs an RGB image");
    AttentionMap m = normalized;
    if (m.height != img.height || m.width != img.width) {
        Image plane(m.height, m.width, 0.f, 1);
        for (std::size_t i = 0; i < m.values.size(); ++i) plane.pixels[i] = static_cast<float>(m.values[i]);
        const Image big = resize_bilinear(plane, img.height, img.width);
        m = AttentionMap(img.height, img.width);
        for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = big.pixels[i];
    }
    Image out = img;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            const auto c = jet(m.at(y, x));
            for (std::size_t ch = 0; ch < 3; ++ch)
                out.at(ch, y, x) = static_cast<float>((1 - opacity) * img.at(ch, y, x) + opacity * c[ch]);
        }
    return out;
}

/// `rows` x `cols` sheet of images written as one PNG.
inline void write_grid(const fs::path& path, const std::vector<Image>& images, std::size_t rows, std::size_t cols) {
    if (images.size() > rows * cols)
        throw InvalidInput(std::to_string(images.size()) + " images do not fit a " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " grid");
    write_png(path, make_grid(images, cols));
}

// ---- attribute probe ----------------------------------------------------

/// Attribute vocabularies for the probe heads.
struct AttributeSet {
    std::vector<std::string> colors, shapes, backgrounds;

    static AttributeSet from_spec(const SyntheticSpec& spec) {
        AttributeSet a;
        for (const auto& c : spec.colors) a.colors.push_back(c.name);
        a.shapes = spec.shapes;
        for (const auto& b : spec.backgrounds) a.backgrounds.push_back(b.name);
        return a;
    }

    /// Sorted distinct attribute values found in a manifest.
    static AttributeSet from_manifest(const std::vector<SyntheticRecord>& manifest) {
        if (manifest.empty()) throw InvalidInput("manifest has no records");
        std::set<std::string> c, s, b;
        for (const auto& r : manifest) {
            c.insert(r.color);
            s.insert(r.shape);
            b.insert(r.background);
        }
        return {{c.begin(), c.end()}, {s.begin(), s.end()}, {b.begin(), b.end()}};
    }

    static std::size_t index_of(const std::vector<std::string>& v, const std::string& name) {
        const auto it = std::find(v.begin(), v.end(), name);
        if (it == v.end()) throw InvalidInput("unknown attribute value '" + name + "'");
        return static_cast<std::size_t>(it - v.begin());
    }

    Json to_json() const { return {{"colors", colors}, {"shapes", shapes}, {"backgrounds", backgrounds}}; }
    static AttributeSet from_json(const Json& j) {
        return {j.at("colors").get<std::vector<std::string>>(), j.at("shapes").get<std::vector<std::string>>(),
                j.at("backgrounds").get<std::vector<std::string>>()};
    }
};

struct AttributeLabels {
    std::size_t color = 0, shape = 0, background = 0;
};

struct ProbeConfig {
    std::size_t image_size = 32;
    std::vector<std::size_t> channels = {16, 32, 64};
    std::size_t feature_width = 128;
    std::size_t steps = 1000;
    std::size_t batch_size = 32;
    double learning_rate = 2e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (channels.empty()) throw InvalidConfig("probe needs at least one convolution");
        if (image_size % (std::size_t{1} << channels.size()) != 0)
            throw InvalidConfig("probe image_size must be divisible by 2^(number of convolutions)");
        if (feature_width == 0) throw InvalidConfig("probe feature width must be positive");
        if (batch_size < 2) throw InvalidConfig("probe batch size must be at least 2");
        if (!(learning_rate > 0)) throw InvalidConfig("probe learning rate must be positive");
    }
    Json to_json() const {
        return {{"image_size", image_size}, {"channels", channels}, {"feature_width", feature_width}, {"steps", steps},
                {"batch_size", batch_size}, {"learning_rate", learning_rate}, {"seed", seed}};
    }
    static ProbeConfig from_json(const Json& j) {
        ProbeConfig c;
        c.image_size = j.value("image_size", c.image_size);
        c.channels = j.value("channels", c.channels);
        c.feature_width = j.value("feature_width", c.feature_width);
        c.steps = j.value("steps", c.steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

/// Small CNN; color, shape and background heads share one embedding layer.
template <class T>
class ProbeNet {
public:
    ProbeNet(const ProbeConfig& cfg, const AttributeSet& attrs, Rng& rng) : image_size_(cfg.image_size) {
        std::size_t in = 3;
        for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
            const std::string name = "probe.stage" + std::to_string(i);
            convs_.emplace_back(name + ".conv", in, cfg.channels[i], 3, 1, 1, rng);
            convs_.emplace_back(name + ".down", cfg.channels[i], cfg.channels[i], 4, 2, 1, rng);
            in = cfg.channels[i];
        }
        const std::size_t side = cfg.image_size >> cfg.channels.size();
        features_ = cfg.feature_width;
        embed_ = Linear<T>("probe.embed", in * side * side, features_, rng);
        color_ = Linear<T>("probe.color", features_, attrs.colors.size(), rng);
        shape_ = Linear<T>("probe.shape", features_, attrs.shapes.size(), rng);
        background_ = Linear<T>("probe.background", features_, attrs.backgrounds.size(), rng);
        he_scale_kernels(parameters());
        for (auto& w : embed_.weight().value().values()) w = w * T(std::sqrt(6.0));
    }

    struct Output {
        Var<T> features, color, shape, background;  // features [N, F]; logits per head
    };

    Output operator()(const Var<T>& images) const {
        const auto& s = images.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != image_size_ || s[3] != image_size_)
            throw InvalidInput("probe expects [N,3," + std::to_string(image_size_) + "," + std::to_string(image_size_) +
                               "], got " + shape_string(s));
        Var<T> x = images;
        for (const auto& c : convs_) x = leaky_relu(c(x), 0.2);
        Var<T> f = leaky_relu(embed_(reshape(x, {s[0], x.value().size() / s[0]})), 0.2);
        return {f, color_(f), shape_(f), background_(f)};
    }

    std::size_t feature_width() const { return features_; }
    std::size_t image_size() const { return image_size_; }

    ParamRefs<T> parameters() {
        ParamRefs<T> p;
        for (auto& c : convs_) c.collect(p);
        embed_.collect(p);
        color_.collect(p);
        shape_.collect(p);
        background_.collect(p);
        return p;
    }

private:
    std::size_t image_size_;
    std::vector<Conv2d<T>> convs_;
    std::size_t features_ = 0;
    Linear<T> embed_, color_, shape_, background_;
};

inline constexpr const char* kProbeCheckpointKind = "probe";

namespace detail {
template <class T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
    Tensor<T> onehot(logits.shape());
    for (std::size_t i = 0; i < labels.size(); ++i) onehot.at(i, labels[i]) = T(1);
    return scale(sum(mul(log_softmax_rows(logits), Var<T>::constant(std::move(onehot)))),
                 -1.0 / static_cast<double>(labels.size()));
}

inline std::size_t argmax_row(const Tensor<float>& t, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.dim(1); ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

inline std::vector<double> softmax_row(const Tensor<float>& t, std::size_t row) {
    std::vector<double> p(t.dim(1));
    double mx = t.at(row, 0), total = 0;
    for (std::size_t j = 1; j < p.size(); ++j) mx = std::max(mx, static_cast<double>(t.at(row, j)));
    for (std::size_t j = 0; j < p.size(); ++j) total += (p[j] = std::exp(t.at(row, j) - mx));
    for (auto& v : p) v /= total;
    return p;
}
}  // namespace detail

struct AttributeAccuracy {
    double color = 0, shape = 0, background = 0;
    std::size_t n = 0;
    Json to_json() const { return {{"color", color}, {"shape", shape}, {"background", background}, {"n", n}}; }
};

/// Trained attribute classifier; doubles as the feature extractor for FID and
/// the class-probability source (color x shape) for the inception score.
class Probe {
public:
    Probe(ProbeConfig cfg, AttributeSet attrs)
        : cfg_(validated(std::move(cfg))), attrs_(std::move(attrs)), rng_(cfg_.seed),
          net_(std::make_unique<ProbeNet<float>>(cfg_, attrs_, rng_)) {}

    /// Fits the heads to the labelled corpus images.
    void fit(const Corpus& corpus, const std::vector<AttributeLabels>& labels,
             const std::function<void(const Json&)>& log = {}) {
        if (labels.size() != corpus.size()) throw InvalidInput("probe labels do not match the corpus");
        Vocabulary vocab = Vocabulary::build(corpus.all_captions());
        BatchSampler sampler(corpus, vocab, cfg_.image_size, true);
        Adam<float> opt(net_->parameters(), {cfg_.learning_rate, 0.9, 0.999, 1e-8});
        for (std::size_t step = 0; step < cfg_.steps; ++step) {
            Batch b = sampler.sample(std::min(cfg_.batch_size, std::max<std::size_t>(2, corpus.size())), rng_);
            std::vector<std::size_t> lc, ls, lb;
            for (std::size_t r : b.records) {
                lc.push_back(labels[r].color);
                ls.push_back(labels[r].shape);
                lb.push_back(labels[r].background);
            }
            opt.zero_grad();
            auto out = (*net_)(Var<float>::constant(b.images));
            Var<float> loss = add(add(detail::cross_entropy(out.color, lc), detail::cross_entropy(out.shape, ls)),
                                  detail::cross_entropy(out.background, lb));
            const double v = loss.value()[0];
            if (!std::isfinite(v)) throw NumericError("probe loss became non-finite at step " + std::to_string(step));
            backward(loss);
            opt.step();
            if (log) log({{"step", step + 1}, {"loss", v}});
        }
    }

    struct Prediction {
        Tensor<float> features;  // [N, F]
        std::vector<AttributeLabels> labels;
        std::vector<std::vector<double>> joint;  // p(color) p(shape), color-major
    };

    /// Batched inference over images [N, 3, R, R]; other resolutions are resized.
    Prediction predict(const Tensor<float>& images, std::size_t chunk = 64) const {
        if (images.rank() != 4 || images.dim(1) != 3) throw InvalidInput("probe input must be [N,3,H,W]");
        const std::size_t n = images.dim(0), r = cfg_.image_size;
        Prediction p;
        p.features = Tensor<float>({n, net_->feature_width()});
        NoGradGuard ng;
        for (std::size_t start = 0; start < n; start += chunk) {
            const std::size_t m = std::min(chunk, n - start);
            Tensor<float> part({m, 3, r, r});
            for (std::size_t i = 0; i < m; ++i) store_image(fit_to(image_from_batch(images, start + i), r), part, i);
            auto out = (*net_)(Var<float>::constant(std::move(part)));
            const Tensor<float>& f = out.features.value();
            std::copy_n(f.data(), f.size(), p.features.data() + start * net_->feature_width());
            const Tensor<float> &c = out.color.value(), &s = out.shape.value(), &b = out.background.value();
            for (std::size_t i = 0; i < m; ++i) {
                p.labels.push_back({detail::argmax_row(c, i), detail::argmax_row(s, i), detail::argmax_row(b, i)});
                const auto pc = detail::softmax_row(c, i), ps = detail::softmax_row(s, i);
                std::vector<double> joint;
                for (double a : pc)
                    for (double bb : ps) joint.push_back(a * bb);
                p.joint.push_back(std::move(joint));
            }
        }
        return p;
    }

    AttributeAccuracy accuracy(const Tensor<float>& images, const std::vector<AttributeLabels>& truth) const {
        if (truth.size() != images.dim(0)) throw InvalidInput("accuracy: label count does not match image count");
        if (truth.empty()) throw InvalidInput("accuracy of an empty set");
        const auto pred = predict(images);
        AttributeAccuracy a;
        a.n = truth.size();
        for (std::size_t i = 0; i < truth.size(); ++i) {
            a.color += pred.labels[i].color == truth[i].color;
            a.shape += pred.labels[i].shape == truth[i].shape;
            a.background += pred.labels[i].background == truth[i].background;
        }
        a.color /= static_cast<double>(a.n);
        a.shape /= static_cast<double>(a.n);
        a.background /= static_cast<double>(a.n);
        return a;
    }

    /// "probe-" plus a hash of the weights, so reports name the exact extractor.
    std::string extractor_id() const {
        char buf[32];
        std::snprintf(buf, sizeof buf, "probe-%016llx",
                      static_cast<unsigned long long>(parameter_hash(net_->parameters())));
        return buf;
    }

    void save(const fs::path& path) const {
        Container c(kProbeCheckpointKind);
        c.meta()["config"] = cfg_.to_json();
        c.meta()["attributes"] = attrs_.to_json();
        c.put_parameters(net_->parameters());
        c.save(path);
    }

    static Probe load(const fs::path& path) {
        const Container c = Container::load(path, kProbeCheckpointKind);
        try {
            Probe p(ProbeConfig::from_json(c.meta().at("config")), AttributeSet::from_json(c.meta().at("attributes")));
            c.get_parameters(p.net_->parameters());
            return p;
        } catch (const Json::exception& e) {
            throw ParseError("probe checkpoint " + path.string() + " is malformed: " + e.what());
        }
    }

    const ProbeConfig& config() const { return cfg_; }
    const AttributeSet& attributes() const { return attrs_; }
    std::size_t feature_width() const { return net_->feature_width(); }

private:
    static ProbeConfig validated(ProbeConfig c) {
        c.validate();
        return c;
    }

    ProbeConfig cfg_;
    AttributeSet attrs_;
    Rng rng_;
    std::unique_ptr<ProbeNet<float>> net_;
};

/// Labels for each corpus record, looked up by id in the synthetic manifest.
inline std::vector<AttributeLabels> corpus_labels(const Corpus& corpus, const std::vector<SyntheticRecord>& manifest,
                                                  const AttributeSet& attrs) {
    std::map<std::string, const SyntheticRecord*> by_id;
    for (const auto& r : manifest) by_id[r.id] = &r;
    std::vector<AttributeLabels> out;
    for (const auto& rec : corpus.records) {
        const auto it = by_id.find(rec.id);
        if (it == by_id.end()) throw InvalidInput("record " + rec.id + " is missing from the manifest");
        out.push_back({AttributeSet::index_of(attrs.colors, it->second->color),
                       AttributeSet::index_of(attrs.shapes, it->second->shape),
                       AttributeSet::index_of(attrs.backgrounds, it->second->background)});
    }
    return out;
}

/// Splits off every `every`-th record as the probe's held-out images.  Both
/// parts cover every attribute combination present in the corpus.
inline std::pair<Corpus, Corpus> probe_holdout(const Corpus& corpus, std::size_t every = 5) {
    if (every < 2) throw InvalidConfig("probe holdout period must be at least 2");
    Corpus fit, held;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        Corpus& dst = i % every == every - 1 ? held : fit;
        dst.records.push_back(corpus.records[i]);
        dst.images.push_back(corpus.images[i]);
    }
    if (fit.size() == 0 || held.size() == 0) throw InvalidInput("corpus too small for a probe holdout");
    return {std::move(fit), std::move(held)};
}

/// All corpus images at `resolution` as one tensor [N, 3, R, R].
inline Tensor<float> corpus_tensor(const Corpus& corpus, std::size_t resolution) {
    Tensor<float> t({corpus.size(), 3, resolution, resolution});
    for (std::size_t i = 0; i < corpus.size(); ++i) store_image(fit_to(corpus.images[i], resolution), t, i);
    return t;
}

/// Fraction of generated images whose predicted attributes match those of
/// the record whose caption conditioned them.
inline AttributeAccuracy caption_consistency(const Tensor<float>& generated, const std::vector<AttributeLabels>& conditioning,
                                             const Probe& probe) {
    return probe.accuracy(generated, conditioning);
}

// ---- generator evaluation ------------------------------------------------

struct EvalConfig {
    std::size_t samples = 512;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (samples < 2) throw InvalidConfig("evaluation needs at least 2 samples");
        if (batch_size < 1) throw InvalidConfig("evaluation batch size must be positive");
    }
};

struct EvalReport {
    double fid = 0;
    double inception_score = 0;
    AttributeAccuracy consistency;
    std::size_t samples = 0;
    std::string extractor_id;

    /// One {metric, value, n_samples, extractor_id} record per metric.
    Json to_json() const {
        Json rows = Json::array();
        auto add = [&](const std::string& name, double v) {
            rows.push_back({{"metric", name}, {"value", v}, {"n_samples", samples}, {"extractor_id", extractor_id}});
        };
        add("fid", fid);
        add("inception_score", inception_score);
        add("caption_consistency_color", consistency.color);
        add("caption_consistency_shape", consistency.shape);
        add("caption_consistency_background", consistency.background);
        return rows;
    }
};

/// Generates `samples` images conditioned on captions cycling through the
/// corpus records (caption and noise drawn from a seeded stream), then scores
/// them against the corpus images with the probe.
inline EvalReport evaluate_generator(const Generator<float>& g, const Encoders<float>& enc, const Corpus& corpus,
                                     const std::vector<AttributeLabels>& labels, const Probe& probe,
                                     const FeatureStats& real, const EvalConfig& cfg) {
    cfg.validate();
    if (labels.size() != corpus.size()) throw InvalidInput("evaluation labels do not match the corpus");
    if (static_cast<std::size_t>(real.mean.size()) != probe.feature_width())
        throw InvalidInput("real feature statistics width " + std::to_string(real.mean.size()) +
                           " does not match the probe's " + std::to_string(probe.feature_width()));
    Rng rng(cfg.seed);
    const std::size_t r = g.config().output_resolution();
    Tensor<float> images({cfg.samples, 3, r, r});
    std::vector<AttributeLabels> cond;
    for (std::size_t start = 0; start < cfg.samples; start += cfg.batch_size) {
        const std::size_t m = std::min(cfg.batch_size, cfg.samples - start);
        std::vector<std::string> caps;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t rec = (start + i) % corpus.size();
            const auto& options = corpus.records[rec].captions;
            caps.push_back(options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)]);
            cond.push_back(labels[rec]);
        }
        const Tensor<float> z = sample_noise<float>(m, g.config().noise_width, rng);
        const Tensor<float> out = synthesize(g, z, enc.embed_captions(caps));
        std::copy_n(out.data(), out.size(), images.data() + start * 3 * r * r);
    }
    const auto pred = probe.predict(images);
    EvalReport rep;
    rep.samples = cfg.samples;
    rep.extractor_id = probe.extractor_id();
    rep.fid = fid(real, FeatureStats::from_features(pred.features));
    rep.inception_score = inception_score(pred.joint);
    rep.consistency = caption_consistency(images, cond, probe);
    return rep;
}

}  // namespace ratgan
