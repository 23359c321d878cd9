#pragma once

// Bidirectional LSTM text encoder, convolutional image encoder and the batch
// contrastive objective used to pretrain them together.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ratgan/data.hpp"
#include "ratgan/module.hpp"
#include "ratgan/optim.hpp"
#include "ratgan/serialize.hpp"
#include "ratgan/text.hpp"

namespace ratgan {

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t embedding_width = 300;
    std::size_t hidden_width = 128;  // per direction
    std::size_t sentence_width = 256;
    std::size_t image_size = 256;
    std::vector<std::size_t> image_channels = {64, 128, 256, 512};
    /// When positive, conditioning embeddings are rescaled to this L2 norm.
    /// The contrastive loss is cosine based, so training is unaffected.
    double sentence_norm = 0.0;

    void validate() const {
        if (vocab_size < 4) throw InvalidConfig("encoder vocabulary must hold the reserved tokens and one word");
        if (embedding_width == 0 || hidden_width == 0 || sentence_width == 0)
            throw InvalidConfig("encoder widths must be positive");
        if (image_channels.empty()) throw InvalidConfig("image encoder needs at least one convolution");
        if (!(sentence_norm >= 0.0)) throw InvalidConfig("sentence_norm must be nonnegative");
        if (image_size % (std::size_t{1} << image_channels.size()) != 0)
            throw InvalidConfig("image_size must be divisible by 2^(number of image encoder convolutions)");
    }

    Json to_json() const {
        return {{"vocab_size", vocab_size},         {"embedding_width", embedding_width},
                {"hidden_width", hidden_width},     {"sentence_width", sentence_width},
                {"image_size", image_size},         {"image_channels", image_channels},
                {"sentence_norm", sentence_norm}};
    }

    static EncoderConfig from_json(const Json& j) {
        EncoderConfig c;
        c.vocab_size = j.value("vocab_size", c.vocab_size);
        c.embedding_width = j.value("embedding_width", c.embedding_width);
        c.hidden_width = j.value("hidden_width", c.hidden_width);
        c.sentence_width = j.value("sentence_width", c.sentence_width);
        c.image_size = j.value("image_size", c.image_size);
        c.image_channels = j.value("image_channels", c.image_channels);
        c.sentence_norm = j.value("sentence_norm", c.sentence_norm);
        return c;
    }

    static EncoderConfig desk() {
        EncoderConfig c;
        c.embedding_width = 32;
        c.hidden_width = 32;
        c.sentence_width = 64;
        c.image_size = 64;
        c.image_channels = {16, 32, 64, 64};
        return c;
    }
};

inline void validate_tokens(const TokenSequence& seq, std::size_t vocab_size) {
    if (seq.length() == 0) throw InvalidInput("token sequence is empty");
    for (auto id : seq.ids)
        if (id >= vocab_size)
            throw InvalidInput("token index " + std::to_string(id) + " outside vocabulary of size " +
                               std::to_string(vocab_size));
}

/// Runs a forward and a backward LSTM over each caption, concatenates the two
/// final hidden states and projects them to the sentence width.
template <class T>
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const EncoderConfig& cfg, Rng& rng)
        : cfg_(cfg),
          table_("text.embedding", detail::uniform_tensor<T>({cfg.vocab_size, cfg.embedding_width}, 0.1, rng)),
          forward_("text.lstm_fwd", cfg.embedding_width, cfg.hidden_width, rng),
          backward_("text.lstm_bwd", cfg.embedding_width, cfg.hidden_width, rng),
          project_("text.project", 2 * cfg.hidden_width, cfg.sentence_width, rng) {}

    /// Sentence embeddings [N, d].
    Var<T> operator()(const std::vector<TokenSequence>& batch) const {
        if (batch.empty()) throw InvalidInput("text encoder received an empty batch");
        std::size_t max_len = 0;
        for (const auto& seq : batch) {
            validate_tokens(seq, cfg_.vocab_size);
            max_len = std::max(max_len, seq.length());
        }
        const std::size_t n = batch.size(), hid = cfg_.hidden_width;
        auto zeros = [&] { return Var<T>::constant(Tensor<T>({n, hid})); };
        Var<T> hf = zeros(), cf = zeros(), hb = zeros(), cb = zeros();
        std::vector<std::size_t> fwd_ids(n), bwd_ids(n);
        std::vector<std::uint8_t> mask(n);
        for (std::size_t t = 0; t < max_len; ++t) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto& ids = batch[i].ids;
                mask[i] = t < ids.size();
                fwd_ids[i] = mask[i] ? ids[t] : Vocabulary::pad;
                bwd_ids[i] = mask[i] ? ids[ids.size() - 1 - t] : Vocabulary::pad;
            }
            auto f = forward_.step(embedding(table_.var(), fwd_ids), hf, cf);
            auto b = backward_.step(embedding(table_.var(), bwd_ids), hb, cb);
            hf = where_rows(mask, f.h, hf);
            cf = where_rows(mask, f.c, cf);
            hb = where_rows(mask, b.h, hb);
            cb = where_rows(mask, b.c, cb);
        }
        return project_(concat<T>({hf, hb}, 1));
    }

    const EncoderConfig& config() const { return cfg_; }

    void collect(ParamRefs<T>& out) {
        out.push_back(&table_);
        forward_.collect(out);
        backward_.collect(out);
        project_.collect(out);
    }

private:
    EncoderConfig cfg_;
    Parameter<T> table_;
    LstmCell<T> forward_, backward_;
    Linear<T> project_;
};

/// Stride-2 4x4 convolutions with leaky rectifiers, global average pool, linear to d.
template <class T>
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        std::size_t in = 3;
        for (std::size_t i = 0; i < cfg.image_channels.size(); ++i) {
            convs_.emplace_back("image.conv" + std::to_string(i), in, cfg.image_channels[i], 4, 2, 1, rng);
            in = cfg.image_channels[i];
        }
        project_ = Linear<T>("image.project", in, cfg.sentence_width, rng);
    }

    /// Image embeddings [N, d] for images [N, 3, R, R].
    Var<T> operator()(const Var<T>& images) const {
        const auto& s = images.shape();
        if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.image_size || s[3] != cfg_.image_size)
            throw InvalidInput("image encoder expects [N,3," + std::to_string(cfg_.image_size) + "," +
                               std::to_string(cfg_.image_size) + "], got " + shape_string(s));
        Var<T> x = images;
        for (const auto& c : convs_) x = leaky_relu(c(x), 0.2);
        return project_(global_avg_pool(x));
    }

    void collect(ParamRefs<T>& out) {
        for (auto& c : convs_) c.collect(out);
        project_.collect(out);
    }

private:
    EncoderConfig cfg_;
    std::vector<Conv2d<T>> convs_;
    Linear<T> project_;
};

inline EncoderConfig sized_for(EncoderConfig cfg, const Vocabulary& vocab) {
    cfg.vocab_size = vocab.size();
    cfg.validate();
    return cfg;
}

/// Vocabulary plus both encoders.
template <class T>
struct Encoders {
    EncoderConfig config;
    Vocabulary vocabulary;
    TextEncoder<T> text;
    ImageEncoder<T> image;

    Encoders(EncoderConfig cfg, Vocabulary vocab, Rng& rng)
        : config(sized_for(std::move(cfg), vocab)),
          vocabulary(std::move(vocab)),
          text(config, rng),
          image(config, rng) {}

    ParamRefs<T> text_parameters() {
        ParamRefs<T> p;
        text.collect(p);
        return p;
    }

    ParamRefs<T> image_parameters() {
        ParamRefs<T> p;
        image.collect(p);
        return p;
    }

    ParamRefs<T> parameters() {
        auto p = text_parameters();
        image.collect(p);
        return p;
    }

    /// Sentence embeddings [N, d] without recording a graph, rescaled to
    /// config.sentence_norm when that is set.
    Tensor<T> embed_text(const std::vector<TokenSequence>& batch) const {
        NoGradGuard ng;
        Tensor<T> s = text(batch).value();
        if (config.sentence_norm > 0) {
            const std::size_t d = config.sentence_width;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                T* row = s.data() + i * d;
                T n2 = T(0);
                for (std::size_t k = 0; k < d; ++k) n2 += row[k] * row[k];
                const T scale = T(config.sentence_norm) / std::max(std::sqrt(n2), T(1e-12));
                for (std::size_t k = 0; k < d; ++k) row[k] *= scale;
            }
        }
        return s;
    }

    Tensor<T> embed_captions(const std::vector<std::string>& captions) const {
        std::vector<TokenSequence> seqs;
        for (const auto& c : captions) seqs.push_back(vocabulary.encode(c));
        return embed_text(seqs);
    }

    Tensor<T> embed_images(const Tensor<T>& images) const {
        NoGradGuard ng;
        return image(Var<T>::constant(images)).value();
    }
};

/// Sentence embedding [d] for one caption.
template <class T>
Tensor<T> encode_text(const TokenSequence& tokens, const Encoders<T>& enc) {
    return enc.embed_text({tokens}).reshaped({enc.config.sentence_width});
}

/// Image embedding [d] for one [3, R, R] image.
template <class T>
Tensor<T> encode_image(const Tensor<T>& image, const Encoders<T>& enc) {
    if (image.rank() != 3) throw InvalidInput("encode_image expects [3,R,R], got " + shape_string(image.shape()));
    return enc.embed_images(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}))
        .reshaped({enc.config.sentence_width});
}

// ---- contrastive objective ---------------------------------------------

/// M[i][j] = <text_i, image_j>.
template <class T>
Tensor<T> similarity_matrix(const Tensor<T>& text, const Tensor<T>& image) {
    if (text.rank() != 2 || image.rank() != 2) throw InvalidInput("similarity_matrix expects [n,d] batches");
    if (text.dim(0) != image.dim(0))
        throw InvalidInput("similarity_matrix batch sizes differ: " + std::to_string(text.dim(0)) + " vs " +
                           std::to_string(image.dim(0)));
    if (text.dim(1) != image.dim(1)) throw InvalidInput("similarity_matrix embedding widths differ");
    const std::size_t n = text.dim(0), d = text.dim(1);
    Tensor<T> m({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc(0);
            for (std::size_t k = 0; k < d; ++k) acc += text.at(i, k) * image.at(j, k);
            m.at(i, j) = acc;
        }
    return m;
}

/// Row-wise softmax with per-row max subtraction.
template <class T>
Tensor<T> match_probabilities(const Tensor<T>& m) {
    if (m.rank() != 2 || m.dim(0) == 0) throw InvalidInput("match_probabilities expects a nonempty matrix");
    if (!all_finite(m)) throw InvalidInput("match_probabilities received non-finite similarities");
    NoGradGuard ng;
    return softmax_rows(Var<T>::constant(m)).value();
}

/// -sum_i log max(Mhat[i][i], eps).
template <class T>
T contrastive_loss(const Tensor<T>& mhat, double eps = 1e-12) {
    using std::log;
    if (mhat.rank() != 2 || mhat.dim(0) != mhat.dim(1)) throw InvalidInput("contrastive_loss expects a square matrix");
    T total(0);
    for (std::size_t i = 0; i < mhat.dim(0); ++i) {
        const T p = mhat.at(i, i);
        total -= log(p > T(eps) ? p : T(eps));
    }
    return total;
}

/// Differentiable contrastive loss of text and image embedding batches.  The
/// symmetric variant adds the same loss over columns (image to text).
template <class T>
Var<T> contrastive_objective(const Var<T>& text, const Var<T>& image, bool symmetric = false, double eps = 1e-12) {
    if (text.shape() != image.shape() || text.value().rank() != 2)
        throw InvalidInput("contrastive_objective: embedding batches differ in shape");
    Var<T> m = matmul_nt(text, image);
    Var<T> loss = neg(sum(log_clamped(diagonal(softmax_rows(m)), eps)));
    if (symmetric) loss = add(loss, neg(sum(log_clamped(diagonal(softmax_rows(transpose2d(m))), eps))));
    return loss;
}

// ---- pretraining ---------------------------------------------------------

struct PretrainConfig {
    std::size_t steps = 200;
    std::size_t batch_size = 32;
    double learning_rate = 2e-4;
    bool symmetric = false;
    double log_eps = 1e-12;

    void validate() const {
        if (batch_size < 2) throw InvalidConfig("contrastive pretraining needs a batch size of at least 2");
        if (!(learning_rate > 0.0)) throw InvalidConfig("pretraining learning rate must be positive");
    }

    Json to_json() const {
        return {{"steps", steps}, {"batch_size", batch_size}, {"learning_rate", learning_rate},
                {"symmetric", symmetric}, {"log_eps", log_eps}};
    }

    static PretrainConfig from_json(const Json& j) {
        PretrainConfig c;
        c.steps = j.value("steps", c.steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.symmetric = j.value("symmetric", c.symmetric);
        c.log_eps = j.value("log_eps", c.log_eps);
        return c;
    }
};

inline constexpr const char* kEncoderCheckpointKind = "encoders";

template <class T>
Container encoder_container(Encoders<T>& enc) {
    Container c(kEncoderCheckpointKind);
    c.meta()["config"] = enc.config.to_json();
    c.meta()["vocabulary"] = enc.vocabulary.to_json();
    c.put_parameters(enc.parameters());
    return c;
}

/// Loads encoders from a checkpoint file; the architecture comes from its header.
template <class T>
std::unique_ptr<Encoders<T>> load_encoders(const fs::path& path) {
    const Container c = Container::load(path, kEncoderCheckpointKind);
    EncoderConfig cfg;
    Vocabulary vocab;
    try {
        cfg = EncoderConfig::from_json(c.meta().at("config"));
        vocab = Vocabulary::from_json(c.meta().at("vocabulary"));
    } catch (const Json::exception& e) {
        throw ParseError(std::string("encoder checkpoint header malformed: ") + e.what());
    }
    Rng rng(0);
    auto enc = std::make_unique<Encoders<T>>(cfg, std::move(vocab), rng);
    c.get_parameters(enc->parameters());
    return enc;
}

/// Owns encoders, optimizer and sampling state for contrastive pretraining,
/// with checkpoint and resume.
class EncoderPretrainer {
public:
    using LogSink = std::function<void(const Json&)>;

    EncoderPretrainer(EncoderConfig cfg, Vocabulary vocab, PretrainConfig pcfg, std::uint64_t seed)
        : pcfg_(validated(pcfg)), rng_(seed) {
        enc_ = std::make_unique<Encoders<float>>(cfg, std::move(vocab), rng_);
        init_optimizer();
    }

    static EncoderPretrainer resume(const fs::path& path, PretrainConfig pcfg) {
        const Container c = Container::load(path, kEncoderCheckpointKind);
        EncoderPretrainer p(pcfg);
        try {
            p.enc_ = load_encoders<float>(path);
            p.step_ = c.meta().at("step").get<std::size_t>();
            p.rng_ = restore_rng(c.meta().at("rng").get<std::string>());
        } catch (const Json::exception& e) {
            throw ParseError(std::string("encoder checkpoint lacks training state: ") + e.what());
        }
        p.init_optimizer();
        restore_optimizer(c, "adam", p.opt_);
        return p;
    }

    /// One optimizer step on a fresh batch; returns the batch loss.
    double step(const Corpus& corpus) {
        BatchSampler sampler(corpus, enc_->vocabulary, enc_->config.image_size, true);
        Batch b = sampler.sample(pcfg_.batch_size, rng_);
        opt_.zero_grad();
        Var<float> loss = objective(b);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericError("contrastive loss became non-finite at step " + std::to_string(step_));
        backward(loss);
        opt_.step();
        ++step_;
        return value;
    }

    /// Runs until `pcfg.steps` total steps, logging {step, loss}.
    void run(const Corpus& corpus, const LogSink& log = {}) {
        while (step_ < pcfg_.steps) {
            const double loss = step(corpus);
            if (log) log({{"step", step_}, {"loss", loss}});
        }
    }

    double evaluate(const Batch& b) const {
        NoGradGuard ng;
        return objective(b).value()[0];
    }

    void save(const fs::path& path) {
        Container c = encoder_container(*enc_);
        c.meta()["step"] = step_;
        c.meta()["rng"] = rng_state(rng_);
        c.meta()["pretrain"] = pcfg_.to_json();
        store_optimizer(c, "adam", opt_);
        c.save(path);
    }

    Encoders<float>& encoders() { return *enc_; }
    std::size_t steps_done() const { return step_; }
    Rng& rng() { return rng_; }

private:
    explicit EncoderPretrainer(PretrainConfig pcfg) : pcfg_(validated(pcfg)) {}

    static PretrainConfig validated(PretrainConfig c) {
        c.validate();
        return c;
    }

    void init_optimizer() {
        AdamConfig ac;
        ac.lr = pcfg_.learning_rate;
        ac.beta1 = 0.9;
        ac.beta2 = 0.999;
        opt_ = Adam<float>(enc_->parameters(), ac);
    }

    Var<float> objective(const Batch& b) const {
        Var<float> s = enc_->text(b.tokens);
        Var<float> f = enc_->image(Var<float>::constant(b.images));
        return contrastive_objective(s, f, pcfg_.symmetric, pcfg_.log_eps);
    }

    PretrainConfig pcfg_;
    Rng rng_;
    std::unique_ptr<Encoders<float>> enc_;
    Adam<float> opt_;
    std::size_t step_ = 0;
};

}  // namespace ratgan
