#pragma once

// Alternating adversarial training: one discriminator update (hinge loss on
// real/fake/mismatched pairs plus the matching-aware gradient penalty) then
// one generator update on fresh noise.  The text encoder stays frozen.

#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "ratgan/data.hpp"
#include "ratgan/discriminator.hpp"
#include "ratgan/encoders.hpp"
#include "ratgan/generator.hpp"
#include "ratgan/image.hpp"
#include "ratgan/objectives.hpp"
#include "ratgan/optim.hpp"

namespace ratgan {

struct TrainConfig {
    double g_lr = 1e-4;
    double d_lr = 4e-4;
    double beta1 = 0.0;
    double beta2 = 0.9;
    std::size_t batch_size = 16;
    std::size_t steps = 2000;   // used when epochs == 0
    std::size_t epochs = 0;     // when > 0, steps = epochs * ceil(corpus / batch)
    std::uint64_t seed = 0;
    bool augment = true;
    PenaltyConfig penalty;
    std::size_t log_every = 1;
    std::size_t sample_every = 0;      // 0: no periodic grids
    std::size_t checkpoint_every = 0;  // 0: no periodic checkpoints
    std::size_t grid_size = 16;
    std::size_t grid_columns = 4;
    bool log_wall_time = false;
    std::string output_dir;

    void validate() const {
        if (!(g_lr > 0) || !(d_lr > 0)) throw InvalidConfig("learning rates must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw InvalidConfig("Adam betas must lie in [0, 1)");
        if (batch_size < 2) throw InvalidConfig("batch size must be at least 2, got " + std::to_string(batch_size));
        if (steps == 0 && epochs == 0) throw InvalidConfig("training needs a positive step or epoch count");
        if (log_every == 0) throw InvalidConfig("log_every must be at least 1");
        if (grid_size == 0 || grid_columns == 0) throw InvalidConfig("sample grid must be nonempty");
        penalty.validate();
    }

    std::size_t total_steps(std::size_t corpus_size) const {
        if (epochs == 0) return steps;
        return epochs * ((corpus_size + batch_size - 1) / batch_size);
    }

    Json to_json() const {
        return {{"g_lr", g_lr},
                {"d_lr", d_lr},
                {"beta1", beta1},
                {"beta2", beta2},
                {"batch_size", batch_size},
                {"steps", steps},
                {"epochs", epochs},
                {"seed", seed},
                {"augment", augment},
                {"penalty", penalty.to_json()},
                {"log_every", log_every},
                {"sample_every", sample_every},
                {"checkpoint_every", checkpoint_every},
                {"grid_size", grid_size},
                {"grid_columns", grid_columns},
                {"log_wall_time", log_wall_time},
                {"output_dir", output_dir}};
    }

    static TrainConfig from_json(const Json& j) {
        TrainConfig c;
        c.g_lr = j.value("g_lr", c.g_lr);
        c.d_lr = j.value("d_lr", c.d_lr);
        c.beta1 = j.value("beta1", c.beta1);
        c.beta2 = j.value("beta2", c.beta2);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.steps = j.value("steps", c.steps);
        c.epochs = j.value("epochs", c.epochs);
        c.seed = j.value("seed", c.seed);
        c.augment = j.value("augment", c.augment);
        if (j.contains("penalty")) c.penalty = PenaltyConfig::from_json(j.at("penalty"));
        c.log_every = j.value("log_every", c.log_every);
        c.sample_every = j.value("sample_every", c.sample_every);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.grid_size = j.value("grid_size", c.grid_size);
        c.grid_columns = j.value("grid_columns", c.grid_columns);
        c.log_wall_time = j.value("log_wall_time", c.log_wall_time);
        c.output_dir = j.value("output_dir", c.output_dir);
        return c;
    }
};

/// Everything needed to build the adversarial models and their optimizers.
struct TrainSetup {
    TrainConfig train;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;

    /// Cross-module width checks against the sentence encoder.
    void validate(const EncoderConfig& enc) const {
        train.validate();
        generator.validate();
        discriminator.validate();
        if (generator.sentence_width != enc.sentence_width || discriminator.sentence_width != enc.sentence_width)
            throw InvalidConfig("sentence width mismatch: encoder " + std::to_string(enc.sentence_width) +
                                ", generator " + std::to_string(generator.sentence_width) + ", discriminator " +
                                std::to_string(discriminator.sentence_width));
        if (generator.output_resolution() != discriminator.image_size)
            throw InvalidConfig("generator output resolution " + std::to_string(generator.output_resolution()) +
                                " does not match discriminator input " + std::to_string(discriminator.image_size));
    }

    Json to_json() const {
        return {{"train", train.to_json()}, {"generator", generator.to_json()}, {"discriminator", discriminator.to_json()}};
    }

    static TrainSetup from_json(const Json& j) {
        return {TrainConfig::from_json(j.at("train")), GeneratorConfig::from_json(j.at("generator")),
                DiscriminatorConfig::from_json(j.at("discriminator"))};
    }
};

struct StepRecord {
    std::size_t step = 0;  // 1-based index of this update
    LossBreakdown d;
    double g_adv = 0;
    double mean_abs_pixel = 0;
    std::string grid_path;
    std::optional<double> wall_time;

    Json to_json() const {
        Json j{{"step", step},
               {"d_real_match", d.real_match},
               {"d_fake_match", d.fake_match},
               {"d_real_mismatch", d.real_mismatch},
               {"d_gradient_penalty", d.gradient_penalty},
               {"d_total", d.total},
               {"g_adv", g_adv},
               {"mean_abs_pixel", mean_abs_pixel}};
        if (!grid_path.empty()) j["grid"] = grid_path;
        if (wall_time) j["wall_time"] = *wall_time;
        return j;
    }
};

inline constexpr const char* kTrainCheckpointKind = "ratgan-train";

/// Owns the generator, the discriminator (plus its dual-number twin used for
/// the penalty's parameter gradient) and both optimizers.
class Trainer {
public:
    using LogSink = std::function<void(const Json&)>;

    Trainer(TrainSetup setup, const Corpus& corpus, std::shared_ptr<Encoders<float>> encoders,
            std::string encoder_path = {})
        : setup_(std::move(setup)), corpus_(&corpus), enc_(std::move(encoders)), encoder_path_(std::move(encoder_path)) {
        if (!enc_) throw InvalidInput("trainer needs a text encoder");
        setup_.validate(enc_->config);
        if (corpus.size() == 0) throw InvalidInput("training corpus is empty");
        build();
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// Restores a checkpoint; the encoder must be the one training started with.
    static std::unique_ptr<Trainer> resume(const fs::path& path, const Corpus& corpus,
                                           std::shared_ptr<Encoders<float>> encoders) {
        const Container c = Container::load(path, kTrainCheckpointKind);
        std::unique_ptr<Trainer> t;
        try {
            const Json& m = c.meta();
            t = std::make_unique<Trainer>(TrainSetup::from_json(m.at("setup")), corpus, std::move(encoders),
                                          m.at("encoder").at("path").get<std::string>());
            if (m.at("encoder").at("hash").get<std::uint64_t>() != t->encoder_hash_)
                throw InvalidInput("encoder parameters differ from the ones recorded in " + path.string());
            t->step_ = m.at("step").get<std::size_t>();
            t->rng_ = restore_rng(m.at("rng").get<std::string>());
        } catch (const Json::exception& e) {
            throw ParseError("training checkpoint " + path.string() + " is missing fields: " + e.what());
        }
        c.get_parameters(t->g_->parameters());
        c.get_parameters(t->d_->parameters());
        restore_optimizer(c, "adam_g", t->g_opt_);
        restore_optimizer(c, "adam_d", t->d_opt_);
        return t;
    }

    void save(const fs::path& path) {
        Container c(kTrainCheckpointKind);
        c.meta()["setup"] = setup_.to_json();
        c.meta()["step"] = step_;
        c.meta()["rng"] = rng_state(rng_);
        c.meta()["encoder"] = {{"path", encoder_path_}, {"hash", encoder_hash_}};
        c.put_parameters(g_->parameters());
        c.put_parameters(d_->parameters());
        store_optimizer(c, "adam_g", g_opt_);
        store_optimizer(c, "adam_d", d_opt_);
        c.save(path);
    }

    /// One discriminator update followed by one generator update.
    StepRecord step() {
        const auto t0 = std::chrono::steady_clock::now();
        const std::size_t n = setup_.train.batch_size;
        Batch batch = sampler_->sample(n, rng_);
        const Tensor<float> s = enc_->embed_text(batch.tokens);
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        const auto shifted = sample_mismatched_captions(order);
        Tensor<float> s_mis(s.shape());
        const std::size_t w = s.dim(1);
        for (std::size_t i = 0; i < n; ++i) std::copy_n(s.data() + shifted[i] * w, w, s_mis.data() + i * w);

        StepRecord rec;
        rec.step = step_ + 1;

        // Discriminator.
        const Tensor<float> z = sample_noise<float>(n, setup_.generator.noise_width, rng_);
        const Tensor<float> fake = synthesize(*g_, z, s);
        auto scorer = [this](const Var<float>& x, const Var<float>& ss) { return d_->discriminate(x, ss).score; };
        auto dual_scorer = [this](const Var<Dual<float>>& x, const Var<Dual<float>>& ss) {
            return d_dual_->discriminate(x, ss).score;
        };
        PenaltyEvaluation<float> pe;
        try {
            pe = evaluate_penalty<float>(scorer, batch.images, s, setup_.train.penalty);
        } catch (const NumericError&) {
            rec.d.gradient_penalty = NAN;
            fail(rec, batch, "gradient penalty");
        }
        d_opt_.zero_grad();
        if (setup_.train.penalty.weight > 0) {
            copy_parameters<Dual<float>, float>(d_params_, d_dual_params_);
            accumulate_penalty_gradient<float>(dual_scorer, d_dual_params_, d_params_, batch.images, s, pe);
        }
        const Var<float> real = Var<float>::constant(batch.images), sv = Var<float>::constant(s);
        const Var<float> p_real = d_->downsample_encode(real);
        const AttentionMode mode = setup_.discriminator.attention;
        auto hinge = d_hinge_terms(d_->score(p_real, sv, mode).score,
                                   d_->discriminate(Var<float>::constant(fake), sv).score,
                                   d_->score(p_real, Var<float>::constant(s_mis), mode).score);
        rec.d = hinge.breakdown();
        rec.d.gradient_penalty = pe.value;
        rec.d.total += pe.value;
        if (!rec.d.finite()) fail(rec, batch, "discriminator loss");
        backward(hinge.total);
        d_opt_.step();

        // Generator on fresh noise.
        const Tensor<float> z2 = sample_noise<float>(n, setup_.generator.noise_width, rng_);
        g_opt_.zero_grad();
        const Var<float> img = (*g_)(Var<float>::constant(z2), sv);
        const Var<float> g_loss = g_adv_loss(d_->discriminate(img, sv).score);
        rec.g_adv = g_loss.value()[0];
        double abs_sum = 0;
        for (float v : img.value().values()) abs_sum += std::abs(v);
        rec.mean_abs_pixel = abs_sum / static_cast<double>(img.value().size());
        if (!std::isfinite(rec.g_adv) || !std::isfinite(rec.mean_abs_pixel)) fail(rec, batch, "generator loss");
        backward(g_loss);
        g_opt_.step();

        if (parameter_hash(text_params_) != encoder_hash_)
            throw std::logic_error("text encoder parameters changed during training");

        ++step_;
        if (setup_.train.sample_every > 0 && step_ % setup_.train.sample_every == 0 && !setup_.train.output_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06zu.png", step_);
            const fs::path p = fs::path(setup_.train.output_dir) / "samples" / name;
            write_png(p, sample_grid());
            rec.grid_path = p.string();
        }
        if (setup_.train.checkpoint_every > 0 && step_ % setup_.train.checkpoint_every == 0 &&
            !setup_.train.output_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof name, "step_%06zu.ckpt", step_);
            save(fs::path(setup_.train.output_dir) / "checkpoints" / name);
        }
        if (setup_.train.log_wall_time)
            rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return rec;
    }

    /// Runs until `until` total steps (default: the configured budget), logging every log_every steps.
    void run(const LogSink& log = {}, std::optional<std::size_t> until = std::nullopt) {
        const std::size_t target = until.value_or(total_steps());
        while (step_ < target) {
            StepRecord r = step();
            if (log && (r.step % setup_.train.log_every == 0 || !r.grid_path.empty())) log(r.to_json());
        }
    }

    /// Generator outputs for the fixed grid noise and captions.
    Image sample_grid() const {
        const Tensor<float> imgs = synthesize(*g_, grid_z_, grid_s_);
        std::vector<Image> cells;
        for (std::size_t i = 0; i < imgs.dim(0); ++i) cells.push_back(image_from_batch(imgs, i));
        return make_grid(cells, setup_.train.grid_columns);
    }

    std::size_t total_steps() const { return setup_.train.total_steps(corpus_->size()); }
    std::size_t steps_done() const { return step_; }
    const TrainSetup& setup() const { return setup_; }
    Generator<float>& generator() { return *g_; }
    Discriminator<float>& discriminator() { return *d_; }
    const Encoders<float>& encoders() const { return *enc_; }
    std::uint64_t encoder_hash() const { return encoder_hash_; }
    const std::vector<std::string>& grid_captions() const { return grid_captions_; }

private:
    void build() {
        rng_ = Rng(setup_.train.seed);
        Rng init_rng(setup_.train.seed ^ 0x9e3779b97f4a7c15ULL);
        g_ = std::make_unique<Generator<float>>(setup_.generator, init_rng);
        d_ = std::make_unique<Discriminator<float>>(setup_.discriminator, init_rng);
        Rng twin_rng(0);
        d_dual_ = std::make_unique<Discriminator<Dual<float>>>(setup_.discriminator, twin_rng);
        d_params_ = d_->parameters();
        d_dual_params_ = d_dual_->parameters();
        g_opt_ = Adam<float>(g_->parameters(), {setup_.train.g_lr, setup_.train.beta1, setup_.train.beta2, 1e-8});
        d_opt_ = Adam<float>(d_params_, {setup_.train.d_lr, setup_.train.beta1, setup_.train.beta2, 1e-8});
        sampler_ = std::make_unique<BatchSampler>(*corpus_, enc_->vocabulary, setup_.discriminator.image_size,
                                                 setup_.train.augment);
        text_params_ = enc_->text_parameters();
        encoder_hash_ = parameter_hash(text_params_);

        // Fixed grid: the first caption of evenly spaced records, noise from a separate stream.
        const std::size_t g = setup_.train.grid_size;
        for (std::size_t i = 0; i < g; ++i)
            grid_captions_.push_back(corpus_->records[(i * corpus_->size() / g) % corpus_->size()].captions.front());
        grid_s_ = enc_->embed_captions(grid_captions_);
        Rng grid_rng(setup_.train.seed ^ 0x5bd1e995ULL);
        grid_z_ = sample_noise<float>(g, setup_.generator.noise_width, grid_rng);
    }

    [[noreturn]] void fail(const StepRecord& rec, const Batch& batch, const std::string& what) {
        Json dump = rec.to_json();
        dump["reason"] = what + " is not finite";
        dump["batch_ids"] = batch.ids;
        dump["batch_captions"] = batch.captions;
        std::string where;
        if (!setup_.train.output_dir.empty()) {
            const fs::path p = fs::path(setup_.train.output_dir) / ("diagnostic_step" + std::to_string(rec.step) + ".json");
            atomic_write(p, dump.dump(2) + "\n");
            where = "; diagnostics written to " + p.string();
        }
        throw NumericError(what + " became non-finite at step " + std::to_string(rec.step) + " (" +
                           rec.d.to_json().dump() + ")" + where);
    }

    TrainSetup setup_;
    const Corpus* corpus_;
    std::shared_ptr<Encoders<float>> enc_;
    std::string encoder_path_;
    ParamRefs<float> text_params_;
    std::uint64_t encoder_hash_ = 0;

    Rng rng_;
    std::unique_ptr<Generator<float>> g_;
    std::unique_ptr<Discriminator<float>> d_;
    std::unique_ptr<Discriminator<Dual<float>>> d_dual_;
    ParamRefs<float> d_params_;
    ParamRefs<Dual<float>> d_dual_params_;
    Adam<float> g_opt_, d_opt_;
    std::unique_ptr<BatchSampler> sampler_;
    std::size_t step_ = 0;

    std::vector<std::string> grid_captions_;
    Tensor<float> grid_s_, grid_z_;
};

/// Generator and discriminator restored from a training checkpoint, for
/// sampling, visualization and evaluation.
struct TrainedModels {
    TrainSetup setup;
    std::string encoder_path;
    std::uint64_t encoder_hash = 0;
    std::size_t step = 0;
    std::unique_ptr<Generator<float>> generator;
    std::unique_ptr<Discriminator<float>> discriminator;

    /// Throws InvalidInput unless `enc` carries the text encoder training used.
    void check_encoder(Encoders<float>& enc) const {
        setup.validate(enc.config);
        if (parameter_hash(enc.text_parameters()) != encoder_hash)
            throw InvalidInput("text encoder differs from the one this checkpoint was trained with");
    }
};

inline TrainedModels load_trained_models(const fs::path& path) {
    const Container c = Container::load(path, kTrainCheckpointKind);
    TrainedModels m;
    try {
        const Json& meta = c.meta();
        m.setup = TrainSetup::from_json(meta.at("setup"));
        m.encoder_path = meta.at("encoder").at("path").get<std::string>();
        m.encoder_hash = meta.at("encoder").at("hash").get<std::uint64_t>();
        m.step = meta.at("step").get<std::size_t>();
    } catch (const Json::exception& e) {
        throw ParseError("training checkpoint " + path.string() + " is missing fields: " + e.what());
    }
    Rng rng(0);
    m.generator = std::make_unique<Generator<float>>(m.setup.generator, rng);
    m.discriminator = std::make_unique<Discriminator<float>>(m.setup.discriminator, rng);
    c.get_parameters(m.generator->parameters());
    c.get_parameters(m.discriminator->parameters());
    return m;
}

}  // namespace ratgan
