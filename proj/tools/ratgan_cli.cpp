// ratgan: command-line entry points for data synthesis, encoder pretraining,
// adversarial training, sampling, attention visualization and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "ratgan/ratgan.hpp"

using namespace ratgan;

namespace {

/// Appends one JSON record per line.
class JsonlLog {
public:
    explicit JsonlLog(const fs::path& path, bool append = false) {
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        os_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!os_) throw std::runtime_error("cannot write " + path.string());
    }
    void operator()(const Json& j) { os_ << j.dump() << '\n' << std::flush; }

private:
    std::ofstream os_;
};

/// Options shared by the commands that read a run configuration.
struct ConfigOptions {
    std::string config_path;
    std::string preset_name = "desk";
    std::string corpus;
    std::string output_root;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps, batch_size;

    void add_to(CLI::App* app, bool training_flags) {
        app->add_option("--config", config_path, "Run configuration file (JSON)")->check(CLI::ExistingFile);
        app->add_option("--preset", preset_name, "Named preset when no --config is given")
            ->check(CLI::IsMember(preset_names()));
        app->add_option("--corpus", corpus, "Corpus root (overrides the configuration)");
        app->add_option("--output-root", output_root, "Output directory (overrides the configuration)");
        app->add_option("--seed", seed, "Random seed for the whole run");
        if (training_flags) {
            app->add_option("--steps", steps, "Step budget (overrides the configuration)");
            app->add_option("--batch-size", batch_size, "Batch size (overrides the configuration)");
        }
    }

    RunConfig resolve() const {
        RunConfig c = config_path.empty() ? preset_config(preset_name) : load_run_config(config_path);
        if (!corpus.empty()) c.corpus = corpus;
        if (!output_root.empty()) c.output_root = output_root;
        if (seed) c.apply_seed(*seed);
        if (c.corpus.empty()) throw InvalidConfig("no corpus given (set \"corpus\" in the configuration or pass --corpus)");
        return c;
    }
};

std::vector<std::string> read_caption_file(const fs::path& path) {
    if (!fs::exists(path)) throw InvalidInput("captions file not found: " + path.string());
    auto lines = read_lines(path);
    if (lines.empty()) throw InvalidInput("captions file " + path.string() + " has no captions");
    return lines;
}

std::shared_ptr<Encoders<float>> encoders_for(const TrainedModels& m, const std::string& override_path) {
    const fs::path p = override_path.empty() ? fs::path(m.encoder_path) : fs::path(override_path);
    if (p.empty()) throw InvalidInput("checkpoint records no encoder path; pass --encoders");
    std::shared_ptr<Encoders<float>> enc = load_encoders<float>(p);
    m.check_encoder(*enc);
    return enc;
}

// ---- commands ------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SyntheticSpec spec;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const auto manifest = generate_synthetic_corpus(a.spec, a.seed, a.out);
    std::size_t test = 0;
    for (const auto& r : manifest) test += r.split == "test";
    std::printf("wrote %zu images (%zu train, %zu test) to %s\n", manifest.size(), manifest.size() - test, test,
                a.out.c_str());
    return 0;
}

int run_pretrain(const ConfigOptions& o, bool resume) {
    RunConfig c = o.resolve();
    if (o.steps) c.pretrain.steps = *o.steps;
    if (o.batch_size) c.pretrain.batch_size = *o.batch_size;
    c.validate();
    const Corpus train = load_images(load_corpus(c.corpus, "train"));
    const fs::path ckpt = c.encoder_path();
    std::optional<EncoderPretrainer> p;
    if (resume) {
        p.emplace(EncoderPretrainer::resume(ckpt, c.pretrain));
    } else {
        Vocabulary vocab = Vocabulary::build(train.all_captions());
        p.emplace(c.encoder, std::move(vocab), c.pretrain, c.seed);
    }
    // Held-out batch from the test split when there is one.
    std::optional<Corpus> held;
    try {
        held = load_images(load_corpus(c.corpus, "test"));
    } catch (const InvalidInput&) {
    }
    const Corpus& eval_corpus = held ? *held : train;
    Rng eval_rng(c.seed ^ 0xe7a1ULL);
    const Batch eval_batch = BatchSampler(eval_corpus, p->encoders().vocabulary, c.encoder.image_size, false)
                                 .sample(std::min<std::size_t>(c.pretrain.batch_size, std::max<std::size_t>(2, eval_corpus.size())), eval_rng);
    const double before = p->evaluate(eval_batch);
    JsonlLog log(fs::path(c.output_root) / "pretrain_log.jsonl", resume);
    p->run(train, std::ref(log));
    const double after = p->evaluate(eval_batch);
    p->save(ckpt);
    log({{"held_out_loss_before", before}, {"held_out_loss_after", after}});
    std::printf("pretrained %zu steps; held-out loss %.4f -> %.4f; wrote %s\n", p->steps_done(), before, after,
                ckpt.string().c_str());
    return 0;
}

struct TrainArgs {
    std::string ablation = "rat";
    std::string attention = "soft_threshold";
    std::string resume;
    std::optional<std::size_t> sample_every, checkpoint_every;
    bool wall_time = false;
};

int run_train(const ConfigOptions& o, const TrainArgs& a) {
    RunConfig c = o.resolve();
    if (o.steps) {
        c.setup.train.steps = *o.steps;
        c.setup.train.epochs = 0;
    }
    if (o.batch_size) c.setup.train.batch_size = *o.batch_size;
    c.setup.generator.conditioning = parse_conditioning(a.ablation);
    c.setup.discriminator.attention = parse_attention_mode(a.attention);
    if (a.sample_every) c.setup.train.sample_every = *a.sample_every;
    if (a.checkpoint_every) c.setup.train.checkpoint_every = *a.checkpoint_every;
    if (a.wall_time) c.setup.train.log_wall_time = true;
    c.setup.train.output_dir = c.train_dir().string();
    c.validate();

    std::shared_ptr<Encoders<float>> enc = load_encoders<float>(c.encoder_path());
    const Corpus train = load_images(load_corpus(c.corpus, "train"));
    std::unique_ptr<Trainer> t;
    if (a.resume.empty()) {
        t = std::make_unique<Trainer>(c.setup, train, enc, c.encoder_path().string());
        fs::create_directories(c.train_dir());
        atomic_write(c.train_dir() / "config.json", c.to_json().dump(2) + "\n");
    } else {
        t = Trainer::resume(a.resume, train, enc);
    }
    JsonlLog log(c.train_dir() / "metrics.jsonl", !a.resume.empty());
    t->run(std::ref(log));
    const fs::path final_ckpt = c.train_dir() / "final.ckpt";
    t->save(final_ckpt);
    write_png(c.train_dir() / "final_grid.png", t->sample_grid());
    std::printf("trained %zu steps (%s, attention %s); wrote %s\n", t->steps_done(), a.ablation.c_str(),
                a.attention.c_str(), final_ckpt.string().c_str());
    return 0;
}

struct SampleArgs {
    std::string checkpoint, captions, out, encoders;
    std::size_t count = 10;
    std::uint64_t seed = 0;
};

int run_sample(const SampleArgs& a) {
    if (a.count == 0) throw InvalidInput("--count must be positive");
    const TrainedModels m = load_trained_models(a.checkpoint);
    const auto enc = encoders_for(m, a.encoders);
    const auto captions = read_caption_file(a.captions);
    Rng rng(a.seed);
    std::vector<Image> cells;
    for (const auto& cap : captions) {
        const Tensor<float> s = enc->embed_captions(std::vector<std::string>(a.count, cap));
        const Tensor<float> z = sample_noise<float>(a.count, m.setup.generator.noise_width, rng);
        const Tensor<float> imgs = synthesize(*m.generator, z, s);
        for (std::size_t i = 0; i < a.count; ++i) cells.push_back(image_from_batch(imgs, i));
    }
    write_grid(a.out, cells, captions.size(), a.count);
    std::printf("wrote %zu samples (%zu captions x %zu) to %s\n", cells.size(), captions.size(), a.count, a.out.c_str());
    return 0;
}

struct AttnArgs {
    std::string checkpoint, captions, out, encoders;
    std::vector<std::string> images;
};

int run_attn_viz(const AttnArgs& a) {
    const TrainedModels m = load_trained_models(a.checkpoint);
    if (m.setup.discriminator.attention == AttentionMode::off)
        throw InvalidInput("checkpoint was trained without spatial attention");
    const auto enc = encoders_for(m, a.encoders);
    const auto captions = read_caption_file(a.captions);
    if (captions.size() != a.images.size())
        throw InvalidInput(std::to_string(a.images.size()) + " images but " + std::to_string(captions.size()) +
                           " captions; pass one caption per image");
    const std::size_t size = m.setup.discriminator.image_size, res = m.setup.discriminator.attention_resolution;
    fs::create_directories(a.out);
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        const Image img = fit_to(read_png(a.images[i]), size);
        Tensor<float> x({1, 3, size, size});
        store_image(img, x, 0);
        const Tensor<float> s = enc->embed_captions({captions[i]});
        NoGradGuard ng;
        const auto out = m.discriminator->discriminate(Var<float>::constant(x), Var<float>::constant(s));
        const AttentionMap alpha = AttentionMap::from_weights(out.alpha.value(), 0, res, res);
        const AttentionMap heat = upsample_attention(normalize_attention(alpha), size / res);
        char name[32];
        std::snprintf(name, sizeof name, "overlay_%03zu.png", i);
        write_png(fs::path(a.out) / name, heatmap_overlay(img, heat));
    }
    std::printf("wrote %zu overlays at %zux%zu to %s\n", a.images.size(), size, size, a.out.c_str());
    return 0;
}

struct EvalArgs {
    std::string checkpoint, corpus, probe, out, encoders;
    std::size_t samples = 512;
    std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
    const TrainedModels m = load_trained_models(a.checkpoint);
    const auto enc = encoders_for(m, a.encoders);
    const Probe probe = Probe::load(a.probe);
    const auto manifest = read_manifest(fs::path(a.corpus) / "manifest.jsonl");
    const Corpus train = load_images(load_corpus(a.corpus, "train"));
    const auto labels = corpus_labels(train, manifest, probe.attributes());
    const auto real = FeatureStats::from_features(probe.predict(corpus_tensor(train, probe.config().image_size)).features);
    EvalConfig cfg;
    cfg.samples = a.samples;
    cfg.seed = a.seed;
    const EvalReport rep = evaluate_generator(*m.generator, *enc, train, labels, probe, real, cfg);
    const std::string text = rep.to_json().dump(2) + "\n";
    if (!a.out.empty()) atomic_write(a.out, text);
    std::cout << text;
    return 0;
}

struct ProbeArgs {
    std::string corpus, out;
    std::optional<std::size_t> steps;
    std::uint64_t seed = 0;
};

int run_train_probe(const ProbeArgs& a) {
    const auto manifest = read_manifest(fs::path(a.corpus) / "manifest.jsonl");
    const AttributeSet attrs = AttributeSet::from_manifest(manifest);
    auto [fit, held] = probe_holdout(load_images(load_corpus(a.corpus, "all")));
    ProbeConfig cfg;
    cfg.seed = a.seed;
    if (a.steps) cfg.steps = *a.steps;
    Probe probe(cfg, attrs);
    probe.fit(fit, corpus_labels(fit, manifest, attrs));
    probe.save(a.out);
    const auto acc = probe.accuracy(corpus_tensor(held, cfg.image_size), corpus_labels(held, manifest, attrs));
    std::printf("probe %s held-out accuracy %s; wrote %s\n", probe.extractor_id().c_str(), acc.to_json().dump().c_str(),
                a.out.c_str());
    if (std::min({acc.color, acc.shape, acc.background}) < 0.95) {
        std::fprintf(stderr, "error: probe accuracy on held-out images is below 0.95\n");
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recurrent affine transformation GAN for text-to-image synthesis"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth-data", "Generate the synthetic colored-shapes corpus");
    s->add_option("--out", synth.out, "Corpus directory to create")->required();
    s->add_option("--count", synth.spec.count, "Number of images");
    s->add_option("--size", synth.spec.size, "Image side in pixels");
    s->add_option("--captions-per-image", synth.spec.captions_per_image, "Captions per image");
    s->add_option("--test-every", synth.spec.test_every, "Hold out one attribute combination in this many");
    s->add_option("--seed", synth.seed, "Random seed");

    ConfigOptions pre_opts;
    bool pre_resume = false;
    auto* p = app.add_subcommand("pretrain", "Pretrain the text and image encoders contrastively");
    pre_opts.add_to(p, true);
    p->add_flag("--resume", pre_resume, "Continue from the existing encoder checkpoint");

    ConfigOptions train_opts;
    TrainArgs train;
    auto* t = app.add_subcommand("train", "Adversarial training with a frozen text encoder");
    train_opts.add_to(t, true);
    t->add_option("--ablation", train.ablation, "Generator conditioning")
        ->check(CLI::IsMember({"rat", "shallow", "stacked_mlp"}));
    t->add_option("--attention", train.attention, "Discriminator spatial attention")
        ->check(CLI::IsMember({"soft_threshold", "softmax", "off"}));
    t->add_option("--resume", train.resume, "Training checkpoint to continue from")->check(CLI::ExistingFile);
    t->add_option("--sample-every", train.sample_every, "Write a sample grid every N steps");
    t->add_option("--checkpoint-every", train.checkpoint_every, "Write a checkpoint every N steps");
    t->add_flag("--wall-time", train.wall_time, "Record per-step wall time in the metric log");

    SampleArgs sample;
    auto* sa = app.add_subcommand("sample", "Generate images for captions");
    sa->add_option("--checkpoint", sample.checkpoint, "Training checkpoint")->required();
    sa->add_option("--captions", sample.captions, "Text file with one caption per line")->required();
    sa->add_option("--count", sample.count, "Images per caption");
    sa->add_option("--seed", sample.seed, "Noise seed");
    sa->add_option("--out", sample.out, "Output PNG grid")->required();
    sa->add_option("--encoders", sample.encoders, "Encoder checkpoint (default: the one recorded at training)");

    AttnArgs attn;
    auto* av = app.add_subcommand("attn-viz", "Overlay discriminator attention on images");
    av->add_option("--checkpoint", attn.checkpoint, "Training checkpoint")->required();
    av->add_option("--images", attn.images, "Input PNG images")->required()->check(CLI::ExistingFile);
    av->add_option("--captions", attn.captions, "Text file with one caption per image")->required();
    av->add_option("--out", attn.out, "Output directory")->required();
    av->add_option("--encoders", attn.encoders, "Encoder checkpoint (default: the one recorded at training)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Desk-FID, inception score and caption consistency");
    e->add_option("--checkpoint", ev.checkpoint, "Training checkpoint")->required();
    e->add_option("--corpus", ev.corpus, "Synthetic corpus root")->required();
    e->add_option("--probe", ev.probe, "Probe checkpoint used as feature extractor")->required();
    e->add_option("--samples", ev.samples, "Number of generated samples");
    e->add_option("--seed", ev.seed, "Sampling seed");
    e->add_option("--out", ev.out, "Report file (JSON)");
    e->add_option("--encoders", ev.encoders, "Encoder checkpoint (default: the one recorded at training)");

    ProbeArgs pr;
    auto* tp = app.add_subcommand("train-probe", "Train the attribute probe used by eval");
    tp->add_option("--corpus", pr.corpus, "Synthetic corpus root")->required();
    tp->add_option("--out", pr.out, "Probe checkpoint to write")->required();
    tp->add_option("--steps", pr.steps, "Training steps");
    tp->add_option("--seed", pr.seed, "Random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : 2;
    }

    try {
        if (s->parsed()) return run_synth(synth);
        if (p->parsed()) return run_pretrain(pre_opts, pre_resume);
        if (t->parsed()) return run_train(train_opts, train);
        if (sa->parsed()) return run_sample(sample);
        if (av->parsed()) return run_attn_viz(attn);
        if (e->parsed()) return run_eval(ev);
        if (tp->parsed()) return run_train_probe(pr);
    } catch (const InvalidConfig& err) {
        std::fprintf(stderr, "configuration error: %s\n", err.what());
        return 2;
    } catch (const InvalidInput& err) {
        std::fprintf(stderr, "invalid input: %s\n", err.what());
        return 2;
    } catch (const IncompatibleVersion& err) {
        std::fprintf(stderr, "incompatible file: %s\n", err.what());
        return 2;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
    return 2;
}
