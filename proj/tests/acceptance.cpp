// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Tolerances are pinned here; the oracles are written out independently of
// the library code they check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>

#include "ratgan/ratgan.hpp"
#include "test_util.hpp"

using namespace ratgan;
using ratgan::testing::check_graph;
using ratgan::testing::check_parameters;
using ratgan::testing::project;
using ratgan::testing::random_tensor;
using ratgan::testing::TempDir;

namespace {

using VD = Var<double>;
using DD = Dual<double>;
VD C(const Tensor<double>& t) { return VD::constant(t); }

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        if (!detail.empty()) detail += "; ";
        detail += (ok ? "" : "FAILED ") + what;
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- 1. gradients ----------------------------------------------------------

EncoderConfig tiny_encoder_config() {
    EncoderConfig c;
    c.embedding_width = 4;
    c.hidden_width = 3;
    c.sentence_width = 5;
    c.image_size = 8;
    c.image_channels = {2, 3};
    return c;
}

DiscriminatorConfig tiny_disc_config() {
    DiscriminatorConfig cfg;
    cfg.image_size = 8;
    cfg.base_channels = 2;
    cfg.max_channels = 3;
    cfg.attention_resolution = 4;
    cfg.sentence_width = 3;
    cfg.energy_hidden = 3;
    return cfg;
}

GeneratorConfig tiny_gen_config(Conditioning c = Conditioning::rat) {
    GeneratorConfig cfg;
    cfg.noise_width = 3;
    cfg.block_count = 2;
    cfg.base_channels = 4;
    cfg.channel_floor = 2;
    cfg.init_resolution = 2;
    cfg.sentence_width = 3;
    cfg.hidden_width = 3;
    cfg.sub_units = 1;
    cfg.conditioning = c;
    cfg.head_init = HeadInit::random;
    return cfg;
}

Outcome gradients() {
    Outcome o;
    const auto t0 = Clock::now();
    auto record = [&](const std::string& name, const GradCheckReport& r, double tol) {
        o.require(r.passed(tol), name + " " + fmt("%.2e", r.max_rel_error));
    };

    {  // (a) token ids -> text encoder, pixels -> image encoder -> contrastive loss
        Rng rng(1);
        Encoders<double> enc(tiny_encoder_config(), Vocabulary::build({"a red circle", "a blue square"}), rng);
        const std::vector<TokenSequence> text = {enc.vocabulary.encode("a red circle"),
                                                 enc.vocabulary.encode("blue square"),
                                                 enc.vocabulary.encode("a circle")};
        const Tensor<double> images = random_tensor({3, 3, 8, 8}, rng);
        auto loss = [&] { return contrastive_objective(enc.text(text), enc.image(C(images))); };
        GradCheckReport r = check_parameters(enc.parameters(), loss);
        std::vector<Tensor<double>> in = {images};
        r.merge(check_graph(in, [&](const std::vector<VD>& v) {
            return contrastive_objective(C(enc.embed_text(text)), enc.image(v[0]));
        }));
        record("contrastive", r, 1e-4);
    }
    {  // (b) one RAT block with the controller threaded through both sub-units
        Rng rng(2);
        RATBlockConfig cfg{3, 2, 3, 2, 3};
        Controller<double> ctl("ctl", 3, cfg.hidden_width, cfg.sentence_width, rng);
        AffineHeads<double> heads("heads", cfg.hidden_width);
        RATBlock<double> block("block", cfg, heads, rng, HeadInit::random);
        std::vector<Tensor<double>> in = {random_tensor({2, 3, 3, 3}, rng), random_tensor({2, 2}, rng),
                                          random_tensor({2, 3}, rng)};
        auto f = [&](const std::vector<VD>& v) {
            auto out = rat_block_forward(block, v[0], ctl.init(v[2]), v[1], ctl, heads);
            return concat<double>({reshape(out.fm, {2, 27}), out.state.h, out.state.c}, 1);
        };
        GradCheckReport r = check_graph(in, f);
        ParamRefs<double> params;
        ctl.collect(params);
        heads.collect(params);
        block.collect(params);
        r.merge(check_parameters(params, [&] {
            std::vector<VD> v;
            for (auto& t : in) v.push_back(C(t));
            return project(f(v));
        }));
        record("rat_block", r, 1e-4);
    }
    {  // (c) spatial attention alone, then the whole discriminator
        Rng rng(3);
        Discriminator<double> d(tiny_disc_config(), rng);
        std::vector<Tensor<double>> feat = {random_tensor({2, d.feature_channels(), 4, 4}, rng),
                                            random_tensor({2, 3}, rng)};
        GradCheckReport r = check_graph(feat, [&](const std::vector<VD>& v) {
            auto att = d.spatial_attention(v[0], v[1], AttentionMode::soft_threshold);
            return concat<double>({att.alpha, reshape(att.gated, {2, 3 * 16})}, 1);
        });
        std::vector<Tensor<double>> in = {random_tensor({2, 3, 8, 8}, rng), random_tensor({2, 3}, rng)};
        r.merge(check_graph(in, [&](const std::vector<VD>& v) { return d.discriminate(v[0], v[1]).score; }));
        r.merge(check_parameters(d.parameters(), [&] { return project(d.discriminate(C(in[0]), C(in[1])).score); }));
        record("attention+discriminate", r, 1e-4);
    }
    {  // (d) hinge terms plus MA-GP, gradient with respect to D's parameters
        Rng rng(4), twin_rng(4);
        Discriminator<double> d(tiny_disc_config(), rng);
        Discriminator<DD> dual(tiny_disc_config(), twin_rng);
        copy_parameters<DD, double>(d.parameters(), dual.parameters());
        auto scorer = [&](const VD& x, const VD& s) { return d.discriminate(x, s).score; };
        auto dual_scorer = [&](const Var<DD>& x, const Var<DD>& s) { return dual.discriminate(x, s).score; };
        auto real = random_tensor({3, 3, 8, 8}, rng, 0.5), fake = random_tensor({3, 3, 8, 8}, rng, 0.5),
             s = random_tensor({3, 3}, rng);
        Tensor<double> s_mis(s.shape());
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) s_mis.at(i, j) = s.at((i + 1) % 3, j);
        PenaltyConfig pc;
        auto hinge = [&] {
            return d_hinge_terms(d.discriminate(C(real), C(s)).score, d.discriminate(C(fake), C(s)).score,
                                 d.discriminate(C(real), C(s_mis)).score)
                .total;
        };
        auto params = d.parameters();
        auto pe = evaluate_penalty<double>(scorer, real, s, pc);
        zero_grads(params);
        accumulate_penalty_gradient<double>(dual_scorer, dual.parameters(), params, real, s, pe);
        backward(hinge());
        std::vector<Tensor<double>> analytic;
        for (auto* q : params) analytic.push_back(q->grad());
        auto loss = [&] {
            double h;
            {
                NoGradGuard ng;
                h = hinge().value()[0];
            }
            return h + ma_gp_penalty(scorer, real, s, pc);
        };
        GradCheckReport r;
        for (std::size_t k = 0; k < params.size(); ++k)
            r.merge(finite_difference_check(loss, params[k]->value(), analytic[k]));
        record("hinge+ma_gp", r, 1e-4);
    }
    {  // (e) z, s -> G -> D -> generator and discriminator losses
        Rng rng(5);
        Generator<double> g(tiny_gen_config(), rng);
        Discriminator<double> d(tiny_disc_config(), rng);
        std::vector<Tensor<double>> in = {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
        auto f = [&](const std::vector<VD>& v) {
            VD fake = g(v[0], v[1]);
            VD score = d.discriminate(fake, v[1]).score;
            return concat<double>({reshape(g_adv_loss(score), {1}), reshape(mean(score), {1})}, 0);
        };
        GradCheckReport r = check_graph(in, f);
        ParamRefs<double> params = g.parameters();
        for (auto* p : d.parameters()) params.push_back(p);
        r.merge(check_parameters(params, [&] {
            return g_adv_loss(d.discriminate(g(C(in[0]), C(in[1])), C(in[1])).score);
        }));
        record("end_to_end", r, 1e-3);
    }
    const double secs = seconds_since(t0);
    o.require(secs < 60.0, fmt("%.1fs", secs));
    return o;
}

// ---- 2. attention invariants ----------------------------------------------

Outcome attention_invariants() {
    Outcome o;
    Rng rng(21);
    DiscriminatorConfig cfg = tiny_disc_config();
    Discriminator<double> d(cfg, rng);
    double worst_sum = 0, worst_bound = 0, worst_gated = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto p = random_tensor({1, d.feature_channels(), 4, 4}, rng, 3.0), s = random_tensor({1, 3}, rng, 3.0);
        auto att = d.spatial_attention(C(p), C(s), AttentionMode::soft_threshold);
        const Tensor<double> alpha = att.alpha.value(), gated = att.gated.value();
        const Tensor<double> e = d.attention_energy(C(p), C(s)).value();
        const std::size_t k = alpha.size();
        worst_sum = std::max(worst_sum, std::abs(std::accumulate(alpha.values().begin(), alpha.values().end(), 0.0) - 1.0));
        for (std::size_t i = 0; i < k; ++i)
            worst_bound = std::max(worst_bound, sigm(e[i]) - alpha[i] * static_cast<double>(k));
        for (std::size_t c = 0; c < 3; ++c) {
            double acc = 0;
            for (std::size_t pos = 0; pos < k; ++pos) acc += gated[c * k + pos];
            worst_gated = std::max(worst_gated, std::abs(acc - s[c]));
        }
    }
    o.require(worst_sum <= 1e-6, "sum(alpha)-1 " + fmt("%.1e", worst_sum));
    o.require(worst_bound <= 1e-9, "sigma-pK " + fmt("%.1e", worst_bound));
    o.require(worst_gated <= 1e-5, "sum(S)-s " + fmt("%.1e", worst_gated));
    Tensor<double> x({1, 2}, {0, 20});
    const double st = soft_threshold_rows(C(x)).value()[0], sm = softmax_rows(C(x)).value()[0];
    o.require(st >= 0.333, "soft-threshold p0 " + fmt("%.4f", st));
    o.require(sm <= 1e-8, "softmax p0 " + fmt("%.1e", sm));
    return o;
}

// ---- 3. oracle equivalence ------------------------------------------------

Outcome oracles() {
    Outcome o;
    Rng rng(31);
    std::uniform_int_distribution<int> width(1, 4);
    double lstm = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t H = width(rng), D = width(rng), Z = width(rng);
        Controller<double> ctl("ctl", Z, H, D, rng);
        auto& tr = ctl.cell().transform();
        tr.weight().value() = random_tensor({4 * H, D + H}, rng, 0.6);
        tr.bias().value() = random_tensor({4 * H}, rng);
        auto h = random_tensor({1, H}, rng), c = random_tensor({1, H}, rng, 1.5), s = random_tensor({1, D}, rng);
        const auto next = ctl.step({C(h), C(c)}, C(s));
        const auto& w = tr.weight().value();
        const auto& b = tr.bias().value();
        for (std::size_t j = 0; j < H; ++j) {
            double pre[4];
            for (std::size_t g = 0; g < 4; ++g) {
                const std::size_t r = g * H + j;
                double acc = b[r];
                for (std::size_t k = 0; k < D; ++k) acc += w.at(r, k) * s[k];
                for (std::size_t k = 0; k < H; ++k) acc += w.at(r, D + k) * h[k];
                pre[g] = acc;
            }
            const double cn = sigm(pre[1]) * c[j] + sigm(pre[0]) * std::tanh(pre[3]);
            const double hn = sigm(pre[2]) * std::tanh(cn);
            lstm = std::max({lstm, std::abs(next.c.value()[j] - cn), std::abs(next.h.value()[j] - hn)});
        }
    }
    o.require(lstm <= 1e-10, "lstm " + fmt("%.1e", lstm));

    double affine = 0;
    for (int trial = 0; trial < 20; ++trial) {
        auto fm = random_tensor({2, 5, 3, 4}, rng), g = random_tensor({2, 5}, rng), b = random_tensor({2, 5}, rng);
        const auto out = affine_transform(C(fm), {C(g), C(b)}).value();
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t c = 0; c < 5; ++c)
                for (std::size_t y = 0; y < 3; ++y)
                    for (std::size_t x = 0; x < 4; ++x)
                        affine = std::max(affine, std::abs(out.at(n, c, y, x) - (g.at(n, c) * fm.at(n, c, y, x) + b.at(n, c))));
    }
    o.require(affine <= 1e-12, "affine " + fmt("%.1e", affine));

    double hinge = 0;
    std::uniform_int_distribution<std::size_t> len(1, 9);
    auto vec = [](const Tensor<double>& t) { return std::vector<double>(t.data(), t.data() + t.size()); };
    for (int trial = 0; trial < 200; ++trial) {
        auto r = random_tensor({len(rng)}, rng, 2.0), f = random_tensor({len(rng)}, rng, 2.0),
             m = random_tensor({len(rng)}, rng, 2.0);
        double er = 0, ef = 0, em = 0;
        for (double v : r.values()) er += std::max(0.0, 1 - v);
        for (double v : f.values()) ef += std::max(0.0, 1 + v);
        for (double v : m.values()) em += std::max(0.0, 1 + v);
        const double expected = er / r.size() + 0.5 * ef / f.size() + 0.5 * em / m.size();
        hinge = std::max(hinge, std::abs(d_hinge_loss(vec(r), vec(f), vec(m)).total - expected));
    }
    o.require(hinge <= 1e-12, "hinge " + fmt("%.1e", hinge));
    return o;
}

// ---- 4. closed forms --------------------------------------------------------

FeatureStats diag_stats(const std::vector<double>& mean, const std::vector<double>& var) {
    FeatureStats s;
    s.mean = Eigen::VectorXd::Map(mean.data(), static_cast<Eigen::Index>(mean.size()));
    s.cov = Eigen::VectorXd::Map(var.data(), static_cast<Eigen::Index>(var.size())).asDiagonal();
    s.count = 10;
    return s;
}

Outcome closed_forms() {
    Outcome o;
    Rng rng(41);
    const auto a = FeatureStats::from_features(random_tensor({40, 5}, rng));
    o.require(std::abs(fid(a, a)) <= 1e-6, "fid(A,A) " + fmt("%.1e", fid(a, a)));
    const double shift = fid(diag_stats({0}, {1}), diag_stats({2}, {1}));
    o.require(std::abs(shift - 4) <= 1e-6, "mean shift " + fmt("%.9f", shift));
    const double diag = fid(diag_stats({0, 0}, {1, 1}), diag_stats({1, 1}, {1, 1}));
    o.require(std::abs(diag - 2) <= 1e-6, "diagonal " + fmt("%.9f", diag));

    const std::size_t k = 6;
    const double uni = inception_score(std::vector<std::vector<double>>(10, std::vector<double>(k, 1.0 / k)));
    o.require(std::abs(uni - 1) <= 1e-9, "IS uniform " + fmt("%.12f", uni));
    std::vector<std::vector<double>> cover;
    for (std::size_t i = 0; i < 2 * k; ++i) {
        std::vector<double> row(k, 0.0);
        row[i % k] = 1.0;
        cover.push_back(row);
    }
    const double is_cover = inception_score(cover);
    o.require(std::abs(is_cover - static_cast<double>(k)) <= 1e-6, "IS cover " + fmt("%.9f", is_cover));

    const double cl = contrastive_loss(Tensor<double>({3, 3}, 1.0 / 3.0));
    o.require(std::abs(cl - 3 * std::log(3.0)) <= 1e-6, "contrastive " + fmt("%.9f", cl));

    const std::vector<double> one{1}, minus{-1}, zero{0};
    const double h0 = d_hinge_loss(one, minus, minus).total, h2 = d_hinge_loss(zero, zero, zero).total;
    o.require(h0 == 0.0 && h2 == 2.0, "hinge " + fmt("%g", h0) + "/" + fmt("%g", h2));
    return o;
}

// ---- 5. structural parity ---------------------------------------------------

Outcome structure() {
    Outcome o;
    const auto t0 = Clock::now();
    const RunConfig full = preset_config("full-small-dataset");
    const GeneratorConfig& gc = full.setup.generator;
    const DiscriminatorConfig& dc = full.setup.discriminator;
    o.require(gc.block_count == 6, std::to_string(gc.block_count) + " blocks");
    o.require(gc.noise_width == 100, "noise " + std::to_string(gc.noise_width));
    o.require(gc.sentence_width == 256 && full.encoder.sentence_width == 256,
              "d " + std::to_string(full.encoder.sentence_width));

    Rng rng(51);
    Generator<float> g(gc, rng);
    Tensor<float> s({1, gc.sentence_width});
    for (auto& v : s.values()) v = std::normal_distribution<float>()(rng);
    const Tensor<float> img = synthesize(g, sample_noise<float>(1, gc.noise_width, rng), s);
    bool bounded = true;
    for (float v : img.values()) bounded = bounded && v >= -1.0f && v <= 1.0f;
    o.require(img.shape() == Shape{1, 3, 256, 256} && bounded, "output " + shape_string(img.shape()));

    Discriminator<float> d(dc, rng);
    NoGradGuard ng;
    const auto out = d.discriminate(Var<float>::constant(img), Var<float>::constant(s));
    const AttentionMap alpha = AttentionMap::from_weights(out.alpha.value(), 0, dc.attention_resolution,
                                                          dc.attention_resolution);
    const std::size_t factor = dc.image_size / dc.attention_resolution;
    const AttentionMap up = upsample_attention(normalize_attention(alpha), factor);
    o.require(out.alpha.shape() == Shape{1, 64} && factor == 32 && up.height == 256 && up.width == 256,
              "attention 8x8 x" + std::to_string(factor));
    const double secs = seconds_since(t0);
    o.require(secs < 5.0, fmt("%.2fs", secs));
    return o;
}

// ---- 6. desk training trend -------------------------------------------------

struct DeskPipeline {
    RunConfig cfg;
    Corpus train;
    std::vector<SyntheticRecord> manifest;
    AttributeSet attrs;
    std::shared_ptr<Encoders<float>> enc;
    std::unique_ptr<Probe> probe;
    fs::path enc_path;
    double setup_seconds = 0;  // corpus, pretraining and probe
};

DeskPipeline prepare_desk(const TempDir& dir, Outcome& o) {
    const auto t0 = Clock::now();
    DeskPipeline p;
    p.cfg = preset_config("desk");
    p.cfg.apply_seed(2);
    SyntheticSpec spec;
    spec.count = 512;
    spec.size = 64;
    generate_synthetic_corpus(spec, 1, dir / "corpus");
    p.manifest = read_manifest(dir / "corpus" / "manifest.jsonl");
    p.attrs = AttributeSet::from_manifest(p.manifest);
    p.train = load_images(load_corpus(dir / "corpus", "train"));

    EncoderPretrainer pre(p.cfg.encoder, Vocabulary::build(p.train.all_captions()), p.cfg.pretrain, p.cfg.seed);
    pre.run(p.train);
    p.enc_path = dir / "encoders.ckpt";
    pre.save(p.enc_path);
    p.enc = load_encoders<float>(p.enc_path);

    auto [fit, held] = probe_holdout(load_images(load_corpus(dir / "corpus", "all")));
    p.probe = std::make_unique<Probe>(p.cfg.probe, p.attrs);
    p.probe->fit(fit, corpus_labels(fit, p.manifest, p.attrs));
    const auto acc = p.probe->accuracy(corpus_tensor(held, p.cfg.probe.image_size), corpus_labels(held, p.manifest, p.attrs));
    o.require(std::min({acc.color, acc.shape, acc.background}) >= 0.95,
              "probe " + fmt("%.3f", std::min({acc.color, acc.shape, acc.background})));
    p.setup_seconds = seconds_since(t0);
    return p;
}

Outcome desk_trend(const TempDir& dir, DeskPipeline& p) {
    Outcome o;
    const auto t0 = Clock::now();
    const std::uint64_t hash_before = parameter_hash(p.enc->text_parameters());
    TrainSetup setup = p.cfg.setup;
    setup.train.output_dir = (dir / "train").string();
    Trainer t(setup, p.train, p.enc, p.enc_path.string());
    const auto labels = corpus_labels(p.train, p.manifest, p.attrs);
    const auto real = FeatureStats::from_features(p.probe->predict(corpus_tensor(p.train, p.cfg.probe.image_size)).features);
    const EvalReport initial = evaluate_generator(t.generator(), *p.enc, p.train, labels, *p.probe, real, p.cfg.eval);
    t.run();
    const EvalReport final = evaluate_generator(t.generator(), *p.enc, p.train, labels, *p.probe, real, p.cfg.eval);
    const double secs = p.setup_seconds + seconds_since(t0);
    write_png(dir / "desk_grid.png", t.sample_grid());

    o.require(parameter_hash(p.enc->text_parameters()) == hash_before, "encoder hash");
    o.require(t.steps_done() <= 2000, std::to_string(t.steps_done()) + " steps");
    o.require(final.fid < 0.5 * initial.fid, "fid " + fmt("%.1f", initial.fid) + " -> " + fmt("%.1f", final.fid));
    const double chance = 1.0 / static_cast<double>(p.attrs.colors.size());
    o.require(final.consistency.color >= chance + 0.15,
              "color " + fmt("%.3f", final.consistency.color) + " (chance " + fmt("%.2f", chance) + ")");
    o.require(secs <= 1800.0, fmt("%.0fs", secs));
    return o;
}

// ---- 7. ablations -------------------------------------------------------------

Outcome ablations(const TempDir& dir, DeskPipeline& p) {
    Outcome o;
    struct Variant {
        std::string name;
        Conditioning cond;
        AttentionMode mode;
    };
    const std::vector<Variant> variants = {{"stacked_mlp", Conditioning::stacked_mlp, AttentionMode::soft_threshold},
                                           {"shallow", Conditioning::shallow, AttentionMode::soft_threshold},
                                           {"attention_off", Conditioning::rat, AttentionMode::off},
                                           {"softmax", Conditioning::rat, AttentionMode::softmax}};
    for (const auto& v : variants) {
        TrainSetup setup = p.cfg.setup;
        setup.train.steps = 50;
        setup.generator.conditioning = v.cond;
        setup.discriminator.attention = v.mode;
        setup.train.output_dir = (dir / ("ablation_" + v.name)).string();
        std::size_t logged = 0;
        bool pixel_logged = true;
        std::string status = "ok";
        try {
            Trainer t(setup, p.train, p.enc, p.enc_path.string());
            t.run([&](const Json& j) {
                ++logged;
                pixel_logged = pixel_logged && j.contains("mean_abs_pixel");
            });
        } catch (const NumericError& e) {
            status = "diverged (guard)";
        }
        // A guarded divergence counts for softmax only, where the paper reports collapse.
        const bool ok = pixel_logged && (status == "ok" ? logged == 50 : v.mode == AttentionMode::softmax);
        o.require(ok, v.name + " " + status + " " + std::to_string(logged) + " records");
    }

    // Perturbing one layer's heads leaves every other layer's affine parameters untouched.
    Rng rng(71);
    Generator<double> g(tiny_gen_config(Conditioning::stacked_mlp), rng);
    const auto z = C(random_tensor({1, 3}, rng)), s = C(random_tensor({1, 3}, rng));
    NoGradGuard ng;
    const auto before = g.affine_parameters(z, s);
    const std::size_t last = before.size() - 1;
    for (auto* head : {&g.heads().gamma_head(last), &g.heads().beta_head(last)}) {
        ParamRefs<double> ps;
        head->collect(ps);
        for (auto* q : ps)
            for (auto& x : q->value().values()) x += 0.5;
    }
    const auto after = g.affine_parameters(z, s);
    bool independent = parameter_count(g.controller_parameters()) == 0;
    for (std::size_t l = 0; l < last; ++l)
        independent = independent && before[l].gamma.value() == after[l].gamma.value() &&
                      before[l].beta.value() == after[l].beta.value();
    independent = independent && !(before[last].gamma.value() == after[last].gamma.value());
    o.require(independent, "layer independence");
    return o;
}

// ---- 8. reproducibility ---------------------------------------------------

Outcome reproducibility(const TempDir& dir, DeskPipeline& p) {
    Outcome o;
    auto run = [&](const std::string& tag) {
        TrainSetup setup = p.cfg.setup;
        setup.train.steps = 20;
        setup.train.sample_every = 10;
        setup.train.output_dir = (dir / tag).string();
        Trainer t(setup, p.train, p.enc, p.enc_path.string());
        std::string log;
        t.run([&](const Json& j) {
            Json rec = j;
            rec.erase("grid");  // the grid path differs by output directory
            log += rec.dump() + "\n";
        });
        EvalConfig ec = p.cfg.eval;
        ec.samples = 64;
        const auto labels = corpus_labels(p.train, p.manifest, p.attrs);
        const auto real = FeatureStats::from_features(p.probe->predict(corpus_tensor(p.train, p.cfg.probe.image_size)).features);
        log += evaluate_generator(t.generator(), *p.enc, p.train, labels, *p.probe, real, ec).to_json().dump() + "\n";
        return std::pair{log, read_file(dir / tag / "samples" / "step_000020.png") +
                                  read_file(dir / tag / "samples" / "step_000010.png")};
    };
    const auto a = run("repro_a"), b = run("repro_b");
    o.require(a.first == b.first, "metric logs");
    o.require(!a.second.empty() && a.second == b.second, "grid bytes");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    // --fast stops after the criteria that need no training run.
    const bool fast = argc > 1 && std::string(argv[1]) == "--fast";
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        failures += !o.pass;
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
        std::fflush(stdout);
    };

    report(1, "gradient verification", gradients);
    report(2, "attention invariants", attention_invariants);
    report(3, "oracle equivalence", oracles);
    report(4, "closed-form metrics", closed_forms);
    report(5, "structural parity", structure);

    if (fast) return failures == 0 ? 0 : 1;

    TempDir dir("acceptance");
    Outcome setup;
    std::optional<DeskPipeline> desk;
    try {
        desk = prepare_desk(dir, setup);
    } catch (const std::exception& e) {
        setup.require(false, std::string("desk setup: ") + e.what());
    }
    auto with_desk = [&](const std::function<Outcome(const TempDir&, DeskPipeline&)>& f) {
        return [&, f] {
            if (!desk) return setup;
            Outcome o = f(dir, *desk);
            if (!setup.pass) o.require(false, setup.detail);
            return o;
        };
    };
    report(6, "desk training trend", with_desk(desk_trend));
    report(7, "ablation harness", with_desk(ablations));
    report(8, "reproducibility", with_desk(reproducibility));
    return failures == 0 ? 0 : 1;
}
