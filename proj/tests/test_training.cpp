#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ratgan/training.hpp"
#include "test_util.hpp"

using namespace ratgan;
using ratgan::testing::TempDir;

namespace {

class TrainTest : public ::testing::Test {
protected:
    void SetUp() override {
        SyntheticSpec spec;
        spec.count = 24;
        spec.size = 16;
        generate_synthetic_corpus(spec, 5, dir / "corpus");
        corpus = load_images(load_corpus(dir / "corpus"));
        EncoderConfig ec;
        ec.embedding_width = 8;
        ec.hidden_width = 8;
        ec.sentence_width = 8;
        ec.image_size = 16;
        ec.image_channels = {4, 8};
        Vocabulary vocab = Vocabulary::build(corpus.all_captions());
        Rng rng(1);
        encoders = std::make_shared<Encoders<float>>(ec, vocab, rng);

        setup.generator.noise_width = 4;
        setup.generator.block_count = 2;
        setup.generator.base_channels = 8;
        setup.generator.channel_floor = 4;
        setup.generator.sentence_width = 8;
        setup.generator.hidden_width = 8;
        setup.discriminator.image_size = 16;
        setup.discriminator.base_channels = 4;
        setup.discriminator.max_channels = 8;
        setup.discriminator.attention_resolution = 4;
        setup.discriminator.sentence_width = 8;
        setup.discriminator.energy_hidden = 4;
        setup.train.batch_size = 4;
        setup.train.steps = 20;
        setup.train.grid_size = 4;
        setup.train.grid_columns = 2;
        setup.train.seed = 9;
    }

    std::vector<std::string> run_log(Trainer& t, std::optional<std::size_t> until = std::nullopt) {
        std::vector<std::string> lines;
        t.run([&](const Json& j) { lines.push_back(j.dump()); }, until);
        return lines;
    }

    TempDir dir{"train"};
    Corpus corpus;
    std::shared_ptr<Encoders<float>> encoders;
    TrainSetup setup;
};

}  // namespace

TEST_F(TrainTest, FiftyStepsKeepEncoderFrozenAndHingeNonnegative) {
    setup.train.steps = 50;
    const auto before = parameter_hash(encoders->text_parameters());
    Trainer t(setup, corpus, encoders);
    std::vector<Json> log;
    t.run([&](const Json& j) { log.push_back(j); });
    ASSERT_EQ(log.size(), 50u);
    EXPECT_EQ(parameter_hash(encoders->text_parameters()), before);
    EXPECT_EQ(t.encoder_hash(), before);
    for (const auto& j : log) {
        for (const char* k : {"d_real_match", "d_fake_match", "d_real_mismatch", "d_gradient_penalty"}) {
            ASSERT_GE(j.at(k).get<double>(), 0.0) << k;
            ASSERT_TRUE(std::isfinite(j.at(k).get<double>()));
        }
        EXPECT_FALSE(j.contains("wall_time"));
        EXPECT_GT(j.at("mean_abs_pixel").get<double>(), 0.0);
    }
    EXPECT_EQ(log.back().at("step").get<std::size_t>(), 50u);
}

TEST_F(TrainTest, DefaultsKeepLearningRateAsymmetry) {
    TrainConfig c;
    EXPECT_DOUBLE_EQ(c.d_lr, 4.0 * c.g_lr);
    EXPECT_EQ(c.g_lr, 1e-4);
    EXPECT_EQ(c.beta1, 0.0);
    EXPECT_EQ(c.beta2, 0.9);
}

TEST_F(TrainTest, ValidationRejectsInconsistentSetups) {
    auto bad = setup;
    bad.train.batch_size = 1;
    EXPECT_THROW(Trainer(bad, corpus, encoders), InvalidConfig);
    bad = setup;
    bad.generator.sentence_width = 16;
    EXPECT_THROW(Trainer(bad, corpus, encoders), InvalidConfig);
    bad = setup;
    bad.discriminator.image_size = 32;
    EXPECT_THROW(Trainer(bad, corpus, encoders), InvalidConfig);
    bad = setup;
    bad.train.d_lr = 0;
    EXPECT_THROW(Trainer(bad, corpus, encoders), InvalidConfig);
}

TEST_F(TrainTest, SameSeedGivesIdenticalLogsAndGrids) {
    setup.train.steps = 6;
    setup.train.sample_every = 3;
    setup.train.output_dir = (dir / "a").string();
    Trainer a(setup, corpus, encoders);
    auto la = run_log(a);
    setup.train.output_dir = (dir / "b").string();
    Trainer b(setup, corpus, encoders);
    auto lb = run_log(b);
    ASSERT_EQ(la.size(), lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) {
        auto ja = Json::parse(la[i]), jb = Json::parse(lb[i]);
        ja.erase("grid");
        jb.erase("grid");
        EXPECT_EQ(ja, jb);
    }
    for (const char* name : {"step_000003.png", "step_000006.png"})
        EXPECT_EQ(read_file(dir / "a" / "samples" / name), read_file(dir / "b" / "samples" / name));

    setup.train.seed = 10;
    Trainer c(setup, corpus, encoders);
    EXPECT_NE(run_log(c).front(), la.front());
}

TEST_F(TrainTest, ResumeMatchesUninterruptedRun) {
    setup.train.steps = 20;
    Trainer full(setup, corpus, encoders);
    auto ref = run_log(full);

    Trainer first(setup, corpus, encoders);
    auto head = run_log(first, 10);
    first.save(dir / "mid.ckpt");
    auto resumed = Trainer::resume(dir / "mid.ckpt", corpus, encoders);
    EXPECT_EQ(resumed->steps_done(), 10u);
    auto tail = run_log(*resumed);
    head.insert(head.end(), tail.begin(), tail.end());
    EXPECT_EQ(head, ref);

    auto gp = full.generator().parameters();
    auto rp = resumed->generator().parameters();
    for (std::size_t k = 0; k < gp.size(); ++k) EXPECT_EQ(gp[k]->value().storage(), rp[k]->value().storage());
}

TEST_F(TrainTest, CheckpointErrors) {
    Trainer t(setup, corpus, encoders);
    t.step();
    t.save(dir / "t.ckpt");
    auto bytes = read_file(dir / "t.ckpt");
    bytes[bytes.size() / 2] ^= 0x5a;
    atomic_write(dir / "bad.ckpt", bytes);
    EXPECT_THROW(Trainer::resume(dir / "bad.ckpt", corpus, encoders), ParseError);

    Rng rng(99);
    auto other = std::make_shared<Encoders<float>>(encoders->config, encoders->vocabulary, rng);
    EXPECT_THROW(Trainer::resume(dir / "t.ckpt", corpus, other), InvalidInput);

    Container c = Container::load(dir / "t.ckpt");
    std::string raw = c.serialize();
    const std::size_t at = 8;  // version field follows the magic
    raw[at] = static_cast<char>(raw[at] + 1);
    atomic_write(dir / "ver.ckpt", raw);
    EXPECT_THROW(Trainer::resume(dir / "ver.ckpt", corpus, encoders), IncompatibleVersion);
}

TEST_F(TrainTest, NonFiniteLossAbortsWithDiagnostics) {
    setup.train.output_dir = (dir / "nan").string();
    Trainer t(setup, corpus, encoders);
    t.discriminator().parameters().back()->value()[0] = NAN;
    EXPECT_THROW(t.step(), NumericError);
    EXPECT_TRUE(fs::exists(dir / "nan" / "diagnostic_step1.json"));
    const auto dump = Json::parse(read_file(dir / "nan" / "diagnostic_step1.json"));
    EXPECT_EQ(dump.at("batch_ids").size(), 4u);
}

TEST_F(TrainTest, WallTimeOnlyWhenEnabled) {
    setup.train.steps = 2;
    setup.train.log_wall_time = true;
    Trainer t(setup, corpus, encoders);
    for (const auto& line : run_log(t)) EXPECT_TRUE(Json::parse(line).contains("wall_time"));
}

TEST_F(TrainTest, AblationVariantsRun) {
    setup.train.steps = 5;
    for (auto cond : {Conditioning::stacked_mlp, Conditioning::shallow}) {
        auto s = setup;
        s.generator.conditioning = cond;
        Trainer t(s, corpus, encoders);
        EXPECT_EQ(run_log(t).size(), 5u) << to_string(cond);
    }
    for (auto mode : {AttentionMode::off, AttentionMode::softmax}) {
        auto s = setup;
        s.discriminator.attention = mode;
        Trainer t(s, corpus, encoders);
        EXPECT_EQ(run_log(t).size(), 5u) << to_string(mode);
    }
}

TEST_F(TrainTest, EpochBudget) {
    setup.train.epochs = 2;
    Trainer t(setup, corpus, encoders);
    EXPECT_EQ(t.total_steps(), 2u * ((corpus.size() + 3) / 4));
}

TEST_F(TrainTest, SetupJsonRoundTrip) {
    setup.generator.conditioning = Conditioning::shallow;
    setup.discriminator.attention = AttentionMode::softmax;
    EXPECT_EQ(TrainSetup::from_json(setup.to_json()).to_json(), setup.to_json());
}
