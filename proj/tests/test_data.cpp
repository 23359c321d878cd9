#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "ratgan/data.hpp"
#include "test_util.hpp"

using namespace ratgan;
using ratgan::testing::TempDir;

namespace {

SyntheticSpec small_spec(std::size_t count = 24, std::size_t size = 32) {
    SyntheticSpec s;
    s.count = count;
    s.size = size;
    return s;
}

std::string tree_bytes(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += fs::relative(f, root).string() + "\n" + read_file(f);
    return all;
}

}  // namespace

TEST(Text, TokenizeLowercasesAndSplitsPunctuation) {
    EXPECT_EQ(tokenize("A Red, circle!on  black"), (std::vector<std::string>{"a", "red", "circle", "on", "black"}));
    EXPECT_TRUE(tokenize(" ,. ").empty());
}

TEST(Text, VocabularyIndicesAndRoundTrip) {
    auto v = Vocabulary::build({"a red circle", "a blue square", "rare"}, 1);
    EXPECT_EQ(v.index("<pad>"), Vocabulary::pad);
    EXPECT_EQ(v.index("<unk>"), Vocabulary::unknown);
    EXPECT_EQ(v.index("<eos>"), Vocabulary::eos);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.index(v.token(i)), i);
    EXPECT_EQ(v.index("purple"), Vocabulary::unknown);
    auto seq = v.encode("A red hexagon");
    ASSERT_EQ(seq.length(), 4u);
    EXPECT_EQ(seq.ids.back(), Vocabulary::eos);
    EXPECT_EQ(seq.ids[2], Vocabulary::unknown);
    EXPECT_EQ(Vocabulary::from_json(v.to_json()), v);

    auto cut = Vocabulary::build({"a red circle", "a blue square", "rare"}, 2);
    EXPECT_TRUE(cut.contains("a"));
    EXPECT_FALSE(cut.contains("rare"));
    EXPECT_THROW(v.token(v.size()), InvalidInput);
}

TEST(Image, PngRoundTripIsExactOnByteGrid) {
    TempDir dir("png");
    Image img(5, 7);
    Rng rng(3);
    std::uniform_int_distribution<int> byte(0, 255);
    for (auto& p : img.pixels) p = from_byte(static_cast<std::uint8_t>(byte(rng)));
    write_png(dir / "x.png", img);
    Image back = read_png(dir / "x.png");
    ASSERT_EQ(back.height, 5u);
    ASSERT_EQ(back.width, 7u);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_EQ(to_byte(back.pixels[i]), to_byte(img.pixels[i]));
    EXPECT_EQ(to_byte(-1.f), 0);
    EXPECT_EQ(to_byte(1.f), 255);
    EXPECT_EQ(to_byte(0.f), 128);  // round(127.5)
    EXPECT_EQ(encode_png(img), encode_png(img));
}

TEST(Image, ResizeOfConstantStaysConstant) {
    Image img(6, 6, 0.25f);
    Image big = resize_bilinear(img, 13, 9);
    for (float v : big.pixels) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Data, RandomViewShapeDeterminismAndFlipInvolution) {
    Image img(64, 64);
    Rng fill(1);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    for (auto& p : img.pixels) p = u(fill);
    Rng a(42), b(42);
    Image va = random_view(img, 64, a), vb = random_view(img, 64, b);
    EXPECT_EQ(va.height, 64u);
    EXPECT_EQ(va.width, 64u);
    EXPECT_EQ(va, vb);
    EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
    Image small(20, 20, 0.5f);
    Rng c(0);
    Image up = random_view(small, 32, c);
    EXPECT_EQ(up.height, 32u);
    for (float v : up.pixels) EXPECT_NEAR(v, 0.5f, 1e-6);
}

TEST(Data, SyntheticCorpusIsDeterministicAndConsistent) {
    TempDir d1("synth1"), d2("synth2"), d3("synth3");
    auto m1 = generate_synthetic_corpus(small_spec(), 7, d1.path());
    generate_synthetic_corpus(small_spec(), 7, d2.path());
    generate_synthetic_corpus(small_spec(), 8, d3.path());
    EXPECT_EQ(m1.size(), 24u);
    EXPECT_EQ(tree_bytes(d1.path()), tree_bytes(d2.path()));
    EXPECT_NE(tree_bytes(d1.path()), tree_bytes(d3.path()));

    auto manifest = read_manifest(d1 / "manifest.jsonl");
    ASSERT_EQ(manifest.size(), 24u);
    std::set<std::string> test_combos, train_combos;
    for (const auto& r : manifest) {
        auto toks = tokenize(r.caption);
        EXPECT_NE(std::find(toks.begin(), toks.end(), r.color), toks.end());
        EXPECT_NE(std::find(toks.begin(), toks.end(), r.shape), toks.end());
        EXPECT_NE(std::find(toks.begin(), toks.end(), r.background), toks.end());
        for (const auto& line : read_lines(d1 / "captions" / (r.id + ".txt"))) {
            auto lt = tokenize(line);
            EXPECT_NE(std::find(lt.begin(), lt.end(), r.color), lt.end()) << line;
        }
        (r.split == "test" ? test_combos : train_combos).insert(r.color + r.shape + r.background);
    }
    EXPECT_FALSE(test_combos.empty());
    for (const auto& c : test_combos) EXPECT_EQ(train_combos.count(c), 0u) << "split not disjoint in " << c;

    EXPECT_THROW(generate_synthetic_corpus(small_spec(0), 1, d3 / "empty"), InvalidConfig);
}

TEST(Data, SyntheticColorsAreRendered) {
    TempDir dir("synthcolor");
    SyntheticSpec spec = small_spec(24, 32);
    auto m = generate_synthetic_corpus(spec, 3, dir.path());
    auto signs = [](const std::array<float, 3>& c) { return (c[0] > 0) * 4 + (c[1] > 0) * 2 + (c[2] > 0); };
    auto lookup = [](const std::vector<NamedColor>& cs, const std::string& name) {
        for (const auto& c : cs)
            if (c.name == name) return c.rgb;
        throw std::logic_error("missing color");
    };
    for (const auto& r : m) {
        Image img = read_png(dir / "images" / (r.id + ".png"));
        const int fg = signs(lookup(spec.colors, r.color)), bg = signs(lookup(spec.backgrounds, r.background));
        EXPECT_EQ(signs({img.at(0, 0, 0), img.at(1, 0, 0), img.at(2, 0, 0)}), bg);
        std::size_t hits = 0;
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) hits += signs({img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)}) == fg;
        EXPECT_GT(hits, 32u * 32u / 20u) << r.id;
    }
}

TEST(Data, LoadCorpusCountsSplitsAndWarnings) {
    TempDir dir("load");
    generate_synthetic_corpus(small_spec(12), 5, dir.path());
    fs::remove(dir / "captions" / "img00.txt");
    std::vector<std::string> warnings;
    auto all = load_corpus(dir.path(), "all", [&](const std::string& w) { warnings.push_back(w); });
    EXPECT_EQ(all.size(), 11u);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("img00"), std::string::npos);
    for (const auto& r : all) EXPECT_EQ(r.captions.size(), 10u);
    auto train = load_corpus(dir.path(), "train", [](const std::string&) {});
    auto test = load_corpus(dir.path(), "test", [](const std::string&) {});
    EXPECT_EQ(train.size() + test.size(), 11u);
    EXPECT_THROW(load_corpus(dir / "missing"), InvalidInput);
}

TEST(Data, LoadCorpusOfThreeImages) {
    TempDir dir("three");
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "captions");
    for (int i = 0; i < 3; ++i) {
        write_png(dir / "images" / ("p" + std::to_string(i) + ".png"), Image(4, 4));
        std::ofstream os(dir / "captions" / ("p" + std::to_string(i) + ".txt"));
        for (int j = 0; j < 10; ++j) os << "caption " << j << "\n";
    }
    auto recs = load_corpus(dir.path());
    ASSERT_EQ(recs.size(), 3u);
    for (const auto& r : recs) EXPECT_EQ(r.captions.size(), 10u);
}

TEST(Data, BatchesAreAlignedBoundedAndSeeded) {
    TempDir dir("batch");
    generate_synthetic_corpus(small_spec(12), 5, dir.path());
    Corpus corpus = load_images(load_corpus(dir.path()));
    auto vocab = Vocabulary::build(corpus.all_captions());
    std::vector<std::string> warnings;
    BatchSampler s1(corpus, vocab, 32, true, [&](const std::string& w) { warnings.push_back(w); });
    BatchSampler s2(corpus, vocab, 32, true, [](const std::string&) {});
    Rng r1(9), r2(9);
    for (int round = 0; round < 3; ++round) {
        Batch a = s1.sample(8, r1), b = s2.sample(8, r2);
        EXPECT_EQ(a.images, b.images);
        EXPECT_EQ(a.ids, b.ids);
        ASSERT_EQ(a.size(), 8u);
        EXPECT_EQ(a.images.shape(), (Shape{8, 3, 32, 32}));
        for (float v : a.images.values()) {
            EXPECT_GE(v, -1.f);
            EXPECT_LE(v, 1.f);
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            const auto& caps = corpus.records[a.records[i]].captions;
            EXPECT_NE(std::find(caps.begin(), caps.end(), a.captions[i]), caps.end());
        }
        std::set<std::size_t> uniq(a.records.begin(), a.records.end());
        EXPECT_EQ(uniq.size(), 8u);
    }
    EXPECT_TRUE(warnings.empty());
    s1.sample(30, r1);
    s1.sample(30, r1);
    EXPECT_EQ(warnings.size(), 1u);
    EXPECT_THROW(s1.sample(1, r1), InvalidConfig);
}
