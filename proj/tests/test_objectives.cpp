#include <gtest/gtest.h>

#include <cmath>

#include "ratgan/discriminator.hpp"
#include "ratgan/objectives.hpp"
#include "test_util.hpp"

using namespace ratgan;
using ratgan::testing::random_tensor;

namespace {

using VD = Var<double>;
using DD = Dual<double>;
VD C(const Tensor<double>& t) { return VD::constant(t); }

std::vector<double> vec(const Tensor<double>& t) { return {t.data(), t.data() + t.size()}; }

DiscriminatorConfig tiny_config() {
    DiscriminatorConfig cfg;
    cfg.image_size = 8;
    cfg.base_channels = 2;
    cfg.max_channels = 3;
    cfg.attention_resolution = 4;
    cfg.sentence_width = 3;
    cfg.energy_hidden = 3;
    return cfg;
}

/// Discriminator in double plus a dual-number twin with synchronized parameters.
struct DiscPair {
    Rng rng{31};
    Discriminator<double> d;
    Rng twin_rng{31};
    Discriminator<DD> dual;

    DiscPair() : d(tiny_config(), rng), dual(tiny_config(), twin_rng) { sync(); }
    void sync() { copy_parameters<DD, double>(d.parameters(), dual.parameters()); }
    auto scorer() {
        return [this](const VD& x, const VD& s) { return d.discriminate(x, s).score; };
    }
    auto dual_scorer() {
        return [this](const Var<DD>& x, const Var<DD>& s) { return dual.discriminate(x, s).score; };
    }
};

}  // namespace

TEST(Hinge, Examples) {
    std::vector<double> one{1}, minus{-1}, zero{0};
    EXPECT_EQ(d_hinge_loss(one, minus, minus).total, 0.0);
    auto b = d_hinge_loss(zero, zero, zero);
    EXPECT_EQ(b.total, 2.0);
    EXPECT_EQ(b.real_match, 1.0);
    EXPECT_EQ(b.fake_match, 0.5);
    EXPECT_EQ(b.real_mismatch, 0.5);
    std::vector<double> empty;
    EXPECT_THROW(d_hinge_loss(empty, zero, zero), InvalidInput);
    EXPECT_THROW(d_hinge_terms(C(Tensor<double>({0})), C(Tensor<double>({1})), C(Tensor<double>({1}))), InvalidInput);
}

TEST(Hinge, ScalarLoopOracleAndGraphVersion) {
    Rng rng(32);
    std::uniform_int_distribution<std::size_t> len(1, 9);
    for (int trial = 0; trial < 200; ++trial) {
        auto r = random_tensor({len(rng)}, rng, 2.0), f = random_tensor({len(rng)}, rng, 2.0),
             m = random_tensor({len(rng)}, rng, 2.0);
        double er = 0, ef = 0, em = 0;
        for (double v : r.values()) er += v < 1 ? 1 - v : 0;
        for (double v : f.values()) ef += v > -1 ? 1 + v : 0;
        for (double v : m.values()) em += v > -1 ? 1 + v : 0;
        const double expected = er / r.size() + 0.5 * ef / f.size() + 0.5 * em / m.size();
        const auto b = d_hinge_loss(vec(r), vec(f), vec(m));
        EXPECT_NEAR(b.total, expected, 1e-12);
        EXPECT_GE(b.real_match, 0.0);
        EXPECT_GE(b.fake_match, 0.0);
        EXPECT_GE(b.real_mismatch, 0.0);
        const auto g = d_hinge_terms(C(r), C(f), C(m)).breakdown();
        EXPECT_NEAR(g.total, expected, 1e-12);
        EXPECT_NEAR(g.fake_match, b.fake_match, 1e-12);
    }
}

TEST(Hinge, ZeroExactlyWhenMarginsHold) {
    std::vector<double> r{1.0, 3.0}, f{-1.0, -2.0}, m{-5.0};
    EXPECT_EQ(d_hinge_loss(r, f, m).total, 0.0);
    r[0] = 0.999;
    EXPECT_GT(d_hinge_loss(r, f, m).total, 0.0);
}

TEST(GeneratorLoss, ExamplesAndSign) {
    std::vector<double> ones{1, 1}, zero{0}, empty;
    EXPECT_EQ(g_adv_loss(ones), -1.0);
    EXPECT_EQ(g_adv_loss(zero), 0.0);
    EXPECT_THROW(g_adv_loss(empty), InvalidInput);

    // d/df of the generator loss opposes d/df of the fake-match hinge term.
    Tensor<double> f({3}, {-0.5, 0.2, 0.7});
    auto fg = VD::leaf(f);
    backward(g_adv_loss(fg));
    auto fd = VD::leaf(f);
    backward(d_hinge_terms(C(Tensor<double>({1}, 0.0)), fd, C(Tensor<double>({1}, 0.0))).fake_match);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_LT(fg.grad()[i], 0.0);
        EXPECT_GT(fd.grad()[i], 0.0);
    }
}

TEST(Mismatch, CyclicShift) {
    EXPECT_EQ(sample_mismatched_captions({0, 1, 2}), (std::vector<std::size_t>{1, 2, 0}));
    for (std::size_t n = 2; n < 40; ++n) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        const auto out = sample_mismatched_captions(idx);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NE(out[i], i);
    }
    EXPECT_THROW(sample_mismatched_captions({4}), InvalidInput);
}

TEST(GradientPenalty, ClosedFormForLinearScorer) {
    // D(x, s) = sum(x) + sum(s) per sample: |grad_x| = sqrt(n_x), |grad_s| = sqrt(n_s).
    auto linear_scorer = [](const VD& x, const VD& s) {
        const std::size_t n = x.dim(0);
        Tensor<double> ones_x({x.value().size() / n, 1}, 1.0), ones_s({s.dim(1), 1}, 1.0);
        auto rx = reshape(linear(reshape(x, {n, x.value().size() / n}), transpose2d(C(ones_x)), C(Tensor<double>({1}))), {n});
        auto rs = reshape(linear(s, transpose2d(C(ones_s)), C(Tensor<double>({1}))), {n});
        return add(rx, rs);
    };
    Rng rng(33);
    auto x = random_tensor({1, 3, 2, 2}, rng), s = random_tensor({1, 5}, rng);
    const double expected = 2.0 * std::pow(std::sqrt(12.0) + std::sqrt(5.0), 6);
    EXPECT_NEAR(ma_gp_penalty(linear_scorer, x, s) / expected, 1.0, 1e-12);

    auto xb = random_tensor({4, 3, 2, 2}, rng), sb = random_tensor({4, 5}, rng);
    EXPECT_NEAR(ma_gp_penalty(linear_scorer, xb, sb) / expected, 1.0, 1e-12);
    EXPECT_THROW(ma_gp_penalty(linear_scorer, xb, s), InvalidInput);
}

TEST(GradientPenalty, ConstantDiscriminatorAndNonnegativity) {
    DiscPair p;
    Rng rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_tensor({2, 3, 8, 8}, rng), s = random_tensor({2, 3}, rng);
        ASSERT_GE(ma_gp_penalty(p.scorer(), x, s), 0.0);
    }
    auto params = p.d.parameters();
    params[params.size() - 2]->value().fill(0.0);  // head weights: score is its bias alone
    auto x = random_tensor({2, 3, 8, 8}, rng), s = random_tensor({2, 3}, rng);
    const auto pe = evaluate_penalty<double>(p.scorer(), x, s);
    EXPECT_EQ(pe.value, 0.0);
    for (double v : pe.tangent_x.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradientPenalty, ParameterGradientMatchesFiniteDifferences) {
    DiscPair p;
    Rng rng(35);
    auto x = random_tensor({2, 3, 8, 8}, rng), s = random_tensor({2, 3}, rng);
    PenaltyConfig cfg;
    auto params = p.d.parameters();
    auto pe = evaluate_penalty<double>(p.scorer(), x, s, cfg);
    zero_grads(params);
    accumulate_penalty_gradient<double>(p.dual_scorer(), p.dual.parameters(), params, x, s, pe);
    std::vector<Tensor<double>> analytic;
    for (auto* q : params) analytic.push_back(q->grad());
    GradCheckReport total;
    for (std::size_t k = 0; k < params.size(); ++k)
        total.merge(finite_difference_check([&] { return ma_gp_penalty(p.scorer(), x, s, cfg); }, params[k]->value(),
                                            analytic[k]));
    EXPECT_TRUE(total.passed(1e-4)) << total.summary();
}

TEST(GradientPenalty, TotalDiscriminatorLossGradient) {
    DiscPair p;
    Rng rng(36);
    auto real = random_tensor({3, 3, 8, 8}, rng, 0.5), fake = random_tensor({3, 3, 8, 8}, rng, 0.5),
         s = random_tensor({3, 3}, rng);
    Tensor<double> s_mis(s.shape());
    const auto shift = sample_mismatched_captions({0, 1, 2});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) s_mis.at(i, j) = s.at(shift[i], j);
    PenaltyConfig cfg;
    cfg.weight = 0.1;
    auto params = p.d.parameters();

    auto hinge = [&] {
        return d_hinge_terms(p.d.discriminate(C(real), C(s)).score, p.d.discriminate(C(fake), C(s)).score,
                             p.d.discriminate(C(real), C(s_mis)).score)
            .total;
    };
    auto pe = evaluate_penalty<double>(p.scorer(), real, s, cfg);
    zero_grads(params);
    accumulate_penalty_gradient<double>(p.dual_scorer(), p.dual.parameters(), params, real, s, pe);
    backward(hinge());
    std::vector<Tensor<double>> analytic;
    for (auto* q : params) analytic.push_back(q->grad());

    auto loss = [&] {
        const double h = [&] {
            NoGradGuard ng;
            return hinge().value()[0];
        }();
        return h + ma_gp_penalty(p.scorer(), real, s, cfg);
    };
    GradCheckReport total;
    for (std::size_t k = 0; k < params.size(); ++k)
        total.merge(finite_difference_check(loss, params[k]->value(), analytic[k]));
    EXPECT_TRUE(total.passed(1e-3)) << total.summary();
}

TEST(PenaltyConfig, Validation) {
    PenaltyConfig c;
    EXPECT_EQ(c.weight, 2.0);
    EXPECT_EQ(c.power, 6.0);
    EXPECT_EQ(PenaltyConfig::from_json(c.to_json()).to_json(), c.to_json());
    c.power = 0.5;
    EXPECT_THROW(c.validate(), InvalidConfig);
}
