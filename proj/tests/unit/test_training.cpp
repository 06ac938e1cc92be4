#include <cmath>

#include <gtest/gtest.h>

#include "docdet/error.hpp"
#include "docdet/synthgen.hpp"
#include "docdet/training.hpp"

using namespace docdet;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.level_channels = {4, 6, 6, 8};
    return c;
}

std::vector<TrainSample> small_corpus(int pages, int side = 64) {
    SynthSpec spec;
    spec.width = spec.height = side;
    std::vector<TrainSample> out;
    for (int i = 0; i < pages; ++i) {
        const PageSample p = generate_page(spec, page_seed(spec, static_cast<size_t>(i)));
        out.push_back({p.image, make_target(p)});
    }
    return out;
}

double l2_distance(const Tensor<double>& a, const Tensor<double>& b, int n) {
    double s = 0;
    for (int c = 0; c < a.channels; ++c)
        for (size_t i = 0; i < a.plane(); ++i) {
            const double d = a.plane(c, n)[i] - b.plane(c, n)[i];
            s += d * d;
        }
    return std::sqrt(s);
}

double checksum(const UNet<double>& m) {
    double s = 0;
    for (const auto& p : m.parameters())
        for (double v : p.value) s += v;
    for (const auto& b : m.buffers())
        for (double v : b.value) s += v;
    return s;
}

bool same_parameters(const UNet<float>& a, const UNet<float>& b) {
    for (size_t i = 0; i < a.parameters().size(); ++i)
        if (a.parameters()[i].value != b.parameters()[i].value) return false;
    for (size_t i = 0; i < a.buffers().size(); ++i)
        if (a.buffers()[i].value != b.buffers()[i].value) return false;
    return true;
}

}  // namespace

TEST(MseLoss, ClosedForm) {
    const int h = 8, w = 6;
    Tensor<double> pred(3, 1, h, w, 0.25), target = pred;
    const double delta = 0.3;
    pred.at(1, 0, 2, 3) += delta;
    Tensor<double> grad;
    const double loss = mse_loss(pred, target, &grad);
    EXPECT_NEAR(loss, delta * delta / (3.0 * h * w), 1e-15);
    EXPECT_NEAR(grad.at(1, 0, 2, 3), 2 * delta / (3.0 * h * w), 1e-15);
    EXPECT_EQ(grad.at(0, 0, 2, 3), 0.0);
    EXPECT_THROW(mse_loss(pred, Tensor<double>(3, 1, h, w + 1)), Error);
}

TEST(MseLoss, ChannelPermutationInvariant) {
    Rng rng(1);
    Tensor<double> a(3, 2, 4, 4), b(3, 2, 4, 4);
    for (double& v : a.data) v = rng.uniform();
    for (double& v : b.data) v = rng.uniform();
    Tensor<double> pa = a, pb = b;
    const size_t cs = a.channel_size();
    for (int c = 0; c < 3; ++c) {
        const int to = (c + 1) % 3;
        std::copy_n(a.channel(c), cs, pa.channel(to));
        std::copy_n(b.channel(c), cs, pb.channel(to));
    }
    EXPECT_NEAR(mse_loss(a, b), mse_loss(pa, pb), 1e-15);
}

TEST(TargetTensor, Layout) {
    const auto corpus = small_corpus(2);
    std::vector<HeatmapTarget> targets{corpus[0].target, corpus[1].target};
    const Tensor<float> t = target_tensor(targets);
    EXPECT_EQ(t.channels, 3);
    EXPECT_EQ(t.batch, 2);
    EXPECT_EQ(t.at(0, 1, 10, 20), targets[1].region(20, 10));
    EXPECT_EQ(t.at(1, 0, 30, 5), targets[0].affinity(5, 30));
    EXPECT_EQ(t.at(2, 1, 7, 9), targets[1].special(9, 7));
}

TEST(Pgd, BudgetRangeAndModelUntouched) {
    const UNet<double> m = UNet<double>::build(tiny(), 2);
    const double before = checksum(m);
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<double> x(1, 2, 16, 16), t(3, 2, 16, 16);
        for (double& v : x.data) v = rng.uniform() < 0.3 ? rng.uniform() : 1.0;
        for (double& v : t.data) v = rng.uniform();
        PGDConfig cfg;
        cfg.epsilon = rng.uniform(0.01, 3.0);
        cfg.steps = rng.uniform_int(1, 5);
        cfg.random_start = rng.bernoulli(0.5);
        const Tensor<double> adv = pgd_attack(m, x, t, cfg, rng);
        for (int n = 0; n < 2; ++n) EXPECT_LE(l2_distance(adv, x, n), cfg.epsilon + 1e-6);
        for (double v : adv.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
    EXPECT_EQ(checksum(m), before);
}

TEST(Pgd, ZeroEpsilonIsIdentity) {
    const UNet<float> m = UNet<float>::build(tiny(), 2);
    Rng rng(4);
    Tensor<float> x(1, 1, 16, 16), t(3, 1, 16, 16, 0.5f);
    for (float& v : x.data) v = static_cast<float>(rng.uniform());
    PGDConfig cfg;
    cfg.epsilon = 0.0;
    EXPECT_EQ(pgd_attack(m, x, t, cfg, rng), x);
}

TEST(Pgd, DeterministicAndRaisesLoss) {
    const UNet<double> m = UNet<double>::build(tiny(), 5);
    Rng data(5);
    Tensor<double> x(1, 1, 16, 16), t(3, 1, 16, 16);
    for (double& v : x.data) v = data.uniform();
    for (double& v : t.data) v = data.uniform();
    PGDConfig cfg;
    cfg.epsilon = 1.0;
    cfg.steps = 5;
    Rng r1(9), r2(9);
    const Tensor<double> a = pgd_attack(m, x, t, cfg, r1), b = pgd_attack(m, x, t, cfg, r2);
    EXPECT_EQ(a, b);
    cfg.random_start = false;
    Rng r3(9);
    const Tensor<double> adv = pgd_attack(m, x, t, cfg, r3);
    EXPECT_GT(mse_loss(m.forward(adv, NormMode::Running), t), mse_loss(m.forward(x, NormMode::Running), t));
}

TEST(Pgd, ValidatesConfig) {
    PGDConfig c;
    c.epsilon = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.steps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.step_size = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_DOUBLE_EQ(PGDConfig{}.step(), 0.25);
}

TEST(InputGradient, MatchesFiniteDifferences) {
    const UNet<double> m = UNet<double>::build(tiny(), 6);
    Rng rng(6);
    Tensor<double> x(1, 1, 16, 16), t(3, 1, 16, 16);
    for (double& v : x.data) v = rng.uniform();
    for (double& v : t.data) v = rng.uniform();
    const Tensor<double> g = input_gradient(m, x, t, NormMode::Running);
    const double h = 1e-6;
    for (int k = 0; k < 10; ++k) {
        const size_t i = static_cast<size_t>(rng.uniform_int(0, int(x.size()) - 1));
        Tensor<double> up = x, down = x;
        up.data[i] += h;
        down.data[i] -= h;
        const double fd = (mse_loss(m.forward(up, NormMode::Running), t) -
                           mse_loss(m.forward(down, NormMode::Running), t)) / (2 * h);
        EXPECT_NEAR(g.data[i], fd, 1e-3 * std::max(1e-6, std::abs(fd)));
    }
}

TEST(Adam, FirstStepMovesBySignTimesLr) {
    std::vector<Parameter<float>> params{{"w", {3}, {1.0f, -2.0f, 0.5f}}};
    const Gradients<float> grads{{0.5f, -4.0f, 0.0f}};
    AdamState state;
    adam_step(params, grads, state, 0.01);
    EXPECT_EQ(state.step, 1);
    EXPECT_NEAR(params[0].value[0], 0.99f, 1e-6);
    EXPECT_NEAR(params[0].value[1], -1.99f, 1e-6);
    EXPECT_EQ(params[0].value[2], 0.5f);
    EXPECT_THROW(adam_step(params, Gradients<float>{}, state, 0.01), Error);
}

TEST(Schedule, ConstantAndCosine) {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.schedule = LrSchedule::Constant;
    EXPECT_EQ(scheduled_learning_rate(cfg, 37, 100), 0.01);
    cfg.schedule = LrSchedule::Cosine;
    EXPECT_DOUBLE_EQ(scheduled_learning_rate(cfg, 0, 100), 0.01);
    EXPECT_NEAR(scheduled_learning_rate(cfg, 50, 100), 0.005, 1e-4);
    double prev = 1;
    for (int s = 0; s < 100; ++s) {
        const double lr = scheduled_learning_rate(cfg, s, 100);
        EXPECT_LE(lr, prev);
        EXPECT_GT(lr, 0.0);
        prev = lr;
    }
}

TEST(TrainConfigJson, RoundTripAndValidation) {
    TrainConfig c;
    c.batch_size = 3;
    c.schedule = LrSchedule::Constant;
    c.pgd.step_size = 0.125;
    c.pgd.random_start = false;
    c.seed = 77;
    const TrainConfig back = nlohmann::json(c).get<TrainConfig>();
    EXPECT_EQ(back.batch_size, 3);
    EXPECT_EQ(back.schedule, LrSchedule::Constant);
    EXPECT_EQ(back.pgd.step_size, 0.125);
    EXPECT_FALSE(back.pgd.random_start);
    EXPECT_EQ(back.seed, 77u);
    TrainConfig bad;
    bad.adversarial_fraction = 1.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = {};
    bad.learning_rate = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Train, RejectsBadCorpus) {
    UNet<float> m = UNet<float>::build(tiny(), 1);
    EXPECT_THROW(train(m, {}, TrainConfig{}), Error);
    auto blank = [](int side) {
        const Image z(side, side, 0.0f);
        return TrainSample{Image(side, side, 1.0f), HeatmapTarget{z, z, z}};
    };
    auto mixed = small_corpus(1, 64);
    mixed.push_back(blank(48));
    EXPECT_THROW(train(m, mixed, TrainConfig{}), Error);
    EXPECT_THROW(train(m, {blank(36)}, TrainConfig{}), Error);
}

TEST(Train, DeterministicAndLossDecreases) {
    const auto corpus = small_corpus(4);
    TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 2;
    cfg.learning_rate = 3e-3;
    cfg.adversarial_fraction = 0.0;
    UNet<float> a = UNet<float>::build(tiny(), 1), b = a;
    const auto ha = train(a, corpus, cfg);
    const auto hb = train(b, corpus, cfg);
    EXPECT_TRUE(same_parameters(a, b));
    ASSERT_EQ(ha.size(), 12u);
    EXPECT_EQ(ha.back().loss, hb.back().loss);
    EXPECT_LT(ha.back().loss, 0.75 * ha.front().loss) << ha.front().loss << " -> " << ha.back().loss;
    for (const auto& e : ha) {
        EXPECT_EQ(e.batches, 2);
        EXPECT_EQ(e.adversarial_batches, 0);
    }
}

TEST(Train, ResumeEqualsUninterrupted) {
    const auto corpus = small_corpus(3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 2;
    cfg.adversarial_fraction = 0.5;
    cfg.pgd.steps = 2;
    // The cosine length depends on cfg.epochs, which differs between the two legs.
    cfg.schedule = LrSchedule::Constant;
    UNet<float> straight = UNet<float>::build(tiny(), 2), resumed = straight;
    const auto full = train(straight, corpus, cfg);

    TrainConfig first = cfg;
    first.epochs = 2;
    TrainState state;
    train(resumed, corpus, first, &state);
    EXPECT_EQ(state.epoch, 2);
    // Through a checkpoint-shaped copy of the optimizer state.
    TrainState restored =
        optimizer_from_tensors(optimizer_tensors(state, resumed), resumed, state.epoch, state.adam.step);
    const auto rest = train(resumed, corpus, cfg, &restored);
    ASSERT_EQ(rest.size(), 2u);
    EXPECT_EQ(rest.front().epoch, 3);
    EXPECT_TRUE(same_parameters(straight, resumed));
    EXPECT_EQ(rest.back().loss, full.back().loss);
    int adversarial = 0;
    for (const auto& e : full) adversarial += e.adversarial_batches;
    EXPECT_GT(adversarial, 0);
    EXPECT_LT(adversarial, 8);
}

TEST(Train, CallbackSeesEveryEpoch) {
    const auto corpus = small_corpus(2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.adversarial_fraction = 1.0;
    cfg.pgd.steps = 1;
    UNet<float> m = UNet<float>::build(tiny(), 3);
    std::vector<int> seen;
    const auto h = train(m, corpus, cfg, nullptr, [&](const EpochStats& e, const UNet<float>&, const TrainState& s) {
        seen.push_back(e.epoch);
        EXPECT_EQ(s.epoch, e.epoch);
        EXPECT_EQ(e.adversarial_batches, e.batches);
    });
    EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(epoch_to_json(h[0])["epoch"], 1);
}
