#include <cmath>

#include <gtest/gtest.h>

#include "docdet/error.hpp"
#include "docdet/network.hpp"
#include "docdet/random.hpp"

using namespace docdet;

namespace {

// Independent count: walk the layer shapes.
size_t shape_walk_count(const ModelConfig& c) {
    const size_t norm = c.norm == NormKind::Batch ? 2 : 0;
    auto conv3 = [&](size_t ci, size_t co) { return 9 * ci * co + co + norm * co; };
    const auto& L = c.level_channels;
    size_t n = 0, cin = static_cast<size_t>(c.in_channels);
    for (int w : L) {
        n += conv3(cin, size_t(w)) + conv3(size_t(w), size_t(w));
        cin = size_t(w);
    }
    for (int l = static_cast<int>(L.size()) - 2; l >= 0; --l) {
        const size_t w = size_t(L[size_t(l)]);
        n += 4 * cin * w + w;  // 2x2 transposed conv
        n += conv3(2 * w, w) + conv3(w, w);
        cin = w;
    }
    return n + cin * size_t(c.out_channels) + size_t(c.out_channels);
}

template <typename T>
Tensor<T> random_input(Rng& rng, int c, int n, int h, int w) {
    Tensor<T> t(c, n, h, w);
    for (T& v : t.data) v = static_cast<T>(rng.uniform());
    return t;
}

ModelConfig tiny() {
    ModelConfig c;
    c.level_channels = {2, 3, 3, 4};
    return c;
}

// loss = sum(weights * output)
double weighted_sum(const Tensor<double>& out, const Tensor<double>& weights) {
    double s = 0;
    for (size_t i = 0; i < out.size(); ++i) s += out.data[i] * weights.data[i];
    return s;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    double diff = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(1e-300, std::sqrt(na) + std::sqrt(nb));
}

}  // namespace

TEST(Network, ParameterCountMatchesShapeWalk) {
    const ModelConfig def;
    EXPECT_EQ(shape_walk_count(def), 126867u);
    EXPECT_EQ(parameter_count(def), shape_walk_count(def));
    EXPECT_EQ(UNet<float>::build(def, 1).parameter_count(), shape_walk_count(def));
    EXPECT_LT(parameter_count(def), 1'000'000u);
    ModelConfig plain = def;
    plain.norm = NormKind::None;
    EXPECT_EQ(parameter_count(plain), shape_walk_count(plain));
    ModelConfig wide;
    wide.level_channels = {8, 16, 24, 40};
    wide.in_channels = 2;
    wide.out_channels = 5;
    EXPECT_EQ(parameter_count(wide), shape_walk_count(wide));
}

TEST(Network, ConfigValidation) {
    ModelConfig c;
    c.level_channels = {16, 32, 32};
    EXPECT_THROW(UNet<float>::build(c, 0), ConfigError);
    c.level_channels = {16, 0, 32, 32};
    EXPECT_THROW(parameter_count(c), ConfigError);
    ModelConfig m;
    m.norm_momentum = 0;
    EXPECT_THROW(m.validate(), ConfigError);
    const ModelConfig round = nlohmann::json(tiny()).get<ModelConfig>();
    EXPECT_EQ(round, tiny());
}

TEST(Network, DeterministicBuildAndForward) {
    const UNet<float> a = UNet<float>::build(tiny(), 5), b = UNet<float>::build(tiny(), 5);
    const UNet<float> c = UNet<float>::build(tiny(), 6);
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    bool differs = false;
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
        differs |= a.parameters()[i].value != c.parameters()[i].value;
    }
    EXPECT_TRUE(differs);
    Rng rng(1);
    const Tensor<float> x = random_input<float>(rng, 1, 2, 16, 24);
    EXPECT_EQ(a.forward(x, NormMode::Running), b.forward(x, NormMode::Running));
    EXPECT_EQ(a.forward(x, NormMode::Batch), a.forward(x, NormMode::Batch));
}

TEST(Network, OutputShapeAndRange) {
    const UNet<float> m = UNet<float>::build(ModelConfig{}, 2);
    Rng rng(2);
    const Tensor<float> x = random_input<float>(rng, 1, 2, 32, 48);
    for (NormMode mode : {NormMode::Running, NormMode::Batch}) {
        const Tensor<float> y = m.forward(x, mode);
        EXPECT_EQ(y.channels, 3);
        EXPECT_EQ(y.batch, 2);
        EXPECT_EQ(y.height, 32);
        EXPECT_EQ(y.width, 48);
        for (float v : y.data) {
            EXPECT_GT(v, 0.0f);
            EXPECT_LT(v, 1.0f);
        }
    }
}

TEST(Network, ConstantInputStaysFinite) {
    // A constant batch has zero variance at the first norm layer.
    const UNet<float> m = UNet<float>::build(ModelConfig{}, 3);
    const Tensor<float> white(1, 1, 32, 32, 1.0f);
    for (NormMode mode : {NormMode::Running, NormMode::Batch})
        for (float v : m.forward(white, mode).data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Network, RejectsBadInputShape) {
    const UNet<float> m = UNet<float>::build(tiny(), 4);
    EXPECT_THROW(m.forward(Tensor<float>(1, 1, 30, 32), NormMode::Running), Error);
    EXPECT_THROW(m.forward(Tensor<float>(2, 1, 32, 32), NormMode::Running), Error);
}

TEST(Network, PredictMapsPadsAndCrops) {
    const UNet<float> m = UNet<float>::build(ModelConfig{}, 5);
    Image img(37, 21, 1.0f);
    for (int x = 5; x < 30; ++x) img(x, 10) = 0.0f;
    const ScoreMaps maps = predict_maps(m, img);
    for (const Image* c : {&maps.region, &maps.affinity, &maps.special}) {
        EXPECT_EQ(c->width(), 37);
        EXPECT_EQ(c->height(), 21);
        EXPECT_GT(c->min_value(), 0.0f);
        EXPECT_LT(c->max_value(), 1.0f);
    }
    // Same as a manual white pad to 40 x 24.
    Tensor<float> padded(1, 1, 24, 40, 1.0f);
    for (int y = 0; y < 21; ++y)
        for (int x = 0; x < 37; ++x) padded.at(0, 0, y, x) = img(x, y);
    const Tensor<float> out = m.forward(padded, NormMode::Running);
    EXPECT_EQ(maps.special(36, 20), out.at(2, 0, 20, 36));
}

TEST(Network, CastRoundTrip) {
    const UNet<float> m = UNet<float>::build(tiny(), 7);
    const UNet<float> back = m.cast<double>().cast<float>();
    for (size_t i = 0; i < m.parameters().size(); ++i) EXPECT_EQ(m.parameters()[i].value, back.parameters()[i].value);
}

TEST(Network, RunningStatsFollowMomentum) {
    UNet<double> m = UNet<double>::build(tiny(), 8);
    Rng rng(3);
    const Tensor<double> x = random_input<double>(rng, 1, 2, 16, 16);
    Tape<double> tape;
    m.forward(x, NormMode::Batch, &tape);
    const std::vector<double> before = m.buffers()[0].value;  // enc0.norm1.running_mean
    m.update_running_stats(tape);
    const double mom = m.config().norm_momentum;
    for (size_t c = 0; c < before.size(); ++c)
        EXPECT_NEAR(m.buffers()[0].value[c], (1 - mom) * before[c] + mom * tape.units[0].mean[c], 1e-12);
}

TEST(Network, GradientMatchesFiniteDifferences) {
    for (NormMode mode : {NormMode::Running, NormMode::Batch}) {
        UNet<double> m = UNet<double>::build(tiny(), 11);
        Rng rng(4);
        // Move running stats away from the identity so Running mode is exercised.
        for (auto& b : m.buffers())
            for (double& v : b.value) v = b.name.ends_with("var") ? rng.uniform(0.5, 2.0) : rng.uniform(-0.2, 0.2);
        const int n = mode == NormMode::Batch ? 2 : 1;
        Tensor<double> x = random_input<double>(rng, 1, n, 32, 32);
        Tensor<double> w(3, n, 32, 32);
        for (double& v : w.data) v = rng.normal();

        Tape<double> tape;
        const Tensor<double> y = m.forward(x, mode, &tape);
        Gradients<double> grads = m.zero_gradients();
        const Tensor<double> gx = m.backward(tape, w, &grads);

        const double h = 1e-6;
        std::vector<double> analytic, numeric;
        for (int k = 0; k < 40; ++k) {
            const size_t i = static_cast<size_t>(rng.uniform_int(0, int(x.size()) - 1));
            const double saved = x.data[i];
            x.data[i] = saved + h;
            const double up = weighted_sum(m.forward(x, mode), w);
            x.data[i] = saved - h;
            const double down = weighted_sum(m.forward(x, mode), w);
            x.data[i] = saved;
            analytic.push_back(gx.data[i]);
            numeric.push_back((up - down) / (2 * h));
        }
        EXPECT_LE(relative_error(analytic, numeric), 1e-3) << "input gradient";

        analytic.clear();
        numeric.clear();
        for (size_t p = 0; p < m.parameters().size(); ++p) {
            auto& values = m.parameters()[p].value;
            for (int k = 0; k < 3; ++k) {
                const size_t i = static_cast<size_t>(rng.uniform_int(0, int(values.size()) - 1));
                const double saved = values[i];
                values[i] = saved + h;
                const double up = weighted_sum(m.forward(x, mode), w);
                values[i] = saved - h;
                const double down = weighted_sum(m.forward(x, mode), w);
                values[i] = saved;
                analytic.push_back(grads[p][i]);
                numeric.push_back((up - down) / (2 * h));
            }
        }
        EXPECT_LE(relative_error(analytic, numeric), 1e-3) << "parameter gradient";
        (void)y;
    }
}
