#include "docdet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <numbers>

#include "docdet/error.hpp"

namespace docdet {

using nlohmann::json;

void PGDConfig::validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("pgd epsilon must be >= 0");
    if (steps < 1) throw ConfigError("pgd steps must be >= 1");
    if (step_size && !(*step_size > 0.0)) throw ConfigError("pgd step_size must be > 0");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(adversarial_fraction >= 0.0 && adversarial_fraction <= 1.0))
        throw ConfigError("adversarial_fraction must be in [0,1]");
    pgd.validate();
}

void to_json(json& j, const PGDConfig& c) {
    j = {{"epsilon", c.epsilon}, {"steps", c.steps}, {"random_start", c.random_start}};
    j["step_size"] = c.step_size ? json(*c.step_size) : json(nullptr);
}

void from_json(const json& j, PGDConfig& c) {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.steps = j.value("steps", c.steps);
    c.random_start = j.value("random_start", c.random_start);
    if (j.contains("step_size") && !j.at("step_size").is_null()) c.step_size = j.at("step_size").get<double>();
}

void to_json(json& j, const TrainConfig& c) {
    j = {{"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"learning_rate", c.learning_rate},
         {"schedule", c.schedule == LrSchedule::Cosine ? "cosine" : "constant"},
         {"adversarial_fraction", c.adversarial_fraction},
         {"pgd", c.pgd},
         {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
    static const std::vector<std::string> known = {"batch_size", "epochs",               "learning_rate", "schedule",
                                                   "pgd",        "adversarial_fraction", "seed"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("unknown train config field '" + k + "'");
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    const std::string sched = j.value("schedule", std::string("cosine"));
    if (sched == "cosine")
        c.schedule = LrSchedule::Cosine;
    else if (sched == "constant")
        c.schedule = LrSchedule::Constant;
    else
        throw ConfigError("schedule must be 'cosine' or 'constant'");
    c.adversarial_fraction = j.value("adversarial_fraction", c.adversarial_fraction);
    if (j.contains("pgd")) c.pgd = j.at("pgd").get<PGDConfig>();
    c.seed = j.value("seed", c.seed);
}

Tensor<float> target_tensor(std::span<const HeatmapTarget> targets) {
    if (targets.empty()) return {};
    const int w = targets.front().region.width(), h = targets.front().region.height();
    Tensor<float> t(3, static_cast<int>(targets.size()), h, w);
    for (size_t n = 0; n < targets.size(); ++n) {
        const Image* maps[3] = {&targets[n].region, &targets[n].affinity, &targets[n].special};
        for (int c = 0; c < 3; ++c) {
            if (maps[c]->width() != w || maps[c]->height() != h) throw Error("target_tensor: map sizes differ");
            std::copy(maps[c]->data().begin(), maps[c]->data().end(), t.plane(c, static_cast<int>(n)));
        }
    }
    return t;
}

template <typename T>
T mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) {
    if (!pred.same_shape(target)) throw Error("mse_loss: prediction and target shapes differ");
    if (pred.size() == 0) throw Error("mse_loss: empty tensors");
    const double count = static_cast<double>(pred.size());
    if (grad) *grad = Tensor<T>(pred.channels, pred.batch, pred.height, pred.width);
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        sum += d * d;
        if (grad) grad->data[i] = static_cast<T>(2.0 * d / count);
    }
    return static_cast<T>(sum / count);
}

template <typename T>
Tensor<T> input_gradient(const UNet<T>& model, const Tensor<T>& x, const Tensor<T>& target, NormMode mode, T* loss) {
    Tape<T> tape;
    const Tensor<T> out = model.forward(x, mode, &tape);
    Tensor<T> g;
    const T l = mse_loss(out, target, &g);
    if (loss) *loss = l;
    return model.backward(tape, g, nullptr);
}

namespace {

template <typename T>
double sample_norm(const Tensor<T>& a, const Tensor<T>& b, int n) {
    double s = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const T* p = a.plane(c, n);
        const T* q = b.plane(c, n);
        for (size_t i = 0; i < a.plane(); ++i) {
            const double d = static_cast<double>(p[i]) - static_cast<double>(q[i]);
            s += d * d;
        }
    }
    return std::sqrt(s);
}

// adv = clamp(x + scale * (adv - x), 0, 1) for sample n.
template <typename T>
void rescale_delta(Tensor<T>& adv, const Tensor<T>& x, int n, double scale) {
    for (int c = 0; c < adv.channels; ++c) {
        T* p = adv.plane(c, n);
        const T* q = x.plane(c, n);
        for (size_t i = 0; i < adv.plane(); ++i) {
            const double v = static_cast<double>(q[i]) + scale * (static_cast<double>(p[i]) - q[i]);
            p[i] = static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
    }
}

template <typename T>
void project(Tensor<T>& adv, const Tensor<T>& x, int n, double eps) {
    const double norm = sample_norm(adv, x, n);
    rescale_delta(adv, x, n, norm > eps ? eps / norm : 1.0);
    // Rounding to T can push the norm a hair over the budget; shrink until it holds.
    for (int guard = 0; guard < 8; ++guard) {
        const double after = sample_norm(adv, x, n);
        if (after <= eps) return;
        rescale_delta(adv, x, n, eps / after * (1.0 - 1e-6));
    }
}

}  // namespace

template <typename T>
Tensor<T> pgd_attack(const UNet<T>& model, const Tensor<T>& images, const Tensor<T>& targets, const PGDConfig& cfg,
                     Rng& rng) {
    cfg.validate();
    if (cfg.epsilon == 0.0) return images;
    const double eps = cfg.epsilon, step = cfg.step();
    Tensor<T> adv = images;
    if (cfg.random_start) {
        for (int n = 0; n < adv.batch; ++n) {
            std::vector<double> d(adv.plane() * adv.channels);
            double norm = 0.0;
            for (double& v : d) {
                v = rng.normal();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            const double radius = eps * rng.uniform();
            size_t k = 0;
            for (int c = 0; c < adv.channels; ++c) {
                T* p = adv.plane(c, n);
                for (size_t i = 0; i < adv.plane(); ++i, ++k)
                    p[i] = static_cast<T>(std::clamp(static_cast<double>(p[i]) + radius * d[k] / norm, 0.0, 1.0));
            }
            project(adv, images, n, eps);
        }
    }
    for (int s = 0; s < cfg.steps; ++s) {
        const Tensor<T> g = input_gradient(model, adv, targets, NormMode::Running);
        for (int n = 0; n < adv.batch; ++n) {
            double gn = 0.0;
            for (int c = 0; c < g.channels; ++c) {
                const T* p = g.plane(c, n);
                for (size_t i = 0; i < g.plane(); ++i) gn += static_cast<double>(p[i]) * p[i];
            }
            gn = std::sqrt(gn);
            if (!(gn > 0.0) || !std::isfinite(gn)) continue;
            for (int c = 0; c < g.channels; ++c) {
                const T* p = g.plane(c, n);
                T* a = adv.plane(c, n);
                for (size_t i = 0; i < g.plane(); ++i) a[i] = static_cast<T>(a[i] + step * p[i] / gn);
            }
            project(adv, images, n, eps);
        }
    }
    return adv;
}

Image pgd_attack(const UNet<float>& model, const Image& image, const HeatmapTarget& target, const PGDConfig& cfg,
                 Rng& rng) {
    const int mult = model.config().size_multiple();
    if (image.width() % mult || image.height() % mult)
        throw Error("pgd_attack: image sides must be multiples of " + std::to_string(mult));
    const Tensor<float> x = batch_from_images<float>(std::span<const Image>(&image, 1));
    const Tensor<float> t = target_tensor(std::span<const HeatmapTarget>(&target, 1));
    return plane_to_image(pgd_attack(model, x, t, cfg, rng), 0, 0);
}

void adam_step(std::vector<Parameter<float>>& params, const Gradients<float>& grads, AdamState& state, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (grads.size() != params.size()) throw Error("adam_step: gradient count differs from parameter count");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value.size(), 0.0f);
            state.v.emplace_back(p.value.size(), 0.0f);
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        auto& w = params[k].value;
        auto& m = state.m[k];
        auto& v = state.v[k];
        const auto& g = grads[k];
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * g[i]);
            v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * double(g[i]) * g[i]);
            const double mh = m[i] / c1, vh = v[i] / c2;
            w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + eps));
        }
    }
}

double scheduled_learning_rate(const TrainConfig& cfg, std::int64_t step, std::int64_t total) {
    if (cfg.schedule == LrSchedule::Constant || total <= 1) return cfg.learning_rate;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * t));
}

json epoch_to_json(const EpochStats& e) {
    return {{"epoch", e.epoch},
            {"loss", e.loss},
            {"batches", e.batches},
            {"adversarial_batches", e.adversarial_batches},
            {"learning_rate", e.learning_rate},
            {"seconds", e.seconds}};
}

namespace {

// Independent streams so that, e.g., the adversarial coin never shifts the shuffle.
enum Stream : std::uint64_t { Shuffle = 1, Coin = 2, Attack = 3 };

Rng stream(std::uint64_t seed, Stream s, std::uint64_t index) {
    return Rng(Rng::mix(seed) ^ Rng::mix((static_cast<std::uint64_t>(s) << 48) + index));
}

}  // namespace

std::vector<EpochStats> train(UNet<float>& model, const std::vector<TrainSample>& corpus, const TrainConfig& cfg,
                              TrainState* state, const EpochCallback& on_epoch) {
    cfg.validate();
    if (corpus.empty()) throw Error("train: empty corpus");
    const int w = corpus.front().image.width(), h = corpus.front().image.height();
    const int mult = model.config().size_multiple();
    if (w % mult || h % mult)
        throw Error("train: page size " + std::to_string(w) + "x" + std::to_string(h) + " is not a multiple of " +
                    std::to_string(mult));
    for (const TrainSample& s : corpus)
        if (s.image.width() != w || s.image.height() != h || s.target.region.width() != w ||
            s.target.region.height() != h)
            throw Error("train: all pages and targets must share one size at scale 1");

    TrainState local;
    if (!state) state = &local;
    const int n = static_cast<int>(corpus.size());
    const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = static_cast<std::int64_t>(batches_per_epoch) * cfg.epochs;
    std::vector<EpochStats> history;

    for (int epoch = state->epoch + 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<int> order(static_cast<size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = stream(cfg.seed, Shuffle, static_cast<std::uint64_t>(epoch));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle.uniform_int(0, i))]);
        Rng coin = stream(cfg.seed, Coin, static_cast<std::uint64_t>(epoch));

        EpochStats st;
        st.epoch = epoch;
        double loss_sum = 0.0;
        for (int b = 0; b < batches_per_epoch; ++b) {
            const int first = b * cfg.batch_size, last = std::min(n, first + cfg.batch_size);
            std::vector<Image> images;
            std::vector<HeatmapTarget> targets;
            for (int i = first; i < last; ++i) {
                images.push_back(corpus[static_cast<size_t>(order[static_cast<size_t>(i)])].image);
                targets.push_back(corpus[static_cast<size_t>(order[static_cast<size_t>(i)])].target);
            }
            Tensor<float> x = batch_from_images<float>(images);
            const Tensor<float> t = target_tensor(targets);
            const bool adversarial = coin.bernoulli(cfg.adversarial_fraction);
            if (adversarial) {
                Rng attack = stream(cfg.seed, Attack, static_cast<std::uint64_t>(state->adam.step));
                x = pgd_attack(model, x, t, cfg.pgd, attack);
                ++st.adversarial_batches;
            }
            const double lr = scheduled_learning_rate(cfg, state->adam.step, total_steps);
            Tape<float> tape;
            const Tensor<float> out = model.forward(x, NormMode::Batch, &tape);
            Tensor<float> g;
            loss_sum += mse_loss(out, t, &g);
            Gradients<float> grads = model.zero_gradients();
            model.backward(tape, g, &grads);
            adam_step(model.parameters(), grads, state->adam, lr);
            model.update_running_stats(tape);
            st.learning_rate = lr;
            ++st.batches;
        }
        st.loss = loss_sum / st.batches;
        st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state->epoch = epoch;
        history.push_back(st);
        if (on_epoch) on_epoch(st, model, *state);
    }
    return history;
}

std::vector<NamedTensor> optimizer_tensors(const TrainState& state, const UNet<float>& model) {
    std::vector<NamedTensor> out;
    if (state.adam.m.empty()) return out;
    const auto& params = model.parameters();
    for (size_t k = 0; k < params.size(); ++k) {
        out.push_back({"optim.m." + params[k].name, "optim", params[k].shape, state.adam.m[k]});
        out.push_back({"optim.v." + params[k].name, "optim", params[k].shape, state.adam.v[k]});
    }
    return out;
}

TrainState optimizer_from_tensors(const std::vector<NamedTensor>& tensors, const UNet<float>& model, int epoch,
                                  std::int64_t step) {
    TrainState s;
    s.epoch = epoch;
    s.adam.step = step;
    if (step == 0) return s;
    std::map<std::string, const NamedTensor*> index;
    for (const auto& t : tensors) index[t.name] = &t;
    for (const auto& p : model.parameters()) {
        const auto m = index.find("optim.m." + p.name), v = index.find("optim.v." + p.name);
        if (m == index.end() || v == index.end()) throw IoError("checkpoint lacks optimizer state for " + p.name);
        if (m->second->values.size() != p.value.size() || v->second->values.size() != p.value.size())
            throw IoError("optimizer state for " + p.name + " has the wrong size");
        s.adam.m.push_back(m->second->values);
        s.adam.v.push_back(v->second->values);
    }
    return s;
}

template float mse_loss<float>(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double mse_loss<double>(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);
template Tensor<float> input_gradient<float>(const UNet<float>&, const Tensor<float>&, const Tensor<float>&, NormMode,
                                             float*);
template Tensor<double> input_gradient<double>(const UNet<double>&, const Tensor<double>&, const Tensor<double>&,
                                               NormMode, double*);
template Tensor<float> pgd_attack<float>(const UNet<float>&, const Tensor<float>&, const Tensor<float>&,
                                         const PGDConfig&, Rng&);
template Tensor<double> pgd_attack<double>(const UNet<double>&, const Tensor<double>&, const Tensor<double>&,
                                           const PGDConfig&, Rng&);

}  // namespace docdet
