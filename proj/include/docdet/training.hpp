#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "docdet/heatmaps.hpp"
#include "docdet/network.hpp"
#include "docdet/random.hpp"

namespace docdet {

/// L2 projected gradient ascent on the input, one budget per image.
struct PGDConfig {
    double epsilon = 1.0;
    int steps = 10;
    /// Defaults to epsilon / 4.
    std::optional<double> step_size;
    bool random_start = true;

    double step() const { return step_size ? *step_size : epsilon / 4.0; }
    /// Throws ConfigError.
    void validate() const;
};

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
    int batch_size = 8;
    int epochs = 50;
    double learning_rate = 1e-3;
    LrSchedule schedule = LrSchedule::Cosine;
    /// Probability that a batch is replaced by its PGD counterpart before the update.
    double adversarial_fraction = 0.5;
    PGDConfig pgd;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

void to_json(nlohmann::json& j, const PGDConfig& c);
void from_json(const nlohmann::json& j, PGDConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainSample {
    Image image;
    HeatmapTarget target;
};

/// [3][N][H][W] from region / affinity / special maps.
Tensor<float> target_tensor(std::span<const HeatmapTarget> targets);

/// Mean squared error over every element. Writes d(loss)/d(pred) into `grad` when non-null.
/// Throws Error on a shape mismatch.
template <typename T>
T mse_loss(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad = nullptr);

/// d(mse_loss(model(x), target))/dx. The model is not modified.
template <typename T>
Tensor<T> input_gradient(const UNet<T>& model, const Tensor<T>& x, const Tensor<T>& target, NormMode mode,
                         T* loss = nullptr);

/// Perturbs each image of the batch within its own L2 ball of radius epsilon, values kept in [0,1].
/// Batch-norm layers use running statistics. epsilon == 0 returns `images` unchanged.
template <typename T>
Tensor<T> pgd_attack(const UNet<T>& model, const Tensor<T>& images, const Tensor<T>& targets, const PGDConfig& cfg,
                     Rng& rng);

/// Single image convenience wrapper.
Image pgd_attack(const UNet<float>& model, const Image& image, const HeatmapTarget& target, const PGDConfig& cfg,
                 Rng& rng);

struct AdamState {
    std::int64_t step = 0;
    Gradients<float> m;
    Gradients<float> v;
};

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8) with bias correction.
void adam_step(std::vector<Parameter<float>>& params, const Gradients<float>& grads, AdamState& state, double lr);

/// Learning rate at optimizer step `step` (0-based) of `total`.
double scheduled_learning_rate(const TrainConfig& cfg, std::int64_t step, std::int64_t total);

struct EpochStats {
    int epoch = 0;  // 1-based
    double loss = 0.0;
    int batches = 0;
    int adversarial_batches = 0;
    double learning_rate = 0.0;
    double seconds = 0.0;
};

nlohmann::json epoch_to_json(const EpochStats& e);

/// Resumable progress: completed epochs and optimizer moments.
struct TrainState {
    int epoch = 0;
    AdamState adam;
};

using EpochCallback = std::function<void(const EpochStats&, const UNet<float>&, const TrainState&)>;

/// Mini-batch training against the heatmap targets. Results depend only on the model, corpus, config
/// and state. Runs epochs state->epoch + 1 .. cfg.epochs and returns their statistics.
/// Throws Error on an empty corpus or unequal page sizes.
std::vector<EpochStats> train(UNet<float>& model, const std::vector<TrainSample>& corpus, const TrainConfig& cfg,
                              TrainState* state = nullptr, const EpochCallback& on_epoch = {});

/// Adam moments as checkpoint tensors (kind "optim") and back.
std::vector<NamedTensor> optimizer_tensors(const TrainState& state, const UNet<float>& model);
TrainState optimizer_from_tensors(const std::vector<NamedTensor>& tensors, const UNet<float>& model, int epoch,
                                  std::int64_t step);

}  // namespace docdet
