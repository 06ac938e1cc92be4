#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docdet/postprocess.hpp"
#include "docdet/tensor.hpp"

namespace docdet {

enum class NormKind { Batch, None };

/// How batch-norm layers normalize during a forward pass.
enum class NormMode {
    /// Statistics of the current batch (training).
    Batch,
    /// Running statistics accumulated in training (inference, attacks).
    Running,
};

struct ModelConfig {
    int in_channels = 1;
    /// Encoder widths, shallowest first. Four levels, three 2x2 poolings.
    std::vector<int> level_channels{16, 32, 32, 32};
    int out_channels = 3;
    NormKind norm = NormKind::Batch;
    double norm_momentum = 0.1;
    double norm_eps = 1e-5;

    /// Throws ConfigError.
    void validate() const;
    /// Input sides must be multiples of this.
    int size_multiple() const { return 1 << (static_cast<int>(level_channels.size()) - 1); }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
};

/// Gradients aligned with UNet::parameters().
template <typename T>
using Gradients = std::vector<std::vector<T>>;

/// Activations recorded by a forward pass for backward().
template <typename T>
struct Tape {
    /// conv3x3 -> norm -> relu; the conv input is stored only where it is not the previous unit's output.
    struct Unit {
        Tensor<T> input;
        Tensor<T> pre_norm;
        std::vector<T> mean;
        std::vector<T> inv_std;
        std::vector<T> batch_var;  // unbiased, for running statistics
        Tensor<T> output;
    };
    NormMode mode = NormMode::Running;
    int input_channels = 0;
    std::vector<Unit> units;
    std::vector<std::vector<std::uint8_t>> pool_argmax;
    std::vector<Tensor<T>> up_inputs;
    Tensor<T> output;
};

/// U-Net: per level [conv3x3 -> norm -> relu] x2, 2x2 max-pool between levels,
/// 2x2 stride-2 transposed conv + skip concatenation on the way up, 1x1 conv + sigmoid head.
template <typename T>
class UNet {
public:
    UNet() = default;
    /// He-normal weights from `seed`; identical seeds give identical parameters.
    static UNet build(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }
    /// Non-trained state: batch-norm running means and variances.
    std::vector<Parameter<T>>& buffers() { return buffers_; }
    const std::vector<Parameter<T>>& buffers() const { return buffers_; }
    size_t parameter_count() const;

    Gradients<T> zero_gradients() const;

    /// Forward pass over a batch [in_channels][N][H][W]; H and W must be multiples of
    /// config().size_multiple(). Output [out_channels][N][H][W], every value in (0,1).
    /// When `tape` is non-null it records what backward() needs.
    Tensor<T> forward(const Tensor<T>& input, NormMode mode, Tape<T>* tape = nullptr) const;

    /// Backpropagates d(loss)/d(output) through a recorded pass. Adds parameter gradients
    /// into `grads` when non-null and returns d(loss)/d(input).
    Tensor<T> backward(const Tape<T>& tape, const Tensor<T>& grad_output, Gradients<T>* grads) const;

    /// Folds the batch statistics recorded in a NormMode::Batch tape into the running statistics.
    void update_running_stats(const Tape<T>& tape);

    /// Same architecture and values in another precision.
    template <typename U>
    UNet<U> cast() const;

private:
    template <typename U>
    friend class UNet;

    ModelConfig config_;
    std::vector<Parameter<T>> params_;
    std::vector<Parameter<T>> buffers_;
};

/// Closed-form parameter count for a config.
size_t parameter_count(const ModelConfig& config);

/// Pads with white to the model's size multiple, runs a Running-mode forward pass and crops back.
ScoreMaps predict_maps(const UNet<float>& model, const Image& image);

/// Checkpoint layout: 8-byte magic "DOCDETCK", uint32 format version, uint64 header length,
/// JSON header {version, dtype, model, tensors: [{name, kind, shape, offset, count}], extra},
/// then the raw little-endian tensor payload. `kind` is "param", "buffer" or any caller-chosen tag.
struct NamedTensor {
    std::string name;
    std::string kind;
    std::vector<int> shape;
    std::vector<float> values;
};

void save_model(const std::filesystem::path& path, const UNet<float>& model, const nlohmann::json& extra = {},
                const std::vector<NamedTensor>& extra_tensors = {});
/// Throws IoError on a malformed or wrong-version file.
UNet<float> load_model(const std::filesystem::path& path);
/// As above, and throws ConfigError when the stored config differs from `expected`.
UNet<float> load_model(const std::filesystem::path& path, const ModelConfig& expected);
/// Header only; no tensor data is read.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);
ModelConfig read_checkpoint_config(const std::filesystem::path& path);
/// Tensors whose kind is not "param" or "buffer".
std::vector<NamedTensor> read_checkpoint_extras(const std::filesystem::path& path);

}  // namespace docdet
