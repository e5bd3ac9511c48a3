#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kwsrl/mfcc.hpp"
#include "kwsrl/nn/graph.hpp"
#include "kwsrl/rng.hpp"

namespace kwsrl::policy {

// Shape hyperparameters of the CNN-LSTM policy network.
struct Architecture {
    std::size_t n_mfcc = 40;
    std::size_t n_frames = 32;
    std::size_t num_classes = 2;
    std::size_t conv1_filters = 16;
    std::size_t conv2_filters = 8;
    std::size_t kernel_size = 3;
    std::size_t pool_window = 2;
    std::size_t lstm_hidden = 50;
    std::vector<std::size_t> dense_units = {512, 256, 64};
    double dropout_rate = 0.3;

    void validate() const;
    // Flattened per-frame width fed to the LSTM.
    std::size_t frame_width() const { return (n_mfcc / pool_window) * conv2_filters; }

    std::string describe() const;  // one-line key=value form used in checkpoints
    static Architecture parse(const std::string& line);

    bool operator==(const Architecture&) const = default;
};

struct TensorSpec {
    std::string name;
    nn::Shape shape;
};

// Canonical tensor order: conv1.kernel, conv1.bias, conv2.kernel,
// conv2.bias, lstm.input_weights, lstm.recurrent_weights, lstm.bias,
// dense<i>.weight, dense<i>.bias for each hidden dense layer, head.weight,
// head.bias. "head.*" holds the output layer; everything before it is the
// shared feature stack.
std::vector<TensorSpec> layout(const Architecture& arch);

std::size_t parameter_count(const Architecture& arch);

template <typename T>
struct Params {
    Architecture arch;
    std::vector<nn::Tensor<T>> tensors;  // parallel to layout(arch)

    // Zero tensors in the canonical layout.
    static Params zeros(const Architecture& arch);

    std::size_t scalar_count() const;
    nn::Tensor<T>& operator[](const std::string& name);
    const nn::Tensor<T>& operator[](const std::string& name) const;

    template <typename U>
    Params<U> cast() const
    {
        Params<U> out{arch, {}};
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }

    bool operator==(const Params&) const = default;
};

using PolicyParams = Params<float>;

// Glorot-uniform weights for conv, dense and LSTM matrices; zero biases
// except the LSTM forget gate, which starts at 1.
PolicyParams init_params(const Architecture& arch, std::uint64_t seed);

// [batch, n_frames, n_mfcc]; each frame is later treated as a one-channel
// sequence along the coefficient axis.
template <typename T>
nn::Tensor<T> state_batch(std::span<const dsp::FeatureMatrix* const> states);

template <typename T>
nn::Tensor<T> state_tensor(const dsp::FeatureMatrix& features);  // batch of one

template <typename T>
struct NetworkOutput {
    nn::Var<T> logits;  // [batch, classes]
    nn::Var<T> probs;   // [batch, classes]
};

// Records the network on `graph` with parameter handles in layout order.
// Pipeline per frame: conv1 -> relu -> conv2 -> relu -> maxpool; then the
// LSTM over frames, dropout, relu dense stack, linear head and softmax.
template <typename T>
NetworkOutput<T> build_network(nn::Graph<T>& graph, const Architecture& arch, std::span<const nn::Var<T>> params,
                               nn::Var<T> states, bool training, Rng* rng);

// Binds params (with optional gradient sinks, same layout) to the graph and
// records the network.
template <typename T>
NetworkOutput<T> build_network(nn::Graph<T>& graph, const Params<T>& params, const nn::Tensor<T>& states,
                               bool training, Rng* rng, Params<T>* grad_sinks = nullptr);

// Action distributions [batch, classes]. Without training no randomness is
// used and rng may be null.
nn::Tensor<float> forward_batch(const PolicyParams& params, std::span<const dsp::FeatureMatrix* const> states,
                                bool training, Rng* rng);

// Distribution for one state.
std::vector<float> forward(const PolicyParams& params, const dsp::FeatureMatrix& state, bool training, Rng* rng);

// Index of the largest probability, lowest index on ties.
std::size_t argmax(std::span<const float> probs);

std::size_t act(const PolicyParams& params, const dsp::FeatureMatrix& state);

// Policy and frozen target with identical architecture. The target only
// changes through sync().
template <typename P>
class ModelPair {
public:
    explicit ModelPair(P initial) : policy_(initial), target_(std::move(initial)) {}

    P& policy() noexcept { return policy_; }
    const P& policy() const noexcept { return policy_; }
    const P& target() const noexcept { return target_; }

    void sync() { target_ = policy_; }

private:
    P policy_;
    P target_;
};

// Checkpoint: "NNCKPT", version byte, newline, a text header (architecture
// line, one "tensor <name> <shape> <offset>" line per tensor, "payload
// <bytes>"), then little-endian f32 data. Written via temp file + rename.
void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path);

// Reconstructs the architecture from the header.
PolicyParams load_checkpoint(const std::filesystem::path& path);

// As above, but every tensor must match `expected`; a mismatch raises
// ShapeError naming the tensor.
PolicyParams load_checkpoint(const std::filesystem::path& path, const Architecture& expected);

}  // namespace kwsrl::policy
