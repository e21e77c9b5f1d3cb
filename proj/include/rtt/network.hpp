#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rtt/tensor.hpp"

namespace rtt {

enum class LayerKind { Conv2d, Relu, MaxPool2, Flatten, Dense, BatchNorm };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int out_channels = 0;  // Conv2d
    int kernel = 0;        // Conv2d
    int stride = 1;        // Conv2d
    int pad = 0;           // Conv2d
    int units = 0;         // Dense

    static LayerSpec conv(int out_channels, int kernel, int stride = 1, int pad = 0) {
        LayerSpec s;
        s.kind = LayerKind::Conv2d;
        s.out_channels = out_channels;
        s.kernel = kernel;
        s.stride = stride;
        s.pad = pad;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::Relu}; }
    static LayerSpec maxpool2() { return LayerSpec{LayerKind::MaxPool2}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::Flatten}; }
    static LayerSpec dense(int units) {
        LayerSpec s;
        s.kind = LayerKind::Dense;
        s.units = units;
        return s;
    }
    static LayerSpec batchnorm() { return LayerSpec{LayerKind::BatchNorm}; }
};

const char* layer_kind_name(LayerKind k);

struct Shape3 {
    int c = 0, h = 0, w = 0;
    int count() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
    std::string str() const;
};

struct ParamSpan {
    std::size_t offset = 0;
    std::size_t size = 0;
};

enum class Mode { Train, Eval };

// Per-channel running statistics of a batchnorm layer (eval-mode state).
struct BnRunning {
    std::vector<double> mean;
    std::vector<double> var;  // initialized to 1
};

// Feed-forward image classifier over a flat parameter vector.
// The "head" is the final dense layer; head_span indexes its weights+bias
// inside params. Gradient restriction and Hessian-vector products for
// influence scoring operate on that span only.
struct Network {
    Shape3 input;
    std::vector<LayerSpec> layers;
    std::vector<Shape3> out_shapes;   // per layer
    std::vector<ParamSpan> spans;     // per layer; size 0 for parameterless layers
    std::vector<int> bn_slot;         // per layer; -1 unless BatchNorm
    std::vector<BnRunning> bn;        // one entry per BatchNorm layer
    std::vector<double> params;
    ParamSpan head_span;
    int head_layer = -1;
    int n_classes = 0;
    Mode mode = Mode::Eval;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    std::size_t n_params() const { return params.size(); }
    int feature_dim() const;  // input width of the head dense layer
};

// Validates the layer stack, infers shapes, allocates zeroed parameters.
// The last layer must be Dense; its units define n_classes.
Network build_network(Shape3 input, std::vector<LayerSpec> layers);

// He-normal weights for conv/dense, zero biases, unit batchnorm scale.
void init_params(Network& net, std::uint64_t seed);

// Cached per-layer activations of one forward pass, consumed by backward().
struct BnCache {
    std::vector<double> mean, var, inv_std;  // per channel (batch stats in train mode)
    std::vector<double> xhat;                // normalized activations, B*C*H*W
};

struct Trace {
    int batch = 0;
    std::vector<double> input;               // B * input.count()
    std::vector<std::vector<double>> acts;   // acts[l] = output of layer l
    std::vector<std::vector<int>> pool_idx;  // per MaxPool2 layer (slot order)
    std::vector<BnCache> bn_cache;           // per BatchNorm layer (slot order)
};

// Forward pass over a batch; returns [batch, n_classes] logits.
// Throws std::invalid_argument naming the offending layer on shape mismatch.
Tensor forward(const Network& net, const std::vector<const Tensor*>& xs, Trace* trace = nullptr);
Tensor forward(const Network& net, const std::vector<Example>& batch, Trace* trace = nullptr);

struct BackwardOpts {
    bool param_grads = true;
    bool input_grad = false;
};

struct Grads {
    std::vector<double> params;  // size n_params (empty if not requested)
    std::vector<double> input;   // size batch * input.count() (empty if not requested)
};

// Backpropagates d(scalar)/d(logits) through the whole network.
Grads backward(const Network& net, const Trace& trace, const std::vector<double>& dlogits,
               const BackwardOpts& opts);

// Backpropagates a cotangent given at the *output of layer `from_layer`*
// down to the network input. Parameter gradients are not accumulated.
// from_layer == -1 means the cotangent already sits at the input.
std::vector<double> backward_to_input(const Network& net, const Trace& trace, int from_layer,
                                      const std::vector<double>& cot);

// Folds the batch statistics cached by a train-mode forward into the running
// estimates. forward() itself never mutates the network; trainers call this
// once per optimization step.
void bn_update_running(Network& net, const Trace& trace);

}  // namespace rtt
