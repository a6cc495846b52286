#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crumb/rng.hpp"
#include "crumb/tensor.hpp"

namespace crumb {

enum class LayerKind { Conv2d, Relu, MaxPool2d, GlobalAvgPool, Linear };

const char* layer_kind_name(LayerKind k);

// One layer of the declarable CNN. Parameter layout:
//   conv2d: weight [out, in, k, k], bias [out]
//   linear: weight [out, in], bias [out]; input flattened
struct Layer {
    LayerKind kind;

    // conv2d
    std::size_t in_channels = 0, out_channels = 0;
    std::size_t kernel = 0, stride = 1, padding = 0;

    // maxpool2d: non-overlapping when pool_stride == pool_kernel
    std::size_t pool_kernel = 2, pool_stride = 2;

    // linear
    std::size_t in_features = 0, out_features = 0;

    Tensor weight, bias;
    bool frozen = false;  // grads still accumulate; sgd_step skips updates

    bool has_params() const { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
};

Layer make_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                  std::size_t stride, std::size_t padding, Rng& rng);
Layer make_relu();
Layer make_maxpool2d(std::size_t kernel, std::size_t stride);
Layer make_global_avg_pool();
Layer make_linear(std::size_t in_features, std::size_t out_features, Rng& rng);

// Layers [0, split_index) form the feature extractor F, the rest the classifier P.
struct Network {
    std::vector<Layer> layers;
    std::size_t split_index = 0;
};

constexpr std::size_t kToEnd = std::numeric_limits<std::size_t>::max();

// Activations from one forward pass. acts[0] is the input; acts[i] is the
// output of layer from_layer + i - 1.
struct ForwardTrace {
    std::size_t from_layer = 0;
    std::size_t to_layer = 0;  // one past the last executed layer
    std::vector<Tensor> acts;

    const Tensor& output() const { return acts.back(); }
};

// Runs layers [from_layer, to_layer). Throws on shape mismatch or non-finite
// activations.
ForwardTrace forward(const Network& net, const Tensor& input, std::size_t from_layer = 0,
                     std::size_t to_layer = kToEnd);

// Accumulates parameter gradients for the traced layers (on top of whatever is
// already there) and returns the gradient w.r.t. the trace input.
Tensor backward(Network& net, const ForwardTrace& trace, const Tensor& grad_output);

// trainable params <- params - lr * grad, then all grads (frozen ones too) cleared
void sgd_step(Network& net, float learning_rate);
void zero_grads(Network& net);

// loss = -log softmax(logits)[target]; grad = softmax(logits) - one_hot(target)
std::pair<float, Tensor> softmax_cross_entropy(const Tensor& logits, std::size_t target_class);

// Appends `extra` output rows to a linear layer, Kaiming-initialized; existing
// rows are untouched.
void extend_linear_rows(Layer& linear, std::size_t extra, Rng& rng);

// Central-difference oracle: perturbs each listed coordinate in place by +/-eps
// around its current value and evaluates loss_fn.
std::vector<float> finite_diff_grad(const std::function<float()>& loss_fn,
                                    std::span<float* const> coords, float eps);

// Named views over every parameter tensor, for checkpoints.
std::vector<std::pair<std::string, Tensor*>> parameter_tensors(Network& net);

}  // namespace crumb
