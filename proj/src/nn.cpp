#include "crumb/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace crumb {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

namespace {

// Kaiming fan-in scaling, zero bias
void kaiming_fill(Tensor& w, std::size_t fan_in, Rng& rng) {
    float scale = std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : w.data) v = rng.normal() * scale;
}

void require(bool cond, const char* msg) {
    if (!cond) throw DataError(msg);
}

}  // namespace

Layer make_conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                  std::size_t stride, std::size_t padding, Rng& rng) {
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    l.weight = Tensor::zeros({out_ch, in_ch, kernel, kernel});
    l.bias = Tensor::zeros({out_ch});
    kaiming_fill(l.weight, in_ch * kernel * kernel, rng);
    l.weight.ensure_grad();
    l.bias.ensure_grad();
    return l;
}

Layer make_relu() {
    Layer l;
    l.kind = LayerKind::Relu;
    return l;
}

Layer make_maxpool2d(std::size_t kernel, std::size_t stride) {
    Layer l;
    l.kind = LayerKind::MaxPool2d;
    l.pool_kernel = kernel;
    l.pool_stride = stride;
    return l;
}

Layer make_global_avg_pool() {
    Layer l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
}

Layer make_linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
    Layer l;
    l.kind = LayerKind::Linear;
    l.in_features = in_features;
    l.out_features = out_features;
    l.weight = Tensor::zeros({out_features, in_features});
    l.bias = Tensor::zeros({out_features});
    kaiming_fill(l.weight, in_features, rng);
    l.weight.ensure_grad();
    l.bias.ensure_grad();
    return l;
}

void extend_linear_rows(Layer& linear, std::size_t extra, Rng& rng) {
    require(linear.kind == LayerKind::Linear, "extend_linear_rows: not a linear layer");
    std::size_t in = linear.in_features;
    float scale = std::sqrt(2.0f / static_cast<float>(in));
    for (std::size_t r = 0; r < extra; ++r) {
        for (std::size_t c = 0; c < in; ++c) linear.weight.data.push_back(rng.normal() * scale);
        linear.bias.data.push_back(0.0f);
    }
    linear.out_features += extra;
    linear.weight.shape = {linear.out_features, in};
    linear.bias.shape = {linear.out_features};
    linear.weight.grad.clear();
    linear.bias.grad.clear();
    linear.weight.ensure_grad();
    linear.bias.ensure_grad();
}

namespace {

Tensor conv_forward(const Layer& l, const Tensor& x) {
    require(x.shape.size() == 3 && x.shape[0] == l.in_channels, "conv2d: input shape mismatch");
    std::size_t h = x.shape[1], w = x.shape[2];
    require(h + 2 * l.padding >= l.kernel && w + 2 * l.padding >= l.kernel,
            "conv2d: input smaller than kernel");
    std::size_t oh = (h + 2 * l.padding - l.kernel) / l.stride + 1;
    std::size_t ow = (w + 2 * l.padding - l.kernel) / l.stride + 1;
    Tensor y = Tensor::zeros({l.out_channels, oh, ow});
    const float* wt = l.weight.data.data();
    for (std::size_t oc = 0; oc < l.out_channels; ++oc) {
        float b = l.bias.data[oc];
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float acc = b;
                for (std::size_t ic = 0; ic < l.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                            static_cast<std::ptrdiff_t>(l.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                                static_cast<std::ptrdiff_t>(l.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += wt[((oc * l.in_channels + ic) * l.kernel + ky) * l.kernel + kx] *
                                   x.data[(ic * h + static_cast<std::size_t>(iy)) * w +
                                          static_cast<std::size_t>(ix)];
                        }
                    }
                }
                y.data[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return y;
}

Tensor conv_backward(Layer& l, const Tensor& x, const Tensor& gy) {
    std::size_t h = x.shape[1], w = x.shape[2];
    std::size_t oh = gy.shape[1], ow = gy.shape[2];
    Tensor gx = Tensor::zeros(x.shape);
    l.weight.ensure_grad();
    l.bias.ensure_grad();
    for (std::size_t oc = 0; oc < l.out_channels; ++oc) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float g = gy.data[(oc * oh + oy) * ow + ox];
                if (g == 0.0f) continue;
                l.bias.grad[oc] += g;
                for (std::size_t ic = 0; ic < l.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                        std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                            static_cast<std::ptrdiff_t>(l.padding);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                                static_cast<std::ptrdiff_t>(l.padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            std::size_t wi =
                                ((oc * l.in_channels + ic) * l.kernel + ky) * l.kernel + kx;
                            std::size_t xi = (ic * h + static_cast<std::size_t>(iy)) * w +
                                             static_cast<std::size_t>(ix);
                            l.weight.grad[wi] += g * x.data[xi];
                            gx.data[xi] += g * l.weight.data[wi];
                        }
                    }
                }
            }
        }
    }
    return gx;
}

Tensor pool_forward(const Layer& l, const Tensor& x) {
    require(x.shape.size() == 3, "maxpool2d: rank-3 input expected");
    std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    require(h >= l.pool_kernel && w >= l.pool_kernel, "maxpool2d: input smaller than window");
    std::size_t oh = (h - l.pool_kernel) / l.pool_stride + 1;
    std::size_t ow = (w - l.pool_kernel) / l.pool_stride + 1;
    Tensor y = Tensor::zeros({c, oh, ow});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                for (std::size_t ky = 0; ky < l.pool_kernel; ++ky)
                    for (std::size_t kx = 0; kx < l.pool_kernel; ++kx) {
                        float v = x.data[(ch * h + oy * l.pool_stride + ky) * w +
                                         ox * l.pool_stride + kx];
                        if (v > best) best = v;
                    }
                y.data[(ch * oh + oy) * ow + ox] = best;
            }
    return y;
}

Tensor pool_backward(const Layer& l, const Tensor& x, const Tensor& gy) {
    std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    std::size_t oh = gy.shape[1], ow = gy.shape[2];
    Tensor gx = Tensor::zeros(x.shape);
    // gradient flows to the first maximum in scan order (matches forward)
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                std::size_t bi = 0;
                for (std::size_t ky = 0; ky < l.pool_kernel; ++ky)
                    for (std::size_t kx = 0; kx < l.pool_kernel; ++kx) {
                        std::size_t xi = (ch * h + oy * l.pool_stride + ky) * w +
                                         ox * l.pool_stride + kx;
                        if (x.data[xi] > best) {
                            best = x.data[xi];
                            bi = xi;
                        }
                    }
                gx.data[bi] += gy.data[(ch * oh + oy) * ow + ox];
            }
    return gx;
}

Tensor linear_forward(const Layer& l, const Tensor& x) {
    require(x.numel() == l.in_features, "linear: input feature count mismatch");
    Tensor y = Tensor::zeros({l.out_features});
    for (std::size_t o = 0; o < l.out_features; ++o) {
        float acc = l.bias.data[o];
        const float* row = l.weight.data.data() + o * l.in_features;
        for (std::size_t i = 0; i < l.in_features; ++i) acc += row[i] * x.data[i];
        y.data[o] = acc;
    }
    return y;
}

Tensor linear_backward(Layer& l, const Tensor& x, const Tensor& gy) {
    Tensor gx = Tensor::zeros(x.shape);
    l.weight.ensure_grad();
    l.bias.ensure_grad();
    for (std::size_t o = 0; o < l.out_features; ++o) {
        float g = gy.data[o];
        l.bias.grad[o] += g;
        const float* row = l.weight.data.data() + o * l.in_features;
        float* grow = l.weight.grad.data() + o * l.in_features;
        for (std::size_t i = 0; i < l.in_features; ++i) {
            grow[i] += g * x.data[i];
            gx.data[i] += g * row[i];
        }
    }
    return gx;
}

Tensor layer_forward(const Layer& l, const Tensor& x) {
    switch (l.kind) {
        case LayerKind::Conv2d: return conv_forward(l, x);
        case LayerKind::Relu: {
            Tensor y = x;
            y.grad.clear();
            for (auto& v : y.data) v = std::max(v, 0.0f);
            return y;
        }
        case LayerKind::MaxPool2d: return pool_forward(l, x);
        case LayerKind::GlobalAvgPool: {
            require(x.shape.size() == 3, "global_avg_pool: rank-3 input expected");
            std::size_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
            Tensor y = Tensor::zeros({c});
            for (std::size_t ch = 0; ch < c; ++ch) {
                float acc = 0.0f;
                for (std::size_t i = 0; i < hw; ++i) acc += x.data[ch * hw + i];
                y.data[ch] = acc / static_cast<float>(hw);
            }
            return y;
        }
        case LayerKind::Linear: return linear_forward(l, x);
    }
    throw DataError("unknown layer kind");
}

Tensor layer_backward(Layer& l, const Tensor& x, const Tensor& gy) {
    switch (l.kind) {
        case LayerKind::Conv2d: return conv_backward(l, x, gy);
        case LayerKind::Relu: {
            Tensor gx = Tensor::zeros(x.shape);
            for (std::size_t i = 0; i < x.numel(); ++i)
                gx.data[i] = x.data[i] > 0.0f ? gy.data[i] : 0.0f;
            return gx;
        }
        case LayerKind::MaxPool2d: return pool_backward(l, x, gy);
        case LayerKind::GlobalAvgPool: {
            std::size_t c = x.shape[0], hw = x.shape[1] * x.shape[2];
            Tensor gx = Tensor::zeros(x.shape);
            for (std::size_t ch = 0; ch < c; ++ch) {
                float g = gy.data[ch] / static_cast<float>(hw);
                for (std::size_t i = 0; i < hw; ++i) gx.data[ch * hw + i] = g;
            }
            return gx;
        }
        case LayerKind::Linear: return linear_backward(l, x, gy);
    }
    throw DataError("unknown layer kind");
}

}  // namespace

ForwardTrace forward(const Network& net, const Tensor& input, std::size_t from_layer,
                     std::size_t to_layer) {
    if (to_layer == kToEnd) to_layer = net.layers.size();
    require(from_layer < net.layers.size() && to_layer <= net.layers.size() &&
                from_layer <= to_layer,
            "forward: layer range out of bounds");
    input.check_finite("forward input");
    ForwardTrace tr;
    tr.from_layer = from_layer;
    tr.to_layer = to_layer;
    tr.acts.reserve(to_layer - from_layer + 1);
    tr.acts.push_back(input);
    for (std::size_t i = from_layer; i < to_layer; ++i) {
        Tensor y = layer_forward(net.layers[i], tr.acts.back());
        y.check_finite(layer_kind_name(net.layers[i].kind));
        tr.acts.push_back(std::move(y));
    }
    return tr;
}

Tensor backward(Network& net, const ForwardTrace& trace, const Tensor& grad_output) {
    require(trace.acts.size() == trace.to_layer - trace.from_layer + 1,
            "backward: trace missing activations");
    require(grad_output.numel() == trace.output().numel(), "backward: grad shape mismatch");
    Tensor g = grad_output;
    for (std::size_t i = trace.to_layer; i > trace.from_layer; --i) {
        const Tensor& x = trace.acts[i - 1 - trace.from_layer];
        g = layer_backward(net.layers[i - 1], x, g);
    }
    return g;
}

void sgd_step(Network& net, float learning_rate) {
    for (Layer& l : net.layers) {
        if (!l.has_params()) continue;
        if (!l.frozen && l.weight.has_grad()) {
            for (std::size_t i = 0; i < l.weight.numel(); ++i)
                l.weight.data[i] -= learning_rate * l.weight.grad[i];
            for (std::size_t i = 0; i < l.bias.numel(); ++i)
                l.bias.data[i] -= learning_rate * l.bias.grad[i];
        }
        l.weight.zero_grad();
        l.bias.zero_grad();
    }
}

void zero_grads(Network& net) {
    for (Layer& l : net.layers) {
        if (!l.has_params()) continue;
        l.weight.zero_grad();
        l.bias.zero_grad();
    }
}

std::pair<float, Tensor> softmax_cross_entropy(const Tensor& logits, std::size_t target_class) {
    require(logits.shape.size() == 1 && logits.numel() >= 2, "softmax_ce: rank-1 logits of length >= 2 expected");
    if (target_class >= logits.numel()) throw DataError("softmax_ce: target class out of range");
    float m = *std::max_element(logits.data.begin(), logits.data.end());
    float sum = 0.0f;
    Tensor g = Tensor::zeros(logits.shape);
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        g.data[i] = std::exp(logits.data[i] - m);
        sum += g.data[i];
    }
    float loss = std::log(sum) - (logits.data[target_class] - m);
    for (std::size_t i = 0; i < logits.numel(); ++i) g.data[i] /= sum;
    g.data[target_class] -= 1.0f;
    return {loss, std::move(g)};
}

std::vector<float> finite_diff_grad(const std::function<float()>& loss_fn,
                                    std::span<float* const> coords, float eps) {
    std::vector<float> out;
    out.reserve(coords.size());
    for (float* c : coords) {
        float orig = *c;
        *c = orig + eps;
        float lp = loss_fn();
        *c = orig - eps;
        float lm = loss_fn();
        *c = orig;
        out.push_back((lp - lm) / (2.0f * eps));
    }
    return out;
}

std::vector<std::pair<std::string, Tensor*>> parameter_tensors(Network& net) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        Layer& l = net.layers[i];
        if (!l.has_params()) continue;
        std::string base = "layer" + std::to_string(i) + "_" + layer_kind_name(l.kind);
        out.emplace_back(base + "_weight", &l.weight);
        out.emplace_back(base + "_bias", &l.bias);
    }
    return out;
}

}  // namespace crumb
