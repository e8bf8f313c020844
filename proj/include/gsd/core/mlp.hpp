#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gsd/core/ops.hpp"
#include "gsd/core/random.hpp"
#include "gsd/core/tensor.hpp"

namespace gsd {

enum class Activation { Linear, Relu, Sigmoid };

struct DenseLayer {
    Tensor weight;  // [out, in]
    Tensor bias;    // [out]
    Activation act = Activation::Relu;

    int64_t in_width() const { return weight.dim(1); }
    int64_t out_width() const { return weight.dim(0); }
};

inline DenseLayer make_layer(int64_t in, int64_t out, Activation act, Rng& rng,
                             bool zero_init = false) {
    DenseLayer layer;
    layer.weight = Tensor::zeros({out, in});
    layer.bias = Tensor::zeros({out});
    if (!zero_init) {
        // Kaiming-style uniform fan-in init.
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        auto w = layer.weight.mutable_data();
        for (auto& v : w) v = static_cast<real>(rng.uniform(-bound, bound));
    }
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
    layer.act = act;
    return layer;
}

// Stacked affine+activation layers. If skip_at >= 0, the original input is
// concatenated onto the hidden features right before layer `skip_at`
// (0-based), mirroring the NeRF-style decoder skip.
struct Mlp {
    std::vector<DenseLayer> layers;
    int skip_at = -1;

    Tensor forward(const Tensor& input) const {
        if (layers.empty()) throw ContractError("forward_mlp on empty layer list");
        if (input.rank() != 2 || input.dim(1) != layers[0].in_width())
            throw ShapeError("forward_mlp: input width " +
                             std::to_string(input.rank() == 2 ? input.dim(1) : int64_t(-1)) +
                             " does not match layer 0 input width " +
                             std::to_string(layers[0].in_width()));
        Tensor h = input;
        for (size_t i = 0; i < layers.size(); ++i) {
            if (static_cast<int>(i) == skip_at) h = concat_cols({h, input});
            const auto& l = layers[i];
            if (h.dim(1) != l.in_width())
                throw ShapeError("forward_mlp: layer " + std::to_string(i) + " expects width " +
                                 std::to_string(l.in_width()) + ", got " +
                                 std::to_string(h.dim(1)));
            h = linear(h, l.weight, l.bias);
            switch (l.act) {
                case Activation::Relu: h = relu(h); break;
                case Activation::Sigmoid: h = sigmoid(h); break;
                case Activation::Linear: break;
            }
        }
        return h;
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        for (const auto& l : layers) {
            out.push_back(l.weight);
            out.push_back(l.bias);
        }
        return out;
    }

    void set_param_names(const std::string& prefix) {
        for (size_t i = 0; i < layers.size(); ++i) {
            layers[i].weight.set_name(prefix + ".l" + std::to_string(i) + ".weight");
            layers[i].bias.set_name(prefix + ".l" + std::to_string(i) + ".bias");
        }
    }
};

inline Tensor forward_mlp(const Mlp& net, const Tensor& input) { return net.forward(input); }

// Hidden layers ReLU, final layer linear. widths = {in, h1, ..., out}.
inline Mlp make_mlp(const std::vector<int64_t>& widths, Rng& rng, int skip_at = -1,
                    bool zero_init_last = false) {
    if (widths.size() < 2) throw ContractError("make_mlp needs at least one layer");
    Mlp net;
    net.skip_at = skip_at;
    for (size_t i = 0; i + 1 < widths.size(); ++i) {
        const bool last = (i + 2 == widths.size());
        int64_t in = widths[i];
        if (static_cast<int>(i) == skip_at) in += widths[0];
        net.layers.push_back(make_layer(in, widths[i + 1],
                                        last ? Activation::Linear : Activation::Relu, rng,
                                        last && zero_init_last));
    }
    return net;
}

}  // namespace gsd
