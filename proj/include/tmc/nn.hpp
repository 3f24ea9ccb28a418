#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tmc/tensor.hpp"

namespace tmc {

// Named view into a parameter or persistent buffer, used by checkpoints and
// the optimizer. Points at storage owned by the layer.
struct StateEntry {
    std::string name;
    Shape shape;
    std::vector<double>* data;
    bool trainable;
    Tensor tensor;  // the parameter itself for trainable entries; empty for buffers
};

namespace init {

// Fan-in-scaled uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline std::vector<double> fan_in_uniform(std::int64_t count, std::int64_t fan_in, Rng& rng) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(count));
    for (auto& x : v) x = rng.uniform(-s, s);
    return v;
}

inline std::vector<double> normal(std::int64_t count, double stddev, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(count));
    for (auto& x : v) x = stddev * rng.normal();
    return v;
}

}  // namespace init

struct Dense {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]

    Dense() = default;
    Dense(std::int64_t in, std::int64_t out, Rng& rng)
        : weight(Tensor::param({in, out}, init::fan_in_uniform(in * out, in, rng))),
          bias(Tensor::param({out}, std::vector<double>(static_cast<std::size_t>(out), 0.0))) {}

    Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

    void collect(const std::string& prefix, std::vector<StateEntry>& out) {
        out.push_back({prefix + ".weight", weight.shape(), &weight.values(), true, weight});
        out.push_back({prefix + ".bias", bias.shape(), &bias.values(), true, bias});
    }
};

struct Conv2dLayer {
    Tensor weight;  // [F, C, kh, kw]
    Tensor bias;    // [F]
    Padding padding = Padding::Same;

    Conv2dLayer() = default;
    Conv2dLayer(std::int64_t f, std::int64_t c, std::int64_t kh, std::int64_t kw, Padding pad,
                Rng& rng)
        : weight(Tensor::param({f, c, kh, kw}, init::fan_in_uniform(f * c * kh * kw, c * kh * kw, rng))),
          bias(Tensor::param({f}, std::vector<double>(static_cast<std::size_t>(f), 0.0))),
          padding(pad) {}

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, padding); }

    void collect(const std::string& prefix, std::vector<StateEntry>& out) {
        out.push_back({prefix + ".weight", weight.shape(), &weight.values(), true, weight});
        out.push_back({prefix + ".bias", bias.shape(), &bias.values(), true, bias});
    }
};

struct BatchNormLayer {
    Tensor gamma;
    Tensor beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;

    BatchNormLayer() = default;
    explicit BatchNormLayer(std::int64_t c)
        : gamma(Tensor::param({c}, std::vector<double>(static_cast<std::size_t>(c), 1.0))),
          beta(Tensor::param({c}, std::vector<double>(static_cast<std::size_t>(c), 0.0))),
          running_mean(static_cast<std::size_t>(c), 0.0),
          running_var(static_cast<std::size_t>(c), 1.0) {}

    Tensor operator()(const Tensor& x, Mode mode) {
        return batchnorm(x, gamma, beta, running_mean, running_var, mode);
    }

    void collect(const std::string& prefix, std::vector<StateEntry>& out) {
        out.push_back({prefix + ".gamma", gamma.shape(), &gamma.values(), true, gamma});
        out.push_back({prefix + ".beta", beta.shape(), &beta.values(), true, beta});
        const auto c = static_cast<std::int64_t>(running_mean.size());
        out.push_back({prefix + ".running_mean", Shape{c}, &running_mean, false, {}});
        out.push_back({prefix + ".running_var", Shape{c}, &running_var, false, {}});
    }
};

struct LayerNormLayer {
    Tensor gamma;
    Tensor beta;

    LayerNormLayer() = default;
    explicit LayerNormLayer(std::int64_t d)
        : gamma(Tensor::param({d}, std::vector<double>(static_cast<std::size_t>(d), 1.0))),
          beta(Tensor::param({d}, std::vector<double>(static_cast<std::size_t>(d), 0.0))) {}

    Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }

    void collect(const std::string& prefix, std::vector<StateEntry>& out) {
        out.push_back({prefix + ".gamma", gamma.shape(), &gamma.values(), true, gamma});
        out.push_back({prefix + ".beta", beta.shape(), &beta.values(), true, beta});
    }
};

}  // namespace tmc
