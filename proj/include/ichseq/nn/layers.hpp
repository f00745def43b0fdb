#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ichseq/tensor.hpp"

namespace ichseq::nn {

enum class Mode { kTrain, kEval };

struct Param {
    Tensor value;
    Tensor grad;
    bool trainable = true;

    explicit Param(std::vector<std::size_t> shape, bool trainable_ = true)
        : value(shape), grad(shape), trainable(trainable_) {}
    void zero_grad() { grad.fill(0.0); }
};

struct NamedParam {
    std::string name;
    Param* param;
};

using InitRng = std::mt19937_64;

/// Layer with an explicit backward pass. forward() caches what backward()
/// needs, so calls must alternate forward, backward for one input.
class Module {
public:
    virtual ~Module() = default;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    // Accumulates parameter gradients and returns d(loss)/d(input).
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

class Conv2d : public Module {
public:
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
           std::size_t groups, bool bias, InitRng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;

    Param weight;  // (out, in/groups, k, k)
    std::unique_ptr<Param> bias;

private:
    std::size_t in_, out_, k_, stride_, pad_, groups_;
    Tensor input_;
};

/// Batch norm with frozen running statistics: y = gamma * (x - mean) / sqrt(var + eps) + beta.
/// Statistics are loaded with pretrained weights and never updated, so a
/// slice's output never depends on other slices in the batch.
class FrozenBatchNorm2d : public Module {
public:
    explicit FrozenBatchNorm2d(std::size_t channels, double eps = 1e-5);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;

    Param weight, bias, running_mean, running_var;

private:
    double eps_;
    Tensor input_;
};

class ReLU : public Module {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor output_;
};

class MaxPool2d : public Module {
public:
    MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    std::size_t k_, stride_, pad_;
    std::vector<std::size_t> in_shape_;
    std::vector<std::size_t> argmax_;
};

/// (N, C, H, W) -> (N, C)
class GlobalAvgPool : public Module {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    std::vector<std::size_t> in_shape_;
};

/// Per-sample normalisation over channel groups with a per-channel affine map.
/// Statistics never mix samples, so slices stay independent.
class GroupNorm : public Module {
public:
    GroupNorm(std::size_t groups, std::size_t channels, double eps = 1e-5);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;

    Param weight;  // (C)
    Param bias;    // (C)

private:
    std::size_t groups_;
    double eps_;
    Tensor xhat_;
    std::vector<double> inv_std_;
};

/// (N, C, H, W) -> (N, C), spatial maximum per channel.
class GlobalMaxPool : public Module {
public:
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    std::vector<std::size_t> in_shape_;
    std::vector<std::size_t> argmax_;
};

/// (N, D) -> (N, out)
class Linear : public Module {
public:
    Linear(std::size_t in, std::size_t out, InitRng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;

    Param weight;  // (out, in)
    Param bias;    // (out)

private:
    Tensor input_;
};

/// Squeeze-and-excitation channel gating.
class SqueezeExcite : public Module {
public:
    SqueezeExcite(std::size_t channels, std::size_t reduction, InitRng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;

private:
    Conv2d fc1_, fc2_;
    ReLU relu_;
    Tensor input_, gate_;  // gate_: (N, C, 1, 1) after sigmoid
};

class Sequential : public Module {
public:
    Sequential() = default;
    Sequential& add(std::string name, std::unique_ptr<Module> m);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;
    bool empty() const noexcept { return children_.empty(); }

private:
    std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
};

/// Residual bottleneck: 1x1 reduce, 3x3 (grouped), 1x1 expand, optional SE,
/// plus projection shortcut when shape changes. ReLU after the sum.
class Bottleneck : public Module {
public:
    Bottleneck(std::size_t in_ch, std::size_t width, std::size_t out_ch, std::size_t stride, std::size_t groups,
               std::size_t se_reduction, InitRng& rng);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect(const std::string& prefix, std::vector<NamedParam>& out) override;

private:
    Sequential main_;
    Sequential downsample_;
    ReLU out_relu_;
};

}  // namespace ichseq::nn
