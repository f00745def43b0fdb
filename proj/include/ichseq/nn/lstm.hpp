#pragma once

#include <span>
#include <string>
#include <vector>

#include "ichseq/nn/layers.hpp"

namespace ichseq::nn {

/// One bidirectional LSTM layer over padded sequences.
///
/// Input (B, S, D) with per-sample valid lengths; output (B, S, 2H) holding
/// [forward h, backward h] per position. The forward direction runs over
/// 0..len-1 and the reverse direction over len-1..0, so padded positions never
/// enter either recurrence; their outputs are zero.
///
/// Gates use the order (input, forget, cell, output) and one bias vector per
/// direction, so each direction holds 4H(D + H) + 4H parameters.
class BiLSTMLayer {
public:
    BiLSTMLayer(std::size_t input_dim, std::size_t hidden, InitRng& rng);

    Tensor forward(const Tensor& x, std::span<const std::size_t> lengths);
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    std::size_t input_dim() const noexcept { return input_; }
    std::size_t hidden() const noexcept { return hidden_; }

    static std::size_t parameter_count(std::size_t input_dim, std::size_t hidden) noexcept {
        return 2 * (4 * hidden * (input_dim + hidden) + 4 * hidden);
    }

private:
    struct Direction {
        Param w_ih;  // (4H, D)
        Param w_hh;  // (4H, H)
        Param bias;  // (4H)
        bool reverse = false;
        // Per sample, indexed by time step t: activated gates (S, 4H), cell (S, H), hidden (S, H).
        std::vector<std::vector<double>> gates, cell, hidden;
        Direction(std::size_t d, std::size_t h, bool rev);
    };

    void run_direction(Direction& dir, const Tensor& x, Tensor& out, std::size_t offset);
    void back_direction(Direction& dir, const Tensor& grad_out, Tensor& dx, std::size_t offset);

    std::size_t input_, hidden_;
    Direction fwd_, bwd_;
    Tensor input_cache_;
    std::vector<std::size_t> lengths_;
};

/// Inverted dropout on any tensor; identity in eval mode or with p == 0.
class Dropout : public Module {
public:
    Dropout(double p, std::uint64_t seed);
    Tensor forward(const Tensor& x, Mode mode) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    double p_;
    std::mt19937_64 rng_;
    Tensor mask_;
};

}  // namespace ichseq::nn
