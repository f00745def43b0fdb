#include "ichseq/nn/lstm.hpp"

#include <Eigen/Core>
#include <cmath>

#include "ichseq/errors.hpp"

namespace ichseq::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;
using ConstVecMap = Eigen::Map<const Vec>;
using VecMap = Eigen::Map<Vec>;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

BiLSTMLayer::Direction::Direction(std::size_t d, std::size_t h, bool rev)
    : w_ih({4 * h, d}), w_hh({4 * h, h}), bias({4 * h}), reverse(rev) {}

BiLSTMLayer::BiLSTMLayer(std::size_t input_dim, std::size_t hidden, InitRng& rng)
    : input_(input_dim), hidden_(hidden), fwd_(input_dim, hidden, false), bwd_(input_dim, hidden, true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Direction* d : {&fwd_, &bwd_}) {
        for (Param* p : {&d->w_ih, &d->w_hh, &d->bias}) {
            for (double& v : p->value.values()) v = dist(rng);
        }
    }
}

Tensor BiLSTMLayer::forward(const Tensor& x, std::span<const std::size_t> lengths) {
    if (x.rank() != 3 || x.dim(2) != input_) {
        throw ContractError("BiLSTM expects (B, S, " + std::to_string(input_) + "), got " + x.shape_string());
    }
    if (lengths.size() != x.dim(0)) throw ContractError("BiLSTM lengths size mismatch");
    for (std::size_t len : lengths) {
        if (len > x.dim(1)) throw ContractError("sequence length exceeds padded length");
    }
    input_cache_ = x;
    lengths_.assign(lengths.begin(), lengths.end());
    Tensor out({x.dim(0), x.dim(1), 2 * hidden_});
    run_direction(fwd_, x, out, 0);
    run_direction(bwd_, x, out, hidden_);
    return out;
}

void BiLSTMLayer::run_direction(Direction& dir, const Tensor& x, Tensor& out, std::size_t offset) {
    const std::size_t b_n = x.dim(0), s_n = x.dim(1), d = input_, h = hidden_;
    dir.gates.assign(b_n, {});
    dir.cell.assign(b_n, {});
    dir.hidden.assign(b_n, {});
    ConstMatMap w_ih(dir.w_ih.value.data(), 4 * h, d);
    ConstMatMap w_hh(dir.w_hh.value.data(), 4 * h, h);
    ConstVecMap bias(dir.bias.value.data(), 4 * h);
    for (std::size_t b = 0; b < b_n; ++b) {
        const std::size_t len = lengths_[b];
        auto& gates = dir.gates[b];
        auto& cell = dir.cell[b];
        auto& hid = dir.hidden[b];
        gates.assign(len * 4 * h, 0.0);
        cell.assign(len * h, 0.0);
        hid.assign(len * h, 0.0);
        if (len == 0) continue;
        ConstMatMap xb(x.data() + b * s_n * d, len, d);
        RowMat pre = xb * w_ih.transpose();
        Vec h_prev = Vec::Zero(static_cast<Eigen::Index>(h));
        Vec c_prev = Vec::Zero(static_cast<Eigen::Index>(h));
        for (std::size_t k = 0; k < len; ++k) {
            const std::size_t t = dir.reverse ? len - 1 - k : k;
            Vec z = pre.row(static_cast<Eigen::Index>(t)).transpose() + bias + w_hh * h_prev;
            double* g = gates.data() + t * 4 * h;
            double* c = cell.data() + t * h;
            double* hh = hid.data() + t * h;
            for (std::size_t j = 0; j < h; ++j) {
                const double ig = sigmoid(z[j]);
                const double fg = sigmoid(z[h + j]);
                const double cg = std::tanh(z[2 * h + j]);
                const double og = sigmoid(z[3 * h + j]);
                g[j] = ig;
                g[h + j] = fg;
                g[2 * h + j] = cg;
                g[3 * h + j] = og;
                c[j] = fg * c_prev[j] + ig * cg;
                hh[j] = og * std::tanh(c[j]);
            }
            c_prev = ConstVecMap(c, h);
            h_prev = ConstVecMap(hh, h);
            double* dst = out.data() + (b * s_n + t) * 2 * h + offset;
            std::copy(hh, hh + h, dst);
        }
    }
}

Tensor BiLSTMLayer::backward(const Tensor& grad_out) {
    Tensor dx(input_cache_.shape());
    back_direction(fwd_, grad_out, dx, 0);
    back_direction(bwd_, grad_out, dx, hidden_);
    return dx;
}

void BiLSTMLayer::back_direction(Direction& dir, const Tensor& grad_out, Tensor& dx, std::size_t offset) {
    const Tensor& x = input_cache_;
    const std::size_t b_n = x.dim(0), s_n = x.dim(1), d = input_, h = hidden_;
    ConstMatMap w_ih(dir.w_ih.value.data(), 4 * h, d);
    ConstMatMap w_hh(dir.w_hh.value.data(), 4 * h, h);
    MatMap dw_ih(dir.w_ih.grad.data(), 4 * h, d);
    MatMap dw_hh(dir.w_hh.grad.data(), 4 * h, h);
    VecMap dbias(dir.bias.grad.data(), 4 * h);
    for (std::size_t b = 0; b < b_n; ++b) {
        const std::size_t len = lengths_[b];
        if (len == 0) continue;
        const auto& gates = dir.gates[b];
        const auto& cell = dir.cell[b];
        const auto& hid = dir.hidden[b];
        RowMat dz(len, 4 * h);
        Vec dh_next = Vec::Zero(static_cast<Eigen::Index>(h));
        Vec dc_next = Vec::Zero(static_cast<Eigen::Index>(h));
        for (std::size_t k = len; k-- > 0;) {
            const std::size_t t = dir.reverse ? len - 1 - k : k;
            // Previous step in processing order, or none at the sequence start.
            const bool has_prev = k > 0;
            const std::size_t tp = dir.reverse ? t + 1 : t - 1;
            const double* g = gates.data() + t * 4 * h;
            const double* c = cell.data() + t * h;
            const double* gout = grad_out.data() + (b * s_n + t) * 2 * h + offset;
            for (std::size_t j = 0; j < h; ++j) {
                const double ig = g[j], fg = g[h + j], cg = g[2 * h + j], og = g[3 * h + j];
                const double c_prev = has_prev ? cell[tp * h + j] : 0.0;
                const double tc = std::tanh(c[j]);
                const double dh = gout[j] + dh_next[j];
                const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                dz(t, j) = dc * cg * ig * (1.0 - ig);
                dz(t, h + j) = dc * c_prev * fg * (1.0 - fg);
                dz(t, 2 * h + j) = dc * ig * (1.0 - cg * cg);
                dz(t, 3 * h + j) = dh * tc * og * (1.0 - og);
                dc_next[j] = dc * fg;
            }
            const auto dz_t = dz.row(static_cast<Eigen::Index>(t)).transpose();
            dh_next = w_hh.transpose() * dz_t;
            if (has_prev) dw_hh.noalias() += dz_t * ConstVecMap(hid.data() + tp * h, h).transpose();
            dbias += dz_t;
        }
        ConstMatMap xb(x.data() + b * s_n * d, len, d);
        dw_ih.noalias() += dz.transpose() * xb;
        MatMap dxb(dx.data() + b * s_n * d, len, d);
        dxb.noalias() += dz * w_ih;
    }
}

void BiLSTMLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + "weight_ih", &fwd_.w_ih});
    out.push_back({prefix + "weight_hh", &fwd_.w_hh});
    out.push_back({prefix + "bias", &fwd_.bias});
    out.push_back({prefix + "weight_ih_reverse", &bwd_.w_ih});
    out.push_back({prefix + "weight_hh_reverse", &bwd_.w_hh});
    out.push_back({prefix + "bias_reverse", &bwd_.bias});
}

// ---------------------------------------------------------------------------

Dropout::Dropout(double p, std::uint64_t seed) : p_(p), rng_(seed) {
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, Mode mode) {
    if (mode == Mode::kEval || p_ == 0.0) {
        mask_ = Tensor();
        return x;
    }
    mask_ = Tensor(x.shape());
    std::bernoulli_distribution keep(1.0 - p_);
    const double scale = 1.0 / (1.0 - p_);
    Tensor out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask_[i] = keep(rng_) ? scale : 0.0;
        out[i] *= mask_[i];
    }
    return out;
}

Tensor Dropout::backward(const Tensor& grad_out) {
    if (mask_.empty()) return grad_out;
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask_[i];
    return g;
}

}  // namespace ichseq::nn
