#include "ichseq/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "ichseq/errors.hpp"

namespace ichseq::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void Module::collect(const std::string&, std::vector<NamedParam>&) {}

namespace {

void he_normal(Tensor& t, std::size_t fan_in, InitRng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : t.values()) v = dist(rng);
}

void uniform_init(Tensor& t, double bound, InitRng& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.values()) v = dist(rng);
}

void require_nchw(const Tensor& x, const char* who) {
    if (x.rank() != 4) throw ContractError(std::string(who) + " expects (N, C, H, W), got " + x.shape_string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d via im2col + GEMM.

Conv2d::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding,
               std::size_t groups, bool with_bias, InitRng& rng)
    : weight({out_ch, in_ch / groups, kernel, kernel}),
      in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(padding), groups_(groups) {
    if (groups == 0 || in_ch % groups || out_ch % groups) throw ConfigError("conv channels must divide groups");
    he_normal(weight.value, in_ch / groups * kernel * kernel, rng);
    if (with_bias) bias = std::make_unique<Param>(std::vector<std::size_t>{out_ch});
}

namespace {

struct ConvGeom {
    std::size_t c, h, w, k, stride, pad, ho, wo;
};

void im2col(const double* img, const ConvGeom& g, std::size_t c0, std::size_t cn, double* col) {
    const std::size_t p = g.ho * g.wo;
    for (std::size_t c = 0; c < cn; ++c) {
        const double* plane = img + (c0 + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = col + ((c * g.k + ky) * g.k + kx) * p;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<long>(g.h)) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im(const double* col, const ConvGeom& g, std::size_t c0, std::size_t cn, double* img) {
    const std::size_t p = g.ho * g.wo;
    for (std::size_t c = 0; c < cn; ++c) {
        double* plane = img + (c0 + c) * g.h * g.w;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = col + ((c * g.k + ky) * g.k + kx) * p;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                        if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, Mode) {
    require_nchw(x, "Conv2d");
    if (x.dim(1) != in_) throw ContractError("Conv2d input channels mismatch: " + x.shape_string());
    input_ = x;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    if (h + 2 * pad_ < k_ || w + 2 * pad_ < k_) throw ContractError("Conv2d input smaller than kernel");
    const ConvGeom g{in_, h, w, k_, stride_, pad_, (h + 2 * pad_ - k_) / stride_ + 1, (w + 2 * pad_ - k_) / stride_ + 1};
    const std::size_t cin_g = in_ / groups_, cout_g = out_ / groups_, p = g.ho * g.wo;
    const std::size_t kk = cin_g * k_ * k_;
    Tensor out({n, out_, g.ho, g.wo});
    std::vector<double> col(kk * p);
    for (std::size_t s = 0; s < n; ++s) {
        const double* img = x.data() + s * in_ * h * w;
        for (std::size_t gi = 0; gi < groups_; ++gi) {
            im2col(img, g, gi * cin_g, cin_g, col.data());
            ConstMatMap wmat(weight.value.data() + gi * cout_g * kk, cout_g, kk);
            ConstMatMap cmat(col.data(), kk, p);
            MatMap omat(out.data() + (s * out_ + gi * cout_g) * p, cout_g, p);
            omat.noalias() = wmat * cmat;
        }
        if (bias) {
            for (std::size_t o = 0; o < out_; ++o) {
                double* dst = out.data() + (s * out_ + o) * p;
                const double b = bias->value[o];
                for (std::size_t i = 0; i < p; ++i) dst[i] += b;
            }
        }
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const ConvGeom g{in_, h, w, k_, stride_, pad_, grad_out.dim(2), grad_out.dim(3)};
    const std::size_t cin_g = in_ / groups_, cout_g = out_ / groups_, p = g.ho * g.wo;
    const std::size_t kk = cin_g * k_ * k_;
    Tensor dx(x.shape());
    std::vector<double> col(kk * p), dcol(kk * p);
    for (std::size_t s = 0; s < n; ++s) {
        const double* img = x.data() + s * in_ * h * w;
        for (std::size_t gi = 0; gi < groups_; ++gi) {
            im2col(img, g, gi * cin_g, cin_g, col.data());
            ConstMatMap cmat(col.data(), kk, p);
            ConstMatMap gmat(grad_out.data() + (s * out_ + gi * cout_g) * p, cout_g, p);
            MatMap dw(weight.grad.data() + gi * cout_g * kk, cout_g, kk);
            dw.noalias() += gmat * cmat.transpose();
            ConstMatMap wmat(weight.value.data() + gi * cout_g * kk, cout_g, kk);
            MatMap dc(dcol.data(), kk, p);
            dc.noalias() = wmat.transpose() * gmat;
            col2im(dcol.data(), g, gi * cin_g, cin_g, dx.data() + s * in_ * h * w);
        }
        if (bias) {
            for (std::size_t o = 0; o < out_; ++o) {
                const double* src = grad_out.data() + (s * out_ + o) * p;
                double acc = 0;
                for (std::size_t i = 0; i < p; ++i) acc += src[i];
                bias->grad[o] += acc;
            }
        }
    }
    return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + "weight", &weight});
    if (bias) out.push_back({prefix + "bias", bias.get()});
}

// ---------------------------------------------------------------------------

FrozenBatchNorm2d::FrozenBatchNorm2d(std::size_t channels, double eps)
    : weight({channels}), bias({channels}), running_mean({channels}, false), running_var({channels}, false), eps_(eps) {
    weight.value.fill(1.0);
    running_var.value.fill(1.0);
}

Tensor FrozenBatchNorm2d::forward(const Tensor& x, Mode) {
    require_nchw(x, "FrozenBatchNorm2d");
    input_ = x;
    const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
    Tensor out(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double scale = weight.value[ch] / std::sqrt(running_var.value[ch] + eps_);
        const double shift = bias.value[ch] - running_mean.value[ch] * scale;
        for (std::size_t s = 0; s < n; ++s) {
            const double* src = x.data() + (s * c + ch) * p;
            double* dst = out.data() + (s * c + ch) * p;
            for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] * scale + shift;
        }
    }
    return out;
}

Tensor FrozenBatchNorm2d::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
    Tensor dx(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double inv_std = 1.0 / std::sqrt(running_var.value[ch] + eps_);
        const double scale = weight.value[ch] * inv_std;
        double dgamma = 0, dbeta = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const double* g = grad_out.data() + (s * c + ch) * p;
            const double* src = x.data() + (s * c + ch) * p;
            double* d = dx.data() + (s * c + ch) * p;
            for (std::size_t i = 0; i < p; ++i) {
                d[i] = g[i] * scale;
                dgamma += g[i] * (src[i] - running_mean.value[ch]) * inv_std;
                dbeta += g[i];
            }
        }
        weight.grad[ch] += dgamma;
        bias.grad[ch] += dbeta;
    }
    return dx;
}

void FrozenBatchNorm2d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + "weight", &weight});
    out.push_back({prefix + "bias", &bias});
    out.push_back({prefix + "running_mean", &running_mean});
    out.push_back({prefix + "running_var", &running_var});
}

// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, Mode) {
    output_ = x;
    for (double& v : output_.values()) v = v > 0.0 ? v : 0.0;
    return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(output_[i] > 0.0)) dx[i] = 0.0;
    }
    return dx;
}

// ---------------------------------------------------------------------------

MaxPool2d::MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t padding)
    : k_(kernel), stride_(stride), pad_(padding) {}

Tensor MaxPool2d::forward(const Tensor& x, Mode) {
    require_nchw(x, "MaxPool2d");
    in_shape_ = x.shape();
    const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = (h + 2 * pad_ - k_) / stride_ + 1, wo = (w + 2 * pad_ - k_) / stride_ + 1;
    Tensor out({x.dim(0), x.dim(1), ho, wo});
    argmax_.assign(out.size(), 0);
    for (std::size_t q = 0; q < nc; ++q) {
        const double* plane = x.data() + q * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t arg = 0;
                for (std::size_t ky = 0; ky < k_; ++ky) {
                    const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t kx = 0; kx < k_; ++kx) {
                        const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
                        if (ix < 0 || ix >= static_cast<long>(w)) continue;
                        const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                        if (plane[idx] > best) {
                            best = plane[idx];
                            arg = idx;
                        }
                    }
                }
                const std::size_t o = (q * ho + oy) * wo + ox;
                out[o] = best;
                argmax_[o] = q * h * w + arg;
            }
        }
    }
    return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    Tensor dx(in_shape_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
}

// ---------------------------------------------------------------------------

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
    require_nchw(x, "GlobalAvgPool");
    in_shape_ = x.shape();
    const std::size_t nc = x.dim(0) * x.dim(1), p = x.dim(2) * x.dim(3);
    Tensor out({x.dim(0), x.dim(1)});
    for (std::size_t q = 0; q < nc; ++q) {
        double acc = 0;
        for (std::size_t i = 0; i < p; ++i) acc += x[q * p + i];
        out[q] = acc / static_cast<double>(p);
    }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    Tensor dx(in_shape_);
    const std::size_t p = in_shape_[2] * in_shape_[3];
    for (std::size_t q = 0; q < grad_out.size(); ++q) {
        const double g = grad_out[q] / static_cast<double>(p);
        std::fill(dx.data() + q * p, dx.data() + (q + 1) * p, g);
    }
    return dx;
}

GroupNorm::GroupNorm(std::size_t groups, std::size_t channels, double eps)
    : weight({channels}), bias({channels}), groups_(groups), eps_(eps) {
    if (groups == 0 || channels % groups) throw ConfigError("GroupNorm groups must divide channels");
    weight.value.fill(1.0);
}

Tensor GroupNorm::forward(const Tensor& x, Mode) {
    require_nchw(x, "GroupNorm");
    const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
    if (c != weight.value.size()) throw ContractError("GroupNorm channel mismatch: " + x.shape_string());
    const std::size_t cg = c / groups_, m = cg * p;
    xhat_ = Tensor(x.shape());
    inv_std_.assign(n * groups_, 0.0);
    Tensor out(x.shape());
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t g = 0; g < groups_; ++g) {
            const std::size_t off = (s * c + g * cg) * p;
            const double* src = x.data() + off;
            double mean = 0.0;
            for (std::size_t i = 0; i < m; ++i) mean += src[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (std::size_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<double>(m);
            const double inv = 1.0 / std::sqrt(var + eps_);
            inv_std_[s * groups_ + g] = inv;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t ch = g * cg + i / p;
                const double xh = (src[i] - mean) * inv;
                xhat_[off + i] = xh;
                out[off + i] = weight.value[ch] * xh + bias.value[ch];
            }
        }
    }
    return out;
}

Tensor GroupNorm::backward(const Tensor& grad_out) {
    const std::size_t n = xhat_.dim(0), c = xhat_.dim(1), p = xhat_.dim(2) * xhat_.dim(3);
    const std::size_t cg = c / groups_, m = cg * p;
    Tensor dx(xhat_.shape());
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t g = 0; g < groups_; ++g) {
            const std::size_t off = (s * c + g * cg) * p;
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t ch = g * cg + i / p;
                const double dy = grad_out[off + i];
                weight.grad[ch] += dy * xhat_[off + i];
                bias.grad[ch] += dy;
                const double d = dy * weight.value[ch];
                sum_d += d;
                sum_dx += d * xhat_[off + i];
            }
            const double inv = inv_std_[s * groups_ + g], md = static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t ch = g * cg + i / p;
                const double d = grad_out[off + i] * weight.value[ch];
                dx[off + i] = inv * (d - sum_d / md - xhat_[off + i] * sum_dx / md);
            }
        }
    }
    return dx;
}

void GroupNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + "weight", &weight});
    out.push_back({prefix + "bias", &bias});
}

Tensor GlobalMaxPool::forward(const Tensor& x, Mode) {
    require_nchw(x, "GlobalMaxPool");
    in_shape_ = x.shape();
    const std::size_t nc = x.dim(0) * x.dim(1), p = x.dim(2) * x.dim(3);
    Tensor out({x.dim(0), x.dim(1)});
    argmax_.assign(nc, 0);
    for (std::size_t q = 0; q < nc; ++q) {
        const double* src = x.data() + q * p;
        const std::size_t best = static_cast<std::size_t>(std::max_element(src, src + p) - src);
        argmax_[q] = best;
        out[q] = src[best];
    }
    return out;
}

Tensor GlobalMaxPool::backward(const Tensor& grad_out) {
    Tensor dx(in_shape_);
    const std::size_t p = in_shape_[2] * in_shape_[3];
    for (std::size_t q = 0; q < grad_out.size(); ++q) dx[q * p + argmax_[q]] = grad_out[q];
    return dx;
}

// ---------------------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, InitRng& rng) : weight({out, in}), bias({out}) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    uniform_init(weight.value, bound, rng);
    uniform_init(bias.value, bound, rng);
}

Tensor Linear::forward(const Tensor& x, Mode) {
    const std::size_t out_f = weight.value.dim(0), in_f = weight.value.dim(1);
    if (x.rank() != 2 || x.dim(1) != in_f) throw ContractError("Linear input mismatch: " + x.shape_string());
    input_ = x;
    const std::size_t n = x.dim(0);
    Tensor out({n, out_f});
    ConstMatMap xm(x.data(), n, in_f);
    ConstMatMap wm(weight.value.data(), out_f, in_f);
    MatMap om(out.data(), n, out_f);
    om.noalias() = xm * wm.transpose();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out_f; ++o) om(r, o) += bias.value[o];
    }
    return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const std::size_t out_f = weight.value.dim(0), in_f = weight.value.dim(1), n = input_.dim(0);
    ConstMatMap g(grad_out.data(), n, out_f);
    ConstMatMap xm(input_.data(), n, in_f);
    MatMap dw(weight.grad.data(), out_f, in_f);
    dw.noalias() += g.transpose() * xm;
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t o = 0; o < out_f; ++o) bias.grad[o] += g(r, o);
    }
    Tensor dx({n, in_f});
    ConstMatMap wm(weight.value.data(), out_f, in_f);
    MatMap dxm(dx.data(), n, in_f);
    dxm.noalias() = g * wm;
    return dx;
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + "weight", &weight});
    out.push_back({prefix + "bias", &bias});
}

// ---------------------------------------------------------------------------

SqueezeExcite::SqueezeExcite(std::size_t channels, std::size_t reduction, InitRng& rng)
    : fc1_(channels, std::max<std::size_t>(1, channels / reduction), 1, 1, 0, 1, true, rng),
      fc2_(std::max<std::size_t>(1, channels / reduction), channels, 1, 1, 0, 1, true, rng) {}

Tensor SqueezeExcite::forward(const Tensor& x, Mode mode) {
    require_nchw(x, "SqueezeExcite");
    input_ = x;
    const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
    Tensor pooled({n, c, 1, 1});
    for (std::size_t q = 0; q < n * c; ++q) {
        double acc = 0;
        for (std::size_t i = 0; i < p; ++i) acc += x[q * p + i];
        pooled[q] = acc / static_cast<double>(p);
    }
    gate_ = fc2_.forward(relu_.forward(fc1_.forward(pooled, mode), mode), mode);
    for (double& v : gate_.values()) v = 1.0 / (1.0 + std::exp(-v));
    Tensor out(x.shape());
    for (std::size_t q = 0; q < n * c; ++q) {
        for (std::size_t i = 0; i < p; ++i) out[q * p + i] = x[q * p + i] * gate_[q];
    }
    return out;
}

Tensor SqueezeExcite::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const std::size_t n = x.dim(0), c = x.dim(1), p = x.dim(2) * x.dim(3);
    Tensor dx(x.shape());
    Tensor dgate_pre({n, c, 1, 1});
    for (std::size_t q = 0; q < n * c; ++q) {
        double dg = 0;
        for (std::size_t i = 0; i < p; ++i) {
            dx[q * p + i] = grad_out[q * p + i] * gate_[q];
            dg += grad_out[q * p + i] * x[q * p + i];
        }
        dgate_pre[q] = dg * gate_[q] * (1.0 - gate_[q]);
    }
    const Tensor dpooled = fc1_.backward(relu_.backward(fc2_.backward(dgate_pre)));
    for (std::size_t q = 0; q < n * c; ++q) {
        const double g = dpooled[q] / static_cast<double>(p);
        for (std::size_t i = 0; i < p; ++i) dx[q * p + i] += g;
    }
    return dx;
}

void SqueezeExcite::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    fc1_.collect(prefix + "fc1.", out);
    fc2_.collect(prefix + "fc2.", out);
}

// ---------------------------------------------------------------------------

Sequential& Sequential::add(std::string name, std::unique_ptr<Module> m) {
    children_.emplace_back(std::move(name), std::move(m));
    return *this;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& [_, m] : children_) h = m->forward(h, mode);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
    return g;
}

void Sequential::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    for (auto& [name, m] : children_) m->collect(prefix + name + ".", out);
}

// ---------------------------------------------------------------------------

Bottleneck::Bottleneck(std::size_t in_ch, std::size_t width, std::size_t out_ch, std::size_t stride,
                       std::size_t groups, std::size_t se_reduction, InitRng& rng) {
    main_.add("conv1", std::make_unique<Conv2d>(in_ch, width, 1, 1, 0, 1, false, rng))
        .add("bn1", std::make_unique<FrozenBatchNorm2d>(width))
        .add("relu1", std::make_unique<ReLU>())
        .add("conv2", std::make_unique<Conv2d>(width, width, 3, stride, 1, groups, false, rng))
        .add("bn2", std::make_unique<FrozenBatchNorm2d>(width))
        .add("relu2", std::make_unique<ReLU>())
        .add("conv3", std::make_unique<Conv2d>(width, out_ch, 1, 1, 0, 1, false, rng))
        .add("bn3", std::make_unique<FrozenBatchNorm2d>(out_ch));
    if (se_reduction > 0) main_.add("se_module", std::make_unique<SqueezeExcite>(out_ch, se_reduction, rng));
    if (stride != 1 || in_ch != out_ch) {
        downsample_.add("0", std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, 1, false, rng))
            .add("1", std::make_unique<FrozenBatchNorm2d>(out_ch));
    }
}

Tensor Bottleneck::forward(const Tensor& x, Mode mode) {
    Tensor y = main_.forward(x, mode);
    const Tensor shortcut = downsample_.empty() ? x : downsample_.forward(x, mode);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += shortcut[i];
    return out_relu_.forward(y, mode);
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
    const Tensor g = out_relu_.backward(grad_out);
    Tensor dx = main_.backward(g);
    const Tensor ds = downsample_.empty() ? g : downsample_.backward(g);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ds[i];
    return dx;
}

void Bottleneck::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    main_.collect(prefix, out);
    downsample_.collect(prefix + "downsample.", out);
}

}  // namespace ichseq::nn
