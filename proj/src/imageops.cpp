#include "ichseq/imageops.hpp"

#include <algorithm>
#include <cmath>

#include "ichseq/errors.hpp"

namespace ichseq::imageops {

namespace {

void require_chw(const Tensor& t) {
    if (t.rank() != 3) throw ContractError("expected a (C, H, W) tensor, got " + t.shape_string());
}

}  // namespace

Tensor flip_horizontal(const Tensor& chw) {
    require_chw(chw);
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out(chw.shape());
    for (std::size_t k = 0; k < c * h; ++k) {
        const double* src = chw.data() + k * w;
        double* dst = out.data() + k * w;
        for (std::size_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
    return out;
}

Tensor flip_vertical(const Tensor& chw) {
    require_chw(chw);
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out(chw.shape());
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t y = 0; y < h; ++y) {
            const double* src = chw.data() + (k * h + (h - 1 - y)) * w;
            std::copy(src, src + w, out.data() + (k * h + y) * w);
        }
    }
    return out;
}

double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x) {
    const double fy = std::floor(y);
    const double fx = std::floor(x);
    const double dy = y - fy;
    const double dx = x - fx;
    const long y0 = static_cast<long>(fy);
    const long x0 = static_cast<long>(fx);
    auto at = [&](long yy, long xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
        return plane[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
    };
    // Exact grid hits skip the neighbours so integer maps copy bit-for-bit.
    if (dy == 0.0 && dx == 0.0) return at(y0, x0);
    return (1 - dy) * ((1 - dx) * at(y0, x0) + dx * at(y0, x0 + 1)) +
           dy * ((1 - dx) * at(y0 + 1, x0) + dx * at(y0 + 1, x0 + 1));
}

Tensor remap(const Tensor& chw, std::size_t out_h, std::size_t out_w, const BackwardMap& src) {
    require_chw(chw);
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out({c, out_h, out_w});
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            double sy = 0, sx = 0;
            src(static_cast<double>(y), static_cast<double>(x), sy, sx);
            for (std::size_t k = 0; k < c; ++k) {
                out[(k * out_h + y) * out_w + x] = sample_bilinear(chw.data() + k * h * w, h, w, sy, sx);
            }
        }
    }
    return out;
}

Tensor resize(const Tensor& chw, std::size_t out_h, std::size_t out_w) {
    require_chw(chw);
    const std::size_t h = chw.dim(1), w = chw.dim(2);
    if (h == out_h && w == out_w) return chw;
    const double ry = static_cast<double>(h) / static_cast<double>(out_h);
    const double rx = static_cast<double>(w) / static_cast<double>(out_w);
    return remap(chw, out_h, out_w, [&](double y, double x, double& sy, double& sx) {
        // Half-pixel centres, clamped so edges replicate instead of fading to 0.
        sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, static_cast<double>(h - 1));
        sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, static_cast<double>(w - 1));
    });
}

Tensor crop(const Tensor& chw, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    require_chw(chw);
    const std::size_t c = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    if (y0 + h > H || x0 + w > W) throw ContractError("crop window exceeds image");
    Tensor out({c, h, w});
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t y = 0; y < h; ++y) {
            const double* src = chw.data() + (k * H + y0 + y) * W + x0;
            std::copy(src, src + w, out.data() + (k * h + y) * w);
        }
    }
    return out;
}

}  // namespace ichseq::imageops
