#include "ichseq/windowing.hpp"

#include <algorithm>
#include <cmath>

#include "ichseq/errors.hpp"

namespace ichseq {

void WindowSpec::validate() const {
    if (!std::isfinite(level) || !std::isfinite(width)) throw ConfigError("window level/width must be finite");
    if (width <= 0.0) throw ConfigError("window width must be positive");
}

void WindowTriple::validate() const {
    for (const auto& w : channels) w.validate();
}

namespace {

double window_unchecked(double hu, const WindowSpec& spec) {
    return std::clamp((hu - spec.lower()) / spec.width, 0.0, 1.0);
}

}  // namespace

double apply_window(double hu, const WindowSpec& spec) {
    spec.validate();
    return window_unchecked(hu, spec);
}

Tensor apply_window(const Tensor& hu, const WindowSpec& spec) {
    spec.validate();
    Tensor out(hu.shape());
    for (std::size_t i = 0; i < hu.size(); ++i) out[i] = window_unchecked(hu[i], spec);
    return out;
}

Tensor stack_windows(const Tensor& hu, const WindowTriple& triple) {
    triple.validate();
    if (hu.rank() != 2) throw ContractError("stack_windows expects a (H, W) slice, got " + hu.shape_string());
    const std::size_t plane = hu.size();
    Tensor out({3, hu.dim(0), hu.dim(1)});
    for (std::size_t k = 0; k < 3; ++k) {
        const WindowSpec& spec = triple.channels[k];
        double* dst = out.data() + k * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = window_unchecked(hu[i], spec);
    }
    return out;
}

void normalize_channels(Tensor& images, const ChannelNorm& norm) {
    const auto& s = images.shape();
    if (s.size() < 3 || s[s.size() - 3] != 3) {
        throw ContractError("normalize_channels expects (..., 3, H, W), got " + images.shape_string());
    }
    const std::size_t plane = s[s.size() - 1] * s[s.size() - 2];
    const std::size_t images_n = images.size() / (3 * plane);
    for (std::size_t n = 0; n < images_n; ++n) {
        for (std::size_t k = 0; k < 3; ++k) {
            double* p = images.data() + (n * 3 + k) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - norm.mean[k]) / norm.std[k];
        }
    }
}

std::vector<std::uint8_t> quantize_u8(const Tensor& image) {
    std::vector<std::uint8_t> out(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
    }
    return out;
}

}  // namespace ichseq
