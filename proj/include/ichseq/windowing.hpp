#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ichseq/tensor.hpp"

namespace ichseq {

/// Linear display window centred on `level` spanning `width` HU.
struct WindowSpec {
    double level = 0.0;
    double width = 1.0;

    void validate() const;
    double lower() const noexcept { return level - width / 2.0; }
    double upper() const noexcept { return level + width / 2.0; }
    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

inline constexpr WindowSpec kBrainWindow{40.0, 80.0};
inline constexpr WindowSpec kSubduralWindow{75.0, 215.0};
inline constexpr WindowSpec kBonyWindow{600.0, 2800.0};

/// Three windows, one per output channel. Defaults to brain, subdural, bone.
struct WindowTriple {
    std::array<WindowSpec, 3> channels{kBrainWindow, kSubduralWindow, kBonyWindow};

    void validate() const;
    friend bool operator==(const WindowTriple&, const WindowTriple&) = default;
};

/// clamp((hu - (level - width/2)) / width, 0, 1)
double apply_window(double hu, const WindowSpec& spec);
Tensor apply_window(const Tensor& hu, const WindowSpec& spec);

/// (H, W) HU slice -> (3, H, W) tensor in [0, 1]; channel k uses triple.channels[k].
Tensor stack_windows(const Tensor& hu, const WindowTriple& triple = {});

/// Per-channel (x - mean) / std on a (..., 3, H, W) tensor, in place.
struct ChannelNorm {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> std{1.0, 1.0, 1.0};
};
void normalize_channels(Tensor& images, const ChannelNorm& norm);

/// Optional 8-bit export of a [0, 1] image (round to nearest).
std::vector<std::uint8_t> quantize_u8(const Tensor& image);

}  // namespace ichseq
