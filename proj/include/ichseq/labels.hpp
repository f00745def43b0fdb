#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace ichseq {

inline constexpr std::size_t kNumClasses = 6;

// Column order used everywhere: manifests, label matrices, logits, reports.
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "epidural", "intraparenchymal", "intraventricular", "subarachnoid", "subdural", "any"};

inline constexpr std::size_t kAnyClass = 5;

using LabelVector = std::array<std::uint8_t, kNumClasses>;

inline std::optional<std::size_t> class_index(std::string_view name) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (kClassNames[c] == name) return c;
    }
    return std::nullopt;
}

}  // namespace ichseq
