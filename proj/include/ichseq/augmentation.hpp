#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "ichseq/tensor.hpp"

namespace ichseq::augment {

using Rng = std::mt19937_64;

/// Deterministic generator for one (seed, epoch, batch, item) coordinate.
Rng derive_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch, std::uint64_t item = 0);

struct AugmentConfig {
    // Random resized crop: kept area fraction and application probability.
    std::pair<double, double> crop_scale_range{0.8, 1.0};
    double crop_prob = 0.5;
    // Counter-clockwise rotation angle drawn uniformly from this range.
    std::pair<double, double> rotation_range_deg{0.0, 30.0};
    double rotate_prob = 0.5;
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    // Optical (radial) and grid distortion. Strength bounds the radial
    // coefficient and the grid control-point offsets (fraction of frame).
    double optical_prob = 0.5;
    double grid_prob = 0.5;
    double distortion_strength = 0.05;
    int grid_steps = 5;
    double noise_prob = 0.5;
    double noise_sigma = 0.01;
    double cutmix_alpha = 1.0;
    double cutmix_prob = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
    /// Every transform off; augment_slice becomes the identity.
    static AugmentConfig disabled();
};

/// One draw of the geometric transforms. Shared by all slices of a scan so
/// adjacent slices stay aligned.
struct GeometricDraw {
    bool crop = false;
    double crop_y0 = 0, crop_x0 = 0, crop_h = 0, crop_w = 0;  // pixels in the source frame
    bool hflip = false;
    bool vflip = false;
    bool rotate = false;
    double angle_deg = 0;
    bool optical = false;
    double optical_k = 0;
    bool grid = false;
    int grid_steps = 0;
    std::vector<double> grid_dy, grid_dx;  // (steps+1)^2 offsets in pixels

    bool resamples() const noexcept { return crop || rotate || optical || grid; }
};

GeometricDraw draw_geometry(const AugmentConfig& cfg, std::size_t h, std::size_t w, Rng& rng);
Tensor apply_geometry(const Tensor& chw, const GeometricDraw& draw);
void add_noise(Tensor& chw, const AugmentConfig& cfg, Rng& rng);

/// Full per-slice augmentation: geometry then noise.
Tensor augment_slice(const Tensor& chw, const AugmentConfig& cfg, Rng& rng);

/// (S, 3, H, W) scan: one geometric draw for the scan, noise per slice.
Tensor augment_scan(const Tensor& scan, const AugmentConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// CutMix

struct CutBox {
    std::size_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // half-open [x1, x2) x [y1, y2)
    std::size_t area() const noexcept { return (x2 - x1) * (y2 - y1); }
    friend bool operator==(const CutBox&, const CutBox&) = default;
};

struct CutMixResult {
    Tensor mixed_images;
    Tensor mixed_labels;
    double lambda_adjusted = 1.0;
    CutBox box;
    std::vector<std::size_t> partner;  // partner[b] supplies the pasted region of b
};

double sample_beta(double a, double b, Rng& rng);

/// Box of side (W, H) * sqrt(1 - lambda) at a uniform centre, clipped to frame.
CutBox sample_cut_box(double lambda, std::size_t h, std::size_t w, Rng& rng);

double lambda_for_box(const CutBox& box, std::size_t h, std::size_t w);

/// Deterministic core: pastes `box` from images[partner[b]] into sample b and
/// mixes labels with 1 - box_area / (H * W).
CutMixResult cutmix_with(const Tensor& images, const Tensor& labels,
                         std::span<const std::size_t> partner, const CutBox& box);

/// images (B, C, H, W), labels (B, K). lambda0 ~ Beta(alpha, alpha), a random
/// permutation picks partners. B < 2 returns the inputs with lambda 1.
CutMixResult cutmix_batch(const Tensor& images, const Tensor& labels, double alpha, Rng& rng);

/// Sequence form used in training: images (B, S, C, H, W), labels (B, S, K).
/// One lambda, box and partner permutation for the batch; position s of scan b
/// is mixed with position s of its partner when both are valid.
CutMixResult cutmix_sequences(const Tensor& images, const Tensor& labels,
                              std::span<const std::size_t> lengths, double alpha, Rng& rng);

}  // namespace ichseq::augment
