#include "ichseq/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ichseq/errors.hpp"
#include "ichseq/imageops.hpp"

namespace ichseq::augment {

Rng derive_rng(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch, std::uint64_t item) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(seed), hi(seed), lo(epoch), hi(epoch), lo(batch), hi(batch), lo(item), hi(item)};
    return Rng(seq);
}

namespace {

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("augment.") + name + " must be in [0, 1]");
}

bool coin(double p, Rng& rng) {
    if (p <= 0.0) return false;
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

double uniform(double lo, double hi, Rng& rng) {
    if (lo == hi) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

void AugmentConfig::validate() const {
    check_prob(crop_prob, "crop_prob");
    check_prob(rotate_prob, "rotate_prob");
    check_prob(hflip_prob, "hflip_prob");
    check_prob(vflip_prob, "vflip_prob");
    check_prob(optical_prob, "optical_prob");
    check_prob(grid_prob, "grid_prob");
    check_prob(noise_prob, "noise_prob");
    check_prob(cutmix_prob, "cutmix_prob");
    const auto [clo, chi] = crop_scale_range;
    if (!(clo > 0.0 && clo <= chi && chi <= 1.0)) throw ConfigError("augment.crop_scale_range must satisfy 0 < lo <= hi <= 1");
    const auto [rlo, rhi] = rotation_range_deg;
    if (!(rlo >= 0.0 && rlo <= rhi && rhi <= 180.0)) {
        throw ConfigError("augment.rotation_range_deg must satisfy 0 <= lo <= hi <= 180");
    }
    if (!(distortion_strength >= 0.0 && distortion_strength < 0.5)) {
        throw ConfigError("augment.distortion_strength must be in [0, 0.5)");
    }
    if (grid_steps < 1) throw ConfigError("augment.grid_steps must be >= 1");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("augment.noise_sigma must be >= 0");
    if (!(cutmix_alpha > 0.0) || !std::isfinite(cutmix_alpha)) throw ConfigError("augment.cutmix_alpha must be > 0");
}

AugmentConfig AugmentConfig::disabled() {
    AugmentConfig c;
    c.crop_prob = c.rotate_prob = c.hflip_prob = c.vflip_prob = 0.0;
    c.optical_prob = c.grid_prob = c.noise_prob = c.cutmix_prob = 0.0;
    c.crop_scale_range = {1.0, 1.0};
    c.distortion_strength = 0.0;
    c.noise_sigma = 0.0;
    return c;
}

GeometricDraw draw_geometry(const AugmentConfig& cfg, std::size_t h, std::size_t w, Rng& rng) {
    GeometricDraw d;
    if (coin(cfg.crop_prob, rng)) {
        const double scale = uniform(cfg.crop_scale_range.first, cfg.crop_scale_range.second, rng);
        const double side = std::sqrt(scale);
        d.crop_h = static_cast<double>(h) * side;
        d.crop_w = static_cast<double>(w) * side;
        d.crop_y0 = uniform(0.0, static_cast<double>(h) - d.crop_h, rng);
        d.crop_x0 = uniform(0.0, static_cast<double>(w) - d.crop_w, rng);
        d.crop = scale < 1.0;
    }
    d.hflip = coin(cfg.hflip_prob, rng);
    d.vflip = coin(cfg.vflip_prob, rng);
    if (coin(cfg.rotate_prob, rng)) {
        d.angle_deg = uniform(cfg.rotation_range_deg.first, cfg.rotation_range_deg.second, rng);
        d.rotate = d.angle_deg != 0.0;
    }
    const double s = cfg.distortion_strength;
    if (coin(cfg.optical_prob, rng)) {
        d.optical_k = uniform(-s, s, rng);
        d.optical = d.optical_k != 0.0;
    }
    if (coin(cfg.grid_prob, rng) && s > 0.0) {
        d.grid = true;
        d.grid_steps = cfg.grid_steps;
        const std::size_t n = static_cast<std::size_t>((cfg.grid_steps + 1) * (cfg.grid_steps + 1));
        d.grid_dy.resize(n);
        d.grid_dx.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            d.grid_dy[i] = uniform(-s, s, rng) * static_cast<double>(h);
            d.grid_dx[i] = uniform(-s, s, rng) * static_cast<double>(w);
        }
    }
    return d;
}

Tensor apply_geometry(const Tensor& chw, const GeometricDraw& d) {
    if (chw.rank() != 3) throw ContractError("apply_geometry expects (C, H, W)");
    if (!d.resamples()) {
        Tensor out = d.hflip ? imageops::flip_horizontal(chw) : chw;
        if (d.vflip) out = imageops::flip_vertical(out);
        return out;
    }
    const std::size_t h = chw.dim(1), w = chw.dim(2);
    const double H = static_cast<double>(h), W = static_cast<double>(w);
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
    const double theta = d.angle_deg * std::numbers::pi / 180.0;
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    const double half = std::max(H, W) / 2.0;
    const int g = d.grid_steps;

    auto grid_offset = [&](double y, double x, double& oy, double& ox) {
        const double gy = std::clamp(y / std::max(H - 1, 1.0) * g, 0.0, static_cast<double>(g));
        const double gx = std::clamp(x / std::max(W - 1, 1.0) * g, 0.0, static_cast<double>(g));
        const int iy = std::min(static_cast<int>(gy), g - 1);
        const int ix = std::min(static_cast<int>(gx), g - 1);
        const double ty = gy - iy, tx = gx - ix;
        auto at = [&](const std::vector<double>& v, int yy, int xx) { return v[static_cast<std::size_t>(yy * (g + 1) + xx)]; };
        auto lerp2 = [&](const std::vector<double>& v) {
            return (1 - ty) * ((1 - tx) * at(v, iy, ix) + tx * at(v, iy, ix + 1)) +
                   ty * ((1 - tx) * at(v, iy + 1, ix) + tx * at(v, iy + 1, ix + 1));
        };
        oy = lerp2(d.grid_dy);
        ox = lerp2(d.grid_dx);
    };

    return imageops::remap(chw, h, w, [&](double y, double x, double& sy, double& sx) {
        if (d.grid) {
            double oy = 0, ox = 0;
            grid_offset(y, x, oy, ox);
            y += oy;
            x += ox;
        }
        if (d.optical) {
            const double ny = (y - cy) / half, nx = (x - cx) / half;
            const double f = 1.0 + d.optical_k * (ny * ny + nx * nx);
            y = cy + (y - cy) * f;
            x = cx + (x - cx) * f;
        }
        if (d.rotate) {
            const double ry = y - cy, rx = x - cx;
            // Inverse of a counter-clockwise rotation on screen (y down).
            x = cx + cos_t * rx - sin_t * ry;
            y = cy + sin_t * rx + cos_t * ry;
        }
        if (d.hflip) x = W - 1 - x;
        if (d.vflip) y = H - 1 - y;
        if (d.crop) {
            y = d.crop_y0 + (y + 0.5) * d.crop_h / H - 0.5;
            x = d.crop_x0 + (x + 0.5) * d.crop_w / W - 0.5;
        }
        sy = y;
        sx = x;
    });
}

void add_noise(Tensor& chw, const AugmentConfig& cfg, Rng& rng) {
    if (!coin(cfg.noise_prob, rng) || cfg.noise_sigma <= 0.0) return;
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& v : chw.values()) v += noise(rng);
}

Tensor augment_slice(const Tensor& chw, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    if (chw.rank() != 3) throw ContractError("augment_slice expects (C, H, W)");
    const auto draw = draw_geometry(cfg, chw.dim(1), chw.dim(2), rng);
    Tensor out = apply_geometry(chw, draw);
    add_noise(out, cfg, rng);
    return out;
}

Tensor augment_scan(const Tensor& scan, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    if (scan.rank() != 4) throw ContractError("augment_scan expects (S, C, H, W)");
    const std::size_t s = scan.dim(0), c = scan.dim(1), h = scan.dim(2), w = scan.dim(3);
    const auto draw = draw_geometry(cfg, h, w, rng);
    Tensor out(scan.shape());
    const std::size_t stride = c * h * w;
    for (std::size_t k = 0; k < s; ++k) {
        Tensor slice({c, h, w}, std::vector<double>(scan.data() + k * stride, scan.data() + (k + 1) * stride));
        Tensor t = apply_geometry(slice, draw);
        add_noise(t, cfg, rng);
        std::copy(t.data(), t.data() + stride, out.data() + k * stride);
    }
    return out;
}

// ---------------------------------------------------------------------------

double sample_beta(double a, double b, Rng& rng) {
    const double x = std::gamma_distribution<double>(a, 1.0)(rng);
    const double y = std::gamma_distribution<double>(b, 1.0)(rng);
    if (x + y == 0.0) return 0.5;
    return x / (x + y);
}

CutBox sample_cut_box(double lambda, std::size_t h, std::size_t w, Rng& rng) {
    const double ratio = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
    const auto cut_w = static_cast<long>(static_cast<double>(w) * ratio);
    const auto cut_h = static_cast<long>(static_cast<double>(h) * ratio);
    const auto cx = static_cast<long>(std::uniform_int_distribution<std::size_t>(0, w - 1)(rng));
    const auto cy = static_cast<long>(std::uniform_int_distribution<std::size_t>(0, h - 1)(rng));
    auto clip = [](long v, std::size_t hi) { return static_cast<std::size_t>(std::clamp(v, 0L, static_cast<long>(hi))); };
    CutBox box;
    box.x1 = clip(cx - cut_w / 2, w);
    box.x2 = clip(cx + cut_w / 2, w);
    box.y1 = clip(cy - cut_h / 2, h);
    box.y2 = clip(cy + cut_h / 2, h);
    return box;
}

double lambda_for_box(const CutBox& box, std::size_t h, std::size_t w) {
    return 1.0 - static_cast<double>(box.area()) / static_cast<double>(h * w);
}

namespace {

// Mixes item i with item partner_item over `box`; images viewed as (N, C, H, W),
// labels as (N, K).
void mix_item(Tensor& images, Tensor& labels, const Tensor& src_images, const Tensor& src_labels,
              std::size_t i, std::size_t j, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
              const CutBox& box, double lambda) {
    const std::size_t plane = h * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = src_images.data() + (j * c + ch) * plane;
        double* dst = images.data() + (i * c + ch) * plane;
        for (std::size_t y = box.y1; y < box.y2; ++y) {
            std::copy(src + y * w + box.x1, src + y * w + box.x2, dst + y * w + box.x1);
        }
    }
    for (std::size_t q = 0; q < k; ++q) {
        labels[i * k + q] = lambda * src_labels[i * k + q] + (1.0 - lambda) * src_labels[j * k + q];
    }
}

}  // namespace

CutMixResult cutmix_with(const Tensor& images, const Tensor& labels, std::span<const std::size_t> partner,
                         const CutBox& box) {
    if (images.rank() != 4 || labels.rank() != 2 || images.dim(0) != labels.dim(0)) {
        throw ContractError("cutmix expects images (B, C, H, W) and labels (B, K)");
    }
    const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t k = labels.dim(1);
    if (partner.size() != b) throw ContractError("cutmix partner list has wrong length");
    if (box.x1 > box.x2 || box.y1 > box.y2 || box.x2 > w || box.y2 > h) throw ContractError("cutmix box outside frame");
    CutMixResult r;
    r.mixed_images = images;
    r.mixed_labels = labels;
    r.box = box;
    r.partner.assign(partner.begin(), partner.end());
    r.lambda_adjusted = lambda_for_box(box, h, w);
    for (std::size_t i = 0; i < b; ++i) {
        if (partner[i] >= b) throw ContractError("cutmix partner index out of range");
        mix_item(r.mixed_images, r.mixed_labels, images, labels, i, partner[i], c, h, w, k, box, r.lambda_adjusted);
    }
    return r;
}

namespace {

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    // Fisher-Yates with our own index draws; std::shuffle's draw pattern is
    // implementation-defined.
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

}  // namespace

CutMixResult cutmix_batch(const Tensor& images, const Tensor& labels, double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw ConfigError("cutmix alpha must be > 0");
    if (images.rank() != 4) throw ContractError("cutmix_batch expects (B, C, H, W)");
    const std::size_t b = images.dim(0);
    if (b < 2) {
        std::vector<std::size_t> self(b);
        std::iota(self.begin(), self.end(), std::size_t{0});
        return cutmix_with(images, labels, self, CutBox{});
    }
    const double lambda0 = sample_beta(alpha, alpha, rng);
    const auto box = sample_cut_box(lambda0, images.dim(2), images.dim(3), rng);
    const auto perm = random_permutation(b, rng);
    return cutmix_with(images, labels, perm, box);
}

CutMixResult cutmix_sequences(const Tensor& images, const Tensor& labels, std::span<const std::size_t> lengths,
                              double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw ConfigError("cutmix alpha must be > 0");
    if (images.rank() != 5 || labels.rank() != 3) throw ContractError("cutmix_sequences expects (B, S, C, H, W) and (B, S, K)");
    const std::size_t b = images.dim(0), s = images.dim(1), c = images.dim(2), h = images.dim(3), w = images.dim(4);
    const std::size_t k = labels.dim(2);
    if (lengths.size() != b) throw ContractError("lengths size mismatch");
    CutMixResult r;
    r.mixed_images = images;
    r.mixed_labels = labels;
    r.partner.resize(b);
    std::iota(r.partner.begin(), r.partner.end(), std::size_t{0});
    if (b < 2) return r;

    const double lambda0 = sample_beta(alpha, alpha, rng);
    r.box = sample_cut_box(lambda0, h, w, rng);
    r.partner = random_permutation(b, rng);
    r.lambda_adjusted = lambda_for_box(r.box, h, w);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = r.partner[i];
        const std::size_t n = std::min(lengths[i], lengths[j]);
        for (std::size_t t = 0; t < n; ++t) {
            mix_item(r.mixed_images, r.mixed_labels, images, labels, i * s + t, j * s + t, c, h, w, k, r.box,
                     r.lambda_adjusted);
        }
    }
    return r;
}

}  // namespace ichseq::augment
