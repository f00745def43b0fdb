#include "ichseq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "ichseq/augmentation.hpp"
#include "ichseq/errors.hpp"
#include "ichseq/ingest.hpp"
#include "ichseq/labels.hpp"
#include "ichseq/tensor_io.hpp"

namespace ichseq::synth {

namespace {

struct BlobShape {
    double offset;  // centre distance from the head centre, fraction of head radius
    double rx, ry;  // axis-aligned semi-axes, fraction of head radius
    double hu;
};

// One template per subtype, in class order.
constexpr BlobShape kShapes[5] = {
    {0.35, 0.38, 0.38, 88.0},  // large disc
    {0.45, 0.13, 0.13, 80.0},  // small disc
    {0.30, 0.55, 0.08, 72.0},  // horizontal streak
    {0.30, 0.08, 0.55, 66.0},  // vertical streak
    {0.40, 0.26, 0.16, 60.0},  // dim oval
};

std::string study_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "st%03zu", i);
    return buf;
}

std::string slice_name(std::size_t i, std::size_t k) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "ID_st%03zun%02zu", i, k);
    return buf;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_studies < 2) throw ConfigError("synth needs at least 2 studies");
    if (slices_per_study < 2) throw ConfigError("synth needs at least 2 slices per study");
    if (height < 16 || width < 16) throw ConfigError("synth image size must be at least 16x16");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("synth val_fraction must lie in (0, 1)");
}

SynthOutput generate(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    SynthOutput out;
    out.raw_dir = out_dir / "raw";
    out.labels_csv = out_dir / "labels.csv";
    out.manifest = out_dir / "manifest.csv";
    out.train_manifest = out_dir / "train.csv";
    out.val_manifest = out_dir / "val.csv";
    fs::create_directories(out.raw_dir);

    const std::size_t h = cfg.height, w = cfg.width, depth = cfg.slices_per_study;
    std::string labels_text = "ID,Label\n";

    for (std::size_t i = 0; i < cfg.n_studies; ++i) {
        augment::Rng rng = augment::derive_rng(cfg.seed, 0x5e17u, i);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::normal_distribution<double> noise(0.0, 3.0);

        const double cy = (h - 1) / 2.0 + (u(rng) - 0.5) * 0.06 * h;
        const double cx = (w - 1) / 2.0 + (u(rng) - 0.5) * 0.06 * w;
        const double ay = 0.40 * h * (0.92 + 0.08 * u(rng));
        const double ax = 0.34 * w * (0.92 + 0.08 * u(rng));
        const double brain_hu = 20.0 + 10.0 * u(rng);
        const double z0 = -20.0 + 10.0 * u(rng);
        const double dz = 4.5 + u(rng);

        // Even studies carry one subtype, cycling through the five, as an
        // ellipsoid spanning 2-4 adjacent slices.
        struct Bleed {
            std::size_t subtype, first, last;
            double by, bx, hu;
        };
        std::vector<Bleed> bleeds;
        if (i % 2 == 0) {
            const std::size_t c = (i / 2) % 5;
            const BlobShape& shape = kShapes[c];
            const std::size_t span = 2 + static_cast<std::size_t>(u(rng) * 3.0);
            const std::size_t first = static_cast<std::size_t>(u(rng) * static_cast<double>(depth - std::min(span, depth) + 1));
            const double angle = 2.0 * std::numbers::pi * u(rng);
            const double hu_jitter = (u(rng) - 0.5) * 4.0;
            bleeds.push_back({c, first, std::min(depth, first + span), cy + std::sin(angle) * shape.offset * ay,
                              cx + std::cos(angle) * shape.offset * ax, shape.hu + hu_jitter});
        }
        const double head_r = std::min(ay, ax);

        const fs::path study_dir = out.raw_dir / study_name(i);
        for (std::size_t k = 0; k < depth; ++k) {
            LabelVector label{};
            std::vector<std::int16_t> px(h * w);
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double ny = (y - cy) / ay, nx = (x - cx) / ax;
                    const double r = std::sqrt(ny * ny + nx * nx);
                    const double v = r > 1.0 ? -1000.0 : brain_hu + noise(rng);
                    px[y * w + x] = static_cast<std::int16_t>(std::lround(v));
                }
            }
            for (const auto& b : bleeds) {
                if (k < b.first || k >= b.last) continue;
                // Cross-section of an ellipsoid along z, never below 60% of the widest.
                const double mid = (static_cast<double>(b.first) + static_cast<double>(b.last) - 1.0) / 2.0;
                const double t = (static_cast<double>(k) - mid) / (static_cast<double>(b.last - b.first) / 2.0 + 0.5);
                const double scale = std::sqrt(std::max(0.36, 1.0 - t * t));
                const BlobShape& shape = kShapes[b.subtype];
                bool drawn = false;
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        const double ny = (y - cy) / ay, nx = (x - cx) / ax;
                        if (ny * ny + nx * nx > 0.9) continue;
                        const double qx = (x - b.bx) / (shape.rx * head_r * scale);
                        const double qy = (y - b.by) / (shape.ry * head_r * scale);
                        if (qx * qx + qy * qy > 1.0) continue;
                        px[y * w + x] = static_cast<std::int16_t>(std::lround(b.hu + noise(rng)));
                        drawn = true;
                    }
                }
                if (drawn) {
                    label[b.subtype] = 1;
                    label[kAnyClass] = 1;
                }
            }

            ingest::PortableSidecar meta;
            meta.study_id = study_name(i);
            meta.slice_id = slice_name(i, k);
            meta.z_position = z0 + dz * static_cast<double>(k);
            meta.instance_number = static_cast<std::int64_t>(k + 1);
            meta.rows = h;
            meta.cols = w;
            ingest::write_portable_slice(study_dir, meta, px);

            for (std::size_t c = 0; c < kNumClasses; ++c) {
                labels_text += meta.slice_id + "_" + std::string(kClassNames[c]) + "," + (label[c] ? "1" : "0") + "\n";
            }
            ++out.n_slices;
            if (label[kAnyClass]) ++out.n_positive_slices;
        }
    }
    io::write_text_file(out.labels_csv, labels_text);

    ingest::ManifestOptions opts;
    opts.labels_csv = out.labels_csv;
    const auto result = ingest::build_manifest(out.raw_dir, opts);
    if (!result.exclusions.empty()) throw DataError("synthetic dataset failed to ingest cleanly");
    ingest::write_manifest_file(out.manifest, result.rows);

    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(cfg.n_studies))));
    const std::size_t first_val = cfg.n_studies - n_val;
    std::vector<ingest::SliceRecord> train_rows, val_rows;
    for (const auto& r : result.rows) {
        const std::size_t idx = std::stoul(r.study_id.substr(2));
        (idx >= first_val ? val_rows : train_rows).push_back(r);
    }
    ingest::write_manifest_file(out.train_manifest, train_rows);
    ingest::write_manifest_file(out.val_manifest, val_rows);
    return out;
}

}  // namespace ichseq::synth
