#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace ichseq::synth {

namespace fs = std::filesystem;

struct SynthConfig {
    std::size_t n_studies = 20;
    std::size_t slices_per_study = 8;
    std::size_t height = 64;
    std::size_t width = 64;
    std::uint64_t seed = 0;
    // Studies with even index carry a bleed; the last val_fraction of the
    // studies form the held-out manifest.
    double val_fraction = 0.2;

    void validate() const;
};

struct SynthOutput {
    fs::path raw_dir;
    fs::path labels_csv;
    fs::path manifest;
    fs::path train_manifest;
    fs::path val_manifest;
    std::size_t n_slices = 0;
    std::size_t n_positive_slices = 0;
};

/// Writes raw/<study>/<slice>.{hu16,json}, labels.csv (challenge long
/// format), manifest.csv, train.csv and val.csv under out_dir. Identical
/// config and out_dir give byte-identical files.
SynthOutput generate(const SynthConfig& cfg, const fs::path& out_dir);

}  // namespace ichseq::synth
