#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ichseq/augmentation.hpp"
#include "ichseq/metrics.hpp"
#include "ichseq/model.hpp"
#include "ichseq/windowing.hpp"

namespace ichseq {

struct TrainConfig {
    std::size_t epochs = 30;
    double peak_lr = 1e-3;
    // Linear warmup length in optimizer steps; unset means one epoch.
    std::optional<std::size_t> warmup_steps;
    std::size_t batch_size_scans = 4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::optional<double> grad_clip_norm;
    std::uint64_t seed = 0;
    double eta_min = 0.0;
    double clip_eps = metrics::kDefaultClipEps;

    void validate() const;
};

struct DataConfig {
    std::string train_manifest;
    std::string val_manifest;
};

/// Everything a run needs; serialised verbatim into checkpoints.
struct RunConfig {
    std::string name = "run";
    DataConfig data;
    WindowTriple windows;
    ModelConfig model;
    augment::AugmentConfig augment;
    TrainConfig train;

    void validate() const;
    /// Sets model, augmentation and training seeds together.
    void set_seed(std::uint64_t seed);
};

/// Key-value config text. Lines are `key = value` with dotted keys
/// (`model.lstm_hidden = 32`) or bare keys under a `[section]` header.
/// `#` starts a comment. Unknown keys and malformed values raise ConfigError
/// naming the key and line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Applies `key=value` overrides on top of `cfg`.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& where = "override");

/// Canonical text form listing every key; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace ichseq
