#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ichseq/labels.hpp"
#include "ichseq/nn/layers.hpp"
#include "ichseq/nn/lstm.hpp"
#include "ichseq/tensor.hpp"
#include "ichseq/windowing.hpp"

namespace ichseq {

struct ModelConfig {
    std::string backbone_id = "resnet50";
    std::size_t feature_dim = 2048;
    std::size_t lstm_hidden = 512;
    std::size_t lstm_layers = 2;
    std::size_t num_classes = kNumClasses;
    std::size_t input_height = 512;
    std::size_t input_width = 512;
    std::optional<ChannelNorm> channel_norm;
    // Applied to the output of every LSTM layer except the last.
    double dropout = 0.0;
    // Width of the first tiny_cnn layer; doubled per layer.
    std::size_t tiny_channels = 8;
    // GroupNorm groups after each tiny_cnn conv; 0 leaves it out.
    std::size_t tiny_groups = 0;
    // tiny_cnn spatial pooling: "avg" or "max".
    std::string tiny_pool = "avg";
    // Optional tensor archive with pretrained backbone weights.
    std::string backbone_weights;
    std::uint64_t init_seed = 0;

    void validate() const;
};

/// Padded batch of whole scans.
struct SequenceBatch {
    Tensor images;                          // (B, S_max, 3, H, W), padded slices zero
    std::vector<std::size_t> lengths;       // valid slices per scan
    Tensor labels;                          // (B, S_max, 6), zero at padding; may be empty
    std::vector<std::uint8_t> label_mask;   // (B * S_max), 1 iff s < lengths[b]
    std::vector<std::string> study_ids;

    std::size_t batch_size() const noexcept { return lengths.size(); }
    std::size_t max_length() const { return images.dim(1); }
    bool has_labels() const noexcept { return !labels.empty(); }
    void validate() const;
};

/// Builds a batch from per-scan (S_b, 3, H, W) image stacks and optional
/// (S_b, 6) label matrices.
SequenceBatch make_sequence_batch(const std::vector<const Tensor*>& scans,
                                  const std::vector<const Tensor*>& labels,
                                  std::vector<std::string> study_ids = {});

// ---------------------------------------------------------------------------
// Backbones: (N, 3, H, W) -> (N, feature_dim), global-average pooled.

using BackboneFactory = std::function<std::unique_ptr<nn::Module>(const ModelConfig&, nn::InitRng&)>;

struct BackboneEntry {
    std::string id;
    std::string description;
    std::optional<std::size_t> fixed_feature_dim;
    BackboneFactory make;
};

const std::vector<BackboneEntry>& backbone_registry();
const BackboneEntry& find_backbone(const std::string& id);

/// Closed-form parameter count of the LSTM stack plus the shared linear head.
std::size_t sequence_head_parameter_count(std::size_t feature_dim, std::size_t hidden, std::size_t layers,
                                          std::size_t classes);

// ---------------------------------------------------------------------------

/// Slice-wise CNN feature extractor followed by a stacked bidirectional LSTM
/// and one linear map per position to class logits.
class SliceSequenceModel {
public:
    explicit SliceSequenceModel(ModelConfig cfg);

    const ModelConfig& config() const noexcept { return cfg_; }

    /// (B, S, 3, H, W) -> (B, S, feature_dim). Only valid slices go through the
    /// backbone; padded rows are zero.
    Tensor extract_features(const Tensor& images, std::span<const std::size_t> lengths, nn::Mode mode);

    /// (B, S, D) -> (B, S, classes) logits; padded positions are 0.
    Tensor sequence_head(const Tensor& features, std::span<const std::size_t> lengths, nn::Mode mode);

    Tensor forward_logits(const SequenceBatch& batch, nn::Mode mode);

    /// Per-slice probabilities in eval mode.
    Tensor forward(const SequenceBatch& batch);

    /// Back-propagates d(loss)/d(logits) from the last forward_logits call
    /// into every parameter gradient. Padded positions are ignored.
    void backward(const Tensor& grad_logits);

    std::vector<nn::NamedParam> parameters();
    void zero_grad();
    std::size_t trainable_parameter_count();
    std::size_t head_parameter_count();

    void load_backbone_weights(const std::string& path);

private:
    ModelConfig cfg_;
    std::unique_ptr<nn::Module> backbone_;
    std::vector<std::unique_ptr<nn::BiLSTMLayer>> lstm_;
    std::vector<std::unique_ptr<nn::Dropout>> dropout_;
    std::unique_ptr<nn::Linear> head_;

    // Forward caches.
    std::vector<std::size_t> lengths_;
    std::vector<std::size_t> valid_rows_;  // flat (b * S + s) indices of valid slices
    std::size_t batch_ = 0, seq_ = 0;
};

inline double sigmoid(double z) noexcept {
    if (z >= 0) {
        const double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace ichseq
