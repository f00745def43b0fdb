#include "ichseq/model.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "ichseq/errors.hpp"
#include "ichseq/tensor_io.hpp"

namespace ichseq {

void ModelConfig::validate() const {
    if (feature_dim == 0) throw ConfigError("model.feature_dim must be > 0");
    if (lstm_hidden == 0) throw ConfigError("model.lstm_hidden must be > 0");
    if (lstm_layers == 0) throw ConfigError("model.lstm_layers must be >= 1");
    if (num_classes != kNumClasses) throw ConfigError("model.num_classes must be 6 for this task");
    if (input_height < 8 || input_width < 8) throw ConfigError("model.input_size must be at least 8x8");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
    if (tiny_channels == 0) throw ConfigError("model.tiny_channels must be > 0");
    if (tiny_pool != "avg" && tiny_pool != "max") throw ConfigError("model.tiny_pool must be avg or max");
    if (tiny_groups && backbone_id == "tiny_cnn") {
        for (std::size_t width : {tiny_channels, 2 * tiny_channels, 4 * tiny_channels, feature_dim}) {
            if (width % tiny_groups) throw ConfigError("model.tiny_groups must divide every tiny_cnn width");
        }
    }
    if (channel_norm) {
        for (double s : channel_norm->std) {
            if (!(s > 0.0)) throw ConfigError("model.channel_std entries must be > 0");
        }
    }
    const auto& entry = find_backbone(backbone_id);
    if (entry.fixed_feature_dim && *entry.fixed_feature_dim != feature_dim) {
        throw ConfigError("backbone '" + backbone_id + "' produces " + std::to_string(*entry.fixed_feature_dim) +
                          " features; model.feature_dim is " + std::to_string(feature_dim));
    }
}

void SequenceBatch::validate() const {
    if (images.rank() != 5 || images.dim(2) != 3) {
        throw ContractError("batch images must be (B, S, 3, H, W), got " + images.shape_string());
    }
    const std::size_t b = images.dim(0), s = images.dim(1);
    if (lengths.size() != b) throw ContractError("batch lengths size mismatch");
    for (std::size_t len : lengths) {
        if (len < 1 || len > s) throw ContractError("batch lengths must be in [1, S_max]");
    }
    if (label_mask.size() != b * s) throw ContractError("batch label_mask size mismatch");
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < s; ++t) {
            if ((label_mask[i * s + t] != 0) != (t < lengths[i])) throw ContractError("label_mask disagrees with lengths");
        }
    }
    if (has_labels() && (labels.rank() != 3 || labels.dim(0) != b || labels.dim(1) != s || labels.dim(2) != kNumClasses)) {
        throw ContractError("batch labels must be (B, S, 6), got " + labels.shape_string());
    }
}

SequenceBatch make_sequence_batch(const std::vector<const Tensor*>& scans, const std::vector<const Tensor*>& labels,
                                  std::vector<std::string> study_ids) {
    if (scans.empty()) throw ContractError("empty batch");
    if (!labels.empty() && labels.size() != scans.size()) throw ContractError("labels/scans count mismatch");
    const std::size_t h = scans.front()->dim(2), w = scans.front()->dim(3);
    std::size_t s_max = 0;
    for (const Tensor* t : scans) {
        if (t->rank() != 4 || t->dim(1) != 3 || t->dim(2) != h || t->dim(3) != w) {
            throw ContractError("scan stacks must share (S, 3, H, W) geometry");
        }
        s_max = std::max(s_max, t->dim(0));
    }
    SequenceBatch batch;
    const std::size_t b = scans.size(), plane = 3 * h * w;
    batch.images = Tensor({b, s_max, 3, h, w});
    batch.label_mask.assign(b * s_max, 0);
    if (!labels.empty()) batch.labels = Tensor({b, s_max, kNumClasses});
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t len = scans[i]->dim(0);
        batch.lengths.push_back(len);
        std::copy(scans[i]->data(), scans[i]->data() + len * plane, batch.images.data() + i * s_max * plane);
        for (std::size_t t = 0; t < len; ++t) batch.label_mask[i * s_max + t] = 1;
        if (!labels.empty()) {
            if (labels[i]->size() != len * kNumClasses) throw ContractError("label matrix must be (S, 6)");
            std::copy(labels[i]->data(), labels[i]->data() + len * kNumClasses,
                      batch.labels.data() + i * s_max * kNumClasses);
        }
    }
    batch.study_ids = std::move(study_ids);
    batch.validate();
    return batch;
}

// ---------------------------------------------------------------------------
// Backbones

namespace {

class Backbone : public nn::Module {
public:
    Backbone(nn::Sequential body, std::unique_ptr<nn::Module> pool) : body_(std::move(body)), pool_(std::move(pool)) {}
    Tensor forward(const Tensor& x, nn::Mode mode) override { return pool_->forward(body_.forward(x, mode), mode); }
    Tensor backward(const Tensor& g) override { return body_.backward(pool_->backward(g)); }
    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) override { body_.collect(prefix, out); }

private:
    nn::Sequential body_;
    std::unique_ptr<nn::Module> pool_;
};

std::unique_ptr<nn::Module> make_tiny(const ModelConfig& cfg, nn::InitRng& rng) {
    // Four 3x3 stride-2 conv (+ GroupNorm) + ReLU layers.
    const std::size_t c = cfg.tiny_channels;
    const std::size_t widths[5] = {3, c, 2 * c, 4 * c, cfg.feature_dim};
    nn::Sequential body;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string k = std::to_string(i + 1);
        body.add("conv" + k, std::make_unique<nn::Conv2d>(widths[i], widths[i + 1], 3, 2, 1, 1, true, rng));
        if (cfg.tiny_groups) body.add("gn" + k, std::make_unique<nn::GroupNorm>(cfg.tiny_groups, widths[i + 1]));
        body.add("relu" + k, std::make_unique<nn::ReLU>());
    }
    std::unique_ptr<nn::Module> pool;
    if (cfg.tiny_pool == "max") {
        pool = std::make_unique<nn::GlobalMaxPool>();
    } else {
        pool = std::make_unique<nn::GlobalAvgPool>();
    }
    return std::make_unique<Backbone>(std::move(body), std::move(pool));
}

struct ResNetSpec {
    std::array<std::size_t, 4> depths;
    std::size_t stem_channels;
    std::size_t base_planes;     // planes of stage 1; doubles per stage
    std::size_t groups;
    std::size_t width_per_group; // 64 for plain ResNet
    std::size_t se_reduction;    // 0 disables squeeze-excitation
};

std::unique_ptr<nn::Module> make_resnet(const ResNetSpec& spec, nn::InitRng& rng) {
    constexpr std::size_t kExpansion = 4;
    nn::Sequential body;
    body.add("conv1", std::make_unique<nn::Conv2d>(3, spec.stem_channels, 7, 2, 3, 1, false, rng))
        .add("bn1", std::make_unique<nn::FrozenBatchNorm2d>(spec.stem_channels))
        .add("relu", std::make_unique<nn::ReLU>())
        .add("maxpool", std::make_unique<nn::MaxPool2d>(3, 2, 1));
    std::size_t in = spec.stem_channels;
    for (std::size_t stage = 0; stage < 4; ++stage) {
        const std::size_t planes = spec.base_planes << stage;
        const std::size_t width = planes * spec.width_per_group / 64 * spec.groups;
        const std::size_t out = planes * kExpansion;
        auto layer = std::make_unique<nn::Sequential>();
        for (std::size_t blk = 0; blk < spec.depths[stage]; ++blk) {
            const std::size_t stride = (blk == 0 && stage > 0) ? 2 : 1;
            layer->add(std::to_string(blk),
                       std::make_unique<nn::Bottleneck>(in, width, out, stride, spec.groups, spec.se_reduction, rng));
            in = out;
        }
        body.add("layer" + std::to_string(stage + 1), std::move(layer));
    }
    return std::make_unique<Backbone>(std::move(body), std::make_unique<nn::GlobalAvgPool>());
}

}  // namespace

const std::vector<BackboneEntry>& backbone_registry() {
    static const std::vector<BackboneEntry> entries = {
        {"tiny_cnn", "4-layer strided conv stack for desk-scale runs", std::nullopt, make_tiny},
        {"resnet_mini", "bottleneck ResNet with one block per stage; feature_dim must be a multiple of 32",
         std::nullopt,
         [](const ModelConfig& cfg, nn::InitRng& rng) {
             if (cfg.feature_dim % 32 != 0) throw ConfigError("resnet_mini needs feature_dim divisible by 32");
             return make_resnet({{1, 1, 1, 1}, cfg.feature_dim / 16, cfg.feature_dim / 32, 1, 64, 0}, rng);
         }},
        {"resnet50", "ResNet-50 (torchvision layout), 2048 features", 2048,
         [](const ModelConfig&, nn::InitRng& rng) { return make_resnet({{3, 4, 6, 3}, 64, 64, 1, 64, 0}, rng); }},
        {"se_resnext50_32x4d", "SE-ResNeXt-50 32x4d, 2048 features", 2048,
         [](const ModelConfig&, nn::InitRng& rng) { return make_resnet({{3, 4, 6, 3}, 64, 64, 32, 4, 16}, rng); }},
    };
    return entries;
}

const BackboneEntry& find_backbone(const std::string& id) {
    for (const auto& e : backbone_registry()) {
        if (e.id == id) return e;
    }
    std::string known;
    for (const auto& e : backbone_registry()) known += (known.empty() ? "" : ", ") + e.id;
    throw ConfigError("unknown backbone '" + id + "' (known: " + known + ")");
}

std::size_t sequence_head_parameter_count(std::size_t feature_dim, std::size_t hidden, std::size_t layers,
                                          std::size_t classes) {
    std::size_t total = 0;
    std::size_t in = feature_dim;
    for (std::size_t l = 0; l < layers; ++l) {
        total += nn::BiLSTMLayer::parameter_count(in, hidden);
        in = 2 * hidden;
    }
    return total + in * classes + classes;
}

// ---------------------------------------------------------------------------

SliceSequenceModel::SliceSequenceModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    nn::InitRng rng(cfg_.init_seed);
    backbone_ = find_backbone(cfg_.backbone_id).make(cfg_, rng);
    std::size_t in = cfg_.feature_dim;
    for (std::size_t l = 0; l < cfg_.lstm_layers; ++l) {
        lstm_.push_back(std::make_unique<nn::BiLSTMLayer>(in, cfg_.lstm_hidden, rng));
        if (l + 1 < cfg_.lstm_layers) dropout_.push_back(std::make_unique<nn::Dropout>(cfg_.dropout, rng()));
        in = 2 * cfg_.lstm_hidden;
    }
    head_ = std::make_unique<nn::Linear>(in, cfg_.num_classes, rng);
    if (!cfg_.backbone_weights.empty()) load_backbone_weights(cfg_.backbone_weights);
}

Tensor SliceSequenceModel::extract_features(const Tensor& images, std::span<const std::size_t> lengths,
                                            nn::Mode mode) {
    if (images.rank() != 5 || images.dim(2) != 3) {
        throw ContractError("extract_features expects (B, S, 3, H, W), got " + images.shape_string());
    }
    const std::size_t b = images.dim(0), s = images.dim(1), h = images.dim(3), w = images.dim(4);
    if (h != cfg_.input_height || w != cfg_.input_width) {
        throw ContractError("images are " + std::to_string(h) + "x" + std::to_string(w) + " but the model expects " +
                            std::to_string(cfg_.input_height) + "x" + std::to_string(cfg_.input_width));
    }
    if (lengths.size() != b) throw ContractError("lengths size mismatch");
    batch_ = b;
    seq_ = s;
    valid_rows_.clear();
    for (std::size_t i = 0; i < b; ++i) {
        if (lengths[i] > s) throw ContractError("sequence length exceeds padded length");
        for (std::size_t t = 0; t < lengths[i]; ++t) valid_rows_.push_back(i * s + t);
    }
    const std::size_t plane = 3 * h * w;
    Tensor folded({valid_rows_.size(), 3, h, w});
    for (std::size_t r = 0; r < valid_rows_.size(); ++r) {
        std::copy(images.data() + valid_rows_[r] * plane, images.data() + (valid_rows_[r] + 1) * plane,
                  folded.data() + r * plane);
    }
    if (cfg_.channel_norm) normalize_channels(folded, *cfg_.channel_norm);
    const Tensor feats = valid_rows_.empty() ? Tensor({0, cfg_.feature_dim}) : backbone_->forward(folded, mode);
    Tensor out({b, s, cfg_.feature_dim});
    for (std::size_t r = 0; r < valid_rows_.size(); ++r) {
        std::copy(feats.data() + r * cfg_.feature_dim, feats.data() + (r + 1) * cfg_.feature_dim,
                  out.data() + valid_rows_[r] * cfg_.feature_dim);
    }
    return out;
}

Tensor SliceSequenceModel::sequence_head(const Tensor& features, std::span<const std::size_t> lengths, nn::Mode mode) {
    if (features.rank() != 3 || features.dim(2) != cfg_.feature_dim) {
        throw ContractError("sequence_head expects (B, S, " + std::to_string(cfg_.feature_dim) + "), got " +
                            features.shape_string());
    }
    const std::size_t b = features.dim(0), s = features.dim(1);
    lengths_.assign(lengths.begin(), lengths.end());
    Tensor h = features;
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
        h = lstm_[l]->forward(h, lengths_);
        if (l < dropout_.size()) h = dropout_[l]->forward(h, mode);
    }
    const std::size_t width = h.dim(2);
    h.reshape({b * s, width});
    Tensor logits = head_->forward(h, mode);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = lengths_[i]; t < s; ++t) {
            std::fill(logits.data() + (i * s + t) * cfg_.num_classes, logits.data() + (i * s + t + 1) * cfg_.num_classes, 0.0);
        }
    }
    logits.reshape({b, s, cfg_.num_classes});
    return logits;
}

Tensor SliceSequenceModel::forward_logits(const SequenceBatch& batch, nn::Mode mode) {
    batch.validate();
    const Tensor feats = extract_features(batch.images, batch.lengths, mode);
    return sequence_head(feats, batch.lengths, mode);
}

Tensor SliceSequenceModel::forward(const SequenceBatch& batch) {
    Tensor p = forward_logits(batch, nn::Mode::kEval);
    for (double& v : p.values()) v = sigmoid(v);
    return p;
}

void SliceSequenceModel::backward(const Tensor& grad_logits) {
    const std::size_t b = batch_, s = seq_, k = cfg_.num_classes;
    if (grad_logits.size() != b * s * k) throw ContractError("grad_logits shape does not match last forward");
    Tensor g = grad_logits.reshaped({b * s, k});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = lengths_[i]; t < s; ++t) std::fill(g.data() + (i * s + t) * k, g.data() + (i * s + t + 1) * k, 0.0);
    }
    Tensor dh = head_->backward(g);
    dh.reshape({b, s, dh.dim(1)});
    for (std::size_t l = lstm_.size(); l-- > 0;) {
        if (l < dropout_.size()) dh = dropout_[l]->backward(dh);
        dh = lstm_[l]->backward(dh);
    }
    if (valid_rows_.empty()) return;
    Tensor dfeat({valid_rows_.size(), cfg_.feature_dim});
    for (std::size_t r = 0; r < valid_rows_.size(); ++r) {
        std::copy(dh.data() + valid_rows_[r] * cfg_.feature_dim, dh.data() + (valid_rows_[r] + 1) * cfg_.feature_dim,
                  dfeat.data() + r * cfg_.feature_dim);
    }
    backbone_->backward(dfeat);
}

std::vector<nn::NamedParam> SliceSequenceModel::parameters() {
    std::vector<nn::NamedParam> out;
    backbone_->collect("backbone.", out);
    for (std::size_t l = 0; l < lstm_.size(); ++l) lstm_[l]->collect("lstm.l" + std::to_string(l) + ".", out);
    head_->collect("head.", out);
    return out;
}

void SliceSequenceModel::zero_grad() {
    for (auto& p : parameters()) p.param->zero_grad();
}

std::size_t SliceSequenceModel::trainable_parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) {
        if (p.param->trainable) n += p.param->value.size();
    }
    return n;
}

std::size_t SliceSequenceModel::head_parameter_count() {
    std::size_t n = 0;
    for (auto& p : parameters()) {
        if (p.name.rfind("backbone.", 0) != 0) n += p.param->value.size();
    }
    return n;
}

void SliceSequenceModel::load_backbone_weights(const std::string& path) {
    const auto tensors = io::load_tensor_archive(path);
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : tensors) by_name[name] = &t;
    std::vector<nn::NamedParam> params;
    backbone_->collect("", params);
    for (auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw ConfigError("backbone weights lack tensor '" + p.name + "' in " + path);
        if (it->second->shape() != p.param->value.shape()) {
            throw ConfigError("backbone weight '" + p.name + "' has shape " + it->second->shape_string() + ", expected " +
                              p.param->value.shape_string());
        }
        p.param->value = *it->second;
    }
}

}  // namespace ichseq
