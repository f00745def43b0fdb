#include "doctest.h"

#include <random>

#include "helpers.hpp"
#include "ichseq/metrics.hpp"
#include "ichseq/model.hpp"

using namespace ichseq;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.backbone_id = "tiny_cnn";
    cfg.feature_dim = 8;
    cfg.lstm_hidden = 4;
    cfg.lstm_layers = 2;
    cfg.input_height = 16;
    cfg.input_width = 16;
    cfg.tiny_channels = 3;
    cfg.init_seed = 11;
    return cfg;
}

SequenceBatch random_batch(std::mt19937_64& rng, std::vector<std::size_t> lengths, std::size_t hw = 16) {
    std::vector<Tensor> imgs, labs;
    for (std::size_t len : lengths) {
        imgs.push_back(random_tensor({len, 3, hw, hw}, rng, 0.0, 1.0));
        Tensor y({len, kNumClasses});
        for (double& v : y.values()) v = (rng() % 2) ? 1.0 : 0.0;
        labs.push_back(y);
    }
    std::vector<const Tensor*> ip, lp;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        ip.push_back(&imgs[i]);
        lp.push_back(&labs[i]);
    }
    return make_sequence_batch(ip, lp);
}

double batch_loss(SliceSequenceModel& m, const SequenceBatch& b) {
    const Tensor logits = m.forward_logits(b, nn::Mode::kTrain);
    return metrics::weighted_bce_with_logits(logits, b.labels, b.label_mask, {}).loss;
}

}  // namespace

TEST_CASE("end-to-end gradient matches central differences on sampled parameters") {
    SliceSequenceModel model(tiny_config());
    std::mt19937_64 rng(3);
    const SequenceBatch batch = random_batch(rng, {3, 2});
    // Zero biases put pre-activations exactly on the ReLU kink where the
    // input patch is zero; move them off it.
    for (auto& p : model.parameters()) {
        if (p.name.ends_with("bias")) {
            for (double& v : p.param->value.values()) v = 0.05 + 0.1 * std::uniform_real_distribution<double>()(rng);
        }
    }

    model.zero_grad();
    const Tensor logits = model.forward_logits(batch, nn::Mode::kTrain);
    const auto lg = metrics::weighted_bce_with_logits(logits, batch.labels, batch.label_mask, {});
    model.backward(lg.grad);

    auto params = model.parameters();
    std::size_t checked = 0;
    for (auto& p : params) {
        if (!p.param->trainable) continue;
        for (int k = 0; k < 2; ++k) {
            const std::size_t i = rng() % p.param->value.size();
            const double analytic = p.param->grad[i];
            const double h = 1e-5;
            const double orig = p.param->value[i];
            p.param->value[i] = orig + h;
            const double up = batch_loss(model, batch);
            p.param->value[i] = orig - h;
            const double down = batch_loss(model, batch);
            p.param->value[i] = orig;
            const double numeric = (up - down) / (2 * h);
            INFO(p.name << "[" << i << "] analytic " << analytic << " numeric " << numeric);
            if (std::abs(numeric) < 1e-9 && std::abs(analytic) < 1e-9) continue;
            CHECK(rel_err(analytic, numeric, 1e-7) < 1e-3);
            ++checked;
        }
    }
    CHECK(checked >= 5);
}

TEST_CASE("gradient check with group norm and max pooling") {
    ModelConfig cfg = tiny_config();
    cfg.tiny_channels = 4;
    cfg.tiny_groups = 2;
    cfg.tiny_pool = "max";
    cfg.lstm_layers = 1;
    SliceSequenceModel model(cfg);
    std::mt19937_64 rng(4);
    const SequenceBatch batch = random_batch(rng, {2, 3});
    for (auto& p : model.parameters()) {
        if (p.name.find("conv") != std::string::npos && p.name.ends_with("bias")) {
            for (double& v : p.param->value.values()) v = 0.05 + 0.1 * std::uniform_real_distribution<double>()(rng);
        }
    }
    model.zero_grad();
    const auto lg = metrics::weighted_bce_with_logits(model.forward_logits(batch, nn::Mode::kTrain), batch.labels,
                                                      batch.label_mask, {});
    model.backward(lg.grad);

    std::size_t checked = 0;
    for (auto& p : model.parameters()) {
        if (p.name.find(".gn") == std::string::npos) continue;
        for (std::size_t i = 0; i < p.param->value.size(); i += 3) {
            const double analytic = p.param->grad[i];
            const double h = 1e-5, orig = p.param->value[i];
            p.param->value[i] = orig + h;
            const double up = batch_loss(model, batch);
            p.param->value[i] = orig - h;
            const double down = batch_loss(model, batch);
            p.param->value[i] = orig;
            const double numeric = (up - down) / (2 * h);
            INFO(p.name << "[" << i << "] analytic " << analytic << " numeric " << numeric);
            CHECK(rel_err(analytic, numeric, 1e-7) < 1e-3);
            ++checked;
        }
    }
    CHECK(checked >= 8);
}

TEST_CASE("feature and logit shapes") {
    ModelConfig cfg = tiny_config();
    cfg.feature_dim = 32;
    SliceSequenceModel model(cfg);
    std::mt19937_64 rng(5);
    const SequenceBatch batch = random_batch(rng, {5, 5});
    const Tensor f = model.extract_features(batch.images, batch.lengths, nn::Mode::kEval);
    CHECK(f.shape() == std::vector<std::size_t>{2, 5, 32});
    const SequenceBatch one = random_batch(rng, {1});
    CHECK(model.forward(one).shape() == std::vector<std::size_t>{1, 1, 6});
}

TEST_CASE("full-size backbone yields 2048 features per slice") {
    ModelConfig cfg;
    cfg.backbone_id = "resnet50";
    cfg.input_height = 32;
    cfg.input_width = 32;
    cfg.lstm_hidden = 8;
    cfg.lstm_layers = 1;
    SliceSequenceModel model(cfg);
    std::mt19937_64 rng(6);
    const SequenceBatch batch = random_batch(rng, {5, 5}, 32);
    const Tensor f = model.extract_features(batch.images, batch.lengths, nn::Mode::kEval);
    CHECK(f.shape() == std::vector<std::size_t>{2, 5, 2048});
}

TEST_CASE("bidirectional width feeds the head") {
    ModelConfig cfg = tiny_config();
    cfg.lstm_hidden = 512;
    cfg.lstm_layers = 1;
    SliceSequenceModel model(cfg);
    for (auto& p : model.parameters()) {
        if (p.name == "head.weight") CHECK(p.param->value.shape() == std::vector<std::size_t>{6, 1024});
    }
}

TEST_CASE("sequence head parameter count") {
    // Per direction: input, recurrent and one bias block for four gates.
    auto lstm = [](std::size_t d, std::size_t h) { return 2 * (4 * h * d + 4 * h * h + 4 * h); };
    const std::size_t expect = lstm(2048, 512) + lstm(1024, 512) + 1024 * 6 + 6;
    CHECK(expect == 16791558);
    CHECK(sequence_head_parameter_count(2048, 512, 2, 6) == expect);

    ModelConfig cfg = tiny_config();
    SliceSequenceModel model(cfg);
    CHECK(model.head_parameter_count() == sequence_head_parameter_count(8, 4, 2, 6));
}

TEST_CASE("identical slices give identical features") {
    SliceSequenceModel model(tiny_config());
    std::mt19937_64 rng(7);
    SequenceBatch batch = random_batch(rng, {4});
    const std::size_t plane = 3 * 16 * 16;
    std::copy(batch.images.data(), batch.images.data() + plane, batch.images.data() + 3 * plane);
    const Tensor f = model.extract_features(batch.images, batch.lengths, nn::Mode::kEval);
    for (std::size_t d = 0; d < 8; ++d) CHECK(f[d] == f[3 * 8 + d]);
}

TEST_CASE("padding never reaches valid outputs") {
    SliceSequenceModel model(tiny_config());
    std::mt19937_64 rng(8);
    SequenceBatch a = random_batch(rng, {4, 2});
    const Tensor pa = model.forward(a);
    const double la = batch_loss(model, a);

    SequenceBatch b = a;
    const std::size_t plane = 3 * 16 * 16;
    for (std::size_t t = 2; t < 4; ++t) {
        for (std::size_t i = 0; i < plane; ++i) b.images[(4 + t) * plane + i] = 100.0 * std::sin(double(i + t));
        for (std::size_t c = 0; c < 6; ++c) b.labels[(4 + t) * 6 + c] = 1.0 - b.labels[(4 + t) * 6 + c];
    }
    const Tensor pb = model.forward(b);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pb[i]) <= 1e-5);
    CHECK(batch_loss(model, b) == la);
}

TEST_CASE("an extra padded slice leaves valid logits unchanged") {
    SliceSequenceModel model(tiny_config());
    std::mt19937_64 rng(9);
    const Tensor s0 = random_tensor({3, 3, 16, 16}, rng, 0.0, 1.0);
    const Tensor s1 = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
    const Tensor s2 = random_tensor({4, 3, 16, 16}, rng, 0.0, 1.0);
    const SequenceBatch short_batch = make_sequence_batch({&s0, &s1}, {});
    const SequenceBatch long_batch = make_sequence_batch({&s0, &s1, &s2}, {});
    const Tensor p = model.forward(short_batch);
    const Tensor q = model.forward(long_batch);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t t = 0; t < short_batch.lengths[b]; ++t) {
            for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(p[(b * 3 + t) * 6 + c] - q[(b * 4 + t) * 6 + c]) <= 1e-5);
        }
    }
}

TEST_CASE("permuting studies permutes outputs") {
    SliceSequenceModel model(tiny_config());
    std::mt19937_64 rng(10);
    std::vector<Tensor> scans;
    for (std::size_t len : {3, 1, 4}) scans.push_back(random_tensor({len, 3, 16, 16}, rng, 0.0, 1.0));
    const SequenceBatch a = make_sequence_batch({&scans[0], &scans[1], &scans[2]}, {});
    const SequenceBatch b = make_sequence_batch({&scans[2], &scans[0], &scans[1]}, {});
    const Tensor pa = model.forward(a), pb = model.forward(b);
    const std::size_t perm[3] = {1, 2, 0};  // position of study i in b
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t t = 0; t < 4; ++t) {
            for (std::size_t c = 0; c < 6; ++c) {
                CHECK(std::abs(pa[(i * 4 + t) * 6 + c] - pb[(perm[i] * 4 + t) * 6 + c]) <= 1e-6);
            }
        }
    }
}

TEST_CASE("probabilities are in the open unit interval and inference is deterministic") {
    ModelConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    SliceSequenceModel model(cfg);
    std::mt19937_64 rng(11);
    const SequenceBatch batch = random_batch(rng, {3, 3});
    const Tensor p = model.forward(batch);
    for (double v : p.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(model.forward(batch) == p);
    CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("model contract errors") {
    CHECK_THROWS_AS(SliceSequenceModel([] {
                        ModelConfig c = tiny_config();
                        c.backbone_id = "vgg";
                        return c;
                    }()),
                    ConfigError);
    CHECK_THROWS_AS(SliceSequenceModel([] {
                        ModelConfig c = tiny_config();
                        c.lstm_layers = 0;
                        return c;
                    }()),
                    ConfigError);
    SliceSequenceModel model(tiny_config());
    std::mt19937_64 rng(12);
    const Tensor feats = random_tensor({1, 2, 8}, rng);
    const std::vector<std::size_t> too_long{3};
    CHECK_THROWS_AS(model.sequence_head(feats, too_long, nn::Mode::kEval), ContractError);
}
