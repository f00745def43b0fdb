#include "doctest.h"

#include <string>

#include "ichseq/config.hpp"
#include "ichseq/errors.hpp"

using namespace ichseq;

namespace {

std::string config_error(const std::string& text) {
    try {
        parse_config(text, "t.conf");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("sections and dotted keys") {
    const RunConfig c = parse_config(
        "# comment\n[model]\nlstm_hidden = 12  # trailing\nfeature_dim=24\n\n[train]\nepochs = 3\n"
        "model.lstm_layers = 1\ntrain.warmup_steps = 5\n");
    CHECK(c.model.lstm_hidden == 12);
    CHECK(c.model.feature_dim == 24);
    CHECK(c.model.lstm_layers == 1);
    CHECK(c.train.epochs == 3);
    CHECK(c.train.warmup_steps == std::optional<std::size_t>(5));
}

TEST_CASE("parse errors name the key and line") {
    const std::string unknown = config_error("[model]\nfeature_dim = 8\nlstm_width = 3\n");
    CHECK(unknown.find("model.lstm_width") != std::string::npos);
    CHECK(unknown.find("t.conf:3") != std::string::npos);

    const std::string bad = config_error("[train]\n\npeak_lr = fast\n");
    CHECK(bad.find("train.peak_lr") != std::string::npos);
    CHECK(bad.find("t.conf:3") != std::string::npos);

    CHECK(config_error("[train\n").find("t.conf:1") != std::string::npos);
    CHECK(config_error("[train]\nepochs\n").find("t.conf:2") != std::string::npos);
    CHECK_FALSE(config_error("[train]\nepochs = 1.5\n").empty());
    CHECK_FALSE(config_error("[train]\nepochs = -1\n").empty());
    CHECK_FALSE(config_error("[train]\npeak_lr = 0.1x\n").empty());
}

TEST_CASE("canonical text round trips") {
    RunConfig c;
    c.name = "round";
    c.model.lstm_hidden = 7;
    c.train.peak_lr = 0.00123456789012345;
    c.train.grad_clip_norm = 2.5;
    c.augment.rotation_range_deg = {-3.0, 12.5};
    c.windows.channels[1] = {55.0, 90.0};
    c.set_seed(99);
    const std::string text = to_text(c);
    const RunConfig back = parse_config(text);
    CHECK(to_text(back) == text);
    CHECK(back.train.peak_lr == c.train.peak_lr);
    CHECK(back.windows == c.windows);
    CHECK(back.train.seed == 99);
    CHECK(back.augment.seed == 99);
    CHECK(back.model.init_seed == 99);
    CHECK(to_text(parse_config(to_text(RunConfig{}))) == to_text(RunConfig{}));
}

TEST_CASE("every key appears in the canonical text") {
    const std::string text = to_text(RunConfig{});
    for (const auto& key : config_keys()) {
        const auto dot = key.find('.');
        CHECK_MESSAGE(text.find("\n" + key.substr(dot + 1) + " = ") != std::string::npos, key);
    }
}

TEST_CASE("overrides apply on top of the file") {
    RunConfig c = parse_config("[train]\nepochs = 3\n");
    apply_overrides(c, {"train.epochs=9", "model.backbone = tiny_cnn", "train.grad_clip_norm=off"});
    CHECK(c.train.epochs == 9);
    CHECK(c.model.backbone_id == "tiny_cnn");
    CHECK_FALSE(c.train.grad_clip_norm.has_value());
    CHECK_THROWS_AS(apply_overrides(c, {"train.epochs"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(c, {"train.nope=1"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(c, {"epochs=1"}), ConfigError);
}

TEST_CASE("validation rejects inconsistent values") {
    RunConfig c;
    c.validate();
    c.train.eta_min = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig{};
    c.train.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig{};
    c.model.backbone_id = "vgg";
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
