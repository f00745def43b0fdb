#include "ichseq/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "ichseq/csv.hpp"
#include "ichseq/errors.hpp"
#include "ichseq/tensor_io.hpp"

namespace ichseq {

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ConfigError("train.peak_lr must be > 0");
    if (batch_size_scans < 1) throw ConfigError("train.batch_size_scans must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
    if (grad_clip_norm && !(*grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip_norm must be > 0 or off");
    if (!(eta_min >= 0.0 && eta_min <= peak_lr)) throw ConfigError("train.eta_min must be in [0, peak_lr]");
    if (!(clip_eps > 0.0 && clip_eps < 0.5)) throw ConfigError("train.clip_eps must be in (0, 0.5)");
}

void RunConfig::validate() const {
    windows.validate();
    model.validate();
    augment.validate();
    train.validate();
}

void RunConfig::set_seed(std::uint64_t seed) {
    train.seed = seed;
    augment.seed = seed;
    model.init_seed = seed;
}

namespace {

using Getter = std::function<std::string(const RunConfig&)>;
using Setter = std::function<void(RunConfig&, const std::string&)>;

struct Field {
    std::string key;
    Getter get;
    Setter set;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

// Values are parsed with a thrown std::invalid_argument; callers attach the key.
double to_double(const std::string& v) {
    double d = 0;
    if (!csv::parse_double(v, d) || !std::isfinite(d)) throw std::invalid_argument("expected a finite number");
    return d;
}

std::size_t to_size(const std::string& v) {
    long long n = 0;
    if (!csv::parse_int(v, n) || n < 0) throw std::invalid_argument("expected a non-negative integer");
    return static_cast<std::size_t>(n);
}

std::uint64_t to_u64(const std::string& v) {
    std::uint64_t n = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
    if (ec != std::errc{} || ptr != v.data() + v.size()) throw std::invalid_argument("expected an unsigned integer");
    return n;
}

std::vector<double> to_doubles(const std::string& v, std::size_t n) {
    std::string s = v;
    for (char& c : s) {
        if (c == ',') c = ' ';
    }
    std::istringstream in(s);
    std::vector<double> out;
    std::string tok;
    while (in >> tok) out.push_back(to_double(tok));
    if (out.size() != n) throw std::invalid_argument("expected " + std::to_string(n) + " numbers");
    return out;
}

std::string fmt(double d) { return csv::format_double(d); }
std::string fmt(std::size_t n) { return std::to_string(n); }
std::string fmt_pair(double a, double b) { return fmt(a) + " " + fmt(b); }

template <typename T>
Field num(std::string key, T RunConfig::*section, double T::*member) {
    return {std::move(key), [=](const RunConfig& c) { return fmt(c.*section.*member); },
            [=](RunConfig& c, const std::string& v) { c.*section.*member = to_double(v); }};
}

template <typename T>
Field count(std::string key, T RunConfig::*section, std::size_t T::*member) {
    return {std::move(key), [=](const RunConfig& c) { return fmt(c.*section.*member); },
            [=](RunConfig& c, const std::string& v) { c.*section.*member = to_size(v); }};
}

template <typename T>
Field seed(std::string key, T RunConfig::*section, std::uint64_t T::*member) {
    return {std::move(key), [=](const RunConfig& c) { return std::to_string(c.*section.*member); },
            [=](RunConfig& c, const std::string& v) { c.*section.*member = to_u64(v); }};
}

template <typename T>
Field text(std::string key, T RunConfig::*section, std::string T::*member) {
    return {std::move(key), [=](const RunConfig& c) { return c.*section.*member; },
            [=](RunConfig& c, const std::string& v) { c.*section.*member = v; }};
}

Field window(std::size_t k) {
    return {"window.ch" + std::to_string(k + 1),
            [=](const RunConfig& c) { return fmt_pair(c.windows.channels[k].level, c.windows.channels[k].width); },
            [=](RunConfig& c, const std::string& v) {
                const auto d = to_doubles(v, 2);
                c.windows.channels[k] = {d[0], d[1]};
            }};
}

std::string fmt_triple(const std::array<double, 3>& a) { return fmt(a[0]) + " " + fmt(a[1]) + " " + fmt(a[2]); }

const std::vector<Field>& fields() {
    using A = augment::AugmentConfig;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"run.name", [](const RunConfig& c) { return c.name; },
                     [](RunConfig& c, const std::string& v) { c.name = v; }});
        f.push_back(text("data.train_manifest", &RunConfig::data, &DataConfig::train_manifest));
        f.push_back(text("data.val_manifest", &RunConfig::data, &DataConfig::val_manifest));
        for (std::size_t k = 0; k < 3; ++k) f.push_back(window(k));

        f.push_back(text("model.backbone", &RunConfig::model, &ModelConfig::backbone_id));
        f.push_back(count("model.feature_dim", &RunConfig::model, &ModelConfig::feature_dim));
        f.push_back(count("model.lstm_hidden", &RunConfig::model, &ModelConfig::lstm_hidden));
        f.push_back(count("model.lstm_layers", &RunConfig::model, &ModelConfig::lstm_layers));
        f.push_back(count("model.num_classes", &RunConfig::model, &ModelConfig::num_classes));
        f.push_back(count("model.input_height", &RunConfig::model, &ModelConfig::input_height));
        f.push_back(count("model.input_width", &RunConfig::model, &ModelConfig::input_width));
        f.push_back({"model.channel_mean",
                     [](const RunConfig& c) { return c.model.channel_norm ? fmt_triple(c.model.channel_norm->mean) : "off"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "off") {
                             c.model.channel_norm.reset();
                             return;
                         }
                         const auto d = to_doubles(v, 3);
                         if (!c.model.channel_norm) c.model.channel_norm.emplace();
                         c.model.channel_norm->mean = {d[0], d[1], d[2]};
                     }});
        f.push_back({"model.channel_std",
                     [](const RunConfig& c) { return c.model.channel_norm ? fmt_triple(c.model.channel_norm->std) : "off"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "off") {
                             c.model.channel_norm.reset();
                             return;
                         }
                         const auto d = to_doubles(v, 3);
                         if (!c.model.channel_norm) c.model.channel_norm.emplace();
                         c.model.channel_norm->std = {d[0], d[1], d[2]};
                     }});
        f.push_back(num("model.dropout", &RunConfig::model, &ModelConfig::dropout));
        f.push_back(count("model.tiny_channels", &RunConfig::model, &ModelConfig::tiny_channels));
        f.push_back(count("model.tiny_groups", &RunConfig::model, &ModelConfig::tiny_groups));
        f.push_back(text("model.tiny_pool", &RunConfig::model, &ModelConfig::tiny_pool));
        f.push_back(text("model.backbone_weights", &RunConfig::model, &ModelConfig::backbone_weights));
        f.push_back(seed("model.init_seed", &RunConfig::model, &ModelConfig::init_seed));

        f.push_back({"augment.crop_scale",
                     [](const RunConfig& c) { return fmt_pair(c.augment.crop_scale_range.first, c.augment.crop_scale_range.second); },
                     [](RunConfig& c, const std::string& v) {
                         const auto d = to_doubles(v, 2);
                         c.augment.crop_scale_range = {d[0], d[1]};
                     }});
        f.push_back(num("augment.crop_prob", &RunConfig::augment, &A::crop_prob));
        f.push_back({"augment.rotation_deg",
                     [](const RunConfig& c) {
                         return fmt_pair(c.augment.rotation_range_deg.first, c.augment.rotation_range_deg.second);
                     },
                     [](RunConfig& c, const std::string& v) {
                         const auto d = to_doubles(v, 2);
                         c.augment.rotation_range_deg = {d[0], d[1]};
                     }});
        f.push_back(num("augment.rotate_prob", &RunConfig::augment, &A::rotate_prob));
        f.push_back(num("augment.hflip_prob", &RunConfig::augment, &A::hflip_prob));
        f.push_back(num("augment.vflip_prob", &RunConfig::augment, &A::vflip_prob));
        f.push_back(num("augment.optical_prob", &RunConfig::augment, &A::optical_prob));
        f.push_back(num("augment.grid_prob", &RunConfig::augment, &A::grid_prob));
        f.push_back(num("augment.distortion_strength", &RunConfig::augment, &A::distortion_strength));
        f.push_back({"augment.grid_steps", [](const RunConfig& c) { return std::to_string(c.augment.grid_steps); },
                     [](RunConfig& c, const std::string& v) { c.augment.grid_steps = static_cast<int>(to_size(v)); }});
        f.push_back(num("augment.noise_prob", &RunConfig::augment, &A::noise_prob));
        f.push_back(num("augment.noise_sigma", &RunConfig::augment, &A::noise_sigma));
        f.push_back(num("augment.cutmix_alpha", &RunConfig::augment, &A::cutmix_alpha));
        f.push_back(num("augment.cutmix_prob", &RunConfig::augment, &A::cutmix_prob));
        f.push_back(seed("augment.seed", &RunConfig::augment, &A::seed));

        f.push_back(count("train.epochs", &RunConfig::train, &TrainConfig::epochs));
        f.push_back(num("train.peak_lr", &RunConfig::train, &TrainConfig::peak_lr));
        f.push_back({"train.warmup_steps",
                     [](const RunConfig& c) { return c.train.warmup_steps ? fmt(*c.train.warmup_steps) : "auto"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "auto") {
                             c.train.warmup_steps.reset();
                         } else {
                             c.train.warmup_steps = to_size(v);
                         }
                     }});
        f.push_back(count("train.batch_size_scans", &RunConfig::train, &TrainConfig::batch_size_scans));
        f.push_back(num("train.adam_beta1", &RunConfig::train, &TrainConfig::adam_beta1));
        f.push_back(num("train.adam_beta2", &RunConfig::train, &TrainConfig::adam_beta2));
        f.push_back(num("train.adam_eps", &RunConfig::train, &TrainConfig::adam_eps));
        f.push_back({"train.grad_clip_norm",
                     [](const RunConfig& c) { return c.train.grad_clip_norm ? fmt(*c.train.grad_clip_norm) : "off"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "off") {
                             c.train.grad_clip_norm.reset();
                         } else {
                             c.train.grad_clip_norm = to_double(v);
                         }
                     }});
        f.push_back(seed("train.seed", &RunConfig::train, &TrainConfig::seed));
        f.push_back(num("train.eta_min", &RunConfig::train, &TrainConfig::eta_min));
        f.push_back(num("train.clip_eps", &RunConfig::train, &TrainConfig::clip_eps));
        return f;
    }();
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown config key '" + key + "' (" + where + ")");
    try {
        f->set(cfg, value);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("invalid value '" + value + "' for " + key + " (" + where + "): " + e.what());
    }
}

RunConfig parse_config(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string where = source + ":" + std::to_string(lineno);
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("malformed section header at " + where);
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected `key = value` at " + where);
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
        set_config_value(cfg, key, value, where);
    }
    return cfg;
}

RunConfig load_config(const std::string& path) { return parse_config(io::read_text_file(path), path); }

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be key=value: '" + o + "'");
        set_config_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)), "--set " + o);
    }
}

std::string to_text(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string sec = f.key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out += '\n';
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

}  // namespace ichseq
