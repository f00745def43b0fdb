#include "ichseq/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "ichseq/augmentation.hpp"
#include "ichseq/csv.hpp"
#include "ichseq/errors.hpp"
#include "ichseq/imageops.hpp"
#include "ichseq/tensor_io.hpp"

namespace ichseq {

using nlohmann::json;

double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
    if (!cfg.warmup_steps) throw ConfigError("lr_at needs a resolved train.warmup_steps");
    const std::size_t warmup = *cfg.warmup_steps;
    if (total_steps <= warmup) {
        throw ConfigError("total steps (" + std::to_string(total_steps) + ") must exceed warmup steps (" +
                          std::to_string(warmup) + ")");
    }
    if (step > total_steps) throw ContractError("lr_at: step beyond total_steps");
    if (step < warmup) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return cfg.eta_min + 0.5 * (cfg.peak_lr - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t resolved_warmup(const TrainConfig& cfg, std::size_t steps_per_epoch) {
    return cfg.warmup_steps.value_or(steps_per_epoch);
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<nn::NamedParam> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.param->value.size(), 0.0);
        v_.emplace_back(p.param->value.size(), 0.0);
    }
}

void Adam::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        nn::Param& p = *params_[k].param;
        if (!p.trainable) continue;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            p.value[i] -= lr * update;
        }
    }
}

double grad_norm(const std::vector<nn::NamedParam>& params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.param->trainable) continue;
        for (double g : p.param->grad.values()) sq += g * g;
    }
    return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<nn::NamedParam>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && std::isfinite(norm)) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            if (!p.param->trainable) continue;
            for (double& g : p.param->grad.values()) g *= scale;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------

std::vector<Scan> load_scans(const std::vector<ingest::SliceRecord>& manifest, const WindowTriple& windows,
                             std::size_t height, std::size_t width, bool require_labels) {
    windows.validate();
    std::vector<Scan> scans;
    for (const auto& group : ingest::group_by_study(manifest)) {
        const ingest::HUVolume vol = ingest::assemble_study(group);
        Scan scan;
        scan.study_id = vol.study_id;
        scan.slice_ids = vol.slice_ids;
        const std::size_t s = vol.depth(), plane = 3 * height * width;
        scan.images = Tensor({s, 3, height, width});
        bool labelled = true;
        for (std::size_t k = 0; k < s; ++k) {
            const Tensor img = imageops::resize(stack_windows(vol.slices[k], windows), height, width);
            std::copy(img.data(), img.data() + plane, scan.images.data() + k * plane);
            labelled = labelled && group[vol.order[k]].labels.has_value();
        }
        if (labelled) {
            Tensor labels({s, kNumClasses});
            for (std::size_t k = 0; k < s; ++k) {
                const auto& lv = *group[vol.order[k]].labels;
                for (std::size_t c = 0; c < kNumClasses; ++c) labels[k * kNumClasses + c] = lv[c];
            }
            scan.labels = std::move(labels);
        } else if (require_labels) {
            throw DataError("study " + vol.study_id + " has unlabelled slices; a labelled manifest is required");
        }
        scans.push_back(std::move(scan));
    }
    return scans;
}

// ---------------------------------------------------------------------------

std::string history_line(const HistoryRow& r) {
    return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + csv::format_double(r.lr) + "," +
           csv::format_double(r.train_loss) + "," + csv::format_double(r.val_loss) + "," + r.timestamp;
}

namespace {

constexpr char kCheckpointMagic[8] = {'I', 'C', 'H', 'C', 'K', 'P', 'T', '1'};

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

void save_checkpoint(const fs::path& path, SliceSequenceModel& model, const RunConfig& cfg, const TrainState& state) {
    json meta;
    meta["format"] = 1;
    meta["config"] = to_text(cfg);
    meta["epoch"] = state.epoch;
    meta["global_step"] = state.global_step;
    meta["best_val_loss"] = std::isfinite(state.best_val_loss) ? json(state.best_val_loss) : json(nullptr);
    meta["seeds"] = {{"model", state.model_seed}, {"train", state.train_seed}, {"augment", state.augment_seed}};
    const std::string meta_text = meta.dump();

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (const auto& p : model.parameters()) tensors.emplace_back(p.name, &p.param->value);

    io::atomic_write(path, [&](std::ostream& out) {
        out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        const std::uint64_t n = meta_text.size();
        out.write(reinterpret_cast<const char*>(&n), sizeof(n));
        out.write(meta_text.data(), static_cast<std::streamsize>(n));
        io::write_tensors(out, tensors);
    });
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint", path.string());
    char magic[8];
    std::uint64_t n = 0;
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    if (!in.read(reinterpret_cast<char*>(&n), sizeof(n)) || n > (1u << 26)) {
        throw DataError("corrupt checkpoint header: " + path.string());
    }
    std::string meta_text(n, '\0');
    if (!in.read(meta_text.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint: " + path.string());
    json meta;
    try {
        meta = json::parse(meta_text);
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
    }
    LoadedCheckpoint out;
    out.config = parse_config(meta.at("config").get<std::string>(), path.string() + "#config");
    out.state.epoch = meta.at("epoch").get<std::size_t>();
    out.state.global_step = meta.at("global_step").get<std::size_t>();
    if (!meta.at("best_val_loss").is_null()) out.state.best_val_loss = meta["best_val_loss"].get<double>();
    out.state.model_seed = meta.at("seeds").at("model").get<std::uint64_t>();
    out.state.train_seed = meta.at("seeds").at("train").get<std::uint64_t>();
    out.state.augment_seed = meta.at("seeds").at("augment").get<std::uint64_t>();

    ModelConfig mc = out.config.model;
    mc.backbone_weights.clear();  // weights come from the archive below
    out.model = std::make_unique<SliceSequenceModel>(mc);
    const auto tensors = io::read_tensors(in);
    auto params = out.model->parameters();
    if (tensors.size() != params.size()) {
        throw DataError("checkpoint holds " + std::to_string(tensors.size()) + " tensors but the configured model has " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (tensors[i].first != params[i].name || tensors[i].second.shape() != params[i].param->value.shape()) {
            throw DataError("checkpoint tensor '" + tensors[i].first + "' does not match model parameter '" +
                            params[i].name + "'");
        }
        params[i].param->value = tensors[i].second;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<Tensor> predict_scans(SliceSequenceModel& model, const std::vector<Scan>& scans, std::size_t batch_size) {
    std::vector<Tensor> out;
    const auto& mc = model.config();
    for (std::size_t first = 0; first < scans.size(); first += batch_size) {
        const std::size_t last = std::min(scans.size(), first + batch_size);
        std::vector<const Tensor*> imgs;
        for (std::size_t i = first; i < last; ++i) {
            if (scans[i].images.dim(2) != mc.input_height || scans[i].images.dim(3) != mc.input_width) {
                throw DataError("scan " + scans[i].study_id + " does not match the model input size");
            }
            imgs.push_back(&scans[i].images);
        }
        const SequenceBatch batch = make_sequence_batch(imgs, {});
        const Tensor probs = model.forward(batch);
        const std::size_t s_max = batch.max_length();
        for (std::size_t i = 0; i < imgs.size(); ++i) {
            const std::size_t len = batch.lengths[i];
            Tensor p({len, kNumClasses});
            std::copy(probs.data() + i * s_max * kNumClasses, probs.data() + (i * s_max + len) * kNumClasses, p.data());
            out.push_back(std::move(p));
        }
    }
    return out;
}

metrics::MetricReport validate(SliceSequenceModel& model, const std::vector<Scan>& scans,
                               const metrics::LossWeights& weights, double clip_eps) {
    if (scans.empty()) throw DataError("validation set is empty");
    for (const auto& s : scans) {
        if (!s.labels) throw DataError("validation needs labels; study " + s.study_id + " is unlabelled");
    }
    const auto probs = predict_scans(model, scans);
    std::size_t n = 0;
    for (const auto& p : probs) n += p.dim(0);
    Tensor preds({n, kNumClasses}), targets({n, kNumClasses});
    Tensor scan_preds({scans.size(), kNumClasses}), scan_targets({scans.size(), kNumClasses});
    std::size_t row = 0;
    for (std::size_t i = 0; i < scans.size(); ++i) {
        std::copy(probs[i].data(), probs[i].data() + probs[i].size(), preds.data() + row * kNumClasses);
        std::copy(scans[i].labels->data(), scans[i].labels->data() + scans[i].labels->size(),
                  targets.data() + row * kNumClasses);
        row += probs[i].dim(0);
        const auto sp = metrics::aggregate_scan(probs[i]);
        const auto st = metrics::aggregate_scan(*scans[i].labels);
        std::copy(sp.begin(), sp.end(), scan_preds.data() + i * kNumClasses);
        std::copy(st.begin(), st.end(), scan_targets.data() + i * kNumClasses);
    }
    auto report = metrics::evaluate_slices(preds, targets, scans.size(), weights, clip_eps);
    report.scan_auc = metrics::per_class_auc(scan_preds, scan_targets);
    return report;
}

void write_predictions(std::ostream& out, const std::vector<Scan>& scans, const std::vector<Tensor>& probs,
                       PredictLevel level) {
    if (probs.size() != scans.size()) throw ContractError("one probability matrix per scan expected");
    if (level == PredictLevel::kSlice) {
        std::vector<std::string> ids;
        std::size_t n = 0;
        for (const auto& p : probs) n += p.dim(0);
        Tensor all({n, kNumClasses});
        std::size_t row = 0;
        for (std::size_t i = 0; i < scans.size(); ++i) {
            ids.insert(ids.end(), scans[i].slice_ids.begin(), scans[i].slice_ids.end());
            std::copy(probs[i].data(), probs[i].data() + probs[i].size(), all.data() + row * kNumClasses);
            row += probs[i].dim(0);
        }
        metrics::write_slice_predictions(out, ids, all);
        return;
    }
    std::vector<metrics::ScanRow> rows;
    for (std::size_t i = 0; i < scans.size(); ++i) rows.push_back({scans[i].study_id, metrics::aggregate_scan(probs[i])});
    metrics::write_scan_csv(out, rows);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> shuffled(std::size_t n, augment::Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

[[noreturn]] void numeric_abort(const fs::path& run_dir, const std::vector<std::string>& ids, std::size_t epoch,
                                std::size_t step, double lr, double loss, double gnorm) {
    json diag;
    diag["error"] = "non-finite training quantity";
    diag["epoch"] = epoch;
    diag["step"] = step;
    diag["lr"] = lr;
    diag["loss"] = std::isfinite(loss) ? json(loss) : json(std::to_string(loss));
    diag["grad_norm"] = std::isfinite(gnorm) ? json(gnorm) : json(std::to_string(gnorm));
    diag["batch_study_ids"] = ids;
    const std::string text = diag.dump(2);
    if (!run_dir.empty()) io::write_text_file(run_dir / "diagnostic.json", text + "\n");
    throw NumericError("training diverged: " + diag.dump());
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<Scan>& train_scans, const std::vector<Scan>& val_scans,
                  const TrainOptions& options) {
    cfg.validate();
    if (train_scans.empty()) throw DataError("training set is empty");
    if (val_scans.empty()) throw DataError("validation set is empty");
    for (const auto& s : train_scans) {
        if (!s.labels) throw DataError("training needs labels; study " + s.study_id + " is unlabelled");
    }

    TrainResult result;
    result.model = std::make_unique<SliceSequenceModel>(cfg.model);
    SliceSequenceModel& model = *result.model;
    const auto params = model.parameters();
    Adam adam(params, cfg.train.adam_beta1, cfg.train.adam_beta2, cfg.train.adam_eps);

    const std::size_t bs = cfg.train.batch_size_scans;
    const std::size_t steps_per_epoch = (train_scans.size() + bs - 1) / bs;
    const std::size_t total_steps = steps_per_epoch * cfg.train.epochs;
    TrainConfig sched = cfg.train;
    sched.warmup_steps = resolved_warmup(cfg.train, steps_per_epoch);
    if (*sched.warmup_steps >= total_steps) {
        throw ConfigError("train.warmup_steps (" + std::to_string(*sched.warmup_steps) + ") must be below total steps (" +
                          std::to_string(total_steps) + ")");
    }
    const metrics::LossWeights weights;

    TrainState& state = result.state;
    state.model_seed = cfg.model.init_seed;
    state.train_seed = cfg.train.seed;
    state.augment_seed = cfg.augment.seed;

    const bool persist = !options.run_dir.empty();
    const fs::path history_path = options.run_dir / "history.csv";
    result.checkpoint = options.run_dir / "checkpoint.bin";
    if (persist) io::write_text_file(history_path, std::string(kHistoryHeader) + "\n");

    for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        augment::Rng order_rng = augment::derive_rng(cfg.train.seed, epoch, 0xffffffffu);
        const auto order = shuffled(train_scans.size(), order_rng);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            std::vector<Tensor> imgs;
            std::vector<const Tensor*> img_ptrs, label_ptrs;
            std::vector<std::string> ids;
            for (std::size_t k = b * bs; k < std::min(order.size(), (b + 1) * bs); ++k) {
                const Scan& scan = train_scans[order[k]];
                augment::Rng rng = augment::derive_rng(cfg.augment.seed, epoch, b, k - b * bs + 1);
                imgs.push_back(augment::augment_scan(scan.images, cfg.augment, rng));
                label_ptrs.push_back(&*scan.labels);
                ids.push_back(scan.study_id);
            }
            for (const auto& t : imgs) img_ptrs.push_back(&t);
            SequenceBatch batch = make_sequence_batch(img_ptrs, label_ptrs, ids);

            augment::Rng mix_rng = augment::derive_rng(cfg.augment.seed, epoch, b, 0);
            if (cfg.augment.cutmix_prob > 0.0 &&
                std::uniform_real_distribution<double>(0.0, 1.0)(mix_rng) < cfg.augment.cutmix_prob) {
                auto mixed = augment::cutmix_sequences(batch.images, batch.labels, batch.lengths, cfg.augment.cutmix_alpha,
                                                       mix_rng);
                batch.images = std::move(mixed.mixed_images);
                batch.labels = std::move(mixed.mixed_labels);
            }

            model.zero_grad();
            const Tensor logits = model.forward_logits(batch, nn::Mode::kTrain);
            const auto lg = metrics::weighted_bce_with_logits(logits, batch.labels, batch.label_mask, weights);
            lr = lr_at(state.global_step, sched, total_steps);
            if (!std::isfinite(lg.loss)) numeric_abort(options.run_dir, ids, epoch + 1, state.global_step, lr, lg.loss, NAN);
            model.backward(lg.grad);
            const double gnorm =
                cfg.train.grad_clip_norm ? clip_grad_norm(params, *cfg.train.grad_clip_norm) : grad_norm(params);
            if (!std::isfinite(gnorm)) numeric_abort(options.run_dir, ids, epoch + 1, state.global_step, lr, lg.loss, gnorm);
            adam.step(lr);
            ++state.global_step;
            loss_sum += lg.loss;
        }

        const double val_loss = validate(model, val_scans, weights, cfg.train.clip_eps).weighted_log_loss;
        state.epoch = epoch + 1;
        HistoryRow row{epoch + 1, state.global_step, lr, loss_sum / static_cast<double>(steps_per_epoch), val_loss,
                       options.write_timestamps ? utc_timestamp() : std::string()};
        const bool improved = val_loss < state.best_val_loss;
        if (improved) {
            state.best_val_loss = val_loss;
            if (persist) save_checkpoint(result.checkpoint, model, cfg, state);
        }
        if (persist) {
            std::ofstream out(history_path, std::ios::app);
            if (!out) throw IoError("cannot append to history", history_path.string());
            out << history_line(row) << '\n';
        }
        if (options.log) {
            *options.log << "epoch " << row.epoch << "/" << cfg.train.epochs << " step " << row.step << " lr "
                         << row.lr << " train_loss " << row.train_loss << " val_loss " << row.val_loss << '\n';
        }
        if (options.on_epoch) options.on_epoch(row, improved && persist);
        result.history.push_back(std::move(row));
    }
    return result;
}

}  // namespace ichseq
