#include "ichseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "ichseq/csv.hpp"
#include "ichseq/model.hpp"

namespace ichseq::metrics {

void LossWeights::validate() const {
    double sum = 0.0;
    for (double w : per_class) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be positive");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("loss weights must sum to 1");
}

LossWeights LossWeights::uniform() {
    LossWeights w;
    w.per_class.fill(1.0 / kNumClasses);
    return w;
}

namespace {

void check_pair(const Tensor& preds, const Tensor& targets, const char* who) {
    if (preds.rank() != 2 || preds.dim(1) != kNumClasses || !preds.same_shape(targets)) {
        throw ContractError(std::string(who) + ": preds and targets must both be (N, 6); got " + preds.shape_string() +
                            " and " + targets.shape_string());
    }
}

void check_eps(double eps) {
    if (!(eps > 0.0 && eps < 0.5)) throw ConfigError("clip_eps must be in (0, 0.5)");
}

double clipped_bce(double p, double y, double eps) {
    const double q = std::clamp(p, eps, 1.0 - eps);
    return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

}  // namespace

double weighted_log_loss(const Tensor& preds, const Tensor& targets, const LossWeights& w, double clip_eps) {
    check_pair(preds, targets, "weighted_log_loss");
    check_eps(clip_eps);
    const std::size_t n = preds.dim(0);
    double total = 0.0, weight_sum = 0.0;
    bool dropped = false;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t r = 0; r < n; ++r) {
            const double y = targets[r * kNumClasses + c];
            if (std::isnan(y)) continue;
            acc += clipped_bce(preds[r * kNumClasses + c], y, clip_eps);
            ++count;
        }
        if (count == 0) {
            dropped = true;
            continue;
        }
        total += w.per_class[c] * (acc / static_cast<double>(count));
        weight_sum += w.per_class[c];
    }
    if (weight_sum == 0.0) throw ContractError("weighted_log_loss: no labelled entries");
    return dropped ? total / weight_sum : total;
}

double weighted_log_loss_rowwise(const Tensor& preds, const Tensor& targets, const LossWeights& w, double clip_eps) {
    check_pair(preds, targets, "weighted_log_loss_rowwise");
    check_eps(clip_eps);
    const std::size_t n = preds.dim(0);
    double total = 0.0;
    std::size_t rows = 0;
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0, ws = 0.0;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const double y = targets[r * kNumClasses + c];
            if (std::isnan(y)) continue;
            acc += w.per_class[c] * clipped_bce(preds[r * kNumClasses + c], y, clip_eps);
            ws += w.per_class[c];
        }
        if (ws == 0.0) continue;
        total += acc / ws;
        ++rows;
    }
    if (rows == 0) throw ContractError("weighted_log_loss_rowwise: no labelled entries");
    return total / static_cast<double>(rows);
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ContractError("roc_auc: scores and labels differ in length");
    if (scores.empty()) throw ContractError("roc_auc: empty input");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw DataError("roc_auc: non-finite score");
        if (labels[i] > 1) throw DataError("roc_auc: labels must be 0 or 1");
        pos += labels[i];
    }
    const std::size_t neg = scores.size() - pos;
    if (pos == 0 || neg == 0) throw UndefinedAuc("AUC is undefined when only one class is present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Doubled midranks keep the rank sum integral: a tie block occupying
    // 0-based positions [lo, hi) has average 1-based rank (lo + 1 + hi) / 2.
    std::int64_t rank_sum_x2 = 0;
    std::size_t lo = 0;
    while (lo < order.size()) {
        std::size_t hi = lo + 1;
        while (hi < order.size() && scores[order[hi]] == scores[order[lo]]) ++hi;
        const auto rank_x2 = static_cast<std::int64_t>(lo + 1 + hi);
        for (std::size_t k = lo; k < hi; ++k) {
            if (labels[order[k]]) rank_sum_x2 += rank_x2;
        }
        lo = hi;
    }
    const auto p = static_cast<std::int64_t>(pos);
    const std::int64_t u_x2 = rank_sum_x2 - p * (p + 1);
    return static_cast<double>(u_x2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> try_roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    try {
        return roc_auc(scores, labels);
    } catch (const UndefinedAuc&) {
        return std::nullopt;
    }
}

std::array<double, kNumClasses> aggregate_scan(const Tensor& slice_probs) {
    if (slice_probs.rank() != 2 || slice_probs.dim(1) != kNumClasses) {
        throw ContractError("aggregate_scan expects (S, 6), got " + slice_probs.shape_string());
    }
    if (slice_probs.dim(0) == 0) throw ContractError("aggregate_scan: empty scan");
    std::array<double, kNumClasses> out;
    for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = slice_probs[c];
    for (std::size_t s = 1; s < slice_probs.dim(0); ++s) {
        for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = std::max(out[c], slice_probs[s * kNumClasses + c]);
    }
    return out;
}

LossAndGrad weighted_bce_with_logits(const Tensor& logits, const Tensor& targets, std::span<const std::uint8_t> mask,
                                     const LossWeights& w) {
    if (!logits.same_shape(targets) || logits.size() % kNumClasses != 0) {
        throw ContractError("weighted_bce_with_logits: logits and targets must share shape (..., 6)");
    }
    const std::size_t rows = logits.size() / kNumClasses;
    if (mask.size() != rows) throw ContractError("weighted_bce_with_logits: mask size mismatch");
    const auto n = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
    LossAndGrad out{0.0, Tensor(logits.shape())};
    if (n == 0) return out;
    const double inv_n = 1.0 / static_cast<double>(n);
    std::array<double, kNumClasses> per_class{};
    for (std::size_t r = 0; r < rows; ++r) {
        if (!mask[r]) continue;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const double z = logits[r * kNumClasses + c];
            const double y = targets[r * kNumClasses + c];
            per_class[c] += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
            out.grad[r * kNumClasses + c] = w.per_class[c] * (sigmoid(z) - y) * inv_n;
        }
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) out.loss += w.per_class[c] * per_class[c] * inv_n;
    return out;
}

std::array<std::optional<double>, kNumClasses> per_class_auc(const Tensor& scores, const Tensor& targets) {
    check_pair(scores, targets, "per_class_auc");
    const std::size_t n = scores.dim(0);
    std::array<std::optional<double>, kNumClasses> out{};
    if (n == 0) return out;
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        for (std::size_t r = 0; r < n; ++r) {
            s[r] = scores[r * kNumClasses + c];
            y[r] = targets[r * kNumClasses + c] > 0.5 ? 1 : 0;
        }
        out[c] = try_roc_auc(s, y);
    }
    return out;
}

MetricReport evaluate_slices(const Tensor& preds, const Tensor& targets, std::size_t n_scans, const LossWeights& w,
                             double clip_eps) {
    MetricReport r;
    r.weighted_log_loss = weighted_log_loss(preds, targets, w, clip_eps);
    r.per_class_auc = per_class_auc(preds, targets);
    r.n_slices = preds.dim(0);
    r.n_scans = n_scans;
    return r;
}

namespace {

nlohmann::json auc_json(const std::array<std::optional<double>, kNumClasses>& auc) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        j[std::string(kClassNames[c])] = auc[c] ? nlohmann::json(*auc[c]) : nlohmann::json(nullptr);
    }
    return j;
}

}  // namespace

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["weighted_log_loss"] = weighted_log_loss;
    j["per_class_auc"] = auc_json(per_class_auc);
    j["n_slices"] = n_slices;
    j["n_scans"] = n_scans;
    if (scan_auc) j["scan_auc"] = auc_json(*scan_auc);
    return j.dump(2);
}

// ---------------------------------------------------------------------------

std::string format_probability(double p) { return csv::format_double(p); }

std::string challenge_row_id(const std::string& slice_id, std::size_t cls) {
    const std::string base = slice_id.rfind("ID_", 0) == 0 ? slice_id : "ID_" + slice_id;
    return base + "_" + std::string(kClassNames.at(cls));
}

void write_slice_predictions(std::ostream& out, const std::vector<std::string>& slice_ids, const Tensor& probs) {
    if (probs.rank() != 2 || probs.dim(1) != kNumClasses || probs.dim(0) != slice_ids.size()) {
        throw ContractError("write_slice_predictions: probs must be (N, 6) matching slice ids");
    }
    out << "ID,Label\n";
    for (std::size_t s = 0; s < slice_ids.size(); ++s) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            out << csv::escape(challenge_row_id(slice_ids[s], c)) << ',' << format_probability(probs[s * kNumClasses + c])
                << '\n';
        }
    }
}

void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows) {
    out << "study_id";
    for (auto name : kClassNames) out << ',' << name;
    out << '\n';
    for (const auto& r : rows) {
        out << csv::escape(r.study_id);
        for (double v : r.values) out << ',' << format_probability(v);
        out << '\n';
    }
}

std::vector<ScanRow> read_scan_csv(const std::string& path) {
    const auto rows = csv::read_file(path);
    if (rows.empty()) throw DataError("empty scan CSV: " + path);
    const auto& header = rows.front();
    if (header.size() != kNumClasses + 1 || header[0] != "study_id") {
        throw DataError("scan CSV must have header study_id,<6 classes>: " + path);
    }
    std::array<std::size_t, kNumClasses> col{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        auto it = std::find(header.begin(), header.end(), std::string(kClassNames[c]));
        if (it == header.end()) throw DataError("scan CSV lacks column " + std::string(kClassNames[c]) + ": " + path);
        col[c] = static_cast<std::size_t>(it - header.begin());
    }
    std::vector<ScanRow> out;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].size() != header.size()) throw DataError("wrong column count at " + path + ":" + std::to_string(i + 1));
        ScanRow r;
        r.study_id = rows[i][0];
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            if (!csv::parse_double(rows[i][col[c]], r.values[c])) {
                throw DataError("bad number at " + path + ":" + std::to_string(i + 1));
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::array<std::optional<double>, kNumClasses> evaluate_scan_files(const std::string& predictions,
                                                                   const std::string& labels) {
    const auto preds = read_scan_csv(predictions);
    const auto truth = read_scan_csv(labels);
    std::map<std::string, const ScanRow*> by_id;
    for (const auto& r : truth) by_id[r.study_id] = &r;
    std::vector<const ScanRow*> matched_pred, matched_truth;
    for (const auto& p : preds) {
        auto it = by_id.find(p.study_id);
        if (it == by_id.end()) throw DataError("no scan label for study " + p.study_id);
        matched_pred.push_back(&p);
        matched_truth.push_back(it->second);
    }
    Tensor s({matched_pred.size(), kNumClasses}), y({matched_pred.size(), kNumClasses});
    for (std::size_t i = 0; i < matched_pred.size(); ++i) {
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            s[i * kNumClasses + c] = matched_pred[i]->values[c];
            y[i * kNumClasses + c] = matched_truth[i]->values[c];
        }
    }
    return per_class_auc(s, y);
}

}  // namespace ichseq::metrics
