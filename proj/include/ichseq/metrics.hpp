#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ichseq/errors.hpp"
#include "ichseq/labels.hpp"
#include "ichseq/tensor.hpp"

namespace ichseq::metrics {

inline constexpr double kDefaultClipEps = 1e-7;

/// Per-class weights of the challenge loss; "any" counts double.
struct LossWeights {
    std::array<double, kNumClasses> per_class{1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 1.0 / 7, 2.0 / 7};

    void validate() const;
    static LossWeights uniform();
};

/// Clipped binary cross-entropy per class, averaged over rows, then combined
/// as sum_c w_c * BCE_c. preds and targets are (N, 6); a NaN target marks a
/// missing label and is skipped (classes with no labels drop out and the
/// remaining weights are renormalised).
double weighted_log_loss(const Tensor& preds, const Tensor& targets, const LossWeights& w = {},
                         double clip_eps = kDefaultClipEps);

/// Row-first variant: each row's weighted mean over its labelled classes,
/// then the mean over rows. Equal to weighted_log_loss when no label is missing.
double weighted_log_loss_rowwise(const Tensor& preds, const Tensor& targets, const LossWeights& w = {},
                                 double clip_eps = kDefaultClipEps);

class UndefinedAuc : public DataError {
public:
    using DataError::DataError;
};

/// Mann-Whitney AUC with midranks for ties. Throws UndefinedAuc when either
/// class is absent.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);
std::optional<double> try_roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// (S, 6) slice probabilities -> per-class maximum over slices.
std::array<double, kNumClasses> aggregate_scan(const Tensor& slice_probs);

/// Training loss on logits (B, S, 6) with soft targets, over positions where
/// mask is set. Unclipped and computed from logits for stability.
/// grad = w_c * (sigmoid(z) - y) / N with N the number of valid positions.
struct LossAndGrad {
    double loss = 0.0;
    Tensor grad;
};
LossAndGrad weighted_bce_with_logits(const Tensor& logits, const Tensor& targets, std::span<const std::uint8_t> mask,
                                     const LossWeights& w = {});

struct MetricReport {
    double weighted_log_loss = 0.0;
    std::array<std::optional<double>, kNumClasses> per_class_auc{};
    std::size_t n_slices = 0;
    std::size_t n_scans = 0;
    // Present when scan-level labels were available.
    std::optional<std::array<std::optional<double>, kNumClasses>> scan_auc;

    std::string to_json() const;
};

/// Slice-level report from (N, 6) probabilities and 0/1 targets.
MetricReport evaluate_slices(const Tensor& preds, const Tensor& targets, std::size_t n_scans,
                             const LossWeights& w = {}, double clip_eps = kDefaultClipEps);

std::array<std::optional<double>, kNumClasses> per_class_auc(const Tensor& scores, const Tensor& targets);

// ---------------------------------------------------------------------------
// Prediction files

/// Challenge row id for one slice and class: ID_<slice>_<class>. A slice id
/// that already starts with "ID_" is not prefixed again.
std::string challenge_row_id(const std::string& slice_id, std::size_t cls);

/// `ID,Label` header plus 6 rows per slice, in class order.
void write_slice_predictions(std::ostream& out, const std::vector<std::string>& slice_ids, const Tensor& probs);

struct ScanRow {
    std::string study_id;
    std::array<double, kNumClasses> values{};
};

/// `study_id,<6 class columns>`.
void write_scan_csv(std::ostream& out, const std::vector<ScanRow>& rows);
std::vector<ScanRow> read_scan_csv(const std::string& path);

/// Per-class scan AUC from a scan prediction file and a scan label file (same
/// layout, 0/1 values). Rows are matched by study_id.
std::array<std::optional<double>, kNumClasses> evaluate_scan_files(const std::string& predictions,
                                                                   const std::string& labels);

std::string format_probability(double p);

}  // namespace ichseq::metrics
