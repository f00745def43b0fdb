#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ichseq/config.hpp"
#include "ichseq/ingest.hpp"
#include "ichseq/metrics.hpp"
#include "ichseq/model.hpp"

namespace ichseq {

namespace fs = std::filesystem;

/// Linear warmup to peak_lr over warmup steps, then cosine decay to eta_min
/// at total_steps. cfg.warmup_steps must be resolved (see resolved_warmup).
double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t total_steps);
std::size_t resolved_warmup(const TrainConfig& cfg, std::size_t steps_per_epoch);

class Adam {
public:
    Adam(std::vector<nn::NamedParam> params, double beta1, double beta2, double eps);
    void step(double lr);
    std::size_t steps() const noexcept { return t_; }

private:
    std::vector<nn::NamedParam> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Global L2 norm of all trainable gradients.
double grad_norm(const std::vector<nn::NamedParam>& params);
/// Scales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
double clip_grad_norm(const std::vector<nn::NamedParam>& params, double max_norm);

/// One study ready for the model: windowed, resized to the model input.
struct Scan {
    std::string study_id;
    std::vector<std::string> slice_ids;
    Tensor images;                 // (S, 3, H, W)
    std::optional<Tensor> labels;  // (S, 6)
};

/// Groups manifest rows by study, assembles volumes, applies the windows and
/// a deterministic resize to (height, width). With require_labels, every row
/// must carry labels.
std::vector<Scan> load_scans(const std::vector<ingest::SliceRecord>& manifest, const WindowTriple& windows,
                             std::size_t height, std::size_t width, bool require_labels);

struct TrainState {
    std::size_t epoch = 0;        // completed epochs
    std::size_t global_step = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::uint64_t model_seed = 0;
    std::uint64_t train_seed = 0;
    std::uint64_t augment_seed = 0;
};

struct HistoryRow {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::string timestamp;
};

inline constexpr const char* kHistoryHeader = "epoch,step,lr,train_loss,val_loss,timestamp";
std::string history_line(const HistoryRow& row);

// ---------------------------------------------------------------------------
// Checkpoints: "ICHCKPT1", u64 metadata length, JSON metadata (resolved
// config text, epoch, step, best validation loss, seeds), then a tensor
// archive with every model parameter. Written atomically.

void save_checkpoint(const fs::path& path, SliceSequenceModel& model, const RunConfig& cfg, const TrainState& state);

struct LoadedCheckpoint {
    RunConfig config;
    TrainState state;
    std::unique_ptr<SliceSequenceModel> model;
};
LoadedCheckpoint load_checkpoint(const fs::path& path);

// ---------------------------------------------------------------------------

struct TrainOptions {
    fs::path run_dir;                 // checkpoint.bin and history.csv go here
    std::ostream* log = nullptr;      // optional progress lines
    bool write_timestamps = true;     // history timestamp column
    // Called after each epoch's history row is written; `saved` tells whether
    // the checkpoint was replaced.
    std::function<void(const HistoryRow&, bool saved)> on_epoch;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    TrainState state;
    std::unique_ptr<SliceSequenceModel> model;  // weights after the last epoch
    fs::path checkpoint;
};

TrainResult train(const RunConfig& cfg, const std::vector<Scan>& train_scans, const std::vector<Scan>& val_scans,
                  const TrainOptions& options);

/// Eval-mode probabilities for each scan, (S, 6) per scan.
std::vector<Tensor> predict_scans(SliceSequenceModel& model, const std::vector<Scan>& scans,
                                  std::size_t batch_size = 4);

/// Slice-level loss and AUCs on labelled scans, plus scan-level AUC using
/// max-aggregated labels.
metrics::MetricReport validate(SliceSequenceModel& model, const std::vector<Scan>& scans,
                               const metrics::LossWeights& weights = {},
                               double clip_eps = metrics::kDefaultClipEps);

enum class PredictLevel { kSlice, kScan };

/// Writes the challenge slice CSV or the scan CSV for `scans`.
void write_predictions(std::ostream& out, const std::vector<Scan>& scans, const std::vector<Tensor>& probs,
                       PredictLevel level);

}  // namespace ichseq
