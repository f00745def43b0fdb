#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "ichseq/synth.hpp"
#include "ichseq/training.hpp"
#include "oracles.hpp"

using namespace ichseq;

namespace {

TrainConfig schedule(double peak, std::size_t warmup, double eta_min = 0.0) {
    TrainConfig c;
    c.peak_lr = peak;
    c.warmup_steps = warmup;
    c.eta_min = eta_min;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

RunConfig small_run() {
    RunConfig cfg;
    cfg.name = "unit";
    cfg.model.backbone_id = "tiny_cnn";
    cfg.model.feature_dim = 8;
    cfg.model.lstm_hidden = 4;
    cfg.model.lstm_layers = 2;
    cfg.model.input_height = 16;
    cfg.model.input_width = 16;
    cfg.model.tiny_channels = 4;
    cfg.train.epochs = 4;
    cfg.train.batch_size_scans = 2;
    cfg.train.peak_lr = 3e-3;
    cfg.set_seed(5);
    return cfg;
}

struct SmallData {
    std::vector<Scan> train, val;
};

const SmallData& small_data() {
    static const SmallData data = [] {
        const auto dir = testutil::scratch_dir("train_data");
        synth::SynthConfig sc;
        sc.n_studies = 6;
        sc.slices_per_study = 4;
        sc.height = 16;
        sc.width = 16;
        sc.seed = 3;
        sc.val_fraction = 0.34;
        const auto out = synth::generate(sc, dir);
        const WindowTriple w;
        return SmallData{load_scans(ingest::read_manifest_file(out.train_manifest), w, 16, 16, true),
                         load_scans(ingest::read_manifest_file(out.val_manifest), w, 16, 16, true)};
    }();
    return data;
}

}  // namespace

TEST_CASE("schedule examples") {
    const TrainConfig c = schedule(1e-3, 100);
    CHECK(lr_at(100, c, 1100) == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(std::abs(lr_at(600, c, 1100) - 5e-4) < 1e-15);
    CHECK(std::abs(lr_at(1100, c, 1100)) < 1e-15);
    CHECK(lr_at(0, c, 1100) == 0.0);
    CHECK(lr_at(50, c, 1100) == doctest::Approx(5e-4).epsilon(1e-15));
    const TrainConfig m = schedule(1e-3, 10, 1e-5);
    CHECK(lr_at(110, m, 110) == doctest::Approx(1e-5).epsilon(1e-12));
}

TEST_CASE("schedule matches the closed form and is continuous then non-increasing") {
    for (std::size_t warmup : {0, 1, 7, 64}) {
        const std::size_t total = warmup + 257;
        const TrainConfig c = schedule(2e-3, warmup, 1e-6);
        CHECK(lr_at(warmup, c, total) == 2e-3);
        if (warmup > 0) CHECK(std::abs(lr_at(warmup - 1, c, total) - 2e-3 * double(warmup - 1) / double(warmup)) < 1e-15);
        double prev = lr_at(warmup, c, total);
        for (std::size_t s = 0; s <= total; ++s) {
            const double v = lr_at(s, c, total);
            CHECK(std::abs(v - oracle::cosine_warmup_lr(double(s), 2e-3, double(warmup), double(total), 1e-6)) < 1e-15);
            if (s > warmup) {
                CHECK(v <= prev);
                prev = v;
            }
        }
    }
}

TEST_CASE("schedule errors") {
    CHECK_THROWS_AS(lr_at(0, schedule(1e-3, 10), 10), ConfigError);
    CHECK_THROWS_AS(lr_at(11, schedule(1e-3, 1), 10), ContractError);
    TrainConfig unresolved;
    CHECK_THROWS_AS(lr_at(0, unresolved, 10), ConfigError);
    CHECK(resolved_warmup(unresolved, 13) == 13);
}

TEST_CASE("adam with zero learning rate leaves parameters untouched") {
    ModelConfig mc = small_run().model;
    SliceSequenceModel model(mc);
    std::mt19937_64 rng(1);
    auto params = model.parameters();
    std::vector<Tensor> before;
    for (auto& p : params) {
        before.push_back(p.param->value);
        for (double& g : p.param->grad.values()) g = std::normal_distribution<double>()(rng);
    }
    Adam adam(params, 0.9, 0.999, 1e-8);
    adam.step(0.0);
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i].param->value == before[i]);
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
    nn::Param p({3});
    p.value.values() = {1.0, 2.0, 3.0};
    p.grad.values() = {0.5, -2.0, 0.0};
    Adam adam({{"p", &p}}, 0.9, 0.999, 1e-8);
    adam.step(0.1);
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(2.1).epsilon(1e-6));
    CHECK(p.value[2] == 3.0);
}

TEST_CASE("gradient clipping rescales to the bound") {
    nn::Param p({2});
    p.grad.values() = {3.0, 4.0};
    std::vector<nn::NamedParam> ps{{"p", &p}};
    CHECK(clip_grad_norm(ps, 1.0) == 5.0);
    CHECK(grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(clip_grad_norm(ps, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("checkpoint round trip reproduces validation loss") {
    const auto dir = testutil::scratch_dir("ckpt");
    RunConfig cfg = small_run();
    SliceSequenceModel model(cfg.model);
    const double loss = validate(model, small_data().val).weighted_log_loss;
    TrainState st;
    st.epoch = 3;
    st.global_step = 12;
    st.best_val_loss = loss;
    save_checkpoint(dir / "c.bin", model, cfg, st);
    const auto loaded = load_checkpoint(dir / "c.bin");
    CHECK(loaded.state.epoch == 3);
    CHECK(loaded.state.global_step == 12);
    CHECK(loaded.state.best_val_loss == loss);
    CHECK(to_text(loaded.config) == to_text(cfg));
    CHECK(std::abs(validate(*loaded.model, small_data().val).weighted_log_loss - loss) <= 1e-10);
}

TEST_CASE("checkpoint with mismatched tensors is rejected") {
    const auto dir = testutil::scratch_dir("ckpt_bad");
    RunConfig cfg = small_run();
    SliceSequenceModel model(cfg.model);
    save_checkpoint(dir / "c.bin", model, cfg, {});
    std::string bytes = slurp(dir / "c.bin");
    // Rewrite the stored config so the model it describes no longer fits the weights.
    const auto at = bytes.find("lstm_hidden = 4");
    REQUIRE(at != std::string::npos);
    bytes[at + std::string("lstm_hidden = ").size()] = '5';
    std::ofstream(dir / "d.bin", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "d.bin"), DataError);
    std::ofstream(dir / "e.bin", std::ios::binary) << "garbage";
    CHECK_THROWS_AS(load_checkpoint(dir / "e.bin"), DataError);
}

TEST_CASE("fixed seeds give identical history and weights") {
    const RunConfig cfg = small_run();
    const auto a = testutil::scratch_dir("repro_a"), b = testutil::scratch_dir("repro_b");
    TrainOptions oa{a}, ob{b};
    oa.write_timestamps = ob.write_timestamps = false;
    auto ra = train(cfg, small_data().train, small_data().val, oa);
    auto rb = train(cfg, small_data().train, small_data().val, ob);
    CHECK(slurp(a / "history.csv") == slurp(b / "history.csv"));
    CHECK(slurp(a / "checkpoint.bin") == slurp(b / "checkpoint.bin"));
    auto pa = ra.model->parameters(), pb = rb.model->parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].param->value == pb[i].param->value);

    RunConfig other = cfg;
    other.train.seed = 6;
    const auto c = testutil::scratch_dir("repro_c");
    TrainOptions oc{c};
    oc.write_timestamps = false;
    train(other, small_data().train, small_data().val, oc);
    CHECK(slurp(a / "history.csv") != slurp(c / "history.csv"));
}

TEST_CASE("history layout") {
    const auto dir = testutil::scratch_dir("history");
    RunConfig cfg = small_run();
    cfg.train.epochs = 2;
    TrainOptions o{dir};
    const auto r = train(cfg, small_data().train, small_data().val, o);
    const std::string text = slurp(dir / "history.csv");
    CHECK(text.rfind(std::string(kHistoryHeader) + "\n1,2,", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
    REQUIRE(r.history.size() == 2);
    CHECK(r.history[1].step == 4);
    CHECK(r.history[1].timestamp.size() == 20);
}

TEST_CASE("checkpoint changes only when validation loss improves") {
    const auto dir = testutil::scratch_dir("best_only");
    RunConfig cfg = small_run();
    cfg.train.epochs = 6;
    // Inverted validation labels so that fitting the training set makes some epochs worse.
    std::vector<Scan> val = small_data().val;
    for (auto& s : val) {
        for (double& v : s.labels->values()) v = 1.0 - v;
    }
    TrainOptions o{dir};
    o.write_timestamps = false;
    std::string last;
    double best = INFINITY;
    std::size_t worse = 0, best_epoch = 0;
    o.on_epoch = [&](const HistoryRow& row, bool saved) {
        const std::string now = slurp(dir / "checkpoint.bin");
        if (row.val_loss < best) {
            CHECK(saved);
            CHECK(now != last);
            best = row.val_loss;
            best_epoch = row.epoch;
        } else {
            CHECK_FALSE(saved);
            CHECK(now == last);
            ++worse;
        }
        last = now;
    };
    const auto r = train(cfg, small_data().train, val, o);
    CHECK(worse > 0);
    const auto ck = load_checkpoint(dir / "checkpoint.bin");
    CHECK(ck.state.epoch == best_epoch);
    CHECK(ck.state.best_val_loss == best);
    CHECK(r.state.best_val_loss == best);
}

TEST_CASE("loss on a fixed batch falls within the first steps") {
    RunConfig cfg = small_run();
    SliceSequenceModel model(cfg.model);
    const auto& scans = small_data().train;
    std::vector<const Tensor*> imgs, labs;
    for (const auto& s : scans) {
        imgs.push_back(&s.images);
        labs.push_back(&*s.labels);
    }
    const SequenceBatch batch = make_sequence_batch(imgs, labs);
    auto params = model.parameters();
    Adam adam(params, 0.9, 0.999, 1e-8);
    double first = 0.0, best = INFINITY;
    for (int k = 0; k < 50; ++k) {
        model.zero_grad();
        const auto lg = metrics::weighted_bce_with_logits(model.forward_logits(batch, nn::Mode::kTrain), batch.labels,
                                                          batch.label_mask);
        if (k == 0) first = lg.loss;
        best = std::min(best, lg.loss);
        model.backward(lg.grad);
        adam.step(1e-3);
    }
    CHECK(best < first);
}

TEST_CASE("validation is deterministic and consistent with the metrics module") {
    RunConfig cfg = small_run();
    SliceSequenceModel model(cfg.model);
    const auto& val = small_data().val;
    const auto r1 = validate(model, val);
    const auto r2 = validate(model, val);
    CHECK(r1.to_json() == r2.to_json());

    const auto probs = predict_scans(model, val);
    std::size_t n = 0;
    for (const auto& p : probs) n += p.dim(0);
    Tensor all({n, kNumClasses}), y({n, kNumClasses});
    std::size_t row = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
        std::copy(probs[i].data(), probs[i].data() + probs[i].size(), all.data() + row * kNumClasses);
        std::copy(val[i].labels->data(), val[i].labels->data() + val[i].labels->size(), y.data() + row * kNumClasses);
        row += probs[i].dim(0);
    }
    CHECK(std::abs(metrics::weighted_log_loss(all, y) - r1.weighted_log_loss) <= 1e-10);
    CHECK(r1.n_slices == n);
    CHECK(r1.n_scans == val.size());
}

TEST_CASE("single-class findings report no auc") {
    RunConfig cfg = small_run();
    SliceSequenceModel model(cfg.model);
    std::vector<Scan> scans = small_data().val;
    for (auto& s : scans) s.labels->fill(0.0);
    (*scans[0].labels)[kAnyClass] = 1.0;
    const auto r = validate(model, scans);
    CHECK_FALSE(r.per_class_auc[0].has_value());
    CHECK(r.per_class_auc[kAnyClass].has_value());
    CHECK(std::isfinite(r.weighted_log_loss));
}

TEST_CASE("prediction files") {
    RunConfig cfg = small_run();
    SliceSequenceModel model(cfg.model);
    const auto& val = small_data().val;
    const auto probs = predict_scans(model, val);
    std::ostringstream slice_a, slice_b, scan;
    write_predictions(slice_a, val, probs, PredictLevel::kSlice);
    write_predictions(slice_b, val, predict_scans(model, val), PredictLevel::kSlice);
    CHECK(slice_a.str() == slice_b.str());
    std::size_t n = 0;
    for (const auto& s : val) n += s.slice_ids.size();
    const std::string st = slice_a.str();
    CHECK(static_cast<std::size_t>(std::count(st.begin(), st.end(), '\n')) == 1 + 6 * n);

    write_predictions(scan, val, probs, PredictLevel::kScan);
    const std::string sc = scan.str();
    CHECK(static_cast<std::size_t>(std::count(sc.begin(), sc.end(), '\n')) == 1 + val.size());
}

TEST_CASE("scan prediction takes the slice maximum") {
    Scan s;
    s.study_id = "st";
    s.slice_ids = {"a", "b"};
    Tensor p({2, 6}, 0.1);
    p[5] = 0.2;
    p[11] = 0.7;
    std::ostringstream out;
    write_predictions(out, {s}, {p}, PredictLevel::kScan);
    CHECK(out.str().find("st,0.1,0.1,0.1,0.1,0.1,0.7\n") != std::string::npos);
}

TEST_CASE("unlabelled data is rejected where labels are needed") {
    const auto dir = testutil::scratch_dir("unlabelled");
    synth::SynthConfig sc;
    sc.n_studies = 2;
    sc.slices_per_study = 2;
    sc.height = sc.width = 16;
    const auto out = synth::generate(sc, dir);
    auto rows = ingest::read_manifest_file(out.manifest);
    rows[0].labels.reset();
    CHECK_THROWS_AS(load_scans(rows, WindowTriple{}, 16, 16, true), DataError);
    const auto scans = load_scans(rows, WindowTriple{}, 16, 16, false);
    CHECK_FALSE(scans[0].labels.has_value());
    SliceSequenceModel model(small_run().model);
    CHECK_THROWS_AS(validate(model, scans), DataError);
}

TEST_CASE("warmup at or beyond the run length is a config error") {
    RunConfig cfg = small_run();
    cfg.train.warmup_steps = 100;
    CHECK_THROWS_AS(train(cfg, small_data().train, small_data().val, {}), ConfigError);
}

TEST_CASE("non-finite loss aborts with a diagnostic dump") {
    const auto dir = testutil::scratch_dir("nan");
    RunConfig cfg = small_run();
    std::vector<Scan> bad = small_data().train;
    bad[0].images[0] = NAN;
    for (auto& s : bad) s.images[0] = NAN;
    CHECK_THROWS_AS(train(cfg, bad, small_data().val, TrainOptions{dir}), NumericError);
    const std::string diag = slurp(dir / "diagnostic.json");
    CHECK(diag.find("\"lr\"") != std::string::npos);
    CHECK(diag.find("\"grad_norm\"") != std::string::npos);
    CHECK(diag.find("\"batch_study_ids\"") != std::string::npos);
}
