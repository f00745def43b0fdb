#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "helpers.hpp"
#include "ichseq/app.hpp"
#include "ichseq/csv.hpp"
#include "ichseq/ingest.hpp"

using namespace ichseq;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

void write_config(const fs::path& path, const fs::path& data) {
    std::ofstream(path) << "[run]\nname = cli\n[data]\ntrain_manifest = " << (data / "train.csv").string()
                        << "\nval_manifest = " << (data / "val.csv").string()
                        << "\n[model]\nbackbone = tiny_cnn\nfeature_dim = 8\nlstm_hidden = 4\nlstm_layers = 1\n"
                           "input_height = 16\ninput_width = 16\ntiny_channels = 4\n[train]\nepochs = 2\n";
}

}  // namespace

TEST_CASE("synth writes a labelled dataset") {
    const auto dir = testutil::scratch_dir("cli_synth");
    const Run r = cli({"--seed", "7", "--out", (dir / "a").string(), "synth"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("160 slices") != std::string::npos);
    CHECK(lines(r.out) == 1);

    const auto rows = ingest::read_manifest_file(dir / "a" / "manifest.csv");
    CHECK(rows.size() == 160);
    std::size_t positive = 0;
    for (const auto& row : rows) {
        REQUIRE(row.labels);
        const auto& y = *row.labels;
        const bool any_sub = y[0] || y[1] || y[2] || y[3] || y[4];
        CHECK(y[kAnyClass] == (any_sub ? 1 : 0));
        positive += y[kAnyClass];
    }
    CHECK(positive > 0);
    CHECK(positive < rows.size());

    REQUIRE(cli({"--seed", "7", "--out", (dir / "b").string(), "synth"}).code == 0);
    for (const char* f : {"manifest.csv", "train.csv", "val.csv", "labels.csv"}) {
        CHECK_MESSAGE(slurp(dir / "a" / f) == slurp(dir / "b" / f), f);
    }
    for (const auto& e : fs::recursive_directory_iterator(dir / "a" / "raw")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), dir / "a");
        CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
    }
    REQUIRE(cli({"--seed", "8", "--out", (dir / "c").string(), "synth"}).code == 0);
    CHECK(slurp(dir / "a" / "labels.csv") != slurp(dir / "c" / "labels.csv"));
}

TEST_CASE("synth rejects sizes of zero") {
    const auto dir = testutil::scratch_dir("cli_synth_zero");
    const Run r = cli({"--out", dir.string(), "synth", "--n-studies", "0"});
    CHECK(r.code == 2);
    CHECK(nlohmann::json::parse(r.err)["error"] == "config");
}

TEST_CASE("ingest of a missing root names the path") {
    const Run r = cli({"--out", "/tmp/ichseq_never/m.csv", "ingest", "--root", "/nonexistent/ct_root"});
    CHECK(r.code == 3);
    const auto j = nlohmann::json::parse(r.err);
    CHECK(j["path"] == "/nonexistent/ct_root");
    CHECK(j["exit_code"] == 3);
}

TEST_CASE("ingest with partial corruption succeeds and reports exclusions") {
    const auto dir = testutil::scratch_dir("cli_ingest");
    REQUIRE(cli({"--out", (dir / "d").string(), "synth", "--n-studies", "3", "--slices", "2", "--size", "16"}).code == 0);
    fs::path victim;
    for (const auto& e : fs::recursive_directory_iterator(dir / "d" / "raw")) {
        if (e.path().extension() == ".hu16") victim = e.path();
    }
    std::ofstream(victim, std::ios::binary | std::ios::trunc) << "xx";
    const auto manifest = dir / "m" / "manifest.csv";
    const Run r = cli({"--out", manifest.string(), "ingest", "--root", (dir / "d" / "raw").string(), "--labels",
                       (dir / "d" / "labels.csv").string()});
    REQUIRE(r.code == 0);
    CHECK(ingest::read_manifest_file(manifest).size() == 5);
    const auto report = nlohmann::json::parse(slurp(fs::path(manifest).concat(".exclusions.json")));
    CHECK_FALSE(report["excluded"].empty());
}

TEST_CASE("usage and config errors exit with code 2") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"bogus"}).code == 2);
    const Run no_config = cli({"train"});
    CHECK(no_config.code == 2);
    CHECK(nlohmann::json::parse(no_config.err)["error"] == "config");

    const auto dir = testutil::scratch_dir("cli_bad_config");
    std::ofstream(dir / "bad.conf") << "[model]\nfeature_dim = 8\nwidth_mult = 2\n";
    const Run bad = cli({"--config", (dir / "bad.conf").string(), "train"});
    CHECK(bad.code == 2);
    const std::string msg = nlohmann::json::parse(bad.err)["message"];
    CHECK(msg.find("model.width_mult") != std::string::npos);
    CHECK(msg.find("bad.conf:3") != std::string::npos);

    std::ofstream(dir / "ok.conf") << "[train]\nepochs = 1\n";
    const Run over = cli({"--config", (dir / "ok.conf").string(), "--set", "train.epochz=3", "train"});
    CHECK(over.code == 2);
    CHECK(cli({"--config", (dir / "ok.conf").string(), "--out", dir.string(), "synth"}).code == 2);
}

TEST_CASE("train, validate and predict on synthetic data") {
    const auto dir = testutil::scratch_dir("cli_pipeline");
    const auto data = dir / "data";
    REQUIRE(cli({"--seed", "2", "--out", data.string(), "synth", "--n-studies", "5", "--slices", "3", "--size", "16",
                 "--val-fraction", "0.4"})
                .code == 0);
    write_config(dir / "run.conf", data);

    const auto runs = dir / "runs";
    const Run t = cli({"--config", (dir / "run.conf").string(), "--seed", "3", "--out", runs.string(), "train"});
    REQUIRE_MESSAGE(t.code == 0, t.err);
    CHECK(lines(t.out) == 1);
    const auto run = runs / "cli";
    for (const char* f : {"config.resolved", "checkpoint.bin", "history.csv", "report.json"}) {
        CHECK_MESSAGE(fs::exists(run / f), f);
    }
    CHECK(slurp(run / "config.resolved").find("seed = 3") != std::string::npos);
    CHECK(lines(slurp(run / "history.csv")) == 3);

    const Run v = cli({"validate", "--checkpoint", (run / "checkpoint.bin").string(), "--manifest",
                       (data / "val.csv").string()});
    REQUIRE_MESSAGE(v.code == 0, v.err);
    const auto report = nlohmann::json::parse(slurp(run / "report.json"));
    CHECK(report.contains("weighted_log_loss"));

    const Run p = cli({"predict", "--checkpoint", (run / "checkpoint.bin").string(), "--manifest",
                       (data / "manifest.csv").string(), "--level", "scan"});
    REQUIRE_MESSAGE(p.code == 0, p.err);
    const std::string scan_csv = slurp(run / "predictions" / "manifest_scan.csv");
    CHECK(lines(scan_csv) == 1 + 5);

    REQUIRE(cli({"predict", "--checkpoint", (run / "checkpoint.bin").string(), "--manifest",
                 (data / "manifest.csv").string()})
                .code == 0);
    const std::string slice_csv = slurp(run / "predictions" / "manifest_slice.csv");
    CHECK(lines(slice_csv) == 1 + 6 * 15);
    REQUIRE(cli({"predict", "--checkpoint", (run / "checkpoint.bin").string(), "--manifest",
                 (data / "manifest.csv").string()})
                .code == 0);
    CHECK(slurp(run / "predictions" / "manifest_slice.csv") == slice_csv);

    // Re-running training reproduces every artifact except history timestamps.
    const auto runs2 = dir / "runs2";
    REQUIRE(cli({"--config", (dir / "run.conf").string(), "--seed", "3", "--out", runs2.string(), "train"}).code == 0);
    CHECK(slurp(runs2 / "cli" / "checkpoint.bin") == slurp(run / "checkpoint.bin"));
    CHECK(slurp(runs2 / "cli" / "config.resolved") == slurp(run / "config.resolved"));
    auto strip = [](const std::string& text) {
        std::string outp;
        std::istringstream in(text);
        for (std::string line; std::getline(in, line);) outp += line.substr(0, line.rfind(',')) + "\n";
        return outp;
    };
    CHECK(strip(slurp(runs2 / "cli" / "history.csv")) == strip(slurp(run / "history.csv")));
}

TEST_CASE("validate on an unlabelled manifest fails with a data error") {
    const auto dir = testutil::scratch_dir("cli_unlabelled");
    const auto data = dir / "data";
    REQUIRE(cli({"--out", data.string(), "synth", "--n-studies", "3", "--slices", "2", "--size", "16"}).code == 0);
    write_config(dir / "run.conf", data);
    REQUIRE(cli({"--config", (dir / "run.conf").string(), "--set", "train.epochs=2", "--out", (dir / "runs").string(),
                 "train"})
                .code == 0);
    const auto bare = dir / "bare";
    REQUIRE(cli({"--out", (bare / "m.csv").string(), "ingest", "--root", (data / "raw").string()}).code == 0);
    const std::string manifest_before = slurp(bare / "m.csv");
    const Run r = cli({"validate", "--checkpoint", (dir / "runs" / "cli" / "checkpoint.bin").string(), "--manifest",
                       (bare / "m.csv").string()});
    CHECK(r.code == 3);
    CHECK(std::string(nlohmann::json::parse(r.err)["message"]).find("unlabelled") != std::string::npos);
    CHECK(slurp(bare / "m.csv") == manifest_before);

    const Run p = cli({"predict", "--checkpoint", (dir / "runs" / "cli" / "checkpoint.bin").string(), "--manifest",
                       (bare / "m.csv").string(), "--level", "scan"});
    CHECK(p.code == 0);
}

TEST_CASE("checkpoint commands refuse config flags") {
    const Run r = cli({"--set", "train.epochs=2", "predict", "--checkpoint", "x.bin", "--manifest", "m.csv"});
    CHECK(r.code == 2);
}
