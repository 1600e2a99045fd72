#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "lsrs/harness.hpp"

using namespace lsrs;

namespace {

const char* kFullConfig = R"(# exercise every section
[model]
blocks = 2
ortho_blocks = 1
channels = 4
size = 4
group_size = 2
classes = 3
input_channels = 1
split_index = auto

[data]
source = blobs
n_per_class = 6
test_per_class = 3
spread = 0.05
seed = 9

[train]
epochs = 2
lr0 = 0.04
lr_decay = 0.5
lr_step = 10
momentum = 0.8
sigma = 0.1
noise_site = latent
batch_size = 8
seed = 3

[smooth]
mode = ls_rs
sigma = 0.3
n0 = 25
n = 200
alpha = 0.01
batch_size = 64
seed = 4

[run]
out_dir = harness_out
eval_count = 5
attack_points = 2
attack_restarts = 3
audit_pairs = 4
audit_points = 2
audit_iters = 12
bench_examples = 2
)";

std::string micro_run_config(const std::string& out_dir) {
    std::ostringstream os;
    os << "[model]\nblocks = 1\northo_blocks = 1\nchannels = 2\nsize = 4\ngroup_size = 2\n"
          "classes = 2\ninput_channels = 1\n"
       << "[data]\nsource = blobs\nn_per_class = 12\ntest_per_class = 4\nspread = 0.04\nseed = 6\n"
       << "[train]\nepochs = 3\nlr0 = 0.05\nsigma = 0.1\nnoise_site = latent\nbatch_size = 8\n"
          "seed = 2\n"
       << "[smooth]\nmode = ls_rs\nsigma = 0.2\nn0 = 20\nn = 150\nalpha = 0.01\nbatch_size = 64\n"
          "seed = 1\n"
       << "[run]\nout_dir = " << out_dir
       << "\neval_count = 4\nattack_points = 2\nattack_restarts = 2\naudit_pairs = 3\n"
          "audit_points = 2\naudit_iters = 10\nbench_examples = 1\n";
    return os.str();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(bool(is));
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::vector<CertRow> fixture_rows() {
    // 5 examples: three correct certificates, one abstention, one error.
    std::vector<CertRow> rows(5);
    rows[0] = {0, 1, 1, 0.50, 0.50, 0.95, 1, 0.010};
    rows[1] = {1, 0, 0, 0.30, 0.30, 0.88, 1, 0.011};
    rows[2] = {2, 2, 2, 0.15, 0.15, 0.71, 1, 0.012};
    rows[3] = {3, 1, kAbstain, 0.0, 0.0, 0.41, 0, 0.013};
    rows[4] = {4, 0, 2, 0.25, 0.25, 0.80, 0, 0.014};
    return rows;
}

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("config text parses into every field") {
        ExperimentConfig cfg = parse_config_text(kFullConfig);
        CHECK(cfg.model.blocks == 2);
        CHECK(cfg.model.ortho_blocks == 1);
        CHECK(cfg.model.channels == 4);
        CHECK(cfg.model.size == 4);
        CHECK(cfg.model.group_size == 2);
        CHECK(cfg.model.classes == 3);
        CHECK(cfg.model.input_channels == 1);
        CHECK(cfg.model.split_index == -1);
        CHECK(cfg.model.resolved_split() == 2);
        CHECK(cfg.data.source == "blobs");
        CHECK(cfg.data.n_per_class == 6);
        CHECK(cfg.data.test_per_class == 3);
        CHECK(cfg.data.spread == 0.05);
        CHECK(cfg.data.seed == 9);
        CHECK(cfg.train.epochs == 2);
        CHECK(cfg.train.lr0 == 0.04);
        CHECK(cfg.train.lr_decay == 0.5);
        CHECK(cfg.train.lr_step == 10);
        CHECK(cfg.train.momentum == 0.8);
        CHECK(cfg.train.sigma == 0.1);
        CHECK(cfg.train.noise_site == NoiseSite::latent);
        CHECK(cfg.train.batch_size == 8);
        CHECK(cfg.train.seed == 3);
        CHECK(cfg.mode == Mode::LS_RS);
        CHECK(cfg.smooth.sigma == 0.3);
        CHECK(cfg.smooth.n0 == 25);
        CHECK(cfg.smooth.n == 200);
        CHECK(cfg.smooth.alpha == 0.01);
        CHECK(cfg.smooth.batch_size == 64);
        CHECK(cfg.smooth.seed == 4);
        CHECK(cfg.run.out_dir == "harness_out");
        CHECK(cfg.run.eval_count == 5);
        CHECK(cfg.run.attack_points == 2);
        CHECK(cfg.run.attack_restarts == 3);
        CHECK(cfg.run.audit_pairs == 4);
        CHECK(cfg.run.audit_points == 2);
        CHECK(cfg.run.audit_iters == 12);
        CHECK(cfg.run.bench_examples == 2);
    }

    TEST_CASE("empty config text falls back to defaults") {
        ExperimentConfig cfg = parse_config_text("");
        CHECK(cfg.model.blocks == 8);
        CHECK(cfg.model.ortho_blocks == 8);
        CHECK(cfg.model.resolved_split() == 9);
        CHECK(cfg.mode == Mode::LS_RS);
    }

    TEST_CASE("config parse errors name the offender") {
        CHECK_THROWS_WITH_AS(parse_config_text("[nope]\n"), doctest::Contains("unknown section"),
                             std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("[model]\nwat = 3\n"),
                             doctest::Contains("unknown key 'wat' in [model]"),
                             std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("[model]\nblocks = many\n"),
                             doctest::Contains("bad integer"), std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("[train]\nlr0 = fast\n"),
                             doctest::Contains("bad number"), std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("[model]\nblocks\n"),
                             doctest::Contains("expected key = value"), std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("blocks = 2\n"),
                             doctest::Contains("before any [section]"), std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("[train]\nnoise_site = middle\n"),
                             doctest::Contains("input or latent"), std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_text("[smooth]\nmode = both\n"),
                             doctest::Contains("is_rs or ls_rs"), std::runtime_error);
        CHECK_THROWS_WITH_AS(parse_config_file("no_such_config.ini"),
                             doctest::Contains("cannot open"), std::runtime_error);
    }

    TEST_CASE("validation rejects inconsistent architectures") {
        ExperimentConfig cfg = parse_config_text(kFullConfig);

        ExperimentConfig bad = cfg;
        bad.model.ortho_blocks = 3;  // > blocks
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("exceeds blocks"),
                             std::runtime_error);

        bad = cfg;
        bad.model.ortho_blocks = 2;
        bad.model.split_index = 2;  // block 2 sits at layer 2 >= split
        CHECK_THROWS_WITH_AS(bad.validate(),
                             doctest::Contains("orthogonal block 2 (layer 2) lies outside"),
                             std::runtime_error);

        bad = cfg;
        bad.model.split_index = 0;  // every orthogonal block outside
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("orthogonal block 1"),
                             std::runtime_error);

        bad = cfg;
        bad.model.split_index = 3;  // plain residual block inside the encoder
        CHECK_THROWS_WITH_AS(bad.validate(),
                             doctest::Contains("block 2 (plain residual) has no Lipschitz bound"),
                             std::runtime_error);

        bad = cfg;
        bad.model.ortho_blocks = 2;
        bad.model.split_index = 4;  // dense head inside the encoder
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("dense head"),
                             std::runtime_error);

        bad = cfg;
        bad.model.group_size = 3;  // does not divide 4*4*4
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("group_size"),
                             std::runtime_error);

        bad = cfg;
        bad.model.split_index = 99;
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("exceeds the layer count"),
                             std::runtime_error);

        bad = cfg;
        bad.data.source = "csv";
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("unknown data source"),
                             std::runtime_error);

        bad = cfg;
        bad.data.source = "idx";
        CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("idx source needs"),
                             std::runtime_error);

        // input-space mode tolerates an unbounded encoder configuration
        ExperimentConfig is_cfg = cfg;
        is_cfg.mode = Mode::IS_RS;
        is_cfg.model.ortho_blocks = 0;
        is_cfg.model.split_index = 0;
        is_cfg.validate();
    }

    TEST_CASE("build_model realizes its ModelSpec") {
        ExperimentConfig cfg = parse_config_text(kFullConfig);
        SplitNetwork net = build_model(cfg.model);
        CHECK(net.layer_count() == 2 + 4);
        CHECK(net.layer(0).kind() == "channel_lift");
        CHECK(net.layer(1).kind() == "residual");
        CHECK(net.layer(2).kind() == "residual");
        CHECK(net.layer(3).kind() == "dense");
        CHECK(net.layer(4).kind() == "relu");
        CHECK(net.layer(5).kind() == "dense");
        CHECK(net.split_index() == 2);
        CHECK(net.block_fraction() == std::pair<std::size_t, std::size_t>{1, 2});
        CHECK(net.input_shape() == Shape3{1, 4, 4});
        CHECK(net.latent_shape() == Shape3{4, 4, 4});
        CHECK(net.n_classes() == 3);
        CHECK(net.encoder_lipschitz_bound() == 1.0);

        // full-orthogonal variant is bounded through the whole stack
        ModelSpec full = cfg.model;
        full.ortho_blocks = 2;
        SplitNetwork net2 = build_model(full);
        CHECK(net2.split_index() == 3);
        CHECK(net2.encoder_lipschitz_bound() == 1.0);
    }

    TEST_CASE("blob datasets split one pool with shared centers") {
        ExperimentConfig cfg = parse_config_text(kFullConfig);
        auto [tr, te] = build_datasets(cfg);
        CHECK(tr.size() == 18);
        CHECK(te.size() == 9);
        CHECK(tr.split == "train");
        CHECK(te.split == "test");
        CHECK(tr.n_classes == 3);
        tr.validate();
        te.validate();

        auto [tr2, te2] = build_datasets(cfg);
        bool same = tr2.labels == tr.labels && te2.labels == te.labels;
        for (std::size_t k = 0; same && k < tr.inputs.numel(); ++k)
            if (tr.inputs.flat()[k] != tr2.inputs.flat()[k]) same = false;
        CHECK(same);
    }

    TEST_CASE("summary statistics from a hand-checked fixture") {
        std::vector<CertRow> rows = fixture_rows();
        EvalSummary s = summarize(rows);
        CHECK(s.acr == doctest::Approx((0.50 + 0.30 + 0.15) / 5.0).epsilon(1e-15));
        CHECK(s.abstain_rate == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(s.mean_time_s == doctest::Approx(0.012).epsilon(1e-12));
        REQUIRE(s.certified_accuracy.size() == 16);
        CHECK(s.certified_accuracy[0].first == 0.0);
        // at 0+: 1 - abstain_rate - error_rate = 1 - 0.2 - 0.2
        CHECK(s.certified_accuracy[0].second == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(s.certified_accuracy[2].second == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(s.certified_accuracy[5].second == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(s.certified_accuracy[6].second == doctest::Approx(0.0).epsilon(1e-15));
        for (std::size_t k = 1; k < s.certified_accuracy.size(); ++k) {
            CHECK(s.certified_accuracy[k].second <= s.certified_accuracy[k - 1].second);
        }

        std::vector<CertRow> abstains(3);
        for (std::size_t i = 0; i < 3; ++i)
            abstains[i] = {i, 0, kAbstain, 0.0, 0.0, 0.3, 0, 0.01};
        EvalSummary sa = summarize(abstains);
        CHECK(sa.acr == 0.0);
        CHECK(sa.abstain_rate == 1.0);
        CHECK(sa.certified_accuracy[0].second == 0.0);
    }

    TEST_CASE("cert csv round trip is exact") {
        const std::string path = "cert_rt.csv";
        std::vector<CertRow> rows = fixture_rows();
        rows[1].radius_latent = 0.30000000000000004;  // force a 17-digit value
        rows[1].radius_input = rows[1].radius_latent;
        write_cert_csv(path, rows);

        std::ifstream is(path);
        std::string header;
        std::getline(is, header);
        CHECK(header == "idx, label, predict, radius_latent, radius_input, p_lower, correct, time_s");
        is.close();

        std::vector<CertRow> back = read_cert_csv(path);
        REQUIRE(back.size() == rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(back[i].idx == rows[i].idx);
            CHECK(back[i].label == rows[i].label);
            CHECK(back[i].predict == rows[i].predict);
            CHECK(back[i].radius_latent == rows[i].radius_latent);
            CHECK(back[i].radius_input == rows[i].radius_input);
            CHECK(back[i].p_lower == rows[i].p_lower);
            CHECK(back[i].correct == rows[i].correct);
            CHECK(back[i].time_s == rows[i].time_s);
        }
        // recomputing the summary from the parsed rows is bitwise identical
        EvalSummary a = summarize(rows);
        EvalSummary b = summarize(back);
        CHECK(a.acr == b.acr);
        CHECK(a.mean_time_s == b.mean_time_s);
        CHECK(a.abstain_rate == b.abstain_rate);
        for (std::size_t k = 0; k < a.certified_accuracy.size(); ++k)
            CHECK(a.certified_accuracy[k].second == b.certified_accuracy[k].second);

        std::remove(path.c_str());
        CHECK_THROWS_WITH_AS(read_cert_csv(path), doctest::Contains("cannot open"),
                             std::runtime_error);

        std::ofstream bad(path);
        bad << "not, the, header\n";
        bad.close();
        CHECK_THROWS_WITH_AS(read_cert_csv(path), doctest::Contains("unexpected header"),
                             std::runtime_error);
        std::remove(path.c_str());
    }

    TEST_CASE("row comparison ignores only the timing column") {
        std::vector<CertRow> a = fixture_rows();
        std::vector<CertRow> b = fixture_rows();
        for (auto& r : b) r.time_s *= 10.0;
        CHECK(rows_equal_ignoring_time(a, b));
        b[2].radius_input += 1e-16;
        CHECK_FALSE(rows_equal_ignoring_time(a, b));
        b = fixture_rows();
        b.pop_back();
        CHECK_FALSE(rows_equal_ignoring_time(a, b));
    }

    TEST_CASE("default split sweep covers quarter fractions") {
        CHECK(default_split_sweep(8) == std::vector<std::size_t>{0, 3, 5, 7, 9});
        CHECK(default_split_sweep(4) == std::vector<std::size_t>{0, 2, 3, 4, 5});
        CHECK(default_split_sweep(2) == std::vector<std::size_t>{0, 2, 3});
        CHECK(default_split_sweep(0) == std::vector<std::size_t>{0});
    }

    TEST_CASE("evaluate produces consistent rows and summary") {
        ExperimentConfig cfg = parse_config_text(kFullConfig);
        auto [tr, te] = build_datasets(cfg);
        SplitNetwork net = build_model(cfg.model);
        Rng rng(1, 0);
        net.init_params(rng);

        std::vector<CertRow> rows;
        EvalSummary s = evaluate(net, te, cfg.mode, cfg.smooth, 5, &rows);
        REQUIRE(rows.size() == 5);
        std::size_t abstained = 0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            CHECK(rows[i].idx == i);
            CHECK(rows[i].label == te.labels[i]);
            if (rows[i].predict == kAbstain) {
                ++abstained;
                CHECK(rows[i].radius_input == 0.0);
                CHECK(rows[i].correct == 0);
            }
            CHECK(rows[i].radius_latent == rows[i].radius_input);  // L = 1
        }
        CHECK(s.abstain_rate ==
              static_cast<double>(abstained) / static_cast<double>(rows.size()));
        CHECK(s.clean_accuracy >= 0.0);
        CHECK(s.clean_accuracy <= 1.0);
        EvalSummary again = summarize(rows);
        CHECK(again.acr == s.acr);

        // per-example results do not depend on how many neighbors ran
        std::vector<CertRow> prefix;
        evaluate(net, te, cfg.mode, cfg.smooth, 2, &prefix);
        CHECK(prefix[0].p_lower == rows[0].p_lower);
        CHECK(prefix[1].p_lower == rows[1].p_lower);
    }

    TEST_CASE("bench sweeps splits with the knobs pinned") {
        ExperimentConfig cfg = parse_config_text(kFullConfig);
        cfg.model.ortho_blocks = 2;
        auto [tr, te] = build_datasets(cfg);
        SplitNetwork net = build_model(cfg.model);
        Rng rng(1, 0);
        net.init_params(rng);
        REQUIRE(net.split_index() == 3);

        const std::vector<std::size_t> splits = {0, 2, 3};
        BenchReport report = bench_modes(net, te, cfg.smooth, splits, 2);
        CHECK(net.split_index() == 3);  // restored
        CHECK(report.n_examples == 2);
        CHECK(report.baseline_time_s > 0.0);
        REQUIRE(report.rows.size() == 3);
        CHECK(report.rows[0].split == 0);
        CHECK(report.rows[0].latent_dim == 16);
        CHECK(report.rows[1].latent_dim == 64);
        CHECK(report.rows[2].latent_dim == 64);
        for (const BenchRow& r : report.rows) {
            CHECK(r.mean_time_s > 0.0);
            CHECK(r.speedup_vs_baseline ==
                  doctest::Approx(report.baseline_time_s / r.mean_time_s).epsilon(1e-12));
            CHECK(r.n0 == cfg.smooth.n0);
            CHECK(r.n == cfg.smooth.n);
            CHECK(r.sigma == cfg.smooth.sigma);
            CHECK(r.alpha == cfg.smooth.alpha);
            CHECK(r.workers == 1);
        }
        const std::string text = bench_text(report);
        CHECK(text.find("held fixed") != std::string::npos);
        CHECK(text.find("workers=1") != std::string::npos);

        CHECK_THROWS_AS(bench_modes(net, te, cfg.smooth, std::vector<std::size_t>{}, 2),
                        std::invalid_argument);
    }

    TEST_CASE("run pipeline writes every artifact and reruns identically") {
        namespace fs = std::filesystem;
        const std::string dir = "pipe_out";
        fs::remove_all(dir);
        ExperimentConfig cfg = parse_config_text(micro_run_config(dir));

        RunArtifacts art = run_pipeline(cfg);
        CHECK(art.training.final_train_accuracy > 0.5);
        CHECK(art.audit.passes());
        CHECK(art.rows.size() == 4);
        CHECK(art.attacked_points <= 2);
        CHECK(art.audit.attack_violations == 0);
        for (const char* name :
             {"status.txt", "history.csv", "checkpoint.bin", "audit.txt", "certs.csv",
              "summary.txt"}) {
            CHECK(fs::exists(fs::path(dir) / name));
        }
        CHECK(slurp(dir + "/status.txt").find("complete") != std::string::npos);
        const std::vector<CertRow> first = read_cert_csv(dir + "/certs.csv");
        const std::string checkpoint1 = slurp(dir + "/checkpoint.bin");

        RunArtifacts art2 = run_pipeline(cfg);
        const std::vector<CertRow> second = read_cert_csv(dir + "/certs.csv");
        CHECK(rows_equal_ignoring_time(first, second));
        CHECK(slurp(dir + "/checkpoint.bin") == checkpoint1);
        fs::remove_all(dir);
    }

    TEST_CASE("run pipeline failure is stage-tagged and flagged in status") {
        namespace fs = std::filesystem;
        const std::string dir = "pipe_fail";
        fs::remove_all(dir);
        ExperimentConfig cfg = parse_config_text(micro_run_config(dir));
        cfg.data.source = "idx";
        cfg.data.images = "missing.idx";
        cfg.data.labels = "missing.idx";
        cfg.data.test_images = "missing.idx";
        cfg.data.test_labels = "missing.idx";
        CHECK_THROWS_WITH_AS(run_pipeline(cfg), doctest::Contains("stage data"),
                             std::runtime_error);
        CHECK(slurp(dir + "/status.txt").find("failed at stage data") != std::string::npos);
        fs::remove_all(dir);
    }
}
