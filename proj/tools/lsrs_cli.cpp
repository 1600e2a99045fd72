#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lsrs/harness.hpp"

namespace {

namespace fs = std::filesystem;

struct Overrides {
    std::optional<double> sigma;
    std::optional<std::string> mode;
    std::optional<long> split;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n;
    std::optional<double> alpha;
    std::optional<std::string> out;
};

lsrs::ExperimentConfig load_config(const std::string& path, const Overrides& o) {
    lsrs::ExperimentConfig cfg = lsrs::parse_config_file(path);
    if (o.sigma) {
        cfg.smooth.sigma = *o.sigma;
        cfg.train.sigma = *o.sigma;
    }
    if (o.mode) {
        if (*o.mode == "is_rs") cfg.mode = lsrs::Mode::IS_RS;
        else if (*o.mode == "ls_rs") cfg.mode = lsrs::Mode::LS_RS;
        else throw std::runtime_error("--mode must be is_rs or ls_rs, got '" + *o.mode + "'");
    }
    if (o.split) cfg.model.split_index = *o.split;
    if (o.seed) {
        cfg.train.seed = *o.seed;
        cfg.smooth.seed = *o.seed;
    }
    if (o.n) cfg.smooth.n = *o.n;
    if (o.alpha) cfg.smooth.alpha = *o.alpha;
    if (o.out) cfg.run.out_dir = *o.out;
    cfg.validate();
    return cfg;
}

std::string checkpoint_path(const lsrs::ExperimentConfig& cfg) {
    return (fs::path(cfg.run.out_dir) / "checkpoint.bin").string();
}

lsrs::SplitNetwork load_checkpoint(const lsrs::ExperimentConfig& cfg, const Overrides& o) {
    const std::string path = checkpoint_path(cfg);
    if (!fs::exists(path))
        throw std::runtime_error("no checkpoint at " + path + " (train first)");
    lsrs::SplitNetwork net = lsrs::SplitNetwork::load_file(path);
    if (o.split && *o.split >= 0) net.set_split_index(static_cast<std::size_t>(*o.split));
    return net;
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream os(path, std::ios::binary);
    os << body;
    if (!os) throw std::runtime_error("cannot write " + path);
}

int cmd_train(const lsrs::ExperimentConfig& cfg, std::string& stage) {
    stage = "data";
    auto [train_set, test_set] = lsrs::build_datasets(cfg);
    stage = "model";
    lsrs::SplitNetwork net = lsrs::build_model(cfg.model);
    lsrs::Rng rng(cfg.train.seed, 0);
    net.init_params(rng);
    stage = "train";
    lsrs::TrainResult result = lsrs::train(net, train_set, cfg.train);
    fs::create_directories(cfg.run.out_dir);
    lsrs::write_history_csv((fs::path(cfg.run.out_dir) / "history.csv").string(), result.history);
    net.save_file(checkpoint_path(cfg));
    std::cout << "trained " << result.history.size() << " steps\n"
              << "final train accuracy: " << result.final_train_accuracy << "\n"
              << "test accuracy:        " << lsrs::clean_accuracy(net, test_set) << "\n"
              << "checkpoint: " << checkpoint_path(cfg) << "\n";
    return 0;
}

int cmd_certify(const lsrs::ExperimentConfig& cfg, const Overrides& o, std::size_t index,
                std::string& stage) {
    stage = "data";
    auto [train_set, test_set] = lsrs::build_datasets(cfg);
    if (index >= test_set.size())
        throw std::runtime_error("example index " + std::to_string(index) +
                                 " out of range (test set has " +
                                 std::to_string(test_set.size()) + ")");
    stage = "model";
    lsrs::SplitNetwork net = load_checkpoint(cfg, o);
    stage = "certify";
    lsrs::Tensor4 x = lsrs::single_example(test_set.inputs, index);
    lsrs::CertResult c = lsrs::certify(net, x, cfg.mode, cfg.smooth, index);
    std::cout << "example " << index << " (label " << test_set.labels[index] << ")\n";
    if (c.predicted == lsrs::kAbstain) std::cout << "  predicted:     ABSTAIN\n";
    else std::cout << "  predicted:     " << c.predicted << "\n";
    std::cout << "  p_lower:       " << c.p_lower << "\n"
              << "  radius_latent: " << c.radius_latent << "\n"
              << "  radius_input:  " << c.radius_input << "\n"
              << "  lipschitz:     " << c.lipschitz_used << "\n"
              << "  time:          " << c.elapsed_s << " s\n";
    return 0;
}

int cmd_evaluate(const lsrs::ExperimentConfig& cfg, const Overrides& o, std::string& stage) {
    stage = "data";
    auto [train_set, test_set] = lsrs::build_datasets(cfg);
    stage = "model";
    lsrs::SplitNetwork net = load_checkpoint(cfg, o);
    stage = "evaluate";
    std::vector<lsrs::CertRow> rows;
    lsrs::EvalSummary summary =
        lsrs::evaluate(net, test_set, cfg.mode, cfg.smooth, cfg.run.eval_count, &rows);
    lsrs::write_cert_csv((fs::path(cfg.run.out_dir) / "certs.csv").string(), rows);
    const std::string text = lsrs::summary_text(summary);
    write_text_file((fs::path(cfg.run.out_dir) / "summary.txt").string(), text);
    std::cout << text;
    return 0;
}

int cmd_audit(const lsrs::ExperimentConfig& cfg, const Overrides& o, std::string& stage) {
    stage = "model";
    lsrs::SplitNetwork net = load_checkpoint(cfg, o);
    stage = "audit";
    lsrs::AuditReport report = lsrs::audit_encoder(net, cfg.run.audit_pairs, cfg.run.audit_points,
                                                   cfg.run.audit_iters, cfg.smooth.seed);
    const std::string text = report.text();
    write_text_file((fs::path(cfg.run.out_dir) / "audit.txt").string(), text);
    std::cout << text;
    return report.passes() ? 0 : 1;
}

int cmd_bench(const lsrs::ExperimentConfig& cfg, const Overrides& o, std::string& stage) {
    stage = "data";
    auto [train_set, test_set] = lsrs::build_datasets(cfg);
    stage = "model";
    lsrs::SplitNetwork net = load_checkpoint(cfg, o);
    stage = "bench";
    std::vector<std::size_t> sweep = lsrs::default_split_sweep(cfg.model.ortho_blocks);
    lsrs::BenchReport report =
        lsrs::bench_modes(net, test_set, cfg.smooth, sweep, cfg.run.bench_examples);
    const std::string text = lsrs::bench_text(report);
    write_text_file((fs::path(cfg.run.out_dir) / "bench.txt").string(), text);
    std::cout << text;
    return 0;
}

int cmd_run(const lsrs::ExperimentConfig& cfg) {
    lsrs::RunArtifacts art = lsrs::run_pipeline(cfg);
    std::cout << lsrs::summary_text(art.summary);
    if (art.attacked_points > 0)
        std::cout << "ball attack: " << art.audit.attack_violations << " flips over "
                  << art.attacked_points << " certified points\n";
    std::cout << "artifacts in " << art.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Certified robustness via randomized smoothing on split networks"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides o;
    std::size_t index = 0;
    app.add_option("-c,--config", config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    app.add_option("--sigma", o.sigma, "override noise level (training and smoothing)");
    app.add_option("--mode", o.mode, "override smoothing mode: is_rs or ls_rs");
    app.add_option("--split", o.split, "override encoder/classifier split index (-1 = auto)");
    app.add_option("--seed", o.seed, "override training and smoothing seeds");
    app.add_option("--n", o.n, "override estimation-round sample count");
    app.add_option("--alpha", o.alpha, "override certification failure probability");
    app.add_option("--out", o.out, "override output directory");

    CLI::App* c_train = app.add_subcommand("train", "train a model and save the checkpoint");
    CLI::App* c_cert = app.add_subcommand("certify", "certify one test example");
    c_cert->add_option("--index", index, "test example index");
    CLI::App* c_eval = app.add_subcommand("evaluate", "certify the test set and summarize");
    CLI::App* c_audit = app.add_subcommand("audit", "cross-check the encoder Lipschitz bound");
    CLI::App* c_bench = app.add_subcommand("bench", "time certification across split depths");
    CLI::App* c_run = app.add_subcommand("run", "full pipeline: train, audit, evaluate, report");
    for (CLI::App* sub : {c_train, c_cert, c_eval, c_audit, c_bench, c_run}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    std::string stage = "config";
    try {
        lsrs::ExperimentConfig cfg = load_config(config_path, o);
        if (c_train->parsed()) return cmd_train(cfg, stage);
        if (c_cert->parsed()) return cmd_certify(cfg, o, index, stage);
        if (c_eval->parsed()) return cmd_evaluate(cfg, o, stage);
        if (c_audit->parsed()) return cmd_audit(cfg, o, stage);
        if (c_bench->parsed()) return cmd_bench(cfg, o, stage);
        if (c_run->parsed()) return cmd_run(cfg);  // stages tagged inside
    } catch (const std::exception& e) {
        const std::string what = e.what();
        if (what.rfind("stage ", 0) == 0 || what.rfind("config", 0) == 0)
            std::cerr << "error: " << what << "\n";
        else
            std::cerr << "error: stage " << stage << ": " << what << "\n";
        return 1;
    }
    return 0;
}
