#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lsrs/audit.hpp"
#include "lsrs/dataset.hpp"
#include "lsrs/network.hpp"
#include "lsrs/smoothing.hpp"
#include "lsrs/train.hpp"

namespace lsrs {

// Reference architecture knobs: a channel lift, `ortho_blocks` convex
// orthogonal residual blocks followed by plain residual blocks up to
// `blocks`, then a dense head. The encoder/classifier split defaults to the
// boundary after the last orthogonal block.
struct ModelSpec {
    std::size_t blocks = 8;
    std::size_t ortho_blocks = 8;
    std::size_t channels = 8;
    std::size_t size = 8;
    std::size_t group_size = 2;
    std::size_t classes = 4;
    std::size_t input_channels = 1;
    long split_index = -1;  // -1: derive from ortho_blocks

    std::size_t resolved_split() const;
};

struct DataSpec {
    std::string source = "blobs";  // blobs | idx
    std::size_t n_per_class = 64;
    std::size_t test_per_class = 16;
    double spread = 0.08;
    std::uint64_t seed = 5;
    std::string images, labels;            // idx train pair
    std::string test_images, test_labels;  // idx test pair
};

struct RunSpec {
    std::string out_dir = "out";
    std::size_t eval_count = 0;  // 0: whole test set
    std::size_t attack_points = 0;
    std::size_t attack_restarts = 5;
    std::size_t audit_pairs = 50;
    std::size_t audit_points = 10;
    std::size_t audit_iters = 50;
    std::size_t bench_examples = 3;
};

struct ExperimentConfig {
    ModelSpec model;
    DataSpec data;
    TrainConfig train;
    SmoothingConfig smooth;
    Mode mode = Mode::LS_RS;
    RunSpec run;

    void validate() const;
};

// Plain-text config: [section] headers over key = value lines, '#' comments.
// Unknown sections or keys are errors that name the offender.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Builds the network a ModelSpec describes (uninitialized weights).
SplitNetwork build_model(const ModelSpec& spec);

// Train/test datasets from one config; blobs share cluster centers across
// the two splits.
std::pair<Dataset, Dataset> build_datasets(const ExperimentConfig& cfg);

// One certification CSV row.
struct CertRow {
    std::size_t idx = 0;
    std::size_t label = 0;
    int predict = kAbstain;
    double radius_latent = 0.0;
    double radius_input = 0.0;
    double p_lower = 0.0;
    int correct = 0;
    double time_s = 0.0;
};

struct EvalSummary {
    double acr = 0.0;
    // threshold -> fraction certified-correct at radius >= threshold;
    // non-increasing in the threshold.
    std::vector<std::pair<double, double>> certified_accuracy;
    double clean_accuracy = 0.0;
    double mean_time_s = 0.0;
    double abstain_rate = 0.0;
};

// Certifies the first `count` test examples (0 = all) and reports rows in
// index order.
std::vector<CertRow> certify_rows(const SplitNetwork& net, const Dataset& test, Mode mode,
                                  const SmoothingConfig& cfg, std::size_t count = 0);
// Pure aggregation of rows; fills every field except clean_accuracy.
EvalSummary summarize(const std::vector<CertRow>& rows);
// summarize + clean accuracy; optionally hands back the per-example rows.
EvalSummary evaluate(const SplitNetwork& net, const Dataset& test, Mode mode,
                     const SmoothingConfig& cfg, std::size_t count = 0,
                     std::vector<CertRow>* rows_out = nullptr);

void write_cert_csv(const std::string& path, const std::vector<CertRow>& rows);
std::vector<CertRow> read_cert_csv(const std::string& path);
// Row-for-row equality on everything but the wall-time column.
bool rows_equal_ignoring_time(const std::vector<CertRow>& a, const std::vector<CertRow>& b);

std::string summary_text(const EvalSummary& s);

// One line of the split-depth timing sweep. The knobs that must stay fixed
// across a sweep (sample counts, sigma, alpha, worker count) are recorded so
// the report asserts the comparison is fair.
struct BenchRow {
    std::size_t split = 0;
    std::size_t latent_dim = 0;
    double mean_time_s = 0.0;
    double speedup_vs_baseline = 1.0;
    std::size_t n0 = 0;
    std::size_t n = 0;
    double sigma = 0.0;
    double alpha = 0.0;
    std::size_t workers = 1;
};

struct BenchReport {
    double baseline_time_s = 0.0;  // input-space smoothing over the same examples
    std::vector<BenchRow> rows;    // latent-space smoothing at each split depth
    std::size_t n_examples = 0;
};

// Times an input-space baseline, then certifies the same examples under
// latent-space smoothing at each split depth. Restores the network's split
// index afterwards. Single-threaded: workers is recorded as 1.
BenchReport bench_modes(SplitNetwork& net, const Dataset& test, const SmoothingConfig& cfg,
                        std::span<const std::size_t> splits, std::size_t n_examples);
std::string bench_text(const BenchReport& report);
// The default sweep {0, and the boundaries after 1/4, 1/2, 3/4, all of the
// orthogonal blocks}.
std::vector<std::size_t> default_split_sweep(std::size_t ortho_blocks);

struct RunArtifacts {
    std::string out_dir;
    TrainResult training;
    AuditReport audit;
    EvalSummary summary;
    std::vector<CertRow> rows;
    std::size_t attacked_points = 0;
};

// Full pipeline: data -> model -> train -> audit -> evaluate -> (optional
// ball attack), writing checkpoint.bin, history.csv, audit.txt, certs.csv,
// summary.txt and status.txt under cfg.run.out_dir. Failures abort with a
// stage-tagged error after flagging the partial outputs in status.txt.
RunArtifacts run_pipeline(const ExperimentConfig& cfg);

}  // namespace lsrs
