#include "lsrs/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace lsrs {

namespace {

constexpr const char* kCertHeader =
    "idx, label, predict, radius_latent, radius_input, p_lower, correct, time_s";

[[noreturn]] void cfg_fail(const std::string& what) { throw std::runtime_error("config: " + what); }

[[noreturn]] void cfg_fail_at(std::size_t line_no, const std::string& what) {
    cfg_fail("line " + std::to_string(line_no) + ": " + what);
}

std::string trimmed(const std::string& s) {
    const char* ws = " \t\r\n";
    std::size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
}

std::size_t parse_size(std::size_t line_no, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::size_t>(u);
    } catch (const std::exception&) {
        cfg_fail_at(line_no, "bad integer '" + v + "' for " + key);
    }
}

std::uint64_t parse_seed(std::size_t line_no, const std::string& key, const std::string& v) {
    return static_cast<std::uint64_t>(parse_size(line_no, key, v));
}

double parse_double(std::size_t line_no, const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        cfg_fail_at(line_no, "bad number '" + v + "' for " + key);
    }
}

}  // namespace

std::size_t ModelSpec::resolved_split() const {
    if (split_index >= 0) return static_cast<std::size_t>(split_index);
    return ortho_blocks > 0 ? 1 + ortho_blocks : 0;
}

void ExperimentConfig::validate() const {
    const ModelSpec& m = model;
    if (m.classes < 2) cfg_fail("classes must be >= 2");
    if (m.channels == 0 || m.size == 0) cfg_fail("channels and size must be positive");
    if (m.input_channels == 0 || m.input_channels > m.channels)
        cfg_fail("input_channels must be in [1, channels]");
    if (m.ortho_blocks > m.blocks)
        cfg_fail("ortho_blocks (" + std::to_string(m.ortho_blocks) + ") exceeds blocks (" +
                 std::to_string(m.blocks) + ")");
    if (m.group_size < 2 || (m.channels * m.size * m.size) % m.group_size != 0)
        cfg_fail("group_size " + std::to_string(m.group_size) +
                 " does not evenly divide the feature count " +
                 std::to_string(m.channels * m.size * m.size));
    const std::size_t layer_count = m.blocks + 4;  // lift + blocks + dense/relu/dense
    const std::size_t split = m.resolved_split();
    if (split > layer_count)
        cfg_fail("split_index " + std::to_string(split) + " exceeds the layer count " +
                 std::to_string(layer_count));
    // Orthogonal block b occupies layer index b (the lift is layer 0). Every
    // one of them must land inside the encoder.
    for (std::size_t b = 1; b <= m.ortho_blocks; ++b) {
        if (b >= split)
            cfg_fail("orthogonal block " + std::to_string(b) + " (layer " + std::to_string(b) +
                     ") lies outside the encoder (split_index " + std::to_string(split) + ")");
    }
    if (mode == Mode::LS_RS && split > 1 + m.ortho_blocks) {
        if (split <= 1 + m.blocks)
            cfg_fail("latent-space smoothing needs a bounded encoder, but block " +
                     std::to_string(split - 1) + " (plain residual) has no Lipschitz bound");
        cfg_fail("latent-space smoothing needs a bounded encoder, but layer " +
                 std::to_string(1 + m.blocks) + " onward (the dense head) has no Lipschitz bound");
    }

    if (data.source == "blobs") {
        if (data.n_per_class == 0 || data.test_per_class == 0)
            cfg_fail("blobs need n_per_class and test_per_class >= 1");
        if (data.spread < 0.0) cfg_fail("spread must be >= 0");
    } else if (data.source == "idx") {
        if (data.images.empty() || data.labels.empty() || data.test_images.empty() ||
            data.test_labels.empty())
            cfg_fail("idx source needs images, labels, test_images and test_labels paths");
    } else {
        cfg_fail("unknown data source '" + data.source + "' (expected blobs or idx)");
    }

    train.validate();
    smooth.validate();
    if (run.out_dir.empty()) cfg_fail("out_dir must not be empty");
    if (run.audit_pairs == 0 || run.audit_iters == 0)
        cfg_fail("audit_pairs and audit_iters must be >= 1");
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
        ++line_no;
        std::string line = trimmed(raw);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') cfg_fail_at(line_no, "unterminated section header");
            section = trimmed(line.substr(1, line.size() - 2));
            if (section != "model" && section != "data" && section != "train" &&
                section != "smooth" && section != "run")
                cfg_fail_at(line_no, "unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) cfg_fail_at(line_no, "expected key = value, got '" + line + "'");
        std::string key = trimmed(line.substr(0, eq));
        std::string val = trimmed(line.substr(eq + 1));
        if (key.empty()) cfg_fail_at(line_no, "empty key");
        if (section.empty()) cfg_fail_at(line_no, "key '" + key + "' before any [section]");

        if (section == "model") {
            if (key == "blocks") cfg.model.blocks = parse_size(line_no, key, val);
            else if (key == "ortho_blocks") cfg.model.ortho_blocks = parse_size(line_no, key, val);
            else if (key == "channels") cfg.model.channels = parse_size(line_no, key, val);
            else if (key == "size") cfg.model.size = parse_size(line_no, key, val);
            else if (key == "group_size") cfg.model.group_size = parse_size(line_no, key, val);
            else if (key == "classes") cfg.model.classes = parse_size(line_no, key, val);
            else if (key == "input_channels") cfg.model.input_channels = parse_size(line_no, key, val);
            else if (key == "split_index") {
                if (val == "auto") cfg.model.split_index = -1;
                else cfg.model.split_index = static_cast<long>(parse_size(line_no, key, val));
            } else cfg_fail_at(line_no, "unknown key '" + key + "' in [model]");
        } else if (section == "data") {
            if (key == "source") cfg.data.source = val;
            else if (key == "n_per_class") cfg.data.n_per_class = parse_size(line_no, key, val);
            else if (key == "test_per_class") cfg.data.test_per_class = parse_size(line_no, key, val);
            else if (key == "spread") cfg.data.spread = parse_double(line_no, key, val);
            else if (key == "seed") cfg.data.seed = parse_seed(line_no, key, val);
            else if (key == "images") cfg.data.images = val;
            else if (key == "labels") cfg.data.labels = val;
            else if (key == "test_images") cfg.data.test_images = val;
            else if (key == "test_labels") cfg.data.test_labels = val;
            else cfg_fail_at(line_no, "unknown key '" + key + "' in [data]");
        } else if (section == "train") {
            if (key == "epochs") cfg.train.epochs = parse_size(line_no, key, val);
            else if (key == "lr0") cfg.train.lr0 = parse_double(line_no, key, val);
            else if (key == "lr_decay") cfg.train.lr_decay = parse_double(line_no, key, val);
            else if (key == "lr_step") cfg.train.lr_step = parse_size(line_no, key, val);
            else if (key == "momentum") cfg.train.momentum = parse_double(line_no, key, val);
            else if (key == "sigma") cfg.train.sigma = parse_double(line_no, key, val);
            else if (key == "noise_site") {
                if (val == "input") cfg.train.noise_site = NoiseSite::input;
                else if (val == "latent") cfg.train.noise_site = NoiseSite::latent;
                else cfg_fail_at(line_no, "noise_site must be input or latent, got '" + val + "'");
            } else if (key == "batch_size") cfg.train.batch_size = parse_size(line_no, key, val);
            else if (key == "seed") cfg.train.seed = parse_seed(line_no, key, val);
            else cfg_fail_at(line_no, "unknown key '" + key + "' in [train]");
        } else if (section == "smooth") {
            if (key == "mode") {
                if (val == "is_rs") cfg.mode = Mode::IS_RS;
                else if (val == "ls_rs") cfg.mode = Mode::LS_RS;
                else cfg_fail_at(line_no, "mode must be is_rs or ls_rs, got '" + val + "'");
            } else if (key == "sigma") cfg.smooth.sigma = parse_double(line_no, key, val);
            else if (key == "n0") cfg.smooth.n0 = parse_size(line_no, key, val);
            else if (key == "n") cfg.smooth.n = parse_size(line_no, key, val);
            else if (key == "alpha") cfg.smooth.alpha = parse_double(line_no, key, val);
            else if (key == "batch_size") cfg.smooth.batch_size = parse_size(line_no, key, val);
            else if (key == "seed") cfg.smooth.seed = parse_seed(line_no, key, val);
            else cfg_fail_at(line_no, "unknown key '" + key + "' in [smooth]");
        } else {  // run
            if (key == "out_dir") cfg.run.out_dir = val;
            else if (key == "eval_count") cfg.run.eval_count = parse_size(line_no, key, val);
            else if (key == "attack_points") cfg.run.attack_points = parse_size(line_no, key, val);
            else if (key == "attack_restarts") cfg.run.attack_restarts = parse_size(line_no, key, val);
            else if (key == "audit_pairs") cfg.run.audit_pairs = parse_size(line_no, key, val);
            else if (key == "audit_points") cfg.run.audit_points = parse_size(line_no, key, val);
            else if (key == "audit_iters") cfg.run.audit_iters = parse_size(line_no, key, val);
            else if (key == "bench_examples") cfg.run.bench_examples = parse_size(line_no, key, val);
            else cfg_fail_at(line_no, "unknown key '" + key + "' in [run]");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) cfg_fail("cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

SplitNetwork build_model(const ModelSpec& m) {
    std::vector<std::unique_ptr<Layer>> layers;
    layers.push_back(std::make_unique<ChannelLiftLayer>(m.input_channels, m.channels));
    for (std::size_t b = 0; b < m.blocks; ++b) {
        std::vector<std::unique_ptr<Layer>> main;
        if (b < m.ortho_blocks) {
            main.push_back(std::make_unique<OrthoConvLayer>(m.channels, m.size));
            main.push_back(std::make_unique<GroupSortLayer>(m.group_size));
            layers.push_back(std::make_unique<ResidualBlock>(std::move(main), /*convex=*/true));
        } else {
            main.push_back(std::make_unique<PlainConvLayer>(m.channels, m.channels, 3));
            main.push_back(std::make_unique<ReluLayer>());
            layers.push_back(std::make_unique<ResidualBlock>(std::move(main), /*convex=*/false));
        }
    }
    const std::size_t features = m.channels * m.size * m.size;
    layers.push_back(std::make_unique<DenseLayer>(features, 32));
    layers.push_back(std::make_unique<ReluLayer>());
    layers.push_back(std::make_unique<DenseLayer>(32, m.classes));
    Shape3 in{m.input_channels, m.size, m.size};
    return SplitNetwork(in, std::move(layers), m.resolved_split(), {m.ortho_blocks, m.blocks});
}

namespace {

Dataset slice_dataset(const Dataset& all, std::size_t begin, std::size_t end, std::string split) {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Dataset out;
    out.inputs = gather_examples(all.inputs, idx);
    out.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                      all.labels.begin() + static_cast<std::ptrdiff_t>(end));
    out.n_classes = all.n_classes;
    out.split = std::move(split);
    return out;
}

void check_dataset_fits(const Dataset& d, const ModelSpec& m) {
    Shape3 got{d.inputs.shape().d1, d.inputs.shape().d2, d.inputs.shape().d3};
    Shape3 want{m.input_channels, m.size, m.size};
    if (!(got == want))
        throw std::runtime_error("data: " + d.split + " images are " + to_string(got) +
                                 " but the model expects " + to_string(want));
    if (d.n_classes > m.classes)
        throw std::runtime_error("data: " + d.split + " set has " + std::to_string(d.n_classes) +
                                 " classes but the model head has " + std::to_string(m.classes));
}

}  // namespace

std::pair<Dataset, Dataset> build_datasets(const ExperimentConfig& cfg) {
    if (cfg.data.source == "idx") {
        Dataset tr = load_idx(cfg.data.images, cfg.data.labels);
        Dataset te = load_idx(cfg.data.test_images, cfg.data.test_labels);
        tr.split = "train";
        te.split = "test";
        tr.n_classes = te.n_classes = std::max(tr.n_classes, te.n_classes);
        check_dataset_fits(tr, cfg.model);
        check_dataset_fits(te, cfg.model);
        return {std::move(tr), std::move(te)};
    }
    // Blobs: draw one shuffled pool so train and test share cluster centers,
    // then split it.
    Shape3 shape{cfg.model.input_channels, cfg.model.size, cfg.model.size};
    Dataset all = make_blobs(cfg.model.classes, cfg.data.n_per_class + cfg.data.test_per_class,
                             shape, cfg.data.spread, cfg.data.seed);
    const std::size_t n_train = cfg.model.classes * cfg.data.n_per_class;
    Dataset tr = slice_dataset(all, 0, n_train, "train");
    Dataset te = slice_dataset(all, n_train, all.size(), "test");
    return {std::move(tr), std::move(te)};
}

std::vector<CertRow> certify_rows(const SplitNetwork& net, const Dataset& test, Mode mode,
                                  const SmoothingConfig& cfg, std::size_t count) {
    test.validate();
    cfg.validate();
    const std::size_t n = count == 0 ? test.size() : std::min(count, test.size());
    std::vector<CertRow> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor4 x = single_example(test.inputs, i);
        CertResult c = certify(net, x, mode, cfg, i);
        CertRow r;
        r.idx = i;
        r.label = test.labels[i];
        r.predict = c.predicted;
        r.radius_latent = c.radius_latent;
        r.radius_input = c.radius_input;
        r.p_lower = c.p_lower;
        r.correct =
            (c.predicted != kAbstain && static_cast<std::size_t>(c.predicted) == test.labels[i])
                ? 1
                : 0;
        r.time_s = c.elapsed_s;
        rows.push_back(r);
    }
    return rows;
}

EvalSummary summarize(const std::vector<CertRow>& rows) {
    EvalSummary s;
    double acr = 0.0, time = 0.0;
    std::size_t abstained = 0;
    for (const CertRow& r : rows) {
        if (r.correct) acr += r.radius_input;  // abstain / wrong count as radius 0
        time += r.time_s;
        if (r.predict == kAbstain) ++abstained;
    }
    const double n = static_cast<double>(rows.size());
    if (!rows.empty()) {
        s.acr = acr / n;
        s.mean_time_s = time / n;
        s.abstain_rate = static_cast<double>(abstained) / n;
    }
    for (int k = 0; k <= 15; ++k) {
        const double thr = 0.1 * k;
        std::size_t hit = 0;
        for (const CertRow& r : rows)
            if (r.correct && r.radius_input >= thr) ++hit;
        s.certified_accuracy.emplace_back(thr, rows.empty() ? 0.0 : static_cast<double>(hit) / n);
    }
    return s;
}

EvalSummary evaluate(const SplitNetwork& net, const Dataset& test, Mode mode,
                     const SmoothingConfig& cfg, std::size_t count,
                     std::vector<CertRow>* rows_out) {
    std::vector<CertRow> rows = certify_rows(net, test, mode, cfg, count);
    EvalSummary s = summarize(rows);
    s.clean_accuracy = clean_accuracy(net, test);
    if (rows_out) *rows_out = std::move(rows);
    return s;
}

void write_cert_csv(const std::string& path, const std::vector<CertRow>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("csv: cannot open " + path + " for writing");
    os << kCertHeader << "\n";
    char buf[320];
    for (const CertRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu, %zu, %d, %.17g, %.17g, %.17g, %d, %.17g\n", r.idx,
                      r.label, r.predict, r.radius_latent, r.radius_input, r.p_lower, r.correct,
                      r.time_s);
        os << buf;
    }
    if (!os) throw std::runtime_error("csv: write to " + path + " failed");
}

std::vector<CertRow> read_cert_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("csv: " + path + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCertHeader)
        throw std::runtime_error("csv: unexpected header in " + path + ": '" + line + "'");
    std::vector<CertRow> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trimmed(line).empty()) continue;
        CertRow r;
        int got = std::sscanf(line.c_str(), "%zu ,%zu ,%d ,%lf ,%lf ,%lf ,%d ,%lf", &r.idx,
                              &r.label, &r.predict, &r.radius_latent, &r.radius_input, &r.p_lower,
                              &r.correct, &r.time_s);
        if (got != 8)
            throw std::runtime_error("csv: " + path + " line " + std::to_string(line_no) +
                                     ": expected 8 fields");
        rows.push_back(r);
    }
    return rows;
}

bool rows_equal_ignoring_time(const std::vector<CertRow>& a, const std::vector<CertRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const CertRow &x = a[i], &y = b[i];
        if (x.idx != y.idx || x.label != y.label || x.predict != y.predict ||
            x.correct != y.correct)
            return false;
        if (x.radius_latent != y.radius_latent || x.radius_input != y.radius_input ||
            x.p_lower != y.p_lower)
            return false;
    }
    return true;
}

std::string summary_text(const EvalSummary& s) {
    char buf[160];
    std::string out = "certification summary\n";
    std::snprintf(buf, sizeof buf, "  clean accuracy:   %.4f\n", s.clean_accuracy);
    out += buf;
    std::snprintf(buf, sizeof buf, "  abstain rate:     %.4f\n", s.abstain_rate);
    out += buf;
    std::snprintf(buf, sizeof buf, "  mean cert radius: %.6f (input space)\n", s.acr);
    out += buf;
    std::snprintf(buf, sizeof buf, "  mean time:        %.4f s per example\n", s.mean_time_s);
    out += buf;
    out += "  certified accuracy by radius threshold:\n";
    for (const auto& [thr, acc] : s.certified_accuracy) {
        std::snprintf(buf, sizeof buf, "    r >= %.2f: %.4f\n", thr, acc);
        out += buf;
    }
    return out;
}

std::vector<std::size_t> default_split_sweep(std::size_t ortho_blocks) {
    std::vector<std::size_t> splits{0};
    for (std::size_t q = 1; q <= 4; ++q) {
        std::size_t k = ortho_blocks * q / 4;
        if (k > 0) splits.push_back(1 + k);
    }
    std::sort(splits.begin(), splits.end());
    splits.erase(std::unique(splits.begin(), splits.end()), splits.end());
    return splits;
}

BenchReport bench_modes(SplitNetwork& net, const Dataset& test, const SmoothingConfig& cfg,
                        std::span<const std::size_t> splits, std::size_t n_examples) {
    if (splits.empty()) throw std::invalid_argument("bench: empty split sweep");
    cfg.validate();
    test.validate();
    const std::size_t m = std::min(n_examples == 0 ? test.size() : n_examples, test.size());
    if (m == 0) throw std::invalid_argument("bench: no examples to certify");

    BenchReport report;
    report.n_examples = m;
    const std::size_t original_split = net.split_index();

    // Input-space baseline over the same examples. The split index is
    // irrelevant for this mode; noise enters before layer 0 either way.
    double base_total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        Tensor4 x = single_example(test.inputs, i);
        base_total += certify(net, x, Mode::IS_RS, cfg, i).elapsed_s;
    }
    report.baseline_time_s = base_total / static_cast<double>(m);

    for (std::size_t s : splits) {
        net.set_split_index(s);
        double total = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            Tensor4 x = single_example(test.inputs, i);
            total += certify(net, x, Mode::LS_RS, cfg, i).elapsed_s;
        }
        BenchRow r;
        r.split = s;
        r.latent_dim = net.latent_shape().numel();
        r.mean_time_s = total / static_cast<double>(m);
        r.speedup_vs_baseline = report.baseline_time_s / r.mean_time_s;
        r.n0 = cfg.n0;
        r.n = cfg.n;
        r.sigma = cfg.sigma;
        r.alpha = cfg.alpha;
        r.workers = 1;
        report.rows.push_back(r);
    }
    net.set_split_index(original_split);
    return report;
}

std::string bench_text(const BenchReport& report) {
    std::string out = "split-depth timing sweep\n";
    char buf[240];
    if (!report.rows.empty()) {
        const BenchRow& r0 = report.rows.front();
        std::snprintf(buf, sizeof buf,
                      "  held fixed across all rows: examples=%zu n0=%zu n=%zu sigma=%g alpha=%g "
                      "workers=%zu\n",
                      report.n_examples, r0.n0, r0.n, r0.sigma, r0.alpha, r0.workers);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "  input-space baseline: %.4f s per example\n",
                  report.baseline_time_s);
    out += buf;
    out += "  split  latent_dim  mean_time_s  speedup_vs_baseline\n";
    for (const BenchRow& r : report.rows) {
        std::snprintf(buf, sizeof buf, "  %5zu  %10zu  %11.4f  %19.3f\n", r.split, r.latent_dim,
                      r.mean_time_s, r.speedup_vs_baseline);
        out += buf;
    }
    return out;
}

RunArtifacts run_pipeline(const ExperimentConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    RunArtifacts art;
    art.out_dir = cfg.run.out_dir;
    fs::create_directories(cfg.run.out_dir);

    std::vector<std::string> written;
    auto out_path = [&](const char* name) { return (fs::path(cfg.run.out_dir) / name).string(); };
    auto write_text = [&](const char* name, const std::string& body) {
        std::ofstream os(out_path(name), std::ios::binary);
        os << body;
        if (!os) throw std::runtime_error(std::string("cannot write ") + name);
        if (std::find(written.begin(), written.end(), name) == written.end())
            written.push_back(name);
    };
    auto write_status = [&](const std::string& state) {
        std::ofstream os(out_path("status.txt"), std::ios::binary);
        os << state << "\n";
        for (const std::string& w : written) os << "  wrote " << w << "\n";
    };

    std::string stage = "data";
    try {
        auto [train_set, test_set] = build_datasets(cfg);

        stage = "model";
        SplitNetwork net = build_model(cfg.model);
        Rng init_rng(cfg.train.seed, 0);
        net.init_params(init_rng);

        stage = "train";
        art.training = train(net, train_set, cfg.train);
        write_history_csv(out_path("history.csv"), art.training.history);
        written.push_back("history.csv");
        net.save_file(out_path("checkpoint.bin"));
        written.push_back("checkpoint.bin");

        stage = "audit";
        art.audit = audit_encoder(net, cfg.run.audit_pairs, cfg.run.audit_points,
                                  cfg.run.audit_iters, cfg.smooth.seed);
        write_text("audit.txt", art.audit.text());
        if (!art.audit.passes())
            throw std::runtime_error(
                "empirical Lipschitz estimate exceeds the declared bound, see audit.txt");

        stage = "evaluate";
        art.summary = evaluate(net, test_set, cfg.mode, cfg.smooth, cfg.run.eval_count, &art.rows);
        write_cert_csv(out_path("certs.csv"), art.rows);
        written.push_back("certs.csv");
        write_text("summary.txt", summary_text(art.summary));

        stage = "attack";
        if (cfg.run.attack_points > 0) {
            for (const CertRow& r : art.rows) {
                if (art.attacked_points >= cfg.run.attack_points) break;
                if (r.predict == kAbstain) continue;
                CertResult cert;
                cert.predicted = r.predict;
                cert.p_lower = r.p_lower;
                cert.radius_latent = r.radius_latent;
                cert.radius_input = r.radius_input;
                Tensor4 x = single_example(test_set.inputs, r.idx);
                art.audit.attack_violations +=
                    certified_ball_attack(net, x, cert, cfg.mode, cfg.smooth,
                                          cfg.run.attack_restarts);
                ++art.attacked_points;
            }
            write_text("audit.txt", art.audit.text());
            if (art.audit.attack_violations > 0)
                throw std::runtime_error("certified ball attack flipped " +
                                         std::to_string(art.audit.attack_violations) +
                                         " certified point(s), see audit.txt");
        }

        write_status("complete");
    } catch (const std::exception& e) {
        write_status(std::string("failed at stage ") + stage + ": " + e.what() +
                     " (outputs listed below may be partial)");
        throw std::runtime_error("stage " + stage + ": " + e.what());
    }
    return art;
}

}  // namespace lsrs
