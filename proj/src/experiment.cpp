#include "mffd/experiment.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mffd {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void report(const ProgressFn& progress, const std::string& msg) {
    if (progress) progress(msg);
}

}  // namespace

std::optional<EmbeddingTable> load_embeddings(const RunConfig& cfg) {
    if (!cfg.model.use_semantic || cfg.model.semantic_source != SemanticSource::File) return std::nullopt;
    require(!cfg.embeddings.empty(), ErrorCode::MissingEmbedding, "semantic_source=file needs embeddings=<path>");
    return read_embedding_file(cfg.embeddings, static_cast<std::uint32_t>(cfg.model.embed_dim));
}

FittedRun fit_run(const RunConfig& cfg, const DatasetManifest& manifest, const ProgressFn& progress) {
    cfg.validate();
    const auto table = load_embeddings(cfg);
    const EmbeddingTable* tp = table ? &*table : nullptr;
    const std::size_t size = cfg.model.image_size;
    const LabeledImages train_set = load_split(manifest, Split::Train, size);
    const LabeledImages val_set = load_split(manifest, Split::Val, size);
    report(progress, "loaded " + std::to_string(train_set.labels.size()) + " train / " +
                         std::to_string(val_set.labels.size()) + " val images");

    FittedRun run{cfg, Detector(cfg.model, cfg.init_seed), {}, 0.0, 0.0};
    const FeatureSet train_f = build_features(run.detector, train_set, tp);
    const FeatureSet val_f = build_features(run.detector, val_set, tp);
    report(progress, "features ready");
    run.result = train(run.detector, train_f, cfg.train, cfg.focal, progress);
    const auto val_scores = score(run.detector, val_f);
    run.threshold = calibrate_threshold(val_scores, val_f.labels);
    run.val_balanced_accuracy = balanced_accuracy(val_scores, val_f.labels, run.threshold);
    std::ostringstream msg;
    msg << std::setprecision(6) << "calibrated threshold " << run.threshold << " (val balanced acc "
        << run.val_balanced_accuracy << ")";
    report(progress, msg.str());
    return run;
}

void save_run(const std::filesystem::path& dir, const FittedRun& run) {
    std::filesystem::create_directories(dir);
    save_weights(dir / "weights.fwts", run.detector);
    write_text(dir / "config.txt", config_text(run.config));
    write_text(dir / "history.csv", history_csv(run.result.history));
    std::ostringstream cal;
    cal << std::setprecision(17) << "metric,value\nthreshold," << run.threshold << "\nval_balanced_acc,"
        << run.val_balanced_accuracy << "\nalpha," << run.result.alpha << "\niterations," << run.result.iterations
        << "\n";
    write_text(dir / "calibration.csv", cal.str());
}

FittedRun load_run(const std::filesystem::path& dir) {
    RunConfig cfg = load_config(dir / "config.txt");
    cfg.validate();
    FittedRun run{cfg, Detector(cfg.model, cfg.init_seed), {}, 0.0, 0.0};
    load_weights(dir / "weights.fwts", run.detector);
    std::istringstream cal(read_text(dir / "calibration.csv"));
    std::string line;
    bool have_threshold = false;
    while (std::getline(cal, line)) {
        const auto comma = line.find(',');
        if (comma == std::string::npos) continue;
        const std::string key = line.substr(0, comma), value = line.substr(comma + 1);
        double v = 0.0;
        const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
        if (key == "metric") continue;
        require(ec == std::errc() && p == value.data() + value.size(), ErrorCode::MalformedHeader,
                "calibration.csv: bad value for " + key);
        if (key == "threshold") {
            run.threshold = v;
            have_threshold = true;
        } else if (key == "val_balanced_acc") {
            run.val_balanced_accuracy = v;
        } else if (key == "alpha") {
            run.result.alpha = v;
        }
    }
    require(have_threshold, ErrorCode::MalformedHeader, "calibration.csv has no threshold row");
    return run;
}

LabeledImages filter_ids(const LabeledImages& data, const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return data;
    LabeledImages out;
    for (std::size_t i = 0; i < data.ids.size(); ++i)
        for (const auto& p : prefixes)
            if (data.ids[i].rfind(p, 0) == 0) {
                out.images.push_back(data.images[i]);
                out.labels.push_back(data.labels[i]);
                out.ids.push_back(data.ids[i]);
                break;
            }
    return out;
}

EvalReport evaluate_run(const FittedRun& run, const LabeledImages& test) {
    require(!test.labels.empty(), ErrorCode::EmptySplit, "no test samples selected");
    const auto table = load_embeddings(run.config);
    const FeatureSet f = build_features(run.detector, test, table ? &*table : nullptr);
    return evaluate(score(run.detector, f), f.labels, run.threshold);
}

RunConfig drop_branches(RunConfig cfg, const std::string& drop) {
    std::istringstream in(drop);
    std::string branch;
    while (std::getline(in, branch, '+')) {
        if (branch == "npr") cfg.model.use_npr = false;
        else if (branch == "grad") cfg.model.use_grad = false;
        else if (branch == "semantic") cfg.model.use_semantic = false;
        else fail(ErrorCode::InvalidConfig, "unknown branch '" + branch + "' (expected npr, grad or semantic)");
    }
    return cfg;
}

std::vector<AblationRow> ablate(const RunConfig& cfg, const DatasetManifest& manifest,
                                const std::vector<std::string>& drops, const ProgressFn& progress) {
    std::vector<std::pair<std::string, RunConfig>> variants{{"full", cfg}};
    for (const auto& d : drops) variants.emplace_back("-" + d, drop_branches(cfg, d));
    for (const auto& [name, c] : variants) c.validate();

    const LabeledImages test = load_split(manifest, Split::Test, cfg.model.image_size);
    std::vector<AblationRow> rows;
    for (const auto& [name, c] : variants) {
        report(progress, "ablation config " + name);
        const FittedRun run = fit_run(c, manifest, progress);
        rows.push_back({name, evaluate_run(run, test)});
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << std::setprecision(17) << "config,acc,ap,threshold\n";
    for (const auto& r : rows) out << r.name << ',' << r.report.acc << ',' << r.report.ap << ',' << r.report.threshold << '\n';
    return out.str();
}

}  // namespace mffd
