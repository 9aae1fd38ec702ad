#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "mffd/experiment.hpp"
#include "mffd/surrogate.hpp"

using namespace mffd;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 1, kData = 2;

// Errors raised while resolving options are the caller's fault.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename F>
auto as_usage(F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
}

class Logger {
public:
    explicit Logger(std::string name) : name_(std::move(name)), t0_(std::chrono::steady_clock::now()) {}
    void operator()(const std::string& msg) const {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        std::cerr << "[mffd " << name_ << " " << std::fixed << std::setprecision(1) << s << "s] " << msg << std::endl;
    }
    ProgressFn fn() const {
        return [this](const std::string& m) { (*this)(m); };
    }

private:
    std::string name_;
    std::chrono::steady_clock::time_point t0_;
};

struct ConfigOpts {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* sub) {
        sub->add_option("--config", path, "key=value config file")->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "config override key=value (repeatable)");
    }
    RunConfig resolve(const Logger& log) const {
        const RunConfig cfg = as_usage([&] { return resolve_config(path, overrides); });
        log("config: " + resolved_line(cfg));
        log("seed: init_seed=" + std::to_string(cfg.init_seed) + " train.seed=" + std::to_string(cfg.train.seed));
        return cfg;
    }
};

DatasetManifest manifest_at(const std::string& path) { return read_manifest(path); }

Split split_arg(const std::string& s) {
    return as_usage([&] { return parse_split(s); });
}

FittedRun open_run(const std::string& dir, const Logger& log) {
    FittedRun run = load_run(dir);
    log("config: " + resolved_line(run.config));
    log("seed: init_seed=" + std::to_string(run.config.init_seed) + " train.seed=" + std::to_string(run.config.train.seed));
    return run;
}

LabeledImages load_selection(const DatasetManifest& man, Split split, std::size_t size,
                             const std::vector<std::string>& only) {
    LabeledImages data = filter_ids(load_split(man, split, size), only);
    require(!data.labels.empty(), ErrorCode::EmptySplit, "no samples match the --only prefixes");
    return data;
}

// Mean absolute value of every local feature channel, one row per image.
std::string pooled_features_csv(const Detector& det, const LabeledImages& data) {
    const DetectorConfig& cfg = det.config();
    std::ostringstream out;
    out << std::setprecision(17) << "id,label";
    const std::size_t n_npr = cfg.use_npr ? npr_channels({cfg.npr_l}) : 0;
    for (std::size_t c = 0; c < n_npr; ++c) out << ",npr_" << c;
    for (std::size_t c = n_npr; c < cfg.local_channels(); ++c) out << ",grad_" << c - n_npr;
    out << '\n';
    const std::size_t C = cfg.local_channels(), P = cfg.image_size * cfg.image_size;
    for (std::size_t start = 0; start < data.images.size(); start += 32) {
        const std::size_t n = std::min<std::size_t>(32, data.images.size() - start);
        const Tensor local = det.local_features(to_tensor_batch(std::span(data.images).subspan(start, n)));
        const auto& v = local.data();
        for (std::size_t i = 0; i < n; ++i) {
            out << data.ids[start + i] << ',' << data.labels[start + i];
            for (std::size_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::size_t p = 0; p < P; ++p) acc += std::abs(v[(i * C + c) * P + p]);
                out << ',' << acc / static_cast<double>(P);
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string read_magic(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    char buf[4] = {};
    in.read(buf, 4);
    return std::string(buf, static_cast<std::size_t>(in.gcount()));
}

std::string inspect(const fs::path& p) {
    std::ostringstream out;
    out << std::setprecision(17);
    require(fs::exists(p), ErrorCode::Io, "no such file or directory: " + p.string());
    if (fs::is_directory(p)) {
        const FittedRun run = load_run(p);
        out << "field,value\nkind,run\nparameters," << run.detector.parameter_count() << "\nthreshold," << run.threshold
            << "\nval_balanced_acc," << run.val_balanced_accuracy << "\nconfig," << resolved_line(run.config) << '\n';
        return out.str();
    }
    const std::string magic = read_magic(p);
    if (magic == "FWTS") {
        out << "name,shape,count\n";
        for (const auto& t : read_tensor_file(p)) {
            out << t.name << ',';
            const auto& shape = t.tensor.shape();
            for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
            out << ',' << t.tensor.numel() << '\n';
        }
    } else if (magic == "FEMB") {
        const EmbeddingTable table = read_embedding_file(p);
        out << "id,norm\n";
        for (const auto& r : table.records()) {
            double s = 0.0;
            for (float v : r.vector) s += double(v) * v;
            out << r.id << ',' << std::sqrt(s) << '\n';
        }
    } else if (magic.rfind("P6", 0) == 0) {
        const ImageU8 img = load_ppm(p);
        out << "field,value\nkind,ppm\nwidth," << img.width << "\nheight," << img.height << '\n';
    } else {
        const DatasetManifest man = read_manifest(p);
        std::map<std::pair<std::string, int>, std::size_t> counts;
        for (const auto& e : man.entries) ++counts[{split_name(e.split), e.label}];
        out << "split,label,count\n";
        for (const auto& [k, n] : counts) out << k.first << ',' << k.second << ',' << n << '\n';
    }
    return out.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mffd: multi-feature frequency-aware AI-image detector"};
    app.require_subcommand(1);

    ConfigOpts extract_cfg, train_cfg, ablate_cfg;
    std::string manifest, split = "test", out_dir, run_dir, specs = "jpeg:95,jpeg:80,jpeg:65,jpeg:50,blur:0,blur:1,blur:2,blur:3,noise:0,noise:1,noise:2,noise:3";
    std::vector<std::string> only, drops;
    std::uint64_t noise_seed = 1;
    SurrogateSpec synth;
    std::string inspect_path;

    auto* s_synth = app.add_subcommand("synth", "write the synthetic real/upsampled surrogate dataset");
    s_synth->add_option("--out", out_dir, "output directory")->required();
    s_synth->add_option("--side", synth.side, "image side (even)");
    s_synth->add_option("--train", synth.train_per_class, "train images per class");
    s_synth->add_option("--val", synth.val_per_class, "val images per class");
    s_synth->add_option("--test", synth.test_per_class, "test images per kind");
    s_synth->add_option("--seed", synth.seed, "dataset seed");
    s_synth->add_option("--sigma-min", synth.texture.sigma_min, "smallest texture smoothing sigma");
    s_synth->add_option("--sigma-max", synth.texture.sigma_max, "largest texture smoothing sigma");

    auto* s_extract = app.add_subcommand("extract", "print pooled NPR / gradient features as CSV");
    s_extract->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    s_extract->add_option("--split", split, "train, val or test");
    s_extract->add_option("--only", only, "keep ids with this prefix (repeatable)");
    extract_cfg.attach(s_extract);

    auto* s_train = app.add_subcommand("train", "train a detector and calibrate its threshold");
    s_train->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    s_train->add_option("--out", out_dir, "run directory to write")->required();
    train_cfg.attach(s_train);

    auto* s_eval = app.add_subcommand("eval", "evaluate a trained run");
    s_eval->add_option("--run", run_dir, "run directory from train")->required()->check(CLI::ExistingDirectory);
    s_eval->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    s_eval->add_option("--split", split, "train, val or test");
    s_eval->add_option("--only", only, "keep ids with this prefix (repeatable)");

    auto* s_ablate = app.add_subcommand("ablate", "retrain without branches and compare");
    s_ablate->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    s_ablate->add_option("--drop", drops, "npr, grad, semantic or a '+' combination (repeatable)")->required();
    ablate_cfg.attach(s_ablate);

    auto* s_perturb = app.add_subcommand("perturb", "robustness sweep of a trained run");
    s_perturb->add_option("--run", run_dir, "run directory from train")->required()->check(CLI::ExistingDirectory);
    s_perturb->add_option("--manifest", manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
    s_perturb->add_option("--specs", specs, "kind:level list, kinds jpeg|blur|noise");
    s_perturb->add_option("--noise-seed", noise_seed, "seed for the noise fields");
    s_perturb->add_option("--split", split, "train, val or test");
    s_perturb->add_option("--only", only, "keep ids with this prefix (repeatable)");

    auto* s_inspect = app.add_subcommand("inspect", "describe a weights, embeddings, image, manifest file or run directory");
    s_inspect->add_option("path", inspect_path, "file or run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code == 0) return kOk;
        std::cerr << app.help();
        return kUsage;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    const Logger log(name);
    try {
        if (name == "synth") {
            as_usage([&] {
                require(synth.side >= kMinImageSide && synth.side % 2 == 0, ErrorCode::InvalidArgument, "--side must be even and >= 8");
                require(synth.texture.sigma_min > 0.0 && synth.texture.sigma_min <= synth.texture.sigma_max,
                        ErrorCode::InvalidArgument, "need 0 < --sigma-min <= --sigma-max");
                return 0;
            });
            log("seed: " + std::to_string(synth.seed));
            std::cout << write_surrogate(out_dir, synth).string() << '\n';
        } else if (name == "extract") {
            const RunConfig cfg = extract_cfg.resolve(log);
            const Split sp = split_arg(split);
            const Detector det(cfg.model, cfg.init_seed);
            const LabeledImages data = load_selection(manifest_at(manifest), sp, cfg.model.image_size, only);
            log("extracting " + std::to_string(data.labels.size()) + " images");
            std::cout << pooled_features_csv(det, data);
        } else if (name == "train") {
            const RunConfig cfg = train_cfg.resolve(log);
            const FittedRun run = fit_run(cfg, manifest_at(manifest), log.fn());
            save_run(out_dir, run);
            const fs::path dir(out_dir);
            for (const char* f : {"weights.fwts", "history.csv", "calibration.csv", "config.txt"})
                std::cout << (dir / f).string() << '\n';
        } else if (name == "eval") {
            const Split sp = split_arg(split);
            const FittedRun run = open_run(run_dir, log);
            const LabeledImages data = load_selection(manifest_at(manifest), sp, run.config.model.image_size, only);
            log("evaluating " + std::to_string(data.labels.size()) + " images");
            std::cout << evaluate_run(run, data).csv();
        } else if (name == "ablate") {
            const RunConfig cfg = ablate_cfg.resolve(log);
            as_usage([&] {
                for (const auto& d : drops) drop_branches(cfg, d).validate();
                return 0;
            });
            std::cout << ablation_csv(ablate(cfg, manifest_at(manifest), drops, log.fn()));
        } else if (name == "perturb") {
            const auto parsed = as_usage([&] { return parse_specs(specs, noise_seed); });
            const Split sp = split_arg(split);
            const FittedRun run = open_run(run_dir, log);
            const LabeledImages data = load_selection(manifest_at(manifest), sp, run.config.model.image_size, only);
            const auto table = load_embeddings(run.config);
            std::cout << robustness_sweep(run.detector, data, parsed, run.threshold, table ? &*table : nullptr, log.fn()).csv();
        } else if (name == "inspect") {
            std::cout << inspect(inspect_path);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kOk;
}
