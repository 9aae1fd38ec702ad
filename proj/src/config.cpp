#include "mffd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mffd {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    fail(ErrorCode::InvalidConfig, "key '" + key + "': cannot read '" + value + "' as " + expected);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a number");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, v, "true/false");
}

std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(std::string key, T DetectorConfig::*m) {
    return {key, [m](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.model.*m)); },
            [m, key](RunConfig& c, const std::string& v) { c.model.*m = static_cast<T>(to_u64(key, v)); }};
}

Field model_double(std::string key, double DetectorConfig::*m) {
    return {key, [m](const RunConfig& c) { return fmt(c.model.*m); },
            [m, key](RunConfig& c, const std::string& v) { c.model.*m = to_double(key, v); }};
}

Field model_bool(std::string key, bool DetectorConfig::*m) {
    return {key, [m](const RunConfig& c) { return fmt(c.model.*m); },
            [m, key](RunConfig& c, const std::string& v) { c.model.*m = to_bool(key, v); }};
}

Field train_double(std::string key, double TrainConfig::*m) {
    return {key, [m](const RunConfig& c) { return fmt(c.train.*m); },
            [m, key](RunConfig& c, const std::string& v) { c.train.*m = to_double(key, v); }};
}

template <typename T>
Field train_int(std::string key, T TrainConfig::*m) {
    return {key, [m](const RunConfig& c) { return fmt(static_cast<std::uint64_t>(c.train.*m)); },
            [m, key](RunConfig& c, const std::string& v) { c.train.*m = static_cast<T>(to_u64(key, v)); }};
}

RunConfig preset_config(const std::string& name) {
    if (name == "paper") return RunConfig{};
    if (name == "desk") return desk_run_config();
    fail(ErrorCode::InvalidConfig, "key 'preset': unknown preset '" + name + "' (expected paper or desk)");
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back({"preset", [](const RunConfig& c) { return c.preset; },
                     [](RunConfig& c, const std::string& v) { c = preset_config(v); }});
        f.push_back(model_bool("model.use_npr", &DetectorConfig::use_npr));
        f.push_back(model_bool("model.use_grad", &DetectorConfig::use_grad));
        f.push_back(model_bool("model.use_semantic", &DetectorConfig::use_semantic));
        f.push_back({"model.grad_source",
                     [](const RunConfig& c) { return c.model.grad_source == GradientSource::Sobel ? "sobel" : "autodiff"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "autodiff") c.model.grad_source = GradientSource::Autodiff;
                         else if (v == "sobel") c.model.grad_source = GradientSource::Sobel;
                         else bad_value("model.grad_source", v, "autodiff/sobel");
                     }});
        f.push_back(model_bool("model.guided", &DetectorConfig::guided));
        f.push_back(size_field("model.npr_l", &DetectorConfig::npr_l));
        f.push_back(size_field("model.backbone_seed", &DetectorConfig::backbone_seed));
        f.push_back({"model.semantic_source",
                     [](const RunConfig& c) { return c.model.semantic_source == SemanticSource::File ? "file" : "stub"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "stub") c.model.semantic_source = SemanticSource::Stub;
                         else if (v == "file") c.model.semantic_source = SemanticSource::File;
                         else bad_value("model.semantic_source", v, "stub/file");
                     }});
        f.push_back(size_field("model.embed_dim", &DetectorConfig::embed_dim));
        f.push_back(size_field("model.d_k", &DetectorConfig::d_k));
        f.push_back(size_field("model.d_v", &DetectorConfig::d_v));
        f.push_back(size_field("model.heads", &DetectorConfig::heads));
        f.push_back(size_field("model.image_size", &DetectorConfig::image_size));
        f.push_back(size_field("model.width", &DetectorConfig::width));
        f.push_back(size_field("model.n_fadc_blocks", &DetectorConfig::n_fadc_blocks));
        f.push_back(size_field("model.fadc_kernel", &DetectorConfig::fadc_kernel));
        f.push_back(size_field("model.bands", &DetectorConfig::bands));
        f.push_back(model_double("model.d_base", &DetectorConfig::d_base));
        f.push_back(size_field("model.stage1_channels", &DetectorConfig::stage1_channels));
        f.push_back(size_field("model.stage2_channels", &DetectorConfig::stage2_channels));
        f.push_back(model_double("model.dropout", &DetectorConfig::dropout));
        f.push_back(model_double("model.bn_momentum", &DetectorConfig::bn_momentum));
        f.push_back(model_double("model.bn_eps", &DetectorConfig::bn_eps));
        f.push_back(train_double("train.lr", &TrainConfig::lr));
        f.push_back(train_int("train.batch", &TrainConfig::batch));
        f.push_back(train_int("train.epochs", &TrainConfig::epochs));
        f.push_back(train_int("train.warmup_iters", &TrainConfig::warmup_iters));
        f.push_back(train_double("train.beta1", &TrainConfig::beta1));
        f.push_back(train_double("train.beta2", &TrainConfig::beta2));
        f.push_back(train_double("train.eps", &TrainConfig::eps));
        f.push_back(train_double("train.weight_decay", &TrainConfig::weight_decay));
        f.push_back(train_int("train.seed", &TrainConfig::seed));
        f.push_back({"train.optimizer",
                     [](const RunConfig& c) { return c.train.optimizer == OptimizerKind::SgdMomentum ? "sgd" : "adam"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "adam") c.train.optimizer = OptimizerKind::Adam;
                         else if (v == "sgd") c.train.optimizer = OptimizerKind::SgdMomentum;
                         else bad_value("train.optimizer", v, "adam/sgd");
                     }});
        f.push_back(train_double("train.momentum", &TrainConfig::momentum));
        f.push_back({"focal.gamma", [](const RunConfig& c) { return fmt(c.focal.gamma); },
                     [](RunConfig& c, const std::string& v) { c.focal.gamma = to_double("focal.gamma", v); }});
        f.push_back({"focal.alpha", [](const RunConfig& c) { return c.focal.alpha ? fmt(*c.focal.alpha) : "auto"; },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "auto") c.focal.alpha.reset();
                         else c.focal.alpha = to_double("focal.alpha", v);
                     }});
        f.push_back({"init_seed", [](const RunConfig& c) { return fmt(c.init_seed); },
                     [](RunConfig& c, const std::string& v) { c.init_seed = to_u64("init_seed", v); }});
        f.push_back({"embeddings", [](const RunConfig& c) { return "\"" + c.embeddings + "\""; },
                     [](RunConfig& c, const std::string& v) { c.embeddings = v; }});
        return f;
    }();
    return table;
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
    const auto eq = text.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidConfig, "expected key=value, got '" + text + "'");
    return {trim(text.substr(0, eq)), unquote(trim(text.substr(eq + 1)))};
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    require(focal.gamma >= 0.0, ErrorCode::InvalidConfig, "focal.gamma must be >= 0");
    require(!focal.alpha || (*focal.alpha > 0.0 && *focal.alpha < 1.0), ErrorCode::InvalidConfig,
            "focal.alpha must lie in (0, 1) or be auto");
    require(train.batch > 0 && train.epochs > 0, ErrorCode::InvalidConfig, "train.batch and train.epochs must be positive");
}

RunConfig desk_run_config() {
    RunConfig c;
    c.preset = "desk";
    c.model = desk_config();
    c.train.lr = 1e-3;
    c.train.epochs = 3;
    c.train.warmup_iters = 10;
    c.train.batch = 32;
    return c;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : fields())
        if (f.key == key) return f.set(cfg, value);
    fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto [k, v] = split_assignment(assignment);
    apply_setting(cfg, k, v);
}

RunConfig parse_config(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> settings;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // a '#' inside a quoted value is kept
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']' && line.size() > 2, ErrorCode::InvalidConfig,
                    "line " + std::to_string(lineno) + ": malformed section header");
            const std::string name = trim(line.substr(1, line.size() - 2));
            section = name.empty() ? "" : name + ".";
            continue;
        }
        auto [k, v] = split_assignment(line);
        settings.emplace_back(section + k, v);
    }
    RunConfig cfg;
    for (const auto& [k, v] : settings)
        if (k == "preset") apply_setting(cfg, k, v);
    for (const auto& [k, v] : settings)
        if (k != "preset") apply_setting(cfg, k, v);
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

RunConfig resolve_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
}

std::string resolved_line(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        if (!out.empty()) out += ' ';
        out += f.key + "=" + f.get(cfg);
    }
    return out;
}

std::string config_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

}  // namespace mffd
