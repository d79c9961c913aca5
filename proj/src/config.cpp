#include "ma3e/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <tuple>
#include <type_traits>

#include "ma3e/error.hpp"

namespace ma3e {

AngleRange TrainConfig::theta_range() const {
    constexpr double kDeg = std::numbers::pi / 180.0;
    return {theta_min_deg * kDeg, theta_max_deg * kDeg};
}

double TrainConfig::peak_lr() const { return base_lr * batch_size / 256.0; }

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.image_size = image_size;
    m.p = p;
    m.channels = channels;
    m.enc_dim = enc_dim;
    m.enc_depth = enc_depth;
    m.enc_heads = enc_heads;
    m.dec_dim = dec_dim;
    m.dec_depth = dec_depth;
    m.dec_heads = dec_heads;
    m.mlp_ratio = mlp_ratio;
    m.use_angle_embedding = toggles.use_angle_embedding;
    m.seed = seed;
    return m;
}

DatasetSpec TrainConfig::dataset_spec() const {
    DatasetSpec spec;
    spec.count = synth_count;
    spec.size = image_size;
    spec.channels = channels;
    spec.seed = synth_seed;
    spec.shape_kind = synth_shape;
    spec.patch_size = p;
    return spec;
}

void validate(const TrainConfig& c) {
    validate(c.model_config());
    if (c.batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (c.steps < 0) throw ValidationError("steps must be >= 0");
    if (c.warmup_steps < 0 || c.warmup_steps > c.steps) throw ValidationError("warmup_steps must lie in [0, steps]");
    if (!(c.base_lr >= 0.0)) throw ValidationError("base_lr must be >= 0");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw ValidationError("betas must lie in [0, 1)");
    if (!(c.weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
    if (!(c.ratio_crop >= 0.0 && c.ratio_crop <= 1.0 && c.ratio_bg >= 0.0 && c.ratio_bg <= 1.0))
        throw ValidationError("mask ratios must lie in [0, 1]");
    if (c.a <= 0 || c.a % c.p != 0) throw ValidationError("a must be a positive multiple of p");
    if (c.a > c.image_size) throw ValidationError("a must not exceed image_size");
    if (c.theta_max_deg < c.theta_min_deg) throw ValidationError("theta_range is empty");
    if (!(c.epsilon_rule > 0.0)) throw ValidationError("epsilon_rule must be positive");
    if (c.sinkhorn_max_iters < 1 || !(c.sinkhorn_tol > 0.0)) throw ValidationError("invalid Sinkhorn settings");
    if (c.checkpoint_every < 1) throw ValidationError("checkpoint_every must be >= 1");
    if (c.dataset == "synthetic" && c.synth_count < 1) throw ValidationError("synth_count must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for double is not available everywhere; strtod with a full-consumption check.
        char* end = nullptr;
        out = std::strtod(v.c_str(), &end);
        if (v.empty() || end != v.c_str() + v.size()) throw ValidationError("invalid number for '" + key + "': " + raw);
    } else {
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size())
            throw ValidationError("invalid integer for '" + key + "': " + raw);
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("invalid boolean for '" + key + "': " + raw);
}

std::pair<double, double> parse_pair(const std::string& key, const std::string& raw) {
    const auto comma = raw.find(',');
    if (comma == std::string::npos) throw ValidationError("expected two comma-separated values for '" + key + "'");
    return {parse_number<double>(key, raw.substr(0, comma)), parse_number<double>(key, raw.substr(comma + 1))};
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct Field {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <class T>
Field int_field(T TrainConfig::*member, const char* key) {
    return {[member, key](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
            [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double TrainConfig::*member, const char* key) {
    return {[member, key](TrainConfig& c, const std::string& v) { c.*member = parse_number<double>(key, v); },
            [member](const TrainConfig& c) { return fmt_double(c.*member); }};
}

Field toggle_field(bool Toggles::*member, const char* key) {
    return {[member, key](TrainConfig& c, const std::string& v) { c.toggles.*member = parse_bool(key, v); },
            [member](const TrainConfig& c) { return std::string(c.toggles.*member ? "true" : "false"); }};
}

// Ordered so serialize_config writes keys in a stable, readable order.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"dataset", {[](TrainConfig& c, const std::string& v) { c.dataset = trim(v); },
                     [](const TrainConfig& c) { return c.dataset; }}},
        {"synth_count", int_field(&TrainConfig::synth_count, "synth_count")},
        {"synth_seed", int_field(&TrainConfig::synth_seed, "synth_seed")},
        {"synth_shape", {[](TrainConfig& c, const std::string& v) { c.synth_shape = parse_shape_kind(trim(v)); },
                         [](const TrainConfig& c) { return to_string(c.synth_shape); }}},
        {"image_size", int_field(&TrainConfig::image_size, "image_size")},
        {"p", int_field(&TrainConfig::p, "p")},
        {"channels", int_field(&TrainConfig::channels, "channels")},
        {"enc_dim", int_field(&TrainConfig::enc_dim, "enc_dim")},
        {"enc_depth", int_field(&TrainConfig::enc_depth, "enc_depth")},
        {"enc_heads", int_field(&TrainConfig::enc_heads, "enc_heads")},
        {"dec_dim", int_field(&TrainConfig::dec_dim, "dec_dim")},
        {"dec_depth", int_field(&TrainConfig::dec_depth, "dec_depth")},
        {"dec_heads", int_field(&TrainConfig::dec_heads, "dec_heads")},
        {"mlp_ratio", int_field(&TrainConfig::mlp_ratio, "mlp_ratio")},
        {"batch_size", int_field(&TrainConfig::batch_size, "batch_size")},
        {"steps", int_field(&TrainConfig::steps, "steps")},
        {"base_lr", double_field(&TrainConfig::base_lr, "base_lr")},
        {"betas", {[](TrainConfig& c, const std::string& v) { std::tie(c.beta1, c.beta2) = parse_pair("betas", v); },
                   [](const TrainConfig& c) { return fmt_double(c.beta1) + ", " + fmt_double(c.beta2); }}},
        {"weight_decay", double_field(&TrainConfig::weight_decay, "weight_decay")},
        {"warmup_steps", int_field(&TrainConfig::warmup_steps, "warmup_steps")},
        {"ratio_crop", double_field(&TrainConfig::ratio_crop, "ratio_crop")},
        {"ratio_bg", double_field(&TrainConfig::ratio_bg, "ratio_bg")},
        {"a", int_field(&TrainConfig::a, "a")},
        {"theta_range",
         {[](TrainConfig& c, const std::string& v) {
              std::tie(c.theta_min_deg, c.theta_max_deg) = parse_pair("theta_range", v);
          },
          [](const TrainConfig& c) { return fmt_double(c.theta_min_deg) + ", " + fmt_double(c.theta_max_deg); }}},
        {"epsilon_rule", double_field(&TrainConfig::epsilon_rule, "epsilon_rule")},
        {"sinkhorn_max_iters", int_field(&TrainConfig::sinkhorn_max_iters, "sinkhorn_max_iters")},
        {"sinkhorn_tol", double_field(&TrainConfig::sinkhorn_tol, "sinkhorn_tol")},
        {"seed", int_field(&TrainConfig::seed, "seed")},
        {"use_angle_embedding", toggle_field(&Toggles::use_angle_embedding, "use_angle_embedding")},
        {"use_scaling_center_crop", toggle_field(&Toggles::use_scaling_center_crop, "use_scaling_center_crop")},
        {"use_split_masking", toggle_field(&Toggles::use_split_masking, "use_split_masking")},
        {"use_ot_loss", toggle_field(&Toggles::use_ot_loss, "use_ot_loss")},
        {"normalize_targets",
         {[](TrainConfig& c, const std::string& v) { c.normalize_targets = parse_bool("normalize_targets", v); },
          [](const TrainConfig& c) { return std::string(c.normalize_targets ? "true" : "false"); }}},
        {"checkpoint_every", int_field(&TrainConfig::checkpoint_every, "checkpoint_every")},
    };
    return table;
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
    TrainConfig config;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
        if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
        it->second.set(config, value);
    }
    validate(config);
    return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuntimeFailure("unreadable file: cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const TrainConfig& config) {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
    return out;
}

}  // namespace ma3e
