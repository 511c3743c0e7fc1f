#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "histofuse/core.hpp"
#include "histofuse/eval.hpp"
#include "histofuse/hashing.hpp"
#include "histofuse/manifold.hpp"
#include "histofuse/ssae.hpp"
#include "histofuse/synth.hpp"

namespace histofuse {

struct PipelineConfig {
    // [run]
    std::uint64_t seed = 7;
    std::string out = "histofuse-out";
    int threads = 1;

    // [dataset]
    std::string root;
    std::string magnification = "all";  // 40, 100, 200, 400 or all
    double train_ratio = 0.6;
    double val_ratio = 0.2;
    double test_ratio = 0.2;

    // [patch]
    int patch_size = 224;
    int patch_stride = 112;

    HashConfig hash;

    // [manifold]
    CsmlParams manifold;
    int manifold_downsample = 32;

    // [fusion]
    int dca_rank = 0;  // 0 selects c-1
    bool dca_standardize = true;  // z-score both streams before fitting

    TrainConfig train;

    SynthConfig synth;

    // [eval]
    std::string task = "both";  // binary, multiclass or both
    bool patch_level = false;

    std::vector<int> magnifications() const {
        if (magnification == "all") return {kMagnifications.begin(), kMagnifications.end()};
        return {std::stoi(magnification)};
    }
    bool wants(Task t) const { return task == "both" || task == to_string(t); }

    void validate() const;
};

namespace detail {

using FieldRef = std::variant<int*, double*, std::uint64_t*, std::string*, bool*, std::vector<int>*>;

struct Field {
    FieldRef ref;
    bool hashed = true;  // part of the config hash
};

inline std::map<std::string, Field> config_fields(PipelineConfig& c) {
    return {
        {"run.seed", {&c.seed}},
        {"run.out", {&c.out, false}},
        {"run.threads", {&c.threads, false}},
        {"dataset.root", {&c.root}},
        {"dataset.magnification", {&c.magnification}},
        {"dataset.train_ratio", {&c.train_ratio}},
        {"dataset.val_ratio", {&c.val_ratio}},
        {"dataset.test_ratio", {&c.test_ratio}},
        {"patch.size", {&c.patch_size}},
        {"patch.stride", {&c.patch_stride}},
        {"hash.dwt_levels", {&c.hash.dwt_levels}},
        {"hash.dwt_bits", {&c.hash.dwt_bits}},
        {"hash.svd_block", {&c.hash.svd_block}},
        {"hash.svd_overlap", {&c.hash.svd_overlap}},
        {"hash.svd_k", {&c.hash.svd_k}},
        {"hash.fp_max_points", {&c.hash.fp_max_points}},
        {"hash.harris_sigma", {&c.hash.harris.sigma}},
        {"hash.harris_kappa", {&c.hash.harris.kappa}},
        {"hash.harris_threshold", {&c.hash.harris.threshold}},
        {"hash.harris_margin", {&c.hash.harris.margin}},
        {"manifold.landmarks", {&c.manifold.landmarks}},
        {"manifold.k", {&c.manifold.k}},
        {"manifold.dim", {&c.manifold.dim}},
        {"manifold.k_infer", {&c.manifold.k_infer}},
        {"manifold.max_graph_samples", {&c.manifold.max_graph_samples}},
        {"manifold.downsample", {&c.manifold_downsample}},
        {"fusion.rank", {&c.dca_rank}},
        {"fusion.standardize", {&c.dca_standardize}},
        {"ssae.max_epochs", {&c.train.max_epochs}},
        {"ssae.lr", {&c.train.lr}},
        {"ssae.momentum", {&c.train.momentum}},
        {"ssae.lr_drop_period", {&c.train.lr_drop_period}},
        {"ssae.lr_drop_factor", {&c.train.lr_drop_factor}},
        {"ssae.l2_pretrain", {&c.train.l2_pretrain}},
        {"ssae.l2_finetune", {&c.train.l2_finetune}},
        {"ssae.sparsity_weight", {&c.train.sparsity_weight}},
        {"ssae.sparsity_target", {&c.train.sparsity_target}},
        {"ssae.batch_size", {&c.train.batch_size}},
        {"ssae.early_stop_patience", {&c.train.early_stop_patience}},
        {"ssae.gradient_decay", {&c.train.gradient_decay}},
        {"ssae.hidden1", {&c.train.hidden1}},
        {"ssae.hidden2", {&c.train.hidden2}},
        {"synth.images_per_class", {&c.synth.images_per_class}},
        {"synth.magnifications", {&c.synth.magnifications}},
        {"synth.size", {&c.synth.size}},
        {"eval.task", {&c.task}},
        {"eval.patch_level", {&c.patch_level}},
    };
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
    T v{};
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + text + "' for " + key);
    return v;
}

inline void assign(const FieldRef& ref, const std::string& value, const std::string& key) {
    std::visit(
        [&](auto* p) {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                *p = value;
            } else if constexpr (std::is_same_v<T, bool>) {
                if (value == "true" || value == "1") *p = true;
                else if (value == "false" || value == "0") *p = false;
                else throw ConfigError("invalid boolean '" + value + "' for " + key);
            } else if constexpr (std::is_same_v<T, std::vector<int>>) {
                p->clear();
                std::stringstream ss(value);
                std::string item;
                while (std::getline(ss, item, ',')) p->push_back(parse_number<int>(trim(item), key));
            } else {
                *p = parse_number<T>(value, key);
            }
        },
        ref);
}

}  // namespace detail

// Applies one `section.key = value` setting.
inline void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    auto fields = detail::config_fields(cfg);
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    detail::assign(it->second.ref, value, key);
}

// Flat key=value text with [section] headers and '#' comments.
inline PipelineConfig parse_config(const std::string& text, const std::string& origin = "config") {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "setting outside of a section");
        const std::string key = section + "." + detail::trim(line.substr(0, eq));
        try {
            set_config_value(cfg, key, detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

inline nlohmann::ordered_json config_json(const PipelineConfig& cfg, bool hashed_only = false) {
    PipelineConfig copy = cfg;
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [key, field] : detail::config_fields(copy)) {
        if (hashed_only && !field.hashed) continue;
        std::visit([&](auto* p) { j[key] = *p; }, field.ref);
    }
    return j;
}

// Fingerprint over every semantic field; the output directory and thread
// count do not affect results and are excluded.
inline std::string config_hash(const PipelineConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config_json(cfg, true).dump())));
    return buf;
}

inline std::string render_config(const PipelineConfig& cfg) {
    std::ostringstream os;
    std::string section;
    const auto j = config_json(cfg);
    for (const auto& [key, value] : j.items()) {
        const auto dot = key.find('.');
        if (key.substr(0, dot) != section) {
            section = key.substr(0, dot);
            os << (os.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
        }
        os << key.substr(dot + 1) << " = ";
        if (value.is_string()) os << value.get<std::string>();
        else if (value.is_array()) {
            for (std::size_t i = 0; i < value.size(); ++i) os << (i ? "," : "") << value[i].get<int>();
        } else os << value.dump();
        os << '\n';
    }
    return os.str();
}

inline void PipelineConfig::validate() const {
    if (threads < 1) throw ConfigError("run.threads must be >= 1");
    if (magnification != "all") {
        int m = 0;
        try {
            m = detail::parse_number<int>(magnification, "dataset.magnification");
        } catch (const ConfigError&) {
            m = 0;
        }
        if (!is_magnification(m)) throw ConfigError("dataset.magnification must be 40, 100, 200, 400 or all");
    }
    const double sum = train_ratio + val_ratio + test_ratio;
    if (train_ratio <= 0 || val_ratio < 0 || test_ratio < 0 || std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("dataset ratios must be nonnegative, train > 0, and sum to 1");
    }
    if (patch_size < 8 || patch_stride < 1 || patch_stride > patch_size) {
        throw ConfigError("patch.size must be >= 8 and 0 < patch.stride <= patch.size");
    }
    if (hash.dwt_levels < 1 || (patch_size >> hash.dwt_levels) < 1) throw ConfigError("hash.dwt_levels too large for patch.size");
    const int ll = (patch_size + (1 << hash.dwt_levels) - 1) >> hash.dwt_levels;
    if (hash.dwt_bits < 1 || hash.dwt_bits > ll * ll) {
        throw ConfigError("hash.dwt_bits must lie in [1, " + std::to_string(ll * ll) + "] for this patch size");
    }
    if (hash.svd_block < 1 || hash.svd_block > patch_size || hash.svd_overlap < 0 || hash.svd_overlap >= hash.svd_block) {
        throw ConfigError("hash.svd_block must fit the patch and exceed hash.svd_overlap >= 0");
    }
    if (hash.svd_k < 1 || hash.svd_k > hash.svd_block) throw ConfigError("hash.svd_k must lie in [1, svd_block]");
    if (hash.fp_max_points < 1) throw ConfigError("hash.fp_max_points must be >= 1");
    if (hash.harris.sigma <= 0 || hash.harris.threshold < 0 || hash.harris.margin < 0) {
        throw ConfigError("invalid Harris parameters");
    }
    if (manifold.landmarks < 2 || manifold.k < 1 || manifold.dim < 1 || manifold.dim >= manifold.landmarks ||
        manifold.k_infer < 1 || manifold.max_graph_samples < 0) {
        throw ConfigError("invalid manifold parameters (need landmarks > dim >= 1, k >= 1, k_infer >= 1)");
    }
    if (manifold_downsample < 1 || manifold_downsample > patch_size) {
        throw ConfigError("manifold.downsample must lie in [1, patch.size]");
    }
    if (dca_rank < 0) throw ConfigError("fusion.rank must be >= 0");
    train.validate();
    if (synth.images_per_class < 1 || synth.size < 8 || synth.magnifications.empty()) {
        throw ConfigError("invalid synth parameters");
    }
    for (int m : synth.magnifications) {
        if (!is_magnification(m)) throw ConfigError("synth.magnifications must be drawn from 40,100,200,400");
    }
    if (task != "both" && task != "binary" && task != "multiclass") {
        throw ConfigError("eval.task must be binary, multiclass or both");
    }
}

}  // namespace histofuse
