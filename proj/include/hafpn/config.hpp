#pragma once

// Plain-text key=value configuration for pipeline runs. One flat namespace of
// keys covers the backbone, neck, and attention knobs; unknown keys are
// rejected so a typo cannot silently fall back to a default.

#include <cstdint>
#include <map>
#include <ostream>
#include <string>

#include "hafpn/dataio.hpp"
#include "hafpn/pyramid.hpp"

namespace hafpn {

struct PipelineSettings {
    NeckConfig neck;
    std::size_t base_channels = 4;  // first backbone stage width
    std::size_t channels = 8;       // unified pyramid width C
    std::size_t heads = 2;
    std::size_t reduction = 8;
    double hidden_ratio = 2.0;
    std::uint64_t seed = 0;
};

// `key=value` lines; '#' starts a comment; blank lines ignored.
inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::map<std::string, std::string> out;
    const std::vector<std::string> lines = detail::read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = lines[i];
        if (const std::size_t hash = line.find('#'); hash != std::string::npos)
            line = line.substr(0, hash);
        std::string stripped;
        for (char c : line)
            if (c != ' ' && c != '\t') stripped.push_back(c);
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == stripped.size())
            detail::line_error(path, i + 1, "expected key=value");
        if (!out.emplace(stripped.substr(0, eq), stripped.substr(eq + 1)).second)
            detail::line_error(path, i + 1,
                               "duplicate key " + stripped.substr(0, eq));
    }
    return out;
}

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("bad boolean for " + key + ": " + v);
}

inline std::size_t parse_count(const std::string& v, const std::string& key) {
    std::uint64_t n = 0;
    if (!parse_u64_tok(v, n) || n == 0)
        throw std::invalid_argument("bad positive integer for " + key + ": " + v);
    return static_cast<std::size_t>(n);
}

inline NeckVariant parse_variant(const std::string& v) {
    if (v == "fpn") return NeckVariant::fpn;
    if (v == "pafpn") return NeckVariant::pafpn;
    if (v == "hafpn") return NeckVariant::hafpn;
    throw std::invalid_argument("bad variant (fpn|pafpn|hafpn): " + v);
}

inline MergeMode parse_merge(const std::string& v) {
    if (v == "add") return MergeMode::add;
    if (v == "concat") return MergeMode::concat;
    throw std::invalid_argument("bad merge mode (add|concat): " + v);
}

inline HamPlacement parse_placement(const std::string& v) {
    if (v == "pre_merge") return HamPlacement::pre_merge;
    if (v == "post_merge") return HamPlacement::post_merge;
    throw std::invalid_argument("bad placement (pre_merge|post_merge): " + v);
}

}  // namespace detail

inline void apply_settings_kv(PipelineSettings& s,
                              const std::map<std::string, std::string>& kv) {
    for (const auto& [key, val] : kv) {
        if (key == "variant") {
            s.neck.variant = detail::parse_variant(val);
        } else if (key == "merge") {
            s.neck.merge = detail::parse_merge(val);
        } else if (key == "placement") {
            s.neck.placement = detail::parse_placement(val);
        } else if (key == "use_emsa") {
            s.neck.use_emsa = detail::parse_bool(val, key);
        } else if (key == "use_ca") {
            s.neck.use_ca = detail::parse_bool(val, key);
        } else if (key == "ham_identity") {
            s.neck.ham_identity = detail::parse_bool(val, key);
        } else if (key == "bottom_up") {
            s.neck.bottom_up = detail::parse_bool(val, key);
        } else if (key == "base_channels") {
            s.base_channels = detail::parse_count(val, key);
        } else if (key == "channels") {
            s.channels = detail::parse_count(val, key);
        } else if (key == "heads") {
            s.heads = detail::parse_count(val, key);
        } else if (key == "reduction") {
            s.reduction = detail::parse_count(val, key);
        } else if (key == "hidden_ratio") {
            double r = 0;
            if (!detail::parse_double_tok(val, r) || !(r > 0))
                throw std::invalid_argument("bad hidden_ratio: " + val);
            s.hidden_ratio = r;
        } else if (key == "seed") {
            std::uint64_t seed = 0;
            if (!detail::parse_u64_tok(val, seed))
                throw std::invalid_argument("bad seed: " + val);
            s.seed = seed;
        } else {
            throw std::invalid_argument("unknown config key: " + key);
        }
    }
}

inline PipelineSettings load_settings(const std::string& path) {
    PipelineSettings s;
    apply_settings_kv(s, parse_kv_file(path));
    return s;
}

// Every command echoes the configuration it actually ran with.
inline void print_settings(std::ostream& os, const PipelineSettings& s) {
    os << "config.variant=" << to_string(s.neck.variant) << "\n";
    os << "config.merge=" << to_string(s.neck.merge) << "\n";
    os << "config.placement=" << to_string(s.neck.placement) << "\n";
    os << "config.use_emsa=" << (s.neck.use_emsa ? "true" : "false") << "\n";
    os << "config.use_ca=" << (s.neck.use_ca ? "true" : "false") << "\n";
    os << "config.ham_identity=" << (s.neck.ham_identity ? "true" : "false")
       << "\n";
    os << "config.bottom_up=" << (s.neck.bottom_up ? "true" : "false") << "\n";
    os << "config.base_channels=" << s.base_channels << "\n";
    os << "config.channels=" << s.channels << "\n";
    os << "config.heads=" << s.heads << "\n";
    os << "config.reduction=" << s.reduction << "\n";
    os << "config.hidden_ratio=" << s.hidden_ratio << "\n";
    os << "config.seed=" << s.seed << "\n";
}

template <typename T>
PipelineParams<T> build_pipeline(const PipelineSettings& s, std::size_t image_h,
                                 std::size_t image_w) {
    Rng rng(s.seed);
    return pipeline_init<T>(rng, s.neck, s.base_channels, s.channels, s.heads,
                            s.reduction, s.hidden_ratio, image_h, image_w);
}

}  // namespace hafpn
