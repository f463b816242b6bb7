// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
#include "seenflow/config.hpp"

#include <charconv>
#include <functional>
#include <set>
#include <sstream>

namespace seenflow {

namespace {

struct Field {
    std::string key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

std::int64_t parse_int(const std::string& s) {
    std::size_t pos = 0;
    std::int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::invalid_argument("not a boolean: '" + s + "'");
}

template <typename T>
Field make_field(const std::string& key, T PipelineConfig::* member) {
    Field f;
    f.key = key;
    f.get = [member](const PipelineConfig& c) -> std::string {
        if constexpr (std::is_same_v<T, double>)
            return fmt_double(c.*member);
        else if constexpr (std::is_same_v<T, bool>)
            return (c.*member) ? "true" : "false";
        else if constexpr (std::is_same_v<T, std::string>)
            return c.*member;
        else
            return std::to_string(c.*member);
    };
    f.set = [member](PipelineConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<T, double>)
            c.*member = parse_double(v);
        else if constexpr (std::is_same_v<T, bool>)
            c.*member = parse_bool(v);
        else if constexpr (std::is_same_v<T, std::string>)
            c.*member = v;
        else if constexpr (std::is_same_v<T, std::uint64_t>)
            c.*member = static_cast<std::uint64_t>(parse_int(v));
        else if constexpr (std::is_same_v<T, std::int64_t>)
            c.*member = parse_int(v);
        else
            c.*member = static_cast<T>(parse_int(v));
    };
    return f;
}

template <typename T>
Field make_train_field(const std::string& key, TrainSection PipelineConfig::* section,
                       T TrainSection::* member) {
    Field f;
    f.key = key;
    f.get = [section, member](const PipelineConfig& c) -> std::string {
        if constexpr (std::is_same_v<T, double>)
            return fmt_double(c.*section.*member);
        else
            return std::to_string(c.*section.*member);
    };
    f.set = [section, member](PipelineConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<T, double>)
            c.*section.*member = parse_double(v);
        else if constexpr (std::is_same_v<T, std::int64_t>)
            c.*section.*member = parse_int(v);
        else
            c.*section.*member = static_cast<T>(parse_int(v));
    };
    return f;
}

std::vector<Field> make_train_fields(const std::string& prefix,
                                     TrainSection PipelineConfig::* section) {
    return {
        make_train_field(prefix + ".steps", section, &TrainSection::steps),
        make_train_field(prefix + ".batch", section, &TrainSection::batch),
        make_train_field(prefix + ".lr", section, &TrainSection::lr),
        make_train_field(prefix + ".warmup", section, &TrainSection::warmup),
        make_train_field(prefix + ".weight_decay", section, &TrainSection::weight_decay),
        make_train_field(prefix + ".ema_decay", section, &TrainSection::ema_decay),
    };
}

const std::vector<Field>& registry() {
    static const std::vector<Field> fields = [] {
        std::vector<Field> f = {
            make_field("precision", &PipelineConfig::precision),
            make_field("seed", &PipelineConfig::seed),
            make_field("threads", &PipelineConfig::threads),
            make_field("out_dir", &PipelineConfig::out_dir),
            make_field("grid.voxel_size", &PipelineConfig::voxel_size),
            make_field("grid.truncation_factor", &PipelineConfig::truncation_factor),
            make_field("grid.block_edge", &PipelineConfig::block_edge),
            make_field("chunk.size", &PipelineConfig::chunk_size),
            make_field("chunk.downsample", &PipelineConfig::downsample),
            make_field("scene.count", &PipelineConfig::scene_count),
            make_field("scene.frames", &PipelineConfig::scene_frames),
            make_field("scene.room_min", &PipelineConfig::room_min),
            make_field("scene.room_max", &PipelineConfig::room_max),
            make_field("scene.room_height", &PipelineConfig::room_height),
            make_field("scene.objects_min", &PipelineConfig::objects_min),
            make_field("scene.objects_max", &PipelineConfig::objects_max),
            make_field("scene.image_size", &PipelineConfig::image_size),
            make_field("scene.fov_deg", &PipelineConfig::fov_deg),
            make_field("scene.max_depth", &PipelineConfig::max_depth),
            make_field("scene.vocabulary", &PipelineConfig::vocabulary),
            make_field("scene.chunks_per_scene", &PipelineConfig::chunks_per_scene),
            make_field("scene.chunk_min_known", &PipelineConfig::chunk_min_known),
            make_field("vae.latent_channels", &PipelineConfig::latent_channels),
            make_field("vae.c0", &PipelineConfig::vae_c0),
            make_field("vae.c1", &PipelineConfig::vae_c1),
            make_field("vae.kl_weight", &PipelineConfig::kl_weight),
            make_field("flow.hidden", &PipelineConfig::flow_hidden),
            make_field("flow.blocks", &PipelineConfig::flow_blocks),
            make_field("flow.heads", &PipelineConfig::flow_heads),
            make_field("flow.attention", &PipelineConfig::flow_attention),
            make_field("flow.layout_dim", &PipelineConfig::layout_dim),
            make_field("flow.drop_p", &PipelineConfig::drop_p),
            make_field("control.rank", &PipelineConfig::control_rank),
            make_field("control.keep_fraction", &PipelineConfig::control_keep_fraction),
            make_field("sampler.steps", &PipelineConfig::sampler_steps),
            make_field("sampler.cfg_scale", &PipelineConfig::cfg_scale),
            make_field("tiling.overlap", &PipelineConfig::overlap_ratio),
            make_field("eval.points", &PipelineConfig::eval_points),
        };
        for (const Field& t : make_train_fields("vae", &PipelineConfig::vae_train)) f.push_back(t);
        for (const Field& t : make_train_fields("flow", &PipelineConfig::flow_train))
            f.push_back(t);
        for (const Field& t : make_train_fields("control", &PipelineConfig::control_train))
            f.push_back(t);
        return f;
    }();
    return fields;
}

const Field* find_field(const std::string& key) {
    for (const Field& f : registry())
        if (f.key == key) return &f;
    return nullptr;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    std::size_t e = s.find_last_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> PipelineConfig::vocabulary_list() const {
    std::vector<std::string> out;
    std::stringstream ss(vocabulary);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

PipelineConfig parse_config_text(const std::string& text, const std::string& origin) {
    PipelineConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    std::set<std::string> seen;
    while (std::getline(is, line)) {
        ++line_no;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        const Field* field = find_field(key);
        if (!field)
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": unknown config key '" + key + "'");
        if (!seen.insert(key).second)
            throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                                     ": duplicate config key '" + key + "'");
        try {
            field->set(cfg, value);
        } catch (const std::exception& e) {
            throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": bad value for '" +
                                     key + "': " + e.what());
        }
    }
    if (cfg.precision != "f32" && cfg.precision != "f64")
        throw std::runtime_error(origin + ": precision must be f32 or f64");
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string serialize_config(const PipelineConfig& cfg) {
    std::ostringstream os;
    for (const Field& f : registry()) os << f.key << " = " << f.get(cfg) << "\n";
    return os.str();
}

void save_config(const PipelineConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << serialize_config(cfg);
}

void apply_config_override(PipelineConfig& cfg, const std::string& key,
                           const std::string& value) {
    const Field* field = find_field(key);
    if (!field) throw std::runtime_error("unknown config key '" + key + "'");
    field->set(cfg, value);
}

}  // namespace seenflow
