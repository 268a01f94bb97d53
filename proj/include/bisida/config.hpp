#pragma once

#include <cstdint>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "bisida/error.hpp"
#include "bisida/styler.hpp"
#include "bisida/trainer.hpp"

namespace bisida {

struct DataConfig {
    std::string root = "data";
    std::string source = "synthA";
    std::string source_val = "synthA_val";
    std::string target = "realB";
    std::string target_val = "realB_val";
    std::size_t train_count = 200;
    std::size_t val_count = 50;
    std::size_t image_size = 96;

    bool operator==(const DataConfig&) const = default;
};

struct StylerConfig {
    std::size_t width = 16;
    double style_weight = 0.1;
    std::size_t pretrain_steps = 1500;
    std::size_t steps = 1500;
    double learning_rate = 1e-3;
    std::size_t crop = 64;

    bool operator==(const StylerConfig&) const = default;
};

struct TrainConfig {
    std::size_t seg_width = 16;
    std::size_t steps = 3000;
    std::size_t eval_every = 250;
    std::size_t crop = 64;
    std::string optimizer = "adam";
    double learning_rate = 5e-4;
    double weight_decay = 0.0;
    bool zero_heads = true;
    bool trunk_from_styler = true;

    bool operator==(const TrainConfig&) const = default;

    SegInit init() const { return {zero_heads, trunk_from_styler}; }

    OptimConfig optim() const
    {
        OptimConfig c;
        c.kind = optimizer == "sgd" ? OptimKind::sgd : OptimKind::adam;
        c.learning_rate = learning_rate;
        c.weight_decay = weight_decay;
        return c;
    }
};

struct Config {
    std::uint64_t seed = 7;
    HyperParams hp;
    AblationToggles toggles;
    DataConfig data;
    StylerConfig styler;
    TrainConfig train;

    bool operator==(const Config&) const = default;

    void validate() const
    {
        hp.validate();
        if (data.train_count == 0 || data.val_count == 0) throw ValidationError("invariant violated: split counts > 0");
        if (data.image_size < 16 || data.image_size % 4 != 0) {
            throw ValidationError("invariant violated: image_size >= 16 and divisible by 4");
        }
        for (std::size_t crop : {styler.crop, train.crop}) {
            if (crop < 8 || crop % 4 != 0 || crop > data.image_size) {
                throw ValidationError("invariant violated: crop divisible by 4, >= 8 and <= image_size");
            }
        }
        if (styler.width == 0 || train.seg_width == 0) throw ValidationError("invariant violated: widths > 0");
        if (!(styler.style_weight >= 0.0)) throw ValidationError("invariant violated: style_weight >= 0");
        if (!(styler.learning_rate > 0.0 && train.learning_rate > 0.0)) {
            throw ValidationError("invariant violated: learning_rate > 0");
        }
        if (!(train.weight_decay >= 0.0)) throw ValidationError("invariant violated: weight_decay >= 0");
        if (train.eval_every == 0) throw ValidationError("invariant violated: eval_every > 0");
        if (train.trunk_from_styler && styler.width != train.seg_width) {
            throw ValidationError("invariant violated: trunk_from_styler needs styler.width == train.seg_width");
        }
        if (train.optimizer != "adam" && train.optimizer != "sgd") {
            throw ValidationError("invariant violated: optimizer in {adam, sgd}");
        }
    }
};

namespace config_detail {

enum class Kind { integer, real, boolean, text };

struct Field {
    const char* section;
    const char* key;
    Kind kind;
    std::function<void*(Config&)> ref;
};

template <typename M>
Field field(const char* section, const char* key, M Config::*outer, auto inner)
{
    using Inner = std::remove_reference_t<decltype(std::declval<M&>().*inner)>;
    Kind kind = std::is_same_v<Inner, bool>       ? Kind::boolean
                : std::is_same_v<Inner, double>   ? Kind::real
                : std::is_same_v<Inner, std::string> ? Kind::text
                                                  : Kind::integer;
    return Field{section, key, kind, [outer, inner](Config& c) -> void* { return &((c.*outer).*inner); }};
}

inline const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(Field{"run", "seed", Kind::integer, [](Config& c) -> void* { return &c.seed; }});
        f.push_back(field("hyper", "tau", &Config::hp, &HyperParams::tau));
        f.push_back(field("hyper", "eta", &Config::hp, &HyperParams::eta));
        f.push_back(field("hyper", "temp", &Config::hp, &HyperParams::temp));
        f.push_back(field("hyper", "k", &Config::hp, &HyperParams::k));
        f.push_back(field("hyper", "lambda_u", &Config::hp, &HyperParams::lambda_u));
        f.push_back(field("hyper", "p_s2t", &Config::hp, &HyperParams::p_s2t));
        f.push_back(field("hyper", "p_t2s", &Config::hp, &HyperParams::p_t2s));
        f.push_back(field("hyper", "lambda_rw", &Config::hp, &HyperParams::lambda_rw));
        f.push_back(field("hyper", "gamma_rw", &Config::hp, &HyperParams::gamma_rw));
        f.push_back(field("hyper", "alpha_lo", &Config::hp, &HyperParams::alpha_lo));
        f.push_back(field("hyper", "alpha_hi", &Config::hp, &HyperParams::alpha_hi));
        f.push_back(field("hyper", "threshold_before_sharpen", &Config::hp, &HyperParams::threshold_before_sharpen));
        f.push_back(field("ablation", "s2t", &Config::toggles, &AblationToggles::s2t));
        f.push_back(field("ablation", "t2s", &Config::toggles, &AblationToggles::t2s));
        f.push_back(field("ablation", "pseudo_label", &Config::toggles, &AblationToggles::pseudo_label));
        f.push_back(field("ablation", "self_ensemble", &Config::toggles, &AblationToggles::self_ensemble));
        f.push_back(field("data", "root", &Config::data, &DataConfig::root));
        f.push_back(field("data", "source", &Config::data, &DataConfig::source));
        f.push_back(field("data", "source_val", &Config::data, &DataConfig::source_val));
        f.push_back(field("data", "target", &Config::data, &DataConfig::target));
        f.push_back(field("data", "target_val", &Config::data, &DataConfig::target_val));
        f.push_back(field("data", "train_count", &Config::data, &DataConfig::train_count));
        f.push_back(field("data", "val_count", &Config::data, &DataConfig::val_count));
        f.push_back(field("data", "image_size", &Config::data, &DataConfig::image_size));
        f.push_back(field("styler", "width", &Config::styler, &StylerConfig::width));
        f.push_back(field("styler", "style_weight", &Config::styler, &StylerConfig::style_weight));
        f.push_back(field("styler", "pretrain_steps", &Config::styler, &StylerConfig::pretrain_steps));
        f.push_back(field("styler", "steps", &Config::styler, &StylerConfig::steps));
        f.push_back(field("styler", "learning_rate", &Config::styler, &StylerConfig::learning_rate));
        f.push_back(field("styler", "crop", &Config::styler, &StylerConfig::crop));
        f.push_back(field("train", "seg_width", &Config::train, &TrainConfig::seg_width));
        f.push_back(field("train", "steps", &Config::train, &TrainConfig::steps));
        f.push_back(field("train", "eval_every", &Config::train, &TrainConfig::eval_every));
        f.push_back(field("train", "crop", &Config::train, &TrainConfig::crop));
        f.push_back(field("train", "optimizer", &Config::train, &TrainConfig::optimizer));
        f.push_back(field("train", "learning_rate", &Config::train, &TrainConfig::learning_rate));
        f.push_back(field("train", "weight_decay", &Config::train, &TrainConfig::weight_decay));
        f.push_back(field("train", "zero_heads", &Config::train, &TrainConfig::zero_heads));
        f.push_back(field("train", "trunk_from_styler", &Config::train, &TrainConfig::trunk_from_styler));
        return f;
    }();
    return table;
}

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// Strips a trailing '#' comment that is not inside double quotes.
inline std::string strip_comment(const std::string& line)
{
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

inline std::string format_real(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void assign(const Field& f, Config& cfg, const std::string& raw, std::size_t line_no)
{
    const auto type_error = [&](const char* expected) {
        return ValidationError("config line " + std::to_string(line_no) + ": '" + f.section + "." + f.key +
                               "' expects " + expected + ", got '" + raw + "'");
    };
    void* slot = f.ref(cfg);
    switch (f.kind) {
    case Kind::boolean:
        if (raw == "true") {
            *static_cast<bool*>(slot) = true;
        } else if (raw == "false") {
            *static_cast<bool*>(slot) = false;
        } else {
            throw type_error("a boolean (true/false)");
        }
        break;
    case Kind::integer: {
        if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos) throw type_error("an integer");
        std::uint64_t v = 0;
        try {
            v = std::stoull(raw);
        } catch (const std::exception&) {
            throw type_error("an integer");
        }
        if (std::string_view(f.key) == "seed") {
            *static_cast<std::uint64_t*>(slot) = v;
        } else {
            *static_cast<std::size_t*>(slot) = static_cast<std::size_t>(v);
        }
        break;
    }
    case Kind::real: {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(raw, &used);
        } catch (const std::exception&) {
            throw type_error("a number");
        }
        if (used != raw.size() || !std::isfinite(v)) throw type_error("a number");
        *static_cast<double*>(slot) = v;
        break;
    }
    case Kind::text: {
        std::string v = raw;
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
        if (v.find('"') != std::string::npos) throw type_error("a string");
        *static_cast<std::string*>(slot) = v;
        break;
    }
    }
}

}  // namespace config_detail

// INI-style grammar: [section] headers, key = value lines, '#' comments.
// Omitted keys keep their defaults; the result is validated.
inline Config parse_config(std::string_view text)
{
    using namespace config_detail;
    Config cfg;
    std::string section;
    std::vector<std::string> seen;
    std::istringstream in{std::string(text)};
    std::string raw_line;
    std::size_t line_no = 0;
    while (std::getline(in, raw_line)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw_line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ValidationError("config line " + std::to_string(line_no) + ": malformed section header");
            section = trim(std::string_view(line).substr(1, line.size() - 2));
            bool known = false;
            for (const auto& f : fields()) known = known || section == f.section;
            if (!known) throw ValidationError("config line " + std::to_string(line_no) + ": unknown section '" + section + "'");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (section.empty()) {
            throw ValidationError("config line " + std::to_string(line_no) + ": key '" + key + "' outside any section");
        }
        const Field* match = nullptr;
        for (const auto& f : fields()) {
            if (section == f.section && key == f.key) match = &f;
        }
        if (!match) throw ValidationError("unknown config key '" + section + "." + key + "' on line " + std::to_string(line_no));
        const std::string qualified = section + "." + key;
        for (const auto& s : seen) {
            if (s == qualified) {
                throw ValidationError("config line " + std::to_string(line_no) + ": duplicate key '" + qualified + "'");
            }
        }
        seen.push_back(qualified);
        assign(*match, cfg, value, line_no);
    }
    cfg.validate();
    return cfg;
}

// Applies "section.key=value" on top of cfg and revalidates.
inline void apply_override(Config& cfg, const std::string& assignment)
{
    using namespace config_detail;
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ValidationError("override '" + assignment + "' is not of the form section.key=value");
    }
    const std::string section = trim(std::string_view(assignment).substr(0, dot));
    const std::string key = trim(std::string_view(assignment).substr(dot + 1, eq - dot - 1));
    const std::string value = trim(std::string_view(assignment).substr(eq + 1));
    for (const auto& f : fields()) {
        if (section == f.section && key == f.key) {
            assign(f, cfg, value, 0);
            cfg.validate();
            return;
        }
    }
    throw ValidationError("unknown config key '" + section + "." + key + "'");
}

// Every field, defaults included, in parseable form.
inline std::string serialize_config(const Config& cfg)
{
    using namespace config_detail;
    Config& c = const_cast<Config&>(cfg);
    std::ostringstream out;
    std::string section;
    for (const auto& f : fields()) {
        if (section != f.section) {
            if (!section.empty()) out << '\n';
            section = f.section;
            out << '[' << section << "]\n";
        }
        out << f.key << " = ";
        const void* slot = f.ref(c);
        switch (f.kind) {
        case Kind::boolean: out << (*static_cast<const bool*>(slot) ? "true" : "false"); break;
        case Kind::integer:
            if (std::string_view(f.key) == "seed") {
                out << *static_cast<const std::uint64_t*>(slot);
            } else {
                out << *static_cast<const std::size_t*>(slot);
            }
            break;
        case Kind::real: out << format_real(*static_cast<const double*>(slot)); break;
        case Kind::text: out << '"' << *static_cast<const std::string*>(slot) << '"'; break;
        }
        out << '\n';
    }
    return out.str();
}

// The same text with every line turned into a '# ' comment.
inline std::string config_comment_block(const Config& cfg)
{
    std::istringstream in(serialize_config(cfg));
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out << "# " << line << '\n';
    }
    return out.str();
}

}  // namespace bisida
