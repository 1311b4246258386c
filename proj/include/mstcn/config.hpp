#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mstcn/errors.hpp"
#include "mstcn/losses.hpp"
#include "mstcn/model.hpp"
#include "mstcn/optimizer.hpp"

namespace mstcn {

/// Everything a run needs. Model classes/input_dim of 0 mean "infer from
/// the dataset". Defaults mirror the reference setup: 4 stages, 10 layers,
/// 64 filters, lambda 0.15, tau 4, Adam at 0.0005 for 50 epochs.
struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    AdamConfig adam;
    int epochs = 50;
    std::uint64_t seed = 1;

    std::string data_root;
    std::string train_split; // empty: <data_root>/train.split
    std::string test_split;  // empty: <data_root>/test.split
    int downsample = 1;
    std::string output_dir;

    std::vector<std::string> exclude_classes; // names excluded from segment metrics
    std::vector<double> thresholds = {0.10, 0.25, 0.50};

    std::string resolved_train_split() const {
        return train_split.empty() ? data_root + "/train.split" : train_split;
    }
    std::string resolved_test_split() const {
        return test_split.empty() ? data_root + "/test.split" : test_split;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(value);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

/// Assign one dotted key ("section.key"). The same routine backs both the
/// config file parser and CLI flag overrides, so the two can never drift.
inline void set_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "model.stages") c.model.num_stages = parse_int(key, value);
    else if (key == "model.layers") c.model.num_layers = parse_int(key, value);
    else if (key == "model.filters") c.model.num_filters = parse_int(key, value);
    else if (key == "model.classes") c.model.num_classes = parse_int(key, value);
    else if (key == "model.input_dim") c.model.input_dim = parse_int(key, value);
    else if (key == "model.dropout") c.model.dropout = parse_double(key, value);
    else if (key == "model.pass_features") c.model.pass_features = parse_bool(key, value);
    else if (key == "model.dilations") {
        c.model.dilations.clear();
        for (const std::string& item : split_list(value)) {
            c.model.dilations.push_back(parse_int(key, item));
        }
    } else if (key == "loss.smoothing") c.loss.smoothing = smoothing_from_string(value);
    else if (key == "loss.lambda") c.loss.lambda = parse_double(key, value);
    else if (key == "loss.tau") c.loss.tau = parse_double(key, value);
    else if (key == "optim.lr") c.adam.lr = parse_double(key, value);
    else if (key == "optim.epochs") c.epochs = parse_int(key, value);
    else if (key == "optim.seed") c.seed = parse_u64(key, value);
    else if (key == "data.root") c.data_root = value;
    else if (key == "data.train_split") c.train_split = value;
    else if (key == "data.test_split") c.test_split = value;
    else if (key == "data.downsample") c.downsample = parse_int(key, value);
    else if (key == "output.dir") c.output_dir = value;
    else if (key == "eval.exclude") c.exclude_classes = split_list(value);
    else if (key == "eval.thresholds") {
        c.thresholds.clear();
        for (const std::string& item : split_list(value)) {
            c.thresholds.push_back(parse_double(key, item));
        }
        if (c.thresholds.empty()) throw ConfigError("eval.thresholds: need at least one value");
    } else {
        throw ConfigError("unknown configuration key '" + key + "'");
    }
}

/// Scan `key = value` text with [section] headers; # and ; start comment
/// lines. Calls fn("section.key", value, lineno) per entry.
template <typename Fn>
inline void scan_ini(std::istream& in, Fn&& fn) {
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            }
            section = detail::trim(t.substr(1, t.size() - 2));
            if (section.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            }
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = detail::trim(t.substr(0, eq));
        std::string value = detail::trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        fn(section.empty() ? key : section + "." + key, value, lineno);
    }
}

/// Parse a run configuration on top of `base` defaults.
inline RunConfig parse_run_config(std::istream& in, RunConfig base = {}) {
    RunConfig c = std::move(base);
    scan_ini(in, [&](const std::string& key, const std::string& value, std::size_t lineno) {
        try {
            set_config_key(c, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    });
    return c;
}

inline RunConfig load_run_config(const std::string& path, RunConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_run_config(in, std::move(base));
}

namespace detail {

inline std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i];
    }
    return out;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace detail

/// Fully resolved echo of a configuration; parsing it back reproduces the
/// same RunConfig. Written next to every run's outputs.
inline std::string serialize_run_config(const RunConfig& c) {
    using detail::format_double;
    std::ostringstream os;
    os << "[model]\n";
    os << "stages = " << c.model.num_stages << "\n";
    os << "layers = " << c.model.num_layers << "\n";
    os << "filters = " << c.model.num_filters << "\n";
    os << "classes = " << c.model.num_classes << "\n";
    os << "input_dim = " << c.model.input_dim << "\n";
    os << "dropout = " << format_double(c.model.dropout) << "\n";
    os << "pass_features = " << (c.model.pass_features ? "true" : "false") << "\n";
    std::vector<std::string> dils;
    for (int d : c.model.dilations) dils.push_back(std::to_string(d));
    os << "dilations = " << detail::join_list(dils) << "\n";
    os << "\n[loss]\n";
    os << "smoothing = " << to_string(c.loss.smoothing) << "\n";
    os << "lambda = " << format_double(c.loss.lambda) << "\n";
    os << "tau = " << format_double(c.loss.tau) << "\n";
    os << "\n[optim]\n";
    os << "lr = " << format_double(c.adam.lr) << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "seed = " << c.seed << "\n";
    os << "\n[data]\n";
    os << "root = " << c.data_root << "\n";
    os << "train_split = " << c.train_split << "\n";
    os << "test_split = " << c.test_split << "\n";
    os << "downsample = " << c.downsample << "\n";
    os << "\n[output]\n";
    os << "dir = " << c.output_dir << "\n";
    os << "\n[eval]\n";
    os << "exclude = " << detail::join_list(c.exclude_classes) << "\n";
    std::vector<std::string> thr;
    for (double v : c.thresholds) thr.push_back(format_double(v));
    os << "thresholds = " << detail::join_list(thr) << "\n";
    return os.str();
}

} // namespace mstcn
