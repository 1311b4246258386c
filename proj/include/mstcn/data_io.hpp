#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mstcn/bytes.hpp"
#include "mstcn/errors.hpp"
#include "mstcn/rng.hpp"
#include "mstcn/tensor.hpp"

namespace mstcn {

/// One video: a (D, T) feature matrix and a label per frame.
struct SequenceSample {
    std::string id;
    Tensor features;
    std::vector<int> labels;
};

/// Bidirectional class name <-> contiguous id map.
struct ClassMapping {
    std::vector<std::string> names; // index == id
    std::map<std::string, int> ids;

    static ClassMapping from_names(std::vector<std::string> names) {
        ClassMapping m;
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (m.ids.count(names[i])) throw DataError("duplicate class name '" + names[i] + "'");
            m.ids[names[i]] = static_cast<int>(i);
        }
        m.names = std::move(names);
        return m;
    }

    int size() const { return static_cast<int>(names.size()); }

    int id_of(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw DataError("unknown class name '" + name + "'");
        return it->second;
    }

    const std::string& name_of(int id) const {
        if (id < 0 || id >= size()) throw DataError("class id " + std::to_string(id) + " out of range");
        return names[static_cast<std::size_t>(id)];
    }
};

// ---------------------------------------------------------------------------
// Feature files ("FMAT": magic, u16 version, u32 D, u32 T, D*T f32 LE values,
// channel-major so each channel's time series is contiguous).

inline constexpr char kFeatureMagic[4] = {'F', 'M', 'A', 'T'};
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::uint64_t kMaxFeatureElements = 1ULL << 31;

inline void write_feature_stream(std::ostream& out, const Tensor& features) {
    if (features.ndim() != 2) throw ShapeError("feature tensor must be (D, T)");
    for (double v : features.data) {
        if (!std::isfinite(v) || !std::isfinite(static_cast<double>(static_cast<float>(v)))) {
            throw FormatError(FormatError::Kind::non_finite,
                              "feature value " + std::to_string(v) + " not representable");
        }
    }
    write_bytes(out, kFeatureMagic, 4);
    write_u16(out, kFeatureVersion);
    write_u32(out, static_cast<std::uint32_t>(features.rows()));
    write_u32(out, static_cast<std::uint32_t>(features.cols()));
    for (double v : features.data) write_f32(out, static_cast<float>(v));
}

inline void write_feature_file(const std::string& path, const Tensor& features) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "cannot open " + path + " for writing");
    write_feature_stream(out, features);
    out.flush();
    if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path);
}

inline Tensor load_feature_stream(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kFeatureMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "not a feature file");
    }
    std::uint16_t version = read_u16(in);
    if (version != kFeatureVersion) {
        throw FormatError(FormatError::Kind::bad_version,
                          "unsupported feature format version " + std::to_string(version));
    }
    std::uint64_t d = read_u32(in);
    std::uint64_t t = read_u32(in);
    if (d == 0 || t == 0 || d * t > kMaxFeatureElements) {
        throw FormatError(FormatError::Kind::dimension_overflow,
                          "feature dimensions " + std::to_string(d) + "x" + std::to_string(t) +
                              " out of range");
    }
    std::size_t count = static_cast<std::size_t>(d * t);
    std::vector<char> payload(count * 4);
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::size_t got = static_cast<std::size_t>(in.gcount());
    if (got != payload.size()) {
        throw FormatError(FormatError::Kind::truncated,
                          "feature payload truncated: expected " + std::to_string(payload.size()) +
                              " bytes, found " + std::to_string(got));
    }
    Tensor out({static_cast<std::size_t>(d), static_cast<std::size_t>(t)}, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b]))
                    << (8 * b);
        }
        float f;
        std::memcpy(&f, &bits, 4);
        if (!std::isfinite(f)) {
            throw FormatError(FormatError::Kind::non_finite,
                              "non-finite feature value at element " + std::to_string(i));
        }
        out.data[i] = static_cast<double>(f);
    }
    return out;
}

inline Tensor load_feature_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path);
    return load_feature_stream(in);
}

// ---------------------------------------------------------------------------
// Label and mapping files (plain text).

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

} // namespace detail

inline std::vector<int> load_labels(const std::string& path, const ClassMapping& mapping) {
    std::vector<std::string> lines = detail::read_lines(path);
    std::vector<int> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            throw DataError(path + ": blank line " + std::to_string(i + 1));
        }
        auto it = mapping.ids.find(lines[i]);
        if (it == mapping.ids.end()) {
            throw DataError(path + ": unknown class name '" + lines[i] + "' on line " +
                            std::to_string(i + 1));
        }
        out.push_back(it->second);
    }
    if (out.empty()) throw DataError(path + ": no labels");
    return out;
}

inline void write_labels(const std::string& path, const std::vector<int>& labels,
                         const ClassMapping& mapping) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (int id : labels) out << mapping.name_of(id) << "\n";
    out.flush();
    if (!out) throw DataError("write failed for " + path);
}

inline ClassMapping load_mapping(const std::string& path) {
    std::vector<std::string> lines = detail::read_lines(path);
    std::map<int, std::string> by_id;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        std::istringstream ss(lines[i]);
        int id;
        std::string name, extra;
        if (!(ss >> id >> name) || (ss >> extra)) {
            throw DataError(path + ": expected '<id> <name>' on line " + std::to_string(i + 1));
        }
        if (by_id.count(id)) {
            throw DataError(path + ": duplicate id " + std::to_string(id) + " on line " +
                            std::to_string(i + 1));
        }
        by_id[id] = name;
    }
    if (by_id.empty()) throw DataError(path + ": empty mapping");
    std::vector<std::string> names;
    for (auto& [id, name] : by_id) {
        if (id != static_cast<int>(names.size())) {
            throw DataError(path + ": class ids must be contiguous from 0, missing " +
                            std::to_string(names.size()));
        }
        names.push_back(name);
    }
    return ClassMapping::from_names(std::move(names));
}

inline void write_mapping(const std::string& path, const ClassMapping& mapping) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (int i = 0; i < mapping.size(); ++i) out << i << " " << mapping.names[static_cast<std::size_t>(i)] << "\n";
    out.flush();
    if (!out) throw DataError("write failed for " + path);
}

inline std::vector<std::string> load_split(const std::string& path) {
    std::vector<std::string> lines = detail::read_lines(path);
    std::vector<std::string> out;
    for (const std::string& l : lines) {
        if (!l.empty()) out.push_back(l);
    }
    if (out.empty()) throw DataError(path + ": empty split file");
    return out;
}

inline void write_split(const std::string& path, const std::vector<std::string>& ids) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const std::string& id : ids) out << id << "\n";
    out.flush();
    if (!out) throw DataError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Dataset layout: <root>/features/<id>.fmat, <root>/groundTruth/<id>.txt,
// <root>/mapping.txt, split files listing ids.

inline SequenceSample load_sample(const std::string& root, const std::string& id,
                                  const ClassMapping& mapping) {
    SequenceSample s;
    s.id = id;
    s.features = load_feature_file(root + "/features/" + id + ".fmat");
    s.labels = load_labels(root + "/groundTruth/" + id + ".txt", mapping);
    if (s.features.cols() != s.labels.size()) {
        throw DataError(id + ": features span " + std::to_string(s.features.cols()) +
                        " frames but " + std::to_string(s.labels.size()) + " labels given");
    }
    return s;
}

inline std::vector<SequenceSample> load_dataset(const std::string& root,
                                                const std::string& split_path,
                                                const ClassMapping& mapping) {
    std::vector<SequenceSample> out;
    for (const std::string& id : load_split(split_path)) {
        out.push_back(load_sample(root, id, mapping));
    }
    return out;
}

/// Keep every factor-th frame (features and labels), starting at frame 0.
inline SequenceSample temporal_downsample(const SequenceSample& sample, int factor) {
    if (factor < 1) throw DomainError("downsample factor must be >= 1");
    std::size_t t_len = sample.labels.size();
    if (static_cast<std::size_t>(factor) > t_len) {
        throw DataError("downsample factor " + std::to_string(factor) + " exceeds length " +
                        std::to_string(t_len));
    }
    std::size_t step = static_cast<std::size_t>(factor);
    std::size_t t_out = (t_len + step - 1) / step;
    SequenceSample out;
    out.id = sample.id;
    out.features = Tensor({sample.features.rows(), t_out}, 0.0);
    for (std::size_t d = 0; d < sample.features.rows(); ++d) {
        for (std::size_t t = 0; t < t_out; ++t) {
            out.features.at(d, t) = sample.features.at(d, t * step);
        }
    }
    for (std::size_t t = 0; t < t_out; ++t) out.labels.push_back(sample.labels[t * step]);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus.

/// Generator description: video labels follow a Markov chain over classes
/// with per-class Gaussian segment durations; each frame emits its class
/// mean plus Gaussian noise. Optional confusion bursts temporarily swap the
/// emission mean for another class's to create locally misleading evidence.
struct SynthConfig {
    int num_classes = 8;
    int feature_dim = 16;
    int num_videos = 80;
    double mean_video_length = 600.0;
    Tensor transitions;                // (C, C), rows sum to 1
    std::vector<double> duration_mean; // per class, frames
    std::vector<double> duration_std;  // per class, frames
    Tensor class_means;                // (C, feature_dim)
    double noise_std = 1.0;
    double burst_rate = 0.0;        // per-frame chance to start a burst
    double burst_mean_length = 4.0; // geometric mean burst length, frames
    double video_drift_std = 0.0;   // per-video, per-class mean offset std
    std::uint64_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw ConfigError("synth: need at least two classes");
        if (feature_dim < 1) throw ConfigError("synth: feature dimension must be positive");
        if (num_videos < 1) throw ConfigError("synth: need at least one video");
        if (!(mean_video_length >= 1.0)) throw ConfigError("synth: mean video length must be >= 1");
        std::size_t c = static_cast<std::size_t>(num_classes);
        if (transitions.shape != std::vector<std::size_t>{c, c}) {
            throw ConfigError("synth: transition matrix must be " + std::to_string(c) + "x" +
                              std::to_string(c));
        }
        for (std::size_t i = 0; i < c; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                double p = transitions.at(i, j);
                if (!(p >= 0.0)) throw ConfigError("synth: negative transition probability");
                row += p;
            }
            if (std::fabs(row - 1.0) > 1e-6) {
                throw ConfigError("synth: transition row " + std::to_string(i) +
                                  " sums to " + std::to_string(row) + ", not 1");
            }
        }
        if (duration_mean.size() != c || duration_std.size() != c) {
            throw ConfigError("synth: need one duration mean/std per class");
        }
        for (std::size_t i = 0; i < c; ++i) {
            if (!(duration_mean[i] >= 1.0)) throw ConfigError("synth: duration means must be >= 1");
            if (!(duration_std[i] >= 0.0)) throw ConfigError("synth: duration stds must be >= 0");
        }
        if (class_means.shape != std::vector<std::size_t>{c, static_cast<std::size_t>(feature_dim)}) {
            throw ConfigError("synth: class means must be CxD");
        }
        if (!(noise_std >= 0.0)) throw ConfigError("synth: noise std must be >= 0");
        if (!(burst_rate >= 0.0 && burst_rate < 1.0)) throw ConfigError("synth: burst rate must be in [0, 1)");
        if (!(burst_mean_length >= 1.0)) throw ConfigError("synth: burst mean length must be >= 1");
        if (!(video_drift_std >= 0.0)) throw ConfigError("synth: video drift std must be >= 0");
    }
};

/// Zero-diagonal uniform transition matrix: every move picks a different
/// class uniformly.
inline Tensor uniform_transitions(int num_classes) {
    if (num_classes < 2) throw ConfigError("need at least two classes");
    std::size_t c = static_cast<std::size_t>(num_classes);
    Tensor t({c, c}, 0.0);
    double p = 1.0 / static_cast<double>(num_classes - 1);
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            if (i != j) t.at(i, j) = p;
        }
    }
    return t;
}

/// Gaussian class mean vectors of the given scale, deterministic in seed.
inline Tensor random_class_means(int num_classes, int feature_dim, double scale,
                                 std::uint64_t seed) {
    Tensor means({static_cast<std::size_t>(num_classes), static_cast<std::size_t>(feature_dim)},
                 0.0);
    Rng rng(mix_seed(seed, 0x6d65616e73ULL));
    for (double& v : means.data) v = scale * rng.normal();
    return means;
}

inline ClassMapping synthetic_mapping(int num_classes) {
    std::vector<std::string> names;
    for (int i = 0; i < num_classes; ++i) names.push_back("action_" + std::to_string(i));
    return ClassMapping::from_names(std::move(names));
}

namespace detail {

inline int sample_categorical(const Tensor& transitions, int row, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    std::size_t c = transitions.cols();
    for (std::size_t j = 0; j < c; ++j) {
        acc += transitions.at(static_cast<std::size_t>(row), j);
        if (u < acc) return static_cast<int>(j);
    }
    return static_cast<int>(c - 1);
}

} // namespace detail

/// One synthetic video; fully determined by (config.seed, index).
inline SequenceSample generate_synthetic_video(const SynthConfig& config, int index) {
    std::size_t c = static_cast<std::size_t>(config.num_classes);
    std::size_t d = static_cast<std::size_t>(config.feature_dim);
    Rng rng(mix_seed(config.seed, 0x766964656fULL, static_cast<std::uint64_t>(index)));

    std::size_t target = static_cast<std::size_t>(
        std::max(1.0, std::round(config.mean_video_length * rng.uniform(0.75, 1.25))));
    std::vector<int> labels;
    int state = static_cast<int>(rng.below(c));
    while (labels.size() < target) {
        double raw = rng.normal(config.duration_mean[static_cast<std::size_t>(state)],
                                config.duration_std[static_cast<std::size_t>(state)]);
        std::size_t run = static_cast<std::size_t>(std::max(1.0, std::round(raw)));
        run = std::min(run, target - labels.size());
        labels.insert(labels.end(), run, state);
        state = detail::sample_categorical(config.transitions, state, rng);
    }

    SequenceSample s;
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%04d", index);
    s.id = buf;
    s.labels = std::move(labels);
    s.features = Tensor({d, s.labels.size()}, 0.0);
    // Per-video appearance shift: every class's prototype moves by a fixed
    // offset within this video, mimicking cross-video feature variation.
    // Disabled generators leave the random stream untouched.
    Tensor drift({c, d}, 0.0);
    if (config.video_drift_std > 0.0) {
        for (double& v : drift.data) v = config.video_drift_std * rng.normal();
    }
    std::size_t burst_left = 0;
    int burst_label = 0;
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
        int emit = s.labels[t];
        if (burst_left > 0) {
            emit = burst_label;
            --burst_left;
        } else if (config.burst_rate > 0.0 && rng.uniform() < config.burst_rate) {
            // geometric length with the configured mean
            burst_left = 1;
            double stop = 1.0 / config.burst_mean_length;
            while (burst_left < 64 && rng.uniform() > stop) ++burst_left;
            burst_label = static_cast<int>(rng.below(c - 1));
            if (burst_label >= s.labels[t]) ++burst_label;
            emit = burst_label;
            --burst_left;
        }
        for (std::size_t f = 0; f < d; ++f) {
            s.features.at(f, t) = config.class_means.at(static_cast<std::size_t>(emit), f) +
                                  drift.at(static_cast<std::size_t>(emit), f) +
                                  config.noise_std * rng.normal();
        }
    }
    return s;
}

struct SynthDataset {
    ClassMapping mapping;
    std::vector<SequenceSample> samples;
};

inline SynthDataset generate_synthetic(const SynthConfig& config) {
    config.validate();
    SynthDataset out;
    out.mapping = synthetic_mapping(config.num_classes);
    for (int i = 0; i < config.num_videos; ++i) {
        out.samples.push_back(generate_synthetic_video(config, i));
    }
    return out;
}

/// Materialize a dataset in the on-disk layout. The first `train_count`
/// samples go to train.split, the rest to test.split.
inline void write_dataset(const std::string& root, const SynthDataset& dataset, int train_count) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root + "/features", ec);
    fs::create_directories(root + "/groundTruth", ec);
    if (ec) throw DataError("cannot create dataset directories under " + root);
    if (train_count < 0 || static_cast<std::size_t>(train_count) > dataset.samples.size()) {
        throw DataError("train count " + std::to_string(train_count) + " out of range");
    }
    write_mapping(root + "/mapping.txt", dataset.mapping);
    std::vector<std::string> train_ids, test_ids;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const SequenceSample& s = dataset.samples[i];
        write_feature_file(root + "/features/" + s.id + ".fmat", s.features);
        write_labels(root + "/groundTruth/" + s.id + ".txt", s.labels, dataset.mapping);
        (i < static_cast<std::size_t>(train_count) ? train_ids : test_ids).push_back(s.id);
    }
    write_split(root + "/train.split", train_ids);
    if (!test_ids.empty()) write_split(root + "/test.split", test_ids);
}

} // namespace mstcn
