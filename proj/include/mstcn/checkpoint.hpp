#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mstcn/bytes.hpp"
#include "mstcn/errors.hpp"
#include "mstcn/model.hpp"
#include "mstcn/optimizer.hpp"

// Checkpoint container. Layout (all integers little-endian):
//   magic "MTCN", u16 version (currently 1)
//   model config: i32 stages/layers/filters/classes/input_dim, f64 dropout,
//                 u8 pass_features, u32 dilation-override count + i32 values
//   u32 tensor count, then each tensor in declaration order:
//                 u32 ndim, u64 dims..., f64 values...
//   u8 has-optimizer flag; if set: u64 step, then per tensor the first and
//                 second moment values (shapes mirror the parameters)

namespace mstcn {

inline constexpr char kCheckpointMagic[4] = {'M', 'T', 'C', 'N'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams model;
    bool has_adam = false;
    AdamState adam;
};

namespace detail {

inline void write_tensor_payload(std::ostream& out, const Tensor& t, const std::string& name) {
    if (!t.all_finite()) {
        throw FormatError(FormatError::Kind::non_finite, "tensor " + name + " holds non-finite values");
    }
    write_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape) write_u64(out, static_cast<std::uint64_t>(d));
    for (double v : t.data) write_f64(out, v);
}

inline Tensor read_tensor_payload(std::istream& in, const std::string& name) {
    std::uint32_t ndim = read_u32(in);
    if (ndim == 0 || ndim > 8) {
        throw FormatError(FormatError::Kind::corrupt,
                          "tensor " + name + " has implausible rank " + std::to_string(ndim));
    }
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        std::uint64_t d = read_u64(in);
        if (d == 0 || d > (1ULL << 32)) {
            throw FormatError(FormatError::Kind::dimension_overflow,
                              "tensor " + name + " has dimension " + std::to_string(d));
        }
        if (numel > (1ULL << 40) / d) {
            throw FormatError(FormatError::Kind::dimension_overflow,
                              "tensor " + name + " is implausibly large");
        }
        numel *= static_cast<std::size_t>(d);
        shape.push_back(static_cast<std::size_t>(d));
    }
    Tensor t(shape, 0.0);
    for (std::size_t i = 0; i < numel; ++i) t.data[i] = read_f64(in);
    if (!t.all_finite()) {
        throw FormatError(FormatError::Kind::non_finite, "tensor " + name + " holds non-finite values");
    }
    return t;
}

inline void read_into_matching(std::istream& in, Tensor& dst, const std::string& name) {
    Tensor t = read_tensor_payload(in, name);
    if (!t.same_shape(dst)) {
        throw FormatError(FormatError::Kind::corrupt, "tensor " + name + " has shape " +
                                                          t.shape_str() + ", expected " +
                                                          dst.shape_str());
    }
    dst = std::move(t);
}

} // namespace detail

inline void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
    const ModelConfig& cfg = ckpt.model.config;
    write_bytes(out, kCheckpointMagic, 4);
    write_u16(out, kCheckpointVersion);
    write_i32(out, cfg.num_stages);
    write_i32(out, cfg.num_layers);
    write_i32(out, cfg.num_filters);
    write_i32(out, cfg.num_classes);
    write_i32(out, cfg.input_dim);
    write_f64(out, cfg.dropout);
    write_u8(out, cfg.pass_features ? 1 : 0);
    write_u32(out, static_cast<std::uint32_t>(cfg.dilations.size()));
    for (int d : cfg.dilations) write_i32(out, d);

    // parameter_list wants a mutable model; serialization does not modify it
    ModelParams& model = const_cast<ModelParams&>(ckpt.model);
    std::vector<NamedTensor> params = parameter_list(model);
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const NamedTensor& p : params) detail::write_tensor_payload(out, *p.tensor, p.name);

    write_u8(out, ckpt.has_adam ? 1 : 0);
    if (ckpt.has_adam) {
        if (ckpt.adam.m.size() != params.size() || ckpt.adam.v.size() != params.size()) {
            throw FormatError(FormatError::Kind::corrupt,
                              "optimizer state does not match the parameter layout");
        }
        write_u64(out, ckpt.adam.step);
        for (std::size_t i = 0; i < params.size(); ++i) {
            detail::write_tensor_payload(out, ckpt.adam.m[i], params[i].name + ".m");
            detail::write_tensor_payload(out, ckpt.adam.v[i], params[i].name + ".v");
        }
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "cannot open " + path + " for writing");
    save_checkpoint(out, ckpt);
    out.flush();
    if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + path);
}

inline Checkpoint load_checkpoint(std::istream& in) {
    char magic[4];
    read_bytes(in, magic, 4);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "not a checkpoint file");
    }
    std::uint16_t version = read_u16(in);
    if (version != kCheckpointVersion) {
        throw FormatError(FormatError::Kind::bad_version,
                          "unsupported checkpoint version " + std::to_string(version));
    }
    ModelConfig cfg;
    cfg.num_stages = read_i32(in);
    cfg.num_layers = read_i32(in);
    cfg.num_filters = read_i32(in);
    cfg.num_classes = read_i32(in);
    cfg.input_dim = read_i32(in);
    cfg.dropout = read_f64(in);
    cfg.pass_features = read_u8(in) != 0;
    std::uint32_t n_dil = read_u32(in);
    if (n_dil > 4096) {
        throw FormatError(FormatError::Kind::corrupt, "implausible dilation override count");
    }
    for (std::uint32_t i = 0; i < n_dil; ++i) cfg.dilations.push_back(read_i32(in));
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(FormatError::Kind::corrupt, std::string("stored config invalid: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.model = init_model(cfg, 0); // skeleton with the right shapes; values replaced below
    std::vector<NamedTensor> params = parameter_list(ckpt.model);
    std::uint32_t count = read_u32(in);
    if (count != params.size()) {
        throw FormatError(FormatError::Kind::corrupt,
                          "checkpoint lists " + std::to_string(count) + " tensors, config implies " +
                              std::to_string(params.size()));
    }
    for (NamedTensor& p : params) detail::read_into_matching(in, *p.tensor, p.name);

    ckpt.has_adam = read_u8(in) != 0;
    if (ckpt.has_adam) {
        ckpt.adam.step = read_u64(in);
        for (const NamedTensor& p : params) {
            Tensor m = Tensor::zeros(p.tensor->shape);
            Tensor v = Tensor::zeros(p.tensor->shape);
            detail::read_into_matching(in, m, p.name + ".m");
            detail::read_into_matching(in, v, p.name + ".v");
            ckpt.adam.m.push_back(std::move(m));
            ckpt.adam.v.push_back(std::move(v));
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(FormatError::Kind::corrupt, "trailing bytes after checkpoint payload");
    }
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path);
    return load_checkpoint(in);
}

/// Load and insist the stored architecture equals `expected`.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
    Checkpoint ckpt = load_checkpoint(path);
    if (!(ckpt.model.config == expected)) {
        throw FormatError(FormatError::Kind::config_mismatch,
                          "checkpoint architecture does not match the requested configuration");
    }
    return ckpt;
}

} // namespace mstcn
