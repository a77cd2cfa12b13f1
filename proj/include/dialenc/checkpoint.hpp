#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dialenc/error.hpp"
#include "dialenc/model.hpp"
#include "dialenc/tensor.hpp"

namespace dialenc {

// Binary checkpoint: model configuration, free-form string metadata, named
// tensors, and (optionally) optimizer moments so training resumes bit-exact.
// The format is little-endian native, matching every machine this targets.
template <typename S>
struct CheckpointData {
    ModelConfig config;
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Tensor<S>>> tensors;

    bool has_optimizer = false;
    int64_t optimizer_step = 0;
    // name -> (first moment, second moment), same order as `tensors`.
    std::vector<std::pair<std::string, std::pair<std::vector<S>, std::vector<S>>>> moments;
};

namespace ckpt_detail {

constexpr uint32_t kMagic = 0x444C454E;  // "DLEN"
constexpr uint32_t kVersion = 1;

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

inline void write_str(std::ostream& out, const std::string& s) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
    write_bytes(out, s.data(), s.size());
}

inline void read_bytes(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw DataError("checkpoint truncated");
}

template <typename T>
T read_pod(std::istream& in) {
    T v;
    read_bytes(in, &v, sizeof(T));
    return v;
}

inline std::string read_str(std::istream& in) {
    uint32_t n = read_pod<uint32_t>(in);
    if (n > (1u << 20)) throw DataError("checkpoint string length implausible");
    std::string s(n, '\0');
    if (n) read_bytes(in, s.data(), n);
    return s;
}

inline void write_config(std::ostream& out, const ModelConfig& c) {
    for (int64_t v : {int64_t(c.vocab_size), int64_t(c.d_model), int64_t(c.n_blocks),
                      int64_t(c.n_heads), int64_t(c.d_ff), int64_t(c.max_positions),
                      int64_t(c.max_turns), int64_t(c.n_roles)})
        write_pod(out, v);
    write_pod(out, c.ln_eps);
    write_pod(out, c.init_std);
    write_str(out, c.pooler);
    write_pod<uint32_t>(out, static_cast<uint32_t>(c.kernel_widths.size()));
    for (int k : c.kernel_widths) write_pod<int64_t>(out, k);
}

inline ModelConfig read_config(std::istream& in) {
    ModelConfig c;
    c.vocab_size = static_cast<int>(read_pod<int64_t>(in));
    c.d_model = static_cast<int>(read_pod<int64_t>(in));
    c.n_blocks = static_cast<int>(read_pod<int64_t>(in));
    c.n_heads = static_cast<int>(read_pod<int64_t>(in));
    c.d_ff = static_cast<int>(read_pod<int64_t>(in));
    c.max_positions = static_cast<int>(read_pod<int64_t>(in));
    c.max_turns = static_cast<int>(read_pod<int64_t>(in));
    c.n_roles = static_cast<int>(read_pod<int64_t>(in));
    c.ln_eps = read_pod<double>(in);
    c.init_std = read_pod<double>(in);
    c.pooler = read_str(in);
    uint32_t nk = read_pod<uint32_t>(in);
    c.kernel_widths.clear();
    for (uint32_t i = 0; i < nk; ++i) c.kernel_widths.push_back(static_cast<int>(read_pod<int64_t>(in)));
    return c;
}

}  // namespace ckpt_detail

template <typename S>
void save_checkpoint(const std::string& path, const CheckpointData<S>& data) {
    namespace cd = ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint \"" + path + "\"");

    cd::write_pod(out, cd::kMagic);
    cd::write_pod(out, cd::kVersion);
    cd::write_pod<uint8_t>(out, sizeof(S) == 4 ? 'f' : 'd');
    cd::write_config(out, data.config);

    cd::write_pod<uint32_t>(out, static_cast<uint32_t>(data.metadata.size()));
    for (const auto& [k, v] : data.metadata) {
        cd::write_str(out, k);
        cd::write_str(out, v);
    }

    cd::write_pod<uint32_t>(out, static_cast<uint32_t>(data.tensors.size()));
    for (const auto& [name, t] : data.tensors) {
        cd::write_str(out, name);
        cd::write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
        for (Dim ddim : t.shape()) cd::write_pod<int64_t>(out, ddim);
        cd::write_bytes(out, t.value().data(), sizeof(S) * static_cast<size_t>(t.numel()));
    }

    cd::write_pod<uint8_t>(out, data.has_optimizer ? 1 : 0);
    if (data.has_optimizer) {
        cd::write_pod<int64_t>(out, data.optimizer_step);
        cd::write_pod<uint32_t>(out, static_cast<uint32_t>(data.moments.size()));
        for (const auto& [name, mv] : data.moments) {
            cd::write_str(out, name);
            cd::write_pod<uint64_t>(out, mv.first.size());
            cd::write_bytes(out, mv.first.data(), sizeof(S) * mv.first.size());
            cd::write_bytes(out, mv.second.data(), sizeof(S) * mv.second.size());
        }
    }
    if (!out) throw IoError("write failed for checkpoint \"" + path + "\"");
}

template <typename S>
CheckpointData<S> load_checkpoint(const std::string& path) {
    namespace cd = ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint \"" + path + "\"");

    if (cd::read_pod<uint32_t>(in) != cd::kMagic) throw DataError("not a checkpoint: \"" + path + "\"");
    if (cd::read_pod<uint32_t>(in) != cd::kVersion)
        throw DataError("unsupported checkpoint version in \"" + path + "\"");
    uint8_t tag = cd::read_pod<uint8_t>(in);
    if (tag != (sizeof(S) == 4 ? 'f' : 'd'))
        throw DataError("checkpoint scalar type mismatch in \"" + path + "\"");

    CheckpointData<S> data;
    data.config = cd::read_config(in);

    uint32_t n_meta = cd::read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = cd::read_str(in);
        data.metadata[k] = cd::read_str(in);
    }

    uint32_t n_tensors = cd::read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = cd::read_str(in);
        uint32_t rank = cd::read_pod<uint32_t>(in);
        if (rank > 4) throw DataError("checkpoint tensor rank implausible");
        Shape shape;
        for (uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Dim>(cd::read_pod<int64_t>(in)));
        Tensor<S> t = Tensor<S>::zeros(shape, true);
        cd::read_bytes(in, t.value().data(), sizeof(S) * static_cast<size_t>(t.numel()));
        data.tensors.emplace_back(std::move(name), std::move(t));
    }

    uint8_t has_opt = cd::read_pod<uint8_t>(in);
    data.has_optimizer = has_opt != 0;
    if (data.has_optimizer) {
        data.optimizer_step = cd::read_pod<int64_t>(in);
        uint32_t n = cd::read_pod<uint32_t>(in);
        for (uint32_t i = 0; i < n; ++i) {
            std::string name = cd::read_str(in);
            uint64_t len = cd::read_pod<uint64_t>(in);
            std::vector<S> m(len), v(len);
            if (len) {
                cd::read_bytes(in, m.data(), sizeof(S) * len);
                cd::read_bytes(in, v.data(), sizeof(S) * len);
            }
            data.moments.emplace_back(std::move(name), std::make_pair(std::move(m), std::move(v)));
        }
    }
    return data;
}

// Copies checkpoint tensor values into an existing parameter collection.
// Configuration, tensor names, and shapes must match exactly.
template <typename S>
void apply_checkpoint(const CheckpointData<S>& data, const ModelConfig& expected_config,
                      std::vector<std::pair<std::string, Tensor<S>>> named) {
    if (!(data.config == expected_config))
        throw DataError("checkpoint configuration does not match the model");
    if (data.tensors.size() != named.size())
        throw DataError("checkpoint holds " + std::to_string(data.tensors.size()) +
                        " tensors, model expects " + std::to_string(named.size()));
    for (size_t i = 0; i < named.size(); ++i) {
        const auto& [saved_name, saved] = data.tensors[i];
        auto& [name, t] = named[i];
        if (saved_name != name)
            throw DataError("checkpoint tensor order mismatch: \"" + saved_name +
                            "\" where \"" + name + "\" was expected");
        if (saved.shape() != t.shape())
            throw DataError("checkpoint tensor \"" + name + "\" has shape " +
                            shape_str(saved.shape()) + ", expected " + shape_str(t.shape()));
        t.value() = saved.value();
    }
}

}  // namespace dialenc
