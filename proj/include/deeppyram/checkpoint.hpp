#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "deeppyram/common.hpp"
#include "deeppyram/model.hpp"

namespace deeppyram {

// A named snapshot of every parameter and buffer, in the model's fixed
// traversal order, plus the run-configuration text it was trained with.
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, std::vector<float>>> entries;

    bool operator==(const Checkpoint&) const = default;
};

template <typename T>
Checkpoint snapshot_model(const DeepPyram<T>& model, const std::string& config_text) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    const auto grab = [&ckpt](const std::string& name, Tensor<T> t) {
        std::vector<float> vals(t.vec().begin(), t.vec().end());
        ckpt.entries.emplace_back(name, std::move(vals));
    };
    model.visit_parameters(grab);
    model.visit_buffers(grab);
    return ckpt;
}

// Writes every entry back into the model; names and element counts must match
// the model's own layout exactly.
template <typename T>
void restore_model(DeepPyram<T>& model, const Checkpoint& ckpt) {
    size_t next = 0;
    const auto put = [&](const std::string& name, Tensor<T> t) {
        if (next >= ckpt.entries.size())
            throw DataError("checkpoint: ran out of entries at '" + name + "'");
        const auto& [ename, evals] = ckpt.entries[next++];
        if (ename != name)
            throw DataError("checkpoint: expected entry '" + name + "', found '" +
                            ename + "'");
        if (static_cast<int64_t>(evals.size()) != t.numel())
            throw DataError("checkpoint: size mismatch for '" + name + "'");
        for (size_t i = 0; i < evals.size(); ++i)
            t.data()[i] = static_cast<T>(evals[i]);
    };
    model.visit_parameters(put);
    model.visit_buffers(put);
    if (next != ckpt.entries.size())
        throw DataError("checkpoint: " + std::to_string(ckpt.entries.size() - next) +
                        " unused entries (model/config mismatch)");
}

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace detail

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'C', 'K', 'P', 'T', '0', '1'};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::put_u64(os, ckpt.config_text.size());
    os.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    detail::put_u64(os, ckpt.entries.size());
    for (const auto& [name, vals] : ckpt.entries) {
        detail::put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u64(os, vals.size());
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(vals.data()),
                 static_cast<std::streamsize>(vals.size() * sizeof(float)));
    }
    if (!os) throw DataError("short write to checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path);
    char magic[sizeof(kCheckpointMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("not a checkpoint file: " + path);
    Checkpoint ckpt;
    const uint64_t cfg_len = detail::get_u64(is);
    ckpt.config_text.resize(cfg_len);
    is.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len));
    const uint64_t n = detail::get_u64(is);
    for (uint64_t i = 0; i < n; ++i) {
        const uint64_t name_len = detail::get_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const uint64_t count = detail::get_u64(is);
        std::vector<float> vals(count);
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!is) throw DataError("checkpoint: truncated entry in " + path);
        ckpt.entries.emplace_back(std::move(name), std::move(vals));
    }
    return ckpt;
}

} // namespace deeppyram
