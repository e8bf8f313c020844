#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gsd/core/tensor.hpp"
#include "gsd/core/types.hpp"

namespace gsd {

static_assert(std::endian::native == std::endian::little,
              "weight checkpoints are little-endian; big-endian hosts are unsupported");

// Flat binary weight container:
//   magic "GSDW", version u32, then per-tensor records of
//   (name_len u32, name bytes, rank u32, dims u32 each, raw f32 data).
struct WeightEntry {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> data;

    size_t numel() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

inline constexpr uint32_t kWeightFormatVersion = 1;

inline void save_weights(const std::string& path, const std::vector<WeightEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    out.write("GSDW", 4);
    const uint32_t version = kWeightFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    for (const auto& e : entries) {
        if (e.numel() != e.data.size())
            throw ContractError("weight entry '" + e.name + "' has inconsistent dims");
        const uint32_t name_len = static_cast<uint32_t>(e.name.size());
        out.write(reinterpret_cast<const char*>(&name_len), 4);
        out.write(e.name.data(), name_len);
        const uint32_t rank = static_cast<uint32_t>(e.dims.size());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        out.write(reinterpret_cast<const char*>(e.dims.data()), 4 * rank);
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(4 * e.data.size()));
    }
    if (!out) throw DataError("short write while saving " + path);
}

inline std::vector<WeightEntry> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GSDW", 4) != 0)
        throw DataError(path + ": not a GSDW weight file");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kWeightFormatVersion)
        throw DataError(path + ": unsupported weight format version " + std::to_string(version));
    std::vector<WeightEntry> entries;
    for (;;) {
        uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), 4);
        if (in.eof()) break;
        if (!in || name_len > (1u << 20)) throw DataError(path + ": corrupt record header");
        WeightEntry e;
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), 4);
        if (!in || rank > 8) throw DataError(path + ": corrupt tensor rank");
        e.dims.resize(rank);
        in.read(reinterpret_cast<char*>(e.dims.data()), 4 * rank);
        e.data.resize(e.numel());
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(4 * e.data.size()));
        if (!in) throw DataError(path + ": truncated tensor data for '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

inline WeightEntry to_entry(const std::string& name, const Tensor& t) {
    WeightEntry e;
    e.name = name;
    for (int64_t d : t.shape()) e.dims.push_back(static_cast<uint32_t>(d));
    e.data.reserve(static_cast<size_t>(t.numel()));
    for (const real v : t.data()) e.data.push_back(static_cast<float>(v));
    return e;
}

inline void load_into(const WeightEntry& e, Tensor& t) {
    if (e.numel() != static_cast<size_t>(t.numel()))
        throw DataError("weight entry '" + e.name + "' size " + std::to_string(e.numel()) +
                        " does not match tensor size " + std::to_string(t.numel()));
    auto dst = t.mutable_data();
    for (size_t i = 0; i < e.data.size(); ++i) dst[i] = static_cast<real>(e.data[i]);
}

}  // namespace gsd
