#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cardlab/errors.hpp"
#include "cardlab/tape.hpp"

namespace cardlab {

// Named-tensor checkpoint container. Layout:
//   magic "CLCKPT01"
//   u32 manifest length, manifest JSON bytes
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u64 rows, u64 cols,
//               rows*cols little-endian f64
inline void save_checkpoint(const std::string& path, const ad::ParamStore& params,
                            const nlohmann::json& manifest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    const char magic[8] = {'C', 'L', 'C', 'K', 'P', 'T', '0', '1'};
    out.write(magic, 8);
    const std::string mjson = manifest.dump();
    auto write_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto write_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    write_u32(static_cast<std::uint32_t>(mjson.size()));
    out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
    write_u32(static_cast<std::uint32_t>(params.count()));
    for (std::size_t i = 0; i < params.count(); ++i) {
        const std::string& name = params.name(i);
        const ad::Tensor& t = params.tensor(i);
        write_u32(static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(t.rows);
        write_u64(t.cols);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("short write on checkpoint: " + path);
}

struct Checkpoint {
    nlohmann::json manifest;
    ad::ParamStore params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "CLCKPT01", 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    auto read_u32 = [&]() {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto read_u64 = [&]() {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    Checkpoint ck;
    std::uint32_t mlen = read_u32();
    std::string mjson(mlen, '\0');
    in.read(mjson.data(), mlen);
    try {
        ck.manifest = nlohmann::json::parse(mjson);
    } catch (const std::exception& e) {
        throw IoError("bad checkpoint manifest: " + std::string(e.what()));
    }
    std::uint32_t count = read_u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = read_u32();
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        std::uint64_t rows = read_u64();
        std::uint64_t cols = read_u64();
        ad::Tensor t(rows, cols);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint: " + path);
        ck.params.add(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace cardlab
