// Copyright (c) 2026 the emoscene authors
// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact container for named double arrays plus a JSON metadata blob:
// an 8-byte magic, a little-endian u64 header length, a JSON header listing
// metadata and array shapes, then the raw IEEE-754 payloads in header order.
// Reloading returns the identical doubles, which makes checkpoint/restore
// reproducible to the last bit.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emoscene/util.hpp"

namespace emoscene {

struct Checkpoint {
    std::map<std::string, std::vector<double>> arrays;
    std::map<std::string, std::vector<int>> shapes;
    nlohmann::json metadata;
};

namespace detail {
inline constexpr char kCheckpointMagic[8] = {'E', 'M', 'S', 'C', 'K', 'P', 'T', '1'};

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
    std::uint8_t b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::size_t shape_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}
} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json header;
    header["metadata"] = ckpt.metadata.is_null() ? nlohmann::json::object() : ckpt.metadata;
    header["arrays"] = nlohmann::json::array();
    for (const auto& [name, data] : ckpt.arrays) {
        auto it = ckpt.shapes.find(name);
        std::vector<int> shape = it != ckpt.shapes.end() ? it->second
                                                         : std::vector<int>{static_cast<int>(data.size())};
        if (detail::shape_count(shape) != data.size())
            throw Error("save_checkpoint: shape of '" + name + "' implies " +
                        std::to_string(detail::shape_count(shape)) + " values, array has " +
                        std::to_string(data.size()));
        header["arrays"].push_back({{"name", name}, {"shape", shape}});
    }
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot open '" + path.string() + "'");
    out.write(detail::kCheckpointMagic, 8);
    detail::write_u64_le(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, data] : ckpt.arrays) {
        static_assert(sizeof(double) == 8);
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw Error("save_checkpoint: write failed for '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_checkpoint: cannot open '" + path.string() + "'");
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
        throw Error("load_checkpoint: '" + path.string() + "' is not a checkpoint file");
    const std::uint64_t header_len = detail::read_u64_le(in);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw Error("load_checkpoint: truncated header in '" + path.string() + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw Error("load_checkpoint: bad header in '" + path.string() + "': " + e.what());
    }

    Checkpoint ckpt;
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
    for (const auto& entry : header.at("arrays")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        std::vector<double> data(detail::shape_count(shape));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw Error("load_checkpoint: truncated payload for '" + name + "' in '" + path.string() + "'");
        ckpt.shapes[name] = shape;
        ckpt.arrays[name] = std::move(data);
    }
    return ckpt;
}

} // namespace emoscene
