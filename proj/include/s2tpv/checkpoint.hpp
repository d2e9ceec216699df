// Copyright 2026 The S2TPV Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "s2tpv/tensor.hpp"

namespace s2tpv {

// Checkpoint layout, little-endian throughout:
//   magic "S2TPV01" (7 bytes)
//   count: u64
//   per entry: name_len u32, name bytes, dtype u8 (0 = f64, 1 = f32),
//              rank u8, extents u64[rank]
//   raw value buffers in header order

inline constexpr char kCheckpointMagic[7] = {'S', '2', 'T', 'P', 'V', '0', '1'};

namespace detail {

template <class T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, double>) return 0;
    else if constexpr (std::is_same_v<T, float>) return 1;
    else static_assert(!sizeof(T), "unsupported checkpoint dtype");
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

template <class T>
void write_scalar_le(std::ostream& os, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    if constexpr (sizeof(T) == 8) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_u64(os, bits);
    } else {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        write_u32(os, bits);
    }
}

template <class T>
T read_scalar_le(std::istream& is) {
    T v;
    if constexpr (sizeof(T) == 8) {
        std::uint64_t bits = read_u64(is);
        std::memcpy(&v, &bits, 8);
    } else {
        std::uint32_t bits = read_u32(is);
        std::memcpy(&v, &bits, 4);
    }
    return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const ParamStoreT<T>& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_u64(os, store.entries().size());
    for (const auto& p : store.entries()) {
        detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        os.put(static_cast<char>(detail::dtype_code<T>()));
        os.put(static_cast<char>(p.tensor.rank()));
        for (auto e : p.tensor.shape()) detail::write_u64(os, e);
    }
    for (const auto& p : store.entries())
        for (T v : p.tensor.values()) detail::write_scalar_le(os, v);
    if (!os) throw IoError("write failed: " + path);
}

/// Loads buffers into an already-constructed store. Names, order, dtype and
/// shapes must match the store exactly.
template <class T>
void load_checkpoint(const std::string& path, ParamStoreT<T>& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw IoError("bad checkpoint magic: " + path);
    const std::uint64_t count = detail::read_u64(is);
    if (count != store.entries().size())
        throw IoError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(store.entries().size()));
    for (auto& p : store.entries()) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (name != p.name) throw IoError("checkpoint entry '" + name + "' != model '" + p.name + "'");
        const int dtype = is.get();
        if (dtype != detail::dtype_code<T>()) throw IoError("dtype mismatch for " + name);
        const int rank = is.get();
        if (rank != static_cast<int>(p.tensor.rank())) throw IoError("rank mismatch for " + name);
        for (std::size_t d = 0; d < p.tensor.rank(); ++d) {
            const std::uint64_t e = detail::read_u64(is);
            if (e != p.tensor.shape()[d]) throw IoError("extent mismatch for " + name);
        }
    }
    for (auto& p : store.entries()) {
        auto vals = p.tensor.values_mut();
        for (auto& v : vals) v = detail::read_scalar_le<T>(is);
    }
    if (!is) throw IoError("truncated checkpoint: " + path);
}

}  // namespace s2tpv
