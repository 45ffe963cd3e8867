// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "ivf/errors.hpp"

namespace ivf {

using bytes = std::vector<uint8_t>;
using byte_view = std::span<const uint8_t>;

// Little-endian fixed-width helpers. All on-disk integers go through these.

inline void put_u16(bytes& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

inline void put_u32(bytes& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

inline void put_u64(bytes& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class byte_reader {
public:
    explicit byte_reader(byte_view data) : data_(data) {}

    uint16_t u16() { return static_cast<uint16_t>(fixed(2)); }
    uint32_t u32() { return static_cast<uint32_t>(fixed(4)); }
    uint64_t u64() { return fixed(8); }

    void raw(uint8_t* dst, size_t n) {
        need(n);
        std::memcpy(dst, data_.data() + pos_, n);
        pos_ += n;
    }

    bytes blob(size_t n) {
        need(n);
        bytes b(data_.begin() + pos_, data_.begin() + pos_ + n);
        pos_ += n;
        return b;
    }

    void skip(size_t n) {
        need(n);
        pos_ += n;
    }

    size_t remaining() const { return data_.size() - pos_; }
    size_t position() const { return pos_; }

private:
    uint64_t fixed(size_t width) {
        need(width);
        uint64_t v = 0;
        for (size_t i = 0; i < width; ++i)
            v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }

    void need(size_t n) const {
        if (data_.size() - pos_ < n)
            throw corrupt_entry("record truncated: need " + std::to_string(n) +
                                " bytes, have " + std::to_string(data_.size() - pos_));
    }

    byte_view data_;
    size_t pos_ = 0;
};

// FNV-1a, used wherever a stable cross-platform 64-bit hash is needed
// (key grouping, dictionary buckets). Never replace with std::hash.
inline uint64_t fnv1a(byte_view data) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s) {
    return fnv1a(byte_view(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

}  // namespace ivf
