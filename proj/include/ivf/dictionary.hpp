// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivf/io_layer.hpp"

namespace ivf {

// Persistent map from canonical key bytes to serialized stream descriptors,
// laid out as an extendible-hash file:
//
//   [64-byte header][bucket pages and directory blobs, log-appended]
//
// The header points at the live directory (an array of bucket page offsets
// indexed by the low global_depth bits of the key hash). Buckets are
// fixed-size pages holding length-prefixed entries; a full bucket splits,
// doubling the directory when its local depth catches up. Superseded
// directory blobs are abandoned in place.
//
// Touched pages live in a bounded write-back cache until flush(), so a
// construction phase pays for each dirty bucket once.
class dictionary {
public:
    dictionary(file_store& io, file_store::file_id file, bool create,
               uint32_t bucket_size = 4096, size_t cache_pages = 1024);

    std::optional<bytes> get(byte_view key);
    void put(byte_view key, byte_view value);
    bool contains(byte_view key) { return get(key).has_value(); }

    uint64_t entry_count() const { return entry_count_; }
    uint32_t global_depth() const { return global_depth_; }
    uint64_t bucket_count() const { return buckets_allocated_; }

    // Visits every entry. The order is unspecified but deterministic.
    void for_each(const std::function<void(byte_view key, byte_view value)>& fn);

    // Writes dirty pages, the directory, and the header. Callers follow with
    // file_store::commit().
    void flush();

private:
    struct page {
        bytes data;
        bool dirty = false;
        uint64_t touch = 0;
    };

    static constexpr uint64_t kMagic = 0x31434944465649ull;  // "IVFDIC1"
    static constexpr uint32_t kHeaderBytes = 64;
    static constexpr uint32_t kPageHeaderBytes = 8;

    page& load_page(uint64_t offset);
    uint64_t alloc_page();
    void evict_if_needed();
    void split_bucket(uint64_t dir_index);
    uint64_t dir_slot(uint64_t hash) const {
        return global_depth_ == 0 ? 0 : (hash & ((uint64_t{1} << global_depth_) - 1));
    }

    // entry helpers over a page image
    struct entry_view {
        size_t pos;
        byte_view key;
        byte_view value;
    };
    std::optional<entry_view> find_entry(const bytes& data, byte_view key) const;

    file_store& io_;
    file_store::file_id file_;
    uint32_t bucket_size_;
    size_t cache_pages_;

    uint32_t global_depth_ = 0;
    uint64_t buckets_allocated_ = 0;
    uint64_t entry_count_ = 0;
    uint64_t tail_ = kHeaderBytes;
    uint64_t last_dir_offset_ = 0;
    std::vector<uint64_t> directory_;
    bool dir_dirty_ = true;

    std::map<uint64_t, page> cache_;
    uint64_t clock_ = 0;
};

}  // namespace ivf
