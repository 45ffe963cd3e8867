// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "ivf/errors.hpp"
#include "ivf/serial.hpp"

namespace ivf {

// Write-back cache of whole cluster images, active while a construction
// phase runs. Streams pin their tail clusters; eviction is LRU over the
// unpinned rest and writes dirty images through the supplied backend.
class cluster_cache {
public:
    using write_back_fn = std::function<void(uint64_t ordinal, byte_view image)>;

    cluster_cache(uint64_t total_bytes, uint32_t per_stream_slots,
                  uint32_t cluster_size, write_back_fn write_back);

    uint32_t per_stream_slots() const { return per_stream_slots_; }

    // Returns the image and refreshes recency, or nullptr on miss.
    uint8_t* find(uint64_t ordinal);
    bool contains(uint64_t ordinal) const { return entries_.count(ordinal) > 0; }

    // Inserts (or refreshes) an image; null `image` zero-fills. May evict.
    uint8_t* insert(uint64_t ordinal, const uint8_t* image, bool dirty);

    void mark_dirty(uint64_t ordinal);
    void mark_clean(uint64_t ordinal);

    // Discards an entry without writing it back (freed clusters).
    void drop(uint64_t ordinal);

    // Replaces the pin set of one stream. Pinned clusters are never evicted.
    void set_stream_pins(uint64_t stream_id, const std::vector<uint64_t>& ordinals);

    // Writes every dirty image in ascending ordinal order and marks it clean.
    void flush_dirty();

    // Flush, clear all pins, drop everything.
    void end_phase();

    uint64_t resident_bytes() const { return entries_.size() * cluster_size_; }
    uint64_t budget() const { return total_bytes_; }
    size_t resident_clusters() const { return entries_.size(); }
    uint64_t evictions() const { return evictions_; }

private:
    struct entry {
        bytes image;
        bool dirty = false;
        uint64_t last_touch = 0;
        uint32_t pins = 0;
    };

    void evict_down_to(uint64_t target_bytes);
    uint64_t pinned_bytes() const;

    uint64_t total_bytes_;
    uint32_t per_stream_slots_;
    uint32_t cluster_size_;
    write_back_fn write_back_;

    std::map<uint64_t, entry> entries_;
    std::map<uint64_t, std::vector<uint64_t>> stream_pins_;
    uint64_t clock_ = 0;
    uint64_t evictions_ = 0;
};

}  // namespace ivf
