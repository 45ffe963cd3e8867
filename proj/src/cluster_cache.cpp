// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/cluster_cache.hpp"

#include <algorithm>
#include <cstring>

namespace ivf {

cluster_cache::cluster_cache(uint64_t total_bytes, uint32_t per_stream_slots,
                             uint32_t cluster_size, write_back_fn write_back)
    : total_bytes_(total_bytes),
      per_stream_slots_(per_stream_slots),
      cluster_size_(cluster_size),
      write_back_(std::move(write_back)) {
    if (total_bytes_ < cluster_size_)
        throw config_error("cache.total smaller than one cluster");
    if (per_stream_slots_ == 0)
        throw config_error("cache.per_stream must be at least 1");
}

uint8_t* cluster_cache::find(uint64_t ordinal) {
    auto it = entries_.find(ordinal);
    if (it == entries_.end()) return nullptr;
    it->second.last_touch = ++clock_;
    return it->second.image.data();
}

uint8_t* cluster_cache::insert(uint64_t ordinal, const uint8_t* image, bool dirty) {
    auto it = entries_.find(ordinal);
    if (it == entries_.end()) {
        evict_down_to(total_bytes_ >= cluster_size_ ? total_bytes_ - cluster_size_
                                                    : 0);
        it = entries_.emplace(ordinal, entry{}).first;
        it->second.image.resize(cluster_size_);
    }
    if (image)
        std::memcpy(it->second.image.data(), image, cluster_size_);
    else
        std::fill(it->second.image.begin(), it->second.image.end(), uint8_t{0});
    it->second.dirty = dirty;
    it->second.last_touch = ++clock_;
    return it->second.image.data();
}

void cluster_cache::mark_dirty(uint64_t ordinal) {
    auto it = entries_.find(ordinal);
    IVF_CHECK(it != entries_.end(), "mark_dirty on non-resident cluster");
    it->second.dirty = true;
}

void cluster_cache::mark_clean(uint64_t ordinal) {
    auto it = entries_.find(ordinal);
    if (it != entries_.end()) it->second.dirty = false;
}

void cluster_cache::drop(uint64_t ordinal) {
    entries_.erase(ordinal);
}

void cluster_cache::set_stream_pins(uint64_t stream_id,
                                    const std::vector<uint64_t>& ordinals) {
    auto old = stream_pins_.find(stream_id);
    if (old != stream_pins_.end()) {
        for (uint64_t o : old->second) {
            auto it = entries_.find(o);
            if (it != entries_.end() && it->second.pins > 0) --it->second.pins;
        }
        stream_pins_.erase(old);
    }
    if (ordinals.empty()) return;
    for (uint64_t o : ordinals) {
        auto it = entries_.find(o);
        IVF_CHECK(it != entries_.end(), "pinning a non-resident cluster");
        ++it->second.pins;
    }
    stream_pins_.emplace(stream_id, ordinals);
    if (pinned_bytes() > total_bytes_)
        throw cache_overcommit("pinned clusters exceed the cache budget; "
                               "raise cache.total or use more groups");
}

void cluster_cache::evict_down_to(uint64_t target_bytes) {
    while (resident_bytes() > target_bytes) {
        auto victim = entries_.end();
        for (auto it = entries_.begin(); it != entries_.end(); ++it) {
            if (it->second.pins > 0) continue;
            if (victim == entries_.end() ||
                it->second.last_touch < victim->second.last_touch)
                victim = it;
        }
        if (victim == entries_.end()) {
            if (pinned_bytes() > total_bytes_)
                throw cache_overcommit("cache budget cannot hold the pinned set");
            return;  // everything pinned but within budget
        }
        if (victim->second.dirty) write_back_(victim->first, victim->second.image);
        ++evictions_;
        entries_.erase(victim);
    }
}

uint64_t cluster_cache::pinned_bytes() const {
    uint64_t n = 0;
    for (const auto& [o, e] : entries_)
        if (e.pins > 0) n += cluster_size_;
    return n;
}

void cluster_cache::flush_dirty() {
    for (auto& [ordinal, e] : entries_) {  // std::map: ascending ordinal
        if (!e.dirty) continue;
        write_back_(ordinal, e.image);
        e.dirty = false;
    }
}

void cluster_cache::end_phase() {
    flush_dirty();
    stream_pins_.clear();
    entries_.clear();
}

}  // namespace ivf
