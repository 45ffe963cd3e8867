// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/cluster_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "ivf/errors.hpp"

namespace ivf {

namespace {
constexpr uint32_t kHeaderFixedBytes = 64;
constexpr uint32_t kFormatVersion = 1;
constexpr uint32_t kPartMagic = 0x31545250;  // "PRT1"
}  // namespace

void store_config::validate() const {
    if (cluster_size < 4096)
        throw config_error("cluster_size must be at least 4096");
    if (max_segment_len == 0 || !std::has_single_bit(max_segment_len))
        throw config_error("segment length cap must be a power of two");
    uint32_t prev = 1;
    for (uint32_t d : part_divisions) {
        if (!std::has_single_bit(d) || d <= prev || d > 16)
            throw config_error("part divisions must be increasing powers of two, at most 16");
        prev = d;
    }
}

cluster_store::cluster_store(file_store& io, file_store::file_id dat,
                             store_config cfg, bool create, bytes engine_payload)
    : io_(io), dat_(dat), cfg_(std::move(cfg)),
      engine_payload_(std::move(engine_payload)) {
    if (create) {
        cfg_.validate();
        total_clusters_ = cfg_.fl_area_clusters;
        fl_used_.assign(cfg_.fl_area_clusters, false);
        if (cfg_.fl_area_clusters > 0) {
            // map the staging area so whole-area loads are a single request
            bytes zeros(uint64_t{cfg_.fl_area_clusters} * cfg_.cluster_size, 0);
            io_.write(dat_, cluster_offset(0), zeros);
        }
        persist();
    } else {
        load();
    }
}

// -- allocation ---------------------------------------------------------

uint64_t cluster_store::extend_tail(uint32_t len) {
    uint64_t first = total_clusters_;
    total_clusters_ += len;
    return first;
}

uint64_t cluster_store::alloc_cluster() {
    if (!free_clusters_.empty()) {
        uint64_t c = free_clusters_.back();
        free_clusters_.pop_back();
        free_lookup_.erase(c);
        return c;
    }
    return extend_tail(1);
}

run cluster_store::alloc_run(uint32_t len) {
    IVF_CHECK(len >= 1, "zero-length run");
    if (len == 1) return run{alloc_cluster(), 1};
    auto it = free_runs_.find(len);
    if (it != free_runs_.end() && !it->second.empty()) {
        uint64_t first = it->second.back();
        it->second.pop_back();
        if (it->second.empty()) free_runs_.erase(it);
        for (uint32_t i = 0; i < len; ++i) free_lookup_.erase(first + i);
        return run{first, len};
    }
    return run{extend_tail(len), len};
}

run cluster_store::alloc_segment(uint32_t len) {
    if (!std::has_single_bit(len) || len > cfg_.max_segment_len)
        throw config_error("segment length " + std::to_string(len) +
                           " is not a power of two within the cap");
    return alloc_run(len);
}

void cluster_store::free_cluster(uint64_t c) {
    IVF_CHECK(c >= cfg_.fl_area_clusters && c < total_clusters_,
              "freeing an ordinal outside the allocatable range");
    if (free_lookup_.count(c))
        throw double_free("cluster " + std::to_string(c) + " already free");
    if (parts_.count(c))
        throw double_free("cluster " + std::to_string(c) +
                          " still holds parts; free those instead");
    free_clusters_.push_back(c);
    free_lookup_.insert(c);
    if (cache_) cache_->drop(c);
}

void cluster_store::free_run(run r) {
    if (r.len == 1) {
        free_cluster(r.first);
        return;
    }
    for (uint32_t i = 0; i < r.len; ++i) {
        if (free_lookup_.count(r.first + i))
            throw double_free("cluster " + std::to_string(r.first + i) +
                              " already free");
    }
    for (uint32_t i = 0; i < r.len; ++i) {
        free_lookup_.insert(r.first + i);
        if (cache_) cache_->drop(r.first + i);
    }
    free_runs_[r.len].push_back(r.first);
}

run cluster_store::grow_segment(run current, uint64_t used_bytes) {
    IVF_CHECK(current.len < cfg_.max_segment_len, "segment already at maximum length");
    IVF_CHECK(std::has_single_bit(current.len), "segment length not a power of two");
    IVF_CHECK(used_bytes <= current.len * cluster_capacity(), "used bytes overflow run");
    run grown = alloc_segment(current.len * 2);
    if (used_bytes > 0) {
        bytes data = read_run_data(current, 0, used_bytes);
        uint64_t cap = cluster_capacity();
        uint64_t covered = (used_bytes + cap - 1) / cap;
        bytes image(covered * cfg_.cluster_size, 0);
        for (uint64_t i = 0, off = 0; i < covered; ++i) {
            uint64_t take = std::min<uint64_t>(cap, used_bytes - off);
            std::memcpy(image.data() + i * cfg_.cluster_size, data.data() + off, take);
            off += take;
        }
        write_run_image(grown, image);
    }
    free_run(current);
    return grown;
}

// -- parts ---------------------------------------------------------------

std::optional<part_ref> cluster_store::alloc_part(uint64_t required) {
    uint32_t chosen = 0;
    for (auto it = cfg_.part_divisions.rbegin(); it != cfg_.part_divisions.rend(); ++it)
        if (part_size(*it) >= required) {
            chosen = *it;
            break;
        }
    if (chosen == 0) return std::nullopt;

    auto& free_list = free_parts_[chosen];
    if (free_list.empty()) {
        uint64_t c = alloc_cluster();
        parts_.emplace(c, part_meta{chosen, 0});
        for (uint32_t i = 0; i < chosen; ++i)
            free_list.push_back(part_ref{c, chosen, i});
    }
    part_ref p = free_list.back();
    free_list.pop_back();
    auto& meta = parts_.at(p.cluster);
    IVF_CHECK(!(meta.bitmap & (1u << p.index)), "allocating an occupied part");
    meta.bitmap |= 1u << p.index;
    write_part_meta(p.cluster);
    return p;
}

void cluster_store::free_part(part_ref p) {
    auto it = parts_.find(p.cluster);
    if (it == parts_.end() || it->second.divisions != p.divisions ||
        !(it->second.bitmap & (1u << p.index)))
        throw double_free("part not allocated");
    it->second.bitmap &= ~(1u << p.index);
    if (it->second.bitmap == 0) {
        auto& free_list = free_parts_[p.divisions];
        std::erase_if(free_list,
                      [&](const part_ref& f) { return f.cluster == p.cluster; });
        parts_.erase(it);
        free_cluster(p.cluster);
        return;
    }
    free_parts_[p.divisions].push_back(p);
    write_part_meta(p.cluster);
}

void cluster_store::write_part_meta(uint64_t cluster) {
    const auto& meta = parts_.at(cluster);
    bytes buf;
    buf.reserve(kPartMetaBytes);
    put_u32(buf, kPartMagic);
    put_u16(buf, static_cast<uint16_t>(meta.divisions));
    put_u16(buf, static_cast<uint16_t>(meta.bitmap));
    buf.resize(kPartMetaBytes, 0);
    write_raw(cluster, cfg_.cluster_size - kPartMetaBytes, buf);
}

void cluster_store::write_part(const part_ref& p, uint64_t off, byte_view data) {
    IVF_CHECK(off + data.size() <= part_size(p.divisions), "write past part end");
    write_raw(p.cluster, part_data_offset(p) + off, data);
}

bytes cluster_store::read_part(const part_ref& p, uint64_t off, uint64_t len) {
    IVF_CHECK(off + len <= part_size(p.divisions), "read past part end");
    bytes out(len);
    read_raw(p.cluster, part_data_offset(p) + off, out);
    return out;
}

// -- staging (FL) area -----------------------------------------------------

uint64_t cluster_store::fl_alloc() {
    for (uint64_t c = 0; c < fl_used_.size(); ++c)
        if (!fl_used_[c]) {
            fl_used_[c] = true;
            return c;
        }
    throw fl_area_exhausted("no free staging cluster");
}

void cluster_store::fl_release(uint64_t c) {
    IVF_CHECK(c < fl_used_.size(), "ordinal outside the staging area");
    if (!fl_used_[c]) throw double_free("staging cluster already free");
    fl_used_[c] = false;
    if (cache_) cache_->drop(c);
}

std::vector<std::pair<uint64_t, bytes>> cluster_store::fl_load_all() {
    std::vector<std::pair<uint64_t, bytes>> out;
    if (cfg_.fl_area_clusters == 0) return out;
    if (std::none_of(fl_used_.begin(), fl_used_.end(), [](bool b) { return b; }))
        return out;
    bytes area = io_.read_sparse(dat_, cluster_offset(0),
                                 uint64_t{cfg_.fl_area_clusters} * cfg_.cluster_size);
    for (uint64_t c = 0; c < fl_used_.size(); ++c) {
        if (!fl_used_[c]) continue;
        bytes image(area.begin() + c * cfg_.cluster_size,
                    area.begin() + (c + 1) * cfg_.cluster_size);
        if (cache_) {
            if (const uint8_t* cached = cache_->find(c))
                std::memcpy(image.data(), cached, cfg_.cluster_size);
        }
        out.emplace_back(c, std::move(image));
    }
    return out;
}

// -- cluster and run data access --------------------------------------------

void cluster_store::write_raw(uint64_t c, uint64_t off, byte_view data) {
    IVF_CHECK(off + data.size() <= cfg_.cluster_size, "write past cluster end");
    if (cache_) {
        if (uint8_t* img = cache_->find(c)) {
            std::memcpy(img + off, data.data(), data.size());
            cache_->mark_dirty(c);
            return;
        }
    }
    io_.write(dat_, cluster_offset(c) + off, data);
}

void cluster_store::read_raw(uint64_t c, uint64_t off, std::span<uint8_t> out) {
    IVF_CHECK(off + out.size() <= cfg_.cluster_size, "read past cluster end");
    if (cache_) {
        if (const uint8_t* img = cache_->find(c)) {
            std::memcpy(out.data(), img + off, out.size());
            return;
        }
    }
    io_.read_sparse(dat_, cluster_offset(c) + off, out);
}

void cluster_store::set_link(uint64_t c, uint64_t link) {
    bytes buf;
    put_u64(buf, link);
    write_raw(c, cfg_.cluster_size - kLinkBytes, buf);
}

uint64_t cluster_store::get_link(uint64_t c) {
    uint8_t buf[kLinkBytes];
    read_raw(c, cfg_.cluster_size - kLinkBytes, buf);
    return byte_reader(byte_view(buf, kLinkBytes)).u64();
}

void cluster_store::write_run_data(run r, uint64_t off, byte_view data) {
    uint64_t cap = cluster_capacity();
    IVF_CHECK(off + data.size() <= uint64_t{r.len} * cap, "write past run end");
    uint64_t consumed = 0;
    while (consumed < data.size()) {
        uint64_t pos = off + consumed;
        uint64_t idx = pos / cap;
        uint64_t in_cluster = pos % cap;
        uint64_t take = std::min(cap - in_cluster, data.size() - consumed);
        write_raw(r.first + idx, in_cluster, data.subspan(consumed, take));
        consumed += take;
    }
}

bytes cluster_store::read_run_data(run r, uint64_t off, uint64_t len) {
    uint64_t cap = cluster_capacity();
    IVF_CHECK(off + len <= uint64_t{r.len} * cap, "read past run end");
    bytes out(len);
    if (len == 0) return out;

    uint64_t first_idx = off / cap;
    uint64_t last_idx = (off + len - 1) / cap;

    // fully cached: assemble without touching the device
    bool all_cached = cache_ != nullptr;
    if (cache_) {
        for (uint64_t i = first_idx; i <= last_idx && all_cached; ++i)
            all_cached = cache_->contains(r.first + i);
    }
    if (all_cached) {
        uint64_t consumed = 0;
        while (consumed < len) {
            uint64_t pos = off + consumed;
            uint64_t idx = pos / cap;
            uint64_t in_cluster = pos % cap;
            uint64_t take = std::min(cap - in_cluster, len - consumed);
            read_raw(r.first + idx, in_cluster,
                     std::span<uint8_t>(out.data() + consumed, take));
            consumed += take;
        }
        return out;
    }

    // one physical request covering the whole byte extent, link gaps included
    uint64_t phys_start = cluster_offset(r.first + first_idx) + off % cap;
    uint64_t in_last = (off + len - 1) % cap;
    uint64_t phys_end = cluster_offset(r.first + last_idx) + in_last + 1;
    bytes raw = io_.read_sparse(dat_, phys_start, phys_end - phys_start);

    // overlay anything the cache holds newer
    if (cache_) {
        for (uint64_t i = first_idx; i <= last_idx; ++i) {
            const uint8_t* img = cache_->find(r.first + i);
            if (!img) continue;
            uint64_t cl_begin = cluster_offset(r.first + i);
            uint64_t lo = std::max(phys_start, cl_begin);
            uint64_t hi = std::min(phys_end, cl_begin + cfg_.cluster_size);
            if (lo < hi)
                std::memcpy(raw.data() + (lo - phys_start), img + (lo - cl_begin),
                            hi - lo);
        }
    }

    uint64_t consumed = 0;
    while (consumed < len) {
        uint64_t pos = off + consumed;
        uint64_t idx = pos / cap;
        uint64_t in_cluster = pos % cap;
        uint64_t take = std::min(cap - in_cluster, len - consumed);
        uint64_t raw_off = cluster_offset(r.first + idx) + in_cluster - phys_start;
        std::memcpy(out.data() + consumed, raw.data() + raw_off, take);
        consumed += take;
    }
    return out;
}

bytes cluster_store::read_run_raw(run r) {
    uint64_t total = uint64_t{r.len} * cfg_.cluster_size;
    bool all_cached = cache_ != nullptr;
    if (cache_) {
        for (uint32_t i = 0; i < r.len && all_cached; ++i)
            all_cached = cache_->contains(r.first + i);
    }
    bytes raw(total);
    if (all_cached) {
        for (uint32_t i = 0; i < r.len; ++i)
            read_raw(r.first + i, 0,
                     std::span<uint8_t>(raw.data() + uint64_t{i} * cfg_.cluster_size,
                                        cfg_.cluster_size));
        return raw;
    }
    raw = io_.read_sparse(dat_, cluster_offset(r.first), total);
    if (cache_) {
        for (uint32_t i = 0; i < r.len; ++i) {
            const uint8_t* img = cache_->find(r.first + i);
            if (img)
                std::memcpy(raw.data() + uint64_t{i} * cfg_.cluster_size, img,
                            cfg_.cluster_size);
        }
    }
    return raw;
}

void cluster_store::write_run_image(run r, byte_view image) {
    IVF_CHECK(image.size() % cfg_.cluster_size == 0, "image not cluster-aligned");
    IVF_CHECK(image.size() <= uint64_t{r.len} * cfg_.cluster_size,
              "image larger than run");
    io_.write(dat_, cluster_offset(r.first), image);
    if (cache_) {
        for (uint64_t i = 0; i < image.size() / cfg_.cluster_size; ++i) {
            if (cache_->contains(r.first + i))
                cache_->insert(r.first + i, image.data() + i * cfg_.cluster_size,
                               /*dirty=*/false);
        }
    }
}

void cluster_store::write_back_image(uint64_t ordinal, byte_view image) {
    io_.write(dat_, cluster_offset(ordinal), image);
}

// -- persistence -------------------------------------------------------------

bytes cluster_store::serialize_state() const {
    bytes b;
    put_u32(b, static_cast<uint32_t>(cfg_.part_divisions.size()));
    for (uint32_t d : cfg_.part_divisions) put_u32(b, d);

    put_u32(b, static_cast<uint32_t>(engine_payload_.size()));
    b.insert(b.end(), engine_payload_.begin(), engine_payload_.end());

    put_u32(b, static_cast<uint32_t>(free_clusters_.size()));
    for (uint64_t c : free_clusters_) put_u64(b, c);

    put_u32(b, static_cast<uint32_t>(free_runs_.size()));
    for (const auto& [len, firsts] : free_runs_) {
        put_u32(b, len);
        put_u32(b, static_cast<uint32_t>(firsts.size()));
        for (uint64_t f : firsts) put_u64(b, f);
    }

    put_u32(b, static_cast<uint32_t>(parts_.size()));
    for (const auto& [cluster, meta] : parts_) {
        put_u64(b, cluster);
        put_u16(b, static_cast<uint16_t>(meta.divisions));
        put_u16(b, static_cast<uint16_t>(meta.bitmap));
    }

    bytes flbits((fl_used_.size() + 7) / 8, 0);
    for (size_t i = 0; i < fl_used_.size(); ++i)
        if (fl_used_[i]) flbits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    b.insert(b.end(), flbits.begin(), flbits.end());
    return b;
}

void cluster_store::deserialize_state(byte_view blob) {
    byte_reader r(blob);
    uint32_t ndiv = r.u32();
    cfg_.part_divisions.clear();
    for (uint32_t i = 0; i < ndiv; ++i) cfg_.part_divisions.push_back(r.u32());

    engine_payload_ = r.blob(r.u32());

    free_clusters_.clear();
    free_lookup_.clear();
    uint32_t nfree = r.u32();
    for (uint32_t i = 0; i < nfree; ++i) {
        uint64_t c = r.u64();
        free_clusters_.push_back(c);
        free_lookup_.insert(c);
    }

    free_runs_.clear();
    uint32_t nlens = r.u32();
    for (uint32_t i = 0; i < nlens; ++i) {
        uint32_t len = r.u32();
        uint32_t count = r.u32();
        auto& v = free_runs_[len];
        for (uint32_t j = 0; j < count; ++j) {
            uint64_t first = r.u64();
            v.push_back(first);
            for (uint32_t k = 0; k < len; ++k) free_lookup_.insert(first + k);
        }
    }

    parts_.clear();
    free_parts_.clear();
    uint32_t nparts = r.u32();
    for (uint32_t i = 0; i < nparts; ++i) {
        uint64_t cluster = r.u64();
        part_meta meta;
        meta.divisions = r.u16();
        meta.bitmap = r.u16();
        parts_.emplace(cluster, meta);
        for (uint32_t j = 0; j < meta.divisions; ++j)
            if (!(meta.bitmap & (1u << j)))
                free_parts_[meta.divisions].push_back(part_ref{cluster, meta.divisions, j});
    }

    bytes flbits = r.blob((cfg_.fl_area_clusters + 7) / 8);
    fl_used_.assign(cfg_.fl_area_clusters, false);
    for (size_t i = 0; i < fl_used_.size(); ++i)
        fl_used_[i] = (flbits[i / 8] >> (i % 8)) & 1;
}

void cluster_store::persist() {
    bytes blob;
    for (;;) {
        blob = serialize_state();
        uint64_t head_cap = cfg_.cluster_size - kHeaderFixedBytes - 8 * spill_.size();
        uint64_t capacity = head_cap + spill_.size() * uint64_t{cfg_.cluster_size};
        if (blob.size() <= capacity) break;
        spill_.push_back(alloc_cluster());  // changes state; loop re-serializes
    }

    bytes head;
    head.reserve(cfg_.cluster_size);
    put_u64(head, kMagic);
    put_u32(head, kFormatVersion);
    put_u32(head, cfg_.cluster_size);
    put_u32(head, cfg_.max_segment_len);
    put_u32(head, cfg_.fl_area_clusters);
    put_u64(head, total_clusters_);
    put_u32(head, static_cast<uint32_t>(spill_.size()));
    put_u64(head, blob.size());
    head.resize(kHeaderFixedBytes, 0);
    for (uint64_t s : spill_) put_u64(head, s);

    uint64_t head_cap = cfg_.cluster_size - head.size();
    uint64_t take = std::min<uint64_t>(head_cap, blob.size());
    head.insert(head.end(), blob.begin(), blob.begin() + take);
    head.resize(cfg_.cluster_size, 0);
    io_.write(dat_, 0, head);

    uint64_t off = take;
    for (uint64_t s : spill_) {
        bytes chunk(cfg_.cluster_size, 0);
        uint64_t n = std::min<uint64_t>(cfg_.cluster_size, blob.size() - off);
        std::memcpy(chunk.data(), blob.data() + off, n);
        off += n;
        io_.write(dat_, cluster_offset(s), chunk);
    }
    IVF_CHECK(off == blob.size(), "allocator state not fully persisted");
}

void cluster_store::load() {
    bytes head = io_.read(dat_, 0, kHeaderFixedBytes);
    byte_reader r(head);
    if (r.u64() != kMagic) throw corrupt_entry("bad store magic");
    if (r.u32() != kFormatVersion) throw corrupt_entry("unsupported store version");
    cfg_.cluster_size = r.u32();
    cfg_.max_segment_len = r.u32();
    cfg_.fl_area_clusters = r.u32();
    total_clusters_ = r.u64();
    uint32_t spill_count = r.u32();
    uint64_t blob_len = r.u64();

    bytes rest = io_.read(dat_, kHeaderFixedBytes,
                          cfg_.cluster_size - kHeaderFixedBytes);
    byte_reader rr(rest);
    spill_.clear();
    for (uint32_t i = 0; i < spill_count; ++i) spill_.push_back(rr.u64());

    bytes blob;
    uint64_t head_chunk = std::min<uint64_t>(blob_len, rr.remaining());
    bytes prefix = rr.blob(head_chunk);
    blob.insert(blob.end(), prefix.begin(), prefix.end());
    for (uint64_t s : spill_) {
        if (blob.size() >= blob_len) break;
        uint64_t n = std::min<uint64_t>(cfg_.cluster_size, blob_len - blob.size());
        bytes chunk = io_.read(dat_, cluster_offset(s), n);
        blob.insert(blob.end(), chunk.begin(), chunk.end());
    }
    IVF_CHECK(blob.size() == blob_len, "allocator state truncated");
    deserialize_state(blob);
}

store_usage cluster_store::usage() const {
    store_usage u;
    u.free_clusters = free_clusters_;
    u.free_runs = free_runs_;
    for (const auto& [c, m] : parts_)
        u.part_clusters.emplace(c, std::make_pair(m.divisions, m.bitmap));
    u.spill_clusters = spill_;
    for (uint64_t c = 0; c < fl_used_.size(); ++c)
        if (fl_used_[c]) u.fl_used.push_back(c);
    u.total_clusters = total_clusters_;
    u.fl_area = cfg_.fl_area_clusters;
    return u;
}

}  // namespace ivf
