// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "ivf/cluster_cache.hpp"
#include "ivf/io_layer.hpp"

namespace ivf {

inline constexpr uint64_t no_cluster = ~uint64_t{0};

struct store_config {
    uint32_t cluster_size = 32768;
    uint32_t max_segment_len = 8;  // N: segment length cap, power of two
    uint32_t fl_area_clusters = 0;
    std::vector<uint32_t> part_divisions = {2, 4, 8, 16};

    void validate() const;
};

// A run of `len` consecutive clusters starting at `first`.
struct run {
    uint64_t first = no_cluster;
    uint32_t len = 0;

    friend bool operator==(const run&, const run&) = default;
};

// One slot of a cluster divided into equal parts.
struct part_ref {
    uint64_t cluster = no_cluster;
    uint32_t divisions = 0;
    uint32_t index = 0;

    friend bool operator==(const part_ref&, const part_ref&) = default;
};

// Allocator snapshot used by tests and the verify walk.
struct store_usage {
    std::vector<uint64_t> free_clusters;
    std::map<uint32_t, std::vector<uint64_t>> free_runs;   // len -> first ordinals
    std::map<uint64_t, std::pair<uint32_t, uint32_t>> part_clusters;  // cluster ->
                                                                      // (divisions,
                                                                      //  bitmap)
    std::vector<uint64_t> spill_clusters;
    std::vector<uint64_t> fl_used;
    uint64_t total_clusters = 0;
    uint32_t fl_area = 0;
};

// Manages the data file as an array of fixed-size clusters: allocation and
// free lists, runs of consecutive clusters, clusters divided into parts, and
// the staging area at the front of the file.
//
// Layout of <index>.dat:
//   [header cluster][cluster 0][cluster 1]...
// Cluster `c` sits at byte (1 + c) * cluster_size. Ordinals below
// fl_area_clusters form the staging area. Every cluster reserves its final
// 8 bytes for a link field; the remaining cluster_size - 8 bytes are the
// data region addressed by the *_data helpers.
class cluster_store {
public:
    cluster_store(file_store& io, file_store::file_id dat, store_config cfg,
                  bool create, bytes engine_payload = {});

    const store_config& config() const { return cfg_; }
    uint64_t cluster_capacity() const { return cfg_.cluster_size - kLinkBytes; }
    uint64_t total_clusters() const { return total_clusters_; }
    const bytes& engine_payload() const { return engine_payload_; }
    void set_engine_payload(bytes b) { engine_payload_ = std::move(b); }

    // -- allocation ---------------------------------------------------------

    uint64_t alloc_cluster();
    // Power-of-two run of at most N clusters (segment discipline).
    run alloc_segment(uint32_t len);
    // Arbitrary-length run, used by chain elements.
    run alloc_run(uint32_t len);
    void free_cluster(uint64_t c);
    void free_run(run r);

    // Doubles a full segment: allocates 2*len, copies `used_bytes` of data
    // into the front, frees the old run. Pure file I/O: one sequential read
    // plus one sequential write.
    run grow_segment(run current, uint64_t used_bytes);

    // -- parts ---------------------------------------------------------------

    uint64_t part_size(uint32_t divisions) const {
        return (cfg_.cluster_size - kPartMetaBytes) / divisions;
    }
    // Smallest part that holds `required` bytes, or nullopt when only a whole
    // cluster can.
    std::optional<part_ref> alloc_part(uint64_t required);
    void free_part(part_ref p);
    uint64_t part_data_offset(const part_ref& p) const {
        return static_cast<uint64_t>(p.index) * part_size(p.divisions);
    }

    void write_part(const part_ref& p, uint64_t off, byte_view data);
    bytes read_part(const part_ref& p, uint64_t off, uint64_t len);

    // -- staging (FL) area ---------------------------------------------------

    uint64_t fl_alloc();
    void fl_release(uint64_t c);
    // Reads the whole staging area in one request and returns images of the
    // clusters currently in use.
    std::vector<std::pair<uint64_t, bytes>> fl_load_all();

    // -- cluster and run data access ----------------------------------------

    // Raw byte access within one cluster (cache-aware). Offsets cover the
    // whole cluster including the link field and part metadata area.
    void write_raw(uint64_t c, uint64_t off, byte_view data);
    void read_raw(uint64_t c, uint64_t off, std::span<uint8_t> out);

    void set_link(uint64_t c, uint64_t link);
    uint64_t get_link(uint64_t c);

    // Data-region access across a run, skipping the per-cluster link gaps.
    // Partial writes touch each affected cluster; whole-run reads issue one
    // physical request and overlay any cached images.
    void write_run_data(run r, uint64_t off, byte_view data);
    bytes read_run_data(run r, uint64_t off, uint64_t len);

    // The run's full raw image (data and link fields) in one request, with
    // cached images overlaid; zero requests when fully cached.
    bytes read_run_raw(run r);

    // Writes a full physical image of a run (data plus link fields) in one
    // request and refreshes overlapping cache entries.
    void write_run_image(run r, byte_view image);

    // -- cache + persistence -------------------------------------------------

    void attach_cache(cluster_cache* cache) { cache_ = cache; }
    cluster_cache* cache() { return cache_; }
    // Raw whole-cluster write used as the cache write-back target.
    void write_back_image(uint64_t ordinal, byte_view image);

    // Serializes the header and allocator state. Callers follow with
    // file_store::commit().
    void persist();

    store_usage usage() const;

private:
    static constexpr uint32_t kLinkBytes = 8;
    static constexpr uint32_t kPartMetaBytes = 64;
    static constexpr uint64_t kMagic = 0x31525453465649ull;  // "IVFSTR1"

    uint64_t cluster_offset(uint64_t c) const {
        return (1 + c) * cfg_.cluster_size;
    }
    uint64_t extend_tail(uint32_t len);
    void write_part_meta(uint64_t cluster);
    void load();
    bytes serialize_state() const;
    void deserialize_state(byte_view blob);

    file_store& io_;
    file_store::file_id dat_;
    store_config cfg_;
    bytes engine_payload_;

    uint64_t total_clusters_ = 0;
    std::vector<uint64_t> free_clusters_;
    std::set<uint64_t> free_lookup_;                    // double-free detection
    std::map<uint32_t, std::vector<uint64_t>> free_runs_;

    struct part_meta {
        uint32_t divisions = 0;
        uint32_t bitmap = 0;  // bit set = part in use
    };
    std::map<uint64_t, part_meta> parts_;
    std::map<uint32_t, std::vector<part_ref>> free_parts_;

    std::vector<bool> fl_used_;
    std::vector<uint64_t> spill_;  // header continuation clusters

    cluster_cache* cache_ = nullptr;
};

}  // namespace ivf
