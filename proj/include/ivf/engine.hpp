// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "ivf/cluster_cache.hpp"
#include "ivf/cluster_store.hpp"
#include "ivf/descriptor.hpp"
#include "ivf/dictionary.hpp"
#include "ivf/io_layer.hpp"
#include "ivf/phase_plan.hpp"
#include "ivf/postings.hpp"
#include "ivf/sr_file.hpp"
#include "ivf/strategy.hpp"

namespace ivf {

struct engine_config {
    store_config store;
    strategy_set strategies;
    uint32_t cache_per_stream = 8;
    uint64_t cache_total = 64ull << 20;
    phase_plan plan{3, 2};
    uint32_t dict_bucket_size = 4096;
    uint32_t dict_cache_pages = 1024;
    uint64_t ds_small_threshold = 32768;
    uint64_t ds_pack_capacity = 1ull << 20;

    // tag_stream_max_bytes defaults to the cluster size; without C1 there is
    // no cache and a single group per class.
    void normalize();
    void validate() const;
    bytes serialize() const;
    static engine_config parse(byte_view data);
};

struct append_hints {
    uint32_t group = 0;
    bool tag_eligible = false;
};

// Construction-time observations, used by tests and audits. Keyed by key
// bytes; enable only for workloads whose key count fits in memory.
class audit_log {
public:
    struct stream_info {
        std::vector<stream_state> transitions;
        std::vector<uint32_t> segment_lengths;   // every segment allocation
        uint32_t max_chain_len = 0;
        uint32_t resolved_chain_limit = 0;
        uint64_t partial_chain_appends = 0;      // elements appended not full
        uint64_t tail_loads = 0;                 // partial-tail reads at activation
    };

    bool enabled = false;

    void transition(byte_view key, stream_state to) {
        if (enabled) info(key).transitions.push_back(to);
    }
    void segment_alloc(byte_view key, uint32_t len) {
        if (enabled) info(key).segment_lengths.push_back(len);
    }
    void chain_len(byte_view key, uint32_t len, uint32_t limit) {
        if (!enabled) return;
        auto& i = info(key);
        i.max_chain_len = std::max(i.max_chain_len, len);
        i.resolved_chain_limit = limit;
    }
    void chain_append(byte_view key, bool full) {
        if (enabled && !full) ++info(key).partial_chain_appends;
    }
    void tail_load(byte_view key) {
        if (enabled) ++info(key).tail_loads;
    }

    const std::map<bytes, stream_info>& streams() const { return streams_; }
    void clear() { streams_.clear(); }

private:
    stream_info& info(byte_view key) { return streams_[bytes(key.begin(), key.end())]; }
    std::map<bytes, stream_info> streams_;
};

struct verify_report {
    bool ok = true;
    std::vector<std::string> problems;
    uint64_t streams = 0;
    uint64_t live_clusters = 0;
    uint64_t free_clusters = 0;

    void fail(std::string msg) {
        ok = false;
        if (problems.size() < 50) problems.push_back(std::move(msg));
    }
};

// One sub-index: a dictionary, a cluster file, staging structures, and the
// per-key stream state machine gluing them together. Appends happen inside
// phases; each phase handles one key group and ends with a commit.
class index_engine {
public:
    static std::unique_ptr<index_engine> create(const std::string& dir,
                                                const std::string& name,
                                                engine_config cfg);
    static std::unique_ptr<index_engine> open(const std::string& dir,
                                              const std::string& name);
    ~index_engine();

    const engine_config& config() const { return cfg_; }
    const std::string& name() const { return name_; }

    // -- phases ---------------------------------------------------------------

    void begin_phase(uint32_t group);
    void end_phase();
    bool phase_active() const { return active_group_.has_value(); }
    uint32_t active_group() const { return *active_group_; }

    // -- appending and reading -------------------------------------------------

    void append(byte_view key, std::span<const posting> batch,
                const append_hints& hints);

    std::vector<posting> read_postings(byte_view key);
    std::optional<stream_descriptor> find_descriptor(byte_view key);

    // Moves a stream's staged bytes (short record or staging cluster) into
    // main storage.
    void flush_staging(byte_view key);

    // Pulls one key out of its shared stream into a dedicated stream.
    stream_descriptor extract_from_tagged(byte_view key);

    // -- maintenance -------------------------------------------------------------

    // Persists everything outside a phase.
    void commit_all();

    io_ledger ledger() const { return io_.snapshot_ledger(); }
    audit_log& audit() { return audit_; }
    verify_report verify();

    dictionary& dict() { return *dict_; }
    cluster_store& store() { return *store_; }
    file_store& io() { return io_; }

    std::pair<uint32_t, uint16_t> register_tagged(byte_view key,
                                                  const append_hints& hints);

    // test hooks
    uint64_t sr_resident_bytes() const { return sr_resident_bytes_; }
    static bytes shared_stream_key(uint32_t group);

private:
    index_engine(const std::string& dir, const std::string& name,
                 engine_config cfg, bool create);

    struct live_stream {
        stream_descriptor desc;
        uint64_t pin_id = 0;
        bool dirty = false;
    };

    struct shared_mem {
        stream_descriptor desc;
        std::vector<tagged_posting> postings;
        std::map<uint16_t, bytes> members;  // tag -> key bytes
        uint64_t approx_bytes = 0;
        bool dirty = false;
    };

    // stream plumbing
    live_stream& activate(byte_view key, const append_hints* hints);
    void maybe_load_tail(byte_view key, live_stream& ls);
    void staging_append(byte_view key, live_stream& ls, byte_view data);
    void append_main(byte_view key, live_stream& ls, byte_view data);
    void append_chain_element(byte_view key, live_stream& ls, byte_view data);
    void extend_chain(byte_view key, live_stream& ls, byte_view pending);
    void convert_chain(byte_view key, live_stream& ls, byte_view pending);
    void append_segments(byte_view key, live_stream& ls, byte_view data);
    void transition_out(byte_view key, live_stream& ls, const bytes& data,
                        std::span<const posting> batch_postings, bool tag_eligible);
    void flush_sr(byte_view key, live_stream& ls);
    void flush_fl(byte_view key, live_stream& ls);
    void update_pins(byte_view key, live_stream& ls);
    void free_main_storage(stream_descriptor& desc);

    // chain geometry
    uint64_t elem_capacity(uint32_t len) const {
        return uint64_t{len} * store_->cluster_capacity() - kChainTrailerBytes;
    }
    uint64_t seg_capacity(uint32_t len) const {
        return uint64_t{len} * store_->cluster_capacity();
    }
    uint32_t resolve_chain_limit(uint64_t first_cluster) const;

    struct chain_element {
        run r;
        uint64_t used = 0;
        uint32_t prev_len = 0;
        uint64_t prev_last = no_cluster;
        bytes data;
    };
    chain_element read_element(run r, uint64_t used);
    bytes element_image(byte_view data, uint32_t len, uint32_t prev_len,
                        uint64_t prev_last);
    std::vector<chain_element> read_chain_all(const stream_descriptor& desc);
    bytes read_main_bytes(const stream_descriptor& desc);

    // shared (tagged) streams
    shared_mem& load_shared(uint32_t group);
    void rewrite_shared(uint32_t group, shared_mem& sm);
    void enforce_shared_cap(uint32_t group, shared_mem& sm);
    stream_descriptor extract_locked(byte_view key, live_stream* ls);

    // SR records
    bytes* sr_record(byte_view key);
    bool sr_create(byte_view key, live_stream& ls);
    void sr_append_bytes(byte_view key, live_stream& ls, byte_view data);

    static constexpr uint32_t kChainTrailerBytes = 8;
    static constexpr uint32_t kChainMagic = 0x4B4C4843;  // "CHLK"

    std::string dir_;
    std::string name_;
    engine_config cfg_;

    file_store io_;
    std::unique_ptr<cluster_store> store_;
    std::unique_ptr<dictionary> dict_;
    std::unique_ptr<sr_file> sr_;
    std::unique_ptr<cluster_cache> cache_;
    audit_log audit_;

    std::optional<uint32_t> active_group_;
    std::map<bytes, live_stream> live_;
    std::map<uint32_t, shared_mem> shared_live_;
    std::map<bytes, bytes> sr_records_;  // active group's short records
    uint64_t sr_resident_bytes_ = 0;
    std::map<uint32_t, std::map<bytes, bytes>> sr_read_memo_;
    uint64_t next_pin_id_ = 1;
};

}  // namespace ivf
