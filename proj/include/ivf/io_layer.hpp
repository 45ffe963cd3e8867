// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivf/serial.hpp"

namespace ivf {

// Counters of physical traffic, maintained by file_store. Monotonic; every
// physical read/write bumps exactly one op counter by one and the byte
// counter by the transfer length.
struct io_ledger {
    uint64_t bytes_read = 0;
    uint64_t bytes_written = 0;
    uint64_t read_ops = 0;
    uint64_t write_ops = 0;

    io_ledger& operator+=(const io_ledger& o) {
        bytes_read += o.bytes_read;
        bytes_written += o.bytes_written;
        read_ops += o.read_ops;
        write_ops += o.write_ops;
        return *this;
    }
    uint64_t total_ops() const { return read_ops + write_ops; }
    uint64_t total_bytes() const { return bytes_read + bytes_written; }
};

struct ds_config {
    bool enabled = false;
    uint64_t small_threshold = 32768;      // writes <= this are packed
    uint64_t pack_buffer_capacity = 1 << 20;

    void validate() const;
};

// All file access in the engine goes through this layer. It presents logical
// byte-addressed files and maps them onto:
//   <index>.<suffix>  one physical file per registered logical file
//   <index>.pack      append-only target of packed small writes
//   <index>.dsmap     persisted logical->physical mapping records
//
// With packing enabled, writes not above the small threshold accumulate in a
// memory buffer that is flushed to the pack file as one physical write when
// full or at commit. Reads resolve through the mapping and are charged one
// op per contiguous physical range actually requested.
class file_store {
public:
    using file_id = uint16_t;

    enum class mode { create, open };

    file_store(std::string dir, std::string index_name, ds_config ds, mode m);
    ~file_store();

    file_store(const file_store&) = delete;
    file_store& operator=(const file_store&) = delete;

    // Logical files must be registered in the same order on every open.
    file_id register_file(const std::string& suffix);

    // Replaces the packing configuration. Only valid while the pack buffer is
    // empty (typically right after opening, once the stored config is known).
    void set_packing(ds_config ds);

    void write(file_id f, uint64_t offset, byte_view data);
    void read(file_id f, uint64_t offset, std::span<uint8_t> out);
    bytes read(file_id f, uint64_t offset, uint64_t length);

    // As read(), but never-written subranges inside the request come back as
    // zeros instead of failing, the way a sparse file reads. Holes do not
    // split an otherwise contiguous physical request.
    void read_sparse(file_id f, uint64_t offset, std::span<uint8_t> out);
    bytes read_sparse(file_id f, uint64_t offset, uint64_t length);

    // Flushes the pack buffer and persists the mapping table. Data is
    // readable after reopen once this returns.
    void commit();

    io_ledger snapshot_ledger() const { return ledger_; }

    uint64_t logical_size(file_id f) const;
    bool created() const { return created_; }

    // Introspection used by tests and the verify walk.
    size_t mapping_entry_count() const;
    uint64_t pack_buffer_bytes() const { return pending_.size(); }

private:
    enum class src : uint8_t { main, pack, pending };

    struct extent {
        uint64_t len = 0;
        src where = src::main;
        uint64_t phys = 0;  // main: == logical start; pack: pack file offset;
                            // pending: offset into the pack buffer
    };

    struct logical_file {
        std::string path;
        int fd = -1;
        std::map<uint64_t, extent> extents;  // keyed by logical start
        uint64_t size = 0;                   // max end of all writes
        uint64_t phys_size = 0;              // bytes present in the main file
    };

    void read_impl(file_id f, uint64_t offset, std::span<uint8_t> out,
                   bool sparse);

    void insert_extent(file_id f, uint64_t off, extent e);
    void flush_pack();
    void persist_mapping();
    void load_mapping();

    std::string dir_;
    std::string name_;
    ds_config ds_;
    bool created_ = false;

    std::vector<logical_file> files_;
    int pack_fd_ = -1;
    int dsmap_fd_ = -1;
    uint64_t pack_size_ = 0;  // physical bytes already flushed to the pack file
    bool dsmap_dirty_ = false;

    bytes pending_;                                      // pack buffer
    std::vector<std::pair<file_id, uint64_t>> pending_refs_;
    std::map<file_id, std::map<uint64_t, extent>> unclaimed_;  // dsmap records
                                                               // seen before
                                                               // registration
    io_ledger ledger_;
};

}  // namespace ivf
