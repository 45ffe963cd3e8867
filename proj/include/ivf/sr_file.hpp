// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <vector>

#include "ivf/io_layer.hpp"

namespace ivf {

// The short-record file: per-group runs of staged posting bytes, one run per
// key group, rewritten by appending a fresh run and repointing the directory.
// Runs load and save sequentially.
//
// Layout: [header: magic u64, version u32, group_count u32]
//         [directory: group_count x (offset u64, length u64)]
//         [runs, appended]
// Run:    [record count u32] then per record
//         [key_len u16][payload_len u32][key bytes][payload bytes]
class sr_file {
public:
    sr_file(file_store& io, file_store::file_id file, uint32_t group_count,
            bool create);

    using record = std::pair<bytes, bytes>;  // key bytes, staged payload

    std::vector<record> load_group(uint32_t group);
    void store_group(uint32_t group, const std::vector<record>& records);

    // Persists the directory and header; callers follow with io commit.
    void flush();

    uint32_t group_count() const { return group_count_; }

private:
    static constexpr uint64_t kMagic = 0x315352465649ull;  // "IVFSR1"
    uint32_t header_bytes() const { return 16 + group_count_ * 16; }

    file_store& io_;
    file_store::file_id file_;
    uint32_t group_count_;
    std::vector<std::pair<uint64_t, uint64_t>> directory_;  // offset, length
    uint64_t tail_ = 0;
    bool dirty_ = false;
};

}  // namespace ivf
