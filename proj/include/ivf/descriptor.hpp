// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>

#include "ivf/cluster_store.hpp"
#include "ivf/postings.hpp"

namespace ivf {

enum class stream_state : uint8_t {
    empty = 0,     // key known, no stored postings
    embedded = 1,  // postings inline in the dictionary entry
    tagged = 2,    // postings live in the group's shared stream
    part = 3,      // one part of a divided cluster
    chain = 4,     // backward-linked chain of elements
    segments = 5,  // forward-linked run(s) with doubling growth
};

// The per-key storage record kept in the dictionary. Only the fields of the
// active state are meaningful.
struct stream_descriptor {
    stream_state state = stream_state::empty;
    uint32_t group = 0;

    uint64_t total_postings = 0;
    posting last{0, 0};  // delta context for the next append

    // staging
    uint64_t fl_cluster = no_cluster;
    uint32_t fl_used = 0;
    uint32_t sr_used = 0;  // bytes staged in this key's short record

    // tagged state
    uint16_t tag = 0;
    uint16_t next_tag = 0;  // shared streams only: highest tag ever assigned

    // embedded state
    bytes inline_bytes;

    // part state
    part_ref part;
    uint32_t part_used = 0;

    // chain and segments states
    uint64_t first_cluster = no_cluster;
    run last_run;
    uint64_t last_used = 0;      // data bytes in the last element / segment
    uint32_t element_count = 0;  // chain elements, or linked segments
    uint32_t chain_limit = 0;    // resolved per-stream limit; 0 when unset
    uint64_t main_bytes = 0;     // data bytes in main storage, staging excluded

    bytes serialize() const;
    static stream_descriptor parse(byte_view data);

    friend bool operator==(const stream_descriptor&, const stream_descriptor&) = default;
};

}  // namespace ivf
