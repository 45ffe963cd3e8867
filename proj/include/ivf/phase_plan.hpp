// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>

#include "ivf/errors.hpp"
#include "ivf/serial.hpp"

namespace ivf {

enum class key_class : uint8_t { known = 0, unknown = 1 };

// Partition of the key space into numbered groups. Keys of the known class
// map to groups [0, known_groups); the unknown class follows. The group of a
// key depends only on its canonical bytes, so it is stable across runs and
// platforms.
struct phase_plan {
    uint32_t known_groups = 1;
    uint32_t unknown_groups = 1;

    uint32_t group_count() const { return known_groups + unknown_groups; }

    uint32_t group_of(key_class cls, byte_view key_bytes) const {
        uint64_t h = fnv1a(key_bytes);
        if (cls == key_class::known)
            return static_cast<uint32_t>(h % known_groups);
        return known_groups + static_cast<uint32_t>(h % unknown_groups);
    }

    void validate() const {
        if (known_groups < 1 || unknown_groups < 1)
            throw config_error("each key class needs at least one group");
    }
};

// Group-count estimator: enough groups that the streams active in one phase
// keep their cache quota within the total budget:
//
//   groups = ceil(streams * clusters_per_stream * cluster_size / cache_bytes)
//
// `streams` is the caller's estimate of concurrently maintained streams of
// the class (distinct keys with cluster-resident data).
uint32_t plan_group_count(uint64_t estimated_streams, uint32_t clusters_per_stream,
                          uint32_t cluster_size, uint64_t cache_bytes);

}  // namespace ivf
