// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/phase_plan.hpp"

namespace ivf {

uint32_t plan_group_count(uint64_t estimated_streams, uint32_t clusters_per_stream,
                          uint32_t cluster_size, uint64_t cache_bytes) {
    if (cache_bytes == 0) throw config_error("cache budget must be positive");
    if (clusters_per_stream == 0)
        throw config_error("clusters per stream must be positive");
    if (estimated_streams == 0) return 1;
    // 128-bit-safe ceiling division via long double would lose precision;
    // split the product instead
    unsigned __int128 numer = static_cast<unsigned __int128>(estimated_streams) *
                              clusters_per_stream * cluster_size;
    unsigned __int128 groups = (numer + cache_bytes - 1) / cache_bytes;
    if (groups < 1) groups = 1;
    if (groups > 0xFFFFFFFFull) throw config_error("group count overflows");
    return static_cast<uint32_t>(groups);
}

}  // namespace ivf
