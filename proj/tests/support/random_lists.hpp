// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "ivf/postings.hpp"

namespace ivf::testsupport {

// Deterministic generator of strictly ordered posting lists.
class list_gen {
public:
    explicit list_gen(uint64_t seed) : rng_(seed) {}

    std::vector<posting> ordered_list(size_t max_len, posting start = {0, 0}) {
        std::vector<posting> out;
        size_t n = rng_() % (max_len + 1);
        posting cur = start;
        out.reserve(n);
        for (size_t i = 0; i < n; ++i) {
            if (cur.doc == 0 || rng_() % 3 == 0) {
                cur.doc += 1 + rng_() % 50;
                cur.pos = static_cast<uint32_t>(rng_() % 1000);
            } else {
                cur.pos += 1 + static_cast<uint32_t>(rng_() % 200);
            }
            out.push_back(cur);
        }
        return out;
    }

    uint64_t raw() { return rng_(); }

private:
    std::mt19937_64 rng_;
};

}  // namespace ivf::testsupport
