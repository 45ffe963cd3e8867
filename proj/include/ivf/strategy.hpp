// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <cstdint>
#include <string>

#include "ivf/errors.hpp"
#include "ivf/serial.hpp"

namespace ivf {

// Toggles and parameters for the cluster-stream construction strategies.
//
//   c1    phased construction with the per-stream cluster cache
//   em    short posting lists embedded in the dictionary
//   part  clusters divided into equal parts for mid-size lists
//   s     segments: runs of clusters with doubling growth up to the cap
//   fl    staging clusters in a contiguous area at the file front
//   tag   shared streams holding several keys' postings, tagged
//   ch    bounded backward-linked chains that convert to segments
//   sr    in-memory short-record staging with sequential spill per phase
//   ds    small-write packing in the io layer
struct strategy_set {
    bool c1 = true;
    bool em = true;
    bool part = true;
    bool s = true;
    bool fl = true;
    bool tag = true;
    bool ch = false;
    bool sr = false;
    bool ds = false;

    uint32_t em_threshold = 64;          // max embedded bytes per key
    uint32_t chain_limit = 9;            // max elements per chain
    bool chain_jitter = false;           // per-stream limit from first ordinal
    uint32_t jitter_lo = 7;
    uint32_t jitter_hi = 9;
    uint64_t tag_stream_max_bytes = 0;   // 0: defaults to the cluster size
    uint32_t sr_block_size = 128;
    uint64_t sr_memory_budget = 16ull << 20;

    void validate() const {
        if (ch && !s) throw config_error("strategy CH requires S");
        if (sr && !c1) throw config_error("strategy SR requires C1");
        if (chain_limit < 1) throw config_error("chain limit must be at least 1");
        if (chain_jitter && (jitter_lo < 1 || jitter_lo > jitter_hi))
            throw config_error("bad chain limit jitter range");
        if (sr_block_size == 0) throw config_error("sr.block_size must be positive");
        if (em && em_threshold > 1024)
            throw config_error("em.threshold above 1024 bytes is not supported");
    }

    // The three experiment presets: 1 = the base six, 2 = +CH+SR, 3 = +DS.
    static strategy_set experiment(int n) {
        strategy_set st;
        st.c1 = st.em = st.part = st.s = st.fl = st.tag = true;
        if (n >= 2) st.ch = st.sr = true;
        if (n >= 3) st.ds = true;
        if (n < 1 || n > 3) throw config_error("experiment set must be 1, 2, or 3");
        return st;
    }

    std::string names() const {
        std::string out;
        auto add = [&](bool on, const char* name) {
            if (!on) return;
            if (!out.empty()) out += "+";
            out += name;
        };
        add(c1, "C1");
        add(em, "EM");
        add(part, "PART");
        add(s, "S");
        add(fl, "FL");
        add(tag, "TAG");
        add(ch, "CH");
        add(sr, "SR");
        add(ds, "DS");
        return out;
    }
};

}  // namespace ivf
