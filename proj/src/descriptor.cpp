// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/descriptor.hpp"

#include "ivf/errors.hpp"

namespace ivf {

bytes stream_descriptor::serialize() const {
    bytes b;
    b.push_back(static_cast<uint8_t>(state));
    b.push_back(0);  // reserved
    put_u16(b, tag);
    put_u32(b, group);
    put_u64(b, total_postings);
    put_u64(b, last.doc);
    put_u32(b, last.pos);
    put_u64(b, fl_cluster);
    put_u32(b, fl_used);
    put_u32(b, sr_used);
    put_u16(b, next_tag);

    switch (state) {
        case stream_state::empty:
        case stream_state::tagged:
            break;
        case stream_state::embedded:
            put_u16(b, static_cast<uint16_t>(inline_bytes.size()));
            b.insert(b.end(), inline_bytes.begin(), inline_bytes.end());
            break;
        case stream_state::part:
            put_u64(b, part.cluster);
            put_u16(b, static_cast<uint16_t>(part.divisions));
            put_u16(b, static_cast<uint16_t>(part.index));
            put_u32(b, part_used);
            break;
        case stream_state::chain:
        case stream_state::segments:
            put_u64(b, first_cluster);
            put_u64(b, last_run.first);
            put_u32(b, last_run.len);
            put_u64(b, last_used);
            put_u32(b, element_count);
            put_u32(b, chain_limit);
            put_u64(b, main_bytes);
            break;
    }
    return b;
}

stream_descriptor stream_descriptor::parse(byte_view data) {
    byte_reader r(data);
    stream_descriptor d;
    uint8_t st = r.u16() & 0xFF;  // state + reserved byte
    if (st > static_cast<uint8_t>(stream_state::segments))
        throw corrupt_entry("unknown stream state");
    d.state = static_cast<stream_state>(st);
    d.tag = r.u16();
    d.group = r.u32();
    d.total_postings = r.u64();
    d.last.doc = r.u64();
    d.last.pos = r.u32();
    d.fl_cluster = r.u64();
    d.fl_used = r.u32();
    d.sr_used = r.u32();
    d.next_tag = r.u16();

    switch (d.state) {
        case stream_state::empty:
        case stream_state::tagged:
            break;
        case stream_state::embedded:
            d.inline_bytes = r.blob(r.u16());
            break;
        case stream_state::part:
            d.part.cluster = r.u64();
            d.part.divisions = r.u16();
            d.part.index = r.u16();
            d.part_used = r.u32();
            break;
        case stream_state::chain:
        case stream_state::segments:
            d.first_cluster = r.u64();
            d.last_run.first = r.u64();
            d.last_run.len = r.u32();
            d.last_used = r.u64();
            d.element_count = r.u32();
            d.chain_limit = r.u32();
            d.main_bytes = r.u64();
            break;
    }
    if (r.remaining() != 0) throw corrupt_entry("descriptor has trailing bytes");
    return d;
}

}  // namespace ivf
