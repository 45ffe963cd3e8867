// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/postings.hpp"

#include <string>

namespace ivf {

void put_varint(bytes& out, uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<uint8_t>(v) | 0x80);
        v >>= 7;
    }
    out.push_back(static_cast<uint8_t>(v));
}

size_t varint_size(uint64_t v) {
    size_t n = 1;
    while (v >= 0x80) {
        v >>= 7;
        ++n;
    }
    return n;
}

uint64_t get_varint(byte_view data, size_t& off) {
    uint64_t v = 0;
    int shift = 0;
    for (;;) {
        if (off >= data.size())
            throw corrupt_block("truncated varint at offset " + std::to_string(off));
        uint8_t b = data[off++];
        if (shift == 63 && (b & 0xFE))
            throw corrupt_block("varint overflows 64 bits");
        v |= static_cast<uint64_t>(b & 0x7F) << shift;
        if (!(b & 0x80)) return v;
        shift += 7;
        if (shift > 63) throw corrupt_block("varint longer than 10 bytes");
    }
}

void encode_posting(bytes& out, const posting& p, posting& context) {
    if (p <= context)
        throw order_violation("posting (" + std::to_string(p.doc) + "," +
                              std::to_string(p.pos) + ") not above predecessor (" +
                              std::to_string(context.doc) + "," +
                              std::to_string(context.pos) + ")");
    uint64_t doc_delta = p.doc - context.doc;
    put_varint(out, doc_delta);
    put_varint(out, doc_delta > 0 ? p.pos : p.pos - context.pos);
    context = p;
}

bytes encode_postings(std::span<const posting> list, std::optional<posting> prev) {
    bytes out;
    posting context = prev.value_or(posting{0, 0});
    for (const posting& p : list) encode_posting(out, p, context);
    return out;
}

posting posting_decoder::next() {
    uint64_t doc_delta = get_varint(data_, off_);
    uint64_t v = get_varint(data_, off_);
    posting p;
    if (doc_delta > 0) {
        p.doc = context_.doc + doc_delta;
        if (p.doc < context_.doc) throw corrupt_block("doc id overflow");
        p.pos = static_cast<uint32_t>(v);
    } else {
        p.doc = context_.doc;
        p.pos = context_.pos + static_cast<uint32_t>(v);
    }
    // A decoded posting must land strictly above its predecessor; the only
    // exemption is the first posting of a context-free stream, whose delta
    // base (0,0) is not itself part of the list.
    bool strict = has_prev_ || !first_;
    if (strict && p <= context_)
        throw corrupt_block("posting order violated during decode");
    if (!strict && p == context_)
        throw corrupt_block("posting (0,0) cannot be reconstructed");
    first_ = false;
    context_ = p;
    return p;
}

std::vector<posting> decode_postings(byte_view data, std::optional<posting> prev) {
    posting_decoder dec(data, prev);
    std::vector<posting> out;
    while (!dec.done()) out.push_back(dec.next());
    return out;
}

void encode_tagged_posting(bytes& out, const tagged_posting& t, tagged_posting& context) {
    if (t <= context)
        throw order_violation("tagged posting not above predecessor");
    uint64_t doc_delta = t.p.doc - context.p.doc;
    put_varint(out, doc_delta);
    put_varint(out, doc_delta > 0 ? t.p.pos : t.p.pos - context.p.pos);
    put_varint(out, t.tag);
    context = t;
}

bytes encode_tagged(std::span<const tagged_posting> list) {
    bytes out;
    tagged_posting context{};
    for (const tagged_posting& t : list) encode_tagged_posting(out, t, context);
    return out;
}

std::vector<tagged_posting> decode_tagged(byte_view data) {
    std::vector<tagged_posting> out;
    tagged_posting context{};  // tag >= 1 keeps every real posting above this
    size_t off = 0;
    while (off != data.size()) {
        uint64_t doc_delta = get_varint(data, off);
        uint64_t v = get_varint(data, off);
        uint64_t tag = get_varint(data, off);
        tagged_posting t;
        if (doc_delta > 0) {
            t.p.doc = context.p.doc + doc_delta;
            if (t.p.doc < context.p.doc) throw corrupt_block("doc id overflow");
            t.p.pos = static_cast<uint32_t>(v);
        } else {
            t.p.doc = context.p.doc;
            t.p.pos = context.p.pos + static_cast<uint32_t>(v);
        }
        if (tag == 0 || tag > 0xFFFF) throw corrupt_block("tag out of range");
        t.tag = static_cast<uint16_t>(tag);
        if (t <= context)
            throw corrupt_block("tagged posting order violated during decode");
        context = t;
        out.push_back(t);
    }
    return out;
}

}  // namespace ivf
