// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "support/reference_codec.hpp"

#include <algorithm>

namespace ivf::testsupport {

std::vector<uint8_t> ref_varint(uint64_t value) {
    std::vector<uint8_t> out;
    do {
        uint64_t group = value % 128;
        value /= 128;
        out.push_back(static_cast<uint8_t>(value > 0 ? group + 128 : group));
    } while (value > 0);
    return out;
}

static void append(std::vector<uint8_t>& dst, const std::vector<uint8_t>& src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

std::vector<uint8_t> ref_encode(const std::vector<posting>& list, posting context) {
    std::vector<uint8_t> out;
    for (const posting& p : list) {
        append(out, ref_varint(p.doc - context.doc));
        if (p.doc != context.doc)
            append(out, ref_varint(p.pos));
        else
            append(out, ref_varint(p.pos - context.pos));
        context = p;
    }
    return out;
}

std::vector<uint8_t> ref_encode_tagged(const std::vector<tagged_posting>& list) {
    std::vector<uint8_t> out;
    tagged_posting context{};
    for (const tagged_posting& t : list) {
        append(out, ref_varint(t.p.doc - context.p.doc));
        if (t.p.doc != context.p.doc)
            append(out, ref_varint(t.p.pos));
        else
            append(out, ref_varint(t.p.pos - context.p.pos));
        append(out, ref_varint(t.tag));
        context = t;
    }
    return out;
}

std::vector<tagged_posting> ref_merge_tagged(
    const std::vector<std::vector<posting>>& per_key) {
    std::vector<tagged_posting> merged;
    for (size_t i = 0; i < per_key.size(); ++i)
        for (const posting& p : per_key[i])
            merged.push_back(tagged_posting{p, static_cast<uint16_t>(i + 1)});
    std::sort(merged.begin(), merged.end());
    return merged;
}

std::vector<posting> ref_project(const std::vector<tagged_posting>& merged,
                                 uint16_t tag) {
    std::vector<posting> out;
    for (const tagged_posting& t : merged)
        if (t.tag == tag) out.push_back(t.p);
    return out;
}

}  // namespace ivf::testsupport
