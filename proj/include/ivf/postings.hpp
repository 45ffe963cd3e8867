// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <vector>

#include "ivf/serial.hpp"

namespace ivf {

// One key occurrence: document id plus ordinal word position.
struct posting {
    uint64_t doc = 0;
    uint32_t pos = 0;

    friend auto operator<=>(const posting&, const posting&) = default;
};

// Posting extended with the local key id used inside shared (tagged) streams.
struct tagged_posting {
    posting p;
    uint16_t tag = 0;

    friend auto operator<=>(const tagged_posting&, const tagged_posting&) = default;
};

// Base-128 varint, little-endian 7-bit groups, high bit set on continuation
// bytes. This is the only integer encoding used inside posting blocks.
void put_varint(bytes& out, uint64_t v);
size_t varint_size(uint64_t v);

// Reads one varint at `off` within `data`, advances `off`.
// Throws corrupt_block on a truncated or overlong encoding.
uint64_t get_varint(byte_view data, size_t& off);

// Delta codec for plain posting lists.
//
// Per posting, relative to the previous posting (or to `prev`, or to (0,0)
// when no context is given):
//   varint(doc - prev.doc)
//   if the doc changed: varint(pos)            -- absolute, positions restart
//   else:              varint(pos - prev.pos)
//
// Lists must be strictly (doc, pos)-ordered and strictly above the context
// posting; violations throw order_violation on encode and corrupt_block on
// decode. Posting (0,0) is therefore not encodable against the default
// context.

void encode_posting(bytes& out, const posting& p, posting& context);
bytes encode_postings(std::span<const posting> list,
                      std::optional<posting> prev = std::nullopt);
std::vector<posting> decode_postings(byte_view data,
                                     std::optional<posting> prev = std::nullopt);

// Tagged codec: as above, ordered strictly by (doc, pos, tag), with
// varint(tag) appended per posting. A zero (doc, pos) delta is legal when the
// tag increases.

void encode_tagged_posting(bytes& out, const tagged_posting& t, tagged_posting& context);
bytes encode_tagged(std::span<const tagged_posting> list);
std::vector<tagged_posting> decode_tagged(byte_view data);

// Incremental decoder over a continuous encoded stream; read paths use this
// to walk storage without materializing intermediate copies.
class posting_decoder {
public:
    posting_decoder(byte_view data, std::optional<posting> prev = std::nullopt)
        : data_(data), context_(prev.value_or(posting{0, 0})), has_prev_(prev.has_value()) {}

    bool done() const { return off_ == data_.size(); }
    posting next();

private:
    byte_view data_;
    size_t off_ = 0;
    posting context_;
    bool has_prev_;
    bool first_ = true;
};

}  // namespace ivf
