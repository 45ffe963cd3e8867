// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include <doctest.h>

#include <fstream>

#include "ivf/postings.hpp"
#include "support/reference_codec.hpp"
#include "support/random_lists.hpp"

using namespace ivf;
namespace ts = ivf::testsupport;

namespace {

bytes load_golden(const char* name) {
    std::ifstream in(std::string(IVF_TEST_DATA_DIR) + "/golden/" + name,
                     std::ios::binary);
    REQUIRE(in.good());
    return bytes(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("varint identities") {
    bytes out;
    put_varint(out, 0);
    CHECK(out == bytes{0x00});

    out.clear();
    put_varint(out, 300);
    CHECK(out == bytes{0xAC, 0x02});
    CHECK(ts::ref_varint(300) == std::vector<uint8_t>{0xAC, 0x02});

    // production and reference encoders agree over a sweep
    ts::list_gen gen(7);
    for (int i = 0; i < 2000; ++i) {
        uint64_t v = gen.raw() >> (gen.raw() % 64);
        bytes a;
        put_varint(a, v);
        CHECK(a == bytes(ts::ref_varint(v)));
        size_t off = 0;
        CHECK(get_varint(a, off) == v);
        CHECK(off == a.size());
        CHECK(varint_size(v) == a.size());
    }
}

TEST_CASE("empty list encodes to empty bytes") {
    CHECK(encode_postings({}).empty());
    CHECK(decode_postings({}).empty());
}

TEST_CASE("basic encoding matches the golden file") {
    std::vector<posting> list{{1, 5}, {1, 9}, {2, 3}};
    bytes encoded = encode_postings(list);
    bytes golden = load_golden("postings_basic.bin");
    CHECK(encoded == golden);
    CHECK(bytes(ts::ref_encode(list)) == golden);
    CHECK(decode_postings(golden) == list);
}

TEST_CASE("round trip over random lists") {
    ts::list_gen gen(42);
    for (int i = 0; i < 10000; ++i) {
        auto list = gen.ordered_list(40);
        bytes enc = encode_postings(list);
        CHECK(bytes(ts::ref_encode(list)) == enc);
        CHECK(decode_postings(enc) == list);
    }
}

TEST_CASE("block chaining: concatenated encodings decode to the concatenated list") {
    ts::list_gen gen(99);
    for (int i = 0; i < 500; ++i) {
        auto a = gen.ordered_list(30);
        auto b = gen.ordered_list(30, a.empty() ? posting{0, 0} : a.back());
        bytes enc = encode_postings(a);
        bytes tail = encode_postings(b, a.empty() ? std::optional<posting>{} : a.back());
        enc.insert(enc.end(), tail.begin(), tail.end());
        auto all = a;
        all.insert(all.end(), b.begin(), b.end());
        CHECK(decode_postings(enc) == all);
    }
}

TEST_CASE("explicit prev context") {
    std::vector<posting> list{{5, 2}, {5, 7}};
    bytes enc = encode_postings(list, posting{4, 100});
    CHECK(decode_postings(enc, posting{4, 100}) == list);
    CHECK_THROWS_AS(encode_postings(list, posting{5, 2}), order_violation);
}

TEST_CASE("order violations rejected at encode time") {
    CHECK_THROWS_AS(encode_postings(std::vector<posting>{{2, 1}, {1, 1}}),
                    order_violation);
    CHECK_THROWS_AS(encode_postings(std::vector<posting>{{2, 1}, {2, 1}}),
                    order_violation);
    // (0,0) collides with the implicit delta base
    CHECK_THROWS_AS(encode_postings(std::vector<posting>{{0, 0}}), order_violation);
}

TEST_CASE("truncated varint raises corrupt_block") {
    std::vector<posting> list{{1, 5}, (posting{300, 900})};
    bytes enc = encode_postings(list);
    // strip the final byte: the last varint now dangles with its high bit set
    REQUIRE(enc.back() < 0x80);
    enc.pop_back();
    CHECK_THROWS_AS(decode_postings(enc), corrupt_block);

    // a lone continuation byte
    CHECK_THROWS_AS(decode_postings(bytes{0x80}), corrupt_block);
}

TEST_CASE("tagged merge example: two interleaved keys") {
    // K1: (D1,P1),(D2,P2)  K2: (F1,Q1),(F2,Q2) with interleaving
    // D1 < F1 < F2 < D2
    std::vector<posting> k1{{10, 4}, {40, 1}};
    std::vector<posting> k2{{20, 9}, {30, 2}};
    auto merged = ts::ref_merge_tagged({k1, k2});
    std::vector<tagged_posting> want{
        {{10, 4}, 1}, {{20, 9}, 2}, {{30, 2}, 2}, {{40, 1}, 1}};
    CHECK(merged == want);

    bytes enc = encode_tagged(merged);
    CHECK(bytes(ts::ref_encode_tagged(merged)) == enc);
    CHECK(decode_tagged(enc) == merged);
    CHECK(ts::ref_project(decode_tagged(enc), 1) == k1);
    CHECK(ts::ref_project(decode_tagged(enc), 2) == k2);
}

TEST_CASE("tagged projection property") {
    ts::list_gen gen(1234);
    for (int round = 0; round < 300; ++round) {
        size_t nkeys = 1 + gen.raw() % 6;
        std::vector<std::vector<posting>> lists;
        for (size_t k = 0; k < nkeys; ++k) lists.push_back(gen.ordered_list(25));
        auto merged = ts::ref_merge_tagged(lists);
        auto round_tripped = decode_tagged(encode_tagged(merged));
        CHECK(round_tripped == merged);
        for (size_t k = 0; k < nkeys; ++k)
            CHECK(ts::ref_project(round_tripped, static_cast<uint16_t>(k + 1)) ==
                  lists[k]);
    }
}

TEST_CASE("tagged postings allow equal (doc,pos) with rising tag") {
    std::vector<tagged_posting> list{{{3, 3}, 1}, {{3, 3}, 2}};
    CHECK(decode_tagged(encode_tagged(list)) == list);
    std::vector<tagged_posting> bad{{{3, 3}, 2}, {{3, 3}, 2}};
    CHECK_THROWS_AS(encode_tagged(bad), order_violation);
}
