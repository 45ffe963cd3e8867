// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include <doctest.h>

#include <map>
#include <random>

#include "ivf/dictionary.hpp"
#include "ivf/errors.hpp"
#include "support/temp_dir.hpp"

using namespace ivf;
using ivf::testsupport::temp_dir;

namespace {

bytes key_of(const std::string& s) { return bytes(s.begin(), s.end()); }

bytes val_of(uint64_t seed, size_t len) {
    bytes v(len);
    for (size_t i = 0; i < len; ++i) v[i] = static_cast<uint8_t>(seed * 31 + i);
    return v;
}

}  // namespace

TEST_CASE("fresh dictionary has no entries") {
    temp_dir td("dic-fresh");
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
    dictionary dic(io, io.register_file("dic"), true);
    CHECK(!dic.get(key_of("anything")).has_value());
    CHECK(dic.entry_count() == 0);
}

TEST_CASE("put, get, and overwrite") {
    temp_dir td("dic-basic");
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
    dictionary dic(io, io.register_file("dic"), true);

    dic.put(key_of("alpha"), val_of(1, 20));
    dic.put(key_of("beta"), val_of(2, 40));
    CHECK(dic.get(key_of("alpha")) == val_of(1, 20));
    CHECK(dic.get(key_of("beta")) == val_of(2, 40));
    CHECK(dic.entry_count() == 2);

    dic.put(key_of("alpha"), val_of(3, 60));  // overwrite, larger value
    CHECK(dic.get(key_of("alpha")) == val_of(3, 60));
    CHECK(dic.entry_count() == 2);
}

TEST_CASE("map laws under a randomized workload with reopen") {
    temp_dir td("dic-rand");
    std::map<std::string, bytes> shadow;
    std::mt19937_64 rng(2024);
    {
        file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
        dictionary dic(io, io.register_file("dic"), true, 512, 64);
        for (int i = 0; i < 20000; ++i) {
            std::string k = "key-" + std::to_string(rng() % 5000);
            bytes v = val_of(rng(), 1 + rng() % 50);
            dic.put(key_of(k), v);
            shadow[k] = v;
            if (i % 1000 == 0) {
                std::string probe = "key-" + std::to_string(rng() % 5000);
                auto got = dic.get(key_of(probe));
                auto it = shadow.find(probe);
                CHECK((it == shadow.end() ? !got.has_value() : got == it->second));
            }
        }
        CHECK(dic.entry_count() == shadow.size());
        dic.flush();
        io.commit();
    }
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::open);
    dictionary dic(io, io.register_file("dic"), false, 512, 64);
    CHECK(dic.entry_count() == shadow.size());
    for (auto& [k, v] : shadow) CHECK(dic.get(key_of(k)) == v);
    CHECK(!dic.get(key_of("never-written")).has_value());
}

TEST_CASE("for_each visits every entry exactly once") {
    temp_dir td("dic-iter");
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
    dictionary dic(io, io.register_file("dic"), true, 512, 16);
    std::map<std::string, size_t> want;
    for (int i = 0; i < 500; ++i) {
        std::string k = "entry-" + std::to_string(i);
        want[k] = 0;
        dic.put(key_of(k), val_of(i, 8));
    }
    dic.for_each([&](byte_view k, byte_view) {
        std::string s(k.begin(), k.end());
        REQUIRE(want.count(s) == 1);
        want[s] += 1;
    });
    for (auto& [k, n] : want) CHECK(n == 1);
}

TEST_CASE("bucket splits persist through flush and reopen") {
    temp_dir td("dic-split");
    {
        file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
        dictionary dic(io, io.register_file("dic"), true, 256, 8);
        for (int i = 0; i < 300; ++i)
            dic.put(key_of("k" + std::to_string(i)), val_of(i, 16));
        CHECK(dic.global_depth() > 0);
        CHECK(dic.bucket_count() > 1);
        for (int i = 0; i < 300; ++i)
            CHECK(dic.get(key_of("k" + std::to_string(i))) == val_of(i, 16));
        dic.flush();
        io.commit();
    }
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::open);
    dictionary dic(io, io.register_file("dic"), false, 256, 8);
    for (int i = 0; i < 300; ++i)
        CHECK(dic.get(key_of("k" + std::to_string(i))) == val_of(i, 16));
}

TEST_CASE("oversized entries are rejected") {
    temp_dir td("dic-big");
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
    dictionary dic(io, io.register_file("dic"), true, 256, 8);
    CHECK_THROWS_AS(dic.put(key_of("k"), val_of(0, 300)), config_error);
}
