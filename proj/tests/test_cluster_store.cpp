// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include <doctest.h>

#include <random>

#include "ivf/cluster_store.hpp"
#include "ivf/errors.hpp"
#include "support/temp_dir.hpp"

using namespace ivf;
using ivf::testsupport::temp_dir;

namespace {

struct fixture {
    temp_dir td{"store"};
    file_store io;
    cluster_store store;

    explicit fixture(store_config cfg = {}, ds_config ds = {})
        : io(td.path(), "idx", ds, file_store::mode::create),
          store(io, io.register_file("dat"), cfg, /*create=*/true) {}
};

bytes pattern(size_t len, uint8_t seed) {
    bytes b(len);
    for (size_t i = 0; i < len; ++i) b[i] = static_cast<uint8_t>(seed + i * 13);
    return b;
}

}  // namespace

TEST_CASE("first allocation on an empty store is ordinal zero") {
    fixture fx;
    CHECK(fx.store.alloc_cluster() == 0);
}

TEST_CASE("freed clusters are reused most-recent-first") {
    fixture fx;
    uint64_t a = fx.store.alloc_cluster();
    uint64_t b = fx.store.alloc_cluster();
    fx.store.free_cluster(a);
    fx.store.free_cluster(b);
    CHECK(fx.store.alloc_cluster() == b);
    CHECK(fx.store.alloc_cluster() == a);
}

TEST_CASE("sequential extension hands out consecutive ordinals") {
    fixture fx;
    for (uint64_t i = 0; i < 1000; ++i) CHECK(fx.store.alloc_cluster() == i);
    CHECK(fx.store.total_clusters() == 1000);
}

TEST_CASE("segments are consecutive and recycled whole") {
    fixture fx;
    run s = fx.store.alloc_segment(4);
    CHECK(s == run{0, 4});
    fx.store.free_run(s);
    CHECK(fx.store.alloc_segment(4) == s);
    CHECK_THROWS_AS(fx.store.alloc_segment(3), config_error);
    CHECK_THROWS_AS(fx.store.alloc_segment(16), config_error);  // cap is 8
}

TEST_CASE("recycled longer runs are not split") {
    fixture fx;
    run s4 = fx.store.alloc_segment(4);
    fx.store.free_run(s4);
    run s2 = fx.store.alloc_segment(2);
    CHECK(s2.first == 4);  // carved from the tail, not from the free 4-run
    CHECK(fx.store.alloc_segment(4) == s4);
}

TEST_CASE("growing a segment doubles it, copies data, frees the old run") {
    fixture fx;
    run s = fx.store.alloc_segment(2);
    uint64_t cap = fx.store.cluster_capacity();
    bytes data = pattern(2 * cap, 3);
    fx.store.write_run_data(s, 0, data);

    auto before = fx.io.snapshot_ledger();
    run grown = fx.store.grow_segment(s, data.size());
    auto after = fx.io.snapshot_ledger();

    CHECK(grown.len == 4);
    CHECK(after.read_ops - before.read_ops == 1);
    CHECK(after.write_ops - before.write_ops == 1);
    CHECK(fx.store.read_run_data(grown, 0, data.size()) == data);

    auto u = fx.store.usage();
    REQUIRE(u.free_runs.count(2) == 1);
    CHECK(u.free_runs.at(2) == std::vector<uint64_t>{s.first});

    // at the cap, growth is refused
    run full = fx.store.alloc_segment(8);
    CHECK_THROWS(fx.store.grow_segment(full, 0));
}

TEST_CASE("growing a single cluster preserves its bytes") {
    fixture fx;
    run s = fx.store.alloc_segment(1);
    bytes data = pattern(1234, 9);
    fx.store.write_run_data(s, 0, data);
    run grown = fx.store.grow_segment(s, data.size());
    CHECK(grown.len == 2);
    CHECK(fx.store.read_run_data(grown, 0, data.size()) == data);
}

TEST_CASE("part sizing picks the smallest part that fits") {
    fixture fx;
    CHECK(fx.store.part_size(16) == (32768 - 64) / 16);  // 2044
    auto p = fx.store.alloc_part(1536);
    REQUIRE(p.has_value());
    CHECK(p->divisions == 16);

    auto p2 = fx.store.alloc_part(3000);
    REQUIRE(p2.has_value());
    CHECK(p2->divisions == 8);

    // larger than the largest part -> caller must use a whole cluster
    CHECK(!fx.store.alloc_part(fx.store.part_size(2) + 1).has_value());
}

TEST_CASE("parts of one cluster are independent; freeing the last frees the cluster") {
    fixture fx;
    auto a = fx.store.alloc_part(1000);
    auto b = fx.store.alloc_part(1000);
    REQUIRE(a.has_value());
    REQUIRE(b.has_value());
    CHECK(a->cluster == b->cluster);
    CHECK(a->index != b->index);

    fx.store.write_part(*a, 0, pattern(100, 1));
    fx.store.write_part(*b, 0, pattern(100, 2));
    CHECK(fx.store.read_part(*a, 0, 100) == pattern(100, 1));
    CHECK(fx.store.read_part(*b, 0, 100) == pattern(100, 2));

    fx.store.free_part(*a);
    CHECK_THROWS_AS(fx.store.free_part(*a), double_free);
    fx.store.free_part(*b);
    auto u = fx.store.usage();
    CHECK(u.part_clusters.empty());
    CHECK(u.free_clusters == std::vector<uint64_t>{a->cluster});
}

TEST_CASE("double frees are detected") {
    fixture fx;
    uint64_t c = fx.store.alloc_cluster();
    fx.store.free_cluster(c);
    CHECK_THROWS_AS(fx.store.free_cluster(c), double_free);
    run s = fx.store.alloc_segment(2);
    fx.store.free_run(s);
    CHECK_THROWS_AS(fx.store.free_run(s), double_free);
}

TEST_CASE("staging area allocates, exhausts, and reuses") {
    store_config cfg;
    cfg.fl_area_clusters = 4;
    fixture fx(cfg);

    // data clusters start above the staging area
    CHECK(fx.store.alloc_cluster() == 4);

    CHECK(fx.store.fl_alloc() == 0);
    CHECK(fx.store.fl_alloc() == 1);
    CHECK(fx.store.fl_alloc() == 2);
    CHECK(fx.store.fl_alloc() == 3);
    CHECK_THROWS_AS(fx.store.fl_alloc(), fl_area_exhausted);
    fx.store.fl_release(1);
    CHECK(fx.store.fl_alloc() == 1);
}

TEST_CASE("whole staging area loads with one read") {
    store_config cfg;
    cfg.fl_area_clusters = 64;
    fixture fx(cfg);
    for (int i = 0; i < 5; ++i) fx.store.fl_alloc();
    fx.store.write_raw(2, 0, pattern(100, 42));

    auto before = fx.io.snapshot_ledger();
    auto images = fx.store.fl_load_all();
    auto after = fx.io.snapshot_ledger();
    CHECK(after.read_ops - before.read_ops == 1);
    CHECK(after.bytes_read - before.bytes_read == 64 * 32768);
    REQUIRE(images.size() == 5);
    CHECK(bytes(images[2].second.begin(), images[2].second.begin() + 100) ==
          pattern(100, 42));
}

TEST_CASE("run data access round-trips against a shadow buffer") {
    store_config cfg;
    cfg.cluster_size = 4096;
    fixture fx(cfg);
    run r = fx.store.alloc_segment(8);
    uint64_t cap = fx.store.cluster_capacity();
    bytes shadow(8 * cap, 0);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
        uint64_t off = rng() % shadow.size();
        size_t len = 1 + rng() % std::min<uint64_t>(9000, shadow.size() - off);
        bytes d = pattern(len, static_cast<uint8_t>(rng()));
        fx.store.write_run_data(r, off, d);
        std::copy(d.begin(), d.end(), shadow.begin() + off);

        uint64_t roff = rng() % shadow.size();
        size_t rlen = 1 + rng() % std::min<uint64_t>(9000, shadow.size() - roff);
        bytes got = fx.store.read_run_data(r, roff, rlen);
        CHECK(got == bytes(shadow.begin() + roff, shadow.begin() + roff + rlen));
    }
}

TEST_CASE("whole-run reads cost one request") {
    fixture fx;
    run r = fx.store.alloc_segment(8);
    uint64_t cap = fx.store.cluster_capacity();
    bytes data = pattern(8 * cap, 5);
    bytes image(8 * 32768, 0);
    for (int i = 0; i < 8; ++i)
        std::copy(data.begin() + i * cap, data.begin() + (i + 1) * cap,
                  image.begin() + i * 32768);
    fx.store.write_run_image(r, image);

    auto before = fx.io.snapshot_ledger();
    CHECK(fx.store.read_run_data(r, 0, 8 * cap) == data);
    CHECK(fx.io.snapshot_ledger().read_ops - before.read_ops == 1);
}

TEST_CASE("allocator state survives reopen") {
    temp_dir td("store-reopen");
    store_usage before;
    {
        file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
        store_config cfg;
        cfg.fl_area_clusters = 8;
        cluster_store store(io, io.register_file("dat"), cfg, true);
        store.fl_alloc();
        store.fl_alloc();
        auto p = store.alloc_part(500);
        REQUIRE(p.has_value());
        store.write_part(*p, 0, pattern(200, 77));
        run s = store.alloc_segment(4);
        store.free_run(s);
        for (int i = 0; i < 20; ++i) store.alloc_cluster();
        store.free_cluster(15);
        store.free_cluster(17);
        store.set_engine_payload(pattern(100, 3));
        store.persist();
        io.commit();
        before = store.usage();
    }
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::open);
    cluster_store store(io, io.register_file("dat"), store_config{}, false);
    auto after = store.usage();
    CHECK(after.free_clusters == before.free_clusters);
    CHECK(after.free_runs == before.free_runs);
    CHECK(after.part_clusters == before.part_clusters);
    CHECK(after.fl_used == before.fl_used);
    CHECK(after.total_clusters == before.total_clusters);
    CHECK(store.engine_payload() == pattern(100, 3));
    CHECK(store.config().cluster_size == 32768);
    CHECK(store.config().fl_area_clusters == 8);

    // the persisted part bitmap matches the in-memory registry
    for (auto& [cluster, dv] : after.part_clusters) {
        bytes meta = store.read_part(part_ref{cluster, dv.first, 0}, 0, 0);
        bytes tail(8);
        store.read_raw(cluster, store.config().cluster_size - 64, tail);
        byte_reader r(tail);
        CHECK(r.u32() == 0x31545250);
        CHECK(r.u16() == dv.first);
        CHECK(r.u16() == dv.second);
    }
}

TEST_CASE("allocator state spills into continuation clusters when large") {
    temp_dir td("store-spill");
    store_usage before;
    {
        file_store io(td.path(), "idx", ds_config{}, file_store::mode::create);
        store_config cfg;
        cfg.cluster_size = 4096;
        cluster_store store(io, io.register_file("dat"), cfg, true);
        for (int i = 0; i < 2000; ++i) store.alloc_cluster();
        // free every other cluster: ~1000 entries * 8 bytes > one 4 KB header
        for (int i = 0; i < 2000; i += 2) store.free_cluster(i);
        store.persist();  // may consume free clusters for spill space
        io.commit();
        before = store.usage();
        CHECK(!before.spill_clusters.empty());
    }
    file_store io(td.path(), "idx", ds_config{}, file_store::mode::open);
    cluster_store store(io, io.register_file("dat"), store_config{}, false);
    auto u = store.usage();
    CHECK(u.free_clusters == before.free_clusters);
    CHECK(u.spill_clusters == before.spill_clusters);
    CHECK(store.config().cluster_size == 4096);

    // spill clusters are owned by the header, never also free
    for (uint64_t s : u.spill_clusters)
        CHECK(std::find(u.free_clusters.begin(), u.free_clusters.end(), s) ==
              u.free_clusters.end());
}

TEST_CASE("cache absorbs writes until flushed") {
    fixture fx;
    cluster_cache cache(1 << 20, 4, 32768, [&](uint64_t c, byte_view img) {
        fx.store.write_back_image(c, img);
    });
    fx.store.attach_cache(&cache);

    uint64_t c = fx.store.alloc_cluster();
    cache.insert(c, nullptr, false);
    auto before = fx.io.snapshot_ledger();
    fx.store.write_raw(c, 0, pattern(5000, 1));
    fx.store.write_raw(c, 5000, pattern(5000, 2));
    CHECK(fx.io.snapshot_ledger().write_ops == before.write_ops);

    bytes got(5000);
    fx.store.read_raw(c, 5000, got);
    CHECK(got == pattern(5000, 2));
    CHECK(fx.io.snapshot_ledger().read_ops == before.read_ops);

    cache.flush_dirty();
    auto after = fx.io.snapshot_ledger();
    CHECK(after.write_ops - before.write_ops == 1);
    CHECK(after.bytes_written - before.bytes_written == 32768);

    fx.store.attach_cache(nullptr);
    bytes direct(5000);
    fx.store.read_raw(c, 0, direct);
    CHECK(direct == pattern(5000, 1));
}

TEST_CASE("cache evicts least-recently-used unpinned clusters") {
    fixture fx;
    std::vector<uint64_t> written;
    cluster_cache cache(3 * 32768, 4, 32768, [&](uint64_t c, byte_view img) {
        written.push_back(c);
        fx.store.write_back_image(c, img);
    });
    fx.store.attach_cache(&cache);
    for (uint64_t i = 0; i < 3; ++i) {
        fx.store.alloc_cluster();
        cache.insert(i, nullptr, false);
        fx.store.write_raw(i, 0, pattern(10, uint8_t(i)));  // dirty
    }
    cache.set_stream_pins(1, {0});
    fx.store.alloc_cluster();
    cache.insert(3, nullptr, false);  // evicts 1 (LRU among {1, 2})
    CHECK(written == std::vector<uint64_t>{1});
    CHECK(cache.contains(0));
    CHECK(!cache.contains(1));
    CHECK(cache.contains(2));
    CHECK(cache.contains(3));
}

TEST_CASE("pinned set larger than the budget is refused") {
    fixture fx;
    cluster_cache cache(2 * 32768, 4, 32768, [&](uint64_t c, byte_view img) {
        fx.store.write_back_image(c, img);
    });
    fx.store.attach_cache(&cache);
    for (uint64_t i = 0; i < 3; ++i) {
        fx.store.alloc_cluster();
    }
    cache.insert(0, nullptr, false);
    cache.insert(1, nullptr, false);
    cache.set_stream_pins(7, {0, 1});
    CHECK_THROWS_AS(
        [&] {
            cache.insert(2, nullptr, false);
            cache.set_stream_pins(8, {2});
        }(),
        cache_overcommit);
}

TEST_CASE("run reads overlay dirty cached clusters over stale disk data") {
    fixture fx;
    run r = fx.store.alloc_segment(2);
    uint64_t cap = fx.store.cluster_capacity();
    bytes image(2 * 32768, 0);
    fx.store.write_run_image(r, image);  // zeros on disk

    cluster_cache cache(1 << 20, 4, 32768, [&](uint64_t c, byte_view img) {
        fx.store.write_back_image(c, img);
    });
    fx.store.attach_cache(&cache);
    cache.insert(r.first + 1, nullptr, false);
    fx.store.write_raw(r.first + 1, 0, pattern(100, 9));  // dirty in cache only

    bytes got = fx.store.read_run_data(r, 0, 2 * cap);
    CHECK(bytes(got.begin() + cap, got.begin() + cap + 100) == pattern(100, 9));
    CHECK(bytes(got.begin(), got.begin() + cap) == bytes(cap, 0));
}
