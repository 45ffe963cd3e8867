// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/engine.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

namespace ivf {

namespace {

constexpr uint8_t kSharedKeyKind = 4;  // reserved; indexer kinds start at 1

bool is_shared_key(byte_view key) {
    return key.size() == 5 && key[0] == kSharedKeyKind;
}

void check_batch(std::span<const posting> batch, const posting& last) {
    posting prev = last;
    for (const posting& p : batch) {
        if (p <= prev)
            throw order_violation("append batch not strictly above the stream tail");
        prev = p;
    }
}

}  // namespace

// -- engine_config ------------------------------------------------------------

void engine_config::normalize() {
    if (strategies.tag_stream_max_bytes == 0)
        strategies.tag_stream_max_bytes = store.cluster_size;
    if (!strategies.c1) plan = phase_plan{1, 1};
}

void engine_config::validate() const {
    store.validate();
    strategies.validate();
    plan.validate();
    if (cache_total < store.cluster_size)
        throw config_error("cache.total must hold at least one cluster");
    if (cache_per_stream < 1) throw config_error("cache.per_stream must be >= 1");
    if (strategies.em && strategies.em_threshold + 128ull > dict_bucket_size)
        throw config_error("em.threshold too large for the dictionary bucket size");
    ds_config{strategies.ds, ds_small_threshold, ds_pack_capacity}.validate();
}

bytes engine_config::serialize() const {
    bytes b;
    put_u32(b, 1);  // payload version
    put_u32(b, store.cluster_size);
    put_u32(b, store.max_segment_len);
    put_u32(b, store.fl_area_clusters);
    uint16_t flags = 0;
    const strategy_set& st = strategies;
    flags |= st.c1 << 0;
    flags |= st.em << 1;
    flags |= st.part << 2;
    flags |= st.s << 3;
    flags |= st.fl << 4;
    flags |= st.tag << 5;
    flags |= st.ch << 6;
    flags |= st.sr << 7;
    flags |= st.ds << 8;
    flags |= st.chain_jitter << 9;
    put_u16(b, flags);
    put_u32(b, st.em_threshold);
    put_u32(b, st.chain_limit);
    put_u32(b, st.jitter_lo);
    put_u32(b, st.jitter_hi);
    put_u64(b, st.tag_stream_max_bytes);
    put_u32(b, st.sr_block_size);
    put_u64(b, st.sr_memory_budget);
    put_u32(b, cache_per_stream);
    put_u64(b, cache_total);
    put_u32(b, plan.known_groups);
    put_u32(b, plan.unknown_groups);
    put_u32(b, dict_bucket_size);
    put_u32(b, dict_cache_pages);
    put_u64(b, ds_small_threshold);
    put_u64(b, ds_pack_capacity);
    return b;
}

engine_config engine_config::parse(byte_view data) {
    byte_reader r(data);
    if (r.u32() != 1) throw corrupt_entry("unsupported engine config version");
    engine_config c;
    c.store.cluster_size = r.u32();
    c.store.max_segment_len = r.u32();
    c.store.fl_area_clusters = r.u32();
    uint16_t flags = r.u16();
    strategy_set& st = c.strategies;
    st.c1 = flags & (1 << 0);
    st.em = flags & (1 << 1);
    st.part = flags & (1 << 2);
    st.s = flags & (1 << 3);
    st.fl = flags & (1 << 4);
    st.tag = flags & (1 << 5);
    st.ch = flags & (1 << 6);
    st.sr = flags & (1 << 7);
    st.ds = flags & (1 << 8);
    st.chain_jitter = flags & (1 << 9);
    st.em_threshold = r.u32();
    st.chain_limit = r.u32();
    st.jitter_lo = r.u32();
    st.jitter_hi = r.u32();
    st.tag_stream_max_bytes = r.u64();
    st.sr_block_size = r.u32();
    st.sr_memory_budget = r.u64();
    c.cache_per_stream = r.u32();
    c.cache_total = r.u64();
    c.plan.known_groups = r.u32();
    c.plan.unknown_groups = r.u32();
    c.dict_bucket_size = r.u32();
    c.dict_cache_pages = r.u32();
    c.ds_small_threshold = r.u64();
    c.ds_pack_capacity = r.u64();
    return c;
}

// -- construction --------------------------------------------------------------

index_engine::index_engine(const std::string& dir, const std::string& name,
                           engine_config cfg, bool create)
    : dir_(dir), name_(name), cfg_(std::move(cfg)),
      io_(dir, name, ds_config{}, create ? file_store::mode::create
                                         : file_store::mode::open) {
    auto dat = io_.register_file("dat");
    auto dic = io_.register_file("dic");
    auto srf = io_.register_file("sr");
    if (create) {
        cfg_.normalize();
        cfg_.validate();
        io_.set_packing(ds_config{cfg_.strategies.ds, cfg_.ds_small_threshold,
                                  cfg_.ds_pack_capacity});
        store_ = std::make_unique<cluster_store>(io_, dat, cfg_.store, true,
                                                 cfg_.serialize());
    } else {
        store_ = std::make_unique<cluster_store>(io_, dat, store_config{}, false);
        cfg_ = engine_config::parse(store_->engine_payload());
        cfg_.store = store_->config();
        io_.set_packing(ds_config{cfg_.strategies.ds, cfg_.ds_small_threshold,
                                  cfg_.ds_pack_capacity});
    }
    dict_ = std::make_unique<dictionary>(io_, dic, create, cfg_.dict_bucket_size,
                                         cfg_.dict_cache_pages);
    sr_ = std::make_unique<sr_file>(io_, srf, cfg_.plan.group_count(), create);
    cache_ = std::make_unique<cluster_cache>(
        cfg_.cache_total, cfg_.cache_per_stream, cfg_.store.cluster_size,
        [this](uint64_t ordinal, byte_view image) {
            store_->write_back_image(ordinal, image);
        });
    store_->attach_cache(cache_.get());
    if (create) commit_all();
}

index_engine::~index_engine() = default;

std::unique_ptr<index_engine> index_engine::create(const std::string& dir,
                                                   const std::string& name,
                                                   engine_config cfg) {
    return std::unique_ptr<index_engine>(new index_engine(dir, name, std::move(cfg), true));
}

std::unique_ptr<index_engine> index_engine::open(const std::string& dir,
                                                 const std::string& name) {
    return std::unique_ptr<index_engine>(new index_engine(dir, name, {}, false));
}

bytes index_engine::shared_stream_key(uint32_t group) {
    bytes k;
    k.push_back(kSharedKeyKind);
    put_u32(k, group);
    return k;
}

uint32_t index_engine::resolve_chain_limit(uint64_t first_cluster) const {
    const strategy_set& st = cfg_.strategies;
    if (!st.ch) return st.s ? 1 : ~uint32_t{0};
    if (!st.chain_jitter) return st.chain_limit;
    uint32_t span = st.jitter_hi - st.jitter_lo + 1;
    return st.jitter_lo + static_cast<uint32_t>(first_cluster % span);
}

// -- phases ---------------------------------------------------------------------

void index_engine::begin_phase(uint32_t group) {
    if (active_group_) throw phase_violation("a phase is already active");
    IVF_CHECK(group < cfg_.plan.group_count(), "group out of range");
    active_group_ = group;
    sr_read_memo_.clear();

    sr_records_.clear();
    sr_resident_bytes_ = 0;
    if (cfg_.strategies.sr) {
        for (auto& [key, payload] : sr_->load_group(group)) {
            sr_resident_bytes_ +=
                (payload.size() + cfg_.strategies.sr_block_size - 1) /
                cfg_.strategies.sr_block_size * cfg_.strategies.sr_block_size;
            sr_records_.emplace(std::move(key), std::move(payload));
        }
    }
    if (cfg_.strategies.c1 && cfg_.strategies.fl) {
        for (auto& [ordinal, image] : store_->fl_load_all())
            cache_->insert(ordinal, image.data(), /*dirty=*/false);
    }
}

void index_engine::end_phase() {
    if (!active_group_) throw phase_violation("no active phase");

    for (auto& [group, sm] : shared_live_) {
        if (sm.dirty) rewrite_shared(group, sm);
    }
    if (cfg_.strategies.sr) {
        std::vector<sr_file::record> records;
        records.reserve(sr_records_.size());
        for (auto& [key, payload] : sr_records_)
            records.emplace_back(key, payload);
        sr_->store_group(*active_group_, records);
    }
    for (auto& [key, ls] : live_) {
        if (ls.dirty) dict_->put(key, ls.desc.serialize());
    }
    for (auto& [group, sm] : shared_live_) {
        if (sm.dirty) dict_->put(shared_stream_key(group), sm.desc.serialize());
    }
    cache_->end_phase();
    dict_->flush();
    sr_->flush();
    store_->persist();
    io_.commit();

    live_.clear();
    shared_live_.clear();
    sr_records_.clear();
    sr_read_memo_.clear();
    sr_resident_bytes_ = 0;
    active_group_.reset();
}

void index_engine::commit_all() {
    IVF_CHECK(!active_group_, "commit_all inside a phase");
    dict_->flush();
    sr_->flush();
    store_->persist();
    io_.commit();
}

// -- stream activation -----------------------------------------------------------

index_engine::live_stream& index_engine::activate(byte_view key,
                                                  const append_hints* hints) {
    bytes k(key.begin(), key.end());
    auto it = live_.find(k);
    if (it != live_.end()) return it->second;

    live_stream ls;
    ls.pin_id = next_pin_id_++;
    if (auto stored = dict_->get(key)) {
        ls.desc = stream_descriptor::parse(*stored);
        if (hints)
            IVF_CHECK(ls.desc.group == hints->group,
                      "key group changed between runs");
    } else {
        if (hints) ls.desc.group = hints->group;
    }
    auto [pos, inserted] = live_.emplace(std::move(k), std::move(ls));
    maybe_load_tail(pos->first, pos->second);
    return pos->second;
}

void index_engine::maybe_load_tail(byte_view key, live_stream& ls) {
    const strategy_set& st = cfg_.strategies;
    if (!st.c1 || !active_group_ || st.fl || st.sr) return;
    stream_descriptor& d = ls.desc;
    uint64_t tail_cluster = no_cluster;
    switch (d.state) {
        case stream_state::part:
            if (d.part_used < store_->part_size(d.part.divisions))
                tail_cluster = d.part.cluster;
            break;
        case stream_state::chain:
            if (d.element_count > 0 && d.last_used < elem_capacity(d.last_run.len))
                tail_cluster =
                    d.last_run.first + d.last_used / store_->cluster_capacity();
            break;
        case stream_state::segments:
            if (d.last_used < seg_capacity(d.last_run.len))
                tail_cluster =
                    d.last_run.first + d.last_used / store_->cluster_capacity();
            break;
        default:
            return;
    }
    if (tail_cluster == no_cluster || cache_->contains(tail_cluster)) return;
    bytes image(cfg_.store.cluster_size);
    store_->read_raw(tail_cluster, 0, image);  // cache miss: a device read
    cache_->insert(tail_cluster, image.data(), /*dirty=*/false);
    audit_.tail_load(key);
}

void index_engine::update_pins(byte_view key, live_stream& ls) {
    (void)key;
    if (!cfg_.strategies.c1 || !active_group_) return;
    const stream_descriptor& d = ls.desc;
    std::vector<uint64_t> pins;
    auto add_if_resident = [&](uint64_t c) {
        if (c != no_cluster && cache_->contains(c)) pins.push_back(c);
    };
    switch (d.state) {
        case stream_state::part:
            add_if_resident(d.part.cluster);
            break;
        case stream_state::chain:
        case stream_state::segments: {
            if (d.element_count == 0) break;
            uint32_t len = d.last_run.len;
            uint32_t take = std::min(len, cfg_.cache_per_stream);
            for (uint32_t i = len - take; i < len; ++i)
                add_if_resident(d.last_run.first + i);
            break;
        }
        default:
            break;
    }
    add_if_resident(d.fl_cluster);
    cache_->set_stream_pins(ls.pin_id, pins);
}

// -- append ------------------------------------------------------------------------

void index_engine::append(byte_view key, std::span<const posting> batch,
                          const append_hints& hints) {
    if (batch.empty()) return;
    if (!active_group_)
        throw phase_violation("appends are only valid inside a phase");
    if (hints.group != *active_group_)
        throw phase_violation("key belongs to group " + std::to_string(hints.group) +
                              " but group " + std::to_string(*active_group_) +
                              " is active");

    live_stream& ls = activate(key, &hints);
    stream_descriptor& d = ls.desc;
    check_batch(batch, d.last);

    if (d.state == stream_state::tagged) {
        shared_mem& sm = load_shared(d.group);
        for (const posting& p : batch) {
            tagged_posting t{p, d.tag};
            if (sm.postings.empty() || sm.postings.back() < t)
                sm.postings.push_back(t);
            else
                sm.postings.insert(
                    std::upper_bound(sm.postings.begin(), sm.postings.end(), t), t);
            sm.approx_bytes += varint_size(p.doc) + varint_size(p.pos) +
                               varint_size(d.tag);
        }
        sm.dirty = true;
        d.last = batch.back();
        d.total_postings += batch.size();
        ls.dirty = true;
        enforce_shared_cap(d.group, sm);
        return;
    }

    bytes encoded;
    posting context = d.last;
    for (const posting& p : batch) encode_posting(encoded, p, context);

    if (d.state == stream_state::empty || d.state == stream_state::embedded) {
        uint64_t inline_total = d.inline_bytes.size() + encoded.size();
        if (cfg_.strategies.em && inline_total <= cfg_.strategies.em_threshold) {
            d.inline_bytes.insert(d.inline_bytes.end(), encoded.begin(),
                                  encoded.end());
            if (d.state == stream_state::empty) {
                d.state = stream_state::embedded;
                audit_.transition(key, d.state);
            }
        } else {
            bytes full = d.inline_bytes;
            full.insert(full.end(), encoded.begin(), encoded.end());
            d.inline_bytes.clear();
            transition_out(key, ls, full, batch, hints.tag_eligible);
        }
    } else {
        staging_append(key, ls, encoded);
    }

    d.last = batch.back();
    d.total_postings += batch.size();
    ls.dirty = true;
    update_pins(key, ls);
}

void index_engine::transition_out(byte_view key, live_stream& ls, const bytes& data,
                                  std::span<const posting> batch_postings,
                                  bool tag_eligible) {
    stream_descriptor& d = ls.desc;
    const strategy_set& st = cfg_.strategies;

    (void)batch_postings;
    if (st.tag && tag_eligible && !is_shared_key(key)) {
        shared_mem& sm = load_shared(d.group);
        if (sm.desc.next_tag < 0xFFFF) {
            uint16_t tag = ++sm.desc.next_tag;
            sm.members[tag] = bytes(key.begin(), key.end());
            // `data` is the key's complete history as one continuous encoding
            for (const posting& p : decode_postings(data)) {
                tagged_posting t{p, tag};
                if (sm.postings.empty() || sm.postings.back() < t)
                    sm.postings.push_back(t);
                else
                    sm.postings.insert(
                        std::upper_bound(sm.postings.begin(), sm.postings.end(), t),
                        t);
            }
            sm.approx_bytes += data.size() + 8 + key.size();
            sm.dirty = true;
            d.state = stream_state::tagged;
            d.tag = tag;
            audit_.transition(key, d.state);
            enforce_shared_cap(d.group, sm);
            return;
        }
    }

    if (st.part && data.size() > 0 && data.size() < cfg_.store.cluster_size / 2) {
        if (auto p = store_->alloc_part(data.size())) {
            store_->write_part(*p, 0, data);
            d.state = stream_state::part;
            d.part = *p;
            d.part_used = static_cast<uint32_t>(data.size());
            audit_.transition(key, d.state);
            return;
        }
    }

    d.state = (st.ch || !st.s) ? stream_state::chain : stream_state::segments;
    d.first_cluster = no_cluster;
    d.last_run = run{};
    d.last_used = 0;
    d.element_count = 0;
    d.main_bytes = 0;
    audit_.transition(key, d.state);
    staging_append(key, ls, data);
}

// -- staging -----------------------------------------------------------------------

bytes* index_engine::sr_record(byte_view key) {
    auto it = sr_records_.find(bytes(key.begin(), key.end()));
    return it == sr_records_.end() ? nullptr : &it->second;
}

bool index_engine::sr_create(byte_view key, live_stream& ls) {
    (void)ls;
    uint32_t block = cfg_.strategies.sr_block_size;
    if (sr_resident_bytes_ + block > cfg_.strategies.sr_memory_budget) return false;
    sr_records_.emplace(bytes(key.begin(), key.end()), bytes{});
    sr_resident_bytes_ += block;  // an empty record still holds one block
    return true;
}

void index_engine::sr_append_bytes(byte_view key, live_stream& ls, byte_view data) {
    bytes* rec = sr_record(key);
    IVF_CHECK(rec != nullptr, "sr append without a record");
    uint32_t block = cfg_.strategies.sr_block_size;
    uint64_t before = (std::max<uint64_t>(rec->size(), 1) + block - 1) / block;
    rec->insert(rec->end(), data.begin(), data.end());
    uint64_t after = (rec->size() + block - 1) / block;
    sr_resident_bytes_ += (after - before) * block;
    ls.desc.sr_used = static_cast<uint32_t>(rec->size());
    while (rec->size() > cfg_.store.cluster_size) {
        flush_sr(key, ls);
        rec = sr_record(key);
        IVF_CHECK(rec != nullptr, "record vanished during flush");
    }
}

void index_engine::staging_append(byte_view key, live_stream& ls, byte_view data) {
    if (data.empty()) return;
    stream_descriptor& d = ls.desc;
    const strategy_set& st = cfg_.strategies;
    bool cluster_state =
        d.state == stream_state::chain || d.state == stream_state::segments;
    bool staging_state = cluster_state || d.state == stream_state::part;

    if (st.sr && st.c1 && cluster_state && active_group_ && !is_shared_key(key)) {
        bytes* rec = sr_record(key);
        if (rec || sr_create(key, ls)) {
            sr_append_bytes(key, ls, data);
            return;
        }
    }

    if (st.fl && staging_state && active_group_ && !is_shared_key(key)) {
        if (d.fl_cluster == no_cluster) {
            try {
                d.fl_cluster = store_->fl_alloc();
                d.fl_used = 0;
                if (st.c1) cache_->insert(d.fl_cluster, nullptr, /*dirty=*/false);
            } catch (const fl_area_exhausted&) {
                d.fl_cluster = no_cluster;
            }
        }
        if (d.fl_cluster != no_cluster) {
            uint64_t cap = store_->cluster_capacity();
            uint64_t consumed = 0;
            while (consumed < data.size()) {
                uint64_t space = cap - d.fl_used;
                uint64_t take = std::min(space, data.size() - consumed);
                if (take > 0) {
                    store_->write_raw(d.fl_cluster, d.fl_used,
                                      data.subspan(consumed, take));
                    d.fl_used += static_cast<uint32_t>(take);
                    consumed += take;
                }
                if (d.fl_used == cap) flush_fl(key, ls);
            }
            return;
        }
    }

    append_main(key, ls, data);
}

void index_engine::flush_sr(byte_view key, live_stream& ls) {
    bytes* rec = sr_record(key);
    IVF_CHECK(rec != nullptr, "flushing a missing record");
    stream_descriptor& d = ls.desc;
    uint32_t block = cfg_.strategies.sr_block_size;
    uint64_t before = (std::max<uint64_t>(rec->size(), 1) + block - 1) / block;

    uint64_t take;
    if (d.state == stream_state::chain) {
        // top off a partial tail first so every stored cluster stays full
        if (d.element_count > 0 && d.last_used < elem_capacity(d.last_run.len)) {
            uint64_t space = elem_capacity(d.last_run.len) - d.last_used;
            uint64_t fill = std::min<uint64_t>(space, rec->size());
            append_main(key, ls, byte_view(rec->data(), fill));
            rec->erase(rec->begin(), rec->begin() + fill);
        }
        take = std::min<uint64_t>(elem_capacity(1), rec->size());
        if (take == elem_capacity(1)) {
            append_chain_element(key, ls, byte_view(rec->data(), take));
            rec->erase(rec->begin(), rec->begin() + take);
        }
    } else {
        take = rec->size();
        append_main(key, ls, byte_view(rec->data(), take));
        rec->clear();
    }

    uint64_t after = (std::max<uint64_t>(rec->size(), 1) + block - 1) / block;
    sr_resident_bytes_ -= (before - after) * block;
    d.sr_used = static_cast<uint32_t>(rec->size());
}

void index_engine::flush_fl(byte_view key, live_stream& ls) {
    stream_descriptor& d = ls.desc;
    if (d.fl_cluster == no_cluster || d.fl_used == 0) return;
    bytes staged(d.fl_used);
    store_->read_raw(d.fl_cluster, 0, staged);
    d.fl_used = 0;
    append_main(key, ls, staged);
}

void index_engine::flush_staging(byte_view key) {
    live_stream& ls = activate(key, nullptr);
    if (bytes* rec = sr_record(key)) {
        while (rec->size() > cfg_.store.cluster_size) {
            flush_sr(key, ls);
            rec = sr_record(key);
        }
    }
    if (ls.desc.fl_used > 0) flush_fl(key, ls);
    ls.dirty = true;
}

// -- main storage ---------------------------------------------------------------

void index_engine::append_main(byte_view key, live_stream& ls, byte_view data) {
    if (data.empty()) return;
    stream_descriptor& d = ls.desc;

    switch (d.state) {
        case stream_state::part: {
            uint64_t psize = store_->part_size(d.part.divisions);
            if (d.part_used + data.size() <= psize) {
                store_->write_part(d.part, d.part_used, data);
                d.part_used += static_cast<uint32_t>(data.size());
                return;
            }
            bytes all = store_->read_part(d.part, 0, d.part_used);
            all.insert(all.end(), data.begin(), data.end());
            part_ref old = d.part;
            if (all.size() < cfg_.store.cluster_size / 2) {
                if (auto bigger = store_->alloc_part(all.size())) {
                    store_->write_part(*bigger, 0, all);
                    store_->free_part(old);
                    d.part = *bigger;
                    d.part_used = static_cast<uint32_t>(all.size());
                    audit_.transition(key, stream_state::part);
                    return;
                }
            }
            // outgrew parts: the data moves to an individual cluster stream
            store_->free_part(old);
            d.state = (cfg_.strategies.ch || !cfg_.strategies.s)
                          ? stream_state::chain
                          : stream_state::segments;
            d.first_cluster = no_cluster;
            d.last_run = run{};
            d.last_used = 0;
            d.element_count = 0;
            d.main_bytes = 0;
            audit_.transition(key, d.state);
            append_main(key, ls, all);
            return;
        }
        case stream_state::chain: {
            uint64_t consumed = 0;
            if (d.element_count > 0) {
                uint64_t cap = elem_capacity(d.last_run.len);
                uint64_t space = cap - d.last_used;
                uint64_t take = std::min<uint64_t>(space, data.size());
                if (take > 0) {
                    store_->write_run_data(d.last_run, d.last_used,
                                           data.subspan(0, take));
                    d.last_used += take;
                    d.main_bytes += take;
                    consumed = take;
                }
            }
            if (consumed < data.size())
                extend_chain(key, ls, data.subspan(consumed));
            return;
        }
        case stream_state::segments:
            append_segments(key, ls, data);
            return;
        default:
            throw error("append_main on a dictionary-resident stream");
    }
}

// Appends one element holding exactly `data`, linked to the current tail.
void index_engine::append_chain_element(byte_view key, live_stream& ls,
                                        byte_view data) {
    stream_descriptor& d = ls.desc;
    uint32_t len = 1;
    while (elem_capacity(len) < data.size()) ++len;
    uint32_t limit = d.chain_limit != 0 ? d.chain_limit : resolve_chain_limit(0);
    if (len > cfg_.store.max_segment_len || d.element_count + 1 > limit) {
        convert_chain(key, ls, data);
        return;
    }

    uint32_t prev_len = d.element_count > 0 ? d.last_run.len : 0;
    uint64_t prev_last =
        d.element_count > 0 ? d.last_run.first + d.last_run.len - 1 : no_cluster;
    run r = store_->alloc_run(len);
    bytes image = element_image(data, len, prev_len, prev_last);
    store_->write_run_image(r, image);
    if (cfg_.strategies.c1 && active_group_) {
        for (uint32_t i = 0; i < len; ++i)
            cache_->insert(r.first + i,
                           image.data() + uint64_t{i} * cfg_.store.cluster_size,
                           /*dirty=*/false);
    }

    if (d.element_count == 0) {
        d.first_cluster = r.first;
        if (d.chain_limit == 0) d.chain_limit = resolve_chain_limit(r.first);
    }
    d.last_run = r;
    d.last_used = data.size();
    d.element_count += 1;
    d.main_bytes += data.size();

    audit_.chain_append(key, data.size() == elem_capacity(len));
    audit_.chain_len(key, d.element_count, d.chain_limit);
    IVF_CHECK(d.element_count <= std::max(d.chain_limit, 1u),
              "chain exceeded its element limit");
    update_pins(key, ls);
}

bytes index_engine::element_image(byte_view data, uint32_t len, uint32_t prev_len,
                                  uint64_t prev_last) {
    uint32_t cs = cfg_.store.cluster_size;
    uint64_t cap = store_->cluster_capacity();
    IVF_CHECK(data.size() <= elem_capacity(len), "element data overflow");
    bytes image(uint64_t{len} * cs, 0);
    for (uint64_t off = 0; off < data.size();) {
        uint64_t idx = off / cap;
        uint64_t in_cluster = off % cap;
        uint64_t take = std::min(cap - in_cluster, data.size() - off);
        std::memcpy(image.data() + idx * cs + in_cluster, data.data() + off, take);
        off += take;
    }
    // trailer in the last 8 data bytes, backward link in the link field
    bytes trailer;
    put_u32(trailer, prev_len);
    put_u32(trailer, kChainMagic);
    uint64_t tpos = uint64_t{len} * cap - kChainTrailerBytes;
    uint64_t tidx = tpos / cap;
    uint64_t tin = tpos % cap;
    std::memcpy(image.data() + tidx * cs + tin, trailer.data(), kChainTrailerBytes);
    bytes link;
    put_u64(link, prev_last);
    std::memcpy(image.data() + (uint64_t{len} - 1) * cs + cap, link.data(), 8);
    return image;
}

index_engine::chain_element index_engine::read_element(run r, uint64_t used) {
    bytes raw = store_->read_run_raw(r);
    uint32_t cs = cfg_.store.cluster_size;
    uint64_t cap = store_->cluster_capacity();
    chain_element e;
    e.r = r;
    e.used = used;
    bytes region(uint64_t{r.len} * cap);
    for (uint32_t i = 0; i < r.len; ++i)
        std::memcpy(region.data() + uint64_t{i} * cap, raw.data() + uint64_t{i} * cs,
                    cap);
    byte_reader tr(byte_view(region.data() + region.size() - kChainTrailerBytes,
                             kChainTrailerBytes));
    e.prev_len = tr.u32();
    if (tr.u32() != kChainMagic)
        throw corrupt_block("chain element trailer magic mismatch");
    byte_reader lr(byte_view(raw.data() + uint64_t{r.len} * cs - 8, 8));
    e.prev_last = lr.u64();
    e.data.assign(region.begin(), region.begin() + used);
    return e;
}

void index_engine::extend_chain(byte_view key, live_stream& ls, byte_view pending) {
    stream_descriptor& d = ls.desc;
    if (d.element_count == 0) {
        // first element(s): earlier ones full, the final one holds the rest
        uint64_t consumed = 0;
        while (consumed < pending.size()) {
            uint64_t chunk = std::min<uint64_t>(
                elem_capacity(cfg_.store.max_segment_len), pending.size() - consumed);
            append_chain_element(key, ls, pending.subspan(consumed, chunk));
            consumed += chunk;
            if (d.state != stream_state::chain) {
                // converted to segments mid-way; the rest appends there
                if (consumed < pending.size())
                    append_main(key, ls, pending.subspan(consumed));
                return;
            }
        }
        return;
    }

    // collect the run of fully cached elements at the tail
    std::vector<chain_element> merged;
    uint64_t merged_bytes = 0;
    if (cfg_.strategies.c1 && active_group_) {
        run cur = d.last_run;
        uint64_t cur_used = d.last_used;
        for (;;) {
            bool resident = true;
            for (uint32_t i = 0; i < cur.len && resident; ++i)
                resident = cache_->contains(cur.first + i);
            if (!resident) break;
            if (merged_bytes + cur_used + pending.size() >
                elem_capacity(cfg_.store.max_segment_len))
                break;
            chain_element e = read_element(cur, cur_used);
            merged_bytes += e.used;
            merged.push_back(std::move(e));
            const chain_element& back = merged.back();
            if (back.prev_len == 0) break;  // reached the chain head
            cur = run{back.prev_last - back.prev_len + 1, back.prev_len};
            cur_used = elem_capacity(back.prev_len);
        }
    }

    if (merged.empty()) {
        append_chain_element(key, ls, pending);
        return;
    }

    uint64_t total = merged_bytes + pending.size();
    uint32_t len = 1;
    while (elem_capacity(len) < total) ++len;
    uint32_t new_count =
        d.element_count - static_cast<uint32_t>(merged.size()) + 1;
    if (len > cfg_.store.max_segment_len || new_count > d.chain_limit) {
        convert_chain(key, ls, pending);
        return;
    }

    // deepest merged element tells us what the new element links back to
    const chain_element& deepest = merged.back();
    uint32_t prev_len = deepest.prev_len;
    uint64_t prev_last = deepest.prev_last;
    bool was_head = prev_len == 0;

    bytes data;
    data.reserve(total);
    for (auto it = merged.rbegin(); it != merged.rend(); ++it)
        data.insert(data.end(), it->data.begin(), it->data.end());
    data.insert(data.end(), pending.begin(), pending.end());

    for (const chain_element& e : merged) store_->free_run(e.r);

    run r = store_->alloc_run(len);
    bytes image = element_image(data, len, prev_len, prev_last);
    store_->write_run_image(r, image);
    if (cfg_.strategies.c1 && active_group_) {
        for (uint32_t i = 0; i < len; ++i)
            cache_->insert(r.first + i,
                           image.data() + uint64_t{i} * cfg_.store.cluster_size,
                           false);
    }

    if (was_head) d.first_cluster = r.first;
    d.last_run = r;
    d.last_used = data.size();
    d.element_count = new_count;
    d.main_bytes += pending.size();
    audit_.chain_append(key, data.size() == elem_capacity(len));
    audit_.chain_len(key, d.element_count, d.chain_limit);
    update_pins(key, ls);
}

std::vector<index_engine::chain_element> index_engine::read_chain_all(
    const stream_descriptor& desc) {
    std::vector<chain_element> elements;  // collected tail to head, reversed
    if (desc.element_count == 0) return elements;
    run cur = desc.last_run;
    uint64_t cur_used = desc.last_used;
    for (uint32_t i = 0; i < desc.element_count; ++i) {
        chain_element e = read_element(cur, cur_used);
        bool at_head = e.prev_len == 0;
        if (at_head && e.r.first != desc.first_cluster)
            throw corrupt_block("chain walk did not end at the first cluster");
        elements.push_back(std::move(e));
        if (at_head) break;
        const chain_element& b = elements.back();
        cur = run{b.prev_last - b.prev_len + 1, b.prev_len};
        cur_used = elem_capacity(b.prev_len);
    }
    std::reverse(elements.begin(), elements.end());
    return elements;
}

void index_engine::convert_chain(byte_view key, live_stream& ls, byte_view pending) {
    stream_descriptor& d = ls.desc;
    std::vector<chain_element> elements = read_chain_all(d);

    bytes data;
    data.reserve(d.main_bytes + pending.size());
    for (const chain_element& e : elements)
        data.insert(data.end(), e.data.begin(), e.data.end());
    data.insert(data.end(), pending.begin(), pending.end());

    // free the whole chain before laying out segments
    for (const chain_element& e : elements) store_->free_run(e.r);

    uint64_t cap = store_->cluster_capacity();
    uint32_t n = cfg_.store.max_segment_len;
    uint64_t clusters = (data.size() + cap - 1) / cap;
    std::vector<run> segs;
    if (clusters <= n) {
        segs.push_back(store_->alloc_segment(std::bit_ceil(
            static_cast<uint32_t>(std::max<uint64_t>(clusters, 1)))));
    } else {
        uint64_t count = (clusters + n - 1) / n;
        for (uint64_t i = 0; i < count; ++i) segs.push_back(store_->alloc_segment(n));
    }

    uint32_t cs = cfg_.store.cluster_size;
    uint64_t off = 0;
    for (size_t si = 0; si < segs.size(); ++si) {
        run seg = segs[si];
        uint64_t seg_cap = seg_capacity(seg.len);
        uint64_t take = std::min<uint64_t>(seg_cap, data.size() - off);
        bytes image(uint64_t{seg.len} * cs, 0);
        for (uint64_t o = 0; o < take;) {
            uint64_t idx = (o) / cap;
            uint64_t in = (o) % cap;
            uint64_t piece = std::min(cap - in, take - o);
            std::memcpy(image.data() + idx * cs + in, data.data() + off + o, piece);
            o += piece;
        }
        if (si + 1 < segs.size()) {
            bytes link;
            put_u64(link, segs[si + 1].first);
            std::memcpy(image.data() + (uint64_t{seg.len} - 1) * cs + cap,
                        link.data(), 8);
        } else {
            bytes link;
            put_u64(link, no_cluster);
            std::memcpy(image.data() + (uint64_t{seg.len} - 1) * cs + cap,
                        link.data(), 8);
        }
        store_->write_run_image(seg, image);
        audit_.segment_alloc(key, seg.len);
        off += take;
    }

    d.state = stream_state::segments;
    d.first_cluster = segs.front().first;
    d.last_run = segs.back();
    d.last_used = data.size() - (segs.size() - 1) * seg_capacity(n);
    d.element_count = static_cast<uint32_t>(segs.size());
    d.main_bytes = data.size();
    audit_.transition(key, d.state);
    update_pins(key, ls);
}

void index_engine::append_segments(byte_view key, live_stream& ls, byte_view data) {
    stream_descriptor& d = ls.desc;
    uint32_t n = cfg_.store.max_segment_len;
    uint64_t cap = store_->cluster_capacity();

    if (d.element_count == 0) {
        run r = store_->alloc_segment(1);
        d.first_cluster = r.first;
        d.last_run = r;
        d.last_used = 0;
        d.element_count = 1;
        audit_.segment_alloc(key, 1);
        if (cfg_.strategies.c1 && active_group_)
            cache_->insert(r.first, nullptr, false);
    }

    uint64_t consumed = 0;
    while (consumed < data.size()) {
        uint64_t seg_cap = seg_capacity(d.last_run.len);
        uint64_t space = seg_cap - d.last_used;
        if (space > 0) {
            uint64_t take = std::min(space, data.size() - consumed);
            // clusters beyond the current frontier are fresh; keep them
            // resident so the phase's writes coalesce
            if (cfg_.strategies.c1 && active_group_) {
                uint64_t first_new = d.last_used / cap + (d.last_used % cap ? 1 : 0);
                uint64_t last_touched = (d.last_used + take - 1) / cap;
                for (uint64_t i = first_new; i <= last_touched; ++i) {
                    uint64_t ord = d.last_run.first + i;
                    if (!cache_->contains(ord)) cache_->insert(ord, nullptr, false);
                }
            }
            store_->write_run_data(d.last_run, d.last_used,
                                   data.subspan(consumed, take));
            d.last_used += take;
            d.main_bytes += take;
            consumed += take;
            continue;
        }
        if (d.last_run.len < n) {
            IVF_CHECK(d.element_count == 1,
                      "only a single-segment stream can still be growing");
            run old = d.last_run;
            bytes content = store_->read_run_data(old, 0, d.last_used);
            run grown = store_->alloc_segment(old.len * 2);
            uint32_t cs = cfg_.store.cluster_size;
            uint64_t covered = (d.last_used + cap - 1) / cap;
            bytes image(covered * cs, 0);
            for (uint64_t o = 0; o < d.last_used;) {
                uint64_t idx = o / cap;
                uint64_t in = o % cap;
                uint64_t piece = std::min(cap - in, d.last_used - o);
                std::memcpy(image.data() + idx * cs + in, content.data() + o, piece);
                o += piece;
            }
            store_->write_run_image(grown, image);
            store_->free_run(old);
            d.first_cluster = grown.first;
            d.last_run = grown;
            audit_.segment_alloc(key, grown.len);
            if (cfg_.strategies.c1 && active_group_) {
                uint64_t frontier = d.last_used / cap;
                uint64_t ord = grown.first + std::min<uint64_t>(frontier, grown.len - 1);
                if (!cache_->contains(ord)) {
                    if (frontier < covered)
                        cache_->insert(ord, image.data() + frontier * cs, false);
                    else
                        cache_->insert(ord, nullptr, false);
                }
            }
        } else {
            run fresh = store_->alloc_segment(n);
            store_->set_link(d.last_run.first + d.last_run.len - 1, fresh.first);
            d.last_run = fresh;
            d.last_used = 0;
            d.element_count += 1;
            audit_.segment_alloc(key, n);
            if (cfg_.strategies.c1 && active_group_)
                cache_->insert(fresh.first, nullptr, false);
        }
    }
    update_pins(key, ls);
}

// -- shared (tagged) streams ---------------------------------------------------------

index_engine::shared_mem& index_engine::load_shared(uint32_t group) {
    auto it = shared_live_.find(group);
    if (it != shared_live_.end()) return it->second;

    shared_mem sm;
    bytes skey = shared_stream_key(group);
    if (auto stored = dict_->get(skey)) {
        sm.desc = stream_descriptor::parse(*stored);
        bytes content = read_main_bytes(sm.desc);
        byte_reader r(content);
        uint32_t members = r.u32();
        for (uint32_t i = 0; i < members; ++i) {
            uint16_t tag = r.u16();
            uint16_t klen = r.u16();
            sm.members.emplace(tag, r.blob(klen));
        }
        sm.postings = decode_tagged(
            byte_view(content.data() + r.position(), content.size() - r.position()));
        sm.approx_bytes = content.size();
    } else {
        sm.desc.group = group;
    }
    return shared_live_.emplace(group, std::move(sm)).first->second;
}

void index_engine::rewrite_shared(uint32_t group, shared_mem& sm) {
    bytes content;
    put_u32(content, static_cast<uint32_t>(sm.members.size()));
    for (auto& [tag, keybytes] : sm.members) {
        put_u16(content, tag);
        put_u16(content, static_cast<uint16_t>(keybytes.size()));
        content.insert(content.end(), keybytes.begin(), keybytes.end());
    }
    bytes encoded = encode_tagged(sm.postings);
    content.insert(content.end(), encoded.begin(), encoded.end());
    sm.approx_bytes = content.size();

    stream_descriptor& d = sm.desc;
    if (sm.postings.empty() && sm.members.empty()) {
        free_main_storage(d);
        d.state = stream_state::empty;
        d.main_bytes = 0;
        return;
    }

    // overwrite in place when the current slot still fits
    if (d.state == stream_state::part &&
        content.size() <= store_->part_size(d.part.divisions)) {
        store_->write_part(d.part, 0, content);
        d.part_used = static_cast<uint32_t>(content.size());
        d.main_bytes = content.size();
        return;
    }
    free_main_storage(d);
    d.state = stream_state::empty;
    d.main_bytes = 0;

    if (cfg_.strategies.part && content.size() < cfg_.store.cluster_size / 2) {
        if (auto p = store_->alloc_part(content.size())) {
            store_->write_part(*p, 0, content);
            d.state = stream_state::part;
            d.part = *p;
            d.part_used = static_cast<uint32_t>(content.size());
            d.main_bytes = content.size();
            return;
        }
    }
    d.state = (cfg_.strategies.ch || !cfg_.strategies.s) ? stream_state::chain
                                                         : stream_state::segments;
    d.first_cluster = no_cluster;
    d.last_run = run{};
    d.last_used = 0;
    d.element_count = 0;
    bytes skey = shared_stream_key(group);
    live_stream shim;
    shim.desc = d;
    shim.pin_id = next_pin_id_++;
    append_main(skey, shim, content);
    d = shim.desc;
}

void index_engine::enforce_shared_cap(uint32_t group, shared_mem& sm) {
    uint64_t cap = cfg_.strategies.tag_stream_max_bytes;
    if (sm.approx_bytes <= cap) return;

    while (!sm.members.empty()) {
        // recompute the exact footprint
        uint64_t registry = 4;
        for (auto& [tag, kb] : sm.members) registry += 4 + kb.size();
        uint64_t exact = registry + encode_tagged(sm.postings).size();
        sm.approx_bytes = exact;
        if (exact <= cap) return;

        // extract the member with the largest standalone share
        uint16_t victim = 0;
        uint64_t victim_size = 0;
        std::map<uint16_t, uint64_t> sizes;
        for (const tagged_posting& t : sm.postings)
            sizes[t.tag] += varint_size(t.p.doc) + varint_size(t.p.pos) + 1;
        for (auto& [tag, kb] : sm.members) {
            uint64_t s = sizes.count(tag) ? sizes[tag] : 0;
            if (s > victim_size) {
                victim_size = s;
                victim = tag;
            }
        }
        if (victim == 0) victim = sm.members.begin()->first;
        bytes victim_key = sm.members.at(victim);
        extract_locked(victim_key, nullptr);
    }
}

std::pair<uint32_t, uint16_t> index_engine::register_tagged(
    byte_view key, const append_hints& hints) {
    if (!cfg_.strategies.tag) throw config_error("TAG strategy is disabled");
    if (!active_group_ || hints.group != *active_group_)
        throw phase_violation("registration outside the key's phase");
    live_stream& ls = activate(key, &hints);
    stream_descriptor& d = ls.desc;
    IVF_CHECK(d.state == stream_state::empty || d.state == stream_state::embedded,
              "only dictionary-resident streams can join a shared stream");
    shared_mem& sm = load_shared(d.group);
    if (sm.desc.next_tag >= 0xFFFF)
        throw tag_space_exhausted("shared stream for group " +
                                  std::to_string(d.group) + " is out of tags");
    uint16_t tag = ++sm.desc.next_tag;
    sm.members[tag] = bytes(key.begin(), key.end());
    for (const posting& p : decode_postings(d.inline_bytes))
        sm.postings.insert(std::upper_bound(sm.postings.begin(), sm.postings.end(),
                                            tagged_posting{p, tag}),
                           tagged_posting{p, tag});
    sm.approx_bytes += d.inline_bytes.size() + 8 + key.size();
    sm.dirty = true;
    d.inline_bytes.clear();
    d.state = stream_state::tagged;
    d.tag = tag;
    ls.dirty = true;
    audit_.transition(key, d.state);
    enforce_shared_cap(d.group, sm);
    return {d.group, tag};
}

stream_descriptor index_engine::extract_locked(byte_view key, live_stream* ls_hint) {
    live_stream& ls = ls_hint ? *ls_hint : activate(key, nullptr);
    stream_descriptor& d = ls.desc;
    IVF_CHECK(d.state == stream_state::tagged, "extract on a non-tagged stream");

    shared_mem& sm = load_shared(d.group);
    std::vector<posting> mine;
    std::vector<tagged_posting> rest;
    rest.reserve(sm.postings.size());
    for (const tagged_posting& t : sm.postings) {
        if (t.tag == d.tag)
            mine.push_back(t.p);
        else
            rest.push_back(t);
    }
    sm.postings = std::move(rest);
    sm.members.erase(d.tag);
    sm.dirty = true;

    bytes data = encode_postings(mine);
    d.tag = 0;
    d.state = stream_state::empty;
    if (!data.empty()) {
        d.state = (cfg_.strategies.ch || !cfg_.strategies.s)
                      ? stream_state::chain
                      : stream_state::segments;
        d.first_cluster = no_cluster;
        d.last_run = run{};
        d.last_used = 0;
        d.element_count = 0;
        d.main_bytes = 0;
        if (cfg_.strategies.part && data.size() < cfg_.store.cluster_size / 2) {
            if (auto p = store_->alloc_part(data.size())) {
                store_->write_part(*p, 0, data);
                d.state = stream_state::part;
                d.part = *p;
                d.part_used = static_cast<uint32_t>(data.size());
            }
        }
        if (d.state != stream_state::part) staging_append(key, ls, data);
        audit_.transition(key, d.state);
    }
    ls.dirty = true;
    update_pins(key, ls);
    return d;
}

stream_descriptor index_engine::extract_from_tagged(byte_view key) {
    if (!active_group_)
        throw phase_violation("extraction requires an active phase");
    return extract_locked(key, nullptr);
}

// -- reads ------------------------------------------------------------------------

void index_engine::free_main_storage(stream_descriptor& desc) {
    switch (desc.state) {
        case stream_state::part:
            store_->free_part(desc.part);
            break;
        case stream_state::chain: {
            for (const chain_element& e : read_chain_all(desc))
                store_->free_run(e.r);
            break;
        }
        case stream_state::segments: {
            uint32_t n = cfg_.store.max_segment_len;
            run cur{desc.first_cluster,
                    desc.element_count == 1 ? desc.last_run.len : n};
            for (uint32_t i = 0; i < desc.element_count; ++i) {
                uint64_t next = no_cluster;
                if (i + 1 < desc.element_count) {
                    bytes raw = store_->read_run_raw(cur);
                    byte_reader lr(byte_view(
                        raw.data() + raw.size() - 8, 8));
                    next = lr.u64();
                }
                store_->free_run(cur);
                if (next == no_cluster) break;
                cur = run{next, i + 2 < desc.element_count ? n : desc.last_run.len};
            }
            break;
        }
        default:
            break;
    }
    desc.first_cluster = no_cluster;
    desc.last_run = run{};
    desc.last_used = 0;
    desc.element_count = 0;
    desc.main_bytes = 0;
    desc.part = part_ref{};
    desc.part_used = 0;
}

bytes index_engine::read_main_bytes(const stream_descriptor& desc) {
    switch (desc.state) {
        case stream_state::empty:
        case stream_state::tagged:
            return {};
        case stream_state::embedded:
            return desc.inline_bytes;
        case stream_state::part:
            return store_->read_part(desc.part, 0, desc.part_used);
        case stream_state::chain: {
            bytes out;
            out.reserve(desc.main_bytes);
            for (const chain_element& e : read_chain_all(desc))
                out.insert(out.end(), e.data.begin(), e.data.end());
            return out;
        }
        case stream_state::segments: {
            bytes out;
            out.reserve(desc.main_bytes);
            uint32_t n = cfg_.store.max_segment_len;
            run cur{desc.first_cluster,
                    desc.element_count == 1 ? desc.last_run.len : n};
            uint64_t cap = store_->cluster_capacity();
            uint32_t cs = cfg_.store.cluster_size;
            for (uint32_t i = 0; i < desc.element_count; ++i) {
                bool last = i + 1 == desc.element_count;
                if (last) {
                    bytes data = store_->read_run_data(cur, 0, desc.last_used);
                    out.insert(out.end(), data.begin(), data.end());
                    break;
                }
                bytes raw = store_->read_run_raw(cur);
                for (uint32_t c = 0; c < cur.len; ++c)
                    out.insert(out.end(), raw.begin() + uint64_t{c} * cs,
                               raw.begin() + uint64_t{c} * cs + cap);
                byte_reader lr(byte_view(raw.data() + raw.size() - 8, 8));
                uint64_t next = lr.u64();
                if (next == no_cluster)
                    throw corrupt_block("segment walk ended early");
                cur = run{next, i + 2 == desc.element_count ? desc.last_run.len : n};
            }
            return out;
        }
    }
    return {};
}

std::optional<stream_descriptor> index_engine::find_descriptor(byte_view key) {
    auto it = live_.find(bytes(key.begin(), key.end()));
    if (it != live_.end()) return it->second.desc;
    if (auto stored = dict_->get(key)) return stream_descriptor::parse(*stored);
    return std::nullopt;
}

std::vector<posting> index_engine::read_postings(byte_view key) {
    auto desc = find_descriptor(key);
    if (!desc) return {};

    if (desc->state == stream_state::tagged) {
        shared_mem& sm = load_shared(desc->group);
        std::vector<posting> out;
        for (const tagged_posting& t : sm.postings)
            if (t.tag == desc->tag) out.push_back(t.p);
        return out;
    }

    bytes stream = read_main_bytes(*desc);
    if (desc->fl_cluster != no_cluster && desc->fl_used > 0) {
        bytes staged(desc->fl_used);
        store_->read_raw(desc->fl_cluster, 0, staged);
        stream.insert(stream.end(), staged.begin(), staged.end());
    }
    if (desc->sr_used > 0 || (active_group_ && sr_record(key))) {
        const bytes* payload = nullptr;
        bytes k(key.begin(), key.end());
        if (active_group_ && *active_group_ == desc->group) {
            if (bytes* rec = sr_record(key)) payload = rec;
        } else if (cfg_.strategies.sr) {
            auto& memo = sr_read_memo_[desc->group];
            if (memo.empty()) {
                for (auto& [rk, rv] : sr_->load_group(desc->group))
                    memo.emplace(rk, rv);
            }
            auto mit = memo.find(k);
            if (mit != memo.end()) payload = &mit->second;
        }
        if (payload) stream.insert(stream.end(), payload->begin(), payload->end());
    }
    return decode_postings(stream);
}

// -- verify ------------------------------------------------------------------------

verify_report index_engine::verify() {
    verify_report rep;
    store_usage u = store_->usage();
    std::map<uint64_t, bytes> owner;  // cluster -> owning key
    std::map<uint64_t, uint32_t> part_claims;  // part cluster -> claimed bitmap

    auto claim = [&](uint64_t c, byte_view key) {
        if (c >= u.total_clusters) {
            rep.fail("cluster ordinal out of range");
            return;
        }
        auto [it, fresh] = owner.emplace(c, bytes(key.begin(), key.end()));
        if (!fresh) rep.fail("cluster " + std::to_string(c) + " owned twice");
    };

    dict_->for_each([&](byte_view key, byte_view value) {
        ++rep.streams;
        stream_descriptor d;
        try {
            d = stream_descriptor::parse(value);
        } catch (const error& e) {
            rep.fail("descriptor parse failed: " + std::string(e.what()));
            return;
        }
        try {
            switch (d.state) {
                case stream_state::empty:
                case stream_state::embedded:
                case stream_state::tagged:
                    break;
                case stream_state::part: {
                    auto it = u.part_clusters.find(d.part.cluster);
                    if (it == u.part_clusters.end()) {
                        rep.fail("part cluster not registered");
                        break;
                    }
                    if (!(it->second.second & (1u << d.part.index)))
                        rep.fail("part slot not marked occupied");
                    part_claims[d.part.cluster] |= 1u << d.part.index;
                    break;
                }
                case stream_state::chain: {
                    run cur = d.last_run;
                    uint64_t used = d.last_used;
                    for (uint32_t i = 0; i < d.element_count; ++i) {
                        for (uint32_t c = 0; c < cur.len; ++c)
                            claim(cur.first + c, key);
                        chain_element e = read_element(cur, used);
                        if (e.prev_len == 0) {
                            if (e.r.first != d.first_cluster)
                                rep.fail("chain head mismatch");
                            break;
                        }
                        cur = run{e.prev_last - e.prev_len + 1, e.prev_len};
                        used = elem_capacity(e.prev_len);
                    }
                    if (d.chain_limit > 0 && d.element_count > d.chain_limit)
                        rep.fail("chain exceeds its limit");
                    break;
                }
                case stream_state::segments: {
                    uint32_t n = cfg_.store.max_segment_len;
                    run cur{d.first_cluster,
                            d.element_count == 1 ? d.last_run.len : n};
                    for (uint32_t i = 0; i < d.element_count; ++i) {
                        for (uint32_t c = 0; c < cur.len; ++c)
                            claim(cur.first + c, key);
                        if (i + 1 == d.element_count) break;
                        bytes raw = store_->read_run_raw(cur);
                        byte_reader lr(byte_view(raw.data() + raw.size() - 8, 8));
                        uint64_t next = lr.u64();
                        cur = run{next,
                                  i + 2 == d.element_count ? d.last_run.len : n};
                    }
                    break;
                }
            }
            if (d.fl_cluster != no_cluster) {
                if (std::find(u.fl_used.begin(), u.fl_used.end(), d.fl_cluster) ==
                    u.fl_used.end())
                    rep.fail("staging cluster not marked used");
            }
            // decode the stored postings end to end
            if (!is_shared_key(key)) read_postings(key);
        } catch (const error& e) {
            rep.fail("stream walk failed: " + std::string(e.what()));
        }
    });

    for (auto& [cluster, dv] : u.part_clusters) {
        uint32_t claimed = part_claims.count(cluster) ? part_claims[cluster] : 0;
        if (claimed != dv.second)
            rep.fail("part cluster " + std::to_string(cluster) +
                     " bitmap mismatch: claimed " + std::to_string(claimed) +
                     " registered " + std::to_string(dv.second));
        claim(cluster, shared_stream_key(0xFFFFFFFF));
    }

    // conservation: every ordinal is live, free, spill, or staging area
    std::set<uint64_t> free_set;
    for (uint64_t c : u.free_clusters) free_set.insert(c);
    for (auto& [len, firsts] : u.free_runs)
        for (uint64_t f : firsts)
            for (uint32_t i = 0; i < len; ++i) free_set.insert(f + i);
    std::set<uint64_t> spill_set(u.spill_clusters.begin(), u.spill_clusters.end());
    rep.free_clusters = free_set.size();
    rep.live_clusters = owner.size();
    for (uint64_t c = u.fl_area; c < u.total_clusters; ++c) {
        int n = owner.count(c) + free_set.count(c) + spill_set.count(c);
        if (n != 1)
            rep.fail("cluster " + std::to_string(c) + " has " + std::to_string(n) +
                     " owners");
    }
    return rep;
}

}  // namespace ivf
