// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/dictionary.hpp"

#include <algorithm>
#include <set>

#include "ivf/errors.hpp"

namespace ivf {

namespace {

struct page_header {
    uint16_t local_depth;
    uint16_t entries;
    uint32_t used;  // payload bytes after the page header
};

page_header read_page_header(const bytes& data) {
    byte_reader r(byte_view(data.data(), 8));
    page_header h;
    h.local_depth = r.u16();
    h.entries = r.u16();
    h.used = r.u32();
    return h;
}

void write_page_header(bytes& data, const page_header& h) {
    bytes b;
    put_u16(b, h.local_depth);
    put_u16(b, h.entries);
    put_u32(b, h.used);
    std::copy(b.begin(), b.end(), data.begin());
}

}  // namespace

dictionary::dictionary(file_store& io, file_store::file_id file, bool create,
                       uint32_t bucket_size, size_t cache_pages)
    : io_(io), file_(file), bucket_size_(bucket_size), cache_pages_(cache_pages) {
    if (bucket_size_ < 256) throw config_error("dictionary bucket size too small");
    if (create) {
        uint64_t b0 = alloc_page();
        auto& p = cache_[b0];
        p.data.assign(bucket_size_, 0);
        write_page_header(p.data, {0, 0, 0});
        p.dirty = true;
        directory_ = {b0};
        global_depth_ = 0;
        flush();
    } else {
        bytes head = io_.read(file_, 0, kHeaderBytes);
        byte_reader r(head);
        if (r.u64() != kMagic) throw corrupt_entry("bad dictionary magic");
        if (r.u32() != 1) throw corrupt_entry("unsupported dictionary version");
        bucket_size_ = r.u32();
        global_depth_ = r.u32();
        r.u32();  // pad
        buckets_allocated_ = r.u64();
        entry_count_ = r.u64();
        uint64_t dir_offset = r.u64();
        uint64_t dir_bytes = r.u64();
        tail_ = r.u64();
        last_dir_offset_ = dir_offset;
        bytes dir = io_.read(file_, dir_offset, dir_bytes);
        byte_reader dr(dir);
        directory_.clear();
        for (uint64_t i = 0; i < dir_bytes / 8; ++i) directory_.push_back(dr.u64());
        if (directory_.size() != (uint64_t{1} << global_depth_))
            throw corrupt_entry("directory size does not match depth");
        dir_dirty_ = false;
    }
}

uint64_t dictionary::alloc_page() {
    uint64_t off = tail_;
    tail_ += bucket_size_;
    ++buckets_allocated_;
    return off;
}

void dictionary::evict_if_needed() {
    while (cache_.size() > cache_pages_) {
        auto victim = cache_.end();
        for (auto it = cache_.begin(); it != cache_.end(); ++it)
            if (victim == cache_.end() || it->second.touch < victim->second.touch)
                victim = it;
        if (victim->second.dirty)
            io_.write(file_, victim->first, victim->second.data);
        cache_.erase(victim);
    }
}

dictionary::page& dictionary::load_page(uint64_t offset) {
    auto it = cache_.find(offset);
    if (it == cache_.end()) {
        evict_if_needed();
        page p;
        p.data = io_.read(file_, offset, bucket_size_);
        it = cache_.emplace(offset, std::move(p)).first;
    }
    it->second.touch = ++clock_;
    return it->second;
}

std::optional<dictionary::entry_view> dictionary::find_entry(const bytes& data,
                                                             byte_view key) const {
    page_header h = read_page_header(data);
    size_t pos = kPageHeaderBytes;
    for (uint16_t i = 0; i < h.entries; ++i) {
        byte_reader r(byte_view(data.data() + pos, 4));
        uint16_t klen = r.u16();
        uint16_t vlen = r.u16();
        byte_view k(data.data() + pos + 4, klen);
        byte_view v(data.data() + pos + 4 + klen, vlen);
        if (k.size() == key.size() && std::equal(k.begin(), k.end(), key.begin()))
            return entry_view{pos, k, v};
        pos += 4 + klen + vlen;
    }
    return std::nullopt;
}

std::optional<bytes> dictionary::get(byte_view key) {
    page& p = load_page(directory_[dir_slot(fnv1a(key))]);
    auto e = find_entry(p.data, key);
    if (!e) return std::nullopt;
    return bytes(e->value.begin(), e->value.end());
}

void dictionary::put(byte_view key, byte_view value) {
    if (key.size() > 0xFFFF || value.size() > 0xFFFF)
        throw config_error("dictionary entry component too long");
    uint64_t need = 4 + key.size() + value.size();
    if (need > bucket_size_ - kPageHeaderBytes)
        throw config_error("dictionary entry exceeds bucket capacity");

    uint64_t hash = fnv1a(key);
    for (int depth_guard = 0; depth_guard < 48; ++depth_guard) {
        uint64_t slot = dir_slot(hash);
        uint64_t off = directory_[slot];
        page& p = load_page(off);
        page_header h = read_page_header(p.data);

        bool existed = false;
        if (auto e = find_entry(p.data, key)) {
            // drop the old entry, then reinsert below
            size_t entry_len = 4 + e->key.size() + e->value.size();
            std::copy(p.data.begin() + e->pos + entry_len,
                      p.data.begin() + kPageHeaderBytes + h.used,
                      p.data.begin() + e->pos);
            h.used -= entry_len;
            h.entries -= 1;
            existed = true;
        }

        if (kPageHeaderBytes + h.used + need <= bucket_size_) {
            size_t pos = kPageHeaderBytes + h.used;
            bytes rec;
            put_u16(rec, static_cast<uint16_t>(key.size()));
            put_u16(rec, static_cast<uint16_t>(value.size()));
            rec.insert(rec.end(), key.begin(), key.end());
            rec.insert(rec.end(), value.begin(), value.end());
            std::copy(rec.begin(), rec.end(), p.data.begin() + pos);
            h.used += need;
            h.entries += 1;
            write_page_header(p.data, h);
            p.dirty = true;
            if (!existed) ++entry_count_;
            return;
        }

        // no room: the old copy of the key is already gone; persist that,
        // split, and let the retry insert the new value as a fresh entry
        if (existed) {
            write_page_header(p.data, h);
            p.dirty = true;
            --entry_count_;
        }
        split_bucket(slot);
    }
    throw corrupt_entry("dictionary split depth exhausted");
}

void dictionary::split_bucket(uint64_t dir_index) {
    uint64_t old_off = directory_[dir_index];
    page& old_page = load_page(old_off);
    page_header oh = read_page_header(old_page.data);

    if (oh.local_depth == global_depth_) {
        if (global_depth_ >= 40) throw corrupt_entry("directory depth exhausted");
        directory_.reserve(directory_.size() * 2);
        directory_.insert(directory_.end(), directory_.begin(), directory_.end());
        ++global_depth_;
    }
    uint16_t new_depth = static_cast<uint16_t>(oh.local_depth + 1);
    uint64_t new_off = alloc_page();

    // collect entries, then redistribute on the deciding bit
    bytes old_data = old_page.data;
    struct rec {
        bytes key, value;
    };
    std::vector<rec> entries;
    size_t pos = kPageHeaderBytes;
    for (uint16_t i = 0; i < oh.entries; ++i) {
        byte_reader r(byte_view(old_data.data() + pos, 4));
        uint16_t klen = r.u16();
        uint16_t vlen = r.u16();
        entries.push_back(
            {bytes(old_data.begin() + pos + 4, old_data.begin() + pos + 4 + klen),
             bytes(old_data.begin() + pos + 4 + klen,
                   old_data.begin() + pos + 4 + klen + vlen)});
        pos += 4 + klen + vlen;
    }

    evict_if_needed();
    page& new_page = cache_[new_off];
    new_page.data.assign(bucket_size_, 0);
    new_page.touch = ++clock_;

    page& old_ref = load_page(old_off);
    std::fill(old_ref.data.begin(), old_ref.data.end(), 0);

    page_header keep{new_depth, 0, 0}, moved{new_depth, 0, 0};
    uint64_t bit = uint64_t{1} << (new_depth - 1);
    for (auto& e : entries) {
        bool to_new = (fnv1a(e.key) & bit) != 0;
        page& target = to_new ? new_page : old_ref;
        page_header& th = to_new ? moved : keep;
        size_t at = kPageHeaderBytes + th.used;
        bytes rc;
        put_u16(rc, static_cast<uint16_t>(e.key.size()));
        put_u16(rc, static_cast<uint16_t>(e.value.size()));
        rc.insert(rc.end(), e.key.begin(), e.key.end());
        rc.insert(rc.end(), e.value.begin(), e.value.end());
        std::copy(rc.begin(), rc.end(), target.data.begin() + at);
        th.used += rc.size();
        th.entries += 1;
    }
    write_page_header(old_ref.data, keep);
    write_page_header(new_page.data, moved);
    old_ref.dirty = true;
    new_page.dirty = true;

    // rewire every directory slot that now resolves to the new bucket
    uint64_t stride = uint64_t{1} << new_depth;
    uint64_t base = dir_index & (bit - 1);
    for (uint64_t s = base; s < directory_.size(); s += stride / 2) {
        if (directory_[s] != old_off) continue;
        if (s & bit) directory_[s] = new_off;
    }
    dir_dirty_ = true;
}

void dictionary::for_each(
    const std::function<void(byte_view key, byte_view value)>& fn) {
    std::set<uint64_t> seen(directory_.begin(), directory_.end());
    for (uint64_t off : seen) {
        page& p = load_page(off);
        bytes data = p.data;  // copy: fn may call back into the dictionary
        page_header h = read_page_header(data);
        size_t pos = kPageHeaderBytes;
        for (uint16_t i = 0; i < h.entries; ++i) {
            byte_reader r(byte_view(data.data() + pos, 4));
            uint16_t klen = r.u16();
            uint16_t vlen = r.u16();
            fn(byte_view(data.data() + pos + 4, klen),
               byte_view(data.data() + pos + 4 + klen, vlen));
            pos += 4 + klen + vlen;
        }
    }
}

void dictionary::flush() {
    for (auto& [off, p] : cache_) {
        if (!p.dirty) continue;
        io_.write(file_, off, p.data);
        p.dirty = false;
    }
    uint64_t dir_offset = 0;
    uint64_t dir_bytes = directory_.size() * 8;
    if (dir_dirty_) {
        bytes dir;
        dir.reserve(dir_bytes);
        for (uint64_t b : directory_) put_u64(dir, b);
        dir_offset = tail_;
        io_.write(file_, dir_offset, dir);
        tail_ += dir_bytes;
        dir_dirty_ = false;
        last_dir_offset_ = dir_offset;
    }
    bytes head;
    put_u64(head, kMagic);
    put_u32(head, 1);
    put_u32(head, bucket_size_);
    put_u32(head, global_depth_);
    put_u32(head, 0);
    put_u64(head, buckets_allocated_);
    put_u64(head, entry_count_);
    put_u64(head, last_dir_offset_);
    put_u64(head, dir_bytes);
    put_u64(head, tail_);
    head.resize(kHeaderBytes, 0);
    io_.write(file_, 0, head);
}

}  // namespace ivf
