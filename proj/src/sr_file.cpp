// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/sr_file.hpp"

#include "ivf/errors.hpp"

namespace ivf {

sr_file::sr_file(file_store& io, file_store::file_id file, uint32_t group_count,
                 bool create)
    : io_(io), file_(file), group_count_(group_count) {
    if (create) {
        directory_.assign(group_count_, {0, 0});
        tail_ = header_bytes();
        dirty_ = true;
        flush();
    } else {
        bytes head = io_.read(file_, 0, header_bytes());
        byte_reader r(head);
        if (r.u64() != kMagic) throw corrupt_entry("bad sr file magic");
        if (r.u32() != 1) throw corrupt_entry("unsupported sr file version");
        uint32_t stored_groups = r.u32();
        if (stored_groups != group_count_)
            throw corrupt_entry("sr file group count mismatch");
        directory_.clear();
        for (uint32_t g = 0; g < group_count_; ++g) {
            uint64_t off = r.u64();
            uint64_t len = r.u64();
            directory_.emplace_back(off, len);
        }
        tail_ = io_.logical_size(file_);
    }
}

std::vector<sr_file::record> sr_file::load_group(uint32_t group) {
    IVF_CHECK(group < group_count_, "group out of range");
    auto [off, len] = directory_[group];
    std::vector<record> out;
    if (len == 0) return out;
    bytes run = io_.read(file_, off, len);
    byte_reader r(run);
    uint32_t count = r.u32();
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t klen = r.u16();
        uint32_t plen = r.u32();
        bytes key = r.blob(klen);
        bytes payload = r.blob(plen);
        out.emplace_back(std::move(key), std::move(payload));
    }
    if (r.remaining() != 0) throw corrupt_entry("sr run has trailing bytes");
    return out;
}

void sr_file::store_group(uint32_t group, const std::vector<record>& records) {
    IVF_CHECK(group < group_count_, "group out of range");
    if (records.empty()) {
        if (directory_[group].second != 0) {
            directory_[group] = {0, 0};
            dirty_ = true;
        }
        return;
    }
    bytes run;
    put_u32(run, static_cast<uint32_t>(records.size()));
    for (const auto& [key, payload] : records) {
        put_u16(run, static_cast<uint16_t>(key.size()));
        put_u32(run, static_cast<uint32_t>(payload.size()));
        run.insert(run.end(), key.begin(), key.end());
        run.insert(run.end(), payload.begin(), payload.end());
    }
    io_.write(file_, tail_, run);
    directory_[group] = {tail_, run.size()};
    tail_ += run.size();
    dirty_ = true;
}

void sr_file::flush() {
    if (!dirty_) return;
    bytes head;
    put_u64(head, kMagic);
    put_u32(head, 1);
    put_u32(head, group_count_);
    for (auto& [off, len] : directory_) {
        put_u64(head, off);
        put_u64(head, len);
    }
    io_.write(file_, 0, head);
    dirty_ = false;
}

}  // namespace ivf
