// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#include "ivf/io_layer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <limits>

#include "ivf/errors.hpp"

namespace ivf {

namespace {

constexpr size_t kMapRecordSize = 2 + 8 + 4 + 8;  // fid, loff, len, poff (LE)

int open_file(const std::string& path, bool truncate) {
    int flags = O_RDWR | O_CREAT | (truncate ? O_TRUNC : 0);
    int fd = ::open(path.c_str(), flags, 0644);
    if (fd < 0)
        throw io_failure("open " + path + ": " + std::strerror(errno));
    return fd;
}

uint64_t file_size(int fd, const std::string& path) {
    off_t end = ::lseek(fd, 0, SEEK_END);
    if (end < 0) throw io_failure("lseek " + path + ": " + std::strerror(errno));
    return static_cast<uint64_t>(end);
}

void pwrite_all(int fd, const uint8_t* data, size_t len, uint64_t off,
                const std::string& path) {
    while (len > 0) {
        ssize_t n = ::pwrite(fd, data, len, static_cast<off_t>(off));
        if (n <= 0) throw io_failure("pwrite " + path + ": " + std::strerror(errno));
        data += n;
        off += static_cast<uint64_t>(n);
        len -= static_cast<size_t>(n);
    }
}

void pread_all(int fd, uint8_t* data, size_t len, uint64_t off,
               const std::string& path) {
    while (len > 0) {
        ssize_t n = ::pread(fd, data, len, static_cast<off_t>(off));
        if (n < 0) throw io_failure("pread " + path + ": " + std::strerror(errno));
        if (n == 0) throw io_failure("short read at " + std::to_string(off) +
                                     " in " + path);
        data += n;
        off += static_cast<uint64_t>(n);
        len -= static_cast<size_t>(n);
    }
}

}  // namespace

void ds_config::validate() const {
    if (small_threshold == 0)
        throw config_error("ds.small_threshold must be positive");
    if (pack_buffer_capacity < small_threshold)
        throw config_error("ds.pack_capacity must be >= ds.small_threshold");
}

file_store::file_store(std::string dir, std::string index_name, ds_config ds, mode m)
    : dir_(std::move(dir)), name_(std::move(index_name)), ds_(ds) {
    ds_.validate();
    created_ = (m == mode::create);
    std::string base = dir_ + "/" + name_;
    pack_fd_ = open_file(base + ".pack", created_);
    dsmap_fd_ = open_file(base + ".dsmap", created_);
    pack_size_ = file_size(pack_fd_, base + ".pack");
    if (!created_) load_mapping();
}

file_store::~file_store() {
    for (auto& lf : files_)
        if (lf.fd >= 0) ::close(lf.fd);
    if (pack_fd_ >= 0) ::close(pack_fd_);
    if (dsmap_fd_ >= 0) ::close(dsmap_fd_);
}

void file_store::set_packing(ds_config ds) {
    ds.validate();
    IVF_CHECK(pending_.empty(), "cannot change packing with a loaded buffer");
    ds_ = ds;
}

file_store::file_id file_store::register_file(const std::string& suffix) {
    if (files_.size() >= std::numeric_limits<file_id>::max())
        throw config_error("too many logical files");
    auto f = static_cast<file_id>(files_.size());
    logical_file lf;
    lf.path = dir_ + "/" + name_ + "." + suffix;
    lf.fd = open_file(lf.path, created_);
    lf.size = file_size(lf.fd, lf.path);
    lf.phys_size = lf.size;
    // Everything physically present in the main file reads back as written;
    // persisted pack mappings overlay it.
    if (lf.size > 0)
        lf.extents.emplace(0, extent{lf.size, src::main, 0});
    files_.push_back(std::move(lf));
    if (auto it = unclaimed_.find(f); it != unclaimed_.end()) {
        for (auto& [off, e] : it->second) {
            insert_extent(f, off, e);
            files_[f].size = std::max(files_[f].size, off + e.len);
        }
        unclaimed_.erase(it);
    }
    return f;
}

void file_store::insert_extent(file_id f, uint64_t off, extent e) {
    logical_file& lf = files_[f];
    uint64_t end = off + e.len;
    // split or drop everything overlapping [off, end)
    auto it = lf.extents.lower_bound(off);
    if (it != lf.extents.begin()) {
        auto prev = std::prev(it);
        if (prev->first + prev->second.len > off) it = prev;
    }
    while (it != lf.extents.end() && it->first < end) {
        uint64_t estart = it->first;
        extent old = it->second;
        uint64_t eend = estart + old.len;
        it = lf.extents.erase(it);
        if (estart < off) {
            extent head = old;
            head.len = off - estart;
            lf.extents.emplace(estart, head);
            if (head.where == src::pending) pending_refs_.emplace_back(f, estart);
        }
        if (eend > end) {
            extent tail = old;
            tail.len = eend - end;
            tail.phys = (old.where == src::main) ? end : old.phys + (end - estart);
            lf.extents.emplace(end, tail);
            if (tail.where == src::pending) pending_refs_.emplace_back(f, end);
        }
    }
    lf.extents.emplace(off, e);
}

void file_store::write(file_id f, uint64_t offset, byte_view data) {
    IVF_CHECK(f < files_.size(), "write to unregistered file");
    if (data.empty()) return;
    if (offset + data.size() < offset ||
        offset + data.size() > (uint64_t{1} << 62))
        throw address_overflow("write beyond logical address space");
    logical_file& lf = files_[f];

    if (ds_.enabled && data.size() <= ds_.small_threshold) {
        if (pending_.size() + data.size() > ds_.pack_buffer_capacity) flush_pack();
        uint64_t buf_off = pending_.size();
        pending_.insert(pending_.end(), data.begin(), data.end());
        insert_extent(f, offset, extent{data.size(), src::pending, buf_off});
        pending_refs_.emplace_back(f, offset);
    } else {
        pwrite_all(lf.fd, data.data(), data.size(), offset, lf.path);
        ledger_.write_ops += 1;
        ledger_.bytes_written += data.size();
        insert_extent(f, offset, extent{data.size(), src::main, offset});
        lf.phys_size = std::max(lf.phys_size, offset + data.size());
    }
    lf.size = std::max(lf.size, offset + data.size());
}

void file_store::read_impl(file_id f, uint64_t offset, std::span<uint8_t> out,
                           bool sparse) {
    IVF_CHECK(f < files_.size(), "read from unregistered file");
    if (out.empty()) return;
    if (offset + out.size() < offset)
        throw address_overflow("read beyond logical address space");
    const logical_file& lf = files_[f];

    // resolve the logical range into physical pieces; holes become identity
    // pieces in sparse mode so they extend a main-file request
    struct piece {
        src where;
        uint64_t phys;
        uint64_t len;
        uint64_t out_off;
    };
    std::vector<piece> pieces;
    uint64_t cur = offset;
    uint64_t end = offset + out.size();
    auto it = lf.extents.upper_bound(cur);
    if (it != lf.extents.begin()) --it;
    while (cur < end) {
        if (it != lf.extents.end() && it->first + it->second.len <= cur) {
            ++it;
            continue;
        }
        if (it == lf.extents.end() || it->first > cur) {
            if (!sparse)
                throw unmapped_range("read of never-written range at offset " +
                                     std::to_string(cur));
            uint64_t hole_end =
                (it == lf.extents.end()) ? end : std::min(end, it->first);
            pieces.push_back({src::main, cur, hole_end - cur, cur - offset});
            cur = hole_end;
            continue;
        }
        const extent& e = it->second;
        uint64_t skip = cur - it->first;
        uint64_t take = std::min(e.len - skip, end - cur);
        pieces.push_back({e.where, e.phys + skip, take, cur - offset});
        cur += take;
        ++it;
    }

    // serve pending pieces from memory; issue one physical request per run of
    // physically contiguous pieces in the same file
    size_t i = 0;
    while (i < pieces.size()) {
        const piece& p = pieces[i];
        if (p.where == src::pending) {
            std::memcpy(out.data() + p.out_off, pending_.data() + p.phys, p.len);
            ++i;
            continue;
        }
        size_t j = i + 1;
        uint64_t run_len = p.len;
        while (j < pieces.size() && pieces[j].where == p.where &&
               pieces[j].phys == pieces[j - 1].phys + pieces[j - 1].len) {
            run_len += pieces[j].len;
            ++j;
        }
        uint8_t* dst = out.data() + p.out_off;
        if (p.where == src::main) {
            // the device serves holes inside the file as zeros; beyond the
            // physical end nothing is transferred
            uint64_t readable =
                p.phys >= lf.phys_size
                    ? 0
                    : std::min(run_len, lf.phys_size - p.phys);
            if (readable > 0) pread_all(lf.fd, dst, readable, p.phys, lf.path);
            if (readable < run_len)
                std::memset(dst + readable, 0, run_len - readable);
        } else {
            pread_all(pack_fd_, dst, run_len, p.phys, dir_ + "/" + name_ + ".pack");
        }
        ledger_.read_ops += 1;
        ledger_.bytes_read += run_len;
        i = j;
    }
}

void file_store::read(file_id f, uint64_t offset, std::span<uint8_t> out) {
    read_impl(f, offset, out, /*sparse=*/false);
}

bytes file_store::read(file_id f, uint64_t offset, uint64_t length) {
    bytes out(length);
    read_impl(f, offset, out, false);
    return out;
}

void file_store::read_sparse(file_id f, uint64_t offset, std::span<uint8_t> out) {
    read_impl(f, offset, out, /*sparse=*/true);
}

bytes file_store::read_sparse(file_id f, uint64_t offset, uint64_t length) {
    bytes out(length);
    read_impl(f, offset, out, true);
    return out;
}

void file_store::flush_pack() {
    if (pending_.empty()) return;
    pwrite_all(pack_fd_, pending_.data(), pending_.size(), pack_size_,
               dir_ + "/" + name_ + ".pack");
    ledger_.write_ops += 1;
    ledger_.bytes_written += pending_.size();
    for (auto& [fid, start] : pending_refs_) {
        auto it = files_[fid].extents.find(start);
        if (it == files_[fid].extents.end() || it->second.where != src::pending)
            continue;
        it->second.where = src::pack;
        it->second.phys += pack_size_;
    }
    pack_size_ += pending_.size();
    pending_.clear();
    pending_refs_.clear();
}

void file_store::persist_mapping() {
    bytes table;
    for (file_id f = 0; f < files_.size(); ++f) {
        for (const auto& [off, e] : files_[f].extents) {
            if (e.where != src::pack) continue;
            IVF_CHECK(e.len <= std::numeric_limits<uint32_t>::max(),
                      "pack extent too long for mapping record");
            put_u16(table, f);
            put_u64(table, off);
            put_u32(table, static_cast<uint32_t>(e.len));
            put_u64(table, e.phys);
        }
    }
    IVF_CHECK(unclaimed_.empty(), "commit with unregistered mapped files");
    if (::ftruncate(dsmap_fd_, static_cast<off_t>(table.size())) != 0)
        throw io_failure(std::string("ftruncate dsmap: ") + std::strerror(errno));
    if (!table.empty())
        pwrite_all(dsmap_fd_, table.data(), table.size(), 0,
                   dir_ + "/" + name_ + ".dsmap");
    ledger_.write_ops += 1;
    ledger_.bytes_written += table.size();
}

void file_store::load_mapping() {
    uint64_t size = file_size(dsmap_fd_, dir_ + "/" + name_ + ".dsmap");
    if (size == 0) return;
    if (size % kMapRecordSize != 0)
        throw corrupt_entry("dsmap size not a record multiple");
    bytes table(size);
    pread_all(dsmap_fd_, table.data(), size, 0, dir_ + "/" + name_ + ".dsmap");
    ledger_.read_ops += 1;
    ledger_.bytes_read += size;
    byte_reader r(table);
    uint64_t prev_phys_end = 0;
    for (uint64_t i = 0; i < size / kMapRecordSize; ++i) {
        uint16_t fid = r.u16();
        uint64_t off = r.u64();
        uint32_t len = r.u32();
        uint64_t phys = r.u64();
        if (len == 0) throw corrupt_entry("zero-length mapping record");
        if (phys + len > pack_size_)
            throw corrupt_entry("mapping points past pack file end");
        (void)prev_phys_end;
        unclaimed_[fid].insert_or_assign(off, extent{len, src::pack, phys});
    }
    dsmap_dirty_ = true;
}

void file_store::commit() {
    flush_pack();
    // The mapping file only needs maintenance once packing has ever produced
    // entries; plain stores commit without touching it.
    if (ds_.enabled || dsmap_dirty_)
        persist_mapping();
}

uint64_t file_store::logical_size(file_id f) const {
    IVF_CHECK(f < files_.size(), "logical_size of unregistered file");
    return files_[f].size;
}

size_t file_store::mapping_entry_count() const {
    size_t n = 0;
    for (const auto& lf : files_)
        for (const auto& [off, e] : lf.extents)
            if (e.where == src::pack) ++n;
    return n;
}

}  // namespace ivf
