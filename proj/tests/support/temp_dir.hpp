// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

namespace ivf::testsupport {

// Scratch directory removed on destruction.
class temp_dir {
public:
    explicit temp_dir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path() / "ivfstore-tests";
        std::filesystem::create_directories(base);
        for (int i = 0;; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                                     std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directory(candidate, ec)) {
                path_ = candidate.string();
                break;
            }
        }
    }
    ~temp_dir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    temp_dir(const temp_dir&) = delete;
    temp_dir& operator=(const temp_dir&) = delete;

    const std::string& path() const { return path_; }

private:
    std::string path_;
};

}  // namespace ivf::testsupport
