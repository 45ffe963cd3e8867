// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.

#pragma once

#include <stdexcept>
#include <string>

namespace ivf {

// Base class for everything the engine throws on purpose.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

class order_violation : public error {
public:
    explicit order_violation(const std::string& msg) : error(msg) {}
};

class corrupt_block : public error {
public:
    explicit corrupt_block(const std::string& msg) : error(msg) {}
};

class corrupt_entry : public error {
public:
    explicit corrupt_entry(const std::string& msg) : error(msg) {}
};

class io_failure : public error {
public:
    explicit io_failure(const std::string& msg) : error(msg) {}
};

class address_overflow : public error {
public:
    explicit address_overflow(const std::string& msg) : error(msg) {}
};

class unmapped_range : public error {
public:
    explicit unmapped_range(const std::string& msg) : error(msg) {}
};

class double_free : public error {
public:
    explicit double_free(const std::string& msg) : error(msg) {}
};

class fl_area_exhausted : public error {
public:
    explicit fl_area_exhausted(const std::string& msg) : error(msg) {}
};

class tag_space_exhausted : public error {
public:
    explicit tag_space_exhausted(const std::string& msg) : error(msg) {}
};

class phase_violation : public error {
public:
    explicit phase_violation(const std::string& msg) : error(msg) {}
};

class cache_overcommit : public error {
public:
    explicit cache_overcommit(const std::string& msg) : error(msg) {}
};

class config_error : public error {
public:
    explicit config_error(const std::string& msg) : error(msg) {}
};

class ingest_order_violation : public error {
public:
    explicit ingest_order_violation(const std::string& msg) : error(msg) {}
};

// Internal consistency check that stays active in release builds.
#define IVF_CHECK(cond, msg)                                            \
    do {                                                                \
        if (!(cond)) {                                                  \
            throw ::ivf::error(std::string("internal check failed: ") + \
                               (msg) + " [" #cond "]");                 \
        }                                                               \
    } while (0)

}  // namespace ivf
