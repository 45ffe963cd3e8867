// Copyright the ivfstore authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
//
// Independent reference implementations used as test oracles. Everything in
// this file is written from the documented byte format alone and must stay
// free of dependencies on the production codec.

#pragma once

#include <cstdint>
#include <vector>

#include "ivf/postings.hpp"

namespace ivf::testsupport {

// Base-128 varint built by repeated division; no bit tricks shared with the
// production encoder.
std::vector<uint8_t> ref_varint(uint64_t value);

// Delta codec oracle: doc delta, then absolute position on doc change else
// position delta, each as ref_varint.
std::vector<uint8_t> ref_encode(const std::vector<posting>& list,
                                posting context = posting{0, 0});

// Tagged oracle: as ref_encode with the tag varint appended per posting.
std::vector<uint8_t> ref_encode_tagged(const std::vector<tagged_posting>& list);

// Merges per-key posting lists into one (doc, pos, tag)-ordered tagged list,
// assigning tag i+1 to input list i. Brute force by sort.
std::vector<tagged_posting> ref_merge_tagged(
    const std::vector<std::vector<posting>>& per_key);

// Filters a tagged list down to one tag, dropping the tags.
std::vector<posting> ref_project(const std::vector<tagged_posting>& merged,
                                 uint16_t tag);

}  // namespace ivf::testsupport
