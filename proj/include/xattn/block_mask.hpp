// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xattn/tensor.hpp"

namespace xattn {

/** Block-granular attention mask over a grid of query blocks x key blocks.
 *  bits is row-major with one byte per cell; nonzero means the key block is
 *  visible to the query block. */
struct BlockMask {
    std::size_t n_query_blocks = 0;
    std::size_t n_key_blocks = 0;
    std::vector<std::uint8_t> bits;

    BlockMask() = default;

    BlockMask(std::size_t query_blocks, std::size_t key_blocks)
        : n_query_blocks(query_blocks),
          n_key_blocks(key_blocks),
          bits(query_blocks * key_blocks, 0) {}

    bool get(std::size_t q, std::size_t k) const { return bits[q * n_key_blocks + k] != 0; }

    void set(std::size_t q, std::size_t k, bool value) {
        bits[q * n_key_blocks + k] = value ? 1 : 0;
    }
};

/** Mask admitting every causally reachable block (all blocks when not causal). */
inline BlockMask all_true_mask(std::size_t query_blocks, std::size_t key_blocks, bool causal) {
    BlockMask mask(query_blocks, key_blocks);
    for (std::size_t q = 0; q < query_blocks; ++q) {
        for (std::size_t k = 0; k < key_blocks; ++k) {
            if (!causal || k <= q) {
                mask.set(q, k, true);
            }
        }
    }
    return mask;
}

/** Selected fraction of the causally valid grid positions. Positions above
 *  the block diagonal are excluded from both counts when causal. */
inline double density(const BlockMask& mask, bool causal) {
    std::size_t valid = 0;
    std::size_t selected = 0;
    for (std::size_t q = 0; q < mask.n_query_blocks; ++q) {
        for (std::size_t k = 0; k < mask.n_key_blocks; ++k) {
            if (causal && k > q) {
                continue;
            }
            ++valid;
            if (mask.get(q, k)) {
                ++selected;
            }
        }
    }
    if (valid == 0) {
        throw ShapeError("density of an empty mask");
    }
    return static_cast<double>(selected) / static_cast<double>(valid);
}

/** Writes a mask in the XATN container (dtype 2, one byte per cell). */
inline void save_mask(const BlockMask& mask, const std::string& path) {
    if (mask.n_query_blocks == 0 || mask.n_key_blocks == 0) {
        throw ShapeError("cannot save an empty mask");
    }
    std::string bytes = detail::serialize_header(detail::kDtypeU8, {mask.n_query_blocks, mask.n_key_blocks});
    for (std::uint8_t b : mask.bits) {
        bytes.push_back(static_cast<char>(b ? 1 : 0));
    }
    detail::write_file(path, bytes);
}

/** Loads a mask; payload bytes other than 0 or 1 are rejected. */
inline BlockMask load_mask(const std::string& path) {
    std::string bytes = detail::read_file(path);
    detail::ByteReader reader(bytes, path);
    std::vector<std::size_t> dims = detail::parse_header(reader, detail::kDtypeU8, path);
    if (dims.size() != 2) {
        throw FormatError("mask rank must be 2: " + path);
    }
    BlockMask mask(dims[0], dims[1]);
    for (auto& b : mask.bits) {
        reader.read(&b, 1);
        if (b > 1) {
            throw FormatError("mask byte out of range: " + path);
        }
    }
    if (!reader.exhausted()) {
        throw FormatError("trailing bytes: " + path);
    }
    return mask;
}

}  // namespace xattn
