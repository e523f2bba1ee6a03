// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "xattn/attention.hpp"
#include "xattn/block_mask.hpp"
#include "xattn/scoring.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

/** Per-key-block probability mass for one query block: tile probabilities
 *  summed over each block's tile columns and all tile rows, divided by the
 *  number of unmasked rows. Entries for causally dead blocks come out 0. */
inline std::vector<double> block_probs(const TileScoreMap& ts, const SelectionConfig& cfg) {
    cfg.validate();
    detail::require(ts.prob.rank() == 2, "tile score map holds no probabilities");
    const std::size_t rows = ts.prob.rows();
    const std::size_t n_tiles = ts.prob.cols();
    detail::require(ts.unmasked_rows > 0, "tile score map has no live rows");
    const std::size_t tiles_per_block = cfg.block_size / cfg.stride;
    const std::size_t n_blocks = ceil_div(n_tiles, tiles_per_block);
    std::vector<double> mass(n_blocks, 0.0);
    for (std::size_t m = 0; m < rows; ++m) {
        const float* prow = ts.prob.row(m);
        for (std::size_t n = 0; n < n_tiles; ++n) {
            mass[n / tiles_per_block] += static_cast<double>(prow[n]);
        }
    }
    const double inv_rows = 1.0 / static_cast<double>(ts.unmasked_rows);
    for (double& value : mass) {
        value *= inv_rows;
    }
    return mass;
}

namespace detail {

/** Block indices ordered by mass descending, ties by lower index. */
inline std::vector<std::size_t> order_by_mass(const std::vector<double>& p) {
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&p](std::size_t a, std::size_t b) { return p[a] > p[b]; });
    return order;
}

inline std::vector<std::size_t> finish_selection(std::vector<std::uint8_t>& picked) {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < picked.size(); ++c) {
        if (picked[c] != 0) {
            out.push_back(c);
        }
    }
    return out;
}

inline void mark_forced(const std::vector<std::size_t>& forced, std::vector<std::uint8_t>& picked) {
    for (std::size_t c : forced) {
        require(c < picked.size(), "forced block index out of range");
        picked[c] = 1;
    }
}

}  // namespace detail

/** Smallest set of blocks whose cumulative mass reaches tau: forced blocks
 *  first, then blocks by descending mass (ties to the lower index) until the
 *  running total, forced mass included, is >= tau. Blocks with zero mass are
 *  never added beyond the forced set. Returns sorted indices. */
inline std::vector<std::size_t> find_blocks(const std::vector<double>& p, double tau,
                                            const std::vector<std::size_t>& forced = {}) {
    if (p.empty()) {
        throw EmptyDistributionError("find_blocks on an empty distribution");
    }
    if (!(tau > 0.0) || tau > 1.0) {
        throw ConfigError("tau must lie in (0, 1]");
    }
    std::vector<std::uint8_t> picked(p.size(), 0);
    detail::mark_forced(forced, picked);
    double cum = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        if (picked[c] != 0) {
            cum += p[c];
        }
    }
    for (std::size_t c : detail::order_by_mass(p)) {
        if (cum >= tau || !(p[c] > 0.0)) {
            break;
        }
        if (picked[c] != 0) {
            continue;
        }
        picked[c] = 1;
        cum += p[c];
    }
    return detail::finish_selection(picked);
}

/** The k highest-mass blocks (k clamped to the block count, ties to the
 *  lower index) plus the forced set. Returns sorted indices. */
inline std::vector<std::size_t> select_topk(const std::vector<double>& p, std::size_t k,
                                            const std::vector<std::size_t>& forced = {}) {
    if (p.empty()) {
        throw EmptyDistributionError("select_topk on an empty distribution");
    }
    std::vector<std::uint8_t> picked(p.size(), 0);
    detail::mark_forced(forced, picked);
    const std::size_t take = std::min(k, p.size());
    const auto order = detail::order_by_mass(p);
    for (std::size_t i = 0; i < take; ++i) {
        picked[order[i]] = 1;
    }
    return detail::finish_selection(picked);
}

/** The ceil(ratio * n) highest-mass blocks plus the forced set. */
inline std::vector<std::size_t> select_topratio(const std::vector<double>& p, double ratio,
                                                const std::vector<std::size_t>& forced = {}) {
    if (p.empty()) {
        throw EmptyDistributionError("select_topratio on an empty distribution");
    }
    if (!(ratio > 0.0) || ratio > 1.0) {
        throw ConfigError("top_ratio must lie in (0, 1]");
    }
    const auto count = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(p.size())));
    return select_topk(p, count, forced);
}

namespace detail {

inline std::vector<std::size_t> forced_blocks(const SelectionConfig& cfg, std::size_t query_block,
                                              std::size_t n_valid) {
    std::vector<std::size_t> forced;
    if (cfg.force_diagonal_block && query_block < n_valid) {
        forced.push_back(query_block);
    }
    if (cfg.force_first_block && (forced.empty() || forced.front() != 0)) {
        forced.push_back(0);
    }
    return forced;
}

inline std::vector<std::size_t> pick_blocks(const std::vector<double>& p,
                                            const SelectionConfig& cfg,
                                            const std::vector<std::size_t>& forced) {
    switch (cfg.strategy) {
        case Strategy::kTopK:
            return select_topk(p, cfg.top_k, forced);
        case Strategy::kTopRatio:
            return select_topratio(p, cfg.top_ratio, forced);
        case Strategy::kThreshold:
        default:
            return find_blocks(p, cfg.tau, forced);
    }
}

}  // namespace detail

/** Per-head thresholds override cfg.tau when build_mask runs per head; a
 *  single-entry vector applies to every head. */
inline BlockMask build_mask(const AttentionInputs& inp, const SelectionConfig& cfg,
                            std::size_t threads = 1) {
    inp.validate();
    cfg.validate();
    if (inp.causal != cfg.causal) {
        throw ConfigError("inputs and config disagree on causality");
    }
    const std::size_t seq_len = inp.seq_len();
    const std::size_t n_blocks = ceil_div(seq_len, cfg.block_size);
    BlockMask mask(n_blocks, n_blocks);

    // The key-side operand is block-independent for every pattern except
    // kRandom, so it is built once and shared across query blocks.
    detail::KeyTiles shared;
    bool have_shared = cfg.pattern != Pattern::kRandom;
    if (cfg.pattern == Pattern::kFullSum) {
        shared = detail::build_pooled_key_tiles(inp.k, seq_len, cfg.stride);
    } else if (have_shared) {
        shared = detail::build_key_tiles(inp.k, seq_len, cfg.stride, nullptr);
    }

    detail::parallel_for(n_blocks, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t b = begin; b < end; ++b) {
            detail::TileScoreParams params;
            if (have_shared) {
                params.key_tiles = &shared;
            }
            if (cfg.causal) {
                // Tiles past the block's last query row are masked anyway;
                // skipping their products keeps long causal runs cheap.
                params.n_tile_limit = (b * cfg.block_size + cfg.block_size - 1) / cfg.stride + 1;
            }
            TileScoreMap ts = detail::tile_scores_impl(inp, cfg, b, params);
            std::vector<double> p = block_probs(ts, cfg);
            const std::size_t n_valid = cfg.causal ? std::min(b + 1, n_blocks) : n_blocks;
            p.resize(n_valid);
            const auto forced = detail::forced_blocks(cfg, b, n_valid);
            for (std::size_t c : detail::pick_blocks(p, cfg, forced)) {
                mask.set(b, c, true);
            }
        }
    });
    return mask;
}

}  // namespace xattn
