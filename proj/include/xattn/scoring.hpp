// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xattn/attention.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

enum class Pattern { kAntidiagonal, kDiagonal, kRandom, kFullSum };
enum class Strategy { kThreshold, kTopK, kTopRatio };

inline const char* pattern_name(Pattern pattern) {
    switch (pattern) {
        case Pattern::kAntidiagonal: return "antidiagonal";
        case Pattern::kDiagonal: return "diagonal";
        case Pattern::kRandom: return "random";
        case Pattern::kFullSum: return "fullsum";
    }
    return "antidiagonal";
}

inline Pattern parse_pattern(const std::string& name) {
    if (name == "antidiagonal") return Pattern::kAntidiagonal;
    if (name == "diagonal") return Pattern::kDiagonal;
    if (name == "random") return Pattern::kRandom;
    if (name == "fullsum") return Pattern::kFullSum;
    throw ConfigError("unknown pattern: " + name);
}

inline const char* strategy_name(Strategy strategy) {
    switch (strategy) {
        case Strategy::kThreshold: return "threshold";
        case Strategy::kTopK: return "topk";
        case Strategy::kTopRatio: return "topratio";
    }
    return "threshold";
}

inline Strategy parse_strategy(const std::string& name) {
    if (name == "threshold") return Strategy::kThreshold;
    if (name == "topk") return Strategy::kTopK;
    if (name == "topratio") return Strategy::kTopRatio;
    throw ConfigError("unknown strategy: " + name);
}

/** Block selection parameters shared by scoring, selection, and execution.
 *  B is the attention block size, S the scoring tile size (stride). */
struct SelectionConfig {
    std::size_t block_size = 128;
    std::size_t stride = 8;
    double tau = 0.9;
    Strategy strategy = Strategy::kThreshold;
    std::size_t top_k = 1;
    double top_ratio = 1.0;
    Pattern pattern = Pattern::kAntidiagonal;
    std::uint64_t pattern_seed = 0;
    bool causal = true;
    bool force_diagonal_block = true;
    bool force_first_block = false;

    void validate() const {
        if (stride < 1 || block_size < stride || block_size % stride != 0) {
            throw ConfigError("require S >= 1, B >= S, and S | B");
        }
        if (!(tau > 0.0) || tau > 1.0) {
            throw ConfigError("tau must lie in (0, 1]");
        }
        if (top_k < 1) {
            throw ConfigError("top_k must be >= 1");
        }
        if (!(top_ratio > 0.0) || top_ratio > 1.0) {
            throw ConfigError("top_ratio must lie in (0, 1]");
        }
    }
};

/** Tile-granular importance scores for one query block. raw holds the
 *  pattern sums scaled by 1/(sqrt(d_h)*S); prob is the row-wise softmax over
 *  live tiles. tile_mask marks live tiles (1) versus causally dead or padding
 *  tiles (0, prob exactly 0). */
struct TileScoreMap {
    std::size_t query_block_index = 0;
    Tensor raw;
    Tensor prob;
    std::vector<std::uint8_t> tile_mask;
    std::size_t unmasked_rows = 0;
};

/** True iff the tile pattern touches every row and every column of an SxS
 *  tile (Rule 1 for score-map coverage). */
inline bool pattern_coverage_check(const std::vector<std::pair<std::size_t, std::size_t>>& positions,
                                   std::size_t stride) {
    std::vector<bool> row_seen(stride, false);
    std::vector<bool> col_seen(stride, false);
    for (const auto& [i, j] : positions) {
        if (i >= stride || j >= stride) {
            return false;
        }
        row_seen[i] = true;
        col_seen[j] = true;
    }
    for (std::size_t i = 0; i < stride; ++i) {
        if (!row_seen[i] || !col_seen[i]) {
            return false;
        }
    }
    return true;
}

namespace detail {

/** Key-side operand for the tile-score product, stored transposed
 *  ([width x n_tiles]) so the kernel can accumulate over contiguous columns.
 *  Block-independent for every pattern except kRandom. */
struct KeyTiles {
    Tensor columns;  // [width x n_tiles]
    std::size_t n_tiles = 0;
};

/** Writes source row `row` of x (or zeros past the end) into slot `slot` of
 *  the transposed operand. */
inline void fill_key_slot(const Tensor& x, std::size_t row, std::size_t slot, std::size_t tile,
                          Tensor& columns, std::size_t n_tiles) {
    const std::size_t d = x.cols();
    for (std::size_t t = 0; t < d; ++t) {
        float value = row < x.rows() ? x.at(row, t) : 0.0f;
        columns.data[(slot * d + t) * n_tiles + tile] = value;
    }
}

/** Forward (identity) or permuted key slices, interleaved per tile. */
inline KeyTiles build_key_tiles(const Tensor& k, std::size_t seq_len, std::size_t stride,
                                const std::vector<std::size_t>* slot_to_offset) {
    KeyTiles kt;
    kt.n_tiles = ceil_div(seq_len, stride);
    kt.columns = Tensor({stride * k.cols(), kt.n_tiles});
    for (std::size_t n = 0; n < kt.n_tiles; ++n) {
        for (std::size_t i = 0; i < stride; ++i) {
            std::size_t offset = slot_to_offset == nullptr ? i : (*slot_to_offset)[i];
            fill_key_slot(k, n * stride + offset, i, n, kt.columns, kt.n_tiles);
        }
    }
    return kt;
}

/** Sum-pooled key tiles for the fullsum baseline ([d_h x n_tiles]). */
inline KeyTiles build_pooled_key_tiles(const Tensor& k, std::size_t seq_len, std::size_t stride) {
    KeyTiles kt;
    kt.n_tiles = ceil_div(seq_len, stride);
    kt.columns = Tensor({k.cols(), kt.n_tiles});
    for (std::size_t n = 0; n < kt.n_tiles; ++n) {
        for (std::size_t t = 0; t < k.cols(); ++t) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < stride; ++i) {
                std::size_t row = n * stride + i;
                acc += row < k.rows() ? k.at(row, t) : 0.0f;
            }
            kt.columns.data[t * kt.n_tiles + n] = acc;
        }
    }
    return kt;
}

/** out_row[n] = sum_t a_row[t] * columns[t][n] for n < n_limit, accumulated
 *  in ascending t per output element (bit-identical to the scalar matmul);
 *  the layout lets the compiler vectorize across n. */
inline void accumulate_row(const float* a_row, const Tensor& columns, float* out_row,
                           std::size_t n_limit) {
    const std::size_t k = columns.rows();
    const std::size_t n_tiles = columns.cols();
    for (std::size_t n = 0; n < n_limit; ++n) {
        out_row[n] = 0.0f;
    }
    for (std::size_t t = 0; t < k; ++t) {
        const float a = a_row[t];
        const float* col = columns.data.data() + t * n_tiles;
        for (std::size_t n = 0; n < n_limit; ++n) {
            out_row[n] += a * col[n];
        }
    }
}

struct TileScoreParams {
    const KeyTiles* key_tiles = nullptr;  // optional cache, else built locally
    std::size_t n_tile_limit = 0;         // 0 = all tiles; callers may clip
                                          // strictly-future tiles, whose raw
                                          // entries then stay 0 but are
                                          // masked either way
};

inline TileScoreMap tile_scores_impl(const AttentionInputs& inp, const SelectionConfig& cfg,
                                     std::size_t query_block, const TileScoreParams& params) {
    inp.validate();
    cfg.validate();
    const std::size_t seq_len = inp.seq_len();
    const std::size_t block = cfg.block_size;
    const std::size_t stride = cfg.stride;
    if (query_block >= ceil_div(seq_len, block)) {
        throw ShapeError("query block index out of range");
    }
    const std::size_t d = inp.head_dim;
    const std::size_t rows = block / stride;
    const std::size_t n_tiles = ceil_div(seq_len, stride);
    const std::size_t base = query_block * block;

    // Q-side operand: per tile-row, the stride query rows interleaved in
    // pattern order (reversed for the antidiagonal).
    std::vector<std::size_t> key_order;
    Tensor q_rows;
    if (cfg.pattern == Pattern::kFullSum) {
        q_rows = Tensor({rows, d});
        for (std::size_t m = 0; m < rows; ++m) {
            for (std::size_t t = 0; t < d; ++t) {
                float acc = 0.0f;
                for (std::size_t i = 0; i < stride; ++i) {
                    std::size_t row = base + m * stride + i;
                    acc += row < seq_len ? inp.q.at(row, t) : 0.0f;
                }
                q_rows.at(m, t) = acc;
            }
        }
    } else {
        q_rows = Tensor({rows, stride * d});
        for (std::size_t m = 0; m < rows; ++m) {
            for (std::size_t i = 0; i < stride; ++i) {
                std::size_t offset = cfg.pattern == Pattern::kAntidiagonal ? stride - 1 - i : i;
                std::size_t row = base + m * stride + offset;
                for (std::size_t t = 0; t < d; ++t) {
                    q_rows.at(m, i * d + t) = row < seq_len ? inp.q.at(row, t) : 0.0f;
                }
            }
        }
        if (cfg.pattern == Pattern::kRandom) {
            // One permutation per (seed, block) stream, shared by all tiles
            // of this evaluation; entry i pairs q offset i with k offset
            // key_order[i], covering each tile row and column once.
            Rng rng(mix_seed(cfg.pattern_seed, query_block));
            key_order = rng.permutation(stride);
        }
    }

    KeyTiles local;
    const KeyTiles* kt = params.key_tiles;
    if (kt == nullptr) {
        if (cfg.pattern == Pattern::kFullSum) {
            local = build_pooled_key_tiles(inp.k, seq_len, stride);
        } else {
            local = build_key_tiles(inp.k, seq_len, stride,
                                    key_order.empty() ? nullptr : &key_order);
        }
        kt = &local;
    }

    TileScoreMap ts;
    ts.query_block_index = query_block;
    ts.raw = Tensor({rows, n_tiles});
    ts.tile_mask.assign(rows * n_tiles, 0);

    const std::size_t limit =
        params.n_tile_limit == 0 ? n_tiles : std::min(params.n_tile_limit, n_tiles);
    float scale = 1.0f / (std::sqrt(static_cast<float>(d)) * static_cast<float>(stride));
    if (cfg.pattern == Pattern::kFullSum) {
        scale /= static_cast<float>(stride * stride);
    }
    for (std::size_t m = 0; m < rows; ++m) {
        accumulate_row(q_rows.row(m), kt->columns, ts.raw.row(m), limit);
        for (std::size_t n = 0; n < limit; ++n) {
            ts.raw.at(m, n) *= scale;
        }
        const std::size_t last_query = base + m * stride + stride - 1;
        for (std::size_t n = 0; n < n_tiles; ++n) {
            bool padding = n * stride >= seq_len || base + m * stride >= seq_len;
            bool future = cfg.causal && n * stride > last_query;
            ts.tile_mask[m * n_tiles + n] = (padding || future) ? 0 : 1;
        }
    }

    ts.prob = Tensor({rows, n_tiles});
    ts.unmasked_rows = 0;
    for (std::size_t m = 0; m < rows; ++m) {
        const std::uint8_t* mask_row = ts.tile_mask.data() + m * n_tiles;
        bool live = false;
        for (std::size_t n = 0; n < n_tiles; ++n) {
            live = live || mask_row[n] != 0;
        }
        if (!live) {
            continue;  // padding-only tile row: prob stays exactly 0
        }
        ++ts.unmasked_rows;
        float* prow = ts.prob.row(m);
        const float* rrow = ts.raw.row(m);
        for (std::size_t n = 0; n < n_tiles; ++n) {
            prow[n] = rrow[n];
        }
        softmax_row(prow, mask_row, n_tiles);
    }
    return ts;
}

}  // namespace detail

/** Tile scores for the strided antidiagonal pattern: raw[m][n] is the sum of
 *  the score-map entries (i, j) of tile (m, n) with (i mod S) + (j mod S) =
 *  S - 1, scaled by 1/(sqrt(d_h)*S). Realized as one product of the reversed
 *  strided Q slices against the forward K slices. */
inline TileScoreMap antidiagonal_tile_scores(const AttentionInputs& inp, const SelectionConfig& cfg,
                                             std::size_t query_block) {
    if (cfg.pattern != Pattern::kAntidiagonal) {
        throw ConfigError("antidiagonal_tile_scores requires the antidiagonal pattern");
    }
    return detail::tile_scores_impl(inp, cfg, query_block, {});
}

/** Tile scores for the ablation baselines: diagonal (no reversal), random
 *  (one seeded permutation pattern per block evaluation), and fullsum (mean
 *  of all S^2 entries per tile). */
inline TileScoreMap baseline_tile_scores(const AttentionInputs& inp, const SelectionConfig& cfg,
                                         std::size_t query_block) {
    if (cfg.pattern == Pattern::kAntidiagonal) {
        throw ConfigError("baseline_tile_scores requires a baseline pattern");
    }
    return detail::tile_scores_impl(inp, cfg, query_block, {});
}

/** Pattern dispatch over antidiagonal_tile_scores / baseline_tile_scores. */
inline TileScoreMap tile_scores(const AttentionInputs& inp, const SelectionConfig& cfg,
                                std::size_t query_block) {
    return detail::tile_scores_impl(inp, cfg, query_block, {});
}

}  // namespace xattn
