// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "xattn/attention.hpp"
#include "xattn/block_mask.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

/** Work accounting for one sparse_attention call: score_evaluations counts
 *  (query row x key) products actually computed, so it must equal the sum of
 *  causally clipped key counts over all selected blocks. */
struct SparseStats {
    std::uint64_t score_evaluations = 0;
    std::uint64_t rows = 0;
};

/** Exact attention restricted to the selected key blocks. Per query row the
 *  selected blocks are visited in ascending index with a streaming softmax
 *  (running max, running denominator, rescaled accumulators), so memory is
 *  O(B) per row and outputs are independent of the thread count. */
inline Tensor sparse_attention(const AttentionInputs& inp, const BlockMask& mask,
                               std::size_t block_size, std::size_t threads = 1,
                               SparseStats* stats = nullptr) {
    inp.validate();
    const std::size_t seq_len = inp.seq_len();
    const std::size_t d = inp.head_dim;
    const std::size_t n_blocks = ceil_div(seq_len, block_size);
    detail::require(mask.n_query_blocks == n_blocks && mask.n_key_blocks == n_blocks,
                    "mask grid does not match sequence blocking");

    // Keys transposed to [d x L] so per-block scores vectorize across keys
    // while each score still accumulates in ascending feature order.
    const Tensor kt = transpose(inp.k);
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    Tensor out({seq_len, d});
    std::vector<std::uint64_t> evals_per_chunk;
    std::vector<std::uint64_t> chunk_rows;

    auto body = [&](std::size_t begin, std::size_t end, std::uint64_t& evals) {
        std::vector<float> scores(block_size);
        std::vector<float> acc(d);
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t qb = i / block_size;
            const float* q_row = inp.q.row(i);
            float running_max = -std::numeric_limits<float>::infinity();
            float denom = 0.0f;
            std::fill(acc.begin(), acc.end(), 0.0f);
            bool any = false;
            for (std::size_t c = 0; c < n_blocks; ++c) {
                if (!mask.get(qb, c)) {
                    continue;
                }
                const std::size_t j0 = c * block_size;
                std::size_t j1 = std::min(j0 + block_size, seq_len);
                if (inp.causal) {
                    j1 = std::min(j1, i + 1);
                }
                if (j1 <= j0) {
                    continue;
                }
                const std::size_t count = j1 - j0;
                for (std::size_t n = 0; n < count; ++n) {
                    scores[n] = 0.0f;
                }
                for (std::size_t t = 0; t < d; ++t) {
                    const float qv = q_row[t];
                    const float* kt_row = kt.row(t) + j0;
                    for (std::size_t n = 0; n < count; ++n) {
                        scores[n] += qv * kt_row[n];
                    }
                }
                float block_max = -std::numeric_limits<float>::infinity();
                for (std::size_t n = 0; n < count; ++n) {
                    scores[n] *= scale;
                    block_max = std::max(block_max, scores[n]);
                }
                if (block_max > running_max) {
                    if (any) {
                        const float rescale = std::exp(running_max - block_max);
                        denom *= rescale;
                        for (std::size_t t = 0; t < d; ++t) {
                            acc[t] *= rescale;
                        }
                    }
                    running_max = block_max;
                }
                for (std::size_t n = 0; n < count; ++n) {
                    const float e = std::exp(scores[n] - running_max);
                    denom += e;
                    const float* v_row = inp.v.row(j0 + n);
                    for (std::size_t t = 0; t < d; ++t) {
                        acc[t] += e * v_row[t];
                    }
                }
                evals += count;
                any = true;
            }
            if (!any || denom <= 0.0f) {
                throw EmptyDistributionError("query row has no selected keys");
            }
            float* out_row = out.row(i);
            for (std::size_t t = 0; t < d; ++t) {
                out_row[t] = acc[t] / denom;
            }
        }
    };

    const unsigned use_threads =
        static_cast<unsigned>(std::max<std::size_t>(1, std::min(threads, seq_len)));
    std::vector<std::uint64_t> evals(use_threads == 1 ? 1 : seq_len, 0);
    if (use_threads == 1) {
        body(0, seq_len, evals[0]);
    } else {
        // One counter slot per chunk start keeps accounting race-free.
        detail::parallel_for(seq_len, use_threads, [&](std::size_t begin, std::size_t end) {
            body(begin, end, evals[begin]);
        });
    }
    if (stats != nullptr) {
        stats->score_evaluations = 0;
        for (std::uint64_t e : evals) {
            stats->score_evaluations += e;
        }
        stats->rows = seq_len;
    }
    return out;
}

/** Dense attention through the identical streaming kernel (all blocks
 *  selected); the fair baseline for benchmark comparisons. */
inline Tensor full_attention_streamed(const AttentionInputs& inp, std::size_t block_size,
                                      std::size_t threads = 1, SparseStats* stats = nullptr) {
    const std::size_t n_blocks = ceil_div(inp.seq_len(), block_size);
    return sparse_attention(inp, all_true_mask(n_blocks, n_blocks, false), block_size, threads,
                            stats);
}

/** Mean over rows of ||sparse - full||_2 / max(||full||_2, 1e-12). */
inline double output_error(const Tensor& sparse_out, const Tensor& full_out) {
    detail::require(sparse_out.rank() == 2 && full_out.rank() == 2 &&
                        sparse_out.dims == full_out.dims,
                    "output_error requires matching 2-D tensors");
    const std::size_t rows = sparse_out.rows();
    const std::size_t cols = sparse_out.cols();
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        double diff_sq = 0.0;
        double full_sq = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double s = sparse_out.at(i, j);
            const double f = full_out.at(i, j);
            diff_sq += (s - f) * (s - f);
            full_sq += f * f;
        }
        total += std::sqrt(diff_sq) / std::max(std::sqrt(full_sq), 1e-12);
    }
    return total / static_cast<double>(rows);
}

}  // namespace xattn
