// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "xattn/block_mask.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

/** One attention head's inputs: Q, K, V of shape [L x head_dim]. */
struct AttentionInputs {
    Tensor q;
    Tensor k;
    Tensor v;
    std::size_t head_dim = 0;
    bool causal = true;

    AttentionInputs() = default;

    AttentionInputs(Tensor q_in, Tensor k_in, Tensor v_in, bool causal_in)
        : q(std::move(q_in)), k(std::move(k_in)), v(std::move(v_in)), causal(causal_in) {
        head_dim = q.rank() == 2 ? q.cols() : 0;
        validate();
    }

    std::size_t seq_len() const { return q.rows(); }

    void validate() const {
        detail::require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2,
                        "attention inputs must be 2-D");
        detail::require(q.dims == k.dims && q.dims == v.dims,
                        "Q, K, V must share shape");
        detail::require(head_dim == q.cols() && head_dim >= 1, "head_dim mismatch");
    }
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) {
    return (a + b - 1) / b;
}

namespace detail {

/** Dense attention with an optional block mask. Causality is enforced per
 *  element even inside permitted blocks, so blocks straddling the diagonal
 *  stay exact. */
inline Tensor dense_attention(const AttentionInputs& inp, const BlockMask* mask, std::size_t block_size) {
    inp.validate();
    const std::size_t n = inp.seq_len();
    Tensor scores = matmul(inp.q, inp.k);
    const float scale = 1.0f / std::sqrt(static_cast<float>(inp.head_dim));
    for (float& s : scores.data) {
        s *= scale;
    }
    std::vector<std::uint8_t> keep(n * n, 1);
    bool need_mask = inp.causal || mask != nullptr;
    if (need_mask) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                bool ok = !inp.causal || j <= i;
                if (ok && mask != nullptr) {
                    ok = mask->get(i / block_size, j / block_size);
                }
                keep[i * n + j] = ok ? 1 : 0;
            }
        }
    }
    Tensor probs = softmax_rows(scores, need_mask ? &keep : nullptr);
    return matmul(probs, transpose(inp.v));
}

}  // namespace detail

/** Exact dense attention: softmax(Q K^T / sqrt(head_dim)) V with an optional
 *  causal mask. This is the ground-truth oracle for every sparse result. */
inline Tensor full_attention(const AttentionInputs& inp) {
    return detail::dense_attention(inp, nullptr, 1);
}

/** Dense simulation of block-sparse execution: entries outside permitted
 *  blocks are masked out before the softmax. A query row left with no
 *  permitted key raises EmptyDistributionError. */
inline Tensor dense_masked_attention(const AttentionInputs& inp, const BlockMask& mask, std::size_t block_size) {
    inp.validate();
    detail::require(block_size >= 1, "block_size must be positive");
    const std::size_t blocks = ceil_div(inp.seq_len(), block_size);
    detail::require(mask.n_query_blocks == blocks && mask.n_key_blocks == blocks,
                    "mask grid does not match ceil(L / B)");
    return detail::dense_attention(inp, &mask, block_size);
}

}  // namespace xattn
