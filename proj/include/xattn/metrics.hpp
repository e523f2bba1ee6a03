// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "xattn/attention.hpp"
#include "xattn/block_mask.hpp"
#include "xattn/selection.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

/** Rank correlation is undefined when either argument has no rank variance. */
class UndefinedCorrelationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** Input to a divergence is not a probability distribution. */
class InvalidDistributionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

/** 1-based ranks with ties assigned the average rank of their run. */
inline std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&values](std::size_t a, std::size_t b) {
        return values[a] < values[b];
    });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) {
            ++j;
        }
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

/** Spearman correlation: Pearson correlation of average-tie ranks. */
inline double rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ShapeError("rank_correlation requires two equal vectors of length >= 2");
    }
    const auto ra = detail::average_ranks(a);
    const auto rb = detail::average_ranks(b);
    const std::size_t n = ra.size();
    double mean_a = 0.0;
    double mean_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_a += ra[i];
        mean_b += rb[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);
    double cov = 0.0;
    double var_a = 0.0;
    double var_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = ra[i] - mean_a;
        const double db = rb[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) {
        throw UndefinedCorrelationError("rank correlation undefined for constant ranks");
    }
    return std::clamp(cov / std::sqrt(var_a * var_b), -1.0, 1.0);
}

/** Jensen-Shannon divergence with natural logs; bounded by ln 2. The
 *  convention 0 * log(0/x) = 0 keeps disjoint supports finite. */
inline double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size() || p.empty()) {
        throw ShapeError("js_divergence requires two equal non-empty vectors");
    }
    double sum_p = 0.0;
    double sum_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0) || !(q[i] >= 0.0) || !std::isfinite(p[i]) || !std::isfinite(q[i])) {
            throw InvalidDistributionError("distribution entries must be finite and >= 0");
        }
        sum_p += p[i];
        sum_q += q[i];
    }
    if (std::abs(sum_p - 1.0) > 1e-6 || std::abs(sum_q - 1.0) > 1e-6) {
        throw InvalidDistributionError("distributions must sum to 1 within 1e-6");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        double term = 0.0;
        if (p[i] > 0.0) {
            term += 0.5 * p[i] * std::log(p[i] / m);
        }
        if (q[i] > 0.0) {
            term += 0.5 * q[i] * std::log(q[i] / m);
        }
        acc += term;  // per-index pairing keeps js(p,q) == js(q,p) exactly
    }
    return acc;
}

/** Dense softmaxed attention probabilities summed per (query block, key
 *  block): the ground-truth operand for similarity metrics. Causal rows give
 *  zero mass to strictly future blocks. */
inline Tensor block_sum_ground_truth(const AttentionInputs& inp, std::size_t block_size) {
    inp.validate();
    detail::require(block_size >= 1, "block size must be positive");
    const std::size_t seq_len = inp.seq_len();
    Tensor scores = matmul(inp.q, inp.k);
    const float scale = 1.0f / std::sqrt(static_cast<float>(inp.head_dim));
    for (float& s : scores.data) {
        s *= scale;
    }
    Tensor probs;
    if (inp.causal) {
        std::vector<std::uint8_t> keep(seq_len * seq_len, 0);
        for (std::size_t i = 0; i < seq_len; ++i) {
            for (std::size_t j = 0; j <= i; ++j) {
                keep[i * seq_len + j] = 1;
            }
        }
        probs = softmax_rows(scores, &keep);
    } else {
        probs = softmax_rows(scores);
    }
    const std::size_t n_blocks = ceil_div(seq_len, block_size);
    std::vector<double> acc(n_blocks * n_blocks, 0.0);
    for (std::size_t i = 0; i < seq_len; ++i) {
        const std::size_t b = i / block_size;
        for (std::size_t j = 0; j < seq_len; ++j) {
            acc[b * n_blocks + j / block_size] += probs.at(i, j);
        }
    }
    Tensor out({n_blocks, n_blocks});
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out.data[i] = static_cast<float>(acc[i]);
    }
    return out;
}

struct SimilarityRow {
    Pattern pattern = Pattern::kAntidiagonal;
    std::size_t stride = 0;
    double rank_correlation = 0.0;
    double js_divergence = 0.0;
    double density_at_tau = 0.0;
};

/** How the two compared statistics were formed; recorded so report
 *  consumers can interpret the numbers. */
struct SimilarityReport {
    std::vector<SimilarityRow> rows;
    std::string s_selected_basis = "post-softmax tile probabilities summed per block";
    std::string s_full_basis = "post-softmax dense attention probabilities summed per block";
    double js_upper_bound = 0.6931471805599453;  // ln 2
};

/** Per config: Spearman correlation and JS divergence between the pattern's
 *  block-level mass estimates and the dense ground truth over all causally
 *  valid (query block, key block) positions, plus the mask density the
 *  config's strategy yields. */
inline SimilarityReport pattern_similarity_report(const AttentionInputs& inp,
                                                  const std::vector<SelectionConfig>& configs,
                                                  std::size_t threads = 1) {
    inp.validate();
    SimilarityReport report;
    std::map<std::size_t, Tensor> ground_by_block;
    for (const auto& cfg : configs) {
        cfg.validate();
        if (inp.causal != cfg.causal) {
            throw ConfigError("inputs and config disagree on causality");
        }
        auto found = ground_by_block.find(cfg.block_size);
        if (found == ground_by_block.end()) {
            found = ground_by_block
                        .emplace(cfg.block_size, block_sum_ground_truth(inp, cfg.block_size))
                        .first;
        }
        const Tensor& ground = found->second;
        const std::size_t n_blocks = ground.rows();

        std::vector<double> sel_flat;
        std::vector<double> full_flat;
        for (std::size_t b = 0; b < n_blocks; ++b) {
            TileScoreMap ts = tile_scores(inp, cfg, b);
            const std::size_t tiles_per_block = cfg.block_size / cfg.stride;
            const std::size_t valid = cfg.causal ? b + 1 : n_blocks;
            std::vector<double> sums(valid, 0.0);
            for (std::size_t m = 0; m < ts.prob.rows(); ++m) {
                for (std::size_t n = 0; n < ts.prob.cols(); ++n) {
                    const std::size_t c = n / tiles_per_block;
                    if (c < valid) {
                        sums[c] += static_cast<double>(ts.prob.at(m, n));
                    }
                }
            }
            for (std::size_t c = 0; c < valid; ++c) {
                sel_flat.push_back(sums[c]);
                full_flat.push_back(static_cast<double>(ground.at(b, c)));
            }
        }

        SimilarityRow row;
        row.pattern = cfg.pattern;
        row.stride = cfg.stride;
        row.rank_correlation = rank_correlation(sel_flat, full_flat);
        double sel_total = 0.0;
        double full_total = 0.0;
        for (std::size_t i = 0; i < sel_flat.size(); ++i) {
            sel_total += sel_flat[i];
            full_total += full_flat[i];
        }
        std::vector<double> sel_norm(sel_flat.size());
        std::vector<double> full_norm(full_flat.size());
        for (std::size_t i = 0; i < sel_flat.size(); ++i) {
            sel_norm[i] = sel_flat[i] / sel_total;
            full_norm[i] = full_flat[i] / full_total;
        }
        row.js_divergence = js_divergence(sel_norm, full_norm);
        row.density_at_tau = density(build_mask(inp, cfg, threads), cfg.causal);
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace xattn
