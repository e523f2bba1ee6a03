// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xattn/attention.hpp"
#include "xattn/scoring.hpp"
#include "xattn/selection.hpp"
#include "xattn/sparse.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

struct CalibrationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/** Maps a full threshold vector (one entry per head) to a scalar performance,
 *  higher is better. Must be deterministic. */
using Evaluator = std::function<double(const std::vector<double>&)>;

/** Per-head thresholds produced by calibration.
 *  Invariant: t[h] = t_init * 0.9^step_counts[h]. */
struct HeadThresholds {
    std::vector<double> t;
    std::vector<std::size_t> step_counts;
};

/** DP table over (head row, reduction step column). Entry (h, m) holds the
 *  best performance among the first h candidate moves of column m together
 *  with the step vector realizing it. choice records how the entry was
 *  formed: 0 inherits (h-1, m), 1 reduces head h-1 on top of the anchor
 *  state of (h-1, m-1), -1 marks the all-t_init base column. */
struct DPState {
    std::size_t heads = 0;
    std::size_t budget = 0;
    double t_init = 0.0;
    std::vector<double> perf;                       // (heads+1) x (budget+1)
    std::vector<std::int8_t> choice;                // same layout
    std::vector<std::vector<std::size_t>> steps;    // same layout

    std::size_t index(std::size_t h, std::size_t m) const { return h * (budget + 1) + m; }
    double perf_at(std::size_t h, std::size_t m) const { return perf[index(h, m)]; }

    /** Rebuilds the step vector of entry (heads, m) from choice alone. */
    std::vector<std::size_t> backtrack(std::size_t m) const {
        std::vector<std::size_t> out(heads, 0);
        std::size_t h = heads;
        while (m > 0) {
            if (h == 0) {
                // Row 0 anchors to the previous column's final row.
                h = heads;
                continue;
            }
            const std::int8_t c = choice[index(h, m)];
            if (c == 1) {
                out[h - 1] += 1;
                h -= 1;
                m -= 1;
            } else {
                h -= 1;
            }
        }
        return out;
    }
};

struct CalibrationResult {
    double t_init = 0.0;
    double epsilon = 0.0;
    HeadThresholds thresholds;
    double baseline_perf = 0.0;
    double final_perf = 0.0;
};

inline nlohmann::json calibration_to_json(const CalibrationResult& r) {
    nlohmann::json j;
    j["t_init"] = r.t_init;
    j["epsilon"] = r.epsilon;
    j["thresholds"] = r.thresholds.t;
    j["step_counts"] = r.thresholds.step_counts;
    j["baseline_perf"] = r.baseline_perf;
    j["final_perf"] = r.final_perf;
    return j;
}

namespace detail {

inline std::vector<double> thresholds_from_steps(double t_init,
                                                 const std::vector<std::size_t>& steps) {
    std::vector<double> t(steps.size());
    for (std::size_t h = 0; h < steps.size(); ++h) {
        t[h] = t_init * std::pow(0.9, static_cast<double>(steps[h]));
    }
    return t;
}

inline double checked_eval(const Evaluator& evaluator, const std::vector<double>& t) {
    const double perf = evaluator(t);
    if (!std::isfinite(perf)) {
        throw CalibrationError("evaluator returned non-finite performance");
    }
    return perf;
}

}  // namespace detail

/** Threshold-reduction dynamic program. Column m spends m reduction steps;
 *  within a column, the head-h move reduces head h once on top of the state
 *  at (h-1, m-1), rows inherit the best earlier move of their own column,
 *  and row 0 of a column anchors to the previous column's final row so a
 *  head can be reduced repeatedly across columns. Returns the state of the
 *  deepest column whose performance stays within epsilon of the all-t_init
 *  baseline. Ties keep the earlier candidate. */
inline CalibrationResult predict_min_thresholds(const Evaluator& evaluator, std::size_t heads,
                                                std::size_t budget, double t_init,
                                                double epsilon, DPState* dp_out = nullptr) {
    if (heads < 1) {
        throw ConfigError("calibration needs at least one head");
    }
    if (budget < 1) {
        throw ConfigError("calibration budget must be at least 1");
    }
    if (!(t_init > 0.0) || t_init > 1.0) {
        throw ConfigError("t_init outside (0, 1]");
    }
    if (!(epsilon >= 0.0)) {
        throw ConfigError("epsilon must be non-negative");
    }

    DPState dp;
    dp.heads = heads;
    dp.budget = budget;
    dp.t_init = t_init;
    const std::size_t cells = (heads + 1) * (budget + 1);
    dp.perf.assign(cells, -std::numeric_limits<double>::infinity());
    dp.choice.assign(cells, 0);
    dp.steps.assign(cells, {});

    const std::vector<std::size_t> zero_steps(heads, 0);
    const double baseline = detail::checked_eval(
        evaluator, detail::thresholds_from_steps(t_init, zero_steps));
    for (std::size_t h = 0; h <= heads; ++h) {
        dp.perf[dp.index(h, 0)] = baseline;
        dp.choice[dp.index(h, 0)] = -1;
        dp.steps[dp.index(h, 0)] = zero_steps;
    }

    for (std::size_t m = 1; m <= budget; ++m) {
        for (std::size_t h = 1; h <= heads; ++h) {
            const std::size_t anchor =
                h == 1 ? dp.index(heads, m - 1) : dp.index(h - 1, m - 1);
            std::vector<std::size_t> cand_steps = dp.steps[anchor];
            cand_steps[h - 1] += 1;
            const double cand_perf = detail::checked_eval(
                evaluator, detail::thresholds_from_steps(t_init, cand_steps));

            const double skip_perf = dp.perf[dp.index(h - 1, m)];
            if (cand_perf > skip_perf) {
                dp.perf[dp.index(h, m)] = cand_perf;
                dp.choice[dp.index(h, m)] = 1;
                dp.steps[dp.index(h, m)] = std::move(cand_steps);
            } else {
                dp.perf[dp.index(h, m)] = skip_perf;
                dp.choice[dp.index(h, m)] = 0;
                dp.steps[dp.index(h, m)] = dp.steps[dp.index(h - 1, m)];
            }
        }
    }

    std::size_t best_m = 0;
    for (std::size_t m = budget; m > 0; --m) {
        if (dp.perf[dp.index(heads, m)] >= baseline - epsilon) {
            best_m = m;
            break;
        }
    }

    CalibrationResult result;
    result.t_init = t_init;
    result.epsilon = epsilon;
    result.baseline_perf = baseline;
    result.final_perf = dp.perf[dp.index(heads, best_m)];
    result.thresholds.step_counts = dp.backtrack(best_m);
    result.thresholds.t = detail::thresholds_from_steps(t_init, result.thresholds.step_counts);
    if (dp_out != nullptr) {
        *dp_out = std::move(dp);
    }
    return result;
}

/** Calibration workload: one AttentionInputs per head. */
using CalibrationSet = std::vector<std::vector<AttentionInputs>>;

/** Performance = negated mean relative output error of the sparse pipeline
 *  against exact full attention, over every (workload, head) pair. The cfg
 *  template supplies everything except tau, which comes from the threshold
 *  vector, one entry per head. */
inline Evaluator fidelity_evaluator(const CalibrationSet& workloads, SelectionConfig cfg,
                                    std::size_t threads = 1) {
    if (workloads.empty() || workloads.front().empty()) {
        throw ConfigError("fidelity evaluator needs at least one workload with one head");
    }
    const std::size_t heads = workloads.front().size();
    for (const auto& w : workloads) {
        if (w.size() != heads) {
            throw ShapeError("calibration workloads disagree on head count");
        }
    }
    cfg.strategy = Strategy::kThreshold;
    cfg.validate();

    auto full = std::make_shared<std::vector<std::vector<Tensor>>>();
    full->reserve(workloads.size());
    for (const auto& w : workloads) {
        std::vector<Tensor> per_head;
        per_head.reserve(heads);
        for (const auto& inp : w) {
            per_head.push_back(full_attention(inp));
        }
        full->push_back(std::move(per_head));
    }

    return [workloads, cfg, threads, heads, full](const std::vector<double>& t) {
        if (t.size() != heads) {
            throw ShapeError("threshold vector length does not match head count");
        }
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t w = 0; w < workloads.size(); ++w) {
            for (std::size_t h = 0; h < heads; ++h) {
                SelectionConfig head_cfg = cfg;
                head_cfg.tau = t[h];
                head_cfg.validate();
                const BlockMask mask = build_mask(workloads[w][h], head_cfg, threads);
                const Tensor sparse =
                    sparse_attention(workloads[w][h], mask, head_cfg.block_size, threads);
                total += output_error(sparse, (*full)[w][h]);
                count += 1;
            }
        }
        return -total / static_cast<double>(count);
    };
}

/** Mean mask density over every (workload, head) pair at the given per-head
 *  thresholds. Densities are measured on the same cfg the evaluator uses. */
inline double calibration_density(const CalibrationSet& workloads, SelectionConfig cfg,
                                  const std::vector<double>& t, std::size_t threads = 1) {
    if (workloads.empty() || workloads.front().empty()) {
        throw ConfigError("density needs at least one workload with one head");
    }
    cfg.strategy = Strategy::kThreshold;
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& w : workloads) {
        if (w.size() != t.size()) {
            throw ShapeError("threshold vector length does not match head count");
        }
        for (std::size_t h = 0; h < w.size(); ++h) {
            SelectionConfig head_cfg = cfg;
            head_cfg.tau = t[h];
            head_cfg.validate();
            const BlockMask mask = build_mask(w[h], head_cfg, threads);
            total += density(mask, head_cfg.causal);
            count += 1;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace xattn
