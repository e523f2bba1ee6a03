// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xattn/attention.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

enum class WorkloadKind { kGaussian, kVertical, kSlash, kSinkRecent, kBlockLocal };

/** Synthetic attention workload with planted structure. Generation is a pure
 *  function of the spec, including the seed. */
struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::kGaussian;
    std::size_t seq_len = 256;
    std::size_t head_dim = 64;
    std::size_t heads = 1;
    std::uint64_t seed = 0;
    bool causal = true;
    std::vector<std::size_t> columns;  // vertical: planted key columns
    double strength = 10.0;           // vertical, slash: planted score value
    std::size_t offset = 1;           // slash: query i attends key i - offset
    std::size_t window = 64;          // sink_recent: recent span
    std::size_t width = 16;           // block_local: shared-latent span

    void validate() const {
        if (seq_len < 1 || head_dim < 1 || heads < 1) {
            throw ConfigError("workload needs positive L, d_h, heads");
        }
        switch (kind) {
            case WorkloadKind::kVertical:
                if (columns.empty()) {
                    throw ConfigError("vertical workload needs planted columns");
                }
                for (std::size_t c : columns) {
                    if (c >= seq_len) {
                        throw ConfigError("planted column outside [0, L)");
                    }
                }
                if (!(strength > 0.0)) {
                    throw ConfigError("strength must be positive");
                }
                break;
            case WorkloadKind::kSlash:
                if (offset < 1 || offset >= seq_len) {
                    throw ConfigError("slash offset outside [1, L)");
                }
                if (!(strength > 0.0)) {
                    throw ConfigError("strength must be positive");
                }
                break;
            case WorkloadKind::kSinkRecent:
                if (window < 1 || window > seq_len) {
                    throw ConfigError("window outside [1, L]");
                }
                break;
            case WorkloadKind::kBlockLocal:
                if (width < 1 || width > seq_len) {
                    throw ConfigError("width outside [1, L]");
                }
                break;
            case WorkloadKind::kGaussian:
                break;
        }
    }
};

inline const char* kind_name(WorkloadKind kind) {
    switch (kind) {
        case WorkloadKind::kGaussian: return "gaussian";
        case WorkloadKind::kVertical: return "vertical";
        case WorkloadKind::kSlash: return "slash";
        case WorkloadKind::kSinkRecent: return "sink_recent";
        case WorkloadKind::kBlockLocal: return "block_local";
    }
    return "gaussian";
}

inline WorkloadKind parse_kind(const std::string& name) {
    if (name == "gaussian") return WorkloadKind::kGaussian;
    if (name == "vertical") return WorkloadKind::kVertical;
    if (name == "slash") return WorkloadKind::kSlash;
    if (name == "sink_recent") return WorkloadKind::kSinkRecent;
    if (name == "block_local") return WorkloadKind::kBlockLocal;
    throw ConfigError("unknown workload kind: " + name);
}

namespace detail {

inline std::vector<float> normal_row(Rng& rng, std::size_t d, float scale = 1.0f) {
    std::vector<float> row(d);
    for (auto& v : row) {
        v = static_cast<float>(rng.normal()) * scale;
    }
    return row;
}

inline std::vector<float> unit_vector(Rng& rng, std::size_t d) {
    for (;;) {
        auto row = normal_row(rng, d);
        double norm_sq = 0.0;
        for (float v : row) {
            norm_sq += static_cast<double>(v) * v;
        }
        if (norm_sq > 1e-12) {
            const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
            for (auto& v : row) {
                v *= inv;
            }
            return row;
        }
    }
}

inline void subtract_projection(float* row, const float* direction, std::size_t d) {
    double dot = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
        dot += static_cast<double>(row[t]) * direction[t];
    }
    const float p = static_cast<float>(dot);
    for (std::size_t t = 0; t < d; ++t) {
        row[t] -= p * direction[t];
    }
}

inline void add_scaled(float* row, const float* direction, float scale, std::size_t d) {
    for (std::size_t t = 0; t < d; ++t) {
        row[t] += scale * direction[t];
    }
}

/** Fixed boosts for sink_recent; the planted score must clear the noise
 *  floor L * E[exp(N(0, sigma^2))] even at L = 32768. */
constexpr float kSinkRecentScore = 14.0f;
constexpr std::size_t kSinkRows = 4;

inline AttentionInputs generate_head(const WorkloadSpec& spec, std::size_t head) {
    const std::size_t seq_len = spec.seq_len;
    const std::size_t d = spec.head_dim;
    const std::uint64_t base = mix_seed(spec.seed, head);
    Rng q_rng(mix_seed(base, 1));
    Rng k_rng(mix_seed(base, 2));
    Rng v_rng(mix_seed(base, 3));
    Rng dir_rng(mix_seed(base, 4));

    Tensor q({seq_len, d});
    Tensor k({seq_len, d});
    Tensor v({seq_len, d});
    const float sqrt_d = std::sqrt(static_cast<float>(d));

    switch (spec.kind) {
        case WorkloadKind::kGaussian: {
            const float scale = 1.0f / sqrt_d;
            for (auto& x : q.data) x = static_cast<float>(q_rng.normal()) * scale;
            for (auto& x : k.data) x = static_cast<float>(k_rng.normal()) * scale;
            for (auto& x : v.data) x = static_cast<float>(v_rng.normal()) * scale;
            break;
        }
        case WorkloadKind::kVertical: {
            // Planted key rows scaled to strength*sqrt(d) along a shared
            // direction every query carries with unit weight, so the planted
            // score equals `strength` for every row.
            const auto u = unit_vector(dir_rng, d);
            std::vector<std::uint8_t> planted(seq_len, 0);
            for (std::size_t c : spec.columns) {
                planted[c] = 1;
            }
            for (std::size_t j = 0; j < seq_len; ++j) {
                float* row = k.row(j);
                if (planted[j]) {
                    for (std::size_t t = 0; t < d; ++t) {
                        row[t] = static_cast<float>(spec.strength) * sqrt_d * u[t];
                    }
                } else {
                    for (std::size_t t = 0; t < d; ++t) {
                        row[t] = static_cast<float>(k_rng.normal());
                    }
                }
            }
            for (std::size_t i = 0; i < seq_len; ++i) {
                float* row = q.row(i);
                for (std::size_t t = 0; t < d; ++t) {
                    row[t] = static_cast<float>(q_rng.normal());
                }
                subtract_projection(row, u.data(), d);
                add_scaled(row, u.data(), 1.0f, d);
            }
            for (auto& x : v.data) x = static_cast<float>(v_rng.normal());
            break;
        }
        case WorkloadKind::kSlash: {
            // Unit key rows; query i carries strength*sqrt(d) along key
            // i - offset, so the planted score equals `strength` exactly.
            for (std::size_t j = 0; j < seq_len; ++j) {
                Rng row_rng(mix_seed(mix_seed(base, 20), j));
                auto unit = unit_vector(row_rng, d);
                float* row = k.row(j);
                for (std::size_t t = 0; t < d; ++t) {
                    row[t] = unit[t];
                }
            }
            for (std::size_t i = 0; i < seq_len; ++i) {
                float* row = q.row(i);
                for (std::size_t t = 0; t < d; ++t) {
                    row[t] = static_cast<float>(q_rng.normal());
                }
                if (i >= spec.offset) {
                    const float* target = k.row(i - spec.offset);
                    subtract_projection(row, target, d);
                    add_scaled(row, target, static_cast<float>(spec.strength) * sqrt_d, d);
                }
            }
            for (auto& x : v.data) x = static_cast<float>(v_rng.normal());
            break;
        }
        case WorkloadKind::kSinkRecent: {
            // Sink keys share a boosted direction; each query also carries a
            // component along one odd-offset key inside the recent window
            // (odd offsets keep the planted cell on tile antidiagonals for
            // even strides).
            const auto sink = unit_vector(dir_rng, d);
            const std::size_t sink_rows = std::min<std::size_t>(kSinkRows, seq_len);
            for (std::size_t j = 0; j < seq_len; ++j) {
                float* row = k.row(j);
                if (j < sink_rows) {
                    for (std::size_t t = 0; t < d; ++t) {
                        row[t] = sqrt_d * sink[t];
                    }
                } else {
                    Rng row_rng(mix_seed(mix_seed(base, 21), j));
                    auto unit = unit_vector(row_rng, d);
                    for (std::size_t t = 0; t < d; ++t) {
                        row[t] = unit[t];
                    }
                }
            }
            const std::size_t half = std::max<std::size_t>(1, (spec.window + 1) / 2);
            for (std::size_t i = 0; i < seq_len; ++i) {
                float* row = q.row(i);
                for (std::size_t t = 0; t < d; ++t) {
                    row[t] = static_cast<float>(q_rng.normal());
                }
                subtract_projection(row, sink.data(), d);
                add_scaled(row, sink.data(), kSinkRecentScore, d);
                const std::size_t recent_offset = 1 + 2 * (i % half);
                if (i >= recent_offset && i - recent_offset >= sink_rows &&
                    recent_offset <= spec.window) {
                    // Orthogonalize against the sink direction so the recent
                    // component cannot perturb the sink score.
                    std::vector<float> recent(k.row(i - recent_offset),
                                              k.row(i - recent_offset) + d);
                    subtract_projection(recent.data(), sink.data(), d);
                    add_scaled(row, recent.data(), kSinkRecentScore * sqrt_d, d);
                }
            }
            for (auto& x : v.data) x = static_cast<float>(v_rng.normal());
            break;
        }
        case WorkloadKind::kBlockLocal: {
            // All keys of a span share one latent direction; queries carry it
            // with a fixed boost, so same-span scores are ~6 and cross-span
            // scores stay at noise level 6/sqrt(d).
            const float boost = 6.0f;
            const std::size_t n_spans = ceil_div(seq_len, spec.width);
            std::vector<std::vector<float>> latents(n_spans);
            for (std::size_t g = 0; g < n_spans; ++g) {
                Rng latent_rng(mix_seed(mix_seed(base, 22), g));
                latents[g] = unit_vector(latent_rng, d);
            }
            for (std::size_t j = 0; j < seq_len; ++j) {
                const auto& latent = latents[j / spec.width];
                float* row = k.row(j);
                for (std::size_t t = 0; t < d; ++t) {
                    row[t] = sqrt_d * latent[t] + 0.1f * static_cast<float>(k_rng.normal());
                }
            }
            for (std::size_t i = 0; i < seq_len; ++i) {
                const auto& latent = latents[i / spec.width];
                float* row = q.row(i);
                for (std::size_t t = 0; t < d; ++t) {
                    row[t] = static_cast<float>(q_rng.normal());
                }
                subtract_projection(row, latent.data(), d);
                add_scaled(row, latent.data(), boost, d);
            }
            for (auto& x : v.data) x = static_cast<float>(v_rng.normal());
            break;
        }
    }
    return AttentionInputs(std::move(q), std::move(k), std::move(v), spec.causal);
}

}  // namespace detail

/** One AttentionInputs per head, streams decorrelated by (seed, head). */
inline std::vector<AttentionInputs> generate(const WorkloadSpec& spec) {
    spec.validate();
    std::vector<AttentionInputs> heads;
    heads.reserve(spec.heads);
    for (std::size_t h = 0; h < spec.heads; ++h) {
        heads.push_back(detail::generate_head(spec, h));
    }
    return heads;
}

}  // namespace xattn
