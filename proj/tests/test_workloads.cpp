// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "xattn/attention.hpp"
#include "xattn/workload_io.hpp"
#include "xattn/workloads.hpp"

namespace {

using namespace xattn;

// Dense attention probabilities, independent of the block-sparse pipeline.
Tensor dense_probs(const AttentionInputs& inp) {
    const std::size_t n = inp.seq_len();
    Tensor scores = matmul(inp.q, inp.k);
    const float scale = 1.0f / std::sqrt(static_cast<float>(inp.head_dim));
    for (auto& s : scores.data) s *= scale;
    if (!inp.causal) {
        return softmax_rows(scores);
    }
    std::vector<std::uint8_t> keep(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            keep[i * n + j] = 1;
        }
    }
    return softmax_rows(scores, &keep);
}

double row_norm(const Tensor& t, std::size_t i) {
    double s = 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) {
        s += static_cast<double>(t.at(i, c)) * t.at(i, c);
    }
    return std::sqrt(s);
}

WorkloadSpec vertical_spec(std::vector<std::size_t> columns, std::size_t seq_len,
                           bool causal, std::uint64_t seed) {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kVertical;
    spec.seq_len = seq_len;
    spec.head_dim = 64;
    spec.causal = causal;
    spec.seed = seed;
    spec.columns = std::move(columns);
    spec.strength = 10.0;
    return spec;
}

}  // namespace

TEST_CASE("generation is a pure function of the spec") {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kSinkRecent;
    spec.seq_len = 96;
    spec.head_dim = 32;
    spec.heads = 3;
    spec.seed = 7;
    spec.window = 24;

    const auto a = generate(spec);
    const auto b = generate(spec);
    REQUIRE(a.size() == 3);
    REQUIRE(b.size() == 3);
    for (std::size_t h = 0; h < a.size(); ++h) {
        CHECK(a[h].q.data == b[h].q.data);
        CHECK(a[h].k.data == b[h].k.data);
        CHECK(a[h].v.data == b[h].v.data);
        CHECK(a[h].causal == spec.causal);
    }

    SECTION("heads draw from decorrelated streams") {
        CHECK(a[0].q.data != a[1].q.data);
        CHECK(a[1].k.data != a[2].k.data);
        CHECK(a[0].v.data != a[2].v.data);
    }

    SECTION("the seed changes every stream") {
        WorkloadSpec other = spec;
        other.seed = 8;
        const auto c = generate(other);
        CHECK(a[0].q.data != c[0].q.data);
        CHECK(a[0].k.data != c[0].k.data);
        CHECK(a[0].v.data != c[0].v.data);
    }
}

TEST_CASE("workload validation rejects bad parameters") {
    WorkloadSpec spec;
    spec.seq_len = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);

    spec = WorkloadSpec{};
    spec.kind = WorkloadKind::kVertical;
    CHECK_THROWS_AS(spec.validate(), ConfigError);  // no columns
    spec.columns = {spec.seq_len};
    CHECK_THROWS_AS(spec.validate(), ConfigError);  // out of range
    spec.columns = {5};
    spec.strength = 0.0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.strength = 10.0;
    CHECK_NOTHROW(spec.validate());

    spec = WorkloadSpec{};
    spec.kind = WorkloadKind::kSlash;
    spec.offset = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.offset = spec.seq_len;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.offset = 3;
    CHECK_NOTHROW(spec.validate());

    spec = WorkloadSpec{};
    spec.kind = WorkloadKind::kSinkRecent;
    spec.window = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.window = spec.seq_len + 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);

    spec = WorkloadSpec{};
    spec.kind = WorkloadKind::kBlockLocal;
    spec.width = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec.width = spec.seq_len + 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("kind names round-trip") {
    for (WorkloadKind kind :
         {WorkloadKind::kGaussian, WorkloadKind::kVertical, WorkloadKind::kSlash,
          WorkloadKind::kSinkRecent, WorkloadKind::kBlockLocal}) {
        CHECK(parse_kind(kind_name(kind)) == kind);
    }
    CHECK_THROWS_AS(parse_kind("diagonal_stripe"), ConfigError);
}

TEST_CASE("gaussian workloads have the advertised moments") {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kGaussian;
    spec.seq_len = 256;
    spec.head_dim = 64;
    spec.seed = 11;
    const auto heads = generate(spec);
    const Tensor& q = heads[0].q;

    double mean = 0.0;
    for (float x : q.data) mean += x;
    mean /= static_cast<double>(q.data.size());
    double var = 0.0;
    for (float x : q.data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(q.data.size());

    // Entries are N(0, 1/d); the mean of 16384 samples stays within 5 sigma.
    const double entry_std = 1.0 / std::sqrt(64.0);
    CHECK(std::abs(mean) < 5.0 * entry_std / std::sqrt(16384.0));
    CHECK(var > 0.8 / 64.0);
    CHECK(var < 1.25 / 64.0);
}

TEST_CASE("vertical plants exact scores and row maxima") {
    const auto heads = generate(vertical_spec({17}, 64, true, 3));
    const AttentionInputs& inp = heads[0];
    const float scale = 1.0f / std::sqrt(64.0f);

    Tensor scores = matmul(inp.q, inp.k);
    for (auto& s : scores.data) s *= scale;

    for (std::size_t i = 0; i < 64; ++i) {
        CHECK_THAT(scores.at(i, 17), Catch::Matchers::WithinAbs(10.0, 1e-3));
        if (i < 17) continue;
        std::size_t argmax = 0;
        for (std::size_t j = 1; j <= i; ++j) {
            if (scores.at(i, j) > scores.at(i, argmax)) argmax = j;
        }
        CHECK(argmax == 17);
    }
}

TEST_CASE("vertical planted columns absorb most of every visible row") {
    for (bool causal : {true, false}) {
        const auto heads = generate(vertical_spec({17, 130}, 256, causal, 5));
        const Tensor probs = dense_probs(heads[0]);
        for (std::size_t i = 0; i < 256; ++i) {
            double planted = 0.0;
            bool any_visible = false;
            for (std::size_t c : {std::size_t{17}, std::size_t{130}}) {
                if (causal && c > i) continue;
                any_visible = true;
                planted += probs.at(i, c);
            }
            if (!any_visible) continue;
            INFO("causal=" << causal << " row=" << i);
            CHECK(planted > 0.5);
        }
    }
}

TEST_CASE("slash plants an exact off-diagonal") {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kSlash;
    spec.seq_len = 256;
    spec.head_dim = 64;
    spec.offset = 63;
    spec.strength = 10.0;
    spec.seed = 9;
    const auto heads = generate(spec);
    const AttentionInputs& inp = heads[0];

    SECTION("key rows are unit vectors") {
        for (std::size_t j = 0; j < 256; ++j) {
            CHECK_THAT(row_norm(inp.k, j), Catch::Matchers::WithinAbs(1.0, 1e-5));
        }
    }

    SECTION("planted scores equal strength and dominate the row") {
        const Tensor probs = dense_probs(inp);
        const float scale = 1.0f / std::sqrt(64.0f);
        for (std::size_t i = 63; i < 256; ++i) {
            double score = 0.0;
            for (std::size_t t = 0; t < 64; ++t) {
                score += static_cast<double>(inp.q.at(i, t)) * inp.k.at(i - 63, t);
            }
            score *= scale;
            CHECK_THAT(score, Catch::Matchers::WithinAbs(10.0, 1e-3));
            CHECK(probs.at(i, i - 63) > 0.5);
        }
    }
}

TEST_CASE("sink_recent mass lands on sinks plus one recent key") {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kSinkRecent;
    spec.seq_len = 256;
    spec.head_dim = 64;
    spec.window = 64;
    spec.seed = 13;
    const auto heads = generate(spec);
    const AttentionInputs& inp = heads[0];
    const Tensor probs = dense_probs(inp);

    SECTION("sink keys share one boosted direction") {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK_THAT(row_norm(inp.k, j), Catch::Matchers::WithinAbs(8.0, 1e-4));
        }
        for (std::size_t j = 1; j < 4; ++j) {
            for (std::size_t t = 0; t < 64; ++t) {
                REQUIRE(inp.k.at(j, t) == inp.k.at(0, t));
            }
        }
        for (std::size_t j = 4; j < 256; ++j) {
            CHECK_THAT(row_norm(inp.k, j), Catch::Matchers::WithinAbs(1.0, 1e-5));
        }
    }

    SECTION("per-row planted mass exceeds one half") {
        const std::size_t half = std::max<std::size_t>(1, (spec.window + 1) / 2);
        for (std::size_t i = 0; i < 256; ++i) {
            double planted = 0.0;
            for (std::size_t j = 0; j < std::min<std::size_t>(4, i + 1); ++j) {
                planted += probs.at(i, j);
            }
            const std::size_t recent_offset = 1 + 2 * (i % half);
            if (i >= recent_offset && i - recent_offset >= 4 && recent_offset <= spec.window) {
                planted += probs.at(i, i - recent_offset);
            }
            INFO("row=" << i);
            CHECK(planted > 0.5);
        }
    }
}

TEST_CASE("block_local mass stays inside the span") {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kBlockLocal;
    spec.seq_len = 128;
    spec.head_dim = 64;
    spec.width = 16;
    spec.seed = 21;

    SECTION("non-causal rows concentrate on their own span") {
        spec.causal = false;
        const auto heads = generate(spec);
        const Tensor probs = dense_probs(heads[0]);
        for (std::size_t i = 0; i < 128; ++i) {
            const std::size_t start = (i / 16) * 16;
            double inside = 0.0;
            for (std::size_t j = start; j < start + 16; ++j) {
                inside += probs.at(i, j);
            }
            INFO("row=" << i);
            CHECK(inside > 0.8);
        }
    }

    SECTION("causal rows still prefer their own span on average") {
        spec.causal = true;
        const auto heads = generate(spec);
        const Tensor probs = dense_probs(heads[0]);
        double total_inside = 0.0;
        double min_inside = 1.0;
        for (std::size_t i = 0; i < 128; ++i) {
            const std::size_t start = (i / 16) * 16;
            double inside = 0.0;
            for (std::size_t j = start; j <= i; ++j) {
                inside += probs.at(i, j);
            }
            total_inside += inside;
            min_inside = std::min(min_inside, inside);
        }
        CHECK(total_inside / 128.0 > 0.5);
        CHECK(min_inside > 0.2);
    }
}

TEST_CASE("workload specs round-trip through JSON") {
    WorkloadSpec spec;
    spec.kind = WorkloadKind::kVertical;
    spec.seq_len = 96;
    spec.head_dim = 32;
    spec.heads = 2;
    spec.seed = 42;
    spec.causal = false;
    spec.columns = {3, 64};
    spec.strength = 12.5;
    spec.offset = 7;
    spec.window = 11;
    spec.width = 24;

    const WorkloadSpec back = spec_from_json(spec_to_json(spec));
    CHECK(back.kind == spec.kind);
    CHECK(back.seq_len == spec.seq_len);
    CHECK(back.head_dim == spec.head_dim);
    CHECK(back.heads == spec.heads);
    CHECK(back.seed == spec.seed);
    CHECK(back.causal == spec.causal);
    CHECK(back.columns == spec.columns);
    CHECK(back.strength == spec.strength);
    CHECK(back.offset == spec.offset);
    CHECK(back.window == spec.window);
    CHECK(back.width == spec.width);

    SECTION("missing fields fall back to defaults") {
        const WorkloadSpec defaulted = spec_from_json(nlohmann::json::object());
        CHECK(defaulted.kind == WorkloadKind::kGaussian);
        CHECK(defaulted.seq_len == 256);
        CHECK(defaulted.causal == true);
    }

    SECTION("bad field types and kinds are rejected") {
        nlohmann::json j;
        j["kind"] = "swirl";
        CHECK_THROWS_AS(spec_from_json(j), ConfigError);
        j = nlohmann::json::object();
        j["L"] = "not a number";
        CHECK_THROWS_AS(spec_from_json(j), FormatError);
    }
}

TEST_CASE("workloads round-trip through a directory") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "xattn_workload_rt";
    fs::remove_all(dir);

    WorkloadSpec spec;
    spec.kind = WorkloadKind::kSlash;
    spec.seq_len = 48;
    spec.head_dim = 16;
    spec.heads = 2;
    spec.offset = 5;
    spec.seed = 77;
    spec.causal = false;
    const auto heads = generate(spec);
    save_workload(dir.string(), spec, heads);

    const LoadedWorkload loaded = load_workload(dir.string());
    CHECK(loaded.spec.kind == spec.kind);
    CHECK(loaded.spec.offset == spec.offset);
    CHECK(loaded.spec.causal == spec.causal);
    REQUIRE(loaded.heads.size() == 2);
    for (std::size_t h = 0; h < 2; ++h) {
        CHECK(loaded.heads[h].q.data == heads[h].q.data);
        CHECK(loaded.heads[h].k.data == heads[h].k.data);
        CHECK(loaded.heads[h].v.data == heads[h].v.data);
        CHECK(loaded.heads[h].causal == spec.causal);
    }

    SECTION("head count mismatch is rejected on save") {
        std::vector<AttentionInputs> wrong;
        wrong.push_back(heads[0]);
        CHECK_THROWS_AS(save_workload(dir.string(), spec, wrong), ShapeError);
    }

    SECTION("missing directory is rejected on load") {
        CHECK_THROWS_AS(load_workload((dir / "nope").string()), FormatError);
    }
    fs::remove_all(dir);
}
