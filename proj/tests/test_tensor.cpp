// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "xattn/tensor.hpp"

namespace {

using xattn::Tensor;

// Independent oracle: triple-loop product in double, then rounded to float.
Tensor naive_matmul(const Tensor& a, const Tensor& b_transposed) {
    Tensor out({a.rows(), b_transposed.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b_transposed.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < a.cols(); ++t) {
                acc += static_cast<double>(a.at(i, t)) * static_cast<double>(b_transposed.at(j, t));
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

// Independent oracle: softmax of one row in extended precision.
std::vector<double> precise_softmax(const std::vector<double>& row) {
    long double max_value = row[0];
    for (double v : row) {
        max_value = std::max<long double>(max_value, v);
    }
    long double sum = 0.0L;
    std::vector<long double> e(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        e[i] = std::exp(static_cast<long double>(row[i]) - max_value);
        sum += e[i];
    }
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        out[i] = static_cast<double>(e[i] / sum);
    }
    return out;
}

Tensor random_tensor(xattn::detail::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Tensor t({rows, cols});
    for (auto& v : t.data) {
        v = static_cast<float>(rng.normal() * scale);
    }
    return t;
}

std::filesystem::path temp_path(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("matmul identity and fixed products", "[tensor]") {
    Tensor identity({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Tensor m({2, 2}, {3.0f, -1.0f, 2.5f, 4.0f});
    // identity * m with b_transposed semantics: pass m^T as the second operand.
    Tensor product = xattn::matmul(identity, xattn::transpose(m));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(product.data[i] == m.data[i]);
    }

    Tensor a({1, 2}, {1.0f, 2.0f});
    Tensor b_t({1, 2}, {3.0f, 4.0f});
    Tensor dot = xattn::matmul(a, b_t);
    REQUIRE(dot.dims == std::vector<std::size_t>{1, 1});
    CHECK(dot.data[0] == 11.0f);
}

TEST_CASE("matmul matches naive oracle", "[tensor]") {
    xattn::detail::Rng rng(2024);

    SECTION("fixed 7x5 by 5x6 case") {
        Tensor a = random_tensor(rng, 7, 5);
        Tensor b_t = random_tensor(rng, 6, 5);
        Tensor got = xattn::matmul(a, b_t);
        Tensor want = naive_matmul(a, b_t);
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            CHECK_THAT(got.data[i], Catch::Matchers::WithinAbs(want.data[i], 1e-6));
        }
    }

    SECTION("100 random small shapes") {
        for (int iter = 0; iter < 100; ++iter) {
            std::size_t m = 1 + rng.below(16);
            std::size_t k = 1 + rng.below(16);
            std::size_t n = 1 + rng.below(16);
            Tensor a = random_tensor(rng, m, k);
            Tensor b_t = random_tensor(rng, n, k);
            Tensor got = xattn::matmul(a, b_t);
            Tensor want = naive_matmul(a, b_t);
            for (std::size_t i = 0; i < got.data.size(); ++i) {
                double tol = 1e-5 * std::max(1.0, std::abs(static_cast<double>(want.data[i])));
                CHECK_THAT(got.data[i], Catch::Matchers::WithinAbs(want.data[i], tol));
            }
        }
    }
}

TEST_CASE("matmul rejects mismatched inner extents", "[tensor]") {
    Tensor a({2, 3});
    Tensor b_t({2, 4});
    CHECK_THROWS_AS(xattn::matmul(a, b_t), xattn::ShapeError);
}

TEST_CASE("softmax_rows basics", "[tensor]") {
    SECTION("uniform row") {
        Tensor scores({1, 3}, {0.0f, 0.0f, 0.0f});
        Tensor probs = xattn::softmax_rows(scores);
        for (float p : probs.data) {
            CHECK_THAT(p, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-7));
        }
    }

    SECTION("large shift stays stable") {
        Tensor scores({1, 2}, {1000.0f, 0.0f});
        Tensor probs = xattn::softmax_rows(scores);
        CHECK(probs.data[0] == 1.0f);
        CHECK(probs.data[1] == 0.0f);
    }

    SECTION("matches extended-precision oracle") {
        Tensor scores({1, 3}, {1.0f, 2.0f, 3.0f});
        Tensor probs = xattn::softmax_rows(scores);
        std::vector<double> want = precise_softmax({1.0, 2.0, 3.0});
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK_THAT(probs.data[i], Catch::Matchers::WithinAbs(want[i], 1e-7));
        }
    }
}

TEST_CASE("softmax_rows shift invariance", "[tensor]") {
    xattn::detail::Rng rng(77);
    for (int iter = 0; iter < 20; ++iter) {
        Tensor scores = random_tensor(rng, 4, 9, 2.0);
        Tensor shifted = scores;
        // Moderate shifts: keep x + shift representable well below the 1e-6
        // comparison tolerance; huge shifts degrade the float32 inputs
        // themselves, not the softmax.
        float shift = static_cast<float>(rng.normal() * 4.0);
        for (std::size_t i = 0; i < shifted.rows(); ++i) {
            // Constant added per row; softmax must not change.
            for (std::size_t j = 0; j < shifted.cols(); ++j) {
                shifted.at(i, j) += shift;
            }
        }
        Tensor p0 = xattn::softmax_rows(scores);
        Tensor p1 = xattn::softmax_rows(shifted);
        for (std::size_t i = 0; i < p0.data.size(); ++i) {
            CHECK_THAT(p1.data[i], Catch::Matchers::WithinAbs(p0.data[i], 1e-6));
        }
    }
}

TEST_CASE("softmax_rows masking", "[tensor]") {
    Tensor scores({2, 3}, {5.0f, 1.0f, 2.0f, 0.0f, 0.0f, 0.0f});

    SECTION("masked entries are exactly zero and rows renormalize") {
        std::vector<std::uint8_t> mask = {0, 1, 1, 1, 1, 1};
        Tensor probs = xattn::softmax_rows(scores, &mask);
        CHECK(probs.at(0, 0) == 0.0f);
        float row0 = probs.at(0, 1) + probs.at(0, 2);
        CHECK_THAT(row0, Catch::Matchers::WithinAbs(1.0, 1e-6));
        // The masked maximum (5.0) must not leak into the max subtraction:
        // entries 1 and 2 keep their relative weights.
        CHECK_THAT(probs.at(0, 2) / probs.at(0, 1), Catch::Matchers::WithinRel(std::exp(1.0), 1e-5));
    }

    SECTION("fully masked row raises") {
        std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0, 0};
        CHECK_THROWS_AS(xattn::softmax_rows(scores, &mask), xattn::EmptyDistributionError);
    }
}

TEST_CASE("tensor file round-trip is bitwise", "[tensor]") {
    xattn::detail::Rng rng(5150);
    Tensor t = random_tensor(rng, 3, 4, 3.0);
    // Include values with awkward bit patterns.
    t.data[0] = -0.0f;
    t.data[1] = std::numeric_limits<float>::denorm_min();
    auto path = temp_path("xattn_roundtrip.xatn");
    xattn::save_tensor(t, path.string());
    Tensor back = xattn::load_tensor(path.string());
    REQUIRE(back.dims == t.dims);
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        CHECK(std::memcmp(&back.data[i], &t.data[i], sizeof(float)) == 0);
    }
    std::filesystem::remove(path);
}

TEST_CASE("tensor file format rejects malformed input", "[tensor]") {
    auto path = temp_path("xattn_badfile.xatn");
    Tensor t({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    xattn::save_tensor(t, path.string());

    auto corrupt = [&](std::size_t offset, char value) {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(static_cast<std::streamoff>(offset));
        f.write(&value, 1);
    };

    SECTION("bad magic") {
        corrupt(0, 'Y');
        CHECK_THROWS_AS(xattn::load_tensor(path.string()), xattn::FormatError);
    }

    SECTION("bad dtype") {
        corrupt(8, 7);
        CHECK_THROWS_AS(xattn::load_tensor(path.string()), xattn::FormatError);
    }

    SECTION("truncated payload") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
        CHECK_THROWS_AS(xattn::load_tensor(path.string()), xattn::FormatError);
    }

    SECTION("trailing bytes") {
        std::ofstream f(path, std::ios::binary | std::ios::app);
        f.write("xx", 2);
        f.close();
        CHECK_THROWS_AS(xattn::load_tensor(path.string()), xattn::FormatError);
    }

    std::filesystem::remove(path);
}

TEST_CASE("tensor rejects invalid extents", "[tensor]") {
    CHECK_THROWS_AS(Tensor({0, 3}), xattn::ShapeError);
    CHECK_THROWS_AS(Tensor({1, 2, 3, 4}), xattn::ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f}), xattn::ShapeError);
}

TEST_CASE("parallel_for covers the range once", "[tensor]") {
    std::vector<int> hits(103, 0);
    xattn::detail::parallel_for(hits.size(), 4, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            hits[i] += 1;
        }
    });
    for (int h : hits) {
        CHECK(h == 1);
    }
}

TEST_CASE("rng streams are deterministic", "[tensor]") {
    xattn::detail::Rng a(99);
    xattn::detail::Rng b(99);
    for (int i = 0; i < 100; ++i) {
        REQUIRE(a.next_u64() == b.next_u64());
    }
    // Distinct lanes from the same base seed must decorrelate.
    CHECK(xattn::detail::mix_seed(1, 0) != xattn::detail::mix_seed(1, 1));

    xattn::detail::Rng c(7);
    auto perm = c.permutation(16);
    std::vector<bool> seen(16, false);
    for (std::size_t v : perm) {
        REQUIRE(v < 16);
        REQUIRE(!seen[v]);
        seen[v] = true;
    }
}
