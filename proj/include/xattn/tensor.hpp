// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace xattn {

/** Dimension or layout mismatch between operands. */
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** Malformed or truncated tensor file. */
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** A softmax row (or an attention row) with no admissible entry. */
class EmptyDistributionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** Invalid configuration or workload parameters. */
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/** Dense row-major float32 tensor with 1 to 3 dimensions. */
struct Tensor {
    std::vector<std::size_t> dims;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> extents) : dims(std::move(extents)) {
        validate_dims();
        data.assign(element_count(), 0.0f);
    }

    Tensor(std::vector<std::size_t> extents, std::vector<float> values)
        : dims(std::move(extents)), data(std::move(values)) {
        validate_dims();
        if (data.size() != element_count()) {
            throw ShapeError("tensor data size does not match extents");
        }
    }

    std::size_t rank() const { return dims.size(); }

    std::size_t element_count() const {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            n *= d;
        }
        return n;
    }

    // 2-D accessors; rank is checked by the caller once, not per element.
    std::size_t rows() const { return dims.at(0); }
    std::size_t cols() const { return dims.at(1); }

    float* row(std::size_t i) { return data.data() + i * cols(); }
    const float* row(std::size_t i) const { return data.data() + i * cols(); }

    float& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    float at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

private:
    void validate_dims() const {
        if (dims.empty() || dims.size() > 3) {
            throw ShapeError("tensor rank must be 1, 2, or 3");
        }
        for (std::size_t d : dims) {
            if (d == 0) {
                throw ShapeError("tensor extents must be positive");
            }
        }
    }
};

namespace detail {

inline void require(bool condition, const char* message) {
    if (!condition) {
        throw ShapeError(message);
    }
}

/** Runs fn(begin, end) over [0, n) split across `threads` workers. Disjoint
 *  output ranges keep the result independent of the schedule. The first
 *  worker exception is rethrown on the calling thread after the join. */
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        fn(0, n);
        return;
    }
    unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errors(workers);
    std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        std::size_t begin = static_cast<std::size_t>(w) * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&fn, &errors, w, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& err : errors) {
        if (err) {
            std::rethrow_exception(err);
        }
    }
}

/** Deterministic 64-bit generator (splitmix64). Distributions are computed
 *  explicitly so streams are identical across platforms and stdlibs. */
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /** Uniform double in [0, 1). */
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /** Uniform integer in [0, bound). */
    std::uint64_t below(std::uint64_t bound) {
        return next_u64() % bound;
    }

    /** Standard normal via Box-Muller; one spare value is cached. */
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    /** Fisher-Yates permutation of [0, n). */
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) {
            std::swap(p[i - 1], p[below(i)]);
        }
        return p;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/** Stream seed for a (seed, lane) pair; lanes decouple heads and blocks so
 *  parallel evaluation order cannot change any draw. */
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t lane) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (lane + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

/** Softmax over one row; masked entries become exactly zero and are excluded
 *  from the max and the sum. mask == nullptr means all entries are live. */
inline void softmax_row(float* values, const std::uint8_t* mask, std::size_t n) {
    float max_value = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
        if (mask == nullptr || mask[j] != 0) {
            max_value = std::max(max_value, values[j]);
            any = true;
        }
    }
    if (!any) {
        throw EmptyDistributionError("softmax row has no unmasked entry");
    }
    float sum = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
        if (mask == nullptr || mask[j] != 0) {
            values[j] = std::exp(values[j] - max_value);
            sum += values[j];
        } else {
            values[j] = 0.0f;
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        values[j] /= sum;
    }
}

}  // namespace detail

/** out = a * b_transposed^T for a [m x k] and b_transposed [n x k].
 *  Each output element accumulates in float32 in ascending t order, so the
 *  result is bit-identical run to run. */
inline Tensor matmul(const Tensor& a, const Tensor& b_transposed) {
    detail::require(a.rank() == 2 && b_transposed.rank() == 2, "matmul expects 2-D operands");
    detail::require(a.cols() == b_transposed.cols(), "matmul inner extents differ");
    const std::size_t m = a.rows();
    const std::size_t n = b_transposed.rows();
    const std::size_t k = a.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const float* arow = a.row(i);
        float* orow = out.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const float* brow = b_transposed.row(j);
            float acc = 0.0f;
            for (std::size_t t = 0; t < k; ++t) {
                acc += arow[t] * brow[t];
            }
            orow[j] = acc;
        }
    }
    return out;
}

/** Transpose of a 2-D tensor. */
inline Tensor transpose(const Tensor& t) {
    detail::require(t.rank() == 2, "transpose expects a 2-D tensor");
    Tensor out({t.cols(), t.rows()});
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            out.at(j, i) = t.at(i, j);
        }
    }
    return out;
}

/** Row-wise masked softmax of a 2-D tensor. mask, when given, is row-major
 *  with one byte per element; zero bytes are excluded from the distribution
 *  and come out exactly 0. A fully masked row raises EmptyDistributionError. */
inline Tensor softmax_rows(const Tensor& scores, const std::vector<std::uint8_t>* mask = nullptr) {
    detail::require(scores.rank() == 2, "softmax_rows expects a 2-D tensor");
    if (mask != nullptr && mask->size() != scores.element_count()) {
        throw ShapeError("softmax mask size does not match scores");
    }
    Tensor out = scores;
    const std::size_t n = out.cols();
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const std::uint8_t* mrow = mask == nullptr ? nullptr : mask->data() + i * n;
        detail::softmax_row(out.row(i), mrow, n);
    }
    return out;
}

namespace detail {

// Tensor file layout: "XATN", u32 version, u8 dtype, u8 ndim, u16 reserved,
// ndim x u64 extents, row-major payload. All integers little endian.
constexpr std::uint32_t kTensorFormatVersion = 1;
constexpr std::uint8_t kDtypeFloat32 = 1;
constexpr std::uint8_t kDtypeU8 = 2;

inline void put_bytes(std::string& out, const void* src, std::size_t n) {
    out.append(static_cast<const char*>(src), n);
}

inline void put_u16le(std::string& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

inline void put_u32le(std::string& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    put_bytes(out, b, 4);
}

inline void put_u64le(std::string& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    put_bytes(out, b, 8);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    void read(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) {
            throw FormatError("truncated tensor file: " + path_);
        }
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint16_t read_u16le() {
        unsigned char b[2];
        read(b, 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t read_u32le() {
        unsigned char b[4];
        read(b, 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | b[i];
        }
        return v;
    }

    std::uint64_t read_u64le() {
        unsigned char b[8];
        read(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) {
            v = (v << 8) | b[i];
        }
        return v;
    }

    bool exhausted() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline std::string serialize_header(std::uint8_t dtype, const std::vector<std::size_t>& dims) {
    std::string out;
    out.append("XATN", 4);
    put_u32le(out, kTensorFormatVersion);
    out.push_back(static_cast<char>(dtype));
    out.push_back(static_cast<char>(dims.size()));
    put_u16le(out, 0);
    for (std::size_t d : dims) {
        put_u64le(out, static_cast<std::uint64_t>(d));
    }
    return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw FormatError("cannot open for writing: " + path);
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw FormatError("write failed: " + path);
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw FormatError("cannot open for reading: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return bytes;
}

/** Parses the shared header and returns the extents; dtype must match. */
inline std::vector<std::size_t> parse_header(ByteReader& reader, std::uint8_t expected_dtype, const std::string& path) {
    char magic[4];
    reader.read(magic, 4);
    if (std::memcmp(magic, "XATN", 4) != 0) {
        throw FormatError("bad magic: " + path);
    }
    if (reader.read_u32le() != kTensorFormatVersion) {
        throw FormatError("unsupported format version: " + path);
    }
    std::uint8_t dtype = 0;
    reader.read(&dtype, 1);
    if (dtype != expected_dtype) {
        throw FormatError("unexpected dtype: " + path);
    }
    std::uint8_t ndim = 0;
    reader.read(&ndim, 1);
    if (ndim < 1 || ndim > 3) {
        throw FormatError("rank out of range: " + path);
    }
    if (reader.read_u16le() != 0) {
        throw FormatError("nonzero reserved field: " + path);
    }
    std::vector<std::size_t> dims(ndim);
    for (auto& d : dims) {
        d = static_cast<std::size_t>(reader.read_u64le());
        if (d == 0) {
            throw FormatError("zero extent: " + path);
        }
    }
    return dims;
}

}  // namespace detail

/** Writes a float32 tensor in the XATN container. The payload is the exact
 *  row-major bit pattern, so save followed by load is bitwise identity. */
inline void save_tensor(const Tensor& t, const std::string& path) {
    std::string bytes = detail::serialize_header(detail::kDtypeFloat32, t.dims);
    static_assert(sizeof(float) == 4);
    for (float v : t.data) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(v);
        detail::put_u32le(bytes, u);
    }
    detail::write_file(path, bytes);
}

/** Loads a float32 tensor; malformed headers, truncated or oversized
 *  payloads, and non-finite values are rejected with FormatError. */
inline Tensor load_tensor(const std::string& path) {
    std::string bytes = detail::read_file(path);
    detail::ByteReader reader(bytes, path);
    std::vector<std::size_t> dims = detail::parse_header(reader, detail::kDtypeFloat32, path);
    Tensor t(dims);
    for (float& v : t.data) {
        std::uint32_t u = reader.read_u32le();
        v = std::bit_cast<float>(u);
        if (!std::isfinite(v)) {
            throw FormatError("non-finite value: " + path);
        }
    }
    if (!reader.exhausted()) {
        throw FormatError("trailing bytes: " + path);
    }
    return t;
}

}  // namespace xattn
