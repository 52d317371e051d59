#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace oversense {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Small on purpose: the proxy model and
/// the attribution path only need storage, (i, j) access, and shape checks.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& at(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

/// Deterministic RNG wrapper. std::mt19937_64 has a pinned sequence, but the
/// standard distributions do not, so uniform draws are derived here by hand
/// to keep outputs identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 bits of randomness.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n) {
        // Rejection sampling keeps the distribution exact.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    /// Fisher-Yates shuffle with draws from this engine.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// FNV-1a over bytes; used for deterministic template selection and file
/// fingerprints.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ULL);

/// Shortest decimal representation that round-trips the exact double.
std::string format_double(double v);

/// Reads a whole file; throws ConfigError naming the path when unreadable.
std::string read_file(const std::filesystem::path& path);

/// Splits file content into lines. A trailing newline does not produce an
/// empty final line.
std::vector<std::string> split_lines(const std::string& content);

/// Writes content to `path` atomically: temp file in the same directory,
/// then rename. An interrupted write never leaves a torn file.
void atomic_write(const std::filesystem::path& path, const std::string& content);

/// Lowercases ASCII letters in place; bytes >= 0x80 pass through.
std::string ascii_lower(std::string_view s);

/// Strips leading and trailing spaces, tabs, carriage returns, and newlines.
std::string trim(const std::string& s);

void log_warn(const std::string& message);

}  // namespace oversense
