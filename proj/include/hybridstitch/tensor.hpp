// Dense 2-D float kernels used by the toy denoisers and the stitching scheduler.
//
// Everything here is deliberately scalar and single-threaded: accumulation
// order is fixed so results are bit-reproducible for a given input.
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridstitch {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(std::size_t rows, std::size_t cols) {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

/// Row-major rows x cols grid of 32-bit floats. Both extents are at least 1.
class Grid2D {
public:
    Grid2D() = default;

    Grid2D(std::size_t rows, std::size_t cols, float fill = 0.0f) : rows_(rows), cols_(cols) {
        if (rows == 0 || cols == 0) {
            throw ShapeError("Grid2D: empty grid " + shape_str(rows, cols));
        }
        data_.assign(rows * cols, fill);
    }

    Grid2D(std::size_t rows, std::size_t cols, std::vector<float> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) {
            throw ShapeError("Grid2D: empty grid " + shape_str(rows, cols));
        }
        if (data_.size() != rows * cols) {
            throw ShapeError("Grid2D: data length " + std::to_string(data_.size()) +
                             " does not match " + shape_str(rows, cols));
        }
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    const std::vector<float>& storage() const { return data_; }

    std::string shape() const { return shape_str(rows_, cols_); }

    bool same_shape(const Grid2D& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Grid2D& a, const Grid2D& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

inline void require_same_shape(const Grid2D& a, const Grid2D& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape() + " vs " + b.shape());
    }
}

inline bool all_finite(const Grid2D& g) {
    return std::all_of(g.values().begin(), g.values().end(), [](float v) { return std::isfinite(v); });
}

/// c = a * b. For each output row the k-loop runs in ascending order and the
/// j-loop is the inner loop, so every element is accumulated in the same order
/// regardless of how many rows a has.
inline Grid2D matmul(const Grid2D& a, const Grid2D& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions differ, a" + a.shape() + " * b" + b.shape());
    }
    Grid2D c(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        float* ci = c.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const float aik = a(i, k);
            const float* bk = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
    return c;
}

inline Grid2D transpose(const Grid2D& a) {
    Grid2D t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

/// Row-wise softmax of scale * a, with the row max subtracted first.
inline Grid2D softmax_rows(const Grid2D& a, float scale = 1.0f) {
    Grid2D out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto in = a.row(i);
        auto o = out.row(i);
        float mx = in[0] * scale;
        for (float v : in) mx = std::max(mx, v * scale);
        float sum = 0.0f;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] * scale - mx);
            sum += o[j];
        }
        const float inv = 1.0f / sum;
        for (float& v : o) v *= inv;
    }
    return out;
}

/// Per-row normalization to zero mean and unit variance (no affine params).
inline Grid2D layer_norm_rows(const Grid2D& a, float eps = 1e-5f) {
    Grid2D out(a.rows(), a.cols());
    const float inv_n = 1.0f / static_cast<float>(a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto in = a.row(i);
        float mean = 0.0f;
        for (float v : in) mean += v;
        mean *= inv_n;
        float var = 0.0f;
        for (float v : in) var += (v - mean) * (v - mean);
        var *= inv_n;
        const float rstd = 1.0f / std::sqrt(var + eps);
        auto o = out.row(i);
        for (std::size_t j = 0; j < in.size(); ++j) o[j] = (in[j] - mean) * rstd;
    }
    return out;
}

// tanh approximation
inline Grid2D gelu(Grid2D a) {
    constexpr float k0 = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float k1 = 0.044715f;
    for (float& v : a.values()) {
        v = 0.5f * v * (1.0f + std::tanh(k0 * (v + k1 * v * v * v)));
    }
    return a;
}

inline void add_inplace(Grid2D& dst, const Grid2D& src) {
    require_same_shape(dst, src, "add");
    auto d = dst.values();
    auto s = src.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

/// dst[r, :] += vec for every row.
inline void add_row_broadcast(Grid2D& dst, std::span<const float> vec) {
    if (vec.size() != dst.cols()) {
        throw ShapeError("add_row_broadcast: vector length " + std::to_string(vec.size()) +
                         " vs grid " + dst.shape());
    }
    for (std::size_t i = 0; i < dst.rows(); ++i) {
        auto r = dst.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += vec[j];
    }
}

inline Grid2D slice_cols(const Grid2D& a, std::size_t begin, std::size_t count) {
    if (begin + count > a.cols()) {
        throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + a.shape());
    }
    Grid2D out(a.rows(), count);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy_n(a.row(i).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(i).begin());
    }
    return out;
}

inline void write_cols(Grid2D& dst, std::size_t begin, const Grid2D& src) {
    if (src.rows() != dst.rows() || begin + src.cols() > dst.cols()) {
        throw ShapeError("write_cols: " + src.shape() + " at column " + std::to_string(begin) + " into " +
                         dst.shape());
    }
    for (std::size_t i = 0; i < dst.rows(); ++i) {
        std::copy(src.row(i).begin(), src.row(i).end(), dst.row(i).begin() + static_cast<std::ptrdiff_t>(begin));
    }
}

inline Grid2D gather_rows(const Grid2D& a, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ShapeError("gather_rows: empty index set");
    Grid2D out(indices.size(), a.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= a.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " + a.shape());
        }
        std::copy(a.row(indices[r]).begin(), a.row(indices[r]).end(), out.row(r).begin());
    }
    return out;
}

/// dst[indices[r], :] = src[r, :].
inline void scatter_rows(Grid2D& dst, std::span<const std::size_t> indices, const Grid2D& src) {
    if (src.rows() != indices.size() || src.cols() != dst.cols()) {
        throw ShapeError("scatter_rows: source " + src.shape() + " with " + std::to_string(indices.size()) +
                         " indices into " + dst.shape());
    }
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= dst.rows()) {
            throw ShapeError("scatter_rows: index " + std::to_string(indices[r]) + " out of range for " +
                             dst.shape());
        }
        std::copy(src.row(r).begin(), src.row(r).end(), dst.row(indices[r]).begin());
    }
}

/// Indices of the k largest values, ties resolved toward the lower index,
/// returned in ascending index order.
template <std::floating_point T>
std::vector<std::size_t> topk_indices(std::span<const T> values, std::size_t k) {
    if (k > values.size()) {
        throw std::invalid_argument("topk_indices: k=" + std::to_string(k) + " exceeds length " +
                                    std::to_string(values.size()));
    }
    for (T v : values) {
        if (std::isnan(v)) throw std::invalid_argument("topk_indices: NaN in values");
    }
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return values[a] > values[b] || (values[a] == values[b] && a < b);
    };
    if (k < idx.size()) {
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <std::floating_point T>
std::vector<std::size_t> topk_indices(const std::vector<T>& values, std::size_t k) {
    return topk_indices(std::span<const T>(values), k);
}

/// Deterministic random source. The bit stream is std::mt19937_64 (fully
/// specified by the standard); normals come from the Box-Muller transform on
/// 53-bit uniforms, consumed in pairs, so a seed maps to the same samples on
/// every conforming platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in (0, 1].
    double uniform_open0() { return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53; }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_open0();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(theta);
        has_spare_ = true;
        return radius * std::cos(theta);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// rows x cols i.i.d. standard normal samples, filled row-major.
inline Grid2D gaussian(SeededRng& rng, std::size_t rows, std::size_t cols) {
    Grid2D g(rows, cols);
    for (float& v : g.values()) v = static_cast<float>(rng.normal());
    return g;
}

}  // namespace hybridstitch
