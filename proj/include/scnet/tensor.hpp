#pragma once

// Dense NCHW tensors and the handful of kernels everything else is built on.
//
// A 1x1 convolution over one batch item is a single GEMM: the item's data is
// already a (channels) x (height*width) row-major matrix. The GEMM here packs
// column panels of B through a caller-supplied packer, which is how the fused
// shift-conv kernel gathers shifted rows without materializing them.
//
// Determinism contract: every output element of gemm is accumulated as
//     acc = 0; for p in 0..k-1: acc = std::fma(a[i,p], b[p,j], acc)
// in ascending p, independent of blocking, thread count and instruction set.
// Everything else is built with -ffp-contract=off so the compiler never adds
// fusions of its own.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#if defined(__AVX512F__) || defined(__FMA__)
#include <immintrin.h>
#endif

#include "scnet/alloc_tracker.hpp"
#include "scnet/error.hpp"
#include "scnet/parallel.hpp"

namespace scnet {

struct Shape {
    std::size_t n = 0, c = 0, h = 0, w = 0;

    constexpr std::size_t numel() const { return n * c * h * w; }
    constexpr bool operator==(const Shape&) const = default;

    std::string str() const {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
               std::to_string(w) + ")";
    }
};

template <class T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

/// Non-owning row-major matrix.
template <class T>
struct MatrixView {
    const T* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::string shape_str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
};

template <class T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values)
        : rows_(rows), cols_(cols), data_(values) {
        if (data_.size() != rows * cols) throw ShapeError("matrix initializer size mismatch");
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    MatrixView<T> view() const { return {data_.data(), rows_, cols_}; }
    operator MatrixView<T>() const { return view(); }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

private:
    std::size_t rows_ = 0, cols_ = 0;
    Buffer<T> data_;
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
    Tensor(Shape shape, std::initializer_list<T> values) : shape_(shape), data_(values) {
        if (data_.size() != shape.numel())
            throw ShapeError("tensor initializer has " + std::to_string(data_.size()) +
                             " values for shape " + shape.str());
    }
    Tensor(Shape shape, std::span<const T> values) : shape_(shape), data_(values.begin(), values.end()) {
        if (data_.size() != shape.numel())
            throw ShapeError("tensor data has " + std::to_string(data_.size()) + " values for shape " +
                             shape.str());
    }

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    std::size_t batch() const { return shape_.n; }
    std::size_t channels() const { return shape_.c; }
    std::size_t height() const { return shape_.h; }
    std::size_t width() const { return shape_.w; }
    std::size_t plane_size() const { return shape_.h * shape_.w; }

    std::size_t offset(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return ((b * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) { return data_[offset(b, c, y, x)]; }
    const T& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[offset(b, c, y, x)];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T* plane(std::size_t b, std::size_t c) { return data_.data() + (b * shape_.c + c) * plane_size(); }
    const T* plane(std::size_t b, std::size_t c) const { return data_.data() + (b * shape_.c + c) * plane_size(); }

    /// Batch item b as a (channels) x (height*width) matrix over the same memory.
    MatrixView<T> item(std::size_t b) const { return {plane(b, 0), shape_.c, plane_size()}; }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_{};
    Buffer<T> data_;
};

template <class U, class T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
    Tensor<U> out(t.shape());
    std::transform(t.data(), t.data() + t.numel(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
}

/// Exact bitwise equality, distinguishing -0 from +0 and treating equal NaN payloads as equal.
template <class T>
bool bit_identical(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.numel() * sizeof(T)) == 0;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
    return m;
}

template <class T>
double sum(const Tensor<T>& t) {
    double s = 0.0;
    for (T v : t.values()) s += static_cast<double>(v);
    return s;
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("dot: " + a.shape().str() + " vs " + b.shape().str());
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
    return s;
}

template <class T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.shape() != src.shape())
        throw ShapeError("add: " + dst.shape().str() + " vs " + src.shape().str());
    T* d = dst.data();
    const T* s = src.data();
    for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

template <class T>
Tensor<T> add(Tensor<T> a, const Tensor<T>& b) {
    add_inplace(a, b);
    return a;
}

template <class T>
Tensor<T> scale(Tensor<T> a, T factor) {
    for (T& v : a.values()) v *= factor;
    return a;
}

// ---------------------------------------------------------------------------
// GEMM

namespace detail {

inline constexpr std::size_t kPanelCols = 256;
inline constexpr std::size_t kTileRows = 8;
template <class T>
inline constexpr std::size_t kTileCols = 64 / sizeof(T);

template <class T>
using TileVector [[gnu::vector_size(64)]] = T;

// acc + a * b per lane with a single rounding, i.e. std::fma lane by lane.
template <class T>
inline TileVector<T> fused_madd(T a, TileVector<T> b, TileVector<T> acc) {
#if defined(__AVX512F__)
    if constexpr (std::is_same_v<T, float>)
        return (TileVector<T>)_mm512_fmadd_ps(_mm512_set1_ps(a), (__m512)b, (__m512)acc);
    else if constexpr (std::is_same_v<T, double>)
        return (TileVector<T>)_mm512_fmadd_pd(_mm512_set1_pd(a), (__m512d)b, (__m512d)acc);
#elif defined(__FMA__)
    if constexpr (std::is_same_v<T, float>) {
        __m256 h[2], c[2];
        std::memcpy(h, &b, sizeof(b));
        std::memcpy(c, &acc, sizeof(acc));
        for (int i = 0; i < 2; ++i) c[i] = _mm256_fmadd_ps(_mm256_set1_ps(a), h[i], c[i]);
        std::memcpy(&acc, c, sizeof(acc));
        return acc;
    } else if constexpr (std::is_same_v<T, double>) {
        __m256d h[2], c[2];
        std::memcpy(h, &b, sizeof(b));
        std::memcpy(c, &acc, sizeof(acc));
        for (int i = 0; i < 2; ++i) c[i] = _mm256_fmadd_pd(_mm256_set1_pd(a), h[i], c[i]);
        std::memcpy(&acc, c, sizeof(acc));
        return acc;
    }
#endif
    for (std::size_t l = 0; l < kTileCols<T>; ++l) acc[l] = std::fma(a, b[l], acc[l]);
    return acc;
}

// Accumulates a ROWS x kTileCols tile of C in vector registers; panel rows
// are `stride` apart. Each lane does acc = fma(a, b, acc) in ascending p.
template <std::size_t ROWS, class T>
inline void micro_tile(const T* a, std::size_t lda, std::size_t k, const T* panel, std::size_t stride, T* c,
                       std::size_t ldc, std::size_t cols, const T* bias, bool accumulate) {
    using V = TileVector<T>;
    constexpr std::size_t NC = kTileCols<T>;
    static_assert(sizeof(V) == NC * sizeof(T));
    V acc[ROWS] = {};
    for (std::size_t p = 0; p < k; ++p) {
        V bp;
        std::memcpy(&bp, panel + p * stride, sizeof(V));
        for (std::size_t r = 0; r < ROWS; ++r) acc[r] = fused_madd<T>(a[r * lda + p], bp, acc[r]);
    }
    for (std::size_t r = 0; r < ROWS; ++r) {
        T lanes[NC];
        std::memcpy(lanes, &acc[r], sizeof(V));
        T* dst = c + r * ldc;
        if (bias)
            for (std::size_t l = 0; l < cols; ++l) lanes[l] = lanes[l] + bias[r];
        if (accumulate)
            for (std::size_t l = 0; l < cols; ++l) dst[l] = dst[l] + lanes[l];
        else
            std::memcpy(dst, lanes, cols * sizeof(T));
    }
}

}  // namespace detail

/// C[m x n] = A[m x k] * B[k x n] with B supplied panel by panel.
///
/// pack(j0, width, dst, stride) must write B[p, j0 + jj] to dst[p * stride + jj]
/// for p < k and jj < width. Columns [width, stride) are zeroed here.
/// With `bias` each product is followed by + bias[i]; with `accumulate` the
/// result is added onto C instead of overwriting it.
template <class T, class Packer>
void gemm_packed(const T* a, std::size_t m, std::size_t k, std::size_t n, Packer&& pack, T* c,
                 const T* bias = nullptr, bool accumulate = false) {
    using namespace detail;
    constexpr std::size_t NC = kTileCols<T>;
    const std::size_t panels = (n + kPanelCols - 1) / kPanelCols;
    parallel_ranges(panels, [&](std::size_t lo, std::size_t hi) {
        Buffer<T> panel(k * kPanelCols);
        for (std::size_t pi = lo; pi < hi; ++pi) {
            const std::size_t j0 = pi * kPanelCols;
            const std::size_t width = std::min(kPanelCols, n - j0);
            const std::size_t stride = (width + NC - 1) / NC * NC;
            pack(j0, width, panel.data(), stride);
            if (stride != width)
                for (std::size_t p = 0; p < k; ++p)
                    std::fill(panel.data() + p * stride + width, panel.data() + (p + 1) * stride, T(0));
            for (std::size_t jt = 0; jt < width; jt += NC) {
                const std::size_t cols = std::min(NC, width - jt);
                std::size_t i = 0;
                for (; i + kTileRows <= m; i += kTileRows)
                    micro_tile<kTileRows>(a + i * k, k, k, panel.data() + jt, stride, c + i * n + j0 + jt, n, cols,
                                          bias ? bias + i : nullptr, accumulate);
                for (; i < m; ++i)
                    micro_tile<1>(a + i * k, k, k, panel.data() + jt, stride, c + i * n + j0 + jt, n, cols,
                                  bias ? bias + i : nullptr, accumulate);
            }
        }
    });
}

/// Packer over a dense row-major k x n matrix.
template <class T>
auto dense_packer(const T* b, std::size_t k, std::size_t n) {
    return [b, k, n](std::size_t j0, std::size_t width, T* dst, std::size_t stride) {
        for (std::size_t p = 0; p < k; ++p) std::memcpy(dst + p * stride, b + p * n + j0, width * sizeof(T));
    };
}

/// Writes A * B into c (m x n, row-major). Shapes are not checked.
template <class T>
void gemm_into(MatrixView<T> a, MatrixView<T> b, T* c) {
    gemm_packed(a.data, a.rows, a.cols, b.cols, dense_packer(b.data, b.rows, b.cols), c);
}

template <class T>
Matrix<T> gemm(MatrixView<T> a, MatrixView<T> b) {
    if (a.cols != b.rows) throw ShapeError("gemm: inner dimensions differ, A" + a.shape_str() + " x B" + b.shape_str());
    Matrix<T> c(a.rows, b.cols);
    gemm_into(a, b, c.data());
    return c;
}

/// C[m x n] = A[m x k] * B^T where B is n x k.
template <class T>
void gemm_nt_into(MatrixView<T> a, MatrixView<T> b, T* c) {
    const std::size_t k = a.cols;
    auto pack = [&](std::size_t j0, std::size_t width, T* dst, std::size_t stride) {
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t jj = 0; jj < width; ++jj) dst[p * stride + jj] = b.data[(j0 + jj) * k + p];
    };
    gemm_packed(a.data, a.rows, k, b.rows, pack, c);
}

template <class T>
Matrix<T> transpose(MatrixView<T> a) {
    Matrix<T> t(a.cols, a.rows);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) t(c, r) = a(r, c);
    return t;
}

// ---------------------------------------------------------------------------
// Elementwise and layout kernels

template <class T>
Tensor<T> zero_pad(const Tensor<T>& f, std::size_t pad) {
    const Shape s = f.shape();
    Tensor<T> out({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad});
    for (std::size_t b = 0; b < s.n; ++b)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
                std::memcpy(&out(b, c, y + pad, pad), &f(b, c, y, 0), s.w * sizeof(T));
    return out;
}

template <class T>
Tensor<T> relu(Tensor<T> f) {
    for (T& v : f.values()) v = v > T(0) ? v : T(0);
    return f;
}

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& f, std::size_t s) {
    const Shape in = f.shape();
    if (s == 0 || in.c % (s * s) != 0)
        throw ShapeError("pixel_shuffle: " + std::to_string(in.c) + " channels not divisible by " +
                         std::to_string(s) + "^2");
    const std::size_t oc = in.c / (s * s);
    Tensor<T> out({in.n, oc, in.h * s, in.w * s});
    for (std::size_t b = 0; b < in.n; ++b)
        for (std::size_t c = 0; c < oc; ++c)
            for (std::size_t i = 0; i < s; ++i)
                for (std::size_t j = 0; j < s; ++j) {
                    const T* src = f.plane(b, c * s * s + i * s + j);
                    for (std::size_t y = 0; y < in.h; ++y)
                        for (std::size_t x = 0; x < in.w; ++x) out(b, c, y * s + i, x * s + j) = src[y * in.w + x];
                }
    return out;
}

/// Index inverse of pixel_shuffle (and its adjoint).
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& f, std::size_t s) {
    const Shape in = f.shape();
    if (s == 0 || in.h % s != 0 || in.w % s != 0)
        throw ShapeError("pixel_unshuffle: spatial size " + in.str() + " not divisible by " + std::to_string(s));
    const std::size_t oh = in.h / s, ow = in.w / s;
    Tensor<T> out({in.n, in.c * s * s, oh, ow});
    for (std::size_t b = 0; b < in.n; ++b)
        for (std::size_t c = 0; c < in.c; ++c)
            for (std::size_t i = 0; i < s; ++i)
                for (std::size_t j = 0; j < s; ++j) {
                    T* dst = out.plane(b, c * s * s + i * s + j);
                    for (std::size_t y = 0; y < oh; ++y)
                        for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = f(b, c, y * s + i, x * s + j);
                }
    return out;
}

}  // namespace scnet
