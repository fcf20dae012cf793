#pragma once

#include "fusionbench/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fusionbench {

/// Cache-line aligned allocation. Vectorized kernels split a buffer into
/// an unaligned head and an aligned body, so a fixed base alignment keeps
/// the summation order, and therefore the results, independent of where
/// the heap happened to place a tensor.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
        return true;
    }
};

/// Dense row-major tensor of finite reals.
///
/// Batched activations are rank-2 `[batch, features]`; a rank-1 tensor is
/// treated as a single row wherever a matrix view is needed.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T{0})
        : shape_(std::move(shape)), data_(extent(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, const std::vector<T>& data)
        : shape_(std::move(shape)), data_(data.begin(), data.end()) {
        if (data_.size() != extent(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor vector(std::vector<T> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
        return Tensor({rows, cols}, fill);
    }

    [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::size_t rows() const noexcept {
        if (shape_.empty()) return 0;
        return shape_.size() == 1 ? 1 : shape_[0];
    }
    [[nodiscard]] std::size_t cols() const noexcept {
        const std::size_t r = rows();
        return r == 0 ? 0 : data_.size() / r;
    }

    [[nodiscard]] T* data() noexcept { return data_.data(); }
    [[nodiscard]] const T* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    [[nodiscard]] std::span<T> row(std::size_t r) noexcept {
        return std::span<T>(data_).subspan(r * cols(), cols());
    }
    [[nodiscard]] std::span<const T> row(std::size_t r) const noexcept {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T{0}); }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        Tensor<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.values().begin(),
                       [](T v) { return static_cast<U>(v); });
        return out;
    }

    [[nodiscard]] std::string shape_string() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    static std::size_t extent(const std::vector<std::size_t>& shape) {
        if (shape.empty()) return 0;
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>());
    }

    std::vector<std::size_t> shape_;
    std::vector<T, AlignedAllocator<T>> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;

template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
MatrixMap<T> as_matrix(Tensor<T>& t) {
    return MatrixMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
ConstMatrixMap<T> as_matrix(const Tensor<T>& t) {
    return ConstMatrixMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                             static_cast<Eigen::Index>(t.cols()));
}

} // namespace fusionbench
