#pragma once

// Differentiable building blocks. Every forward has a matching backward that
// *accumulates* into caller-provided, pre-shaped gradient buffers; a null
// buffer pointer skips that gradient. Inputs are batched row-wise: a rank-2
// tensor `[batch, features]`, or a rank-1 tensor for a single example.

#include "fusionbench/rng.hpp"
#include "fusionbench/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fusionbench {

enum class Mode { train, eval };

/// Clamp applied to probabilities before taking logs in the BCE loss.
inline constexpr double kBceClamp = 1e-7;

/// Variable-length bags of patch features for a batch of examples.
/// Bag `b` occupies rows `[offsets[b], offsets[b+1])` of `patches`.
template <typename T>
struct BagBatch {
    Tensor<T> patches;                 // [sum K, features]
    std::vector<std::size_t> offsets;  // batch + 1 entries, offsets[0] == 0

    [[nodiscard]] std::size_t batch_size() const noexcept {
        return offsets.empty() ? 0 : offsets.size() - 1;
    }
    [[nodiscard]] std::size_t bag_rows(std::size_t b) const noexcept {
        return offsets[b + 1] - offsets[b];
    }
};

namespace layers {

template <typename T>
T sigmoid(T z);

// y = x W^T + b
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     Tensor<T>* dweight, Tensor<T>* dbias, Tensor<T>* dx);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& z);

/// Uses the forward *output* y, since dy/dz = y (1 - y).
template <typename T>
void sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dz);

/// Inverted dropout. In train mode, writes the per-element scale (0 or
/// 1/(1-rate)) into `mask`; in eval mode returns `x` unchanged and clears it.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng* rng, Tensor<T>* mask);

/// An empty mask means the forward ran in eval mode (identity).
template <typename T>
void dropout_backward(const Tensor<T>& mask, const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts);

template <typename T>
void concat_backward(const Tensor<T>& dy, std::span<Tensor<T>* const> dparts);

/// Flattened outer product of the ones-augmented vectors [a;1] (x) [b;1],
/// row-major, so output index i*(n+1)+j holds a~_i * b~_j. The last entry
/// of every row is exactly 1.
template <typename T>
Tensor<T> kronecker_fuse(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
void kronecker_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dy,
                        Tensor<T>* da, Tensor<T>* db);

/// Dropout keep-mask, one bit per element, each row padded to whole words.
/// Empty when the forward ran in eval mode or at rate 0.
struct BitMask {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint64_t> words;

    [[nodiscard]] bool empty() const noexcept { return words.empty(); }
    [[nodiscard]] std::size_t row_words() const noexcept { return (cols + 63) / 64; }
    [[nodiscard]] bool kept(std::size_t r, std::size_t c) const {
        return (words[r * row_words() + c / 64] >> (c % 64)) & 1U;
    }
};

/// One block of a head input: the dense rows of `a`, or with `b` set the
/// ones-augmented Kronecker product [a;1] (x) [b;1], laid out as in
/// kronecker_fuse.
template <typename T>
struct HeadBlock {
    const Tensor<T>* a = nullptr;
    const Tensor<T>* b = nullptr;

    [[nodiscard]] std::size_t width() const {
        return b ? (a->cols() + 1) * (b->cols() + 1) : a->cols();
    }
};

/// linear(dropout(concat(blocks))) without building the concatenated input,
/// which for Kronecker blocks is far wider than its factors. In train mode
/// one draw from `rng` seeds a splitmix64 counter stream; each element is
/// kept when its 32-bit half of a stream value is at least rate * 2^32.
template <typename T>
Tensor<T> block_dropout_linear(std::span<const HeadBlock<T>> blocks, const Tensor<T>& weight,
                               const Tensor<T>& bias, double rate, Mode mode, Rng* rng,
                               BitMask* mask);

/// `da[k]` and `db[k]` receive the gradients of block k's factors; null
/// entries are skipped.
template <typename T>
void block_dropout_linear_backward(std::span<const HeadBlock<T>> blocks, const Tensor<T>& weight,
                                   double rate, const BitMask& mask, const Tensor<T>& dy,
                                   Tensor<T>* dweight, Tensor<T>* dbias,
                                   std::span<Tensor<T>* const> da, std::span<Tensor<T>* const> db);

/// Per-patch sigmoid gates a_k = sigmoid(W x_k + b) multiply each patch
/// elementwise, then patches are summed per bag. Output `[batch, features]`.
/// The gates are returned through `gates` for the backward pass.
template <typename T>
Tensor<T> gated_sum_pool(const BagBatch<T>& bags, const Tensor<T>& weight,
                         const Tensor<T>& bias, Tensor<T>* gates);

template <typename T>
void gated_sum_pool_backward(const BagBatch<T>& bags, const Tensor<T>& gates,
                             const Tensor<T>& weight, const Tensor<T>& dy,
                             Tensor<T>* dweight, Tensor<T>* dbias, Tensor<T>* dpatches);

/// Mean binary cross-entropy over the batch, probabilities clamped to
/// [kBceClamp, 1 - kBceClamp]. Labels must be 0 or 1.
template <typename T>
double bce_loss(const Tensor<T>& p, std::span<const int> labels);

/// d(mean BCE)/dp, evaluated at the clamped probability.
template <typename T>
Tensor<T> bce_grad(const Tensor<T>& p, std::span<const int> labels);

/// Mean squared error over every component of every row.
template <typename T>
double mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& prediction, const Tensor<T>& target);

} // namespace layers
} // namespace fusionbench
