#include "fusionbench/layers.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <string>

namespace fusionbench::layers {

namespace {

template <typename T>
std::vector<std::size_t> batched_shape(const Tensor<T>& like, std::size_t width) {
    if (like.rank() == 1) return {width};
    return {like.rows(), width};
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

template <typename T>
void require_rows(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.rows() != b.rows()) {
        throw DimensionError(std::string(what) + ": batch rows " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

void check_labels(std::span<const int> labels) {
    for (int y : labels) {
        if (y != 0 && y != 1) {
            throw DataError("binary label expected, got " + std::to_string(y));
        }
    }
}

} // namespace

template <typename T>
T sigmoid(T z) {
    if (z >= T{0}) return T{1} / (T{1} + std::exp(-z));
    const T e = std::exp(z);
    return e / (T{1} + e);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (weight.rank() != 2 || bias.size() != weight.rows() || x.cols() != weight.cols()) {
        throw DimensionError("linear: input " + x.shape_string() + " against weight " +
                             weight.shape_string() + " and bias " + bias.shape_string());
    }
    Tensor<T> y(batched_shape(x, weight.rows()));
    auto ym = as_matrix(y);
    ym.noalias() = as_matrix(x) * as_matrix(weight).transpose();
    const auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        bias.data(), static_cast<Eigen::Index>(bias.size()));
    ym.rowwise() += bv;
    return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     Tensor<T>* dweight, Tensor<T>* dbias, Tensor<T>* dx) {
    if (dy.rows() != x.rows() || dy.cols() != weight.rows()) {
        throw DimensionError("linear backward: upstream " + dy.shape_string() +
                             " against weight " + weight.shape_string());
    }
    const auto g = as_matrix(dy);
    if (dweight) as_matrix(*dweight).noalias() += g.transpose() * as_matrix(x);
    if (dbias) {
        auto bm = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            dbias->data(), static_cast<Eigen::Index>(dbias->size()));
        bm += g.colwise().sum();
    }
    if (dx) as_matrix(*dx).noalias() += g * as_matrix(weight);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& z) {
    Tensor<T> y(z.shape());
    std::transform(z.values().begin(), z.values().end(), y.values().begin(),
                   [](T v) { return sigmoid(v); });
    return y;
}

template <typename T>
void sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dz) {
    require_same_shape(y, dy, "sigmoid backward");
    for (std::size_t i = 0; i < y.size(); ++i) dz[i] += dy[i] * y[i] * (T{1} - y[i]);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng* rng, Tensor<T>* mask) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::eval || rate == 0.0) {
        if (mask) *mask = Tensor<T>();
        return x;
    }
    if (!rng) throw UsageError("dropout in train mode needs a random source");
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> m(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = rng->uniform() < rate ? T{0} : keep_scale;
        y[i] = x[i] * m[i];
    }
    if (mask) *mask = std::move(m);
    return y;
}

template <typename T>
void dropout_backward(const Tensor<T>& mask, const Tensor<T>& dy, Tensor<T>& dx) {
    if (mask.empty()) {
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        return;
    }
    require_same_shape(mask, dy, "dropout backward");
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> parts) {
    if (parts.empty()) throw UsageError("concat needs at least one part");
    const std::size_t rows = parts.front()->rows();
    std::size_t width = 0;
    for (const Tensor<T>* p : parts) {
        if (p->rank() > 2 || p->rows() != rows) {
            throw DimensionError("concat: part " + p->shape_string() + " against " +
                                 parts.front()->shape_string());
        }
        width += p->cols();
    }
    Tensor<T> y(batched_shape(*parts.front(), width));
    for (std::size_t r = 0; r < rows; ++r) {
        auto out = y.row(r).begin();
        for (const Tensor<T>* p : parts) out = std::copy(p->row(r).begin(), p->row(r).end(), out);
    }
    return y;
}

template <typename T>
void concat_backward(const Tensor<T>& dy, std::span<Tensor<T>* const> dparts) {
    std::size_t width = 0;
    for (const Tensor<T>* p : dparts) width += p->cols();
    if (width != dy.cols()) {
        throw DimensionError("concat backward: parts sum to " + std::to_string(width) +
                             " columns, upstream " + dy.shape_string());
    }
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        std::size_t offset = 0;
        const auto g = dy.row(r);
        for (Tensor<T>* p : dparts) {
            auto dst = p->row(r);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g[offset + c];
            offset += dst.size();
        }
    }
}

template <typename T>
Tensor<T> kronecker_fuse(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() > 2 || b.rank() > 2 || a.rank() != b.rank()) {
        throw DimensionError("kronecker_fuse: " + a.shape_string() + " and " + b.shape_string());
    }
    require_rows(a, b, "kronecker_fuse");
    const std::size_t m = a.cols();
    const std::size_t n = b.cols();
    Tensor<T> y(batched_shape(a, (m + 1) * (n + 1)));
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto ar = a.row(r);
        const auto br = b.row(r);
        auto out = y.row(r);
        for (std::size_t i = 0; i <= m; ++i) {
            const T ai = i < m ? ar[i] : T{1};
            T* dst = out.data() + i * (n + 1);
            for (std::size_t j = 0; j < n; ++j) dst[j] = ai * br[j];
            dst[n] = ai;
        }
    }
    return y;
}

template <typename T>
void kronecker_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& dy,
                        Tensor<T>* da, Tensor<T>* db) {
    const std::size_t m = a.cols();
    const std::size_t n = b.cols();
    if (dy.cols() != (m + 1) * (n + 1) || dy.rows() != a.rows()) {
        throw DimensionError("kronecker backward: upstream " + dy.shape_string());
    }
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto ar = a.row(r);
        const auto br = b.row(r);
        const auto g = dy.row(r);
        if (da) {
            auto dar = da->row(r);
            for (std::size_t i = 0; i < m; ++i) {
                const T* gi = g.data() + i * (n + 1);
                T acc = gi[n];
                for (std::size_t j = 0; j < n; ++j) acc += gi[j] * br[j];
                dar[i] += acc;
            }
        }
        if (db) {
            auto dbr = db->row(r);
            for (std::size_t i = 0; i <= m; ++i) {
                const T ai = i < m ? ar[i] : T{1};
                const T* gi = g.data() + i * (n + 1);
                for (std::size_t j = 0; j < n; ++j) dbr[j] += gi[j] * ai;
            }
        }
    }
}

namespace {

// Output row o of a Kronecker block's weight, viewed as (m+1) x (n+1).
template <typename T>
Eigen::Map<const RowMatrix<T>> kron_weight(const Tensor<T>& weight, Eigen::Index o, std::size_t off,
                                           Eigen::Index m, Eigen::Index n) {
    return {weight.data() + static_cast<std::size_t>(o) * weight.cols() + off, m + 1, n + 1};
}

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Row r of the mask as 0/1 values, expanded a byte at a time.
template <typename T>
void expand_row(const BitMask& mask, std::size_t r, RowVec<T>& out) {
    static const auto table = [] {
        std::array<std::array<T, 8>, 256> t{};
        for (std::size_t v = 0; v < 256; ++v) {
            for (std::size_t k = 0; k < 8; ++k) t[v][k] = static_cast<T>((v >> k) & 1U);
        }
        return t;
    }();
    const std::uint64_t* w = mask.words.data() + r * mask.row_words();
    const auto cols = static_cast<std::size_t>(out.size());
    T* dst = out.data();
    std::size_t c = 0;
    for (; c + 8 <= cols; c += 8) {
        std::memcpy(dst + c, table[(w[c / 64] >> (c % 64)) & 0xffU].data(), sizeof(T) * 8);
    }
    for (; c < cols; ++c) dst[c] = static_cast<T>((w[c / 64] >> (c % 64)) & 1U);
}

// [v; 1] for row r of a factor.
template <typename T>
RowVec<T> augmented(const Tensor<T>& t, std::size_t r) {
    RowVec<T> v(static_cast<Eigen::Index>(t.cols() + 1));
    v.head(static_cast<Eigen::Index>(t.cols())) = as_matrix(t).row(static_cast<Eigen::Index>(r));
    v[static_cast<Eigen::Index>(t.cols())] = T{1};
    return v;
}

template <typename T>
std::size_t check_blocks(std::span<const HeadBlock<T>> blocks, const Tensor<T>& weight, const char* what) {
    if (blocks.empty()) throw UsageError(std::string(what) + ": no input blocks");
    std::size_t width = 0;
    const std::size_t rows = blocks[0].a->rows();
    for (const auto& blk : blocks) {
        if (blk.a->rank() != 2 || (blk.b && blk.b->rank() != 2)) {
            throw DimensionError(std::string(what) + ": blocks must be batched matrices");
        }
        if (blk.a->rows() != rows || (blk.b && blk.b->rows() != rows)) {
            throw DimensionError(std::string(what) + ": blocks disagree on the batch size");
        }
        width += blk.width();
    }
    if (weight.rank() != 2 || weight.cols() != width) {
        throw DimensionError(std::string(what) + ": weight " + weight.shape_string() +
                             " for an input of width " + std::to_string(width));
    }
    return width;
}

} // namespace

template <typename T>
Tensor<T> block_dropout_linear(std::span<const HeadBlock<T>> blocks, const Tensor<T>& weight,
                               const Tensor<T>& bias, double rate, Mode mode, Rng* rng,
                               BitMask* mask) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    }
    const std::size_t width = check_blocks(blocks, weight, "block_dropout_linear");
    if (bias.size() != weight.rows()) {
        throw DimensionError("block_dropout_linear: bias " + bias.shape_string() + " for weight " +
                             weight.shape_string());
    }
    const std::size_t rows = blocks[0].a->rows();
    const std::size_t out = weight.rows();
    Tensor<T> y({rows, out});

    BitMask m;
    if (mode == Mode::train && rate > 0.0) {
        if (!rng) throw UsageError("dropout in train mode needs a random source");
        const auto threshold = static_cast<std::uint64_t>(std::ldexp(rate, 32));
        const std::uint64_t stream = rng->next();
        m.rows = rows;
        m.cols = width;
        m.words.resize(rows * m.row_words());
        std::uint64_t counter = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            std::uint64_t* w = m.words.data() + r * m.row_words();
            for (std::size_t k = 0; k < m.row_words(); ++k, counter += 32) {
                std::uint64_t bits = 0;
                for (unsigned t = 0; t < 32; ++t) {
                    const std::uint64_t u = Rng::derive(stream, counter + t);
                    bits |= std::uint64_t{(u & 0xffffffffU) >= threshold} << (2 * t);
                    bits |= std::uint64_t{(u >> 32) >= threshold} << (2 * t + 1);
                }
                w[k] = bits;
            }
            if (width % 64 != 0) w[m.row_words() - 1] &= (std::uint64_t{1} << (width % 64)) - 1;
        }
        const T keep = static_cast<T>(1.0 / (1.0 - rate));
        const auto wm = as_matrix(weight);
        RowVec<T> sc(static_cast<Eigen::Index>(width));
        for (std::size_t r = 0; r < rows; ++r) {
            expand_row(m, r, sc);
            for (std::size_t o = 0; o < out; ++o) {
                const auto wo = wm.row(static_cast<Eigen::Index>(o));
                T acc = 0;
                Eigen::Index off = 0;
                for (const auto& blk : blocks) {
                    const auto a = as_matrix(*blk.a).row(static_cast<Eigen::Index>(r));
                    const Eigen::Index ma = a.size();
                    if (!blk.b) {
                        acc += wo.segment(off, ma).cwiseProduct(sc.segment(off, ma)).dot(a);
                        off += ma;
                        continue;
                    }
                    const RowVec<T> bt = augmented(*blk.b, r);
                    const Eigen::Index nb = bt.size();
                    for (Eigen::Index i = 0; i <= ma; ++i) {
                        const T s_i = wo.segment(off + i * nb, nb).cwiseProduct(sc.segment(off + i * nb, nb)).dot(bt);
                        acc += (i < ma ? a[i] : T{1}) * s_i;
                    }
                    off += (ma + 1) * nb;
                }
                y.data()[r * out + o] = bias[o] + keep * acc;
            }
        }
        if (mask) *mask = std::move(m);
        return y;
    }

    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) y.data()[r * out + o] = bias[o];
    }
    auto ym = as_matrix(y);
    std::size_t off = 0;
    for (const auto& blk : blocks) {
        const auto am = as_matrix(*blk.a);
        const auto wm = as_matrix(weight).middleCols(static_cast<Eigen::Index>(off),
                                                     static_cast<Eigen::Index>(blk.width()));
        if (!blk.b) {
            ym.noalias() += am * wm.transpose();
        } else {
            const auto bm = as_matrix(*blk.b);
            const Eigen::Index mi = am.cols(), ni = bm.cols();
            for (Eigen::Index o = 0; o < static_cast<Eigen::Index>(out); ++o) {
                const auto wo = kron_weight(weight, o, off, mi, ni);
                // t(r, i) = sum_j W[i, j] b~_j
                RowMatrix<T> t = bm * wo.leftCols(ni).transpose();
                t.rowwise() += wo.col(ni).transpose();
                ym.col(o) += am.cwiseProduct(t.leftCols(mi)).rowwise().sum() + t.col(mi);
            }
        }
        off += blk.width();
    }
    if (mask) *mask = std::move(m);
    return y;
}

template <typename T>
void block_dropout_linear_backward(std::span<const HeadBlock<T>> blocks, const Tensor<T>& weight,
                                   double rate, const BitMask& mask, const Tensor<T>& dy,
                                   Tensor<T>* dweight, Tensor<T>* dbias,
                                   std::span<Tensor<T>* const> da, std::span<Tensor<T>* const> db) {
    const std::size_t width = check_blocks(blocks, weight, "block_dropout_linear backward");
    const std::size_t rows = blocks[0].a->rows();
    const std::size_t out = weight.rows();
    if (dy.rows() != rows || dy.cols() != out || da.size() != blocks.size() || db.size() != blocks.size()) {
        throw DimensionError("block_dropout_linear backward: upstream " + dy.shape_string());
    }
    if (!mask.empty() && (mask.rows != rows || mask.cols != width)) {
        throw DimensionError("block_dropout_linear backward: mask does not match the input");
    }
    if (dbias) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out; ++o) (*dbias)[o] += dy.data()[r * out + o];
        }
    }

    if (!mask.empty()) {
        const T keep = static_cast<T>(1.0 / (1.0 - rate));
        const auto wm = as_matrix(weight);
        RowVec<T> sc(static_cast<Eigen::Index>(width));
        for (std::size_t r = 0; r < rows; ++r) {
            expand_row(mask, r, sc);
            for (std::size_t o = 0; o < out; ++o) {
                const T g = keep * dy.data()[r * out + o];
                const auto wo = wm.row(static_cast<Eigen::Index>(o));
                Eigen::Index off = 0;
                for (std::size_t k = 0; k < blocks.size(); ++k) {
                    const auto& blk = blocks[k];
                    const auto a = as_matrix(*blk.a).row(static_cast<Eigen::Index>(r));
                    const Eigen::Index ma = a.size();
                    if (!blk.b) {
                        if (dweight) {
                            as_matrix(*dweight).row(static_cast<Eigen::Index>(o)).segment(off, ma) +=
                                g * sc.segment(off, ma).cwiseProduct(a);
                        }
                        if (da[k]) {
                            as_matrix(*da[k]).row(static_cast<Eigen::Index>(r)) +=
                                g * wo.segment(off, ma).cwiseProduct(sc.segment(off, ma));
                        }
                        off += ma;
                        continue;
                    }
                    const RowVec<T> bt = augmented(*blk.b, r);
                    const Eigen::Index nb = bt.size();
                    RowVec<T> dbt = RowVec<T>::Zero(nb);
                    for (Eigen::Index i = 0; i <= ma; ++i) {
                        const Eigen::Index seg = off + i * nb;
                        const T gai = g * (i < ma ? a[i] : T{1});
                        const auto ws = wo.segment(seg, nb).cwiseProduct(sc.segment(seg, nb));
                        if (dweight) {
                            as_matrix(*dweight).row(static_cast<Eigen::Index>(o)).segment(seg, nb) +=
                                gai * sc.segment(seg, nb).cwiseProduct(bt);
                        }
                        if (da[k] && i < ma) da[k]->data()[r * static_cast<std::size_t>(ma) + static_cast<std::size_t>(i)] += g * ws.dot(bt);
                        if (db[k]) dbt += gai * ws;
                    }
                    if (db[k]) as_matrix(*db[k]).row(static_cast<Eigen::Index>(r)) += dbt.head(nb - 1);
                    off += (ma + 1) * nb;
                }
            }
        }
        return;
    }

    const auto dym = as_matrix(dy);
    std::size_t off = 0;
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        const auto& blk = blocks[k];
        const auto am = as_matrix(*blk.a);
        const auto cols = static_cast<Eigen::Index>(blk.width());
        const auto at = static_cast<Eigen::Index>(off);
        off += blk.width();
        if (!blk.b) {
            if (dweight) as_matrix(*dweight).middleCols(at, cols).noalias() += dym.transpose() * am;
            if (da[k]) as_matrix(*da[k]).noalias() += dym * as_matrix(weight).middleCols(at, cols);
            continue;
        }
        const auto bm = as_matrix(*blk.b);
        const Eigen::Index mi = am.cols(), ni = bm.cols();
        for (Eigen::Index o = 0; o < static_cast<Eigen::Index>(out); ++o) {
            const auto wo = kron_weight(weight, o, at, mi, ni);
            const auto g = dym.col(o);
            // a~ with each row scaled by its upstream gradient
            RowMatrix<T> ag(am.rows(), mi + 1);
            ag.leftCols(mi) = g.asDiagonal() * am;
            ag.col(mi) = g;
            if (dweight) {
                Eigen::Map<RowMatrix<T>> dwo(dweight->data() + static_cast<std::size_t>(o) * width + static_cast<std::size_t>(at),
                                             mi + 1, ni + 1);
                dwo.leftCols(ni).noalias() += ag.transpose() * bm;
                dwo.col(ni) += ag.colwise().sum().transpose();
            }
            if (da[k]) {
                RowMatrix<T> t = bm * wo.leftCols(ni).topRows(mi).transpose();
                t.rowwise() += wo.col(ni).head(mi).transpose();
                as_matrix(*da[k]) += g.asDiagonal() * t;
            }
            if (db[k]) as_matrix(*db[k]).noalias() += ag * wo.leftCols(ni);
        }
    }
}

template <typename T>
Tensor<T> gated_sum_pool(const BagBatch<T>& bags, const Tensor<T>& weight,
                         const Tensor<T>& bias, Tensor<T>* gates) {
    const std::size_t d = bags.patches.cols();
    if (weight.rank() != 2 || weight.rows() != d || weight.cols() != d || bias.size() != d) {
        throw DimensionError("gated_sum_pool: patches " + bags.patches.shape_string() +
                             " against gate weight " + weight.shape_string());
    }
    if (bags.offsets.empty() || bags.offsets.front() != 0 ||
        bags.offsets.back() != bags.patches.rows()) {
        throw DimensionError("gated_sum_pool: bag offsets do not cover " +
                             bags.patches.shape_string());
    }
    for (std::size_t b = 0; b < bags.batch_size(); ++b) {
        if (bags.offsets[b + 1] <= bags.offsets[b]) {
            throw UsageError("gated_sum_pool: bag " + std::to_string(b) + " is empty");
        }
    }
    Tensor<T> a = linear(bags.patches, weight, bias);
    for (T& v : a.values()) v = sigmoid(v);

    Tensor<T> y = Tensor<T>::matrix(bags.batch_size(), d);
    const auto am = as_matrix(a);
    const auto xm = as_matrix(bags.patches);
    auto ym = as_matrix(y);
    for (std::size_t b = 0; b < bags.batch_size(); ++b) {
        const auto lo = static_cast<Eigen::Index>(bags.offsets[b]);
        const auto k = static_cast<Eigen::Index>(bags.bag_rows(b));
        ym.row(static_cast<Eigen::Index>(b)) =
            am.middleRows(lo, k).cwiseProduct(xm.middleRows(lo, k)).colwise().sum();
    }
    if (gates) *gates = std::move(a);
    return y;
}

template <typename T>
void gated_sum_pool_backward(const BagBatch<T>& bags, const Tensor<T>& gates,
                             const Tensor<T>& weight, const Tensor<T>& dy,
                             Tensor<T>* dweight, Tensor<T>* dbias, Tensor<T>* dpatches) {
    const std::size_t d = bags.patches.cols();
    if (dy.rows() != bags.batch_size() || dy.cols() != d) {
        throw DimensionError("gated_sum_pool backward: upstream " + dy.shape_string());
    }
    const auto xm = as_matrix(bags.patches);
    const auto am = as_matrix(gates);
    const auto gm = as_matrix(dy);
    // dZ = (dy_b (.) x_k) (.) a_k (1 - a_k), rows aligned with patches
    RowMatrix<T> dz(xm.rows(), xm.cols());
    for (std::size_t b = 0; b < bags.batch_size(); ++b) {
        const auto lo = static_cast<Eigen::Index>(bags.offsets[b]);
        const auto k = static_cast<Eigen::Index>(bags.bag_rows(b));
        const auto g = gm.row(static_cast<Eigen::Index>(b));
        for (Eigen::Index r = lo; r < lo + k; ++r) {
            dz.row(r) = g.cwiseProduct(xm.row(r))
                            .cwiseProduct(am.row(r))
                            .cwiseProduct((T{1} - am.row(r).array()).matrix());
        }
        if (dpatches) {
            auto dp = as_matrix(*dpatches);
            for (Eigen::Index r = lo; r < lo + k; ++r) dp.row(r) += g.cwiseProduct(am.row(r));
        }
    }
    if (dweight) as_matrix(*dweight).noalias() += dz.transpose() * xm;
    if (dbias) {
        auto bm = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(
            dbias->data(), static_cast<Eigen::Index>(dbias->size()));
        bm += dz.colwise().sum();
    }
    if (dpatches) as_matrix(*dpatches).noalias() += dz * as_matrix(weight);
}

template <typename T>
double bce_loss(const Tensor<T>& p, std::span<const int> labels) {
    if (p.size() != labels.size()) {
        throw DimensionError("bce_loss: " + std::to_string(p.size()) + " probabilities vs " +
                             std::to_string(labels.size()) + " labels");
    }
    check_labels(labels);
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(static_cast<double>(p[i]), kBceClamp, 1.0 - kBceClamp);
        total -= labels[i] == 1 ? std::log(q) : std::log1p(-q);
    }
    return total / static_cast<double>(p.size());
}

template <typename T>
Tensor<T> bce_grad(const Tensor<T>& p, std::span<const int> labels) {
    if (p.size() != labels.size()) {
        throw DimensionError("bce_grad: " + std::to_string(p.size()) + " probabilities vs " +
                             std::to_string(labels.size()) + " labels");
    }
    check_labels(labels);
    Tensor<T> g(p.shape());
    const double n = static_cast<double>(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(static_cast<double>(p[i]), kBceClamp, 1.0 - kBceClamp);
        const double d = labels[i] == 1 ? -1.0 / q : 1.0 / (1.0 - q);
        g[i] = static_cast<T>(d / n);
    }
    return g;
}

template <typename T>
double mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
    require_same_shape(prediction, target, "mse_loss");
    if (prediction.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double e = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
        total += e * e;
    }
    return total / static_cast<double>(prediction.size());
}

template <typename T>
Tensor<T> mse_grad(const Tensor<T>& prediction, const Tensor<T>& target) {
    require_same_shape(prediction, target, "mse_grad");
    Tensor<T> g(prediction.shape());
    const T scale = static_cast<T>(2.0 / static_cast<double>(prediction.size()));
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        g[i] = scale * (prediction[i] - target[i]);
    }
    return g;
}

#define FUSIONBENCH_INSTANTIATE_LAYERS(T)                                                     \
    template T sigmoid<T>(T);                                                                 \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
    template void linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                     Tensor<T>*, Tensor<T>*, Tensor<T>*);                     \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                          \
    template void sigmoid_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);        \
    template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng*, Tensor<T>*);          \
    template void dropout_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);        \
    template Tensor<T> concat<T>(std::span<const Tensor<T>* const>);                          \
    template void concat_backward<T>(const Tensor<T>&, std::span<Tensor<T>* const>);          \
    template Tensor<T> kronecker_fuse<T>(const Tensor<T>&, const Tensor<T>&);                 \
    template void kronecker_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        Tensor<T>*, Tensor<T>*);                              \
    template Tensor<T> block_dropout_linear<T>(std::span<const HeadBlock<T>>, const Tensor<T>&,      \
                                               const Tensor<T>&, double, Mode, Rng*, BitMask*);   \
    template void block_dropout_linear_backward<T>(std::span<const HeadBlock<T>>, const Tensor<T>&, \
                                                   double, const BitMask&, const Tensor<T>&,       \
                                                   Tensor<T>*, Tensor<T>*,                          \
                                                   std::span<Tensor<T>* const>,                     \
                                                   std::span<Tensor<T>* const>);                    \
    template Tensor<T> gated_sum_pool<T>(const BagBatch<T>&, const Tensor<T>&,                \
                                         const Tensor<T>&, Tensor<T>*);                       \
    template void gated_sum_pool_backward<T>(const BagBatch<T>&, const Tensor<T>&,            \
                                             const Tensor<T>&, const Tensor<T>&, Tensor<T>*,  \
                                             Tensor<T>*, Tensor<T>*);                         \
    template double bce_loss<T>(const Tensor<T>&, std::span<const int>);                      \
    template Tensor<T> bce_grad<T>(const Tensor<T>&, std::span<const int>);                   \
    template double mse_loss<T>(const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> mse_grad<T>(const Tensor<T>&, const Tensor<T>&);

FUSIONBENCH_INSTANTIATE_LAYERS(float)
FUSIONBENCH_INSTANTIATE_LAYERS(double)

#undef FUSIONBENCH_INSTANTIATE_LAYERS

} // namespace fusionbench::layers
