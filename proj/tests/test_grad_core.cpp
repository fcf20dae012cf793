#include "doctest.h"
#include "oracles.hpp"

#include "fusionbench/grad_check.hpp"
#include "fusionbench/graph.hpp"
#include "fusionbench/layers.hpp"

#include <array>
#include <cmath>
#include <numbers>

using namespace fusionbench;
using TensorD = Tensor<double>;

namespace {

TensorD random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    for (auto& v : t.values()) v = scale * rng.normal();
    return t;
}

std::vector<double> flat(const TensorD& t) { return {t.values().begin(), t.values().end()}; }

TensorD with_values(const TensorD& like, const std::vector<double>& v) { return TensorD(like.shape(), v); }

// Weighted sum loss sum_i c_i y_i, so every output element gets a distinct gradient.
double weighted_sum(const TensorD& y, const TensorD& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
}

BagBatch<double> make_bags(const std::vector<std::size_t>& ks, std::size_t width, Rng& rng) {
    BagBatch<double> bags;
    bags.offsets.push_back(0);
    std::size_t total = 0;
    for (std::size_t k : ks) {
        total += k;
        bags.offsets.push_back(total);
    }
    bags.patches = random_tensor({total, width}, rng);
    return bags;
}

} // namespace

TEST_CASE("tensor rejects data that does not match its shape") {
    CHECK_THROWS_AS(TensorD({2, 3}, std::vector<double>(5)), DimensionError);
    const TensorD t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.at(1, 2) == 6);
    CHECK(TensorD::vector({1, 2}).rows() == 1);
}

TEST_CASE("rng streams are reproducible and in range") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r.below(7) < 7);
    }
    CHECK(Rng::derive(1, 0) != Rng::derive(1, 1));
    CHECK(Rng::derive(1, 0) != Rng::derive(2, 0));
    CHECK(Rng::derive(5, 3) == Rng::derive(5, 3));
}

TEST_CASE("linear forward examples") {
    const TensorD eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    const TensorD y = layers::linear(TensorD::vector({3, -1}), eye, TensorD::vector({0, 0}));
    CHECK(y[0] == 3.0);
    CHECK(y[1] == -1.0);

    const TensorD w({1, 2}, std::vector<double>{1, 1});
    const TensorD y2 = layers::linear(TensorD::vector({2, 3}), w, TensorD::vector({0.5}));
    CHECK(y2.size() == 1);
    CHECK(y2[0] == 5.5);
}

TEST_CASE("linear shape mismatch names both shapes") {
    const TensorD w({1, 3});
    try {
        (void)layers::linear(TensorD::vector({1, 2}), w, TensorD::vector({0}));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2]") != std::string::npos);
        CHECK(msg.find("[1x3]") != std::string::npos);
    }
}

TEST_CASE("linear weight gradient of sum(y) is the input") {
    const TensorD x = TensorD::vector({1, 2});
    const TensorD w({1, 2}, std::vector<double>{0.3, -0.7});
    TensorD dw({1, 2});
    TensorD db({1});
    layers::linear_backward(x, w, TensorD::vector({1.0}), &dw, &db, static_cast<TensorD*>(nullptr));
    CHECK(dw[0] == doctest::Approx(1.0));
    CHECK(dw[1] == doctest::Approx(2.0));
    CHECK(db[0] == doctest::Approx(1.0));

    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& wv) {
            return layers::linear(x, with_values(w, wv), TensorD::vector({0.0}))[0];
        },
        flat(w));
    CHECK(oracle::max_relative_error(flat(dw), numeric) < 1e-6);
}

TEST_CASE("linear backward matches finite differences for W, b and x") {
    Rng rng(1);
    const TensorD x = random_tensor({4, 5}, rng);
    const TensorD w = random_tensor({3, 5}, rng);
    const TensorD b = random_tensor({3}, rng);
    const TensorD c = random_tensor({4, 3}, rng);
    TensorD dw({3, 5});
    TensorD db({3});
    TensorD dx({4, 5});
    layers::linear_backward(x, w, c, &dw, &db, &dx);

    auto f_w = [&](const std::vector<double>& v) { return weighted_sum(layers::linear(x, with_values(w, v), b), c); };
    auto f_b = [&](const std::vector<double>& v) { return weighted_sum(layers::linear(x, w, with_values(b, v)), c); };
    auto f_x = [&](const std::vector<double>& v) { return weighted_sum(layers::linear(with_values(x, v), w, b), c); };
    CHECK(oracle::max_relative_error(flat(dw), oracle::numeric_gradient(f_w, flat(w))) < 1e-6);
    CHECK(oracle::max_relative_error(flat(db), oracle::numeric_gradient(f_b, flat(b))) < 1e-6);
    CHECK(oracle::max_relative_error(flat(dx), oracle::numeric_gradient(f_x, flat(x))) < 1e-6);
}

TEST_CASE("sigmoid values, saturation and derivative") {
    CHECK(layers::sigmoid(0.0) == 0.5);
    const double s50 = layers::sigmoid(50.0);
    CHECK(s50 <= 1.0);
    CHECK(1.0 - s50 < 1e-20);
    for (double z : {-1e4, -800.0, -50.0, 50.0, 800.0, 1e4}) {
        const double s = layers::sigmoid(z);
        CHECK(std::isfinite(s));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
    const TensorD y = layers::sigmoid(TensorD::vector({0.0}));
    TensorD dz({1});
    layers::sigmoid_backward(y, TensorD::vector({1.0}), dz);
    CHECK(dz[0] == 0.25);
}

TEST_CASE("sigmoid backward matches finite differences") {
    Rng rng(2);
    const TensorD z = random_tensor({3, 4}, rng, 2.0);
    const TensorD c = random_tensor({3, 4}, rng);
    TensorD dz({3, 4});
    layers::sigmoid_backward(layers::sigmoid(z), c, dz);
    auto f = [&](const std::vector<double>& v) { return weighted_sum(layers::sigmoid(with_values(z, v)), c); };
    CHECK(oracle::max_relative_error(flat(dz), oracle::numeric_gradient(f, flat(z))) < 1e-6);
}

TEST_CASE("dropout in eval mode and at rate 0 is the identity") {
    Rng rng(3);
    const TensorD x = random_tensor({5, 7}, rng);
    TensorD mask;
    CHECK(layers::dropout(x, 0.9, Mode::eval, &rng, &mask) == x);
    CHECK(mask.empty());
    CHECK(layers::dropout(x, 0.0, Mode::train, &rng, &mask) == x);
}

TEST_CASE("dropout rejects rates outside [0, 1)") {
    Rng rng(4);
    const TensorD x({3}, 1.0);
    TensorD mask;
    CHECK_THROWS_AS(layers::dropout(x, 1.0, Mode::train, &rng, &mask), ConfigError);
    CHECK_THROWS_AS(layers::dropout(x, 1.5, Mode::train, &rng, &mask), ConfigError);
    CHECK_THROWS_AS(layers::dropout(x, -0.1, Mode::train, &rng, &mask), ConfigError);
}

TEST_CASE("dropout at rate 0.9 keeps about a tenth and preserves the mean") {
    Rng rng(5);
    const std::size_t n = 100000;
    const TensorD x({n}, 1.0);
    TensorD mask;
    const TensorD y = layers::dropout(x, 0.9, Mode::train, &rng, &mask);
    std::size_t survivors = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (y[i] != 0.0) {
            ++survivors;
            CHECK(y[i] == doctest::Approx(10.0));
        }
        sum += y[i];
    }
    const double frac = double(survivors) / double(n);
    CHECK(frac > 0.09);
    CHECK(frac < 0.11);
    // each output has mean 1 and variance rate / (1 - rate) = 9
    const double se = std::sqrt(9.0 / double(n));
    CHECK(std::abs(sum / double(n) - 1.0) < 3.0 * se);

    TensorD dx({n});
    const TensorD up({n}, 1.0);
    layers::dropout_backward(mask, up, dx);
    for (std::size_t i = 0; i < n; ++i) CHECK_EQ(dx[i], y[i]);
}

TEST_CASE("concat examples and errors") {
    const TensorD a = TensorD::vector({1, 2});
    const TensorD b = TensorD::vector({3});
    std::array<const TensorD*, 2> parts{&a, &b};
    const TensorD y = layers::concat<double>(parts);
    CHECK(flat(y) == std::vector<double>{1, 2, 3});

    std::array<const TensorD*, 1> one{&a};
    CHECK(layers::concat<double>(one) == a);

    CHECK_THROWS_AS(layers::concat<double>(std::span<const TensorD* const>{}), UsageError);
}

TEST_CASE("concat offsets follow the per-element index map") {
    Rng rng(6);
    const TensorD a = random_tensor({2, 128}, rng);
    const TensorD b = random_tensor({2, 32}, rng);
    const TensorD c = random_tensor({2, 160}, rng);
    std::array<const TensorD*, 3> parts{&a, &b, &c};
    const TensorD y = layers::concat<double>(parts);
    REQUIRE(y.cols() == 320);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t j = 0; j < 320; ++j) {
            const double expect = j < 128 ? a.at(r, j) : j < 160 ? b.at(r, j - 128) : c.at(r, j - 160);
            CHECK_EQ(y.at(r, j), expect);
        }
    }
    // backward splits the upstream gradient bit-exactly
    TensorD da({2, 128});
    TensorD db({2, 32});
    TensorD dc({2, 160});
    std::array<TensorD*, 3> dparts{&da, &db, &dc};
    layers::concat_backward<double>(y, dparts);
    CHECK(da == a);
    CHECK(db == b);
    CHECK(dc == c);
}

TEST_CASE("kronecker fuse examples") {
    const TensorD y = layers::kronecker_fuse(TensorD::vector({1, 2}), TensorD::vector({3}));
    CHECK(flat(y) == std::vector<double>{3, 1, 6, 2, 3, 1});

    const TensorD z = layers::kronecker_fuse(TensorD({4}, 0.0), TensorD({3}, 0.0));
    REQUIRE(z.size() == 20);
    for (std::size_t i = 0; i + 1 < z.size(); ++i) CHECK(z[i] == 0.0);
    CHECK(z[19] == 1.0);
}

TEST_CASE("kronecker gradient of sum(output) w.r.t. the first vector") {
    const TensorD a = TensorD::vector({1, 2});
    const TensorD b = TensorD::vector({3});
    TensorD da({2});
    TensorD db({1});
    layers::kronecker_backward(a, b, TensorD({6}, 1.0), &da, &db);
    CHECK(da[0] == doctest::Approx(4.0));
    CHECK(da[1] == doctest::Approx(4.0));
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& v) {
            const TensorD y = layers::kronecker_fuse(TensorD::vector(v), b);
            double s = 0.0;
            for (double e : y.values()) s += e;
            return s;
        },
        flat(a));
    CHECK(oracle::max_relative_error(flat(da), numeric) < 1e-6);
}

TEST_CASE("kronecker batch shape and finite-difference gradients") {
    Rng rng(7);
    const TensorD a = random_tensor({3, 4}, rng);
    const TensorD b = random_tensor({3, 2}, rng);
    const TensorD y = layers::kronecker_fuse(a, b);
    REQUIRE(y.rows() == 3);
    REQUIRE(y.cols() == 15);
    for (std::size_t r = 0; r < 3; ++r) CHECK(y.at(r, 14) == 1.0);
    const TensorD c = random_tensor({3, 15}, rng);
    TensorD da({3, 4});
    TensorD db({3, 2});
    layers::kronecker_backward(a, b, c, &da, &db);
    auto fa = [&](const std::vector<double>& v) { return weighted_sum(layers::kronecker_fuse(with_values(a, v), b), c); };
    auto fb = [&](const std::vector<double>& v) { return weighted_sum(layers::kronecker_fuse(a, with_values(b, v)), c); };
    CHECK(oracle::max_relative_error(flat(da), oracle::numeric_gradient(fa, flat(a))) < 1e-6);
    CHECK(oracle::max_relative_error(flat(db), oracle::numeric_gradient(fb, flat(b))) < 1e-6);
}

namespace {

// Mixed dense and Kronecker blocks over a batch of 3.
struct BlockFixture {
    TensorD a1, b1, d, a2, b2;
    explicit BlockFixture(Rng& rng)
        : a1(random_tensor({3, 4}, rng)), b1(random_tensor({3, 2}, rng)), d(random_tensor({3, 5}, rng)),
          a2(random_tensor({3, 3}, rng)), b2(random_tensor({3, 3}, rng)) {}

    std::vector<layers::HeadBlock<double>> blocks() const {
        return {{&a1, &b1}, {&d, nullptr}, {&a2, &b2}};
    }
    // The concatenated input the block head stands for.
    TensorD explicit_input() const {
        const TensorD k1 = layers::kronecker_fuse(a1, b1);
        const TensorD k2 = layers::kronecker_fuse(a2, b2);
        std::array<const TensorD*, 3> parts{&k1, &d, &k2};
        return layers::concat<double>(parts);
    }
};

} // namespace

TEST_CASE("block head in eval mode equals linear over the explicit fused input") {
    Rng rng(40);
    const BlockFixture f(rng);
    const TensorD x = f.explicit_input();
    REQUIRE(x.cols() == 15 + 5 + 16);
    const TensorD w = random_tensor({2, 36}, rng);
    const TensorD b = random_tensor({2}, rng);
    const auto blocks = f.blocks();
    layers::BitMask mask;
    const TensorD y = layers::block_dropout_linear<double>(blocks, w, b, 0.9, Mode::eval, nullptr, &mask);
    const TensorD ref = layers::linear(x, w, b);
    CHECK(mask.empty());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("block head in train mode applies its mask as inverted dropout") {
    Rng rng(41);
    const BlockFixture f(rng);
    const TensorD x = f.explicit_input();
    const TensorD w = random_tensor({1, 36}, rng);
    const TensorD b = random_tensor({1}, rng);
    const auto blocks = f.blocks();
    Rng drop(5);
    layers::BitMask mask;
    const TensorD y = layers::block_dropout_linear<double>(blocks, w, b, 0.5, Mode::train, &drop, &mask);
    REQUIRE(mask.rows == 3);
    REQUIRE(mask.cols == 36);
    TensorD masked = x;
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 36; ++c) masked.row(r)[c] *= mask.kept(r, c) ? 2.0 : 0.0;
    }
    const TensorD ref = layers::linear(masked, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK_THROWS_AS(layers::block_dropout_linear<double>(blocks, w, b, 0.5, Mode::train, nullptr, nullptr),
                    UsageError);
    CHECK_THROWS_AS(layers::block_dropout_linear<double>(blocks, TensorD({1, 35}), b, 0.5, Mode::eval, nullptr,
                                                         nullptr),
                    DimensionError);
}

TEST_CASE("block head keeps about a tenth of a wide input at rate 0.9") {
    Rng rng(42);
    const TensorD a = random_tensor({4, 128}, rng);
    const TensorD c = random_tensor({4, 448}, rng);
    const std::vector<layers::HeadBlock<double>> blocks{{&a, &c}};
    const TensorD w({1, 129 * 449}, 0.0);
    Rng drop(6);
    layers::BitMask mask;
    (void)layers::block_dropout_linear<double>(blocks, w, TensorD({1}), 0.9, Mode::train, &drop, &mask);
    std::size_t kept = 0;
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t k = 0; k < mask.cols; ++k) kept += mask.kept(r, k);
    }
    const double frac = double(kept) / double(4 * mask.cols);
    CHECK(frac == doctest::Approx(0.1).epsilon(0.03));
}

TEST_CASE("block head backward matches finite differences with a fixed mask") {
    Rng rng(43);
    BlockFixture f(rng);
    const TensorD w = random_tensor({2, 36}, rng);
    const TensorD b = random_tensor({2}, rng);
    const TensorD c = random_tensor({3, 2}, rng);
    const auto run = [&](const BlockFixture& ff, const TensorD& ww, const TensorD& bb, layers::BitMask* mask) {
        Rng drop(9);
        const auto blocks = ff.blocks();
        return layers::block_dropout_linear<double>(blocks, ww, bb, 0.5, Mode::train, &drop, mask);
    };
    layers::BitMask mask;
    (void)run(f, w, b, &mask);
    TensorD dw({2, 36}), db({2});
    TensorD da1({3, 4}), db1({3, 2}), dd({3, 5}), da2({3, 3}), db2({3, 3});
    const std::array<TensorD*, 3> da{&da1, &dd, &da2};
    const std::array<TensorD*, 3> dbs{&db1, nullptr, &db2};
    const auto blocks = f.blocks();
    layers::block_dropout_linear_backward<double>(blocks, w, 0.5, mask, c, &dw, &db, da, dbs);

    auto fw = [&](const std::vector<double>& v) { return weighted_sum(run(f, with_values(w, v), b, nullptr), c); };
    auto fb = [&](const std::vector<double>& v) { return weighted_sum(run(f, w, with_values(b, v), nullptr), c); };
    CHECK(oracle::max_relative_error(flat(dw), oracle::numeric_gradient(fw, flat(w))) < 1e-6);
    CHECK(oracle::max_relative_error(flat(db), oracle::numeric_gradient(fb, flat(b))) < 1e-6);
    for (auto [member, grad] : std::array<std::pair<TensorD BlockFixture::*, TensorD*>, 5>{
             {{&BlockFixture::a1, &da1}, {&BlockFixture::b1, &db1}, {&BlockFixture::d, &dd},
              {&BlockFixture::a2, &da2}, {&BlockFixture::b2, &db2}}}) {
        auto fx = [&, member = member](const std::vector<double>& v) {
            BlockFixture g = f;
            g.*member = with_values(f.*member, v);
            return weighted_sum(run(g, w, b, nullptr), c);
        };
        CHECK(oracle::max_relative_error(flat(*grad), oracle::numeric_gradient(fx, flat(f.*member))) < 1e-6);
    }
}

TEST_CASE("gated sum pool with an open gate returns the single patch") {
    Rng rng(8);
    auto bags = make_bags({1}, 128, rng);
    const TensorD w({128, 128}, 0.0);
    const TensorD b({128}, 40.0);
    const TensorD y = layers::gated_sum_pool(bags, w, b, static_cast<TensorD*>(nullptr));
    REQUIRE(y.cols() == 128);
    for (std::size_t j = 0; j < 128; ++j) CHECK(std::abs(y[j] - bags.patches[j]) < 1e-6);
}

TEST_CASE("gated sum pool doubles for a duplicated patch") {
    Rng rng(9);
    auto one = make_bags({1}, 8, rng);
    BagBatch<double> two;
    two.offsets = {0, 2};
    two.patches = TensorD({2, 8});
    for (std::size_t j = 0; j < 8; ++j) two.patches.at(0, j) = two.patches.at(1, j) = one.patches[j];
    const TensorD w = random_tensor({8, 8}, rng);
    const TensorD b = random_tensor({8}, rng);
    const TensorD y1 = layers::gated_sum_pool(one, w, b, static_cast<TensorD*>(nullptr));
    const TensorD y2 = layers::gated_sum_pool(two, w, b, static_cast<TensorD*>(nullptr));
    for (std::size_t j = 0; j < 8; ++j) CHECK_EQ(y2[j], 2.0 * y1[j]);
}

TEST_CASE("gated sum pool equals the explicit per-patch loop") {
    Rng rng(10);
    const std::size_t d = 128;
    auto bags = make_bags({5, 2}, d, rng);
    const TensorD w = random_tensor({d, d}, rng, 0.1);
    const TensorD b = random_tensor({d}, rng);
    const TensorD y = layers::gated_sum_pool(bags, w, b, static_cast<TensorD*>(nullptr));
    REQUIRE(y.rows() == 2);
    for (std::size_t bag = 0; bag < 2; ++bag) {
        std::vector<double> expect(d, 0.0);
        for (std::size_t k = bags.offsets[bag]; k < bags.offsets[bag + 1]; ++k) {
            for (std::size_t o = 0; o < d; ++o) {
                double z = b[o];
                for (std::size_t i = 0; i < d; ++i) z += w.at(o, i) * bags.patches.at(k, i);
                expect[o] += oracle::logistic(z) * bags.patches.at(k, o);
            }
        }
        for (std::size_t o = 0; o < d; ++o) CHECK(y.at(bag, o) == doctest::Approx(expect[o]).epsilon(1e-12));
    }
}

TEST_CASE("gated sum pool is invariant to patch order") {
    Rng rng(11);
    auto bags = make_bags({6}, 16, rng);
    const TensorD w = random_tensor({16, 16}, rng, 0.3);
    const TensorD b = random_tensor({16}, rng);
    const TensorD y = layers::gated_sum_pool(bags, w, b, static_cast<TensorD*>(nullptr));
    std::vector<std::size_t> order{3, 0, 5, 1, 4, 2};
    BagBatch<double> shuffled = bags;
    for (std::size_t r = 0; r < 6; ++r) {
        for (std::size_t j = 0; j < 16; ++j) shuffled.patches.at(r, j) = bags.patches.at(order[r], j);
    }
    const TensorD ys = layers::gated_sum_pool(shuffled, w, b, static_cast<TensorD*>(nullptr));
    for (std::size_t j = 0; j < 16; ++j) CHECK(std::abs(y[j] - ys[j]) <= 1e-6);
}

TEST_CASE("gated sum pool rejects an empty bag") {
    BagBatch<double> bags;
    bags.offsets = {0, 2, 2};
    bags.patches = TensorD({2, 4}, 1.0);
    CHECK_THROWS_AS(layers::gated_sum_pool(bags, TensorD({4, 4}), TensorD({4}), static_cast<TensorD*>(nullptr)),
                    UsageError);
}

TEST_CASE("gated sum pool backward matches finite differences") {
    Rng rng(12);
    auto bags = make_bags({3, 1, 2}, 5, rng);
    const TensorD w = random_tensor({5, 5}, rng, 0.5);
    const TensorD b = random_tensor({5}, rng);
    const TensorD c = random_tensor({3, 5}, rng);
    TensorD gates;
    (void)layers::gated_sum_pool(bags, w, b, &gates);
    TensorD dw({5, 5});
    TensorD db({5});
    TensorD dp(bags.patches.shape());
    layers::gated_sum_pool_backward(bags, gates, w, c, &dw, &db, &dp);

    auto pool = [&](const BagBatch<double>& bb, const TensorD& ww, const TensorD& bv) {
        return weighted_sum(layers::gated_sum_pool(bb, ww, bv, static_cast<TensorD*>(nullptr)), c);
    };
    auto fw = [&](const std::vector<double>& v) { return pool(bags, with_values(w, v), b); };
    auto fb = [&](const std::vector<double>& v) { return pool(bags, w, with_values(b, v)); };
    auto fp = [&](const std::vector<double>& v) {
        BagBatch<double> bb = bags;
        bb.patches = with_values(bags.patches, v);
        return pool(bb, w, b);
    };
    CHECK(oracle::max_relative_error(flat(dw), oracle::numeric_gradient(fw, flat(w))) < 1e-6);
    CHECK(oracle::max_relative_error(flat(db), oracle::numeric_gradient(fb, flat(b))) < 1e-6);
    CHECK(oracle::max_relative_error(flat(dp), oracle::numeric_gradient(fp, flat(bags.patches))) < 1e-6);
}

TEST_CASE("bce loss examples") {
    const std::vector<int> one{1};
    const std::vector<int> zero{0};
    // the clamp floor is -ln(1 - 1e-7) = 1e-7 + 5e-15
    const double floor = -std::log1p(-kBceClamp);
    CHECK(layers::bce_loss(TensorD::vector({1.0}), one) <= floor);
    CHECK(layers::bce_loss(TensorD::vector({1.0}), one) < 1e-7 * (1.0 + 1e-6));
    CHECK(layers::bce_loss(TensorD::vector({0.5}), one) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK(layers::bce_loss(TensorD::vector({0.5}), zero) == doctest::Approx(std::numbers::ln2).epsilon(1e-12));
    CHECK(layers::bce_grad(TensorD::vector({0.8}), one)[0] == doctest::Approx(-1.25));
    const std::vector<int> bad{2};
    CHECK_THROWS_AS(layers::bce_loss(TensorD::vector({0.5}), bad), DataError);
    CHECK_THROWS_AS(layers::bce_grad(TensorD::vector({0.5}), bad), DataError);
}

TEST_CASE("bce loss is non-negative and its gradient matches finite differences") {
    Rng rng(13);
    std::vector<double> p(20);
    std::vector<int> y(20);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = rng.uniform(0.01, 0.99);
        y[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    for (double edge : {0.0, 1.0}) {
        CHECK(layers::bce_loss(TensorD::vector({edge}), std::vector<int>{0}) >= 0.0);
        CHECK(layers::bce_loss(TensorD::vector({edge}), std::vector<int>{1}) >= 0.0);
    }
    const TensorD pt = TensorD::vector(p);
    CHECK(layers::bce_loss(pt, y) > 0.0);
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& v) { return layers::bce_loss(TensorD::vector(v), y); }, p, 1e-7);
    CHECK(oracle::max_relative_error(flat(layers::bce_grad(pt, y)), numeric) < 1e-6);
}

TEST_CASE("mse loss examples and gradient") {
    const TensorD x = TensorD::vector({1, -2, 3, 0.5, 4, -1});
    TensorD shifted = x;
    for (auto& v : shifted.values()) v += 1.0;
    CHECK(layers::mse_loss(x, x) == 0.0);
    CHECK(layers::mse_loss(shifted, x) == doctest::Approx(1.0));
    const TensorD g = layers::mse_grad(shifted, x);
    for (std::size_t i = 0; i < 6; ++i) CHECK(g[i] == doctest::Approx(2.0 / 6.0));

    Rng rng(14);
    const TensorD pred = random_tensor({3, 6}, rng);
    const TensorD target = random_tensor({3, 6}, rng);
    const auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& v) { return layers::mse_loss(with_values(pred, v), target); }, flat(pred));
    CHECK(oracle::max_relative_error(flat(layers::mse_grad(pred, target)), numeric) < 1e-6);
    CHECK_THROWS_AS(layers::mse_loss(TensorD({5}), TensorD({6})), DimensionError);
}

TEST_CASE("grad_check on a linear, sigmoid, BCE micrograph") {
    LayerGraph<double> g;
    const NodeId x = g.add_input("x", 4);
    const NodeId z = g.add_linear(x, 1, "head", "g");
    const NodeId p = g.add_sigmoid(z, "head.sigmoid");
    Rng rng(15);
    g.init_params(rng);
    g.param("head.bias").value[0] = 0.3;
    g.set_input(x, random_tensor({6, 4}, rng));
    const std::vector<int> labels{1, 0, 0, 1, 1, 0};
    const auto report = grad_check(g, [&](const LayerGraph<double>& graph) {
        LossEvaluation e;
        e.value = layers::bce_loss(graph.value(p), labels);
        e.seeds.emplace_back(p, layers::bce_grad(graph.value(p), labels));
        return e;
    });
    CHECK(report.checked == 5);
    CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("grad_check on kronecker fusion with a linear head") {
    LayerGraph<double> g;
    const NodeId a = g.add_input("a", 3);
    const NodeId b = g.add_input("b", 2);
    const NodeId ea = g.add_linear(a, 3, "enc_a", "f_i");
    const NodeId eb = g.add_linear(b, 2, "enc_b", "f_c");
    const NodeId k = g.add_kronecker(ea, eb, "fuse");
    const NodeId z = g.add_linear(k, 1, "head", "g");
    const NodeId p = g.add_sigmoid(z, "head.sigmoid");
    Rng rng(16);
    g.init_params(rng);
    g.set_input(a, random_tensor({4, 3}, rng));
    g.set_input(b, random_tensor({4, 2}, rng));
    const std::vector<int> labels{1, 0, 1, 0};
    const auto report = grad_check(g, [&](const LayerGraph<double>& graph) {
        LossEvaluation e;
        e.value = layers::bce_loss(graph.value(p), labels);
        e.seeds.emplace_back(p, layers::bce_grad(graph.value(p), labels));
        return e;
    });
    CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("grad_check reports a non-finite loss") {
    LayerGraph<double> g;
    const NodeId x = g.add_input("x", 2);
    const NodeId z = g.add_linear(x, 1, "head", "g");
    Rng rng(17);
    g.init_params(rng);
    g.set_input(x, TensorD({1, 2}, 1.0));
    CHECK_THROWS_AS(grad_check(g,
                               [&](const LayerGraph<double>&) {
                                   LossEvaluation e;
                                   e.value = std::numeric_limits<double>::quiet_NaN();
                                   e.seeds.emplace_back(z, TensorD({1, 1}, 1.0));
                                   return e;
                               }),
                    NumericError);
}

TEST_CASE("graph forward names the layer that produced a non-finite value") {
    LayerGraph<double> g;
    const NodeId x = g.add_input("x", 2);
    (void)g.add_linear(x, 1, "blowup", "g");
    Rng rng(18);
    g.init_params(rng);
    g.param("blowup.bias").value[0] = std::numeric_limits<double>::infinity();
    g.set_input(x, TensorD({1, 2}, 1.0));
    try {
        g.forward(Mode::eval);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("blowup") != std::string::npos);
    }
}

TEST_CASE("graph registers every parameter once and accumulates gradients") {
    LayerGraph<double> g;
    const NodeId x = g.add_input("x", 3);
    const NodeId h = g.add_linear(x, 2, "l1", "f_c");
    const NodeId y = g.add_linear(h, 1, "l2", "g");
    Rng rng(19);
    g.init_params(rng);
    REQUIRE(g.params().size() == 4);
    CHECK(g.params()[0].name == "l1.weight");
    CHECK(g.params()[3].name == "l2.bias");
    CHECK_THROWS(g.add_linear(99, 1, "dangling", "g"));

    g.set_input(x, random_tensor({2, 3}, rng));
    g.forward(Mode::eval);
    const std::vector<std::pair<NodeId, TensorD>> seeds{{y, TensorD({2, 1}, 1.0)}};
    g.zero_grad();
    g.backward(seeds);
    const TensorD once = g.param("l1.weight").grad;
    g.backward(seeds);
    for (std::size_t i = 0; i < once.size(); ++i) {
        CHECK(g.param("l1.weight").grad[i] == doctest::Approx(2.0 * once[i]));
    }
    g.zero_grad();
    for (const auto& p : g.params()) {
        for (double v : p.grad.values()) CHECK(v == 0.0);
    }
}

TEST_CASE("frozen parameters receive no gradient through a frozen branch") {
    LayerGraph<double> g;
    const NodeId x = g.add_input("x", 3);
    const NodeId h = g.add_linear(x, 2, "enc", "f_c");
    const NodeId y = g.add_linear(h, 1, "head", "g");
    Rng rng(20);
    g.init_params(rng);
    g.param("enc.weight").trainable = false;
    g.param("enc.bias").trainable = false;
    g.set_input(x, random_tensor({2, 3}, rng));
    g.forward(Mode::eval);
    g.zero_grad();
    const std::vector<std::pair<NodeId, TensorD>> seeds{{y, TensorD({2, 1}, 1.0)}};
    g.backward(seeds);
    for (double v : g.param("enc.weight").grad.values()) CHECK(v == 0.0);
    bool any = false;
    for (double v : g.param("head.weight").grad.values()) any = any || v != 0.0;
    CHECK(any);
}

TEST_CASE("glorot initialization stays within its bound") {
    LayerGraph<double> g;
    const NodeId x = g.add_input("x", 30);
    (void)g.add_linear(x, 10, "l", "g");
    Rng rng(21);
    g.init_params(rng);
    const double bound = std::sqrt(6.0 / 40.0);
    for (double v : g.param("l.weight").value.values()) CHECK(std::abs(v) <= bound);
    for (double v : g.param("l.bias").value.values()) CHECK(v == 0.0);
}
