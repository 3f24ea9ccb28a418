#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "tmc/errors.hpp"
#include "tmc/rng.hpp"
#include "tmc/tensor.hpp"

using namespace tmc;

namespace {

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace

TEST_CASE("matmul against identity leaves input unchanged") {
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto id = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto c = matmul(a, id);
    CHECK(c.values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("reduce_mean gradient is 1/n everywhere") {
    auto x = Tensor::param({4}, {1, 2, 3, 4});
    auto m = reduce_mean(x);
    m.backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.25));
}

TEST_CASE("matmul gradient matches finite differences under 1e-5") {
    Rng rng(7);
    auto a = Tensor::param({3, 4}, random_values(12, rng));
    auto b = Tensor::param({4, 2}, random_values(8, rng));
    auto loss_of = [&](Tensor t) {
        return gradcheck::max_rel_err(t, [&] { return reduce_mean(matmul(a, b)); });
    };
    CHECK(loss_of(a) < 1e-5);
    CHECK(loss_of(b) < 1e-5);
}

TEST_CASE("batched matmul matches per-slice 2d matmul") {
    Rng rng(11);
    auto a = Tensor::param({2, 3, 4}, random_values(24, rng));
    auto b = Tensor::param({4, 5}, random_values(20, rng));
    auto c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 3, 5});
    for (int s = 0; s < 2; ++s) {
        auto a2 = Tensor::from({3, 4}, std::vector<double>(a.values().begin() + s * 12,
                                                           a.values().begin() + (s + 1) * 12));
        auto ref = matmul(a2, b);
        for (int i = 0; i < 15; ++i)
            CHECK(c.values()[static_cast<std::size_t>(s * 15 + i)] ==
                  doctest::Approx(ref.values()[static_cast<std::size_t>(i)]));
    }
    CHECK(gradcheck::max_rel_err(a, [&] { return reduce_mean(matmul(a, b)); }) < 1e-5);
    CHECK(gradcheck::max_rel_err(b, [&] { return reduce_mean(matmul(a, b)); }) < 1e-5);
}

TEST_CASE("broadcast add on unit extents with gradient reduction") {
    Rng rng(3);
    auto a = Tensor::param({2, 3}, random_values(6, rng));
    auto bias = Tensor::param({3}, random_values(3, rng));
    auto c = add(a, bias);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(c.values()[static_cast<std::size_t>(i * 3 + j)] ==
                  doctest::Approx(a.values()[static_cast<std::size_t>(i * 3 + j)] +
                                  bias.values()[static_cast<std::size_t>(j)]));
    CHECK(gradcheck::max_rel_err(bias, [&] { return reduce_mean(mul(add(a, bias), a)); }) < 1e-5);
    // Middle-axis broadcast exercises the generic path.
    auto x = Tensor::param({2, 1, 3}, random_values(6, rng));
    auto y = Tensor::param({2, 4, 3}, random_values(24, rng));
    auto z = mul(x, y);
    REQUIRE(z.shape() == Shape{2, 4, 3});
    CHECK(gradcheck::max_rel_err(x, [&] { return reduce_mean(mul(x, y)); }) < 1e-5);
    CHECK(gradcheck::max_rel_err(y, [&] { return reduce_mean(mul(x, y)); }) < 1e-5);
}

TEST_CASE("shape mismatch reports the offending axis") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 4});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("axis 1"), ConfigError);
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({5, 2})), ConfigError);
}

TEST_CASE("reshape, slice, concat, transpose round trips with gradients") {
    Rng rng(5);
    auto a = Tensor::param({2, 6}, random_values(12, rng));
    auto r = reshape(a, {3, 4});
    CHECK(r.values() == a.values());
    auto t = transpose(r, 0, 1);
    REQUIRE(t.shape() == Shape{4, 3});
    CHECK(t.values()[1] == doctest::Approx(r.values()[4]));

    auto s0 = slice(a, 1, 0, 2);
    auto s1 = slice(a, 1, 2, 4);
    auto back = concat({s0, s1}, 1);
    CHECK(back.values() == a.values());

    CHECK(gradcheck::max_rel_err(a, [&] {
              auto u = transpose(reshape(a, {3, 4}), 0, 1);
              auto v = concat({slice(u, 0, 0, 2), slice(u, 0, 2, 2)}, 0);
              return reduce_mean(mul(v, v));
          }) < 1e-5);
}

TEST_CASE("reduce_max routes gradient to the argmax, first on ties") {
    auto x = Tensor::param({2, 3}, {1, 5, 5, 2, 2, 0});
    auto m = reduce_max(x, 1);
    CHECK(m.values() == std::vector<double>{5, 2});
    reduce_mean(m).backward();
    CHECK(x.grad() == std::vector<double>{0, 0.5, 0, 0.5, 0, 0});
}

TEST_CASE("conv2d with a unit 1x1 kernel is the identity map") {
    Rng rng(9);
    auto x = Tensor::from({1, 1, 3, 5}, random_values(15, rng));
    auto k = Tensor::from({1, 1, 1, 1}, {1.0});
    auto y = conv2d(x, k, Tensor(), Padding::Same);
    CHECK(y.values() == x.values());
}

TEST_CASE("same-padded conv preserves the 23x5120 spatial extents") {
    auto x = Tensor::zeros({1, 1, 23, 5120});
    auto k = Tensor::zeros({16, 1, 1, 20});
    auto y = conv2d(x, k, Tensor(), Padding::Same);
    CHECK(y.shape() == Shape{1, 16, 23, 5120});
}

TEST_CASE("conv2d gradient matches finite differences under 1e-5") {
    Rng rng(13);
    auto x = Tensor::param({1, 1, 4, 7}, random_values(28, rng));
    auto k = Tensor::param({2, 1, 1, 3}, random_values(6, rng));
    auto b = Tensor::param({2}, random_values(2, rng));
    auto loss = [&] { return reduce_mean(mul(conv2d(x, k, b, Padding::Same), conv2d(x, k, b, Padding::Same))); };
    CHECK(gradcheck::max_rel_err(x, loss) < 1e-5);
    CHECK(gradcheck::max_rel_err(k, loss) < 1e-5);
    CHECK(gradcheck::max_rel_err(b, loss) < 1e-5);
    auto loss_valid = [&] { return reduce_mean(conv2d(x, k, b, Padding::Valid)); };
    CHECK(gradcheck::max_rel_err(x, loss_valid) < 1e-5);
    CHECK(gradcheck::max_rel_err(k, loss_valid) < 1e-5);
}

TEST_CASE("valid conv shrinks by k-1 and rejects oversized kernels") {
    auto x = Tensor::zeros({1, 1, 3, 10});
    auto k = Tensor::zeros({1, 1, 3, 3});
    CHECK(conv2d(x, k, Tensor(), Padding::Valid).shape() == Shape{1, 1, 1, 8});
    auto big = Tensor::zeros({1, 1, 4, 3});
    CHECK_THROWS_AS(conv2d(x, big, Tensor(), Padding::Valid), ConfigError);
}

TEST_CASE("maxpool floor semantics drop partial windows") {
    auto x = Tensor::zeros({1, 1, 1, 5120});
    CHECK(maxpool2d(x, 1, 10).shape() == Shape{1, 1, 1, 512});
    auto y = Tensor::zeros({1, 1, 1, 85});
    CHECK(maxpool2d(y, 1, 6).shape() == Shape{1, 1, 1, 14});
    CHECK_THROWS_AS(maxpool2d(y, 0, 2), ConfigError);
}

TEST_CASE("maxpool ties send gradient to the first element of each window") {
    auto x = Tensor::param({1, 1, 1, 6}, {1, 1, 1, 1, 1, 1});
    auto p = maxpool2d(x, 1, 3);
    reduce_mean(p).backward();
    CHECK(x.grad() == std::vector<double>{0.5, 0, 0, 0.5, 0, 0});
}

TEST_CASE("maxpool gradient matches finite differences away from ties") {
    Rng rng(17);
    auto x = Tensor::param({1, 2, 4, 6}, random_values(48, rng));
    CHECK(gradcheck::max_rel_err(x, [&] { return reduce_mean(mul(maxpool2d(x, 2, 3), maxpool2d(x, 2, 3))); }) < 1e-5);
}

TEST_CASE("batchnorm train mode normalizes per channel") {
    Rng rng(19);
    auto x = Tensor::from({4, 2, 1, 5}, random_values(40, rng, -3.0, 3.0));
    auto gamma = Tensor::from({2}, {1, 1});
    auto beta = Tensor::from({2}, {0, 0});
    std::vector<double> rm(2, 0.0), rv(2, 1.0);
    auto y = batchnorm(x, gamma, beta, rm, rv, Mode::Train);
    for (int c = 0; c < 2; ++c) {
        double mean = 0, var = 0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 5; ++i) mean += y.values()[static_cast<std::size_t>((n * 2 + c) * 5 + i)];
        mean /= 20.0;
        for (int n = 0; n < 4; ++n)
            for (int i = 0; i < 5; ++i) {
                double d = y.values()[static_cast<std::size_t>((n * 2 + c) * 5 + i)] - mean;
                var += d * d;
            }
        var /= 20.0;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("batchnorm eval with unit running stats is the identity up to eps") {
    auto x = Tensor::from({1, 1, 1, 4}, {0.5, -1.0, 2.0, 0.0});
    auto gamma = Tensor::from({1}, {1});
    auto beta = Tensor::from({1}, {0});
    std::vector<double> rm{0.0}, rv{1.0};
    auto y = batchnorm(x, gamma, beta, rm, rv, Mode::Eval);
    for (int i = 0; i < 4; ++i)
        CHECK(y.values()[static_cast<std::size_t>(i)] ==
              doctest::Approx(x.values()[static_cast<std::size_t>(i)]).epsilon(1e-4));
    CHECK(rm[0] == 0.0);  // eval mode never mutates running stats
    CHECK(rv[0] == 1.0);
}

TEST_CASE("batchnorm rejects train mode with batch size 1") {
    auto x = Tensor::zeros({1, 1, 1, 4});
    auto g = Tensor::from({1}, {1});
    auto b = Tensor::from({1}, {0});
    std::vector<double> rm{0.0}, rv{1.0};
    CHECK_THROWS_AS(batchnorm(x, g, b, rm, rv, Mode::Train), ConfigError);
}

TEST_CASE("batchnorm gradient matches finite differences under 1e-4") {
    Rng rng(23);
    auto x = Tensor::param({4, 2, 1, 5}, random_values(40, rng));
    auto gamma = Tensor::param({2}, {1.3, 0.7});
    auto beta = Tensor::param({2}, {0.1, -0.2});
    auto loss = [&] {
        std::vector<double> rm(2, 0.0), rv(2, 1.0);  // fresh stats: keep f pure
        auto y = batchnorm(x, gamma, beta, rm, rv, Mode::Train);
        return reduce_mean(mul(y, y));
    };
    CHECK(gradcheck::max_rel_err(x, loss) < 1e-4);
    CHECK(gradcheck::max_rel_err(gamma, loss) < 1e-4);
    CHECK(gradcheck::max_rel_err(beta, loss) < 1e-4);
}

TEST_CASE("layernorm normalizes the last axis") {
    auto gamma = Tensor::from({3}, {1, 1, 1});
    auto beta = Tensor::from({3}, {0, 0, 0});
    auto c = layernorm(Tensor::from({1, 3}, {2, 2, 2}), gamma, beta);
    for (double v : c.values()) CHECK(std::fabs(v) < 1e-6);

    auto g2 = Tensor::from({2}, {1, 1});
    auto b2 = Tensor::from({2}, {0, 0});
    auto y = layernorm(Tensor::from({1, 2}, {1, 3}), g2, b2);
    CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layernorm gradient matches finite differences under 1e-4") {
    Rng rng(29);
    auto x = Tensor::param({2, 5, 8}, random_values(80, rng));
    auto gamma = Tensor::param({8}, random_values(8, rng, 0.5, 1.5));
    auto beta = Tensor::param({8}, random_values(8, rng, -0.5, 0.5));
    auto loss = [&] {
        auto y = layernorm(x, gamma, beta);
        return reduce_mean(mul(y, y));
    };
    CHECK(gradcheck::max_rel_err(x, loss) < 1e-4);
    CHECK(gradcheck::max_rel_err(gamma, loss) < 1e-4);
    CHECK(gradcheck::max_rel_err(beta, loss) < 1e-4);
}

TEST_CASE("sigmoid and softmax basics") {
    CHECK(sigmoid(Tensor::from({1}, {0.0})).item() == doctest::Approx(0.5));
    auto s = softmax_lastaxis(Tensor::from({1, 2}, {0.0, 0.0}));
    CHECK(s.values()[0] == doctest::Approx(0.5));
    CHECK(s.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(31);
    auto x = Tensor::from({4, 6}, random_values(24, rng, -3, 3));
    auto y = softmax_lastaxis(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int i = 0; i < 6; ++i) sum += y.values()[static_cast<std::size_t>(r * 6 + i)];
        CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
    auto shifted = x.values();
    for (auto& v : shifted) v += 7.5;
    auto y2 = softmax_lastaxis(Tensor::from({4, 6}, shifted));
    for (std::size_t i = 0; i < y.values().size(); ++i)
        CHECK(std::fabs(y.values()[i] - y2.values()[i]) < 1e-6);
}

TEST_CASE("relu, sigmoid, softmax gradients away from kinks") {
    Rng rng(37);
    auto vals = random_values(30, rng, 0.1, 1.0);
    for (std::size_t i = 0; i < vals.size(); i += 2) vals[i] = -vals[i];  // bounded away from 0
    auto x = Tensor::param({5, 6}, vals);
    CHECK(gradcheck::max_rel_err(x, [&] { return reduce_mean(mul(relu(x), relu(x))); }) < 1e-4);
    CHECK(gradcheck::max_rel_err(x, [&] { return reduce_mean(mul(sigmoid(x), sigmoid(x))); }) < 1e-4);
    CHECK(gradcheck::max_rel_err(x, [&] {
              auto s = softmax_lastaxis(x);
              return reduce_mean(mul(s, s));
          }) < 1e-4);
}

TEST_CASE("dropout keeps expectation and eval mode is identity") {
    Rng rng(41);
    auto ones = Tensor::from({100000}, std::vector<double>(100000, 1.0));
    auto d = dropout(ones, 0.5, Mode::Train, rng);
    const double mean = std::accumulate(d.values().begin(), d.values().end(), 0.0) / 1e5;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
    Rng r2(1);
    auto e = dropout(ones, 0.5, Mode::Eval, r2);
    CHECK(e.values() == ones.values());
    CHECK_THROWS_AS(dropout(ones, 1.0, Mode::Train, rng), ConfigError);
    CHECK_THROWS_AS(dropout(ones, -0.1, Mode::Train, rng), ConfigError);
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
    Rng rng(43);
    auto x = Tensor::param({3, 3}, random_values(9, rng));
    auto w = Tensor::from({3, 3}, random_values(9, rng));

    auto l1 = reduce_mean(matmul(x, w));
    auto l2 = reduce_mean(mul(x, x));
    add(l1, l2).backward();
    auto combined = x.grad();

    x.zero_grad();
    reduce_mean(matmul(x, w)).backward();
    auto g1 = x.grad();
    x.zero_grad();
    reduce_mean(mul(x, x)).backward();
    for (std::size_t i = 0; i < combined.size(); ++i)
        CHECK(combined[i] == doctest::Approx(g1[i] + x.grad()[i]).epsilon(1e-12));
}

TEST_CASE("bce_mean rejects non-finite probabilities and bad labels") {
    auto p = Tensor::from({2}, {0.5, std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(bce_mean(p, {1.0, 0.0}), NumericalError);
    auto q = Tensor::from({2}, {0.5, 0.5});
    CHECK_THROWS_AS(bce_mean(q, {1.0, 0.5}), ConfigError);
    CHECK_THROWS_AS(bce_mean(q, {1.0}), ConfigError);
}

TEST_CASE("rng streams are deterministic and fork-independent") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(123);
    auto f1 = c.fork(1);
    c.next_u64();
    auto f2 = c.fork(1);  // fork ignores parent draw position
    CHECK(f1.next_u64() == f2.next_u64());
    Rng d(123);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double u = d.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(lo < 0.1);
    CHECK(hi > 0.9);
}
