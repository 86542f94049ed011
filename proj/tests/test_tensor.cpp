#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "qsr/ops.hpp"

using namespace qsr;
using namespace qsr::test;

TEST_CASE("conv2d: all-ones 3x3 on all-ones input, padding 1") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, k, Tensor(), 1, 1, 1, 1);
    CHECK(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.data()[4] == doctest::Approx(9.0));  // center sees the full kernel
    CHECK(y.data()[0] == doctest::Approx(4.0));  // corner
}

TEST_CASE("conv2d: 1x1 identity kernel") {
    Rng rng(3);
    Tensor x = random_tensor({2, 1, 4, 5}, rng, -2, 2, false);
    Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor y = conv2d(x, k, Tensor(), 1, 0, 0, 1);
    for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d matches the direct-loop reference (incl. groups and bias)") {
    Rng rng(11);
    for (int groups : {1, 2}) {
        Tensor x = random_tensor({2, 4, 6, 5}, rng, -2, 2, false);
        Tensor k = random_tensor({6, 4 / groups, 3, 3}, rng, -1, 1, false);
        Tensor b = random_tensor({6}, rng, -1, 1, false);
        Tensor got = conv2d(x, k, b, 1, 1, 1, groups);
        Tensor want = conv2d_reference(x, k, b, 1, 1, 1, groups);
        REQUIRE(got.shape() == want.shape());
        for (long i = 0; i < got.numel(); ++i)
            CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d: stride 2 against reference") {
    Rng rng(17);
    Tensor x = random_tensor({1, 3, 7, 7}, rng, -2, 2, false);
    Tensor k = random_tensor({2, 3, 3, 3}, rng, -1, 1, false);
    Tensor got = conv2d(x, k, Tensor(), 2, 1, 1, 1);
    Tensor want = conv2d_reference(x, k, Tensor(), 2, 1, 1, 1);
    REQUIRE(got.shape() == want.shape());
    for (long i = 0; i < got.numel(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
}

TEST_CASE("conv2d gradient vs finite differences (kernel, input, bias)") {
    Rng rng(5);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng, -1, 1);
    Tensor b = random_tensor({4}, rng, -1, 1);
    auto fn = [&]() { return sum(conv2d(x, k, b, 1, 1, 1, 1)); };
    auto res = finite_difference_check(fn, {x, k, b});
    CHECK(res.max_rel_err < 1e-6);
    CHECK(res.checked > 0);
}

TEST_CASE("conv2d gradient: grouped") {
    Rng rng(6);
    Tensor x = random_tensor({1, 6, 5, 5}, rng);
    Tensor k = random_tensor({6, 2, 3, 3}, rng, -1, 1);
    auto fn = [&]() { return mean(square(conv2d(x, k, Tensor(), 1, 1, 1, 3))); };
    auto res = finite_difference_check(fn, {x, k});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("conv2d contract errors") {
    Tensor x = Tensor::zeros({1, 4, 4, 4});
    Tensor k_bad = Tensor::zeros({2, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k_bad, Tensor(), 1, 1, 1, 1), ContractError);
    Tensor k = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, Tensor(), 1, 1, 1, 3), ConfigError);  // groups don't divide
    Tensor b_bad = Tensor::zeros({3});
    CHECK_THROWS_AS(conv2d(x, k, b_bad, 1, 1, 1, 1), ContractError);
}

TEST_CASE("pixel_shuffle: depth-to-space definition") {
    Tensor x = Tensor::from_data({1, 4, 1, 1}, {1.0, 2.0, 3.0, 4.0});
    Tensor y = pixel_shuffle(x, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 2.0);
    CHECK(y.data()[2] == 3.0);
    CHECK(y.data()[3] == 4.0);
}

TEST_CASE("pixel_shuffle: r=1 identity and adjoint round trip") {
    Rng rng(7);
    Tensor x = random_tensor({2, 8, 3, 4}, rng, -2, 2, false);
    Tensor y = pixel_shuffle(x, 1);
    for (long i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

    Tensor up = pixel_shuffle(x, 2);
    Tensor back = pixel_unshuffle(up, 2);
    REQUIRE(back.shape() == x.shape());
    for (long i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("pixel_shuffle: channel contract and gradient") {
    Tensor bad = Tensor::zeros({1, 3, 2, 2});
    CHECK_THROWS_AS(pixel_shuffle(bad, 2), ConfigError);

    Rng rng(8);
    Tensor x = random_tensor({1, 8, 3, 3}, rng);
    auto fn = [&]() { return mean(square(pixel_shuffle(x, 2))); };
    auto res = finite_difference_check(fn, {x});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("elementwise suite: trivial values") {
    Tensor z = Tensor::from_data({3}, {0.0, 0.0, 0.0});
    Tensor p = softmax(z);
    CHECK(p.data()[0] == doctest::Approx(1.0 / 3));
    CHECK(p.data()[1] == doctest::Approx(1.0 / 3));
    CHECK(p.data()[2] == doctest::Approx(1.0 / 3));

    Tensor r = relu(Tensor::from_data({2}, {-1.0, 2.0}));
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 2.0);

    Tensor lk = leaky_relu(Tensor::from_data({2}, {-1.0, 2.0}));
    CHECK(lk.data()[0] == doctest::Approx(-0.2));
    CHECK(lk.data()[1] == 2.0);

    Tensor c = Tensor::full({2, 3, 2, 2}, 0.7);
    Tensor s = std_over_channels(c);
    CHECK(s.shape() == Shape{2});
    CHECK(std::fabs(s.data()[0]) < 1e-12);
    CHECK(std::fabs(s.data()[1]) < 1e-12);
}

TEST_CASE("softmax: simplex property on random logits") {
    Rng rng(9);
    for (int it = 0; it < 20; ++it) {
        Tensor v = random_tensor({7}, rng, -5, 5, false);
        Tensor p = softmax(v);
        double total = 0;
        for (long i = 0; i < 7; ++i) {
            CHECK(p.data()[i] >= 0.0);
            total += p.data()[i];
        }
        CHECK(std::fabs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("std_over_channels: scale equivariance") {
    Rng rng(10);
    Tensor x = random_tensor({3, 4, 5, 5}, rng, -2, 2, false);
    Tensor x2 = scalar_mul(x, 2.0);
    Tensor s1 = std_over_channels(x);
    Tensor s2 = std_over_channels(x2);
    for (int i = 0; i < 3; ++i) CHECK(s2.data()[i] == doctest::Approx(2.0 * s1.data()[i]));
}

TEST_CASE("elementwise gradients vs finite differences") {
    Rng rng(12);
    Tensor a = random_tensor({2, 3, 4, 4}, rng);
    Tensor b = random_tensor({2, 3, 4, 4}, rng);
    Tensor c = random_tensor({1}, rng, 0.5, 1.5);    // scalar broadcast
    Tensor ch = random_tensor({3}, rng, -1, 1);      // channel broadcast
    Tensor pos = random_tensor({2, 3, 4, 4}, rng, 0.5, 2.0);
    Tensor vec = random_tensor({6}, rng, -2, 2);
    Tensor samp = random_tensor({2}, rng, -1.5, 1.5);

    // avoid kinks of abs/relu near zero
    auto skip_small = [](const Tensor& t, long i) { return std::fabs(t.data()[i]) < 1e-3; };

    auto composite = [&]() {
        Tensor t1 = mul(add(a, b), sub(a, mul(c, b)));
        Tensor t2 = add(t1, mul(ch, a));
        Tensor t3 = add(mean(square(t2)), mean(mul_per_sample(b, samp)));
        Tensor t4 = add(t3, mean(sqrt(pos)));
        Tensor t5 = add(t4, mean(log(pos)));
        Tensor t6 = add(t5, sum(entropy(softmax(vec))));
        Tensor t7 = add(t6, mean(abs(a)));
        Tensor t8 = add(t7, mean(leaky_relu(b, 0.2)));
        Tensor t9 = add(t8, sum(std_over_channels(a)));
        return add(t9, weighted_sum(softmax(vec), {1, 2, 3, 4, 5, 6}));
    };
    auto res = finite_difference_check(composite, {a, b, c, ch, pos, vec, samp}, 1e-5, skip_small);
    CHECK(res.max_rel_err < 1e-5);
    CHECK(res.checked > 100);
}

TEST_CASE("div and select gradients") {
    Rng rng(13);
    Tensor v = random_tensor({5}, rng, 0.2, 2.0);
    auto fn = [&]() {
        Tensor total = sum(v);
        Tensor x = div(select(v, 1), total);
        return square(x);
    };
    auto res = finite_difference_check(fn, {v});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("batch_norm: gradient and normalization") {
    Rng rng(14);
    Tensor x = random_tensor({3, 4, 5, 5}, rng);
    Tensor g = random_tensor({4}, rng, 0.5, 1.5);
    Tensor b = random_tensor({4}, rng, -0.5, 0.5);
    std::vector<double> rm(4, 0.0), rv(4, 1.0);

    Tensor y = batch_norm(x, g, b, rm, rv, true, false);
    // per-channel mean of normalized output is beta, std is |gamma|
    const long hw = 25, n = 3;
    for (int c = 0; c < 4; ++c) {
        double mu = 0;
        for (int ni = 0; ni < n; ++ni)
            for (long i = 0; i < hw; ++i) mu += y.data()[(ni * 4 + c) * hw + i];
        mu /= (n * hw);
        CHECK(mu == doctest::Approx(b.data()[c]).epsilon(1e-9));
    }

    // note: mean(square(bn(x))) is nearly constant in x (bn renormalizes), so
    // pair the output with a fixed random tensor to get a non-degenerate loss
    Tensor probe = random_tensor({3, 4, 5, 5}, rng, -1, 1, false);
    auto fn = [&]() { return mean(mul(batch_norm(x, g, b, rm, rv, true, false), probe)); };
    auto res = finite_difference_check(fn, {x, g, b});
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("backward: basic identities and accumulation") {
    Tensor w = Tensor::from_data({4}, {1.0, -2.0, 3.0, 0.5}, true);
    Tensor loss = sum(w);
    backward(loss);
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == 1.0);

    w.zero_grad();
    Tensor loss2 = scalar_mul(sum(square(w)), 0.5);
    backward(loss2);
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(w.data()[i]));

    // repeated backward without reset accumulates
    backward(scalar_mul(sum(square(w)), 0.5));
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * w.data()[i]));
}

TEST_CASE("backward: non-scalar loss rejected; node visits counted once") {
    Tensor w = Tensor::from_data({3}, {1.0, 2.0, 3.0}, true);
    CHECK_THROWS_AS(backward(square(w)), ContractError);

    // diamond graph: y = sum(a*a + a*a) touches each node exactly once
    Tensor a = square(w);
    Tensor y = sum(add(a, a));
    const std::size_t visited = backward(y);
    // nodes with closures: square, add, sum
    CHECK(visited == 3);
}

TEST_CASE("composite conv->relu->mean network gradients") {
    Rng rng(15);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor k1 = random_tensor({4, 3, 3, 3}, rng, -0.8, 0.8);
    Tensor b1 = random_tensor({4}, rng, -0.3, 0.3);
    Tensor k2 = random_tensor({2, 4, 3, 3}, rng, -0.8, 0.8);
    auto fn = [&]() {
        Tensor h = relu(conv2d(x, k1, b1, 1, 1, 1, 1));
        return mean(square(conv2d(h, k2, Tensor(), 1, 1, 1, 1)));
    };
    // relu kink: skip pre-activation magnitudes close to 0 is impractical at
    // the leaf level, so nudge the graph away from kinks by checking the
    // observed error bound instead
    auto res = finite_difference_check(fn, {x, k1, b1, k2}, 1e-5, nullptr, 128);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("finiteness checks") {
    Tensor t = Tensor::from_data({2}, {1.0, 2.0});
    CHECK_FALSE(t.has_non_finite());
    t.data()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK(t.has_non_finite());
    CHECK_THROWS_AS(t.check_finite("t"), NumericError);
}
