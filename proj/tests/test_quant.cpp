#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "oracles.hpp"
#include "qsr/quant.hpp"

using namespace qsr;
using namespace qsr::test;

TEST_CASE("noise delta: definition and monotonicity") {
    CHECK(noise_delta(2) == doctest::Approx(1.0 / 3));
    CHECK(noise_delta(4) == doctest::Approx(1.0 / 15));
    CHECK(noise_delta(8) == doctest::Approx(1.0 / 255));
    for (int b = 3; b <= 8; ++b) CHECK(noise_delta(b) < noise_delta(b - 1));
    CHECK(noise_delta(2) <= 1.0);
}

TEST_CASE("lsq: zero fixed point and hand arithmetic") {
    QuantSpec spec = QuantSpec::weight_lsq(8, 1.0 / 127.0);
    Tensor w = Tensor::from_data({3}, {0.0, 0.5, -0.5}, true);
    Tensor q = lsq_quantize_weights(w, spec);
    CHECK(q.data()[0] == 0.0);
    CHECK(q.data()[1] == doctest::Approx(64.0 / 127.0));  // round(63.5) = 64
    CHECK(q.data()[2] == doctest::Approx(-64.0 / 127.0));
}

TEST_CASE("lsq: rounding bound and level count") {
    Rng rng(21);
    QuantSpec spec = QuantSpec::weight_lsq(4, 0.05);
    Tensor w = random_tensor({200}, rng, -0.3, 0.3, false);  // inside clamp range (0.05*7=0.35)
    Tensor q = lsq_quantize_weights(w, spec);
    std::set<long long> levels;
    for (long i = 0; i < w.numel(); ++i) {
        CHECK(std::fabs(q.data()[i] - w.data()[i]) <= 0.025 + 1e-12);
        levels.insert(llround(q.data()[i] / 0.05));
    }
    CHECK(levels.size() <= 16u);  // at most 2^b distinct values
}

TEST_CASE("lsq: odd symmetry inside range") {
    Rng rng(22);
    QuantSpec spec = QuantSpec::weight_lsq(6, 0.02);
    Tensor w = random_tensor({100}, rng, -0.5, 0.5, false);
    Tensor wneg = scalar_mul(w, -1.0);
    Tensor q = lsq_quantize_weights(w, spec);
    Tensor qn = lsq_quantize_weights(wneg, spec);
    const double qp_edge = 0.02 * spec.qp();
    for (long i = 0; i < w.numel(); ++i) {
        if (std::fabs(w.data()[i]) >= qp_edge) continue;  // clamp asymmetry zone
        CHECK(qn.data()[i] == doctest::Approx(-q.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("lsq: straight-through gradient via the smooth surrogate") {
    Rng rng(23);
    QuantSpec spec = QuantSpec::weight_lsq(4, 0.1);
    Tensor w = random_tensor({64}, rng, -1.2, 1.2);
    // skip elements near the clamp kink at +-qp*s / -qn*s
    auto skip = [&spec](const Tensor& t, long i) {
        const double v = t.data()[i] / spec.step.value();
        return std::fabs(v - spec.qp()) < 1e-2 || std::fabs(v + spec.qn()) < 1e-2;
    };
    auto fn = [&]() {
        QuantSpec s2 = spec;
        return mean(square(lsq_quantize_weights(w, s2, /*ste_surrogate=*/true)));
    };
    auto res = finite_difference_check(fn, {w}, 1e-5, skip);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("lsq: step gradient follows the LSQ rule") {
    // W/s = 3.2 -> in range (qp=7): d/ds = round(v)-v = -0.2, times gscale
    QuantSpec spec = QuantSpec::weight_lsq(4, 1.0);
    Tensor w = Tensor::from_data({2}, {3.2, 100.0}, true);  // second clamps at qp
    Tensor q = lsq_quantize_weights(w, spec);
    backward(sum(q));
    const double gscale = 1.0 / std::sqrt(2.0 * 7.0);
    CHECK(spec.step.grad()[0] == doctest::Approx(((3.0 - 3.2) + 7.0) * gscale));
    CHECK(w.grad()[0] == 1.0);  // in range: pass-through
    CHECK(w.grad()[1] == 0.0);  // clamped: blocked
}

TEST_CASE("lsq: non-positive step clamped with fallback") {
    QuantSpec spec = QuantSpec::weight_lsq(4, -1.0);
    Tensor w = Tensor::from_data({1}, {0.5});
    Tensor q = lsq_quantize_weights(w, spec);  // warns once, clamps step to 1e-8
    CHECK(std::isfinite(q.data()[0]));
    CHECK(spec.warned_nonpositive_step);
}

TEST_CASE("hwgq: half-wave and fixed points") {
    QuantSpec spec = QuantSpec::act_hwgq(4);
    const double s = spec.step.value();
    Tensor x = Tensor::from_data({4}, {-3.0, 0.0, 5.0 * s, 100.0});
    Tensor q = hwgq_quantize_acts(x, spec);
    CHECK(q.data()[0] == 0.0);
    CHECK(q.data()[1] == 0.0);
    CHECK(q.data()[2] == doctest::Approx(5.0 * s));          // exact level
    CHECK(q.data()[3] == doctest::Approx(15.0 * s));         // clamped at top
}

TEST_CASE("hwgq: straight-through window") {
    QuantSpec spec = QuantSpec::act_hwgq(2);
    const double s = spec.step.value();
    Tensor x = Tensor::from_data({4}, {-0.5, 0.4 * s, 2.9 * s, 3.0 * s + 1.0}, true);
    Tensor q = hwgq_quantize_acts(x, spec);
    backward(sum(q));
    CHECK(x.grad()[0] == 0.0);  // negative: dead
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 1.0);
    CHECK(x.grad()[3] == 0.0);  // above the top level
}

TEST_CASE("hwgq: surrogate gradient matches finite differences") {
    Rng rng(24);
    QuantSpec spec = QuantSpec::act_hwgq(3);
    const double top = spec.act_levels() * spec.step.value();
    Tensor x = random_tensor({64}, rng, -1.0, 2.0 * top);
    auto skip = [top](const Tensor& t, long i) {
        return std::fabs(t.data()[i]) < 1e-3 || std::fabs(t.data()[i] - top) < 1e-3;
    };
    auto fn = [&]() {
        QuantSpec s2 = spec;
        return mean(square(hwgq_quantize_acts(x, s2, /*ste_surrogate=*/true)));
    };
    auto res = finite_difference_check(fn, {x}, 1e-5, skip);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("hwgq: table step is MSE-near-optimal for N(0,1) (Lloyd-Max oracle)") {
    // independent quadrature + golden-section oracle
    for (int b : {2, 8}) {
        const double s_oracle = halfwave_optimal_step(b);
        const double s_table = step_init_act(b);
        CHECK(s_table == doctest::Approx(s_oracle).epsilon(2e-3));
    }

    // Monte-Carlo MSE at the table step stays within 5% of the oracle optimum
    Rng rng(25);
    QuantSpec spec = QuantSpec::act_hwgq(2);
    const int n = 1000000;
    Tensor x = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) x.data()[i] = rng.gaussian();
    Tensor q = hwgq_quantize_acts(x, spec);
    double mse = 0;
    for (int i = 0; i < n; ++i) {
        const double d = q.data()[i] - x.data()[i];
        mse += d * d;
    }
    mse /= n;
    const double best = halfwave_quantizer_mse(halfwave_optimal_step(2), 2);
    CHECK(mse < 1.05 * best);
    CHECK(mse > 0.95 * best);
}

TEST_CASE("qnoise: Eq-style statistics") {
    Rng rng(26);
    const int n = 1000000;
    for (int b : {2, 4, 8}) {
        Tensor z = qnoise_sample({n}, b, rng);
        CHECK_FALSE(z.requires_grad());
        double mean = 0;
        for (int i = 0; i < n; ++i) mean += z.data()[i];
        mean /= n;
        double var = 0;
        for (int i = 0; i < n; ++i) var += (z.data()[i] - mean) * (z.data()[i] - mean);
        var /= n;
        const double target = 0.5 * noise_delta(b);
        CHECK(std::sqrt(var) == doctest::Approx(target).epsilon(0.01));
        // 3 standard errors of the mean at 10^6 draws
        CHECK(std::fabs(mean) <= 3.0 * target / 1000.0);
    }
}

TEST_CASE("qnoise: uniform variant bounded by half delta") {
    Rng rng(27);
    Tensor z = qnoise_sample({10000}, 4, rng, NoiseDist::Uniform);
    const double half = 0.5 * noise_delta(4);
    for (long i = 0; i < z.numel(); ++i) CHECK(std::fabs(z.data()[i]) <= half);
}

TEST_CASE("step_init: closed forms and fallbacks") {
    Tensor w = Tensor::zeros({100000});
    Rng rng(28);
    for (long i = 0; i < w.numel(); ++i) w.data()[i] = rng.uniform(-1.0, 1.0);
    // mean|W| ~= 0.5 for U[-1,1]; b=4 -> 2*0.5/sqrt(7)
    CHECK(step_init_weight(w, 4) == doctest::Approx(2.0 * 0.5 / std::sqrt(7.0)).epsilon(0.01));

    Tensor zero = Tensor::zeros({16});
    CHECK(step_init_weight(zero, 4) == 1e-3);

    QuantSpec ws = QuantSpec::weight_lsq(4, 1.0);
    CHECK(step_init(w, ws) == doctest::Approx(step_init_weight(w, 4)));
    QuantSpec as = QuantSpec::act_hwgq(8);
    CHECK(step_init(w, as) == step_init_act(8));
}

TEST_CASE("full-precision sentinel bits pass through") {
    Rng rng(29);
    Tensor w = random_tensor({32}, rng, -2, 2, false);
    QuantSpec ws = QuantSpec::weight_lsq(kFullPrecisionBits, 1.0);
    Tensor q = lsq_quantize_weights(w, ws);
    for (long i = 0; i < w.numel(); ++i) CHECK(q.data()[i] == w.data()[i]);
    QuantSpec as = QuantSpec::act_hwgq(kFullPrecisionBits);
    Tensor a = hwgq_quantize_acts(w, as);
    for (long i = 0; i < w.numel(); ++i) CHECK(a.data()[i] == w.data()[i]);
}
