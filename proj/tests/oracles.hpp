#pragma once

// Test-only oracles: central finite differences, a direct-loop convolution
// reference, and an independent Lloyd-Max quantizer-step optimizer. These stay
// deliberately independent of the implementation paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "qsr/ops.hpp"
#include "qsr/tensor.hpp"

namespace qsr::test {

struct GradCheck {
    double max_rel_err = 0.0;
    long checked = 0;
};

// Compares analytic gradients of fn() (a scalar graph expression over the
// given leaves) against central differences. `skip` can exclude elements near
// kinks. Large tensors are subsampled with a fixed stride so suites stay fast.
inline GradCheck finite_difference_check(
    const std::function<Tensor()>& fn, std::vector<Tensor> leaves, double step = 1e-5,
    const std::function<bool(const Tensor&, long)>& skip = nullptr, long max_per_tensor = 256) {
    for (auto& l : leaves) l.zero_grad();
    Tensor loss = fn();
    backward(loss);

    GradCheck res;
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) continue;
        const long n = leaf.numel();
        const long stride = std::max<long>(1, n / max_per_tensor);
        for (long i = 0; i < n; i += stride) {
            if (skip && skip(leaf, i)) continue;
            const double saved = leaf.data()[i];
            double fp, fm;
            {
                NoGradGuard ng;
                leaf.data()[i] = saved + step;
                fp = fn().value();
                leaf.data()[i] = saved - step;
                fm = fn().value();
                leaf.data()[i] = saved;
            }
            const double fd = (fp - fm) / (2.0 * step);
            const double g = leaf.grad()[i];
            const double rel = std::fabs(g - fd) / (std::fabs(g) + 1e-8);
            if (rel > res.max_rel_err) res.max_rel_err = rel;
            ++res.checked;
        }
    }
    return res;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                            bool requires_grad = true) {
    Tensor t = Tensor::zeros(shape, requires_grad);
    for (long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Direct-loop convolution reference (no im2col, no BLAS).
inline Tensor conv2d_reference(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                               int stride, int pad_h, int pad_w, int groups) {
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = kernel.dim(0), cg = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const int ho = (h + 2 * pad_h - kh) / stride + 1;
    const int wo = (w + 2 * pad_w - kw) / stride + 1;
    const int cout_g = cout / groups;
    Tensor out = Tensor::zeros({n, cout, ho, wo});
    for (int ni = 0; ni < n; ++ni)
        for (int oc = 0; oc < cout; ++oc) {
            const int g = oc / cout_g;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = bias.defined() ? bias.data()[oc] : 0.0;
                    for (int ic = 0; ic < cg; ++ic)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad_h + ky;
                                const int ix = ox * stride - pad_w + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                const double iv =
                                    input.data()[((static_cast<std::size_t>(ni) * c + g * cg + ic) * h +
                                                  iy) * w + ix];
                                const double kv =
                                    kernel.data()[((static_cast<std::size_t>(oc) * cg + ic) * kh + ky) *
                                                      kw + kx];
                                acc += iv * kv;
                            }
                    out.data()[((static_cast<std::size_t>(ni) * cout + oc) * ho + oy) * wo + ox] = acc;
                }
        }
    return out;
}

// MSE of the uniform half-wave quantizer (levels 0..2^b-1 times s) for
// standard-normal input, by composite Simpson on [0, 12] plus the exact
// negative-half term.
inline double halfwave_quantizer_mse(double s, int bits) {
    const int levels = (1 << bits) - 1;
    auto quant = [s, levels](double x) {
        double v = std::round(x / s);
        v = std::min(std::max(v, 0.0), static_cast<double>(levels));
        return v * s;
    };
    auto integrand = [&quant](double x) {
        const double d = quant(x) - x;
        return d * d * std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846);
    };
    const double hi = 12.0;
    const int n = 48000;  // even
    const double h = hi / n;
    double acc = integrand(0.0) + integrand(hi);
    for (int i = 1; i < n; ++i) acc += integrand(i * h) * (i % 2 ? 4.0 : 2.0);
    return 0.5 + acc * h / 3.0;  // 0.5 = E[x^2; x<0]
}

// Golden-section minimization of the MSE over the step size.
inline double halfwave_optimal_step(int bits) {
    const int levels = (1 << bits) - 1;
    double a = 1e-3, b = 6.0 / levels;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = halfwave_quantizer_mse(c, bits), fd = halfwave_quantizer_mse(d, bits);
    for (int it = 0; it < 120; ++it) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = halfwave_quantizer_mse(c, bits);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = halfwave_quantizer_mse(d, bits);
        }
    }
    return 0.5 * (a + b);
}

}  // namespace qsr::test
