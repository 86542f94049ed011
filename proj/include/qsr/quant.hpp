#pragma once

#include "qsr/common.hpp"
#include "qsr/tensor.hpp"

namespace qsr {

// Sentinel bit width meaning "no quantization": quantizers pass through and
// quantization noise is negligible.
constexpr int kFullPrecisionBits = 32;

enum class QuantKind { WeightLsq, ActHwgq };
enum class NoiseDist { Gaussian, Uniform };

// Per-edge quantization configuration. Weight steps are trainable (LSQ);
// activation steps are fixed from the N(0,1) table.
struct QuantSpec {
    int bits = 8;
    QuantKind kind = QuantKind::WeightLsq;
    Tensor step;  // positive scalar; requires_grad for weight-lsq

    // signed symmetric weight levels
    int qn() const { return 1 << (bits - 1); }        // clamp at -qn
    int qp() const { return (1 << (bits - 1)) - 1; }  // clamp at +qp
    // unsigned activation levels: 0 .. 2^b - 1
    int act_levels() const { return (1 << bits) - 1; }

    bool full_precision() const { return bits >= kFullPrecisionBits; }

    static QuantSpec weight_lsq(int bits, double step_value);
    static QuantSpec act_hwgq(int bits);

    bool warned_nonpositive_step = false;
};

// Quantization-noise magnitude of Eq.-style unit-range model: 1/(2^b - 1).
double noise_delta(int bits);

// Fake-quantized weights: clamp(round(W/s), -Qn, Qp) * s with straight-through
// gradient to W inside the clamp range and the LSQ step-size gradient
// (scaled by 1/sqrt(numel * Qp)) to s. `ste_surrogate` skips the rounding so
// the backward can be validated against finite differences of a smooth
// surrogate; production code never sets it.
Tensor lsq_quantize_weights(const Tensor& w, QuantSpec& spec, bool ste_surrogate = false);

// Half-wave activation quantizer: levels {0, s, ..., (2^b-1)s}; negative
// inputs map to 0. Straight-through gradient on (0, top], zero elsewhere.
Tensor hwgq_quantize_acts(const Tensor& x, QuantSpec& spec, bool ste_surrogate = false);

// I.i.d. quantization noise of std delta/2 (gaussian) or the matching uniform
// variant; constant w.r.t. the graph, fresh draw per call.
Tensor qnoise_sample(const Shape& shape, int bits, Rng& rng,
                     NoiseDist dist = NoiseDist::Gaussian);

// LSQ step initialization: 2*mean(|W|)/sqrt(Qp), 1e-3 fallback for all-zero W.
double step_init_weight(const Tensor& w, int bits);

// MSE-optimal step of the uniform half-wave quantizer for N(0,1) input
// (precomputed table, b in 2..8).
double step_init_act(int bits);

// Dispatch by spec.kind.
double step_init(const Tensor& w_or_stats, const QuantSpec& spec);

}  // namespace qsr
