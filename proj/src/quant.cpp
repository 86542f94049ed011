#include "qsr/quant.hpp"

#include <cmath>
#include <cstdio>

namespace qsr {

QuantSpec QuantSpec::weight_lsq(int bits, double step_value) {
    QuantSpec s;
    s.bits = bits;
    s.kind = QuantKind::WeightLsq;
    s.step = Tensor::scalar(step_value, /*requires_grad=*/true);
    return s;
}

QuantSpec QuantSpec::act_hwgq(int bits) {
    QuantSpec s;
    s.bits = bits;
    s.kind = QuantKind::ActHwgq;
    s.step = Tensor::scalar(bits >= kFullPrecisionBits ? 1.0 : step_init_act(bits), false);
    return s;
}

double noise_delta(int bits) {
    if (bits < 2) throw ConfigError("noise_delta: bits must be >= 2");
    if (bits >= 52) return 0.0;  // below double resolution anyway
    return 1.0 / (std::pow(2.0, bits) - 1.0);
}

static double effective_step(QuantSpec& spec) {
    double s = spec.step.value();
    if (s <= 0.0) {
        if (!spec.warned_nonpositive_step) {
            std::fprintf(stderr, "[qsr] warning: non-positive quantizer step %g clamped to 1e-8\n", s);
            spec.warned_nonpositive_step = true;
        }
        s = 1e-8;
    }
    return std::max(s, 1e-8);
}

Tensor lsq_quantize_weights(const Tensor& w, QuantSpec& spec, bool ste_surrogate) {
    if (spec.kind != QuantKind::WeightLsq)
        throw ContractError("lsq_quantize_weights: spec kind must be weight-lsq");
    if (spec.full_precision()) return w;
    const double s = effective_step(spec);
    const double qn = spec.qn(), qp = spec.qp();
    const double gscale = 1.0 / std::sqrt(static_cast<double>(w.numel()) * qp);

    Tensor out = make_node(w.shape(), {w, spec.step},
                           [s, qn, qp, gscale, ste_surrogate](detail::TensorImpl& self) {
                               auto& pw = *self.parents[0];
                               auto& ps = *self.parents[1];
                               double ds = 0.0;
                               for (std::size_t i = 0; i < self.data.size(); ++i) {
                                   const double g = self.grad[i];
                                   const double v = pw.data[i] / s;
                                   if (v < -qn) {
                                       ds += g * (-qn);
                                   } else if (v > qp) {
                                       ds += g * qp;
                                   } else {
                                       if (pw.requires_grad) pw.grad[i] += g;
                                       if (!ste_surrogate) ds += g * (std::round(v) - v);
                                   }
                               }
                               if (ps.requires_grad) ps.grad[0] += ds * gscale;
                           });
    for (long i = 0; i < w.numel(); ++i) {
        double v = w.data()[i] / s;
        if (!ste_surrogate) v = std::round(v);
        v = std::min(std::max(v, -qn), qp);
        out.data()[i] = v * s;
    }
    return out;
}

Tensor hwgq_quantize_acts(const Tensor& x, QuantSpec& spec, bool ste_surrogate) {
    if (spec.kind != QuantKind::ActHwgq)
        throw ContractError("hwgq_quantize_acts: spec kind must be act-hwgq");
    if (spec.full_precision()) return x;
    const double s = effective_step(spec);
    const double top = spec.act_levels() * s;
    const double levels = spec.act_levels();

    Tensor out = make_node(x.shape(), {x}, [top](detail::TensorImpl& self) {
        auto& px = *self.parents[0];
        if (!px.requires_grad) return;
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            const double v = px.data[i];
            if (v > 0.0 && v <= top) px.grad[i] += self.grad[i];
        }
    });
    for (long i = 0; i < x.numel(); ++i) {
        double v = x.data()[i] / s;
        if (!ste_surrogate) v = std::round(v);
        v = std::min(std::max(v, 0.0), levels);
        out.data()[i] = v * s;
    }
    return out;
}

Tensor qnoise_sample(const Shape& shape, int bits, Rng& rng, NoiseDist dist) {
    if (bits < 2) throw ConfigError("qnoise_sample: bits must be >= 2");
    const double half_delta = 0.5 * noise_delta(bits);
    Tensor t = Tensor::zeros(shape, false);
    if (dist == NoiseDist::Gaussian) {
        for (long i = 0; i < t.numel(); ++i) t.data()[i] = half_delta * rng.gaussian();
    } else {
        for (long i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-half_delta, half_delta);
    }
    return t;
}

double step_init_weight(const Tensor& w, int bits) {
    double acc = 0.0;
    for (long i = 0; i < w.numel(); ++i) acc += std::fabs(w.data()[i]);
    const double mean_abs = acc / static_cast<double>(w.numel());
    if (mean_abs == 0.0) return 1e-3;
    const double qp = static_cast<double>((1 << (bits - 1)) - 1);
    return 2.0 * mean_abs / std::sqrt(qp);
}

// MSE-optimal steps of the uniform half-wave quantizer for standard-normal
// input, levels {0, s, ..., (2^b-1)s}; obtained by numeric minimization of the
// quantization MSE (the test suite re-derives these by quadrature).
double step_init_act(int bits) {
    static const double kTable[7] = {
        0.650769712975,  // b=2
        0.353411309561,  // b=3
        0.193248514505,  // b=4
        0.105487587590,  // b=5
        0.057261280021,  // b=6
        0.030870100221,  // b=7
        0.016528149046,  // b=8
    };
    if (bits < 2 || bits > 8)
        throw ConfigError("step_init_act: no table entry for bits=" + std::to_string(bits));
    return kTable[bits - 2];
}

double step_init(const Tensor& w_or_stats, const QuantSpec& spec) {
    if (spec.kind == QuantKind::WeightLsq) return step_init_weight(w_or_stats, spec.bits);
    return step_init_act(spec.bits);
}

}  // namespace qsr
