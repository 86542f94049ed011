#include "qsr/bitmixer.hpp"

#include <atomic>
#include <cmath>

namespace qsr {

MixStrategy parse_strategy(const std::string& name) {
    if (name == "independent") return MixStrategy::Independent;
    if (name == "shared") return MixStrategy::Shared;
    if (name == "san") return MixStrategy::San;
    throw ConfigError("unknown strategy '" + name + "' (expected independent|shared|san)");
}

std::string strategy_name(MixStrategy s) {
    switch (s) {
        case MixStrategy::Independent: return "independent";
        case MixStrategy::Shared: return "shared";
        default: return "san";
    }
}

namespace {
std::atomic<std::uint64_t> g_op_applies{0};
}

std::uint64_t op_apply_count() { return g_op_applies.load(); }
void reset_op_apply_count() { g_op_applies.store(0); }

Tensor ZeroNoise::sample(const Shape& shape, int) { return Tensor::zeros(shape, false); }

Tensor FrozenNoise::sample(const Shape& shape, int bits) {
    if (cursor_ < recorded_.size()) {
        Tensor t = recorded_[cursor_++];
        if (t.shape() != shape) throw ContractError("FrozenNoise: replay shape mismatch");
        return t;
    }
    Tensor t = inner_->sample(shape, bits);
    recorded_.push_back(t);
    ++cursor_;
    return t;
}

Tensor CandidateOp::apply(const Tensor& act, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                          const Tensor& b2) const {
    g_op_applies.fetch_add(1);
    Tensor y = conv2d(act, w1, b1, 1, (spec.k1h - 1) / 2, (spec.k1w - 1) / 2, spec.groups);
    if (spec.separable)
        y = conv2d(y, w2, b2, 1, (spec.k2h - 1) / 2, (spec.k2w - 1) / 2, spec.groups);
    return y;
}

OpParams CandidateOp::init_params(Rng& rng) const {
    auto he_init = [&rng](const Shape& shape) {
        Tensor w = Tensor::zeros(shape, true);
        const long fan_in = static_cast<long>(shape[1]) * shape[2] * shape[3];
        const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (long i = 0; i < w.numel(); ++i) w.data()[i] = std * rng.gaussian();
        return w;
    };
    OpParams p;
    if (!spec.separable) {
        p.w1 = he_init({out_ch, in_ch / spec.groups, spec.k1h, spec.k1w});
        p.b1 = Tensor::zeros({out_ch}, true);
    } else {
        p.w1 = he_init({mid_ch(), in_ch / spec.groups, spec.k1h, spec.k1w});
        p.b1 = Tensor::zeros({mid_ch()}, true);
        p.w2 = he_init({out_ch, mid_ch() / spec.groups, spec.k2h, spec.k2w});
        p.b2 = Tensor::zeros({out_ch}, true);
    }
    return p;
}

MixedEdge MixedEdge::make(const CandidateOp& op, const std::vector<int>& bits,
                          MixStrategy strategy, Rng& rng) {
    if (bits.empty()) throw ConfigError("MixedEdge: empty bit list");
    MixedEdge e;
    e.op = op;
    e.bits = bits;
    e.strategy = strategy;
    const std::size_t nsets = strategy == MixStrategy::Independent ? bits.size() : 1;
    int step_ref_bits = bits[0];
    for (int b : bits) step_ref_bits = std::max(step_ref_bits, b);
    if (step_ref_bits >= kFullPrecisionBits) step_ref_bits = 8;  // init scale only
    for (std::size_t i = 0; i < nsets; ++i) {
        OpParams p = op.init_params(rng);
        const int b = strategy == MixStrategy::Independent ? bits[i] : step_ref_bits;
        const int init_bits = b >= kFullPrecisionBits ? 8 : b;
        e.wstep1.push_back(Tensor::scalar(step_init_weight(p.w1, init_bits), true));
        if (op.spec.separable)
            e.wstep2.push_back(Tensor::scalar(step_init_weight(p.w2, init_bits), true));
        e.params.push_back(std::move(p));
    }
    return e;
}

std::vector<Tensor> MixedEdge::parameters() const {
    std::vector<Tensor> out;
    for (const auto& p : params) {
        out.push_back(p.w1);
        out.push_back(p.b1);
        if (op.spec.separable) {
            out.push_back(p.w2);
            out.push_back(p.b2);
        }
    }
    // LSQ steps train only when quantizers are live in the graph
    if (strategy != MixStrategy::San) {
        for (const auto& s : wstep1) out.push_back(s);
        for (const auto& s : wstep2) out.push_back(s);
    }
    return out;
}

namespace {

double alpha_total(const std::vector<Tensor>& alpha) {
    double s = 0.0;
    for (const auto& a : alpha) s += a.value();
    return s;
}

Tensor sum_scalars(const std::vector<Tensor>& v) {
    Tensor acc = v[0];
    for (std::size_t i = 1; i < v.size(); ++i) acc = add(acc, v[i]);
    return acc;
}

Tensor maybe_detach(const Tensor& t, bool detach) { return detach ? t.detach() : t; }

}  // namespace

Tensor MixedEdge::forward(const Tensor& x, const std::vector<Tensor>& alpha, MixContext& ctx) {
    if (alpha.size() != bits.size())
        throw ContractError("MixedEdge: alpha count " + std::to_string(alpha.size()) +
                            " != bit count " + std::to_string(bits.size()));
    if (strategy != MixStrategy::Independent && params.size() != 1)
        throw ConfigError("MixedEdge: shared/san strategies carry exactly one parameter set");
    if (strategy == MixStrategy::Independent && params.size() != bits.size())
        throw ConfigError("MixedEdge: independent strategy needs per-bit parameter sets");

    if (strategy != MixStrategy::Independent && alpha_total(alpha) < 1e-6) {
        dead = true;
        return Tensor::zeros({x.dim(0), op.out_ch, x.dim(2), x.dim(3)}, false);
    }

    switch (strategy) {
        case MixStrategy::Independent: return forward_independent(x, alpha, ctx);
        case MixStrategy::Shared: return forward_shared(x, alpha, ctx);
        default: return forward_san(x, alpha, ctx);
    }
}

Tensor MixedEdge::forward_independent(const Tensor& x, const std::vector<Tensor>& alpha,
                                      MixContext& ctx) {
    Tensor out;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        const int b = bits[i];
        QuantSpec aspec = QuantSpec::act_hwgq(b);
        Tensor act = hwgq_quantize_acts(x, aspec);
        QuantSpec wspec1{b, QuantKind::WeightLsq, maybe_detach(wstep1[i], ctx.detach_weights)};
        Tensor qw1 = lsq_quantize_weights(maybe_detach(params[i].w1, ctx.detach_weights), wspec1);
        Tensor qw2, b2;
        if (op.spec.separable) {
            QuantSpec wspec2{b, QuantKind::WeightLsq, maybe_detach(wstep2[i], ctx.detach_weights)};
            qw2 = lsq_quantize_weights(maybe_detach(params[i].w2, ctx.detach_weights), wspec2);
            b2 = maybe_detach(params[i].b2, ctx.detach_weights);
        }
        Tensor y = op.apply(act, qw1, maybe_detach(params[i].b1, ctx.detach_weights), qw2, b2);
        Tensor term = mul(alpha[i], y);
        out = out.defined() ? add(out, term) : term;
    }
    return out;
}

Tensor MixedEdge::forward_shared(const Tensor& x, const std::vector<Tensor>& alpha,
                                 MixContext& ctx) {
    Tensor total = sum_scalars(alpha);
    Tensor w1 = maybe_detach(params[0].w1, ctx.detach_weights);
    Tensor s1 = maybe_detach(wstep1[0], ctx.detach_weights);
    Tensor w2, s2;
    if (op.spec.separable) {
        w2 = maybe_detach(params[0].w2, ctx.detach_weights);
        s2 = maybe_detach(wstep2[0], ctx.detach_weights);
    }

    Tensor mix_act, mix_w1, mix_w2;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        const int b = bits[i];
        Tensor ahat = div(alpha[i], total);
        QuantSpec aspec = QuantSpec::act_hwgq(b);
        Tensor act_term = mul(ahat, hwgq_quantize_acts(x, aspec));
        mix_act = mix_act.defined() ? add(mix_act, act_term) : act_term;
        QuantSpec wspec1{b, QuantKind::WeightLsq, s1};
        Tensor w1_term = mul(ahat, lsq_quantize_weights(w1, wspec1));
        mix_w1 = mix_w1.defined() ? add(mix_w1, w1_term) : w1_term;
        if (op.spec.separable) {
            QuantSpec wspec2{b, QuantKind::WeightLsq, s2};
            Tensor w2_term = mul(ahat, lsq_quantize_weights(w2, wspec2));
            mix_w2 = mix_w2.defined() ? add(mix_w2, w2_term) : w2_term;
        }
    }
    Tensor y = op.apply(mix_act, mix_w1, maybe_detach(params[0].b1, ctx.detach_weights), mix_w2,
                        op.spec.separable ? maybe_detach(params[0].b2, ctx.detach_weights) : Tensor());
    return mul(total, y);
}

Tensor MixedEdge::forward_san(const Tensor& x, const std::vector<Tensor>& alpha, MixContext& ctx) {
    if (!ctx.noise) throw ContractError("MixedEdge: san strategy requires a noise source");
    Tensor total = sum_scalars(alpha);
    Tensor w1 = maybe_detach(params[0].w1, ctx.detach_weights);
    Tensor w2;
    if (op.spec.separable) w2 = maybe_detach(params[0].w2, ctx.detach_weights);

    // act noise scale: step*(2^b-1); weight noise scale: step*Qp
    Tensor x_noisy = x, w1_noisy = w1, w2_noisy = w2;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        const int b = bits[i];
        if (b >= kFullPrecisionBits) continue;  // negligible noise
        Tensor ahat = div(alpha[i], total);
        QuantSpec ref{b, QuantKind::WeightLsq, Tensor()};
        const double act_scale =
            ctx.san_scaling == SanScaling::Range ? step_init_act(b) * ref.act_levels() : 1.0;
        const double w1_scale =
            ctx.san_scaling == SanScaling::Range ? wstep1[0].value() * ref.qp() : 1.0;
        Tensor nx = scalar_mul(ctx.noise->sample(x.shape(), b), act_scale);
        x_noisy = add(x_noisy, mul(ahat, nx));
        Tensor nw1 = scalar_mul(ctx.noise->sample(w1.shape(), b), w1_scale);
        w1_noisy = add(w1_noisy, mul(ahat, nw1));
        if (op.spec.separable) {
            const double w2_scale =
                ctx.san_scaling == SanScaling::Range ? wstep2[0].value() * ref.qp() : 1.0;
            Tensor nw2 = scalar_mul(ctx.noise->sample(w2.shape(), b), w2_scale);
            w2_noisy = add(w2_noisy, mul(ahat, nw2));
        }
    }
    Tensor y = op.apply(x_noisy, w1_noisy, maybe_detach(params[0].b1, ctx.detach_weights), w2_noisy,
                        op.spec.separable ? maybe_detach(params[0].b2, ctx.detach_weights) : Tensor());
    return mul(total, y);
}

}  // namespace qsr
