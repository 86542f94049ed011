#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qsr/ops.hpp"
#include "qsr/quant.hpp"
#include "qsr/tensor.hpp"

namespace qsr {

enum class MixStrategy { Independent, Shared, San };

MixStrategy parse_strategy(const std::string& name);
std::string strategy_name(MixStrategy s);

// How SAN noise is scaled: Range multiplies the unit-range noise by the
// tensor's LSQ-equivalent range (step*Qp for weights, step*(2^b-1) for
// activations); Raw keeps the plain delta/2 magnitude.
enum class SanScaling { Range, Raw };

// Candidate convolution descriptor. Separable entries apply two kernels
// (k1 then k2) with intermediate channel count equal to the input's.
struct OpSpec {
    std::string name;
    bool separable = false;
    int k1h = 3, k1w = 3;
    int k2h = 0, k2w = 0;
    int groups = 1;
};

struct OpParams {
    Tensor w1, b1;
    Tensor w2, b2;  // defined only for separable ops
};

// A catalog op bound to a layer position.
struct CandidateOp {
    OpSpec spec;
    int in_ch = 0;
    int out_ch = 0;

    int mid_ch() const { return in_ch; }

    // Raw application on prepared activation/weight tensors. Counts one op
    // application on the global counter.
    Tensor apply(const Tensor& act, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                 const Tensor& b2) const;

    // parameter MAC cost per output pixel stage (used by the cost model)
    OpParams init_params(Rng& rng) const;
};

// Global counter of candidate-op applications (one per conv evaluation at the
// mixer level, separable pairs count once).
std::uint64_t op_apply_count();
void reset_op_apply_count();

// Injectable noise stream so tests can zero or freeze the SAN noise.
class NoiseSource {
public:
    virtual ~NoiseSource() = default;
    virtual Tensor sample(const Shape& shape, int bits) = 0;
};

class RngNoise : public NoiseSource {
public:
    RngNoise(Rng& rng, NoiseDist dist = NoiseDist::Gaussian) : rng_(&rng), dist_(dist) {}
    Tensor sample(const Shape& shape, int bits) override {
        return qnoise_sample(shape, bits, *rng_, dist_);
    }

private:
    Rng* rng_;
    NoiseDist dist_;
};

class ZeroNoise : public NoiseSource {
public:
    Tensor sample(const Shape& shape, int bits) override;
};

// Records draws on the first pass and replays them afterwards; rewind()
// restarts the replay (used by finite-difference checks under frozen noise).
class FrozenNoise : public NoiseSource {
public:
    explicit FrozenNoise(NoiseSource& inner) : inner_(&inner) {}
    Tensor sample(const Shape& shape, int bits) override;
    void rewind() { cursor_ = 0; }

private:
    NoiseSource* inner_;
    std::vector<Tensor> recorded_;
    std::size_t cursor_ = 0;
};

struct MixContext {
    bool detach_weights = false;  // alpha-update pass freezes W
    NoiseSource* noise = nullptr;
    SanScaling san_scaling = SanScaling::Range;
};

// A layer edge: one candidate op blended over the bit list B.
struct MixedEdge {
    CandidateOp op;
    std::vector<int> bits;
    MixStrategy strategy = MixStrategy::Shared;

    // one entry per bit for Independent, exactly one for Shared/San
    std::vector<OpParams> params;
    // learnable LSQ steps parallel to `params`
    std::vector<Tensor> wstep1, wstep2;

    bool dead = false;

    static MixedEdge make(const CandidateOp& op, const std::vector<int>& bits,
                          MixStrategy strategy, Rng& rng);

    // alpha: one scalar graph tensor per bit (this edge's slice of the layer
    // softmax). Output spatial dims equal the input's (same padding).
    Tensor forward(const Tensor& x, const std::vector<Tensor>& alpha, MixContext& ctx);

    // all trainable tensors of this edge (weights, biases, lsq steps)
    std::vector<Tensor> parameters() const;

private:
    Tensor forward_independent(const Tensor& x, const std::vector<Tensor>& alpha, MixContext& ctx);
    Tensor forward_shared(const Tensor& x, const std::vector<Tensor>& alpha, MixContext& ctx);
    Tensor forward_san(const Tensor& x, const std::vector<Tensor>& alpha, MixContext& ctx);
};

}  // namespace qsr
