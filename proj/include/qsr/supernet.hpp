#pragma once

#include <memory>
#include <string>
#include <vector>

#include "qsr/search_space.hpp"

namespace qsr {

// Which half of the alternating update a forward pass serves. AlphaStep
// freezes W (weights, biases, BN affine, ADQ scalars, LSQ steps); WeightStep
// freezes the architecture weights; Eval freezes everything and uses running
// BN statistics.
enum class PassMode { AlphaStep, WeightStep, Eval };

struct BatchNorm2d {
    Tensor gamma, beta;  // [C]
    std::vector<double> running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    static BatchNorm2d make(int channels);
    Tensor forward(const Tensor& x, PassMode mode, bool detach_params);
    void copy_state_from(const BatchNorm2d& other);
};

// One searchable layer: |O| mixed edges over the shared bit list, with a flat
// (op, bit) importance vector parameterized through softmax over logits.
struct SupernetLayer {
    LayerPos pos;
    std::vector<MixedEdge> edges;
    std::vector<int> bits;
    Tensor logits;  // leaf [|O| * |B|]

    // test/collapse hook: when non-empty, used verbatim instead of softmax
    std::vector<double> forced_alpha;

    int edge_count() const { return static_cast<int>(edges.size() * bits.size()); }

    // current importance values (softmax of logits or the forced vector)
    std::vector<double> alpha_values() const;

    Tensor forward(const Tensor& x, PassMode mode, MixContext& ctx);
};

// Body block wrapped in ADQ: input BN, the searchable sub-block
// (seq2(seq1(z)) + skip(z)), output rescale by gamma*std(x)+beta, residual.
struct BodyBlock {
    SupernetLayer seq1, seq2, skip;
    BatchNorm2d bn;
    bool use_bn = true;  // regression-guard hook
    Tensor gamma, beta;  // learnable scalars

    Tensor forward(const Tensor& x, PassMode mode, MixContext& ctx);
};

struct Supernet {
    SearchSpaceSpec space;
    MixStrategy strategy = MixStrategy::San;
    SanScaling san_scaling = SanScaling::Range;

    SupernetLayer head1, head2;
    std::vector<std::unique_ptr<BodyBlock>> bodies;
    SupernetLayer upsample;
    SupernetLayer tail1, tail2;

    static Supernet build(const SearchSpaceSpec& space, MixStrategy strategy, Rng& rng);

    // [N,3,H,W] -> [N,3,rH,rW]
    Tensor forward(const Tensor& x, PassMode mode, NoiseSource* noise);

    std::vector<SupernetLayer*> layers();
    std::vector<const SupernetLayer*> layers() const;

    std::vector<Tensor> weight_parameters();  // W-group
    std::vector<Tensor> alpha_parameters();   // logits

    // argmax discretization; `edge_costs[layer][flat]` are BitOps costs for
    // tie-breaking (may be empty to fall back to catalog order).
    Genotype discretize(const std::vector<std::vector<double>>& edge_costs = {}) const;

    void set_forced_alpha(const std::vector<std::vector<double>>& per_layer);
    void clear_forced_alpha();
};

// A fixed single-path quantized conv (QAT: HWGQ on input, LSQ on weights).
struct FixedConv {
    CandidateOp op;
    OpParams params;
    Tensor wstep1, wstep2;
    int bits = 8;

    static FixedConv make(const CandidateOp& op, int bits, Rng& rng);
    Tensor forward(const Tensor& x);
    std::vector<Tensor> parameters() const;
};

struct FixedBodyBlock {
    FixedConv seq1, seq2, skip;
    BatchNorm2d bn;
    bool use_bn = true;
    Tensor gamma, beta;

    Tensor forward(const Tensor& x, PassMode mode);
};

// The discretized, from-scratch-trainable network.
struct FixedNet {
    SearchSpaceSpec space;
    FixedConv head1, head2;
    std::vector<std::unique_ptr<FixedBodyBlock>> bodies;
    FixedConv up;
    FixedConv tail1, tail2;

    static FixedNet instantiate(const Genotype& genotype, Rng& rng);
    // collapse-test hook: same structure, weights copied from the supernet
    static FixedNet instantiate_from_supernet(const Genotype& genotype, const Supernet& net);

    Tensor forward(const Tensor& x, PassMode mode = PassMode::WeightStep);
    std::vector<Tensor> parameters();

    void save_weights(const std::string& path) const;
    void load_weights(const std::string& path);
};

}  // namespace qsr
