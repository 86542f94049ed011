#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qsr/objective.hpp"
#include "qsr/optim.hpp"
#include "qsr/supernet.hpp"

namespace qsr {

// A low/high-resolution training pair, each [3,h,w] / [3,h*r,w*r].
struct SrSample {
    Tensor lr, hr;
};

struct SrDataset {
    std::vector<SrSample> samples;
    bool empty() const { return samples.empty(); }
    std::size_t size() const { return samples.size(); }
};

// Stacks samples into [B,3,h,w] / [B,3,H,W] batch tensors.
std::pair<Tensor, Tensor> collate(const SrDataset& data, const std::vector<std::size_t>& idx);

struct SearchConfig {
    int epochs = 20;
    int batch_size = 16;
    double w_lr = 1e-3;  // cosine annealed to 0
    double w_momentum = 0.9;
    double w_weight_decay = 3e-7;
    double alpha_lr = 3e-4;  // fixed, no weight decay
    double eta = 0.0;
    double mu0 = 1e-4;
    int warmup_epochs = 2;
    int bitops_image = 32;  // penalty / tie-break image size
    std::uint64_t seed = 1;
    MixStrategy strategy = MixStrategy::San;
    NoiseDist noise_dist = NoiseDist::Gaussian;
    SanScaling san_scaling = SanScaling::Range;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 3e-7;
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double l1 = 0, l_cq = 0, l_e = 0, mu = 0;
    std::vector<double> max_alpha;  // per layer
};

struct SearchResult {
    Genotype genotype;
    std::vector<EpochStats> history;
};

// Alternating bilevel search: per iteration one alpha step on split_alpha and
// one W step on split_w (disjoint by contract), then argmax discretization.
// `live_history`, when given, is appended per epoch so a NaN abort still
// leaves a usable diagnostic trail.
SearchResult search(Supernet& net, const SrDataset& split_alpha, const SrDataset& split_w,
                    const SearchConfig& cfg, std::vector<EpochStats>* live_history = nullptr);

struct RetrainResult {
    double psnr = 0;                // held-out, Y channel
    std::vector<double> epoch_l1;   // training curve
};

// From-scratch QAT training of an instantiated genotype.
RetrainResult retrain(FixedNet& net, const SrDataset& train, const SrDataset& val,
                      const TrainConfig& cfg);

// PSNR in dB on the BT.601 luma channel; expects values in [0,1];
// returns +inf when MSE is exactly zero. Accepts [N,C,H,W] or [C,H,W],
// C in {1,3}.
double psnr(const Tensor& pred, const Tensor& target);

// Upscales with the given net and evaluates PSNR over a dataset (predictions
// clamped to [0,1]).
double eval_psnr(FixedNet& net, const SrDataset& data);

// Indices of the non-dominated subset: lower bitops or higher psnr survives.
std::vector<std::size_t> non_dominated(const std::vector<std::pair<double, double>>& bitops_psnr);

struct SweepEntry {
    double eta = 0;
    bool failed = false;
    std::string error;
    Genotype genotype;
    double bitops = 0;
    double psnr = 0;
    bool on_front = false;
};

// Runs search + retrain per eta value; failures are recorded and the sweep
// continues.
std::vector<SweepEntry> pareto_sweep(const SearchSpaceSpec& space, const SearchConfig& base_cfg,
                                     const TrainConfig& train_cfg, const std::vector<double>& etas,
                                     const SrDataset& split_alpha, const SrDataset& split_w,
                                     const SrDataset& train, const SrDataset& val);

struct TimingRow {
    std::string strategy;
    int n_bits = 0;
    int iterations = 0;
    double seconds = 0;
    std::uint64_t op_applies = 0;
};

// Wall-clock of a fixed number of search iterations per (strategy, bit list)
// on identical supernet/data/seed.
std::vector<TimingRow> timing_bench(const SearchSpaceSpec& base_space,
                                    const std::vector<MixStrategy>& strategies,
                                    const std::vector<std::vector<int>>& bit_lists, int iterations,
                                    int batch, int patch, std::uint64_t seed);

}  // namespace qsr
